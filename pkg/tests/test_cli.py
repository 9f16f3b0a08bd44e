import json

import numpy as np
import pytest

from oracles import THREE_POINT_UPPER
from umtree.cli import main
from umtree.mmspace import FiniteUmmSpace, read_space, write_space


@pytest.fixture
def space_file(tmp_path):
    p = tmp_path / "space.json"
    write_space(FiniteUmmSpace.from_upper(3, THREE_POINT_UPPER), p)
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, (json.loads(out.out) if code == 0 or code == 2 else None), out.err


def test_laplace_equilibrium(capsys, tmp_path):
    code, body, _ = run(capsys, "laplace", "--gamma", 1, "--sigma", 1, "--n", 2, "--t", 1e9, "--out", tmp_path)
    assert code == 0
    assert body["closed_form"] == pytest.approx(1 / 3, rel=1e-12)
    assert (tmp_path / "laplace.config.json").exists()


def test_laplace_ode_check(capsys, tmp_path):
    code, body, _ = run(capsys, "laplace", "--n", 4, "--t", 1.5, "--ode-check", "--out", tmp_path)
    assert code == 0 and abs(body["ode"] - body["closed_form"]) < 1e-8


def test_simulate_single(capsys, tmp_path):
    code, body, _ = run(capsys, "simulate", "--n", 1, "--gamma", 1, "--t-end", 5, "--seed", 7, "--out", tmp_path)
    assert code == 0 and body["N"] == 1
    assert (tmp_path / "trajectory.csv").read_bytes().startswith(b"time,event_donor,event_recipient\r\n")


def test_simulate_snapshots(capsys, tmp_path, space_file):
    code, body, _ = run(capsys, "simulate", "--founder", space_file, "--t-end", 2, "--snapshot-times", "0.5,1",
                        "--out", tmp_path)
    assert code == 0
    assert read_space(tmp_path / "snapshot_t0.5.json").n == 3


def test_reconstruct_worked_example(capsys, tmp_path, space_file):
    code, body, _ = run(capsys, "reconstruct", "--from", space_file, "--mode", "exact", "--out", tmp_path)
    assert code == 0 and body["isometric"]
    assert sorted(read_space(tmp_path / "reconstructed.json").upper()) == [2.0, 6.0, 6.0]


def test_lengths_then_empirical(capsys, tmp_path, space_file):
    code, _, _ = run(capsys, "lengths", "--space", space_file, "--m", 8, "--replicas", 20000, "--theta", 1,
                     "--out", tmp_path)
    assert code == 0
    code, body, _ = run(capsys, "reconstruct", "--from", tmp_path / "lengths.csv", "--mode", "empirical",
                        "--eps", 0.05, "--out", tmp_path)
    assert code == 0 and body["n"] == 3


def test_dist(capsys, tmp_path, space_file):
    code, body, _ = run(capsys, "dist", "--a", space_file, "--b", space_file, "--out", tmp_path)
    assert code == 0 and body["value"] == 0.0 and body["exact"]
    assert sorted(body["permutation"]) == [0, 1, 2]


@pytest.mark.parametrize("emit, name", [("tree-json", "trees.json"), ("length-csv", "lengths.csv"),
                                         ("depth-csv", "depths.csv")])
def test_coalesce(capsys, tmp_path, emit, name):
    code, _, _ = run(capsys, "coalesce", "--n", 4, "--replicas", 3, "--emit", emit, "--out", tmp_path)
    assert code == 0 and (tmp_path / name).exists()


def test_segsites(capsys, tmp_path):
    code, body, _ = run(capsys, "segsites", "--replicas", 50000, "--out", tmp_path)
    assert code == 0
    assert abs(body["mean"] - body["expected"]) <= 4 * body["se"]


def test_plot_data(capsys, tmp_path):
    for kind in ("laplace", "tree-lengths", "moran"):
        code, body, _ = run(capsys, "plot-data", kind, "--replicas", 3, "--N", 10, "--out", tmp_path)
        assert code == 0
    assert (tmp_path / "plot_laplace.csv").read_text().startswith("n,t,g,equilibrium")


def test_validate_pass_and_fail_codes(capsys, tmp_path):
    code, body, _ = run(capsys, "validate", "jump-bound", "--params", '{"runs": 20}', "--out", tmp_path)
    assert code == 0 and body["verdict"] == "pass"
    code, body, _ = run(capsys, "validate", "coupling", "--params", '{"runs": 40}', "--out", tmp_path)
    assert code == 2 and body["verdict"] == "fail"


def test_replay_is_byte_identical(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "coalesce", "--n", 5, "--replicas", 20, "--seed", 11, "--out", a)[0] == 0
    assert run(capsys, "coalesce", "--config", a / "coalesce.config.json", "--out", b)[0] == 0
    assert (a / "lengths.csv").read_bytes() == (b / "lengths.csv").read_bytes()
    assert run(capsys, "validate", "martingale", "--params", '{"founder": {"zero": 10}, "replicas": 20}',
               "--out", a)[0] == 0
    assert run(capsys, "validate", "--config", a / "validate.config.json", "--out", b)[0] == 0
    assert (a / "martingale_replicas.csv").read_bytes() == (b / "martingale_replicas.csv").read_bytes()


@pytest.mark.parametrize("argv, field", [
    (["laplace", "--bogus", "1"], "bogus"),
    (["dist", "--a", "missing.json", "--b", "missing.json"], "a:"),
    (["validate", "martingale", "--params", '{"nope": 1}'], "params.nope"),
    (["validate"], "kind"),
    (["simulate", "--n", "0"], "n:"),
])
def test_input_errors(capsys, tmp_path, argv, field):
    code = main(argv + ["--out", str(tmp_path)])
    assert code == 1
    assert field in capsys.readouterr().err


def test_config_errors(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert main(["laplace", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "config" in capsys.readouterr().err
    bad.write_text(json.dumps({"sigma": 1, "wat": 2}))
    assert main(["laplace", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "wat" in capsys.readouterr().err
    bad.write_text(json.dumps({"subcommand": "dist"}))
    assert main(["laplace", "--config", str(bad), "--out", str(tmp_path)]) == 1
