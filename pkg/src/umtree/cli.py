"""Command-line entry point: ``umtree <subcommand> [flags] [--config run.json]``.

Every subcommand writes its fully resolved configuration to
``<out>/<subcommand>.config.json``; passing that file back through
``--config`` replays the run with byte-identical CSV output. Exit status is
0 on success, 1 on bad input and 2 when a validation verdict fails.
"""

from __future__ import annotations

import argparse
import csv
import inspect
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import BACKEND, kingman, laplace, moran, reconstruct, seeds, subtree, treedist, validate
from .mmspace import FiniteUmmSpace, SpaceError, read_space, space_to_dict, write_space


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def read_csv_matrix(path) -> tuple[list[str], np.ndarray]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"from: cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise InputError(f"from: {path} is empty")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise InputError(f"from: {path} has a non-numeric cell ({exc})") from None
    return rows[0], data.reshape(-1, len(rows[0]))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(validate._jsonable(obj), indent=1, sort_keys=True) + "\n")


def _load_space(path, field: str) -> FiniteUmmSpace:
    try:
        return read_space(path)
    except FileNotFoundError:
        raise InputError(f"{field}: no such file {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{field}: malformed JSON in {path} ({exc})") from None
    except (SpaceError, KeyError, ValueError, TypeError) as exc:
        raise InputError(f"{field}: {exc}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated reals, got {text!r}") from None


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(a, out: Path) -> dict:
    if a.founder:
        founder = _load_space(a.founder, "founder")
    else:
        if a.n < 1:
            raise InputError("n: must be at least 1")
        founder = FiniteUmmSpace.uniform(np.zeros((a.n, a.n)))
    if a.t_end < 0:
        raise InputError("t_end: must be nonnegative")
    rng = seeds.stream(a.seed, "simulate")
    times = sorted(a.snapshot_times or [])
    if any(t < 0 or t > a.t_end for t in times):
        raise InputError("snapshot_times: every time must lie in [0, t_end]")
    state = moran.MoranState.start(founder, a.gamma)
    snaps = []
    for t in times + [a.t_end]:
        state.advance(t, rng)
        snaps.append((t, moran.snapshot(state)))
    moran.write_trajectory_csv(state, out / "trajectory.csv")
    artifacts = ["trajectory.csv"]
    for t, s in snaps[:-1]:
        name = f"snapshot_t{t:g}.json"
        write_space(s, out / name)
        artifacts.append(name)
    return {"events": len(state.times), "N": founder.n, "artifacts": artifacts}


def cmd_coalesce(a, out: Path) -> dict:
    if a.n < 1 or a.replicas < 1:
        raise InputError("n, replicas: must be positive")
    rng = seeds.stream(a.seed, "coalesce")
    d = kingman.tree_distance_batch(a.n, a.gamma, a.replicas, rng)
    if a.emit == "tree-json":
        name = "trees.json"
        _write_json(out / name, [space_to_dict(FiniteUmmSpace.uniform(m)) for m in d])
    else:
        lens = np.zeros((a.replicas, a.n))
        from . import kernels

        kernels.subtree_lengths(np.ascontiguousarray(d), lens)
        if a.emit == "length-csv":
            name = "lengths.csv"
            write_csv(out / name, ["replica"] + [f"l{k}" for k in range(1, a.n + 1)],
                      ([r] + list(row) for r, row in enumerate(lens)))
        else:
            name = "depths.csv"
            deps = [subtree.depths_from_lengths(row) for row in lens]
            write_csv(out / name, ["replica"] + [f"h{k}" for k in range(1, a.n + 1)],
                      ([r] + list(row) for r, row in enumerate(deps)))
    return {"artifacts": [name]}


def cmd_dist(a, out: Path) -> dict:
    s1, s2 = _load_space(a.a, "a"), _load_space(a.b, "b")
    if a.mode in ("permutation", "doubly_stochastic_heuristic"):
        try:
            res = treedist.eurandom_distance(s1, s2, a.mode, rng=seeds.stream(a.seed, "dist"))
        except SpaceError as exc:
            raise InputError(f"a, b: {exc}") from None
        plan = res.plan.assignment
        body = {"value": res.value, "exact": res.is_exact, "mode": a.mode}
        if a.mode == "permutation":
            body["permutation"] = plan.tolist()
        else:
            body["coupling"] = plan.tolist()
        body["lower_bound_w1"] = treedist.truncated_w1(s1, s2)
    elif a.mode == "prohorov":
        body = {"value": treedist.prohorov_1d(s1, s2), "exact": True, "mode": a.mode}
    else:
        body = {"value": treedist.truncated_w1(s1, s2), "exact": True, "mode": a.mode}
    _write_json(out / "dist.json", body)
    return body


def cmd_lengths(a, out: Path) -> dict:
    space = _load_space(a.space, "space")
    if a.m < 1 or a.replicas < 1:
        raise InputError("m, replicas: must be positive")
    L = subtree.sample_length_vectors(space, a.m, a.replicas, seeds.stream(a.seed, "lengths"))
    header = [f"l{k}" for k in range(1, a.m + 1)]
    cols = [L]
    if a.theta is not None:
        s = subtree.segregating_sites(L[:, -1], a.theta, a.gamma, seeds.stream(a.seed, "segsites"))
        header.append(f"s{a.m}")
        cols.append(np.asarray(s)[:, None])
    rows = (list(r[:a.m]) + [int(x) for x in r[a.m:]] for r in np.hstack(cols))
    write_csv(out / "lengths.csv", header, rows)
    return {"artifacts": ["lengths.csv"], "mean_last": float(L[:, -1].mean())}


def cmd_segsites(a, out: Path) -> dict:
    if a.theta < 0 or a.gamma <= 0:
        raise InputError("theta, gamma: theta must be nonnegative and gamma positive")
    body = {"theta": a.theta, "gamma": a.gamma}
    if a.from_:
        header, L = read_csv_matrix(a.from_)
        col = len(header) - 1 if a.column is None else a.column
        if not 0 <= col < len(header):
            raise InputError(f"column: {col} out of range for {len(header)} columns")
        s = subtree.segregating_sites(L[:, col], a.theta, a.gamma, seeds.stream(a.seed, "segsites"))
        write_csv(out / "segsites.csv", header + ["segsites"],
                  (list(r) + [int(x)] for r, x in zip(L, np.atleast_1d(s))))
        body.update({"artifacts": ["segsites.csv"], "mean": float(np.mean(s))})
    else:
        if a.n < 2:
            raise InputError("n: must be at least 2")
        lens = kingman.tree_lengths(a.n, a.gamma, a.replicas, seeds.stream(a.seed, "segsites-tree"))
        s = subtree.segregating_sites(lens, a.theta, a.gamma, seeds.stream(a.seed, "segsites"))
        mean = float(np.mean(s))
        se = float(np.std(s, ddof=1) / math.sqrt(len(s))) if len(s) > 1 else 0.0
        target = 0.5 * a.theta * a.gamma * laplace.expected_tree_length(a.gamma, a.n)
        body.update({"n": a.n, "replicas": a.replicas, "mean": mean, "se": se, "expected": target})
    _write_json(out / "segsites.json", body)
    return body


def cmd_reconstruct(a, out: Path) -> dict:
    src = Path(a.from_)
    rng = seeds.stream(a.seed, "reconstruct")
    try:
        if a.mode == "exact":
            res = reconstruct.reconstruct_exact(_load_space(src, "from"), a.eps, rng)
        else:
            if a.eps <= 0:
                raise InputError("eps: empirical reconstruction needs eps > 0")
            header, L = read_csv_matrix(src)
            keep = [i for i, h in enumerate(header) if h.startswith("l") and h[1:].isdigit()]
            if not keep:
                raise InputError("from: no length columns (l1, l2, ...) in the CSV header")
            res = reconstruct.reconstruct_empirical(L[:, keep], a.eps, a.shrink_rule, rng=rng)
    except reconstruct.ReconstructionError as exc:
        raise InputError(f"from: {exc}") from None
    write_space(res.space, out / "reconstructed.json")
    body = {"lstar": res.lstar.tolist(), "residual": res.residual, "n": res.space.n, "report": res.report}
    if a.mode == "exact":
        from .mmspace import collapse, find_measure_isometry, shrink_epsilon

        orig = _load_space(src, "from")
        target = collapse(shrink_epsilon(orig, a.eps) if a.eps > 0 else orig)
        body["isometric"] = find_measure_isometry(target, res.space) is not None
    _write_json(out / "reconstruct.json", body)
    return body


def cmd_laplace(a, out: Path) -> dict:
    if a.n < 2 or a.n > laplace.HARD_NMAX:
        raise InputError(f"n: must lie in 2..{laplace.HARD_NMAX}")
    g0 = a.g0 if a.g0 in ("ones", "equilibrium") else _load_space(a.g0, "g0")
    if isinstance(g0, FiniteUmmSpace):
        g0 = laplace.initial_values(g0, a.gamma, a.sigma, a.n)
    model = laplace.build_model(a.gamma, a.sigma, max(a.n, 2))
    body = {
        "closed_form": laplace.laplace_closed_form(model, g0, a.n, a.t),
        "equilibrium": laplace.equilibrium_laplace(a.gamma, a.sigma, a.n),
        "ode": None,
    }
    if a.ode_check:
        if a.t > 1e3:
            body["ode_note"] = "t too large for the integrator; skipped"
        else:
            body["ode"] = float(laplace.laplace_ode(a.gamma, a.sigma, g0, a.t, n=a.n).values[-1])
    _write_json(out / "laplace.json", body)
    return body


def _founder_from(spec, seed: int) -> FiniteUmmSpace:
    if isinstance(spec, str):
        return _load_space(spec, "founder")
    if not isinstance(spec, dict) or len(spec) != 1:
        raise InputError("founder: expected a path or one of {'kingman': N}, {'zero': N}, {'random': N}")
    (kind, N), = spec.items()
    if not isinstance(N, int) or N < 1:
        raise InputError(f"founder.{kind}: expected a positive integer")
    if kind == "kingman":
        return kingman.coalescent_tree_space(N, 1.0, seeds.stream(seed, "founder"))
    if kind == "zero":
        return FiniteUmmSpace.uniform(np.zeros((N, N)))
    if kind == "random":
        from .mmspace import random_ultrametric

        return random_ultrametric(N, seeds.stream(seed, "founder"))
    raise InputError(f"founder: unknown kind {kind!r}")


CHECKS = {
    "duality": validate.check_duality,
    "martingale": validate.check_martingale,
    "equilibrium": validate.check_equilibrium,
    "jump-bound": validate.check_jump_bound,
    "coupling": validate.check_coupling,
}


def cmd_validate(a, out: Path) -> dict:
    fn = CHECKS[a.kind]
    params = dict(a.params or {})
    sig = inspect.signature(fn)
    if "space" in sig.parameters:
        params["space"] = _founder_from(params.pop("founder", {"kingman": 200}), a.seed)
    elif "founder" in params:
        raise InputError(f"founder: not used by {a.kind}")
    if "sigma" in params and "poly" in sig.parameters:
        from .mmspace import exp_pair_polynomial

        params["poly"] = exp_pair_polynomial(float(params.pop("sigma")))
    for k in params:
        if k not in sig.parameters:
            raise InputError(f"params.{k}: not a parameter of {a.kind}")
    try:
        run = fn(seed=a.seed, **params)
    except (ValueError, TypeError) as exc:
        raise InputError(f"params: {exc}") from None
    stem = a.kind.replace("-", "_")
    run.write(out / f"{stem}.json", out / f"{stem}_replicas.csv")
    body = run.to_dict()
    body["verdict"] = "pass" if run.passed else "fail"
    return body


def cmd_plot_data(a, out: Path) -> dict:
    """Tidy CSV tables for external plotting; nothing is rendered."""
    grid = np.linspace(0.0, a.t_max, a.points)
    if a.kind == "laplace":
        rows = []
        for n in range(2, a.n + 1):
            model = laplace.build_model(a.gamma, a.sigma, n)
            eq = laplace.equilibrium_laplace(a.gamma, a.sigma, n)
            for t in grid:
                rows.append([n, t, laplace.laplace_closed_form(model, a.g0, n, t), eq])
        write_csv(out / "plot_laplace.csv", ["n", "t", "g", "equilibrium"], rows)
        return {"artifacts": ["plot_laplace.csv"], "rows": len(rows)}
    if a.kind == "tree-lengths":
        L = kingman.tree_lengths(a.n, a.gamma, a.replicas, seeds.stream(a.seed, "plot-lengths"))
        write_csv(out / "plot_tree_lengths.csv", ["replica", "n", "length"],
                  ([r, a.n, x] for r, x in enumerate(L)))
        return {"artifacts": ["plot_tree_lengths.csv"], "rows": len(L)}
    # moran functional paths
    founder = FiniteUmmSpace.uniform(np.zeros((a.N, a.N)))
    rows = []
    for r in range(a.replicas):
        phi, _, _ = moran.exp_functional_path(founder, a.gamma, a.sigma, grid, seeds.stream(a.seed, "plot-moran", r))
        rows += [[r, t, p] for t, p in zip(grid, phi)]
    write_csv(out / "plot_moran.csv", ["replica", "t", "phi"], rows)
    return {"artifacts": ["plot_moran.csv"], "rows": len(rows)}


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="umtree", description="Tree-valued resampling dynamics: simulation, transforms, validation.")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0, help="64-bit user seed")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--config", help="JSON file of flag values; explicit flags win")
        return sp

    s = common(sub.add_parser("simulate", help="Moran model forward in time"))
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--t-end", type=float, default=1.0)
    s.add_argument("--snapshot-times", type=_floats, default=None)
    s.add_argument("--founder", help="space JSON; default is n identical individuals")

    s = common(sub.add_parser("coalesce", help="Kingman coalescent trees"))
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--replicas", type=int, default=1)
    s.add_argument("--emit", choices=["tree-json", "length-csv", "depth-csv"], default="length-csv")

    s = common(sub.add_parser("dist", help="distance between two spaces"))
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--mode", choices=["permutation", "doubly_stochastic_heuristic", "prohorov", "w1"],
                   default="permutation")

    s = common(sub.add_parser("lengths", help="sampled subtree-length vectors"))
    s.add_argument("--space", required=True)
    s.add_argument("--m", type=int, default=6)
    s.add_argument("--replicas", type=int, default=1000)
    s.add_argument("--theta", type=float, default=None, help="append a segregating-sites column")
    s.add_argument("--gamma", type=float, default=1.0)

    s = common(sub.add_parser("segsites", help="segregating sites on sampled subtrees"))
    s.add_argument("--from", dest="from_", help="lengths CSV; default samples equilibrium trees")
    s.add_argument("--column", type=int, default=None)
    s.add_argument("--theta", type=float, default=1.0)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--n", type=int, default=5)
    s.add_argument("--replicas", type=int, default=100_000)

    s = common(sub.add_parser("reconstruct", help="rebuild a space from subtree lengths"))
    s.add_argument("--from", dest="from_", required=True)
    s.add_argument("--mode", choices=["exact", "empirical"], default="exact")
    s.add_argument("--eps", type=float, default=0.0)
    s.add_argument("--shrink-rule", choices=["exact", "recursive"], default="exact")

    s = common(sub.add_parser("laplace", help="mean sample Laplace transform"))
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--n", type=int, default=2)
    s.add_argument("--t", type=float, default=1.0)
    s.add_argument("--g0", default="ones", help="'ones', 'equilibrium' or a space JSON")
    s.add_argument("--ode-check", action="store_true")

    s = common(sub.add_parser("validate", help="Monte Carlo validation checks"))
    s.add_argument("kind", nargs="?", choices=sorted(CHECKS))
    s.add_argument("--params", type=json.loads, default=None, help="JSON object of check parameters")

    s = common(sub.add_parser("plot-data", help="tidy CSV for external plotting"))
    s.add_argument("kind", nargs="?", choices=["laplace", "tree-lengths", "moran"])
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--n", type=int, default=5)
    s.add_argument("--N", type=int, default=100)
    s.add_argument("--g0", default="ones")
    s.add_argument("--t-max", type=float, default=5.0)
    s.add_argument("--points", type=int, default=51)
    s.add_argument("--replicas", type=int, default=20)
    return p


COMMANDS = {
    "simulate": cmd_simulate, "coalesce": cmd_coalesce, "dist": cmd_dist, "lengths": cmd_lengths,
    "segsites": cmd_segsites, "reconstruct": cmd_reconstruct, "laplace": cmd_laplace,
    "validate": cmd_validate, "plot-data": cmd_plot_data,
}
_RUNTIME = {"config", "out"}


def _subparser(parser, name):
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices[name]


def resolve(argv: Sequence[str]) -> argparse.Namespace:
    """Parse ``argv``, layering a ``--config`` file under the explicit flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        args = _layer_config(parser, args, argv)
    if hasattr(args, "kind") and args.kind is None:
        raise InputError("kind: required (positional or in the config)")
    return args


def _layer_config(parser, args, argv):
    try:
        cfg = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        raise InputError(f"config: no such file {args.config}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config: malformed JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise InputError("config: top level must be an object")
    if cfg.pop("subcommand", args.subcommand) != args.subcommand:
        raise InputError("subcommand: config was written for a different subcommand")
    cfg.pop("backend", None)
    sp = _subparser(parser, args.subcommand)
    known = {a.dest for a in sp._actions} - {"help"}
    for key in cfg:
        if key not in known:
            raise InputError(f"{key}: unknown field in config")
    sp.set_defaults(**{k: v for k, v in cfg.items() if k not in _RUNTIME})
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = resolve(argv)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        config = {k: v for k, v in vars(args).items() if k not in _RUNTIME}
        config["backend"] = BACKEND
        _write_json(out / f"{args.subcommand}.config.json", config)
        body = COMMANDS[args.subcommand](args, out)
    except (InputError, ValueError) as exc:
        print(f"umtree: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    print(json.dumps(validate._jsonable(body), indent=1, sort_keys=True))
    if args.subcommand == "validate" and body.get("verdict") == "fail":
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
