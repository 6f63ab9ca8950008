"""Command-line interface: ``catmmv <command> [options]``.

Every command writes its CSVs atomically into ``--out`` plus a
``manifest.json`` with SHA-256 digests. Exit codes: 0 success,
1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from importlib import metadata
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import simulate as sim
from .coefficients import build_curves
from .diffusion import (
    diffusion_coefficients,
    diffusion_controls,
    diffusion_value,
)
from .errors import CatMMVError, NumericalFailure, ValidationError
from .frontier_analytics import frontier_table
from .model import ModelParams, params_from_dict, params_to_dict, reference_params, resolve_leaf
from .strategies import default_anchor, mmv_value, precommitted_controls, value_function

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1; exit code 2 is reserved for numerical failure."""

    def error(self, message: str):  # noqa: D401
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# -------------------------------------------------------------------- output


def fmt(v) -> str:
    """Shortest decimal that round-trips to the same binary64."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


class Run:
    """Collects outputs in memory and commits them together at the end."""

    def __init__(self, args: argparse.Namespace, params: ModelParams):
        self.args = args
        self.params = params
        self.out = Path(args.out)
        self.files: dict[str, str] = {}
        self.started = time.time()

    def add(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
        self.files[name] = csv_text(header, rows)

    def commit(self, seed: int | None = None) -> None:
        for name, text in self.files.items():
            _atomic_write(self.out / name, text)
        manifest = {
            "subcommand": self.args.command,
            "tool_version": _version(),
            "model": self.args.model,
            "config": params_to_dict(self.params),
            "grid": self.args.grid,
            "seed": seed,
            "wall_clock_s": round(time.time() - self.started, 3),
            "outputs": [
                {"file": name, "sha256": hashlib.sha256(text.encode()).hexdigest()} for name, text in sorted(self.files.items())
            ],
        }
        _atomic_write(self.out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------- inputs


def floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or not all(math.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected finite numbers, got {text!r}")
    return vals


def _override(text: str) -> tuple[str, float]:
    key, sep, val = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key.strip(), float(val)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number in {text!r}") from None


def load_config(args: argparse.Namespace) -> ModelParams:
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
    else:
        cfg = params_to_dict(reference_params())
    if args.allow_cheap_reinsurance:
        cfg["allow_cheap_reinsurance"] = True
    for key, val in args.set or ():
        path = resolve_leaf(cfg, key).split(".")
        node = cfg
        for part in path[:-1]:
            node = node[part]
        node[path[-1]] = val
    return params_from_dict(cfg)


def resolve_seed(args: argparse.Namespace) -> int:
    env = os.environ.get("CATMMV_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ValidationError([("CATMMV_SEED", "an integer")]) from None
    return args.seed


def _coef(args, p: ModelParams):
    return diffusion_coefficients(p, args.grid) if args.model == "diffusion" else build_curves(p, args.grid)


def _default_times(p: ModelParams) -> list[float]:
    return [p.s + (p.T - p.s) * f for f in (0.0, 0.25, 0.5, 0.75)]


# ----------------------------------------------------------------- commands


def cmd_coeffs(args, p: ModelParams) -> int:
    run = Run(args, p)
    coef = _coef(args, p)
    tabs = coef.tables()
    header = ["t", "eta", "zeta", "alpha", "beta", "phi"] + (["xi"] if args.model == "diffusion" else [])
    run.add("coeffs.csv", header, zip(*(tabs[h] for h in header)))
    run.commit()
    return EXIT_OK


def cmd_value(args, p: ModelParams) -> int:
    run = Run(args, p)
    coef = _coef(args, p)
    anchor = default_anchor(p)
    if args.model == "diffusion":
        V = diffusion_value(p, coef, anchor, p.s, p.x0, p.lambda0)
        W = lambda t, x, lam: diffusion_value(p, coef, anchor, t, x, lam)  # noqa: E731
    else:
        V = mmv_value(p, coef)
        W = lambda t, x, lam: value_function(p, coef, anchor, t, x, lam)  # noqa: E731
    print(f"V_theta = {fmt(V)}")
    ts = args.t or _default_times(p)
    xs = args.x or [p.x0]
    ls = args.lam or [p.lambda0]
    run.add("value.csv", ["t", "x", "lambda", "W"], ((t, x, l, W(t, x, l)) for t in ts for x in xs for l in ls))
    run.commit()
    return EXIT_OK


def _policy_fn(args, p: ModelParams, coef):
    anchor = default_anchor(p)
    if args.model == "diffusion":
        return lambda t, x, lam: diffusion_controls(p, coef, anchor, t, x, lam)
    return lambda t, x, lam: precommitted_controls(p, coef, anchor, t, x, lam)


def cmd_policy(args, p: ModelParams) -> int:
    run = Run(args, p)
    pol = _policy_fn(args, p, _coef(args, p))
    ts = args.t or _default_times(p)
    xs = args.x or list(np.linspace(0.0, 200.0, 21))
    ls = args.lam or [p.lambda0]
    rows = []
    for t in ts:
        for x in xs:
            for lam in ls:
                c = pol(t, x, lam)
                rows.append((t, x, lam, c.pi, c.u, c.v))
    run.add("policy.csv", ["t", "x", "lambda", "pi", "u", "v"], rows)
    run.commit()
    return EXIT_OK


def _sim_config(args, p: ModelParams, record: Sequence[float], seed: int) -> sim.SimConfig:
    return sim.SimConfig(
        n_paths=args.paths,
        dt=args.dt,
        seed=seed,
        record_grid=tuple(record),
        engine=args.model,
        antithetic=args.antithetic,
        y_scheme=args.y_scheme,
        workers=args.workers,
    )


def cmd_simulate(args, p: ModelParams) -> int:
    seed = resolve_seed(args)
    run = Run(args, p)
    coef = _coef(args, p)
    record = args.record or [p.T]
    cfg = _sim_config(args, p, record, seed)
    strategy = sim.Strategy("feedback" if args.strategy == "optimal" else "precommitted")
    adversary = sim.Adversary.optimal() if args.adversary == "optimal" else sim.Adversary.none()
    res = sim.run_ensemble(p, coef, strategy, adversary, cfg)
    st = sim.ensemble_stats(res)
    run.add("ensemble.csv", sim.ENSEMBLE_HEADER, st.rows())
    est, se = st.objective
    run.add("objective.csv", ["estimate", "se", "n_paths"], [(est, se, st.n_paths)])
    if st.n_failed:
        print(f"warning: {st.n_failed} paths left the finite range and were dropped", file=sys.stderr)
    print(f"objective = {fmt(est)} +/- {fmt(se)} (n={st.n_paths})")
    run.commit(seed)
    return EXIT_OK


FRONTIER_HEADER = ["t", "mean_P", "mean_Q", "var_P", "C1", "C2", "C3"]
FRONTIER_MC = ["mc_mean_P", "mc_var_P", "mc_se_mean", "mc_se_var"]


def cmd_frontier(args, p: ModelParams) -> int:
    if args.model == "diffusion":
        diffusion_coefficients(p, args.grid)  # the condition gate reports first
        raise ValidationError([("--model", "jump for the frontier (no closed form in the diffusion model)")])
    seed = resolve_seed(args) if args.mc else None
    run = Run(args, p)
    curves = build_curves(p, args.grid)
    ts = args.t or [p.s + (p.T - p.s) * f for f in (0.25, 0.5, 0.75, 1.0)]
    pts = frontier_table(p, curves, default_anchor(p), ts)
    rows = [[fp.t, fp.mean_P, fp.mean_Q, fp.var_P, fp.C1, fp.C2, fp.C3] for fp in pts]
    header = list(FRONTIER_HEADER)
    if args.mc:
        cfg = _sim_config(args, p, ts, seed)
        res = sim.run_ensemble(p, curves, sim.Strategy("precommitted"), sim.Adversary.optimal(), cfg)
        X = res.field("X")
        for row, t in zip(rows, ts):
            m, se, var, se_var = _mean_var_se(res, X[:, sim.record_index(res, t)])
            row.extend([m, var, se, se_var])
        header += FRONTIER_MC
    run.add("frontier.csv", header, rows)
    run.commit(seed)
    return EXIT_OK


def _mean_var_se(res: sim.EnsembleResult, x: np.ndarray) -> tuple[float, float, float, float]:
    """Mean, SE, sample variance and the SE of that variance (delta method)."""
    m, se, var = sim.path_functional(res, x)
    d2 = (x - m) ** 2
    _, se_d2, _ = sim.path_functional(res, d2)
    return m, se, var, se_d2


def cmd_verify(args, p: ModelParams) -> int:
    from . import verify as ver

    run = Run(args, p)
    coef = _coef(args, p)
    checks: list[tuple[str, float, float, str]] = []  # (name, value, tolerance, sense)
    if args.model == "diffusion":
        ric = ver.riccati_residual_report(p, coef)
        checks += [(f"riccati:{k}", v, 1e-6, "<=") for k, v in ric.breakdown.items()]
    else:
        ode = ver.ode_residual_report(p, coef)
        pde = ver.coefficient_pde_report(p, coef)
        checks += [(f"ode:{k}", v, 1e-6, "<=") for k, v in ode.breakdown.items()]
        checks += [(f"pde:{k}", v, 1e-6, "<=") for k, v in pde.breakdown.items()]
    rep = ver.hjbi_residual_report(p, coef)
    checks.append(("hjbi", rep.breakdown["hjbi"], 1e-6, "<="))
    checks.append(("hjbi:sup_a", rep.breakdown["sup_a_spot"], ver.SPOT_TOL, "<="))
    checks.append(("hjbi:inf_b", rep.breakdown["inf_b_spot"], ver.SPOT_TOL, "<="))
    if args.model == "jump" and not args.quick:
        neg = ver.negative_control(p, coef, names=("eta", "zeta", "beta"))
        checks += [(f"negative:{k}x1.01", v, 1e-3, ">=") for k, v in neg.items()]
    ok_all = True
    print(f"{'check':<22s} {'value':>12s}  {'bound':>10s}  result")
    for name, val, tol, sense in checks:
        ok = val <= tol if sense == "<=" else val >= tol
        ok_all &= ok
        print(f"{name:<22s} {val:12.3e}  {sense}{tol:9.1e}  {'PASS' if ok else 'FAIL'}")
    run.add("residuals.csv", ["t", "x", "y", "lambda", "residual", "scale"], rep.rows)
    run.commit()
    return EXIT_OK if ok_all else EXIT_NUMERICAL


def cmd_sensitivity(args, p: ModelParams) -> int:
    cfg = params_to_dict(p)
    try:
        leaf = resolve_leaf(cfg, args.param).split(".")
    except ValidationError:
        raise ValidationError([(args.param, "a numeric config field")]) from None
    name = "_".join(leaf) if len(leaf) > 1 and leaf[-1] in ("rate", "shape") else leaf[-1]
    run = Run(args, p)
    xs = args.x or list(np.linspace(0.0, 200.0, 21))
    values = args.values or [_leaf_value(cfg, leaf)]
    rows = []
    for val in values:
        node = json.loads(json.dumps(cfg))
        tgt = node
        for part in leaf[:-1]:
            tgt = tgt[part]
        tgt[leaf[-1]] = val
        q = params_from_dict(node)
        pol = _policy_fn(args, q, _coef(args, q))
        for x in xs:
            c = pol(args.at_t, x, args.at_lambda)
            rows.append((val, x, c.u, c.v))
    run.add(f"sensitivity_{name}.csv", ["param_value", "x", "u", "v"], rows)
    run.commit()
    return EXIT_OK


def _leaf_value(cfg: dict, leaf: list[str]) -> float:
    node = cfg
    for part in leaf:
        node = node[part]
    return float(node)


COMMANDS = {
    "coeffs": cmd_coeffs,
    "value": cmd_value,
    "policy": cmd_policy,
    "simulate": cmd_simulate,
    "frontier": cmd_frontier,
    "verify": cmd_verify,
    "sensitivity": cmd_sensitivity,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON parameter file (default: the reference set)")
    common.add_argument("--set", action="append", type=_override, metavar="KEY=VALUE", help="override a config field")
    common.add_argument("--model", choices=("jump", "diffusion"), default="jump")
    common.add_argument("--out", default="./out", help="output directory (default ./out)")
    common.add_argument("--grid", type=int, default=2001, help="coefficient tabulation points (default 2001)")
    common.add_argument("--allow-cheap-reinsurance", action="store_true")

    def grids(sp):
        sp.add_argument("--t", type=floats, help="times t1,t2,...")
        sp.add_argument("--x", type=floats, help="wealth values")
        sp.add_argument("--lambda", dest="lam", type=floats, help="intensity values")

    def mc(sp, paths: int, dt: float):
        sp.add_argument("--paths", type=int, default=paths)
        sp.add_argument("--dt", type=float, default=dt)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--antithetic", action="store_true")
        sp.add_argument("--exact-y", dest="y_scheme", action="store_const", const="exact", default="euler",
                        help="log-exact Y steps instead of Euler")

    parser = _Parser(prog="catmmv", description="MMV investment-reinsurance with catastrophe risk")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("coeffs", parents=[common], help="tabulate the coefficient functions")
    grids(sub.add_parser("value", parents=[common], help="value function and V_theta"))
    grids(sub.add_parser("policy", parents=[common], help="precommitted optimal controls"))
    sp = sub.add_parser("simulate", parents=[common], help="Monte Carlo ensemble")
    mc(sp, 10_000, 0.01)
    sp.add_argument("--record", type=floats, help="record times t1,t2,...")
    sp.add_argument("--strategy", choices=("optimal", "precommitted"), default="optimal")
    sp.add_argument("--adversary", choices=("optimal", "none"), default="optimal")
    sp = sub.add_parser("frontier", parents=[common], help="efficient-frontier constants")
    sp.add_argument("--t", type=floats, help="times t1,t2,...")
    sp.add_argument("--mc", action="store_true", help="append Monte Carlo columns")
    mc(sp, 10_000, 0.05)
    sp = sub.add_parser("verify", parents=[common], help="residual and HJBI checks")
    sp.add_argument("--quick", action="store_true", help="skip the negative control")
    sp = sub.add_parser("sensitivity", parents=[common], help="controls across parameter values")
    sp.add_argument("--param", required=True, help="config field (dotted path or unambiguous leaf)")
    sp.add_argument("--values", type=floats, help="parameter values (default: the configured one)")
    sp.add_argument("--t", dest="at_t", type=float, default=1.0, help="evaluation time (default 1)")
    sp.add_argument("--lambda", dest="at_lambda", type=float, default=5.0, help="evaluation intensity (default 5)")
    sp.add_argument("--x", type=floats, help="wealth values (default 0,10,...,200)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.grid < 2:
            raise ValidationError([("--grid", ">= 2")])
        params = load_config(args)
        return COMMANDS[args.command](args, params)
    except NumericalFailure as exc:
        print(f"catmmv: numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, CatMMVError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"catmmv: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
