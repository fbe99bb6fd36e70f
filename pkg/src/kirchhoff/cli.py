"""Command-line entry point.

Exit codes: 0 success, 1 bad input (contract or usage errors), 2 numerical
failure (non-convergence, divergence guard, accuracy).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ContractError, KirchhoffError, NumericalError

logger = logging.getLogger("kirchhoff")


# ---------------------------------------------------------------------------
# output helpers


def _fmt(obj, indent=0):
    """JSON with every float printed to 17 significant digits (non-finite → null)."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        s = format(x, ".17g")
        return s if re.search(r"[.eEn]", s) else s + ".0"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_fmt(v, indent + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        return "[" + ", ".join(_fmt(v, indent + 1) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    return _fmt(obj) + "\n"


def _write(path, text: str) -> None:
    from .field import write_atomic

    write_atomic(Path(path), text.encode())


def _emit(obj, out) -> None:
    text = dumps(obj)
    if out:
        _write(out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# constants cache and the "astar" literal


def default_constants_path() -> Path:
    env = os.environ.get("KIRCHHOFF_CONSTANTS")
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "kirchhoff" / "constants.json"


def load_constants(path: Path) -> dict:
    """Read the constants file, computing and caching it on first use."""
    if path.exists():
        try:
            d = json.loads(path.read_text())
            float(d["a_star"])
            return d
        except (ValueError, KeyError, TypeError) as exc:
            raise ContractError(f"constants file {path} is unreadable: {exc}") from exc
    from .ground_state import reference_ground_state

    d = reference_ground_state()[1].as_dict()
    try:
        _write(path, dumps(d))
    except OSError as exc:
        logger.warning("could not cache constants at %s: %s", path, exc)
    return d


def parse_a(text: str, constants: dict) -> float:
    """A number, or a multiple of a*: 'astar', '2astar', '1.5*astar'."""
    t = str(text).strip().replace(" ", "")
    try:
        if t.endswith("astar"):
            k = t[:-5].rstrip("*")
            return (float(k) if k else 1.0) * float(constants["a_star"])
        return float(t)
    except ValueError as exc:
        raise ContractError(f"cannot parse a={text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ContractError(f"cannot parse number list {text!r}") from exc


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise ContractError(f"file not found: {p}")
    return p


def _load_potential(spec):
    from .potential import PotentialSpec

    if spec is None:
        return None
    if isinstance(spec, dict):
        return PotentialSpec.from_dict(spec)
    return PotentialSpec.load(_existing(spec))


# ---------------------------------------------------------------------------
# subcommands


def cmd_q(args, constants_path: Path) -> int:
    from .ground_state import ground_state_constants, solve_q

    if args.action != "solve":
        raise ContractError(f"unknown q action {args.action!r}")
    if not args.rmax >= 10:
        raise ContractError("--rmax must be at least 10")
    prof = solve_q(tol=args.tol, r_max=args.rmax, dr=args.dr)
    consts = ground_state_constants(prof)
    lines = ["r,q,dq"]
    lines += [f"{r:.17g},{q:.17g},{d:.17g}" for r, q, d in zip(prof.r_grid, prof.q_values, prof.dq_values)]
    _write(args.out, "\n".join(lines) + "\n")
    text = dumps(consts.as_dict())
    _write(args.constants or constants_path, text)
    sys.stdout.write(text)
    return 0


def _grid_from(d: dict):
    from .field import GridSpec

    return GridSpec(half_width=float(d["L"]), n=int(d["n"]), center=tuple(d.get("center", (0.0, 0.0))),
                    stencil=d.get("stencil", "fourth_order"))


def _init_from(d: dict | None, base: Path):
    from .field import load_field
    from .minimizer import InitSpec

    if not d:
        return InitSpec()
    kind = d.get("kind", "gaussian")
    if kind == "field":
        p = Path(d["path"])
        return InitSpec.from_field(load_field(p if p.is_absolute() else base / p))
    if kind == "random":
        return InitSpec.random(int(d["seed"]))
    return InitSpec.gaussian(d.get("center"), d.get("sigma"))


def cmd_minimize(args, constants: dict) -> int:
    from .field import save_field
    from .minimizer import MinimizeConfig, Problem, minimize, multi_start

    path = _existing(args.config)
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ContractError(f"config {path} is not valid JSON: {exc}") from exc
    try:
        a = parse_a(str(cfg["a"]), constants)
        b = float(cfg["b"])
        pot = cfg.get("potential")
        if isinstance(pot, str):
            pot = str(path.parent / pot) if not Path(pot).is_absolute() else pot
        problem = Problem(a, b, _load_potential(pot))
        keys = ("dt", "tol_energy", "tol_residual", "max_iter", "theta_max")
        extra = {k: cfg[k] for k in keys if k in cfg}
        config = MinimizeConfig(grid=_grid_from(cfg["grid"]), init=_init_from(cfg.get("init"), path.parent), **extra)
    except KeyError as exc:
        raise ContractError(f"config is missing key {exc}") from exc
    if args.starts > 1:
        ms = multi_start(problem, config, args.starts, args.seed, args.jobs)
        res = ms.best
        extra_out = {"energy_spread": ms.energy_spread, "peak_spread": ms.peak_spread,
                     "starts": [r.summary() for r in ms.all]}
    else:
        res = minimize(problem, config)
        extra_out = {}
    summary = {"a": a, "b": b, "grid": config.grid.as_dict(), **res.summary(), **extra_out}
    _emit(summary, args.out)
    if args.field:
        save_field(res.field, args.field)
    if args.log:
        lines = ["iter,energy,residual,dt,theta"]
        lines += [f"{int(r[0])},{r[1]:.17g},{r[2]:.17g},{r[3]:.17g},{r[4]:.17g}" for r in res.log]
        _write(args.log, "\n".join(lines) + "\n")
    if not res.converged:
        print(f"minimize: {res.status} after {res.iterations} iterations, residual {res.residual:.3e}",
              file=sys.stderr)
        return 2
    return 0


def cmd_sweep(args, constants: dict) -> int:
    from .field import GridSpec
    from .minimizer import BLOWUP_DETECTED, InitSpec, MinimizeConfig, Problem, sweep_b

    a = parse_a(args.a, constants)
    bs = _float_list(args.b)
    pot = _load_potential(args.potential)
    center = tuple(_float_list(args.center)) if args.center else (0.0, 0.0)
    if len(center) != 2:
        raise ContractError("--center takes two numbers")
    rescale = None if args.rescale <= 0 else args.rescale
    config = MinimizeConfig(
        grid=GridSpec(args.L, args.n, center=center),
        tol_residual=args.tol_residual,
        max_iter=args.max_iter,
        init=InitSpec.gaussian(center, args.sigma),
        rescale=rescale,
    )
    sw = sweep_b(Problem(a, bs[0] if bs else 1.0, pot), bs, config)
    sw.save(args.out)
    failed = [r for r in sw.rows if not r.converged]
    if failed or len(sw.rows) < len(bs):
        status = "divergence guard" if any(r.status == BLOWUP_DETECTED for r in sw.results) else "non-convergence"
        print(f"sweep: {status} at b={[r.b for r in failed]}", file=sys.stderr)
        return 2
    return 0


def cmd_fit(args, constants: dict) -> int:
    from .asymptotics import SweepResult, fit_power_law

    sw = SweepResult.load(_existing(args.inp))
    p, lam = args.p, args.lambda0
    if args.analysis:
        from .potential import WellAnalysis

        an = WellAnalysis.from_dict(json.loads(_existing(args.analysis).read_text()))
        p = an.p if p is None else p
        lam = an.lambda0 if lam is None else lam
    a = parse_a(args.a, constants) if args.a else None
    fr = fit_power_law(sw, args.mode, a=a, p=p, lambda0=lam)
    _emit({"mode": args.mode, **fr.as_dict()}, args.out)
    return 0


def cmd_report(args, constants: dict) -> int:
    from .asymptotics import SweepResult, verify_limits
    from .potential import WellAnalysis

    sw = SweepResult.load(_existing(args.inp))
    an = None
    if args.analysis:
        an = WellAnalysis.from_dict(json.loads(_existing(args.analysis).read_text()))
    a = parse_a(args.a, constants)
    rep = verify_limits(sw, a, an)
    _emit({"a": a, **rep.as_dict()}, args.out)
    return 0


def cmd_oracle(args, constants: dict) -> int:
    from . import limit_oracle as lo

    a = parse_a(args.a, constants)
    s = float(constants["a_star"])
    b = args.b
    if not b > 0:
        raise ContractError("--b must be positive")
    reg = lo.regime(a, s)
    out = {"a": a, "b": b, "a_star": s, "regime": reg,
           "r_b": lo.r_b(a, b, s), "e_bar": lo.e_bar_closed(a, b, s)}
    if reg == "supercritical":
        out["epsilon"] = lo.theory_epsilon(a, b, a_star=s)
    if args.p is not None and args.lambda0 is not None:
        out["energy_coefficient_astar"] = lo.theory_energy_coefficient(args.p, args.lambda0, s)
        out["e_astar"] = lo.theory_energy_astar(b, args.p, args.lambda0, s)
        if reg == "critical":
            out["epsilon"] = lo.theory_epsilon(a, b, args.p, args.lambda0, s)
    _emit(out, args.out)
    return 0


def cmd_wells(args, constants: dict) -> int:
    from .ground_state import reference_ground_state
    from .potential import analyze_wells

    pot = _load_potential(args.potential)
    an = analyze_wells(pot, reference_ground_state()[0])
    _emit(an.as_dict(), args.out)
    return 0


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


class _VersionAction(argparse.Action):
    def __init__(self, option_strings, dest, **kw):
        super().__init__(option_strings, dest, nargs=0, default=argparse.SUPPRESS, **kw)

    def __call__(self, parser, namespace, values, option_string=None):
        path = Path(getattr(namespace, "constants", None) or default_constants_path())
        digest = hashlib.sha256(path.read_bytes()).hexdigest() if path.exists() else "none"
        print(f"kirchhoff {__version__} constants {path} sha256 {digest}")
        raise SystemExit(0)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kirchhoff", description="Mass-constrained Kirchhoff energy minimization.")
    p.add_argument("--constants", help="ground-state constants file (default: user cache)")
    p.add_argument("--version", action=_VersionAction, help="print version and constants-file hash")
    p.add_argument("--jobs", type=int, default=1, help="maximum worker processes")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    q = sub.add_parser("q", help="ground state Q")
    q.add_argument("action", choices=["solve"])
    q.add_argument("--tol", type=float, default=1e-10)
    q.add_argument("--rmax", type=float, default=20.0)
    q.add_argument("--dr", type=float, default=1e-4)
    q.add_argument("--out", default="q.csv")

    m = sub.add_parser("minimize", help="minimize the energy for one (a, b, V)")
    m.add_argument("--config", required=True)
    m.add_argument("--out")
    m.add_argument("--field")
    m.add_argument("--log")
    m.add_argument("--starts", type=int, default=1)
    m.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("sweep", help="continuation in decreasing b")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True, help="comma-separated, strictly decreasing")
    s.add_argument("--potential")
    s.add_argument("--out", required=True)
    s.add_argument("--L", type=float, default=8.0, help="grid half-width (fixed grids)")
    s.add_argument("--n", type=int, default=128)
    s.add_argument("--rescale", type=float, default=8.0,
                   help="half-width in units of the theoretical blow-up scale; 0 keeps the grid fixed")
    s.add_argument("--center", help="x,y of the initial grid centre")
    s.add_argument("--sigma", type=float, help="width of the initial Gaussian")
    s.add_argument("--tol-residual", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=5000)

    f = sub.add_parser("fit", help="power-law fit of a sweep")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--mode", required=True, choices=["supercritical_energy", "critical_energy", "epsilon"])
    f.add_argument("--a")
    f.add_argument("--p", type=float)
    f.add_argument("--lambda0", type=float)
    f.add_argument("--analysis")
    f.add_argument("--out")

    r = sub.add_parser("report", help="limit diagnostics of a sweep")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--a", required=True)
    r.add_argument("--analysis")
    r.add_argument("--out")

    o = sub.add_parser("oracle", help="closed-form limit values")
    o.add_argument("--a", required=True)
    o.add_argument("--b", type=float, required=True)
    o.add_argument("--p", type=float)
    o.add_argument("--lambda0", type=float)
    o.add_argument("--out")

    w = sub.add_parser("wells", help="well selection quantities of a potential")
    w.add_argument("--potential", required=True)
    w.add_argument("--out")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    constants_path = Path(args.constants) if args.constants else default_constants_path()
    try:
        if args.cmd == "q":
            return cmd_q(args, constants_path)
        constants = load_constants(constants_path)
        handler = {"minimize": cmd_minimize, "sweep": cmd_sweep, "fit": cmd_fit, "report": cmd_report,
                   "oracle": cmd_oracle, "wells": cmd_wells}[args.cmd]
        return handler(args, constants)
    except NumericalError as exc:
        print(f"{args.cmd}: numerical failure: {exc}", file=sys.stderr)
        return 2
    except ContractError as exc:
        print(f"{args.cmd}: {exc}", file=sys.stderr)
        return 1
    except KirchhoffError as exc:
        print(f"{args.cmd}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{args.cmd}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
