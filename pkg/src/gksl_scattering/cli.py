"""Command line interface: ``gksl <command> [options]``.

Exit codes: 0 ok, 1 usage or input error, 2 numerical non-convergence,
3 invariant failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import math
import re
import sys
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from . import coefficients as co
from . import lindblad as lb
from . import probability as pr
from . import symmetry as sy
from .kinematics import DEFAULT_EPSILON_SCHEDULE, Mandelstam, ModelParams, boost, on_shell

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED, EXIT_INVARIANT = 0, 1, 2, 3

CSV_FLOAT = "{:.11e}"
SCAN_HEADER = ["x", "delta_rad", "sigma_closed", "sigma_numeric", "numeric_error"]
EVOLVE_HEADER = ["step", "trace", "vacuum", "one_particle", "two_particle", "purity"]

# check suites fall back to these when the command line does not override them
DECAY_SECTOR = dict(lam=1.0, m_s=3.0)
PAIR_SECTOR = dict(lam=0.2, m_s=0.02)


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    lam: Optional[float] = None
    m_s: Optional[float] = None
    m_e: float = 1.0
    tol: float = 1e-8
    mc_samples: Optional[int] = None
    eps_schedule: tuple = DEFAULT_EPSILON_SCHEDULE
    seed: int = 12345
    box_length: float = lb.DEFAULT_BOX_LENGTH
    t_eff: float = lb.DEFAULT_TIME_EXTENT
    n_max: int = 1
    volume_time: float = 1.0
    units: str = "me"
    out: Optional[str] = None

    def params(self, lam=None, m_s=None, mc_samples=None) -> ModelParams:
        lam = self.lam if lam is None else lam
        m_s = self.m_s if m_s is None else m_s
        if lam is None or m_s is None:
            raise UsageError("both --lambda and --ms are required")
        kw = dict(
            lam=lam,
            m_s=m_s,
            m_e=self.m_e,
            epsilon_schedule=tuple(self.eps_schedule),
            simplex_tol=self.tol,
            volume_time=self.volume_time,
            seed=self.seed,
        )
        samples = self.mc_samples if mc_samples is None else mc_samples
        if samples is not None:
            kw["mc_samples"] = samples
        try:
            return ModelParams(**kw)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc

    def grid(self) -> lb.MomentumGrid:
        try:
            return lb.MomentumGrid(self.box_length, self.n_max, self.t_eff)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc

    def echo(self, stream):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            stream.write(f"# {f.name} = {v}\n")


# ---------------------------------------------------------------------------
# parsing helpers

_CONFIG_KEYS = {
    "lambda": "lam",
    "lam": "lam",
    "ms": "m_s",
    "m_s": "m_s",
    "me": "m_e",
    "m_e": "m_e",
    "tol": "tol",
    "mc_samples": "mc_samples",
    "eps_schedule": "eps_schedule",
    "seed": "seed",
    "box_length": "box_length",
    "grid_l": "box_length",
    "t_eff": "t_eff",
    "n_max": "n_max",
    "volume_time": "volume_time",
    "units": "units",
    "out": "out",
}


def _schedule(text: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise UsageError(f"bad epsilon schedule {text!r}") from exc
    return vals


def _convert(field_name: str, text: str):
    kinds = {
        "lam": float, "m_s": float, "m_e": float, "tol": float, "mc_samples": int,
        "seed": int, "box_length": float, "t_eff": float, "n_max": int, "volume_time": float,
        "units": str, "out": str, "eps_schedule": _schedule,
    }
    try:
        return kinds[field_name](text)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad value for {field_name}: {text!r}") from exc


def read_config(path: str) -> dict:
    """Flat ``key = value`` file with ``#`` comments."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for no, line in enumerate(lines, 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise UsageError(f"{path}:{no}: expected 'key = value'")
        key, value = (x.strip() for x in body.split("=", 1))
        key = key.replace("-", "_").lower()
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{no}: unknown key {key!r}")
        name = _CONFIG_KEYS[key]
        out[name] = _convert(name, value)
    return out


_ANGLE = re.compile(r"^\s*([+-]?\d*\.?\d*(?:[eE][+-]?\d+)?)\s*\*?\s*pi\s*(?:/\s*(\d*\.?\d+))?\s*$")


def parse_angle(text: str) -> float:
    """``0.5``, ``pi``, ``pi/2``, ``3pi/4`` or ``-0.5*pi``."""
    t = text.strip().lower()
    try:
        return float(t)
    except ValueError:
        pass
    m = _ANGLE.match(t)
    if not m:
        raise UsageError(f"bad angle {text!r}")
    coef = m.group(1)
    c = 1.0 if coef in ("", "+") else -1.0 if coef == "-" else float(coef)
    d = float(m.group(2)) if m.group(2) else 1.0
    return c * math.pi / d


def parse_state_file(path: str, basis: lb.FockBasis) -> np.ndarray:
    """Amplitudes from lines ``sector [n1x n1y n1z [n2x n2y n2z]] re im``."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read state file {path}: {exc}") from exc
    psi = np.zeros(basis.dim, dtype=complex)
    seen = set()
    for no, line in enumerate(lines, 1):
        body = line.split("#", 1)[0].split()
        if not body:
            continue
        where = f"{path}:{no}"
        try:
            sector = int(body[0])
            need = {0: 3, 1: 6, 2: 9}[sector]
        except (ValueError, KeyError):
            raise UsageError(f"{where}: sector must be 0, 1 or 2") from None
        if len(body) != need:
            raise UsageError(f"{where}: sector {sector} needs {need} fields, got {len(body)}")
        try:
            modes = [int(v) for v in body[1:-2]]
            amp = complex(float(body[-2]), float(body[-1]))
        except ValueError:
            raise UsageError(f"{where}: expected integer modes and real amplitude parts") from None
        try:
            if sector == 0:
                idx = 0
            elif sector == 1:
                idx = basis.one_index(modes)
            else:
                idx = basis.pair_index(modes[:3], modes[3:])
        except KeyError as exc:
            raise UsageError(f"{where}: {exc.args[0]}") from None
        if idx in seen:
            raise UsageError(f"{where}: duplicate basis state")
        seen.add(idx)
        psi[idx] = amp
    if not np.any(psi):
        raise UsageError(f"{path}: state has zero norm")
    return psi


def _f(x) -> str:
    return CSV_FLOAT.format(float(x))


def write_csv(path, header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    text = buf.getvalue()
    if path is None:
        sys.stdout.write(text)
    else:
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise UsageError(f"cannot write {path}: {exc}") from exc
    return text


# ---------------------------------------------------------------------------
# commands


def cmd_decay(cfg: RunConfig, args) -> int:
    params = cfg.params()
    closed = co.decay_rate_closed(params)
    p = on_shell([0.0, 0.0, 0.0], params.m_s)
    if args.rapidity:
        p = boost(p, args.rapidity, (0.0, 0.0, 1.0))
    num = co.decay_rate_numeric(params, p, route=args.route)
    print(f"closed = {closed:.12e}")
    print(f"numeric = {num.real:.12e} +- {num.abs_error:.3e} (route {args.route})")
    if closed > 0:
        print(f"ratio numeric/closed = {num.real / closed:.9f}")
    else:
        print("ratio numeric/closed = undefined (below threshold, both vanish)")
    print(f"reference ratio = {co.NUMERIC_TO_CLOSED_DECAY_RATIO}")
    return EXIT_OK if num.converged else EXIT_NONCONVERGED


def cmd_loop_a(cfg: RunConfig, args) -> int:
    params = cfg.params()
    a = co.loop_a(Mandelstam(args.s, args.t, args.u), params)
    d = a.diagnostics
    print(f"re = {a.real:.12e}")
    print(f"im = {a.imag:.12e}")
    print(f"error = {a.abs_error:.3e}")
    print(f"euclidean = {d.get('euclidean')}")
    for e, r in zip(d.get("eps", ()), d.get("raw", ())):
        print(f"eps = {e:.6e} raw = {complex(r).real:.12e} {complex(r).imag:+.12e}i")
    print(f"residual = {d.get('residual', 0.0):.3e}")
    print(f"converged = {a.converged}")
    return EXIT_OK if a.converged else EXIT_NONCONVERGED


def cmd_sigma_scan(cfg: RunConfig, args) -> int:
    params = cfg.params()
    deltas = [parse_angle(t) for t in args.deltas.split(",") if t.strip()]
    if not deltas:
        raise UsageError("need at least one delta")
    try:
        rows = pr.sigma_scan(args.x_min, args.x_max, args.steps, deltas, params,
                             n=cfg.mc_samples or pr.DEFAULT_SCAN_SAMPLES, seed=cfg.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_csv(cfg.out, SCAN_HEADER,
              [[_f(r.x), _f(r.delta), _f(r.sigma_closed), _f(r.sigma_numeric), _f(r.numeric_error)] for r in rows])
    report = sys.stdout if cfg.out else sys.stderr
    for d, fac in pr.discrepancy_factors(rows).items():
        report.write(f"discrepancy delta={d:.6f} closed/numeric median={fac:.6f}\n")
    report.write(f"agreement within {pr.AGREEMENT_LEVEL:.0%}: {pr.agreement_fraction(rows):.3f} of rows above threshold\n")
    return EXIT_OK


def _generator(kind: str, grid, basis, params):
    if kind == "auto":
        kind = "decay" if params.m_s > 2.0 * params.m_e else "pair"
    if kind == "decay":
        return lb.assemble_decay(grid, params, basis)
    if kind == "pair":
        return lb.assemble_pair(grid, params, basis)
    raise UsageError(f"unknown generator {kind!r}")


def cmd_evolve(cfg: RunConfig, args) -> int:
    params = cfg.params()
    grid = cfg.grid()
    basis = lb.FockBasis(grid)
    psi = parse_state_file(args.state, basis)
    rho = lb.DensityMatrix.pure(basis, psi)
    try:
        gen = _generator(args.generator, grid, basis, params)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = []

    def record(k, r):
        rows.append([str(k), _f(r.trace().real), _f(r.population(0)), _f(r.population(1)),
                     _f(r.population(2)), _f(r.purity())])

    record(0, rho)
    for k in range(1, args.steps + 1):
        try:
            rho = lb.evolve_step(gen, rho, args.dt)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        record(k, rho)
    write_csv(cfg.out, EVOLVE_HEADER, rows)
    return EXIT_OK


def gksl_suite(grid, decay_params, pair_params, states: int = 100, seed: int = 0) -> sy.SymmetryReport:
    """Trace, Hermiticity and kernel positivity for both generators."""
    rep = sy.SymmetryReport()
    basis = lb.FockBasis(grid)
    gens = {"decay": lb.assemble_decay(grid, decay_params, basis)}
    if pair_params.m_s < 2.0 * pair_params.m_e:
        gens["pair"] = lb.assemble_pair(grid, pair_params, basis)
    rng = np.random.default_rng([seed, 6])
    rhos = [lb.DensityMatrix.random(basis, rng, rank=int(rng.integers(1, basis.dim + 1))) for _ in range(states)]
    for name, g in gens.items():
        tr = herm = 0.0
        for r in rhos:
            out = lb.apply_generator(g, r)
            tr = max(tr, abs(np.trace(out)))
            herm = max(herm, np.max(np.abs(out - out.conj().T)))
        rep.add(f"gksl-{name}-trace", tr, 1e-10)
        rep.add(f"gksl-{name}-hermitian", herm, 1e-10)
        rep.add(f"gksl-{name}-kernel-psd", max(-g.min_eigen_ratio(), 0.0), 1e-8)
    return rep


def sumrule_suite(params: ModelParams) -> sy.SymmetryReport:
    rep = sy.SymmetryReport()
    r = lb.sum_rule_check(params)
    rep.add("sumrule", r.relative_deviation, 0.02)
    return rep


def cmd_check(cfg: RunConfig, args) -> int:
    decay = cfg.params(mc_samples=cfg.mc_samples or 1_000_000)
    pair = cfg.params(lam=args.pair_lambda if args.pair_lambda is not None else PAIR_SECTOR["lam"] * cfg.m_e,
                      m_s=args.pair_ms if args.pair_ms is not None else PAIR_SECTOR["m_s"] * cfg.m_e,
                      mc_samples=cfg.mc_samples or 1_000_000)
    suites = ["gksl", "sumrule", "poincare"] if args.suite == "all" else [args.suite]
    rep = sy.SymmetryReport()
    for s in suites:
        if s == "gksl":
            rep.extend(gksl_suite(cfg.grid(), decay, pair, seed=cfg.seed))
        elif s == "sumrule":
            rep.extend(sumrule_suite(decay))
        elif s == "poincare":
            rep.extend(sy.poincare_suite(decay, pair, elements=args.elements, seed=cfg.seed, n=200_000))
    for c in rep.checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"CHECK name={c.name} status={status} deviation={c.deviation:.3e} tolerance={c.tolerance:.3e}")
    failed = sum(not c.passed for c in rep.checks)
    print(f"SUMMARY status={'PASS' if failed == 0 else 'FAIL'} checks={len(rep.checks)} failed={failed}")
    return EXIT_OK if failed == 0 else EXIT_INVARIANT


# ---------------------------------------------------------------------------
# argument parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser):
    g = p.add_argument_group("model and numerics")
    g.add_argument("--config", help="key = value file; flags override it")
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--ms", dest="m_s", type=float)
    g.add_argument("--me", dest="m_e", type=float)
    g.add_argument("--tol", type=float, help="relative simplex tolerance")
    g.add_argument("--mc-samples", dest="mc_samples", type=int)
    g.add_argument("--eps-schedule", dest="eps_schedule", type=str, help="comma separated eps/m_e^2")
    g.add_argument("--seed", type=int)
    g.add_argument("--volume-time", dest="volume_time", type=float)
    g.add_argument("--units", choices=("me", "absolute"))
    g.add_argument("--out")


def _grid_flags(p):
    p.add_argument("--grid-l", dest="box_length", type=float)
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--t-eff", dest="t_eff", type=float)


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="gksl", description="GKSL generators for scalar scattering with a traced-out environment.")
    sub = top.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    d = sub.add_parser("decay", help="closed-form and phase-space decay rate")
    _common(d)
    d.add_argument("--route", choices=("cm", "lab"), default="cm")
    d.add_argument("--rapidity", type=float, default=0.0, help="boost the parent along z")

    a = sub.add_parser("loop-a", help="box coefficient A(s,t,u)")
    _common(a)
    a.add_argument("--s", type=float, required=True)
    a.add_argument("--t", type=float, required=True)
    a.add_argument("--u", type=float, required=True)

    s = sub.add_parser("sigma-scan", help="closed-form and numeric sigma curve")
    _common(s)
    s.add_argument("--x-min", dest="x_min", type=float, default=0.5)
    s.add_argument("--x-max", dest="x_max", type=float, default=5.0)
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--deltas", default="0,pi/2,pi")

    e = sub.add_parser("evolve", help="apply the scattering map to a state file")
    _common(e)
    _grid_flags(e)
    e.add_argument("--state", required=True)
    e.add_argument("--steps", type=int, default=1)
    e.add_argument("--dt", type=float, default=1.0)
    e.add_argument("--generator", choices=("auto", "decay", "pair"), default="auto")

    c = sub.add_parser("check", help="invariant suites")
    _common(c)
    _grid_flags(c)
    c.add_argument("--suite", choices=("all", "sumrule", "poincare", "gksl"), default="all")
    c.add_argument("--elements", type=int, default=20, help="random Poincare transformations")
    c.add_argument("--pair-lambda", dest="pair_lambda", type=float)
    c.add_argument("--pair-ms", dest="pair_ms", type=float)
    return top


def resolve_config(args) -> RunConfig:
    """defaults <- config file <- flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(read_config(args.config))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        values[f.name] = _convert(f.name, v) if f.name == "eps_schedule" else v
    if values.get("units", "me") not in ("me", "absolute"):
        raise UsageError("units must be 'me' or 'absolute'")
    return dataclasses.replace(RunConfig(), **values)


def command_defaults(cfg: RunConfig, command: str) -> RunConfig:
    """Fill the model parameters each command assumes when none are given."""
    if command == "decay":
        if cfg.m_s is None:
            raise UsageError("decay needs --ms")
        fill = dict(lam=1.0)
    elif command == "loop-a":
        fill = dict(lam=1.0, m_s=0.0)
    elif command == "check":
        fill = {k: v * cfg.m_e for k, v in DECAY_SECTOR.items()}
    else:
        fill = {k: v * cfg.m_e for k, v in PAIR_SECTOR.items()}
    return dataclasses.replace(cfg, **{k: v for k, v in fill.items() if getattr(cfg, k) is None})


COMMANDS = {
    "decay": cmd_decay,
    "loop-a": cmd_loop_a,
    "sigma-scan": cmd_sigma_scan,
    "evolve": cmd_evolve,
    "check": cmd_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = command_defaults(resolve_config(args), args.command)
        csv_to_stdout = args.command in ("sigma-scan", "evolve") and cfg.out is None
        cfg.echo(sys.stderr if csv_to_stdout else sys.stdout)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        sys.stderr.write(f"gksl {args.command}: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
