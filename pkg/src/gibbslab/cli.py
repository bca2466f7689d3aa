"""Command-line drivers.

Every subcommand resolves its settings (defaults, then an optional
``--config`` file of ``key = value`` lines, then explicit flags), validates
them, and writes one record embedding the resolved settings and the toolkit
version.  Exit status: 0 success, 1 invalid settings or I/O problem,
2 numerical failure (for instance a tolerance breach in ``exact-check``).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .constants import EXACT_TOL, MAX_CONSISTENCY_SITES

COMMANDS = ("exact-check", "tm1d", "sample", "rg", "probe", "pressure", "entropy")
BC_NAMES = ("plus", "minus", "free", "alt", "periodic")
OBSERVABLE_NAMES = ("magnetization-at-0", "mean-magnetization", "energy-per-site")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, out_default: str = "-"):
    p.add_argument("--config", help="file of 'key = value' lines overriding defaults")
    p.add_argument("--out", default=out_default, help="output path, '-' for stdout")
    p.add_argument("--format", choices=("csv", "json"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gibbslab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gibbslab {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("exact-check", help="exact DLR, key-density and dynamics checks")
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--n", type=int, default=3, help="box radius")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--J", type=float, default=1.0)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--bc", choices=BC_NAMES, default="plus")
    p.add_argument("--potential", help="explicit potential text file (overrides --J/--h)")
    _common(p)

    p = sub.add_parser("tm1d", help="transfer-matrix solution of the Ising chain")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--J", type=float, default=1.0)
    p.add_argument("--h", type=float, default=0.0)
    _common(p)

    p = sub.add_parser("sample", help="heat-bath or Metropolis estimate of an observable")
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--size", type=int, default=16, help="side length L of the L^d grid")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--J", type=float, default=1.0)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--bc", choices=BC_NAMES, default="plus")
    p.add_argument("--sweeps", type=int, default=20000)
    p.add_argument("--burnin", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=None, help="default: sweeps // 20")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--observable", choices=OBSERVABLE_NAMES, default="magnetization-at-0")
    p.add_argument("--method", choices=("heat-bath", "metropolis"), default="heat-bath")
    p.add_argument("--scan", choices=("lexicographic", "random"), default="lexicographic")
    _common(p)

    p = sub.add_parser("rg", help="apply a block transform to a stored configuration")
    p.add_argument("--input", help="configuration text file")
    p.add_argument("--transform", choices=("decimation", "majority", "kadanoff"), default="decimation")
    p.add_argument("--b", type=int, default=2, help="decimation spacing")
    p.add_argument("--block", default="3,3", help="block side lengths, comma separated")
    p.add_argument("--p", type=float, default=1.0, help="Kadanoff sharpness")
    p.add_argument("--seed", type=int, default=0)
    _common(p)

    p = sub.add_parser("probe", help="conditional magnetization of the decimated measure")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--R", type=int, default=8)
    p.add_argument("--outer", choices=("plus", "minus", "both"), default="both")
    p.add_argument("--sweeps", type=int, default=20000)
    p.add_argument("--burnin", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=None, help="default: sweeps // 20")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--box-factor", type=int, default=4)
    p.add_argument("--estimator", choices=("ratio", "ratio-conditional", "direct"), default="ratio")
    p.add_argument("--local-sweeps", type=int, default=0)
    _common(p)

    p = sub.add_parser("pressure", help="exact finite-volume pressures")
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--J", type=float, default=1.0)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--n-max", type=int, default=12)
    p.add_argument("--width", type=int, default=4)
    p.add_argument("--bc", default="free,plus,minus", help="comma-separated boundary conditions")
    _common(p)

    p = sub.add_parser("entropy", help="exact entropy densities of two-state chains")
    p.add_argument("--kind", choices=("ks", "relative"), default="ks")
    p.add_argument("--measure", default="markov:0.8,0.6", help="product:p or markov:p,q")
    p.add_argument("--reference", default="product:0.5", help="second measure for --kind relative")
    p.add_argument("--n", default="1,2,4,8,12", help="comma-separated block radii")
    _common(p)
    return parser


# -- config handling ------------------------------------------------------------------

def read_config_file(path: str) -> dict:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"--config line {lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse(argv) -> dict:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("missing command; choose one of " + ", ".join(COMMANDS))
    if args.config:
        overrides = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise UsageError(f"--config: unknown keys {', '.join(unknown)}")
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    cfg = vars(args)
    cfg.pop("config", None)
    return cfg


def _floats(text, flag):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--{flag}: expected comma-separated numbers") from None


def validate(cfg: dict) -> list:
    """Violations of the resolved settings; empty iff runnable."""
    bad = []
    cmd = cfg.get("command")
    if cmd not in COMMANDS:
        return [f"command must be one of {', '.join(COMMANDS)}"]
    beta = cfg.get("beta")
    if beta is not None and not (beta >= 0 and math.isfinite(beta)):
        bad.append("beta must be ≥ 0")
    if cmd in ("sample", "probe"):
        sweeps = cfg["sweeps"]
        batch = cfg.get("batch_size") or max(1, sweeps // 20)
        if sweeps <= 0:
            bad.append("sweeps must be > 0")
        if cfg["burnin"] < 0:
            bad.append("burnin must be ≥ 0")
        if batch > sweeps:
            bad.append("batch_size must not exceed sweeps")
        elif sweeps > 0 and sweeps // batch < 20:
            bad.append("sweeps / batch_size must give at least 20 batches")
    if cmd == "probe":
        if cfg["R"] < 2:
            bad.append("R ≥ 2 required")
        if cfg["box_factor"] < 2 or cfg["box_factor"] % 2:
            bad.append("box_factor must be an even integer ≥ 2")
        if cfg["local_sweeps"] < 0:
            bad.append("local_sweeps must be ≥ 0")
    if cmd == "sample":
        if cfg["size"] < 1:
            bad.append("size must be ≥ 1")
        if cfg["dim"] < 1:
            bad.append("dim must be ≥ 1")
    if cmd == "exact-check":
        if cfg["dim"] < 1 or cfg["n"] < 0:
            bad.append("dim must be ≥ 1 and n ≥ 0")
        elif (2 * cfg["n"] + 1) ** cfg["dim"] > MAX_CONSISTENCY_SITES:
            bad.append(f"box of radius n in dimension dim must have ≤ {MAX_CONSISTENCY_SITES} sites")
        if cfg["bc"] == "periodic":
            bad.append("bc periodic is not allowed in DLR checks")
    if cmd == "pressure":
        if cfg["dim"] not in (1, 2):
            bad.append("dim must be 1 or 2")
        if not 1 <= cfg["n_max"] <= 12:
            bad.append("n_max must lie in 1..12")
        if not 1 <= cfg["width"] <= 4:
            bad.append("width must lie in 1..4")
        names = [b.strip() for b in cfg["bc"].split(",") if b.strip()]
        if not names or any(b not in BC_NAMES or b == "periodic" for b in names):
            bad.append("bc must list boundary conditions from plus, minus, free, alt")
    if cmd == "entropy":
        for flag in ("measure", "reference"):
            try:
                _measure(cfg[flag])
            except (UsageError, ValueError) as exc:
                bad.append(f"{flag}: {exc}")
        try:
            ns = _floats(cfg["n"], "n")
            if not ns or any(n < 0 or n != int(n) or n > 12 for n in ns):
                bad.append("n must list integers in 0..12")
        except UsageError as exc:
            bad.append(str(exc))
    if cmd == "rg":
        if not cfg.get("input"):
            bad.append("input is required")
        if cfg["b"] < 1:
            bad.append("b must be ≥ 1")
        if cfg["transform"] == "kadanoff" and not cfg["p"] > 0:
            bad.append("p must be > 0")
    return bad


# -- output ---------------------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if hasattr(v, "item"):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def render(cfg: dict, header: list, rows: list, fmt_name: str, extra: Optional[dict] = None) -> str:
    meta = {"version": __version__, "config": cfg}
    if fmt_name == "json":
        record = dict(meta)
        record["results"] = [dict(zip(header, r)) for r in rows]
        if extra:
            record.update(extra)
        return json.dumps(_jsonable(record), indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    buf.write(f"# gibbslab {__version__} config={json.dumps(_jsonable(cfg), sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        writer.writerow([fmt(v) for v in r])
    return buf.getvalue()


def emit(cfg: dict, text: str) -> None:
    out = cfg.get("out") or "-"
    if out == "-":
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise UsageError(f"--out: cannot write {out}: {exc.strerror}") from None


def _format(cfg: dict, default: str) -> str:
    if cfg.get("format"):
        return cfg["format"]
    out = cfg.get("out") or "-"
    if out.endswith(".json"):
        return "json"
    if out.endswith(".csv"):
        return "csv"
    return default


# -- commands --------------------------------------------------------------------------

def _bc(name):
    from .lattice import BoundaryCondition
    return BoundaryCondition.from_name(name)


def _measure(spec: str):
    from .exact1d import MarkovSpec
    from .thermo import MarkovMeasure, ProductMeasure
    kind, _, params = str(spec).partition(":")
    vals = _floats(params, "measure")
    if kind == "product" and len(vals) == 1:
        return ProductMeasure(vals[0])
    if kind == "markov" and len(vals) == 2:
        return MarkovMeasure(MarkovSpec(vals[0], vals[1]))
    raise UsageError(f"expected product:p or markov:p,q, got {spec!r}")


def cmd_exact_check(cfg):
    from .dynamics import detailed_balance_check, stationary_check
    from .interactions import ising, potential_from_text
    from .kernels import build_kernel, check_consistency, key_density_check
    from .lattice import Volume, center_site, make_box
    dim, n = cfg["dim"], cfg["n"]
    if cfg.get("potential"):
        try:
            pot = potential_from_text(Path(cfg["potential"]).read_text(), dim)
        except OSError as exc:
            raise UsageError(f"--potential: cannot read: {exc.strerror}") from None
    else:
        pot = ising(cfg["J"], cfg["h"], dim)
    vol = make_box(n, dim)
    bc = _bc(cfg["bc"])
    beta = cfg["beta"]
    table = build_kernel(pot, vol, beta, bc)
    singles = [Volume((s,)) for s in vol.sites]
    centre = Volume((center_site(vol),))
    checks = [
        ("normalization", abs(float(table.probs.sum()) - 1.0), EXACT_TOL),
        ("consistency", max(check_consistency(pot, beta, vol, s, bc) for s in singles), EXACT_TOL),
        ("key-density", key_density_check(pot, beta, vol, centre, bc), EXACT_TOL),
        ("flip-balance", detailed_balance_check(pot, beta, vol, bc), EXACT_TOL),
    ]
    if len(vol) <= 12:
        checks.append(("stationary-tv", stationary_check(pot, beta, vol, bc), 1e-8))
    rows = [(name, value, tol, value <= tol) for name, value, tol in checks]
    text = render(cfg, ["check", "value", "tolerance", "passed"], rows, _format(cfg, "json"))
    emit(cfg, text)
    if not all(r[3] for r in rows):
        raise NumericalFailure("tolerance breached: " + ", ".join(r[0] for r in rows if not r[3]))


def cmd_tm1d(cfg):
    from .exact1d import tm_correlation_length, tm_free_energy, tm_magnetization
    b, J, h = cfg["beta"], cfg["J"], cfg["h"]
    row = (b, J, h, tm_free_energy(b, J, h), tm_magnetization(b, J, h), tm_correlation_length(b, J, h))
    emit(cfg, render(cfg, ["beta", "J", "h", "free_energy", "magnetization", "correlation_length"],
                     [row], _format(cfg, "csv")))


def cmd_sample(cfg):
    from .dynamics import estimate_observable
    from .interactions import ising
    from .lattice import make_grid
    # centred so that "magnetization-at-0" is a bulk site
    vol = make_grid((cfg["size"],) * cfg["dim"], origin=(-(cfg["size"] // 2),) * cfg["dim"])
    batch = cfg.get("batch_size") or max(1, cfg["sweeps"] // 20)
    cfg["batch_size"] = batch
    est = estimate_observable(ising(cfg["J"], cfg["h"], cfg["dim"]), cfg["beta"], vol, _bc(cfg["bc"]),
                              cfg["observable"], (cfg["burnin"], cfg["sweeps"], batch), cfg["seed"],
                              method=cfg["method"], scan=cfg["scan"])
    d = est.to_dict()
    header = ["observable", "mean", "stderr", "n_sweeps", "burn_in", "batch_size", "seed",
              "rng_algorithm", "backend"]
    emit(cfg, render(cfg, header, [tuple(d[k] for k in header)], _format(cfg, "csv")))


def cmd_rg(cfg):
    from .lattice import config_from_text, config_to_text
    from .rg import RGTransform, apply_transform
    try:
        config = config_from_text(Path(cfg["input"]).read_text())
    except OSError as exc:
        raise UsageError(f"--input: cannot read: {exc.strerror}") from None
    block = tuple(int(x) for x in _floats(cfg["block"], "block"))
    if cfg["transform"] == "decimation":
        t = RGTransform.decimation(cfg["b"])
    elif cfg["transform"] == "majority":
        t = RGTransform.majority(block)
    else:
        t = RGTransform.kadanoff(cfg["p"], block)
    coarse = apply_transform(t, config, cfg["seed"])
    emit(cfg, config_to_text(coarse))


def cmd_probe(cfg):
    from .rg import ProbeSetup, probe_conditional_magnetization
    batch = cfg.get("batch_size") or max(1, cfg["sweeps"] // 20)
    cfg["batch_size"] = batch
    outers = {"plus": [1], "minus": [-1], "both": [1, -1]}[cfg["outer"]]
    import numpy as np
    seeds = np.random.SeedSequence(cfg["seed"]).spawn(len(outers))
    results = {}
    for o, s in zip(outers, seeds):
        setup = ProbeSetup(cfg["R"], cfg["beta"], o, cfg["box_factor"])
        results[o] = probe_conditional_magnetization(
            setup, (cfg["burnin"], cfg["sweeps"], batch), s,
            estimator=cfg["estimator"], local_sweeps=cfg["local_sweeps"])
    header = ["outer", "probe", "stderr"]
    rows = [("plus" if o > 0 else "minus", r.mean, r.stderr) for o, r in results.items()]
    extra = {"rng_algorithm": next(iter(results.values())).rng_algorithm,
             "backend": next(iter(results.values())).backend}
    if len(results) == 2:
        gap = results[1].mean - results[-1].mean
        gap_se = math.hypot(results[1].stderr, results[-1].stderr)
        rows.append(("gap", gap, gap_se))
        extra.update({"probe_plus": results[1].mean, "probe_minus": results[-1].mean,
                      "gap": gap, "stderr": gap_se})
    for r in results.values():
        if not math.isfinite(r.mean):
            raise NumericalFailure("probe estimate is not finite")
    emit(cfg, render(cfg, header, rows, _format(cfg, "json"), extra))


def cmd_pressure(cfg):
    from .interactions import ising
    from .thermo import pressure_series
    names = [b.strip() for b in cfg["bc"].split(",") if b.strip()]
    series = pressure_series(ising(cfg["J"], cfg["h"], cfg["dim"]), cfg["beta"], cfg["n_max"],
                             names, cfg["width"])
    emit(cfg, render(cfg, ["n", "value", "bc", "gap"], series.rows(), _format(cfg, "csv")))


def cmd_entropy(cfg):
    from .thermo import ks_entropy_exact, relative_entropy_density_exact
    ns = [int(x) for x in _floats(cfg["n"], "n")]
    mu = _measure(cfg["measure"])
    if cfg["kind"] == "ks":
        rep = ks_entropy_exact(mu, ns)
    else:
        rep = relative_entropy_density_exact(mu, _measure(cfg["reference"]), ns)
    rows = [(n, v, rep.kind, g) for n, v, _, g in rep.rows()]
    emit(cfg, render(cfg, ["n", "value", "bc", "gap"], rows, _format(cfg, "csv"),
                     {"closed_form": rep.closed_form, "divergent": rep.divergent}))


HANDLERS = {"exact-check": cmd_exact_check, "tm1d": cmd_tm1d, "sample": cmd_sample, "rg": cmd_rg,
            "probe": cmd_probe, "pressure": cmd_pressure, "entropy": cmd_entropy}


def run(cfg: dict) -> int:
    problems = validate(cfg)
    if problems:
        for p in problems:
            print(f"gibbslab {cfg.get('command')}: {p}", file=sys.stderr)
        return 1
    try:
        HANDLERS[cfg["command"]](cfg)
    except UsageError as exc:
        print(f"gibbslab: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(f"gibbslab: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"gibbslab: numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"gibbslab: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    try:
        cfg = parse(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"gibbslab: {exc}", file=sys.stderr)
        return 1
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
