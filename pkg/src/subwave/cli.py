"""``subwave`` command line: config parsing, runs, reports and plots.

Every command writes into ``--output`` (default ``subwave-out``): data as
CSV, a summary ``report.json`` and, with ``--plot``, an SVG figure.
Exit status: 0 on success, 1 on a numerical failure or a missed band, 2 on
a configuration error.  Errors are also printed to stderr as JSON.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__
from .eikonal import NewtonError, eikonal_residuals, phase_samples, sample_regime
from .flow import DEFAULT_TOL, DegenerateCovectorError, FlowError, exp_A, exp_H, hamilton_flow
from .models import InvariantViolation, ModelError, resolve_model
from .mult import (CutoffSpec, ResolutionError, mh_lowerbound_experiment, mp_lowerbound_experiment,
                   schrodinger_multiplier, wave_multiplier)
from .oscint import CriticalPointError, get_problem, leading_term_errors
from .varjac import conjugate_scan, rank_reduction_check

COMMANDS = ("flow", "exp", "conjugate", "rank", "eikonal", "phase", "statphase", "multiplier",
            "experiment")


class ConfigError(ValueError):
    """Invalid command line or configuration file."""


class PlotError(ValueError):
    """Nothing to plot or the figure cannot be written."""


NUMERICAL_ERRORS = (NewtonError, FlowError, InvariantViolation, ResolutionError, CriticalPointError,
                    DegenerateCovectorError, ArithmeticError, np.linalg.LinAlgError)


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------

def parse_vector(value) -> list[float]:
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    try:
        return [float(v) for v in str(value).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse vector {value!r}") from None


def parse_lambdas(value) -> list[float]:
    """``16..1024`` (octaves), ``8..64/2`` (two points per octave) or a comma list."""
    if isinstance(value, (list, tuple)):
        lams = [float(v) for v in value]
    else:
        text = str(value).strip()
        if ".." in text:
            lo, rest = text.split("..", 1)
            per = 1
            if "/" in rest:
                rest, per_s = rest.split("/", 1)
                per = int(per_s)
            try:
                lo_v, hi_v = float(lo), float(rest)
            except ValueError:
                raise ConfigError(f"cannot parse lambda range {text!r}") from None
            if lo_v <= 0 or hi_v <= lo_v or per < 1:
                raise ConfigError(f"bad lambda range {text!r}")
            k = int(round(per * math.log2(hi_v / lo_v)))
            lams = [lo_v * 2.0 ** (j / per) for j in range(k + 1)]
        else:
            lams = parse_vector(text)
    if not lams or any(v <= 0 for v in lams) or any(b <= a for a, b in zip(lams, lams[1:])):
        raise ConfigError("lambda list must be positive and increasing")
    return lams


def _toml_load(path: Path) -> dict:
    import tomli

    try:
        return tomli.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="subwave", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"subwave {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        # defaults are None so that config-file values survive unless a flag is given
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--output", help="output directory")
        p.add_argument("--model", help="built-in model name or TOML model file")
        p.add_argument("--tol", type=float, help="integrator tolerance")
        p.add_argument("--seed", type=int, help="seed for random sampling")
        p.add_argument("--plot", action="store_const", const=True, help="write an SVG figure")
        return p

    p = common(sub.add_parser("flow", help="integrate the Hamiltonian flow"))
    p.add_argument("--x")
    p.add_argument("--xi")
    p.add_argument("--t", type=float)
    p.add_argument("--samples", type=int)

    p = common(sub.add_parser("exp", help="exponential maps Exp_H and Exp_A"))
    p.add_argument("--x")
    p.add_argument("--xi")
    p.add_argument("--t", type=float)

    p = common(sub.add_parser("conjugate", help="scan det D Exp_H along a ray"))
    p.add_argument("--x")
    p.add_argument("--xi")
    p.add_argument("--s-min", type=float, dest="s_min")
    p.add_argument("--s-max", type=float, dest="s_max")
    p.add_argument("--samples", type=int)

    p = common(sub.add_parser("rank", help="rank of D Exp_A against the restricted D Exp_H"))
    p.add_argument("--y")
    p.add_argument("--xi")
    p.add_argument("--t", type=float)

    p = common(sub.add_parser("eikonal", help="eikonal residual statistics on random samples"))
    p.add_argument("--samples", type=int)
    p.add_argument("--t-max", type=float, dest="t_max")

    p = common(sub.add_parser("phase", help="phase samples over a (t, angle) grid"))
    p.add_argument("--x")
    p.add_argument("--t-range", dest="t_range", help="t0,t1,count")
    p.add_argument("--angles", type=int)
    p.add_argument("--xi-rest", dest="xi_rest", help="covector components past the first two")

    p = common(sub.add_parser("statphase", help="quadrature against the stationary-phase term"))
    p.add_argument("--problem")
    p.add_argument("--lambdas")

    p = common(sub.add_parser("multiplier", help="sample a multiplier on a grid"))
    p.add_argument("--family", choices=("schrodinger", "wave"))
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--t", type=float)
    p.add_argument("--chi", help="bump:a,b or window:c,w")

    p = common(sub.add_parser("experiment", help="lower-bound experiments"))
    p.add_argument("kind", choices=("mh", "mp"))
    p.add_argument("--p", type=float)
    p.add_argument("--lambdas")
    p.add_argument("--t0", type=float)
    p.add_argument("--chi", help="bump:a,b or window:c,w")
    p.add_argument("--grid", help="Grushin grid nx,ny")
    return ap


DEFAULTS: dict[str, dict[str, Any]] = {
    "_all": {"output": "subwave-out", "tol": DEFAULT_TOL, "seed": 0, "plot": False},
    "flow": {"model": "heisenberg", "x": "0,0,0", "xi": "1,0,0.3", "t": 1.0, "samples": 65},
    "exp": {"model": "heisenberg", "x": "0,0,0", "xi": "1,0,0.3", "t": 1.0},
    "conjugate": {"model": "heisenberg", "x": "0,0,0", "xi": "1,0,0.5", "s_min": 0.05,
                  "s_max": 8.0, "samples": 400},
    "rank": {"model": "heisenberg", "y": "0,0,0", "xi": "1,0,0.3", "t": 0.4},
    "eikonal": {"model": "grushin", "samples": 30, "t_max": 0.8},
    "phase": {"model": "grushin", "x": "1,0", "t_range": "-0.8,0.8,9", "angles": 12,
              "xi_rest": ""},
    "statphase": {"problem": "cubic1d", "lambdas": "32..1024"},
    "multiplier": {"family": "schrodinger", "lam": 64.0, "t": 0.25, "chi": None},
    "experiment": {"model": "euclidean(1)", "p": 1.0, "lambdas": "16..1024", "t0": 0.25,
                   "chi": None, "grid": "33,33"},
}


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults < config file (top level, then the command's table) < flags."""
    cmd = args.command
    cfg = dict(DEFAULTS["_all"])
    cfg.update(DEFAULTS[cmd])
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        data = _toml_load(path)
        flat = {k.replace("-", "_"): v for k, v in data.items() if not isinstance(v, dict)}
        cfg.update(flat)
        table = data.get(cmd)
        if isinstance(table, dict):
            cfg.update({k.replace("-", "_"): v for k, v in table.items()})
        if cmd == "experiment" and isinstance(data.get(args.kind), dict):
            cfg.update({k.replace("-", "_"): v for k, v in data[args.kind].items()})
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        cfg[key] = value
    if cmd == "experiment":
        cfg["kind"] = args.kind
    if "target" in cfg and cmd == "experiment":
        cfg["model"] = cfg.pop("target")
    tol = cfg.get("tol")
    if not isinstance(tol, (int, float)) or tol <= 0:
        raise ConfigError("tol must be positive")
    return cfg


def parse_chi(spec, default: CutoffSpec) -> CutoffSpec:
    if spec is None:
        return default
    try:
        if isinstance(spec, dict):
            return CutoffSpec.from_dict(spec)
        kind, _, params = str(spec).partition(":")
        vals = parse_vector(params)
        if kind in ("bump", "smooth-bump"):
            return CutoffSpec.bump(*vals)
        if kind in ("window", "gaussian-window"):
            return CutoffSpec.window(*vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad cutoff {spec!r}: {exc}") from None
    raise ConfigError(f"unknown cutoff {spec!r}; use bump:a,b or window:c,w")


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_csv(path: Path, rows: Sequence[dict]) -> None:
    if not rows:
        raise ValueError("no rows to write")
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for k, v in r.items()})


def write_report(outdir: Path, command: str, config: dict, results: dict, passed: Optional[bool],
                 wall_clock: float) -> Path:
    report = {
        "command": command,
        "version": __version__,
        "config": config,
        "results": results,
        "passed": passed,
        "wall_clock_s": wall_clock,
    }
    path = outdir / "report.json"
    path.write_text(json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n")
    return path


def emit_plot(series: Sequence[dict], path, xlabel: str = "x", ylabel: str = "y",
              log: bool = False, title: Optional[str] = None) -> Path:
    """Write a line plot to an SVG file.

    Each series is a mapping with ``x``, ``y`` and optionally ``label`` and
    ``marks`` (x positions drawn as vertical dashed lines).
    """
    if not series:
        raise PlotError("no series to plot")
    for s in series:
        if len(s.get("x", ())) < 2 or len(s["x"]) != len(s.get("y", ())):
            raise PlotError(f"series {s.get('label', '?')!r} needs at least two (x, y) points")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "subwave"
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for s in series:
        x = np.asarray(s["x"], dtype=float)
        y = np.asarray(s["y"], dtype=float)
        ax.plot(x, y, "o-" if len(x) <= 20 else "-", ms=4, lw=1.2, label=s.get("label"))
        for mk in s.get("marks", ()):
            ax.axvline(mk, color="0.4", ls="--", lw=0.8)
    if log:
        ax.set_xscale("log")
        ax.set_yscale("log")
    else:
        ax.axhline(0.0, color="0.7", lw=0.6)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if any(s.get("label") for s in series):
        ax.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise PlotError(f"cannot write {path}: {exc}") from None
    finally:
        plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _model(cfg):
    return resolve_model(str(cfg["model"]))


def _vec(cfg, key, n):
    v = parse_vector(cfg[key])
    if v is None or len(v) != n:
        raise ConfigError(f"--{key} needs {n} comma-separated numbers")
    return np.array(v)


def cmd_flow(cfg, out: Path):
    model = _model(cfg)
    x, xi = _vec(cfg, "x", model.n), _vec(cfg, "xi", model.n)
    traj = hamilton_flow(model, (x, xi), float(cfg["t"]), cfg["tol"], int(cfg["samples"]))
    n = model.n
    rows = []
    for t, z, e in zip(traj.times, traj.array(), traj.energy):
        row = {"t": t}
        row.update({f"x{k + 1}": z[k] for k in range(n)})
        row.update({f"xi{k + 1}": z[n + k] for k in range(n)})
        row["H"] = e
        rows.append(row)
    write_csv(out / "flow.csv", rows)
    if cfg["plot"]:
        emit_plot([{"x": traj.times, "y": traj.array()[:, k], "label": f"x{k + 1}"} for k in range(n)],
                  out / "flow.svg", "t", "base coordinates")
    drift = traj.energy_drift
    ok = traj.check_energy()
    return {"energy_drift": drift, "relative_drift": drift / max(abs(traj.energy[0]), 1e-300),
            "endpoint": traj.array()[-1], "energy_ok": ok}, ok


def cmd_exp(cfg, out: Path):
    model = _model(cfg)
    x, xi = _vec(cfg, "x", model.n), _vec(cfg, "xi", model.n)
    t = float(cfg["t"])
    res = {"exp_H_at_t_xi": exp_H(model, x, t * xi, cfg["tol"]),
           "exp_A": exp_A(model, x, xi, t, cfg["tol"])}
    write_csv(out / "exp.csv", [{"map": k, **{f"x{i + 1}": v for i, v in enumerate(val)}}
                                 for k, val in res.items()])
    return res, True


def cmd_conjugate(cfg, out: Path):
    model = _model(cfg)
    x, xi = _vec(cfg, "x", model.n), _vec(cfg, "xi", model.n)
    scan = conjugate_scan(model, x, xi, float(cfg["s_min"]), float(cfg["s_max"]),
                          int(cfg["samples"]), cfg["tol"])
    write_csv(out / "conjugate.csv", [{"s": s, "det": d, "sigma_min": m}
                                      for s, d, m in zip(scan.s, scan.det, scan.sigma_min)])
    if cfg["plot"]:
        emit_plot([{"x": scan.s, "y": scan.det, "label": "det D Exp_H", "marks": scan.roots}],
                  out / "conjugate.svg", "s", "determinant")
    return scan.as_dict(), True


def cmd_rank(cfg, out: Path):
    model = _model(cfg)
    y, xi = _vec(cfg, "y", model.n), _vec(cfg, "xi", model.n)
    rc = rank_reduction_check(model, y, xi, float(cfg["t"]), cfg["tol"], check=False)
    d = rc.as_dict()
    d["rank_full"].pop("shape")
    d["rank_restricted"].pop("shape")
    return d, rc.agree


def cmd_eikonal(cfg, out: Path):
    model = _model(cfg)
    rng = np.random.default_rng(int(cfg["seed"]))
    ts, xs, xis = sample_regime(model, rng, int(cfg["samples"]), float(cfg["t_max"]))
    res = eikonal_residuals(model, ts, xs, xis, cfg["tol"])
    rows = []
    for t, x, xi, r in zip(ts, xs, xis, res):
        row = {"t": t}
        row.update({f"x{k + 1}": v for k, v in enumerate(x)})
        row.update({f"xi{k + 1}": v for k, v in enumerate(xi)})
        row["residual"] = r
        rows.append(row)
    write_csv(out / "eikonal.csv", rows)
    stats = {"max": float(res.max()), "mean": float(res.mean()),
             "p95": float(np.percentile(res, 95)), "count": int(res.size)}
    return stats, bool(stats["max"] <= 1e-5)


def cmd_phase(cfg, out: Path):
    model = _model(cfg)
    x = _vec(cfg, "x", model.n)
    tr = parse_vector(cfg["t_range"])
    if len(tr) != 3 or tr[2] < 1:
        raise ConfigError("--t-range needs t0,t1,count")
    rest = parse_vector(cfg.get("xi_rest") or "")
    if model.n < 2:
        raise ConfigError("the phase grid needs dimension at least 2")
    if len(rest) != model.n - 2:
        raise ConfigError(f"--xi-rest needs {model.n - 2} numbers")
    ts = np.linspace(tr[0], tr[1], int(tr[2]))
    angles = np.linspace(0.0, 2 * np.pi, int(cfg["angles"]), endpoint=False)
    grid = [(t, np.concatenate([[np.cos(a), np.sin(a)], rest])) for t in ts for a in angles]
    samples, skipped = [], []
    for t, xi in grid:
        # points whose stencil leaves the regime are reported, not fatal
        try:
            samples.append(phase_samples(model, [t], x[None], xi[None], tol=cfg["tol"])[0])
        except (NewtonError, DegenerateCovectorError, FlowError):
            skipped.append((t, xi))
    if not samples:
        raise NewtonError("no grid point lies inside the existence regime")
    rows = [dict(s.as_row(), converged=True) for s in samples]
    template = rows[0]
    for t, xi in skipped:
        row = {k: float("nan") for k in template}
        row.update({"t": t, "converged": False})
        row.update({f"x_{k + 1}": v for k, v in enumerate(x)})
        row.update({f"xi_{k + 1}": v for k, v in enumerate(xi)})
        rows.append(row)
    rows.sort(key=lambda r: (r["t"], math.atan2(r["xi_2"], r["xi_1"]) % (2 * math.pi)))
    write_csv(out / "phase.csv", rows)
    euler = max(abs(float(s.xi @ s.dxi_w) - s.w) / max(abs(s.w), 1e-12) for s in samples)
    return {"count": len(samples), "outside_regime": len(skipped), "max_euler_defect": euler}, True


def cmd_statphase(cfg, out: Path):
    try:
        problem = get_problem(str(cfg["problem"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    lams = parse_lambdas(cfg["lambdas"])
    rows, slope, r2 = leading_term_errors(problem, lams)
    write_csv(out / "statphase.csv", [{"lambda": r[0], "abs_quadrature": r[1], "abs_leading": r[2],
                                        "error": r[3]} for r in rows])
    expected = -(problem.d / 2 + 1)
    ok = abs(slope - expected) <= 0.2
    if cfg["plot"]:
        emit_plot([{"x": [r[0] for r in rows], "y": [r[3] for r in rows], "label": problem.name}],
                  out / "statphase.svg", "lambda", "|quadrature - leading term|", log=True)
    return {"problem": problem.name, "d": problem.d, "slope": slope, "r2": r2,
            "expected_slope": expected, "band": [expected - 0.2, expected + 0.2]}, ok


def cmd_multiplier(cfg, out: Path):
    fam = cfg["family"]
    lam = float(cfg["lam"])
    if fam == "schrodinger":
        chi = parse_chi(cfg.get("chi"), CutoffSpec.bump(0.5, 1.5))
        m = schrodinger_multiplier(chi, lam)
    elif fam == "wave":
        chi = parse_chi(cfg.get("chi"), CutoffSpec.window(1.0, 0.2))
        m = wave_multiplier(chi, lam, float(cfg["t"]))
    else:
        raise ConfigError(f"unknown family {fam!r}")
    m.check()
    write_csv(out / "multiplier.csv", [{"s": s, "re": v.real, "im": v.imag, "abs": abs(v)}
                                        for s, v in zip(m.s_grid, m.values)])
    if cfg["plot"]:
        emit_plot([{"x": m.s_grid, "y": np.abs(m.values), "label": f"|m|, {fam}"}],
                  out / "multiplier.svg", "s", "|m(s)|")
    return {"family": fam, "lambda": lam, "chi": chi.as_dict(), "points": int(m.s_grid.size),
            "S": m.S, "max_abs": m.max_abs, "even_defect": m.even_defect(),
            "edge_ratio": m.edge_ratio()}, True


def cmd_experiment(cfg, out: Path):
    kind = cfg["kind"]
    p = float(cfg["p"])
    if p not in (1.0, 2.0):
        raise ConfigError("p must be 1 or 2")
    target = str(cfg["model"]).strip().lower().replace(" ", "")
    if target in ("euclidean1", "euclidean2"):
        target = f"euclidean({target[-1]})"
    if target not in ("euclidean(1)", "euclidean(2)", "grushin"):
        raise ConfigError(f"experiments support euclidean(1), euclidean(2) and grushin, not {target!r}")
    lams = parse_lambdas(cfg["lambdas"])
    if len(lams) < 5 and p != 2:
        raise ConfigError("need at least five lambda values")
    grid = [int(v) for v in parse_vector(cfg["grid"])]
    if len(grid) != 2:
        raise ConfigError("--grid needs nx,ny")
    ggrid = (grid[0], grid[1], 4.0, np.pi)
    if kind == "mh":
        chi = parse_chi(cfg.get("chi"), CutoffSpec.bump(0.5, 1.5))
        res = mh_lowerbound_experiment(target, p, lams, chi, ggrid)
    else:
        chi = parse_chi(cfg.get("chi"), CutoffSpec.window(1.0, 0.2))
        res = mp_lowerbound_experiment(target, p, lams, float(cfg["t0"]), chi, ggrid)
    write_csv(out / "table.csv", res.table)
    if cfg["plot"]:
        emit_plot([{"x": res.lams, "y": res.values, "label": f"{kind} {target}, p={p:g}"}],
                  out / f"experiment_{kind}.svg", "lambda", "norm ratio", log=True,
                  title=f"slope {res.slope:.3f}")
    d = res.as_dict()
    d["chi"] = chi.as_dict()
    return d, (res.passed is not False)


HANDLERS = {
    "flow": cmd_flow, "exp": cmd_exp, "conjugate": cmd_conjugate, "rank": cmd_rank,
    "eikonal": cmd_eikonal, "phase": cmd_phase, "statphase": cmd_statphase,
    "multiplier": cmd_multiplier, "experiment": cmd_experiment,
}


def _error(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": {"type": kind, "message": message, "exit_code": code}},
                                sort_keys=True) + "\n")
    return code


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 2
        if code != 0:
            return _error("usage", "invalid command line (see usage above)", 2)
        return 0
    t_start = time.perf_counter()
    try:
        cfg = resolve_config(args)
        out = Path(cfg["output"])
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc}") from None
        results, passed = HANDLERS[args.command](cfg, out)
    except (ConfigError, ModelError, PlotError) as exc:
        return _error(type(exc).__name__, str(exc), 2)
    except NUMERICAL_ERRORS as exc:
        return _error(type(exc).__name__, str(exc), 1)
    except ValueError as exc:
        return _error(type(exc).__name__, str(exc), 2)
    echo = {k: v for k, v in sorted(cfg.items())}
    write_report(out, args.command, echo, results, passed, time.perf_counter() - t_start)
    if not passed:
        return _error("BandViolation", f"{args.command} did not meet its declared check; "
                      f"see {out / 'report.json'}", 1)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
