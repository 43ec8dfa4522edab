"""Command line entry point: scenarios, sweeps, checks and benchmarks.

Every flag can also come from a flat `key = value` config file (`#` starts a
comment); explicit flags override the file. Exit codes: 0 success, 2 invalid
input or configuration, 3 run aborted by an invariant monitor.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .evolution import InvariantBreach, simulate
from .kernels import compute_pq_direct, compute_pq_fast
from .metric import RelabelingFamily, d_upper, j_upper, lower_bound_functional, stability_ratios
from .scenarios import (
    PRESETS,
    SamplingError,
    Scenario,
    make_random_state,
    make_smooth_fourier,
    run_for_weak_check,
    vanishing_density_sweep,
    weak_residuals,
)
from .state import (
    EulerianState,
    PeriodicGrid,
    e_distance,
    e_norm,
    validate_D,
    write_snapshot,
)
from .transform import eulerian_to_lagrangian, eulerian_to_lagrangian_raw, lagrangian_to_eulerian, relabel

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ABORT = 3


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _ints(text: str) -> list:
    return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]


# key -> (converter, help). Flags are the keys with '_' replaced by '-'.
CONFIG_KEYS = {
    "scenario": (str, f"preset name, one of {sorted(PRESETS)}"),
    "kind": (str, "peakon_antipeakon | smooth_fourier | rest | custom_snapshot"),
    "p": (float, "peak amplitude"),
    "q": (float, "peak half-separation, in (0, 1/2)"),
    "rho0": (float, "constant initial density"),
    "n": (int, "grid size (even, >= 8)"),
    "T": (float, "final time"),
    "dt": (float, "time step (default 0.25/n)"),
    "output_every": (float, "spacing of output times"),
    "snapshot": (str, "input snapshot for kind = custom_snapshot"),
    "snapshots": (str, "which snapshots to write: none | ends | all"),
    "method": (str, "kernel path: fast | direct"),
    "out": (str, "output directory"),
    "seed": (int, "seed for randomized experiments"),
    "levels": (int, "number of density floors (sweep-rho)"),
    "eps": (float, "largest density floor (sweep-rho)"),
    "probe_times": (_floats, "comma separated probe times (sweep-rho)"),
    "workers": (int, "worker processes (sweep-rho)"),
    "pairs": (int, "number of relabeled pairs (metric-check)"),
    "budget": (int, "optimizer budget per j_upper call (metric-check)"),
    "chain": (int, "chain length for d_upper (metric-check)"),
    "magnitudes": (_floats, "perturbation sizes for the stability table (metric-check)"),
    "grids": (_ints, "comma separated grid sizes (weak-check, roundtrip-check)"),
    "dt_factor": (float, "dt = dt_factor / n under refinement (weak-check)"),
    "every": (int, "steps between snapshots (weak-check)"),
    "max_log2": (int, "largest n = 2**max_log2 (bench-kernels)"),
    "direct_max_log2": (int, "largest n for the O(n^2) path (bench-kernels)"),
    "repeats": (int, "timing repeats (bench-kernels)"),
}

DEFAULTS = {
    "scenario": None, "kind": None, "p": None, "q": None, "rho0": None, "n": None, "T": None,
    "dt": None, "output_every": None, "snapshot": None, "snapshots": "ends", "method": "fast",
    "out": "out", "seed": 0, "levels": 6, "eps": 0.5, "probe_times": None, "workers": 1,
    "pairs": 3, "budget": 4000, "chain": 3, "magnitudes": [1e-6, 1e-5, 1e-4, 1e-3, 1e-2],
    "grids": None, "dt_factor": 0.5, "every": 4, "max_log2": 18, "direct_max_log2": 14, "repeats": 3,
}


def parse_config(path) -> dict:
    """Read a flat key = value file. Raises ConfigError with the offending line."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        conv = CONFIG_KEYS[key][0]
        try:
            out[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {value!r}") from exc
    return out


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    for key, (conv, help_) in CONFIG_KEYS.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=conv, default=None, help=help_)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twoch", description="Periodic conservative 2CH solver and checks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("simulate", "run a scenario and write the report, events and snapshots"),
        ("sweep-rho", "vanishing-density convergence table"),
        ("metric-check", "distance brackets for relabeled pairs and stability ratios"),
        ("weak-check", "weak-form residuals under refinement"),
        ("bench-kernels", "time the fast and direct kernel paths"),
        ("roundtrip-check", "M o L round-trip errors under refinement"),
    ):
        _add_common(sub.add_parser(name, help=help_))
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        opts.update(parse_config(args.config))
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            opts[key] = v
    return opts


def scenario_from(opts: dict, default_preset: str = "fig1") -> Scenario:
    preset = opts.get("scenario") or default_preset
    if preset not in PRESETS:
        raise ConfigError(f"unknown scenario {preset!r}; choose from {sorted(PRESETS)}")
    fields = dict(PRESETS[preset])
    for key in ("kind", "p", "q", "rho0", "n", "T", "dt", "output_every", "snapshot"):
        if opts.get(key) is not None:
            fields[key] = opts[key]
    if fields.get("kind") == "custom_snapshot" and not fields.get("snapshot"):
        raise ConfigError("kind = custom_snapshot needs a snapshot path")
    if opts.get("method") not in ("fast", "direct"):
        raise ConfigError(f"unknown kernel method {opts.get('method')!r}")
    return Scenario(**fields)


# ------------------------------------------------------------ output helpers

def _outdir(opts: dict) -> Path:
    d = Path(opts["out"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def _check_initial(s: EulerianState) -> None:
    rep = validate_D(s, 1e-8)
    if not rep.ok:
        raise ConfigError(f"initial state fails validation: {rep.failures()}")


# ------------------------------------------------------------ subcommands

def cmd_simulate(opts: dict) -> int:
    sc = scenario_from(opts)
    s0 = sc.initial()
    _check_initial(s0)
    out = _outdir(opts)
    manifest = {"command": "simulate", "scenario": sc.manifest(), "method": opts["method"]}
    t0 = time.perf_counter()
    try:
        run = simulate(eulerian_to_lagrangian(s0), sc.T, sc.dt, sc.output_times(), method=opts["method"])
    except InvariantBreach as exc:
        manifest["aborted"] = {"reason": str(exc), "time": exc.time}
        _write_json(out / "manifest.json", manifest)
        if exc.state is not None:
            write_snapshot(out / "abort_state.json", exc.state, exc.time or 0.0)
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    run.report.write_csv(out / "report.csv")
    run.report.write_events(out / "events.json")
    which = opts.get("snapshots", "ends")
    if which not in ("none", "ends", "all"):
        raise ConfigError(f"snapshots must be none, ends or all, got {which!r}")
    if which != "none":
        snap = out / "snapshots"
        snap.mkdir(exist_ok=True)
        picks = range(len(run.states)) if which == "all" else sorted({0, len(run.states) - 1})
        for i in picks:
            write_snapshot(snap / f"lagrangian_t{run.times[i]:.4f}.json", run.states[i], run.times[i])
        if run.state_at_min is not None:
            write_snapshot(snap / "lagrangian_min_yxi.json", run.state_at_min, run.t_c or 0.0)
    manifest.update({
        "t_c": run.t_c,
        "min_yxi_over_run": run.report.min_yxi_over_run,
        "dt": run.dt,
        "events": len(run.report.events),
        "wall_seconds": time.perf_counter() - t0,
    })
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {out}; t_c = {run.t_c:.4f}, min yxi = {run.report.min_yxi_over_run:.3e}")
    return EXIT_OK


def cmd_sweep_rho(opts: dict) -> int:
    sc = scenario_from(opts)
    if sc.kind == "rest":
        raise ConfigError("sweep-rho needs a velocity profile; rest has none")
    floors = [opts["eps"] * 2.0 ** -k for k in range(opts["levels"])]
    probes = opts.get("probe_times")
    if not probes:
        # reference collision time from a short rho = 0 run
        ref = Scenario(**{**sc.__dict__, "rho0": 0.0})
        r = simulate(eulerian_to_lagrangian(ref.initial()), ref.T, ref.dt, [0.0], keep_state_at_min=False)
        t_c = r.t_c
        probes = [max(t_c - 0.5, 0.0), t_c, t_c + 0.5]
    res = vanishing_density_sweep(sc, floors, probes, sc.dt, workers=opts["workers"])
    out = _outdir(opts)
    header = ["k", "floor"] + [f"t={t:.6g}" for t in res["probe_times"]]
    rows = [[k, f] + list(res["table"][k]) for k, f in enumerate(res["floors"])]
    _write_csv(out / "sweep.csv", header, rows)
    tab = res["table"]
    monotone = [bool(np.all(np.diff(tab[:, j]) < 0)) for j in range(tab.shape[1])]
    _write_json(out / "manifest.json", {
        "command": "sweep-rho", "scenario": sc.manifest(), "floors": floors,
        "probe_times": res["probe_times"], "reference_t_c": res["t_c"],
        "strictly_decreasing": monotone,
    })
    print(f"wrote {out / 'sweep.csv'}; strictly decreasing per probe time: {monotone}")
    return EXIT_OK


def cmd_metric_check(opts: dict) -> int:
    preset = opts.get("scenario") or "smooth"
    sc = scenario_from({**opts, "scenario": preset})
    s0 = sc.initial()
    _check_initial(s0)
    X = eulerian_to_lagrangian(s0)
    fam = RelabelingFamily()
    rng = np.random.default_rng(opts["seed"])
    out = _outdir(opts)
    rows = []
    for i in range(opts["pairs"]):
        f = fam.realize(fam.random(rng), X.grid)
        Y = relabel(X, f)
        ed = e_distance(X, Y)
        ju = j_upper(X, Y, fam, opts["budget"], seed=opts["seed"] + i)
        du = d_upper(X, Y, fam, opts["chain"], opts["budget"], seed=opts["seed"] + i)
        lb = lower_bound_functional(X, Y)
        rows.append([f"relabel-{i}", ed, ju, du, lb, lb / du if du > 0 else float("nan")])
        print(f"pair {i}: e_dist {ed:.3e}  j_upper {ju:.3e}  d_upper {du:.3e}  scale {e_norm(X):.3e}")
    _write_csv(out / "metric.csv", ["pair_id", "e_dist", "j_upper", "d_upper", "lower_bound", "ratio"], rows)

    times = np.linspace(0.0, min(sc.T, 2.0), 11)
    x = X.grid.nodes
    srows = []
    for m in opts["magnitudes"]:
        sb = EulerianState.from_fields(X.grid, s0.u + m * np.sin(2 * np.pi * x),
                                       s0.ux + m * 2 * np.pi * np.cos(2 * np.pi * x),
                                       s0.rho + m * np.cos(2 * np.pi * x))
        r = stability_ratios(X, eulerian_to_lagrangian(sb), times, sc.dt, opts["method"])
        srows += [[m, t, v] for t, v in zip(times, r)]
    _write_csv(out / "stability.csv", ["magnitude", "t", "ratio"], srows)
    _write_json(out / "manifest.json", {"command": "metric-check", "scenario": sc.manifest(),
                                        "budget": opts["budget"], "seed": opts["seed"],
                                        "ratio": "lower_bound / d_upper"})
    print(f"wrote {out / 'metric.csv'} and {out / 'stability.csv'}")
    return EXIT_OK


def cmd_weak_check(opts: dict) -> int:
    sc = scenario_from(opts, "smooth")
    grids = opts.get("grids") or [128, 256, 512]
    out = _outdir(opts)
    detail, summary = [], []
    for n in grids:
        scn = Scenario(**{**sc.__dict__, "n": n})
        s0 = scn.initial()
        _check_initial(s0)
        dt = opts["dt_factor"] / n
        times, eul, lag = run_for_weak_check(s0, scn.T, dt, opts["every"], opts["method"])
        res = weak_residuals(times, eul, lag)
        for i in range(1, 5):
            for lab, v in zip(res["labels"], res[f"weak{i}"]):
                detail.append([n, dt, f"weak{i}", lab, v])
        summary.append([n, dt] + [float(np.max(np.abs(res[f"weak{i}"]))) for i in range(1, 5)])
        print(f"n = {n}: " + "  ".join(f"weak{i} {summary[-1][i + 1]:.3e}" for i in range(1, 5)))
    _write_csv(out / "weak.csv", ["n", "dt", "identity", "test", "residual"], detail)
    _write_csv(out / "weak_summary.csv", ["n", "dt", "weak1", "weak2", "weak3", "weak4"], summary)
    _write_json(out / "manifest.json", {"command": "weak-check", "scenario": sc.manifest(), "grids": grids,
                                        "dt_factor": opts["dt_factor"], "every": opts["every"]})
    return EXIT_OK


def bench_kernels(max_log2: int = 18, direct_max_log2: int = 14, repeats: int = 3, seed: int = 0) -> list:
    """Rows (n, method, seconds, ns_per_node) for n = 2^8 .. 2^max_log2."""
    rng = np.random.default_rng(seed)
    rows = []
    for e in range(8, max_log2 + 1):
        n = 2**e
        X = eulerian_to_lagrangian_raw(make_random_state(PeriodicGrid(n), rng))
        paths = [("fast", compute_pq_fast)]
        if e <= direct_max_log2:
            paths.append(("direct", compute_pq_direct))
        for name, fn in paths:
            best = float("inf")
            for _ in range(repeats):
                t0 = time.perf_counter()
                fn(X)
                best = min(best, time.perf_counter() - t0)
            rows.append((n, name, best, best / n * 1e9))
    return rows


def cmd_bench_kernels(opts: dict) -> int:
    rows = bench_kernels(opts["max_log2"], opts["direct_max_log2"], opts["repeats"], opts["seed"])
    out = _outdir(opts)
    _write_csv(out / "bench.csv", ["n", "method", "seconds", "ns_per_node"], rows)
    by = {(n, m): s for n, m, s, _ in rows}
    for n, m, s, ns in rows:
        print(f"n = {n:7d}  {m:6s}  {s:.3e} s  {ns:9.1f} ns/node")
    if (8192, "direct") in by:
        print(f"speedup at n = 8192: {by[(8192, 'direct')] / by[(8192, 'fast')]:.1f}x")
    return EXIT_OK


def roundtrip_errors(grids, coeffs=((1, 0.3, 0.0), (2, 0.0, 0.1)), rho0=0.5, rho_coeffs=((1, 0.0, 0.2),)) -> list:
    """Rows (n, err_u_inf, err_rho_l2, err_mass, total) for M o L on smooth data."""
    rows = []
    for n in grids:
        g = PeriodicGrid(n)
        s = make_smooth_fourier(coeffs, rho0, g, rho_coeffs)
        r = lagrangian_to_eulerian(eulerian_to_lagrangian(s))
        eu = float(np.max(np.abs(r.u - s.u)))
        er = float(np.sqrt(np.mean((r.rho - s.rho) ** 2)))
        em = abs(r.mu.h - s.mu.h)
        rows.append((n, eu, er, em, eu + er + em))
    return rows


def cmd_roundtrip_check(opts: dict) -> int:
    grids = opts.get("grids") or [128, 256, 512, 1024]
    rows = roundtrip_errors(grids)
    out = _outdir(opts)
    _write_csv(out / "roundtrip.csv", ["n", "err_u_inf", "err_rho_l2", "err_mass", "total"], rows)
    for a, b in zip(rows, rows[1:]):
        print(f"n = {a[0]} -> {b[0]}: observed order {np.log2(a[4] / b[4]):.2f}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep-rho": cmd_sweep_rho,
    "metric-check": cmd_metric_check,
    "weak-check": cmd_weak_check,
    "bench-kernels": cmd_bench_kernels,
    "roundtrip-check": cmd_roundtrip_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except (ConfigError, SamplingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InvariantBreach as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
