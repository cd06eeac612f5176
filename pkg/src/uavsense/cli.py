"""Command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 capacity error, 4 I/O error.

Configuration precedence (highest first): named flags such as ``--cycles``,
then positional ``key=value`` overrides, then the ``--config`` file, then the
built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .analytics import (
    CapacityError,
    EquivalentUavScenario,
    n_vd,
    n_vd_slope_numerator,
    optimal_tu,
    uplink_probs_from_frames,
    valid_tx_prob,
)
from .runner import (
    DEFAULTS,
    ConfigError,
    ExperimentConfig,
    cycle_plan,
    flatten,
    parse_override,
    run_experiment,
    sign_changes,
    smooth,
    sweep_tu,
    validate,
)
from .spatial import plane_distance, to_cartesian

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("uavsense")

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_CAPACITY, EXIT_IO = 0, 1, 2, 3, 4

METRICS_COLUMNS = ("replica", "cycle", "uav", "reward", "avg_reward", "discounted_return", "model_reward")
TXMAP_COLUMNS = ("x", "y", "h", "p_s", "p_u", "p_stx")
SWEEP_COLUMNS = ("t_u", "successes", "seconds", "n_vd", "n_vd_per_uav", "n_vd_per_uav_smoothed")
LOW_POWER_TRIALS = 1000


class _IOFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# config and file helpers
# ---------------------------------------------------------------------------


def load_config_file(path) -> dict:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise _IOFailure(f"cannot read config file {p}: {exc.strerror or exc}") from exc
    try:
        tree = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{p}: not valid TOML ({exc})") from exc
    return flatten(tree)


def resolve_config(args, flag_map: dict) -> ExperimentConfig:
    flat = load_config_file(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "overrides", None) or []:
        k, v = parse_override(item)
        flat[k] = v
    for attr, key in flag_map.items():
        v = getattr(args, attr, None)
        if v is not None:
            flat[key] = v
    return ExperimentConfig.from_flat(flat)


def _json_default(o):
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default, allow_nan=True) + "\n"


def run_id(command: str, cfg: ExperimentConfig, extra=None) -> str:
    blob = json.dumps({"command": command, "config": cfg.resolved(), "extra": extra}, sort_keys=True,
                      default=_json_default)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _write_text(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise _IOFailure(f"cannot write {path}: {exc.strerror or exc}") from exc


def _write_csv(path: Path, header, rows, rid: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            fh.write(f"# uavsense run_id={rid} manifest=manifest.json\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise _IOFailure(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_csv(path) -> tuple:
    """Parse a CSV written by this tool; returns ``(run_id, header, rows)``."""
    with Path(path).open(newline="") as fh:
        first = fh.readline()
        rid = None
        if first.startswith("#"):
            for tok in first[1:].split():
                if tok.startswith("run_id="):
                    rid = tok.split("=", 1)[1]
        else:
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader)
        return rid, header, [row for row in reader]


def read_metrics_csv(path) -> dict:
    rid, header, rows = read_csv(path)
    if tuple(header) != METRICS_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {header}")
    cols = list(zip(*rows)) if rows else [()] * len(header)
    out = {"run_id": rid}
    for name, col in zip(header, cols):
        if name in ("replica", "cycle", "uav", "reward"):
            out[name] = np.array([int(v) for v in col], dtype=np.int64)
        else:
            out[name] = np.array([float(v) if v != "" else math.nan for v in col])
    return out


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _manifest(command, cfg, rid, outputs, started, t0, seed=None, timings=None, extra=None) -> dict:
    return {
        "tool": "uavsense",
        "version": __version__,
        "backend": _kernels.BACKEND,
        "command": command,
        "run_id": rid,
        "seed": seed,
        "config": cfg.resolved(),
        "outputs": sorted(outputs),
        "extra": extra,
        "started_at": started,
        "finished_at": _now(),
        "wall_clock_seconds": round(time.perf_counter() - t0, 6),
        "timings": timings or {},
    }


def _require_seed(args):
    if args.seed is None:
        raise ConfigError("--seed: required for randomized commands (results must be reproducible)")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_learn(args) -> int:
    _require_seed(args)
    cfg = resolve_config(args, {"seed": "run.seed", "cycles": "run.cycles", "replicas": "run.replicas",
                                "algorithm": "run.algorithm"})
    out = Path(args.out)
    started, t0 = _now(), time.perf_counter()
    res = run_experiment(cfg, keep_agents=args.save_qtables)
    rid = run_id("learn", cfg)
    rows = []
    for r, series in enumerate(res.replicas):
        avg, disc = series.avg_reward, series.discounted_return
        for k in range(series.cycles):
            for u in range(cfg.n_uavs):
                mr = "" if series.model_rewards is None else float(series.model_rewards[k, u])
                rows.append((r, k + 1, u, int(series.rewards[k, u]), float(avg[k, u]), float(disc[k, u]), mr))
    outputs = ["metrics.csv", "summary.json"]
    _write_csv(out / "metrics.csv", METRICS_COLUMNS, rows, rid)
    summary = res.summary()
    summary["run_id"] = rid
    summary["manifest"] = "manifest.json"
    _write_text(out / "summary.json", dumps(summary))
    if args.save_qtables:
        for r, agents in enumerate(res.agents):
            for ag in agents:
                name = f"qtables/replica{r}_uav{ag.index}.json"
                _write_text(out / name, json.dumps(ag.to_dict(), separators=(",", ":")))
                outputs.append(name)
    timings = {}
    for s in res.replicas:
        for k, v in s.timings.items():
            timings[k] = timings.get(k, 0.0) + v
    _write_text(out / "manifest.json", dumps(_manifest("learn", cfg, rid, outputs, started, t0, cfg.seed, timings)))
    fw = summary["final_window_mean"]
    print(f"{cfg.algorithm.value}: {cfg.replicas} replica(s) x {cfg.cycles} cycles; final-window mean reward "
          f"{'n/a' if fw is None else f'{fw:.4f}'}; wrote {out}")
    return EXIT_OK


def _txmap(cfg: ExperimentConfig, uav: int):
    ev = cfg.evaluator()
    task = cfg.tasks[uav]
    bs = cfg.lattice.bs
    pts = [p for p in cfg.lattice.points()
           if plane_distance(to_cartesian(p, cfg.lattice), task, bs) <= 0.5 * cfg.lattice.delta]
    hover = list(cfg.initial_positions)
    n, t_u = cfg.n_uavs, cfg.schedule.t_u
    p_s = np.empty((len(pts), n))
    tx = np.empty((len(pts), t_u, n))
    for j in range(n):
        if j != uav:
            p_s[:, j], tx[:, :, j] = ev.segment(j, hover[j], hover[j])
    for m, p in enumerate(pts):
        p_s[m, uav], tx[m, :, uav] = ev.segment(uav, p, p)
    p_u = uplink_probs_from_frames(tx, cfg.subchannels)
    return pts, p_s[:, uav], p_u[:, uav]


def cmd_analyze(args) -> int:
    cfg = resolve_config(args, {})
    out = Path(args.out) if args.out else None
    started, t0 = _now(), time.perf_counter()
    rid = run_id(f"analyze {args.what}", cfg, {"uav": args.uav, "p_u": args.p_u, "p_s": args.p_s})
    outputs = []
    if args.what == "txmap":
        if not 0 <= args.uav < cfg.n_uavs:
            raise ConfigError(f"--uav: must lie in [0, {cfg.n_uavs - 1}] (got {args.uav})")
        pts, p_s, p_u = _txmap(cfg, args.uav)
        p = p_s * p_u
        xyz = [to_cartesian(q, cfg.lattice) for q in pts]
        best = int(np.argmax(p))
        bx, by, bh = xyz[best]
        task = cfg.tasks[args.uav]
        along = (bx * task[0] + by * task[1]) / math.hypot(task[0], task[1])
        result = {
            "uav": args.uav,
            "points": len(pts),
            "argmax": {"x": bx, "y": by, "h": bh, "p_stx": float(p[best])},
            "between_bs_and_task": bool(0.0 < along < math.hypot(task[0], task[1])),
            "above_h_min": bool(bh > cfg.lattice.h_min),
        }
        if out:
            rows = [(q[0], q[1], q[2], float(a), float(b), float(c)) for q, a, b, c in zip(xyz, p_s, p_u, p)]
            _write_csv(out / "txmap.csv", TXMAP_COLUMNS, rows, rid)
            outputs.append("txmap.csv")
    elif args.what == "uplink":
        plan = cycle_plan(cfg, cfg.initial_positions, cfg.initial_positions)
        if plan.n > 20:
            raise CapacityError(f"uavs.count={plan.n} exceeds the uplink DP guard of 20")
        p_s = plan.sensing_probs()
        p_u = uplink_probs_from_frames(plan.tx_probs(), plan.c)
        result = {
            "positions": [list(to_cartesian(q, cfg.lattice)) for q in cfg.initial_positions],
            "p_s": p_s.tolist(),
            "p_u": p_u.tolist(),
            "p_stx": valid_tx_prob(plan).tolist(),
        }
    else:
        try:
            scn = EquivalentUavScenario(n=cfg.n_uavs, c=cfg.subchannels, p_s=args.p_s, p_u=args.p_u,
                                        t_b=cfg.schedule.t_b, t_s=cfg.schedule.t_s, t_f=cfg.schedule.t_f)
        except ValueError as exc:
            raise ConfigError(f"--p-u/--p-s: {exc}") from exc
        opt = optimal_tu(scn)
        grid = np.arange(1, 201)
        exhaustive = int(grid[np.argmax(n_vd(scn, grid))])
        result = {
            "n": scn.n, "c": scn.c, "p_u": scn.p_u, "p_s": scn.p_s,
            "closed_form": opt.closed_form,
            "numeric_root": opt.numeric_root,
            "agreement": opt.agreement,
            "agree_within_1e-6": bool(opt.agreement <= 1e-6),
            "residual": opt.residual,
            "integer": opt.integer,
            "n_vd_at_integer": n_vd(scn, opt.integer),
            "exhaustive_argmax_1_200": exhaustive,
            "slope_at_closed_form": n_vd_slope_numerator(scn, opt.closed_form),
        }
    result["run_id"] = rid
    text = dumps(result)
    print(text, end="")
    if out:
        _write_text(out / "summary.json", text)
        outputs.append("summary.json")
        _write_text(out / "manifest.json", dumps(_manifest(f"analyze {args.what}", cfg, rid, outputs, started, t0)))
    return EXIT_OK


def cmd_validate(args) -> int:
    _require_seed(args)
    cfg = resolve_config(args, {"seed": "run.seed", "trials": "validate.trials"})
    trials = cfg.flat["validate.trials"]
    if trials < LOW_POWER_TRIALS:
        log.warning("only %d trials: the Monte Carlo checks have little statistical power", trials)
    started, t0 = _now(), time.perf_counter()
    checks = validate(cfg, trials, tamper=args.tamper_analytic or 0.0)
    failed = [c for c in checks if not c.passed]
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} z={c.z:+.3f} {c.detail}")
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    if args.out:
        out = Path(args.out)
        rid = run_id("validate", cfg, {"tamper": args.tamper_analytic})
        payload = {
            "run_id": rid,
            "trials": trials,
            "checks": [{"name": c.name, "z": c.z if math.isfinite(c.z) else str(c.z), "passed": c.passed,
                        "detail": c.detail} for c in checks],
            "failed": [c.name for c in failed],
        }
        _write_text(out / "summary.json", dumps(payload))
        _write_text(out / "manifest.json", dumps(_manifest("validate", cfg, rid, ["summary.json"], started, t0,
                                                            cfg.seed)))
    if failed:
        print("validation failed: " + ", ".join(c.name for c in failed), file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_sweep(args) -> int:
    _require_seed(args)
    cfg = resolve_config(args, {"seed": "run.seed", "cycles": "sweep.cycles", "replicas": "run.replicas",
                                "algorithm": "run.algorithm", "policy": "sweep.policy"})
    started, t0 = _now(), time.perf_counter()
    rows = sweep_tu(cfg)
    per = [r.n_vd_per_uav for r in rows]
    sm = smooth(per, cfg.flat["sweep.smoothing"])
    rid = run_id("sweep-tu", cfg)
    best = int(np.argmax(sm)) if len(rows) else None
    summary = {
        "run_id": rid,
        "manifest": "manifest.json",
        "policy": cfg.flat["sweep.policy"],
        "n_uavs": cfg.n_uavs,
        "t_u": [r.t_u for r in rows],
        "n_vd_per_uav": per,
        "smoothed": sm.tolist(),
        "sign_changes": sign_changes(sm),
        "argmax_t_u": None if best is None else rows[best].t_u,
    }
    text = dumps(summary)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        _write_csv(out / "sweep.csv", SWEEP_COLUMNS,
                   [(r.t_u, r.successes, r.seconds, r.n_vd, r.n_vd_per_uav, float(s)) for r, s in zip(rows, sm)], rid)
        _write_text(out / "summary.json", text)
        _write_text(out / "manifest.json", dumps(_manifest("sweep-tu", cfg, rid, ["summary.json", "sweep.csv"],
                                                            started, t0, cfg.seed)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _common(p, seed=True):
    p.add_argument("--config", help="TOML file with dotted keys (e.g. channel.tx_power_dbm = 10)")
    p.add_argument("--out", help="output directory")
    if seed:
        p.add_argument("--seed", type=int, help="master seed (required)")
    p.add_argument("overrides", nargs="*", metavar="KEY=VALUE", help="dotted-key config overrides")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uavsense", description=__doc__.splitlines()[0],
                                 epilog="Configuration keys: " + ", ".join(sorted(DEFAULTS)))
    ap.add_argument("--version", action="version", version=f"uavsense {__version__} ({_kernels.BACKEND})")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", help="train trajectory learners and record per-cycle rewards")
    _common(p)
    p.add_argument("--cycles", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--algorithm", choices=["single-agent", "opponent-modeling", "enhanced"])
    p.add_argument("--save-qtables", action="store_true", help="also dump every agent's Q table")
    p.set_defaults(func=cmd_learn, out="uavsense-out")

    p = sub.add_parser("analyze", help="analytic queries (no randomness)")
    p.add_argument("what", choices=["txmap", "uplink", "optimal-tu"])
    _common(p, seed=False)
    p.add_argument("--uav", type=int, default=0, help="UAV whose BS-task plane is mapped (txmap)")
    p.add_argument("--p-u", type=float, default=0.5, help="per-frame uplink probability (optimal-tu)")
    p.add_argument("--p-s", type=float, default=1.0, help="per-cycle sensing probability (optimal-tu)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validate", help="Monte Carlo checks of the analytic uplink probability")
    _common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--tamper-analytic", type=float, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep-tu", help="valid transmissions per second versus transmission-phase length")
    _common(p)
    p.add_argument("--cycles", type=int, help="cycles per T_u value (fixed policy)")
    p.add_argument("--replicas", type=int)
    p.add_argument("--algorithm", choices=["single-agent", "opponent-modeling", "enhanced"])
    p.add_argument("--policy", choices=["fixed", "learning"])
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="uavsense: %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"uavsense: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"uavsense: capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except _IOFailure as exc:
        print(f"uavsense: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"uavsense: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
