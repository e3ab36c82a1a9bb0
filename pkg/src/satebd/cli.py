"""Command-line driver.

``satebd ground|evolve|resume|sweep|oracle|config``. Every command reads a
JSON run configuration (``--config``) or a built-in preset (``--preset``),
optionally patched with ``--set key=value`` (dotted keys, JSON values).

Exit codes: 0 success, 2 configuration error, 3 ground state did not
converge, 4 a run was stopped by its discarded-weight guard.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, evolve, mps, oracle
from .config import RunConfig, config_hash, preset
from .errors import ConfigError, ConvergenceError, SingularityError
from .model import LatticeGeometry, fano_transmission
from .observables import TimeSeries, fit_steady_current

logger = logging.getLogger("satebd")

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_TRUNCATION = 0, 2, 3, 4
WORKERS_ENV = "SATEBD_WORKERS"
GROUND_FILE = "ground.zip"


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _artifact_header(cfg: RunConfig) -> dict:
    return {"config": cfg.to_dict(), "config_sha256": config_hash(cfg), "version": __version__}


def _write_series(out: Path, label: str, series: TimeSeries, cfg: RunConfig, extra: dict) -> dict:
    text = series.to_csv()
    csv_path = out / f"{label}.csv"
    csv_path.write_text(text)
    try:
        fit = fit_steady_current(series).as_dict()
    except ValueError:
        fit = None
    summary = _artifact_header(cfg) | extra | {
        "label": label,
        "csv": csv_path.name,
        "csv_sha256": _sha256(text.encode()),
        "status": series.status,
        "fit": fit,
        "dt": cfg.dt,
        "code_path": cfg.code_path,
        "max_eps_lambda": max(series.eps_lambda, default=0.0),
    }
    _write_json(out / f"{label}.json", summary)
    return summary


def _run_label(chi: int, p_k: float) -> str:
    return f"chi{chi}_pk{p_k:.6g}"


# ---------------------------------------------------------------------------
# workflows (importable)
# ---------------------------------------------------------------------------

def ground_for(cfg: RunConfig) -> tuple[mps.VidalState, float]:
    """Imaginary-time ground state of the left box described by ``cfg``."""
    g = cfg.ground
    schedule = evolve.GroundSchedule(
        dts=tuple(g.get("dts", (0.1, 0.03, 0.01))),
        tol=g.get("tol", 1e-8),
        max_sweeps=g.get("max_sweeps", 50_000),
        chi_max=g.get("chi") or max(cfg.chi),
        conserving=cfg.conserving,
    )
    geom = cfg.lattice()
    return evolve.ground_state(cfg.model_params(), cfg.N, geom.left_sites, schedule,
                               cutoff=geom.cutoff)


def _evolution(cfg: RunConfig, chi: int, p_k: float, checkpoint: Path | None):
    policy = mps.TruncationPolicy(chi_max=chi, conserving=cfg.conserving)
    config = evolve.EvolutionConfig(
        dt=cfg.dt, n_steps=cfg.n_steps, sample_every=cfg.sample_every, policy=policy,
        abort_eps=cfg.abort_eps,
        checkpoint_path=str(checkpoint) if checkpoint and cfg.checkpoint_every else None,
        checkpoint_every=cfg.checkpoint_every,
        checkpoint_meta={"chi": chi, "p_k": p_k, "config_sha256": config_hash(cfg)},
    )
    plan = evolve.make_plan(cfg.model_params(), cfg.lattice(), cfg.dt)
    return plan, config


def evolve_one(cfg: RunConfig, ground: mps.VidalState, chi: int, p_k: float,
               out: Path, label: str | None = None) -> dict:
    """Embed, kick, evolve and write ``<label>.csv`` / ``<label>.json``."""
    label = label or _run_label(chi, p_k)
    geom = cfg.lattice()
    state = evolve.embed(ground, geom)
    evolve.apply_kick(state, evolve.KickSpec(p_k), geom)
    plan, config = _evolution(cfg, chi, p_k, out / f"{label}.ckpt.zip")
    series = evolve.run(state, plan, config)
    return _write_series(out, label, series, cfg, {"chi": chi, "p_k": p_k})


def resume_one(cfg: RunConfig, checkpoint: Path, out: Path) -> dict:
    """Finish a checkpointed run; artifacts match an uninterrupted run."""
    label = checkpoint.name.removesuffix(".zip").removesuffix(".ckpt")
    _, meta, _ = mps.load_snapshot(checkpoint)
    if meta.get("config_sha256") != config_hash(cfg):
        raise ConfigError("checkpoint was written under a different configuration")
    chi, p_k = meta["chi"], meta["p_k"]
    plan, config = _evolution(cfg, chi, p_k, checkpoint)
    _, series = evolve.resume(checkpoint, plan, config)
    return _write_series(out, label, series, cfg, {"chi": chi, "p_k": p_k})


def sweep_point_config(cfg: RunConfig, axis: str, value) -> RunConfig:
    """Configuration of one sweep point."""
    if axis == "Omega":
        return cfg.with_overrides(**{"params.Omega": float(value)})
    if axis == "U":
        return cfg.with_overrides(**{"params.U_bb": value})
    if axis == "n":
        return cfg.with_overrides(N=int(round(float(value) * cfg.geometry["left_sites"])))
    if axis == "p_k":
        return cfg.with_overrides(mode="kicked", p_k=[float(value)])
    raise ConfigError(f"unknown sweep axis {axis!r}")


def _sweep_worker(task) -> dict:
    cfg_dict, axis, value, chi, out = task
    cfg = sweep_point_config(RunConfig.from_dict(cfg_dict), axis, value)
    ground, _ = ground_for(cfg.with_overrides(chi=[chi]))
    label = f"{axis}{value}_chi{chi}".replace("/", "_")
    summary = evolve_one(cfg, ground, chi, cfg.kicks()[0], Path(out), label)
    fit = summary["fit"] or {}
    return {
        "value": value, "chi": chi, "I_SS": fit.get("I_SS", math.nan),
        "residual": fit.get("residual", math.nan), "t_knee": fit.get("t_knee"),
        "I_0": fit.get("I_0"), "flagged": fit.get("flagged", True), "status": summary["status"],
    }


def worker_count(cfg: RunConfig) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env is None:
        return cfg.workers
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be positive")
    return n


SWEEP_COLUMNS = ("value", "chi", "I_SS", "residual", "t_knee", "I_0", "flagged", "status")


def sweep(cfg: RunConfig, out: Path, workers: int | None = None) -> list[dict]:
    """Run every (value, chi) grid point; rows come back in grid order."""
    if not cfg.sweep or not cfg.sweep.get("values"):
        raise ConfigError("sweep grid is empty")
    axis = cfg.sweep["axis"]
    points = out / "points"
    points.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg.to_dict(), axis, v, chi, str(points)) for v in cfg.sweep["values"] for chi in cfg.chi]
    workers = workers or worker_count(cfg)
    if workers == 1:
        rows = [_sweep_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_worker, tasks))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for r in rows:
        writer.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])
    text = buf.getvalue()
    (out / "sweep.csv").write_text(text)
    _write_json(out / "sweep.json", _artifact_header(cfg) | {
        "axis": axis, "rows": rows, "csv": "sweep.csv", "csv_sha256": _sha256(text.encode())})
    return rows


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.12g}"
    return "" if x is None else str(x)


def oracle_fermion(cfg: RunConfig, out: Path) -> list[dict]:
    """Free-fermion ``N_R(t)`` per kick in the configuration."""
    params, geom = cfg.model_params(), cfg.lattice()
    t_grid = np.arange(cfg.n_steps // cfg.sample_every + 1) * cfg.sample_every * cfg.dt
    if cfg.n_steps % cfg.sample_every:
        t_grid = np.append(t_grid, cfg.n_steps * cfg.dt)
    if cfg.n_steps == 0:
        t_grid = t_grid[:0]
    summaries = []
    for p_k in cfg.kicks():
        series = oracle.fermion_current_series(params, geom, cfg.N, p_k, t_grid)
        summaries.append(_write_series(out, f"fermion_pk{p_k:.6g}", series, cfg, {"p_k": p_k}))
    return summaries


def oracle_transmission(cfg: RunConfig, out: Path, n_k: int = 31, width: float = 10.0) -> list[dict]:
    """Wavepacket transmission next to the closed-form profile on a ``k`` grid."""
    params = cfg.model_params()
    half = int(math.ceil(12.5 * width))
    chain = LatticeGeometry(half, half)
    rows = []
    for k in np.linspace(0.0, np.pi, n_k + 2)[1:-1]:
        res = oracle.wavepacket_transmission(float(k), width, params, geometry=chain,
                                             center=-half / 2)
        try:
            closed = float(fano_transmission(float(k), params))
        except SingularityError:
            closed = math.nan
        rows.append({"k": float(k), "T_wavepacket": res.T, "T_closed_form": closed,
                     "flagged": res.flagged})
    cols = ("k", "T_wavepacket", "T_closed_form", "flagged")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in rows:
        writer.writerow([_fmt(r[c]) for c in cols])
    text = buf.getvalue()
    (out / "transmission.csv").write_text(text)
    _write_json(out / "transmission.json", _artifact_header(cfg) | {
        "rows": rows, "width": width, "csv": "transmission.csv", "csv_sha256": _sha256(text.encode())})
    return rows


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else preset(args.preset)
    overrides = _parse_set(args.set)
    if args.out:
        overrides["output_dir"] = args.out
    return cfg.with_overrides(**overrides) if overrides else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="satebd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", help="JSON run configuration")
    src.add_argument("--preset", choices=("smoke", "production"), default="smoke")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field (dotted key, JSON value); repeatable")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("config", parents=[common], help="print the resolved configuration")
    sub.add_parser("ground", parents=[common], help="imaginary-time ground state of the left box")
    p = sub.add_parser("evolve", parents=[common], help="release the cloud and record N_R(t)")
    p.add_argument("--snapshot", help="ground-state snapshot (default: compute it)")
    p = sub.add_parser("resume", parents=[common], help="finish a checkpointed run")
    p.add_argument("checkpoint")
    p = sub.add_parser("sweep", parents=[common], help="I_SS over a parameter grid")
    p.add_argument("--workers", type=int, help=f"parallel workers (env {WORKERS_ENV})")
    p = sub.add_parser("oracle", parents=[common], help="free-fermion or transmission references")
    p.add_argument("--kind", choices=("fermion", "transmission"), default="fermion")
    p.add_argument("--n-k", type=int, default=31, help="k points for the transmission scan")
    p.add_argument("--width", type=float, default=10.0, help="wavepacket width in sites")
    return parser


def _load_ground(path, cfg: RunConfig) -> mps.VidalState:
    state, meta, _ = mps.load_snapshot(path)
    if state.n_sites != cfg.geometry["left_sites"]:
        raise ConfigError(f"snapshot has {state.n_sites} sites, config expects "
                          f"{cfg.geometry['left_sites']}")
    if meta.get("N") is not None and meta["N"] != cfg.N:
        raise ConfigError(f"snapshot holds N={meta['N']}, config has N={cfg.N}")
    return state


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "config":
            print(cfg.dumps())
            return EXIT_OK
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "ground":
            state, E = ground_for(cfg)
            mps.save_snapshot(state, out / GROUND_FILE, meta=_artifact_header(cfg) | {
                "kind": "ground", "energy": E, "N": cfg.N})
            _write_json(out / "ground.json", _artifact_header(cfg) | {
                "energy": E, "N": cfg.N, "M": cfg.geometry["left_sites"],
                "snapshot": GROUND_FILE,
                "snapshot_sha256": _sha256((out / GROUND_FILE).read_bytes())})
            print(f"E0 = {E:.12g}")
            return EXIT_OK
        if args.command == "evolve":
            ground = _load_ground(args.snapshot, cfg) if args.snapshot else ground_for(cfg)[0]
            summaries = [evolve_one(cfg, ground, chi, p_k, out)
                         for chi in cfg.chi for p_k in cfg.kicks()]
        elif args.command == "resume":
            summaries = [resume_one(cfg, Path(args.checkpoint), out)]
        elif args.command == "sweep":
            rows = sweep(cfg, out, args.workers)
            for r in rows:
                print(f"{cfg.sweep['axis']}={r['value']} chi={r['chi']} I_SS={r['I_SS']:.6g}"
                      f"{' (flagged)' if r['flagged'] else ''}")
            return EXIT_TRUNCATION if any(r["status"] != "ok" for r in rows) else EXIT_OK
        else:
            if args.kind == "fermion":
                summaries = oracle_fermion(cfg, out)
            else:
                oracle_transmission(cfg, out, args.n_k, args.width)
                return EXIT_OK
        for s in summaries:
            fit = s["fit"]
            tail = f" I_SS={fit['I_SS']:.6g}" if fit else ""
            print(f"{s['label']}: {s['status']}{tail}")
        return EXIT_TRUNCATION if any(s["status"] != "ok" for s in summaries) else EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
