"""Run orchestration: simulate, accumulate, analyze and persist.

A run consists of ``ensemble_size`` independent paths, path ``i`` driven by
noise stream ``i``.  Each path starts from rest, discards the first
``burn_in_fraction`` of its steps and then feeds every ``sample_stride``-th
state into its own :class:`MomentAccumulator`.  The accumulators are merged
in stream order, so the result does not depend on the number of threads.

Output files (all written atomically via temp file + rename):

``estimates.csv``   per-shell moments (see :func:`statistics.estimates_to_csv`)
``estimates.npz``   the same estimates with batch means, for ``analyze``
``analysis.json``   the analysis report (``schema_version`` 1)
``states.npz``      sampled states of every path (when ``states`` is in ``output.formats``)
``checkpoint.json`` everything needed to continue the run bitwise
``manifest.json``   config echo, seed, version, timing and status
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import tempfile
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import reduce
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import DegenerateAnalysisError, analysis_report, dumps_report
from .config import RunConfig, config_from_dict
from .integrator import BlowUpError, n_steps_for, simulate
from .statistics import EmptyAccumulatorError, MomentAccumulator, StationaryEstimates, estimates_to_csv

EXIT_OK, EXIT_USAGE, EXIT_BLOWUP, EXIT_DEGENERATE = 0, 1, 2, 3
N_BATCHES = 32
CHECKPOINT_FORMAT = "shellcascade-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


# --------------------------------------------------------------------------
# atomic file output


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def _npz_bytes(**arrays) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


# --------------------------------------------------------------------------
# path state


@dataclass
class PathState:
    stream_id: int
    state: np.ndarray
    step: int
    accumulator: MomentAccumulator
    sampled_steps: list = field(default_factory=list)
    sampled_states: list = field(default_factory=list)


def burn_in_steps(cfg: RunConfig) -> int:
    return int(math.floor(cfg.sim.burn_in_fraction * n_steps_for(cfg.sim.t_final, cfg.sim.dt)))


def batch_size_for(cfg: RunConfig, burn: int) -> int:
    total = n_steps_for(cfg.sim.t_final, cfg.sim.dt)
    expected = max(0, total - burn) // cfg.sim.sample_stride
    return max(1, expected // N_BATCHES)


def cfl_ratio(cfg: RunConfig, states) -> float:
    """``10 dt max_n k_n |u_n|`` over the given states; values above 1 suggest ``dt`` is too coarse."""
    k = cfg.grid().k_shells
    return float(max(10.0 * cfg.sim.dt * np.max(k * np.abs(u)) for u in states))


def new_paths(cfg: RunConfig, burn: int) -> list:
    grid = cfg.grid()
    bs = batch_size_for(cfg, burn)
    zero = cfg.model_spec().zero_state()
    return [PathState(i, zero.copy(), 0, MomentAccumulator(grid, cfg.analysis.p_list, bs))
            for i in range(cfg.sim.ensemble_size)]


def advance_path(cfg: RunConfig, path: PathState, target_step: int, burn: int, keep_states: bool) -> PathState:
    """Advance one path to ``target_step``; sampling starts after step ``burn``."""
    model = cfg.model_spec(path.stream_id)
    scheme = cfg.scheme()
    dt = cfg.sim.dt
    stride = cfg.sim.sample_stride
    store = stride if keep_states else None
    acc = path.accumulator
    acc.stride = stride

    def segment(end, observers):
        n = end - path.step
        if n <= 0:
            return
        tr = simulate(model, path.state, scheme, n * dt, observers=observers, store_stride=store,
                      start_step=path.step)
        if keep_states:
            path.sampled_steps.extend(tr.steps[1:].tolist())
            path.sampled_states.extend(tr.states[1:])
        path.state = tr.final_state
        path.step = tr.final_step

    if path.step == 0 and keep_states and not path.sampled_steps:
        path.sampled_steps.append(0)
        path.sampled_states.append(path.state.copy())
    segment(min(burn, target_step), ())
    segment(target_step, (acc,))
    return path


# --------------------------------------------------------------------------
# checkpoints


def _hex_state(u: np.ndarray) -> list:
    if np.iscomplexobj(u):
        return [[float(z.real).hex(), float(z.imag).hex()] for z in u]
    return [float(x).hex() for x in u]


def _unhex_state(data: list) -> np.ndarray:
    if data and isinstance(data[0], list):
        return np.array([complex(float.fromhex(a), float.fromhex(b)) for a, b in data])
    return np.array([float.fromhex(x) for x in data])


def _checksum(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def checkpoint_payload(cfg: RunConfig, paths: list, burn: int) -> dict:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.physics_hash(),
        "step": int(paths[0].step),
        "burn_in_steps": int(burn),
        "paths": [{"stream_id": p.stream_id, "state": _hex_state(p.state), "accumulator": p.accumulator.to_dict()}
                  for p in paths],
    }
    payload["checksum"] = _checksum(payload)
    return payload


def load_checkpoint(path):
    """Return ``(config, paths, burn_in_steps)``; raises :class:`CheckpointError` on any corruption."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}")
    if not isinstance(data, dict) or data.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a shellcascade checkpoint")
    stored = data.pop("checksum", None)
    if stored != _checksum(data):
        raise CheckpointError("checkpoint checksum mismatch (file corrupted or edited)")
    cfg = config_from_dict(data["config"])
    if cfg.physics_hash() != data["config_hash"]:
        raise CheckpointError("checkpoint config hash does not match its embedded config")
    grid = cfg.grid()
    paths = [PathState(p["stream_id"], _unhex_state(p["state"]), int(data["step"]),
                       MomentAccumulator.from_dict(grid, p["accumulator"])) for p in data["paths"]]
    return cfg, paths, int(data["burn_in_steps"])


# --------------------------------------------------------------------------
# run / resume


@dataclass
class RunOutcome:
    exit_code: int
    output_dir: Path
    estimates: StationaryEstimates | None = None
    report: dict | None = None
    message: str = ""


def _log(msg, quiet):
    if not quiet:
        print(msg, flush=True)


def _execute(cfg: RunConfig, paths: list, burn: int, target: int, out_dir: Path, threads: int,
             quiet: bool, started: float, mode: str) -> RunOutcome:
    keep = "states" in cfg.output.formats
    manifest = {
        "mode": mode,
        "version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.physics_hash(),
        "seed": cfg.noise.seed,
        "start_step": int(paths[0].step),
        "final_step": int(target),
        "burn_in_steps": int(burn),
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    start_step = paths[0].step

    def work(p):
        return advance_path(cfg, p, target, burn, keep)

    try:
        if threads > 1 and len(paths) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                paths = list(pool.map(work, paths))
        else:
            paths = [work(p) for p in paths]
    except BlowUpError as exc:
        msg = (f"blow-up at step {exc.step} (t = {exc.time:.6g}); last finite state has "
               f"|u|_H = {float(np.sqrt(np.sum(np.abs(exc.last_state) ** 2))):.6g}")
        manifest.update(status="blow_up", exit_code=EXIT_BLOWUP, message=msg,
                        blow_up={"step": int(exc.step), "time": float(exc.time),
                                 "last_state": _hex_state(exc.last_state)},
                        wall_time_s=time.perf_counter() - started)
        atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")
        _log(msg, quiet)
        return RunOutcome(EXIT_BLOWUP, out_dir, message=msg)

    cfl = cfl_ratio(cfg, [p.state for p in paths])
    manifest["cfl_ratio"] = cfl
    if cfl > 1.0:
        warnings.warn(f"step-size ratio 10 dt max_n k_n |u_n| = {cfl:.3g} exceeds 1; consider a smaller dt",
                      RuntimeWarning, stacklevel=2)
    files = []
    atomic_write_text(out_dir / "checkpoint.json", json.dumps(checkpoint_payload(cfg, paths, burn), indent=1) + "\n")
    files.append("checkpoint.json")
    if keep:
        atomic_write_bytes(out_dir / "states.npz", _npz_bytes(
            steps=np.asarray(paths[0].sampled_steps, dtype=np.int64),
            times=np.asarray(paths[0].sampled_steps, dtype=float) * cfg.sim.dt,
            states=np.array([np.array(p.sampled_states) for p in paths])))
        files.append("states.npz")

    model = cfg.model_spec()
    merged = reduce(lambda a, b: a.merge(b), [p.accumulator for p in paths])
    outcome = RunOutcome(EXIT_OK, out_dir)
    try:
        est = merged.estimates()
    except EmptyAccumulatorError:
        outcome.exit_code, outcome.message = EXIT_DEGENERATE, "no samples after burn-in"
        est = None
    if est is not None:
        outcome.estimates = est
        atomic_write_bytes(out_dir / "estimates.npz", _npz_bytes(**est.to_arrays()))
        files.append("estimates.npz")
        if "csv" in cfg.output.formats:
            atomic_write_text(out_dir / "estimates.csv", estimates_to_csv(est, model))
            files.append("estimates.csv")
        try:
            outcome.report = analysis_report(est, model, cfg.window(), cfg.analysis.p_list)
        except DegenerateAnalysisError as exc:
            outcome.exit_code, outcome.message = EXIT_DEGENERATE, f"degenerate analysis: {exc}"
        if outcome.report is not None and "json" in cfg.output.formats:
            atomic_write_text(out_dir / "analysis.json", dumps_report(outcome.report))
            files.append("analysis.json")

    manifest.update(status="ok" if outcome.exit_code == EXIT_OK else "degenerate_analysis",
                    exit_code=outcome.exit_code, message=outcome.message, files=files,
                    samples=int(merged.sample_count), steps_this_invocation=int(target - start_step),
                    wall_time_s=time.perf_counter() - started)
    atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    _log(f"{mode}: steps {start_step}..{target}, {merged.sample_count} samples -> {out_dir}"
         + (f" ({outcome.message})" if outcome.message else ""), quiet)
    return outcome


def run(cfg: RunConfig, output_dir=None, threads: int = 1, quiet: bool = True) -> RunOutcome:
    """Simulate from rest to ``sim.t_final`` and write every output."""
    started = time.perf_counter()
    out_dir = Path(output_dir if output_dir is not None else cfg.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "config.yaml", cfg.dumps())
    burn = burn_in_steps(cfg)
    paths = new_paths(cfg, burn)
    target = n_steps_for(cfg.sim.t_final, cfg.sim.dt)
    return _execute(cfg, paths, burn, target, out_dir, threads, quiet, started, "run")


def resume(checkpoint_path, additional_t: float, config: RunConfig | None = None, output_dir=None,
           threads: int = 1, quiet: bool = True) -> RunOutcome:
    """Continue a checkpointed run by ``additional_t`` time units.

    If ``config`` is given its physics hash must match the checkpoint.  The
    burn-in boundary stays where the original run put it, so estimates keep
    accumulating over the continued path.  ``states.npz`` of the resumed run
    holds only the newly sampled states.
    """
    started = time.perf_counter()
    cfg, paths, burn = load_checkpoint(checkpoint_path)
    if config is not None and config.physics_hash() != cfg.physics_hash():
        raise CheckpointError("config hash mismatch: the supplied config differs from the checkpointed run")
    if not additional_t > 0:
        raise ValueError("additional time must be positive")
    target = paths[0].step + n_steps_for(additional_t, cfg.sim.dt)
    cfg.sim.t_final = target * cfg.sim.dt
    if config is not None:
        cfg.output = config.output
    out_dir = Path(output_dir if output_dir is not None else cfg.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "config.yaml", cfg.dumps())
    return _execute(cfg, paths, burn, target, out_dir, threads, quiet, started, "resume")


def analyze(run_dir, window=None, p_list=None, output_dir=None) -> RunOutcome:
    """Re-analyze stored estimates of a finished run with a new window or p list."""
    from .config import load_config

    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.yaml")
    est = StationaryEstimates.load(run_dir / "estimates.npz")
    if p_list is not None:
        missing = [p for p in p_list if float(p) not in est.p_list and float(p) != 2.0]
        if missing:
            raise ValueError(f"orders {missing} were not accumulated (have {list(est.p_list)})")
    out_dir = Path(output_dir) if output_dir is not None else run_dir
    outcome = RunOutcome(EXIT_OK, out_dir, est)
    try:
        outcome.report = analysis_report(est, cfg.model_spec(), window if window is not None else cfg.window(),
                                         p_list if p_list is not None else cfg.analysis.p_list)
    except DegenerateAnalysisError as exc:
        outcome.exit_code, outcome.message = EXIT_DEGENERATE, f"degenerate analysis: {exc}"
        return outcome
    atomic_write_text(out_dir / "analysis.json", dumps_report(outcome.report))
    return outcome


def sweep(cfg: RunConfig, nus, output_dir=None, threads: int = 1, quiet: bool = True) -> tuple:
    """One full run per viscosity in ``nus`` under ``<dir>/nu_<value>``; returns ``(exit_code, summary)``."""
    import copy

    base = Path(output_dir if output_dir is not None else cfg.output.dir)
    summary = {"schema_version": 1, "runs": []}
    code = EXIT_OK
    for nu in nus:
        c = copy.deepcopy(cfg)
        c.model.nu = float(nu)
        c = config_from_dict(c.to_dict())
        out = run(c, base / f"nu_{float(nu):g}", threads=threads, quiet=quiet)
        entry = {"nu": float(nu), "dir": f"nu_{float(nu):g}", "exit_code": out.exit_code}
        if out.report is not None:
            entry["window"] = out.report["window"]
            entry["exponents"] = out.report["exponents"]
            entry["zeta3_flux"] = out.report["zeta3_flux"]
            entry["zeta2_condition"] = out.report["zeta2_condition"]
        summary["runs"].append(entry)
        code = max(code, out.exit_code)
    atomic_write_text(base / "sweep.json", dumps_report(summary))
    return code, summary
