"""Monte-Carlo closed-loop runs, the tracking metric and summary statistics."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..controller import NOISE_STREAM, run_closed_loop
from ..lti_sim import NoiseSpec, benchmark_system, square_wave, white_noise
from .config import ScenarioConfig

log = logging.getLogger(__name__)


def tracking_metric(y, ref) -> float:
    """Mean squared tracking error divided by the Euclidean norm of the reference."""
    y = np.ravel(np.asarray(y, dtype=float))
    ref = np.ravel(np.asarray(ref, dtype=float))
    if y.shape != ref.shape or y.size == 0:
        raise ValueError("y and ref must be non-empty with equal lengths")
    norm = np.linalg.norm(ref)
    if norm == 0:
        raise ValueError("reference has zero norm")
    return float(np.mean((y - ref) ** 2) / norm)


@dataclass(frozen=True)
class RunRecord:
    """One closed-loop realization. ``metric`` is NaN when the run failed."""

    scenario: str
    variant: str
    sweep_value: Optional[float]
    seed: int
    metric: float
    solve_ms: float = 0.0
    wall_s: float = 0.0
    n_not_optimal: int = 0
    max_iterations: int = 0
    max_abs_u: float = 0.0
    max_abs_du: float = 0.0
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass(frozen=True)
class SummaryRow:
    scenario: str
    sweep_value: Optional[float]
    variant: str
    median: float
    p10: float
    p90: float
    n: int
    n_failed: int = 0


def run_one(cfg: ScenarioConfig, variant: str, sweep_value, seed: int) -> RunRecord:
    """Single realization; exceptions become a record with ``error`` set."""
    t0 = time.perf_counter()
    try:
        ctrl, var = cfg.resolve(sweep_value, variant)
        ctrl.seed = seed
        sys = benchmark_system()
        T = cfg.T_control
        ref = square_wave(cfg.amplitude, cfg.offset, cfg.period, T + ctrl.f - 1)[None, :]
        e = white_noise(NoiseSpec(var, seed, NOISE_STREAM), cfg.excitation_length + T, sys.l)
        res = run_closed_loop(sys, ctrl, ref, e, T, excitation_length=cfg.excitation_length)
        u_all = res.trajectory.u[:, cfg.excitation_length - 1:]
        diag = res.diagnostics
        return RunRecord(
            cfg.name, variant, sweep_value, seed,
            metric=tracking_metric(res.y, res.reference),
            solve_ms=1e3 * res.solve_time,
            wall_s=time.perf_counter() - t0,
            n_not_optimal=res.n_not_optimal,
            max_iterations=max((d[1] for d in diag), default=0),
            max_abs_u=float(np.abs(res.u).max()),
            max_abs_du=float(np.abs(np.diff(u_all, axis=1)).max()),
        )
    except Exception as exc:  # recorded, the batch goes on
        log.warning("run %s/%s/%s seed %d failed: %s", cfg.name, variant, sweep_value, seed, exc)
        return RunRecord(cfg.name, variant, sweep_value, seed, float("nan"),
                         wall_s=time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}")


def _run_task(args):
    return run_one(*args)


def run_scenario(cfg: ScenarioConfig, variants=None, workers: Optional[int] = None) -> list:
    """Every sweep value x realization x variant, ordered in that nesting.

    Seeds are ``base_seed + j``, so a realization never depends on which
    other realizations ran. ``workers > 1`` fans runs out to processes; the
    result order is the same either way.
    """
    variants = tuple(cfg.variants if variants is None else variants)
    tasks = [(cfg, v, s, seed) for s in cfg.points for seed in cfg.seeds for v in variants]
    workers = cfg.workers if workers is None else workers
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_task, tasks, chunksize=1))
    return [run_one(*t) for t in tasks]


def summarize(records) -> list:
    """Median and 10th/90th percentiles (linear interpolation) per sweep value and variant."""
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.scenario, rec.sweep_value, rec.variant), []).append(rec)
    rows = []
    for (scenario, value, variant), recs in groups.items():
        vals = np.array([r.metric for r in recs if r.ok], dtype=float)
        if vals.size:
            p10, med, p90 = np.percentile(vals, [10, 50, 90], method="linear")
        else:
            p10 = med = p90 = float("nan")
        rows.append(SummaryRow(scenario, value, variant, float(med), float(p10), float(p90),
                               int(vals.size), len(recs) - int(vals.size)))
    return rows


def medians(records) -> dict:
    """``{(sweep_value, variant): median}`` convenience view of :func:`summarize`."""
    return {(row.sweep_value, row.variant): row.median for row in summarize(records)}
