"""Throughput benchmark for the batched kitchen engine.

Measures environment steps per second (batch x wall-clock loop) on
freshly generated random layouts, with and without observation tensor
construction. Stepping speed is the number the engine target cares
about; the with-observations column shows what training actually pays.
"""
from __future__ import annotations

import dataclasses
import time

import numpy as np

from .overcooked import OvercookedVecEnv
from .procgen import generate_layout, load_templates

__all__ = ["BenchRow", "BenchReport", "measure_throughput", "run_benchmark"]


@dataclasses.dataclass(frozen=True)
class BenchRow:
    batch: int
    steps_per_s: float
    obs_steps_per_s: float


@dataclasses.dataclass(frozen=True)
class BenchReport:
    rows: tuple[BenchRow, ...]
    best_steps_per_s: float

    def to_dict(self) -> dict:
        return {"rows": [dataclasses.asdict(r) for r in self.rows],
                "best_steps_per_s": self.best_steps_per_s}


def _time_loop(env: OvercookedVecEnv, actions: np.ndarray, seconds: float,
               build_obs: bool) -> float:
    """Steps/s over repeated chunks until the time budget is spent."""
    chunk = actions.shape[0]
    env.reset()
    done_steps = 0
    t0 = time.perf_counter()
    while True:
        for k in range(chunk):
            env.step(actions[k], build_obs=build_obs)
        done_steps += chunk * env.batch
        elapsed = time.perf_counter() - t0
        if elapsed >= seconds:
            return done_steps / elapsed


def measure_throughput(batch: int, seconds: float = 1.0,
                       seed: int = 0) -> BenchRow:
    """Benchmark one batch size on `batch` random generated layouts."""
    rng = np.random.default_rng(seed)
    templates = load_templates()
    layouts = [generate_layout(rng, templates, [], seed=i) for i in range(batch)]
    env = OvercookedVecEnv(batch, layouts, np.random.default_rng(seed + 1))
    actions = rng.integers(0, 6, size=(max(64, 16384 // batch), batch, 2))
    raw = _time_loop(env, actions, seconds, build_obs=False)
    obs = _time_loop(env, actions, seconds, build_obs=True)
    return BenchRow(batch=batch, steps_per_s=raw, obs_steps_per_s=obs)


def run_benchmark(batch_sizes=(64, 256, 1024), seconds: float = 1.0,
                  seed: int = 0) -> BenchReport:
    rows = tuple(measure_throughput(b, seconds, seed) for b in batch_sizes)
    return BenchReport(rows=rows,
                       best_steps_per_s=max(r.steps_per_s for r in rows))
