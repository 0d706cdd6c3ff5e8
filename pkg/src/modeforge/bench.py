"""Wall-clock comparison of the closed-form decomposition against ADMM."""

from __future__ import annotations

import csv
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spectral import IQFrame
from .vmd import AdmmConfig, admm_vmd, fundamental_index, lossless_vmd, select_centers

MIN_FRAMES = 100


def limit_threads(n: int = 1) -> None:
    """Ask BLAS/OpenMP pools for ``n`` workers; effective only before numpy loads them."""
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def host_descriptor() -> str:
    return f"{platform.machine()} {platform.processor() or 'cpu'} python {platform.python_version()}"


@dataclass
class KTiming:
    k: int
    lossless_mean_ms: float
    lossless_median_ms: float
    admm_mean_ms: float
    admm_median_ms: float
    admm_mean_iters: float

    @property
    def speedup(self) -> float:
        return 1.0 - self.lossless_mean_ms / self.admm_mean_ms


@dataclass
class BenchReport:
    rows: list[KTiming]
    n_frames: int
    warmup: int
    repetitions: int
    host: str = field(default_factory=host_descriptor)

    def row(self, k: int) -> KTiming:
        for r in self.rows:
            if r.k == k:
                return r
        raise KeyError(f"no timing for k={k}")

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "lossless_mean_ms", "lossless_median_ms", "admm_mean_ms",
                        "admm_median_ms", "admm_mean_iters", "speedup", "n_frames",
                        "warmup", "repetitions", "host"])
            for r in self.rows:
                w.writerow([r.k] + [f"{v:.12g}" for v in (
                    r.lossless_mean_ms, r.lossless_median_ms, r.admm_mean_ms,
                    r.admm_median_ms, r.admm_mean_iters, r.speedup)]
                    + [self.n_frames, self.warmup, self.repetitions, self.host])


def _time_each(fn, frames, repetitions: int) -> np.ndarray:
    out = np.empty(len(frames))
    for i, f in enumerate(frames):
        t = time.perf_counter()
        for _ in range(repetitions):
            fn(f)
        out[i] = (time.perf_counter() - t) / repetitions
    return out * 1e3


def bench_vmd(frames, k_range=range(2, 8), repetitions: int = 1, warmup: int = 10,
              admm_config: AdmmConfig | None = None) -> BenchReport:
    """Per-frame mean/median time of both decomposers for each k on the same frames.

    Lossless timing covers the full per-frame path (DFT, weights, inverse DFT)
    with centers from the table, matching what ADMM must also compute.
    """
    frames = [f if isinstance(f, IQFrame) else IQFrame(f) for f in frames]
    if len(frames) < MIN_FRAMES:
        raise ValueError(f"need at least {MIN_FRAMES} frames, got {len(frames)}")
    if repetitions < 1 or warmup < 0:
        raise ValueError("repetitions must be >= 1 and warmup >= 0")
    admm_config = admm_config or AdmmConfig()
    L = len(frames[0])
    rows = []
    for k in k_range:
        fr = frames[0]
        k0 = fundamental_index(fr.sample_rate, fr.symbol_rate)
        centers = select_centers(k, k0, L)

        def run_lossless(f):
            return lossless_vmd(f, centers)

        iters = []

        def run_admm(f):
            iters.append(admm_vmd(f, k, admm_config).iterations)

        for f in frames[:warmup]:
            run_lossless(f)
            run_admm(f)
        iters.clear()
        t_l = _time_each(run_lossless, frames, repetitions)
        t_a = _time_each(run_admm, frames, repetitions)
        rows.append(KTiming(k, float(t_l.mean()), float(np.median(t_l)), float(t_a.mean()),
                            float(np.median(t_a)), float(np.mean(iters))))
    return BenchReport(rows, len(frames), warmup, repetitions)
