"""Temperature-scaled softmax, threshold rejection and the (T, tau) sweep."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ILLEGAL = -1

# grids used for the open-set sweep: T in 0.3..5.0 step 0.1, tau in 0.800..1.000 step 0.001
DEFAULT_TEMPERATURES = np.round(np.arange(3, 51) * 0.1, 10)
DEFAULT_THRESHOLDS = np.round(np.arange(800, 1001) * 0.001, 10)


@dataclass(frozen=True)
class DecisionConfig:
    temperature: float = 1.0
    threshold: float = 0.9

    def __post_init__(self):
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold}")


@dataclass(frozen=True)
class Decision:
    verdict: int  # class index, or ILLEGAL
    p_max: float
    probabilities: np.ndarray

    @property
    def is_legal(self) -> bool:
        return self.verdict != ILLEGAL


def softmax_with_temperature(logits, temperature: float) -> np.ndarray:
    """Softmax of ``logits / T`` along the last axis (max-subtracted)."""
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 1:
        raise ValueError("need at least one logit")
    z = (z - z.max(axis=-1, keepdims=True)) / temperature
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def decide(logits, config: DecisionConfig) -> Decision:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError(f"decide expects a non-empty logit vector, got shape {z.shape}")
    p = softmax_with_temperature(z, config.temperature)
    # np.argmax returns the first maximum, i.e. lowest index on ties
    k = int(np.argmax(z))
    p_max = float(p.max())
    verdict = k if p_max >= config.threshold else ILLEGAL
    return Decision(verdict, p_max, p)


def decide_batch(logits: np.ndarray, config: DecisionConfig) -> np.ndarray:
    """Vectorized verdicts for an (N, K) logit array."""
    z = np.asarray(logits, dtype=np.float64)
    p = softmax_with_temperature(z, config.temperature)
    pred = np.argmax(z, axis=1)
    return np.where(p.max(axis=1) >= config.threshold, pred, ILLEGAL)


@dataclass(frozen=True)
class EvalReport:
    n: int
    n_legal: int
    n_illegal: int
    n_correct_legal: int
    n_correct_illegal: int
    open_accuracy: float
    confusion: np.ndarray  # (K+1, K+1), rows truth, cols verdict, last index = illegal

    def to_dict(self) -> dict:
        return {
            "n": self.n, "n_legal": self.n_legal, "n_illegal": self.n_illegal,
            "n_correct_legal": self.n_correct_legal,
            "n_correct_illegal": self.n_correct_illegal,
            "open_accuracy": self.open_accuracy,
        }


def open_accuracy(verdicts, truth, n_known: int) -> EvalReport:
    """Score verdicts against truth labels; ILLEGAL marks unknown devices in both."""
    v = np.asarray(verdicts, dtype=np.int64)
    t = np.asarray(truth, dtype=np.int64)
    if v.shape != t.shape or v.ndim != 1:
        raise ValueError(f"got {v.size} decisions for {t.size} labels")
    for name, arr in (("decision", v), ("label", t)):
        bad = (arr != ILLEGAL) & ((arr < 0) | (arr >= n_known))
        if bad.any():
            raise ValueError(f"{name} {int(arr[bad][0])} outside [0, {n_known}) and not illegal")
    K = n_known
    vi = np.where(v == ILLEGAL, K, v)
    ti = np.where(t == ILLEGAL, K, t)
    confusion = np.zeros((K + 1, K + 1), dtype=np.int64)
    np.add.at(confusion, (ti, vi), 1)
    legal = t != ILLEGAL
    n_cl = int(np.sum(legal & (v == t)))
    n_ci = int(np.sum(~legal & (v == ILLEGAL)))
    n = int(t.size)
    acc = (n_cl + n_ci) / n if n else 0.0
    return EvalReport(n, int(legal.sum()), int((~legal).sum()), n_cl, n_ci, acc, confusion)


@dataclass
class SweepResult:
    temperatures: np.ndarray
    thresholds: np.ndarray
    accuracy: np.ndarray  # (nT, ntau)
    correct_legal: np.ndarray
    correct_illegal: np.ndarray
    n: int

    @property
    def best(self) -> tuple[float, float, float]:
        """(T, tau, accuracy) of the first best cell in row-major order."""
        i, j = np.unravel_index(int(np.argmax(self.accuracy)), self.accuracy.shape)
        return float(self.temperatures[i]), float(self.thresholds[j]), float(self.accuracy[i, j])

    def accuracy_at(self, temperature: float, threshold: float) -> float:
        i = int(np.argmin(np.abs(self.temperatures - temperature)))
        j = int(np.argmin(np.abs(self.thresholds - threshold)))
        return float(self.accuracy[i, j])

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["temperature", "threshold", "accuracy", "n_correct_legal", "n_correct_illegal"])
            for i, T in enumerate(self.temperatures):
                for j, tau in enumerate(self.thresholds):
                    w.writerow([f"{T:.12g}", f"{tau:.12g}", f"{self.accuracy[i, j]:.12g}",
                                int(self.correct_legal[i, j]), int(self.correct_illegal[i, j])])


def sweep(logits: np.ndarray, truth, temperatures=DEFAULT_TEMPERATURES,
          thresholds=DEFAULT_THRESHOLDS) -> SweepResult:
    """Open accuracy for every (T, tau) over cached logits.

    The argmax does not depend on T, so each temperature needs one softmax
    and each threshold is a comparison against sorted p_max values.
    """
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(truth, dtype=np.int64)
    temps = np.asarray(temperatures, dtype=np.float64).ravel()
    taus = np.asarray(thresholds, dtype=np.float64).ravel()
    if temps.size == 0 or taus.size == 0:
        raise ValueError("temperature and threshold grids must be non-empty")
    if z.ndim != 2 or z.shape[0] != t.size:
        raise ValueError(f"logits {z.shape} do not match {t.size} labels")
    if np.any(temps <= 0):
        raise ValueError("temperatures must be > 0")
    legal = t != ILLEGAL
    hit = legal & (np.argmax(z, axis=1) == t) if z.shape[0] else legal
    nT, ntau = temps.size, taus.size
    cl = np.zeros((nT, ntau), dtype=np.int64)
    ci = np.zeros((nT, ntau), dtype=np.int64)
    for i, T in enumerate(temps):
        pmax = softmax_with_temperature(z, T).max(axis=1) if z.shape[0] else np.zeros(0)
        # legal accepted-and-correct: pmax >= tau
        s_hit = np.sort(pmax[hit])
        cl[i] = s_hit.size - np.searchsorted(s_hit, taus, side="left")
        # illegal rejected: pmax < tau
        s_ill = np.sort(pmax[~legal])
        ci[i] = np.searchsorted(s_ill, taus, side="left")
    n = int(t.size)
    acc = (cl + ci) / n if n else np.zeros((nT, ntau))
    return SweepResult(temps, taus, acc, cl, ci, n)


def write_confusion_csv(path, confusion: np.ndarray, class_names=None) -> None:
    K = confusion.shape[0] - 1
    names = list(class_names) if class_names is not None else [str(i) for i in range(K)]
    names = names + ["illegal"]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["truth\\pred"] + names)
        for name, row in zip(names, confusion):
            w.writerow([name] + [int(c) for c in row])
