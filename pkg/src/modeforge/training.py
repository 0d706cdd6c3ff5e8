"""Adam + reduce-on-plateau training loop and closed/open-set evaluation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Dataset, class_weights, open_set_arrays
from .model import HydraModel
from .openset import (ILLEGAL, DEFAULT_TEMPERATURES, DEFAULT_THRESHOLDS, EvalReport, SweepResult,
                      open_accuracy, softmax_with_temperature, sweep)

log = logging.getLogger(__name__)

IMPROVEMENT_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    factor: float = 0.1
    patience: int = 10
    min_lr: float = 1e-5
    batch_size: int = 32
    max_epochs: int = 50
    seed: int = 42
    use_class_weights: bool = True
    time_budget_s: float | None = None  # wall-clock cap, checked between epochs
    precision: str = "float64"  # "float32" is an opt-in speed trade

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if not self.lr > self.min_lr:
            raise ValueError(f"lr {self.lr} must exceed min_lr {self.min_lr}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ValueError("batch_size and max_epochs must be >= 1, patience >= 0")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")
        if not 0.0 < self.factor < 1.0:
            raise ValueError(f"factor must lie in (0, 1), got {self.factor}")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class ReduceOnPlateau:
    """Multiply lr by ``factor`` after ``patience`` epochs without improvement.

    ``step`` returns False once the next reduction would take lr below
    ``min_lr``; the caller stops training at that point.
    """

    def __init__(self, lr: float, factor=0.1, patience=10, min_lr=1e-5, eps=IMPROVEMENT_EPS):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.eps = eps
        self.best = math.inf
        self.bad_epochs = 0
        self.reductions: list[int] = []
        self.epoch = 0

    def step(self, val_loss: float) -> bool:
        self.epoch += 1
        if val_loss < self.best - self.eps:
            self.best = val_loss
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            new_lr = self.lr * self.factor
            # relative slack so 1e-3 * 0.1 * 0.1 == 1e-5 counts as reaching the floor
            if new_lr < self.min_lr * (1.0 - 1e-9):
                return False
            self.lr = new_lr
            self.bad_epochs = 0
            self.reductions.append(self.epoch)
        return True


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    stop_reason: str = ""
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _check_finite(value: float, epoch: int, what: str) -> None:
    if not math.isfinite(value):
        raise FloatingPointError(f"{what} became non-finite in epoch {epoch}")


def dataset_loss(model: HydraModel, x: np.ndarray, y: np.ndarray,
                 weights: np.ndarray | None, batch_size: int = 256) -> tuple[float, float]:
    """(weighted mean cross-entropy, accuracy) in eval mode."""
    logits = model.predict_logits(x, batch_size)
    z = logits - logits.max(axis=1, keepdims=True)
    nll = -(z[np.arange(len(y)), y] - np.log(np.exp(z).sum(axis=1)))
    w = np.ones(len(y)) if weights is None else weights[y]
    return float((w * nll).sum() / w.sum()), float(np.mean(logits.argmax(axis=1) == y))


def train(model: HydraModel, train_set: Dataset, val_set: Dataset,
          config: TrainConfig | None = None) -> TrainHistory:
    """Fit ``model`` in place; on return it holds the lowest-val-loss parameters."""
    config = config or TrainConfig()
    if model.config.n_classes != train_set.n_classes:
        raise ValueError(f"model has {model.config.n_classes} classes, data has {train_set.n_classes}")
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation splits must be non-empty")
    if train_set.channels != model.config.cfre.in_channels:
        raise ValueError(f"data has {train_set.channels} channels, model expects "
                         f"{model.config.cfre.in_channels}")
    model.astype(config.precision)
    with ad.precision(config.precision):
        return _train(model, train_set, val_set, config)


def _train(model, train_set, val_set, config):
    rng = np.random.default_rng(config.seed)
    weights = class_weights(train_set.labels, train_set.n_classes) if config.use_class_weights else None
    opt = Adam(model.parameters(), config.lr, config.betas, config.eps)
    sched = ReduceOnPlateau(config.lr, config.factor, config.patience, config.min_lr)
    hist = TrainHistory()
    best_state = model.state_dict()
    t0 = time.perf_counter()
    n = len(train_set)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            model.zero_grad()
            try:
                logits = model(train_set.x[idx], train=True, rng=rng)
                loss = ad.cross_entropy(logits, train_set.labels[idx], weights)
                loss.backward()
            except FloatingPointError as exc:
                raise FloatingPointError(f"training diverged in epoch {epoch}: {exc}") from exc
            opt.step()
            total += loss.item() * idx.size
            count += idx.size
        train_loss = total / count
        val_loss, val_acc = dataset_loss(model, val_set.x, val_set.labels, weights)
        _check_finite(train_loss, epoch, "training loss")
        _check_finite(val_loss, epoch, "validation loss")
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        hist.val_acc.append(val_acc)
        hist.lr.append(opt.lr)
        if val_loss < hist.best_val_loss:
            hist.best_val_loss = val_loss
            hist.best_epoch = epoch
            best_state = model.state_dict()
        log.info("epoch %d train %.4f val %.4f acc %.4f lr %.1e", epoch, train_loss,
                 val_loss, val_acc, opt.lr)
        if not sched.step(val_loss):
            hist.stop_reason = "min_lr"
            break
        opt.lr = sched.lr
        if config.time_budget_s is not None and time.perf_counter() - t0 > config.time_budget_s:
            hist.stop_reason = "time_budget"
            break
    else:
        hist.stop_reason = "max_epochs"
    model.load_state_dict(best_state)
    hist.seconds = time.perf_counter() - t0
    return hist


@dataclass
class ClosedReport:
    accuracy: float
    macro_f1: float
    confusion: np.ndarray
    n: int

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "macro_f1": self.macro_f1, "n": self.n}


def closed_metrics(pred, truth, n_classes: int) -> ClosedReport:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if truth.size == 0:
        raise ValueError("cannot evaluate an empty split")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=0) + cm.sum(axis=1)
    # F1 = 2TP / (2TP + FP + FN); a class with no support and no predictions scores 0
    f1 = np.divide(2 * tp, denom, out=np.zeros(n_classes), where=denom > 0)
    return ClosedReport(float(np.mean(pred == truth)), float(f1.mean()), cm, int(truth.size))


def eval_closed(model: HydraModel, test_set: Dataset) -> ClosedReport:
    if test_set.n_classes != model.config.n_classes:
        raise ValueError("label spaces of model and test split differ")
    if len(test_set) == 0:
        raise ValueError("cannot evaluate an empty split")
    pred = model.predict_logits(test_set.x).argmax(axis=1)
    return closed_metrics(pred, test_set.labels, test_set.n_classes)


@dataclass
class OpenReport:
    sweep: SweepResult
    best: EvalReport
    best_temperature: float
    best_threshold: float


def eval_open(model: HydraModel, legal_test: Dataset, illegal: Dataset,
              temperatures=DEFAULT_TEMPERATURES, thresholds=DEFAULT_THRESHOLDS) -> OpenReport:
    """Compute logits once, sweep (T, tau), and report the best cell in full."""
    if legal_test.n_classes != model.config.n_classes:
        raise ValueError(f"legal mapping has {legal_test.n_classes} classes, model "
                         f"{model.config.n_classes}")
    x, y = open_set_arrays(legal_test, illegal)
    logits = model.predict_logits(x)
    result = sweep(logits, y, temperatures, thresholds)
    T, tau, _ = result.best
    # thresholds just above 1 are legal sweep points (reject everything), so skip DecisionConfig
    p_max = softmax_with_temperature(logits, T).max(axis=1)
    verdicts = np.where(p_max >= tau, logits.argmax(axis=1), ILLEGAL)
    return OpenReport(result, open_accuracy(verdicts, y, legal_test.n_classes), T, tau)
