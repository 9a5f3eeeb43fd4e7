"""SGD training with gradient clipping and new-bob learning-rate control."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np

from . import tensor as T
from .errors import DataError, TrainingDiverged
from .models import LanguageModel

logger = logging.getLogger(__name__)


@dataclass
class TrainerConfig:
    lr0: float = 0.1
    batch: int = 16
    window: int = 64
    clip: float = 5.0
    decay: float = 0.5
    threshold: float = 0.001
    patience: int = 2
    max_epochs: int = 20
    log_path: Optional[str] = None

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.window < 2:
            raise ValueError("window must be >= 2")


@dataclass
class NewBobState:
    current_lr: float
    best_val_ppl: float = math.inf
    epochs_without_improvement: int = 0
    halted: bool = False
    halvings: int = 0
    lr0: Optional[float] = None

    def __post_init__(self):
        if self.lr0 is None:
            self.lr0 = self.current_lr


def new_bob_update(state: NewBobState, val_ppl: float, cfg: TrainerConfig) -> NewBobState:
    """Advance the schedule by one epoch's validation perplexity.

    Too small a relative gain halves the rate; once halving has started,
    ``patience`` such epochs in a row halt training instead.
    """
    if not math.isfinite(val_ppl):
        raise ValueError(f"validation perplexity must be finite, got {val_ppl}")
    best = state.best_val_ppl
    gain = (best - val_ppl) / best if math.isfinite(best) else math.inf
    s = NewBobState(state.current_lr, best, state.epochs_without_improvement,
                    state.halted, state.halvings, state.lr0)
    if val_ppl < best:
        s.best_val_ppl = val_ppl
    if gain >= cfg.threshold:
        s.epochs_without_improvement = 0
        return s
    if s.halvings > 0:
        s.epochs_without_improvement += 1
        if s.epochs_without_improvement >= cfg.patience:
            s.halted = True
            return s
    s.halvings += 1
    s.current_lr = s.lr0 * cfg.decay ** s.halvings
    return s


class Window(NamedTuple):
    inputs: np.ndarray
    targets: np.ndarray
    reset: bool


def batchify(corpus, batch: int, window: int) -> Iterator[Window]:
    """Cut ``corpus`` into ``batch`` contiguous streams and walk them in windows.

    Window ``k`` of stream ``b`` directly continues window ``k-1`` of the
    same stream, so recurrent state can be carried.  ``reset`` is raised on
    the first window only.  Trailing tokens that do not fill a window in
    every stream are dropped.
    """
    ids = np.asarray(corpus)
    n = (len(ids) - 1) // (batch * window) if len(ids) else 0
    if n < 1:
        raise DataError(f"corpus of {len(ids)} tokens is too short for {batch} streams of window {window}")
    span = n * window
    inputs = np.stack([ids[b * span:(b + 1) * span] for b in range(batch)])
    targets = np.stack([ids[b * span + 1:(b + 1) * span + 1] for b in range(batch)])
    for k in range(n):
        sl = slice(k * window, (k + 1) * window)
        yield Window(inputs[:, sl], targets[:, sl], k == 0)


def grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def sgd_step(model, lr: float, clip: float = math.inf) -> float:
    """Clip by global L2 norm, apply ``theta -= lr * grad``, zero the grads.

    Returns the pre-clip gradient norm.
    """
    params = model.parameters() if hasattr(model, "parameters") else list(model)
    norm = grad_norm(params)
    if not math.isfinite(norm):
        bad = [getattr(p, "name", None) or i for i, p in enumerate(params)
               if p.grad is not None and not np.all(np.isfinite(p.grad))]
        raise TrainingDiverged(f"non-finite gradient in parameters {bad}")
    scale = clip / norm if norm > clip else 1.0
    for p in params:
        if p.grad is None:
            continue
        g = p.grad * scale if scale != 1.0 else p.grad
        p.data -= (lr * g).astype(p.data.dtype, copy=False)
        p.grad = None
    return norm


@dataclass
class EpochRecord:
    epoch: int
    train_ppl: float
    valid_ppl: float
    lr: float

    def line(self):
        return f"{self.epoch}\t{self.train_ppl:.6f}\t{self.valid_ppl:.6f}\t{self.lr:.8g}"


@dataclass
class TrainResult:
    model: LanguageModel
    log: list = field(default_factory=list)
    best_epoch: int = 0


def train_epoch(model: LanguageModel, corpus, cfg: TrainerConfig, lr: float) -> float:
    """One pass over ``corpus``; returns the training perplexity."""
    total, count = 0.0, 0
    carry = None
    for win in batchify(corpus, cfg.batch, cfg.window):
        if win.reset:
            carry = None
        with T.new_tape() as tape:
            logits, carry = model.forward(win.inputs, carry)
            loss = T.cross_entropy(logits, win.targets)
            T.backward(loss, tape)
        sgd_step(model, lr, cfg.clip)
        total += float(loss.data) * win.targets.size
        count += win.targets.size
    return _ppl(total / count)


def _ppl(mean_nll):
    return math.exp(mean_nll) if mean_nll < 700 else math.inf


def train(model: LanguageModel, train_corpus, valid_corpus, cfg: TrainerConfig) -> TrainResult:
    """Train until new-bob halts or ``max_epochs``; return the best-validation model."""
    from .evaluation import perplexity

    train_ids = np.asarray(train_corpus)
    valid_ids = np.asarray(valid_corpus)
    if len(train_ids) == 0 or len(valid_ids) < 2:
        raise DataError("training and validation corpora must be non-empty")
    state = NewBobState(cfg.lr0)
    result = TrainResult(model.clone())
    best = math.inf
    log_file = open(cfg.log_path, "w", encoding="utf-8") if cfg.log_path else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            lr = state.current_lr
            train_ppl = train_epoch(model, train_ids, cfg, lr)
            valid_ppl = perplexity(model, valid_ids, mode="all", window=cfg.window)
            if not (math.isfinite(train_ppl) and math.isfinite(valid_ppl)):
                raise TrainingDiverged(f"epoch {epoch}: perplexity overflowed "
                                       f"(train {train_ppl}, valid {valid_ppl}) at lr {lr:g}")
            rec = EpochRecord(epoch, train_ppl, valid_ppl, lr)
            result.log.append(rec)
            logger.info("epoch %d train_ppl=%.3f valid_ppl=%.3f lr=%g", epoch, train_ppl, valid_ppl, lr)
            if log_file:
                log_file.write(rec.line() + "\n")
                log_file.flush()
            if valid_ppl < best:
                best = valid_ppl
                result.model = model.clone()
                result.best_epoch = epoch
            state = new_bob_update(state, valid_ppl, cfg)
            if state.halted:
                break
    finally:
        if log_file:
            log_file.close()
    return result


def write_log(records, path):
    Path(path).write_text("".join(r.line() + "\n" for r in records), encoding="utf-8")
