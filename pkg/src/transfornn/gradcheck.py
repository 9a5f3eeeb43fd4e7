"""Compare tape gradients of a whole model against central differences."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .models import LanguageModel, ModelConfig, loss_all_positions

TOLERANCE = 1e-3


@dataclass
class TensorCheck:
    name: str
    shape: tuple
    max_rel_error: float

    @property
    def ok(self):
        return self.max_rel_error < TOLERANCE


def tiny_config(family, d=16, heads=2, d_ff=32, vocab_size=20, n_layers=2, m_layers=2, seed=0):
    n = 0 if family == "lstm" else n_layers
    m = 0 if family == "transformer" else m_layers
    return ModelConfig(family, vocab_size, d=d, n_layers=n, m_layers=m, heads=heads, d_ff=d_ff, seed=seed)


def check_gradients(model: LanguageModel, tokens, h=1e-3):
    """Per-tensor max relative error between backward() and finite differences.

    Both sides run on a float64 copy of ``model``.
    """
    model64 = model.astype(np.float64)
    tokens = np.asarray(tokens)

    def loss_fn(_):
        return loss_all_positions(model64, tokens)

    with T.new_tape() as tape:
        loss = loss_fn(None)
        T.backward(loss, tape)
    results = []
    for name, p in model64.named_parameters():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = T.finite_difference_grad(loss_fn, p, h).data
        err = float(T.relative_error(analytic, numeric).max())
        results.append(TensorCheck(name, p.shape, err))
    return results


def run_grad_check(family, d=16, window=6, vocab_size=20, heads=2, d_ff=32, seed=0, h=1e-3):
    cfg = tiny_config(family, d=d, heads=heads, d_ff=d_ff, vocab_size=vocab_size, seed=seed)
    model = LanguageModel(cfg)
    rng = np.random.default_rng(seed + 1)
    tokens = rng.integers(0, vocab_size, size=window + 1)
    return check_gradients(model, tokens, h)
