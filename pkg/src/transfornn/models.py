"""The three language-model families and their parameter bookkeeping.

``transformer``  embedding -> N Transformer layers -> vocabulary projection
``lstm``         embedding -> M LSTM layers -> vocabulary projection
``transfornn``   embedding -> N Transformer layers -> M LSTM layers -> projection
"""

import copy
import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, StateError
from .layers import (
    EmbeddingTable,
    LstmLayerParams,
    Module,
    PositionalEncoder,
    TransformerLayerParams,
    embed,
    lstm_forward,
    output_logits,
    transformer_layer,
    uniform_init,
)
from .tensor import Tensor

FAMILIES = ("transformer", "lstm", "transfornn")
INFERENCE_MODES = ("all", "final")


@dataclass
class ModelConfig:
    family: str
    vocab_size: int
    d: int = 512
    n_layers: int = 0
    m_layers: int = 0
    heads: int = 8
    d_ff: int = 1024
    use_pos: Optional[bool] = None
    tied: bool = True
    lstm_hidden: Optional[int] = None
    embed_scale: bool = True
    inference_mode: str = "all"
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.use_pos is None:
            self.use_pos = self.family != "lstm"
        if self.lstm_hidden is None:
            self.lstm_hidden = self.d
        if self.inference_mode not in INFERENCE_MODES:
            raise ConfigError(f"inference_mode must be one of {INFERENCE_MODES}")
        if self.vocab_size < 1 or self.d < 1:
            raise ConfigError("vocab_size and d must be positive")
        if self.family == "transformer" and (self.n_layers < 1 or self.m_layers != 0):
            raise ConfigError("transformer family needs n_layers >= 1 and m_layers == 0")
        if self.family == "lstm" and (self.n_layers != 0 or self.m_layers < 1):
            raise ConfigError("lstm family needs n_layers == 0 and m_layers >= 1")
        if self.family == "transfornn" and (self.n_layers < 1 or self.m_layers < 1):
            raise ConfigError("transfornn family needs n_layers >= 1 and m_layers >= 1")
        if self.n_layers and (self.heads < 1 or self.d % self.heads):
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.tied and self.m_layers and self.lstm_hidden != self.d:
            raise ConfigError("tied output needs lstm_hidden == d")

    @property
    def output_dim(self):
        return self.lstm_hidden if self.m_layers else self.d

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


def parameter_count(config: ModelConfig) -> int:
    """Closed-form count of trainable scalars (tied embedding counted once)."""
    v, d, ff = config.vocab_size, config.d, config.d_ff
    attention = 4 * (d * d + d)
    feed_forward = d * ff + ff + ff * d + d
    norms = 4 * d
    total = v * d + config.n_layers * (attention + feed_forward + norms)
    h = config.lstm_hidden
    d_in = d
    for _ in range(config.m_layers):
        total += 4 * h * (d_in + h) + 4 * h
        d_in = h
    if not config.tied:
        total += config.output_dim * v
    return total


class LanguageModel(Module):
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.embedding = EmbeddingTable(config.vocab_size, config.d, tied_output=config.tied, rng=rng)
        self.transformer = [TransformerLayerParams(config.d, config.d_ff, rng) for _ in range(config.n_layers)]
        self.lstm = []
        d_in = config.d
        for _ in range(config.m_layers):
            self.lstm.append(LstmLayerParams(d_in, config.lstm_hidden, rng))
            d_in = config.lstm_hidden
        self.output_proj = None
        if not config.tied:
            self.output_proj = Tensor._wrap(uniform_init(rng, config.output_dim, config.vocab_size),
                                            requires_grad=True)
        self.encoder = PositionalEncoder(config.d, 512)

    @property
    def recurrent(self) -> bool:
        return bool(self.lstm)

    def named_parameters(self, prefix=""):
        seen = set()
        for name, p in super().named_parameters(prefix):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def clone(self) -> "LanguageModel":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "LanguageModel":
        """Copy of the model with every parameter cast to ``dtype``."""
        other = self.clone()
        for p in other.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return other

    def initial_carry(self, batch: Optional[int] = None, dtype=np.float32):
        if not self.recurrent:
            return None
        n = self.config.lstm_hidden
        shape = (n,) if batch is None else (batch, n)
        return [(Tensor._wrap(np.zeros(shape, dtype=dtype)), Tensor._wrap(np.zeros(shape, dtype=dtype)))
                for _ in self.lstm]

    def _check_carry(self, carry, batch):
        if carry is None:
            return
        if not self.recurrent:
            raise StateError("transformer family carries no recurrent state")
        if len(carry) != len(self.lstm):
            raise StateError(f"carry has {len(carry)} layers, model has {len(self.lstm)}")
        n = self.config.lstm_hidden
        want = (n,) if batch is None else (batch, n)
        for h, c in carry:
            if h.shape != want or c.shape != want:
                raise StateError(f"carry shape {h.shape} does not match expected {want}")

    def encode(self, tokens):
        """Embedding plus the Transformer stack (identity stack for ``lstm``)."""
        tokens = np.asarray(tokens)
        if tokens.ndim not in (1, 2) or tokens.shape[-1] < 1:
            raise DataError(f"tokens must be a non-empty (T,) or (B, T) array, got shape {tokens.shape}")
        cfg = self.config
        scale = math.sqrt(cfg.d) if cfg.embed_scale else 1.0
        x = embed(tokens, self.embedding, cfg.use_pos, scale, self.encoder)
        for layer in self.transformer:
            x = transformer_layer(x, layer, cfg.heads)
        return x

    def recur(self, x, carry=None):
        """Run the LSTM stack over ``x``; returns outputs and a detached carry."""
        if not self.recurrent:
            if carry is not None:
                raise StateError("transformer family carries no recurrent state")
            return x, None
        self._check_carry(carry, x.shape[0] if x.ndim == 3 else None)
        new_carry = []
        for i, layer in enumerate(self.lstm):
            x, (h, c) = lstm_forward(x, layer, None if carry is None else carry[i])
            # gradients stop at window edges
            new_carry.append((h.detach(), c.detach()))
        return x, new_carry

    def project(self, o):
        return output_logits(o, self.embedding, self.output_proj)

    def hidden(self, tokens, carry=None):
        """Final hidden rows before the vocabulary projection."""
        tokens = np.asarray(tokens)
        if carry is not None:
            self._check_carry(carry, tokens.shape[0] if tokens.ndim == 2 else None)
        return self.recur(self.encode(tokens), carry)

    def forward(self, tokens, carry=None):
        """Logits ``(T, V)`` or ``(B, T, V)``; row ``t`` predicts token ``t+1``."""
        x, new_carry = self.hidden(tokens, carry)
        return self.project(x), new_carry

    __call__ = forward


def count_parameters(model: LanguageModel) -> int:
    """Walk every distinct parameter tensor and add up its size."""
    seen = {}
    for p in model.parameters():
        seen[id(p)] = int(np.prod(p.shape))
    return sum(seen.values())


def loss_all_positions(model: LanguageModel, tokens, carry=None) -> Tensor:
    """Mean cross-entropy of ``tokens[1:]`` given ``tokens[:-1]``, every position."""
    tokens = np.asarray(tokens)
    if tokens.shape[-1] < 2:
        raise DataError("loss needs at least two tokens (one input, one target)")
    logits, _ = model.forward(tokens[..., :-1], carry)
    return T.cross_entropy(logits, tokens[..., 1:])


def nll_final_position(model: LanguageModel, context, next_token, carry=None) -> float:
    """-log P(next_token | context) read from the last logits row only."""
    context = np.asarray(context)
    with T.no_grad():
        logits, _ = model.forward(context, carry)
    row = logits.data[-1].astype(np.float64)
    return float(-T.log_softmax(row)[int(next_token)])
