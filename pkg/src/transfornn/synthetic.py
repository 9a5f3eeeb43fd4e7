"""Synthetic corpora, a hand-wired bigram LM and an N-best fixture.

These exist so that training, evaluation and reranking can be exercised
end to end without any external data.
"""

import math
from pathlib import Path

import numpy as np

from .data import BOS_ID, EOS_ID, RESERVED, Vocabulary
from .evaluation import NBestList
from .models import LanguageModel, ModelConfig


class MarkovGrammar:
    """Third-order Markov source over ``n_symbols`` symbols.

    Given the last three symbols ``(a, b, c)`` (``c`` most recent) the next
    symbol repeats ``a`` with probability ``copy``; otherwise it is one of
    ``fanout`` successors owned by ``c``, where ``b`` picks the preferred
    one.  A ``noise`` share of the mass is spread uniformly.
    """

    def __init__(self, n_symbols=50, fanout=4, copy=0.4, preferred=0.7, noise=0.05, seed=0):
        rng = np.random.default_rng(seed)
        self.n = n_symbols
        self.fanout = fanout
        self.successors = np.stack([rng.choice(n_symbols, fanout, replace=False) for _ in range(n_symbols)])
        self.copy = copy
        self.preferred = preferred
        self.noise = noise

    def distribution(self, a, b, c) -> np.ndarray:
        """P(next | a, b, c)."""
        p = np.full(self.n, self.noise / self.n)
        p[a] += self.copy
        rest = 1.0 - self.noise - self.copy
        cand = self.successors[c]
        p[cand] += rest * (1 - self.preferred) / self.fanout
        p[cand[b % self.fanout]] += rest * self.preferred
        return p

    def sample(self, length, seed=0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        out = list(rng.integers(0, self.n, size=3))
        table = {}
        while len(out) < length:
            key = (out[-3], out[-2], out[-1])
            if key not in table:
                table[key] = np.cumsum(self.distribution(*key))
            out.append(int(np.searchsorted(table[key], rng.random() * table[key][-1], side="right")))
        return np.asarray(out[:length], dtype=np.int64)


def unigram_perplexity(train_ids, eval_ids, vocab_size, smoothing=1.0) -> float:
    """Add-``smoothing`` unigram estimated on ``train_ids``, scored on ``eval_ids[1:]``."""
    counts = np.bincount(np.asarray(train_ids), minlength=vocab_size).astype(np.float64) + smoothing
    logp = np.log(counts / counts.sum())
    targets = np.asarray(eval_ids)[1:]
    return math.exp(-logp[targets].mean())


def bigram_log_probs(sentences, vocab: Vocabulary, smoothing=0.01) -> np.ndarray:
    """Add-``smoothing`` bigram table over sentences wrapped in <bos>/<eos>."""
    v = len(vocab)
    counts = np.zeros((v, v))
    for words in sentences:
        ids = [BOS_ID] + vocab.encode(words) + [EOS_ID]
        for a, b in zip(ids, ids[1:]):
            counts[a, b] += 1
    counts += smoothing
    return np.log(counts / counts.sum(axis=1, keepdims=True))


def bigram_lstm(log_probs: np.ndarray, gate=20.0, cell=10.0) -> LanguageModel:
    """An LSTM LM wired by hand to reproduce a bigram table.

    One-hot embeddings drive saturated gates so the hidden state is
    ``tanh(tanh(cell))`` times the one-hot of the previous token; the untied
    projection rescales the table rows back to log-probabilities.
    """
    v = log_probs.shape[0]
    cfg = ModelConfig("lstm", v, d=v, m_layers=1, lstm_hidden=v, tied=False,
                      use_pos=False, embed_scale=False)
    model = LanguageModel(cfg)
    model.embedding.weight.data = np.eye(v, dtype=np.float32)
    lstm = model.lstm[0]
    w_x = np.zeros((v, 4 * v), dtype=np.float32)
    w_x[:, 2 * v:3 * v] = cell * np.eye(v)
    lstm.w_x.data = w_x
    lstm.w_h.data = np.zeros((v, 4 * v), dtype=np.float32)
    b = np.zeros(4 * v, dtype=np.float32)
    b[:v] = gate
    b[v:2 * v] = -gate
    b[3 * v:] = gate
    lstm.b.data = b
    amplitude = math.tanh(math.tanh(cell))
    model.output_proj.data = (log_probs / amplitude).astype(np.float32)
    return model


def rerank_fixture(n_utts=20, n_words=12, n_noise=6, n_hyps=4, acoustic_gap=1.0, seed=0):
    """References, N-best lists and a vocabulary for the reranking harness.

    In every list the reference is present but never acoustically best: a
    distractor with one word swapped for a noise word (never seen in any
    reference) leads by ``acoustic_gap``.
    """
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(n_words)]
    noise = [f"z{i}" for i in range(n_noise)]
    vocab = Vocabulary(list(RESERVED) + words + noise)
    refs = {}
    nbests = []
    for u in range(n_utts):
        utt = f"utt{u:03d}"
        length = int(rng.integers(4, 8))
        ref = [words[int(rng.integers(n_words))]]
        for _ in range(length - 1):
            # neighbouring words stay close in index: a learnable bigram structure
            ref.append(words[(words.index(ref[-1]) + int(rng.integers(1, 3))) % n_words])
        refs[utt] = ref
        hyps = []
        for _ in range(n_hyps - 1):
            h = list(ref)
            for pos in rng.choice(len(h), size=int(rng.integers(1, 3)), replace=False):
                h[pos] = noise[int(rng.integers(n_noise))]
            hyps.append(h)
        best_distractor = float(-rng.uniform(0, 1))
        scored = [(best_distractor, hyps[0]), (best_distractor - acoustic_gap, ref)]
        scored += [(best_distractor - acoustic_gap - float(rng.uniform(0.1, 2.0)), h) for h in hyps[1:]]
        order = rng.permutation(len(scored))
        nbests.append(NBestList(utt, [scored[i] for i in order]))
    return refs, nbests, vocab


def write_rerank_fixture(directory, **kwargs):
    """Write refs/N-best/vocab files plus a bigram-memorizing checkpoint.

    Returns a dict of paths.
    """
    from .checkpoint import save_checkpoint
    from .data import save_vocab

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    refs, nbests, vocab = rerank_fixture(**kwargs)
    paths = {k: directory / n for k, n in
             [("refs", "refs.txt"), ("nbest", "nbest.txt"), ("vocab", "vocab.txt"), ("model", "bigram.tfrn")]}
    paths["refs"].write_text("".join(f"{u}\t{' '.join(w)}\n" for u, w in refs.items()), encoding="utf-8")
    lines = [f"{nb.utterance_id}\t{s!r}\t{' '.join(w)}\n" for nb in nbests for s, w in nb.hypotheses]
    paths["nbest"].write_text("".join(lines), encoding="utf-8")
    save_vocab(vocab, paths["vocab"])
    save_checkpoint(bigram_lstm(bigram_log_probs(refs.values(), vocab)), paths["model"])
    return paths
