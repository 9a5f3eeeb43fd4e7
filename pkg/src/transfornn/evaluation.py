"""Perplexity under both inference protocols, N-best reranking and WER."""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .data import BOS_ID, EOS_ID, Vocabulary
from .errors import DataError, FormatError
from .models import LanguageModel


def _nll_rows(logits: np.ndarray, targets) -> np.ndarray:
    logp = T.log_softmax(np.asarray(logits, dtype=np.float64))
    targets = np.asarray(targets)
    return -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]


def _nll_all(model: LanguageModel, ids: np.ndarray, window: int, batch_size: int) -> np.ndarray:
    """Non-overlapping windows, every position scored, context cut at window start."""
    n_pred = len(ids) - 1
    starts = range(0, n_pred, window)
    out = np.empty(n_pred, dtype=np.float64)
    if model.recurrent:
        carry = None
        for s in starts:
            e = min(s + window, n_pred)
            logits, carry = model.forward(ids[s:e], carry)
            out[s:e] = _nll_rows(logits.data, ids[s + 1:e + 1])
        return out
    full = n_pred // window
    for b in range(0, full, batch_size):
        chunk = range(b, min(b + batch_size, full))
        inputs = np.stack([ids[k * window:(k + 1) * window] for k in chunk])
        targets = np.stack([ids[k * window + 1:(k + 1) * window + 1] for k in chunk])
        logits, _ = model.forward(inputs)
        out[chunk.start * window:chunk.stop * window] = _nll_rows(logits.data, targets).reshape(-1)
    if full * window < n_pred:
        s = full * window
        logits, _ = model.forward(ids[s:n_pred])
        out[s:] = _nll_rows(logits.data, ids[s + 1:])
    return out


def _final_rows(model: LanguageModel, ids: np.ndarray, window: int, batch_size: int) -> np.ndarray:
    """Final-position representation for every prediction point.

    Row ``i-1`` is the top of the Transformer stack at the last position of
    the context ``ids[max(0, i-window):i]``.
    """
    n_pred = len(ids) - 1
    rows = None
    head = min(window - 1, n_pred)
    for i in range(1, head + 1):
        z = model.encode(ids[:i]).data[-1]
        if rows is None:
            rows = np.empty((n_pred, z.shape[-1]), dtype=z.dtype)
        rows[i - 1] = z
    if n_pred >= window:
        contexts = sliding_window_view(ids[:n_pred], window)
        for b in range(0, len(contexts), batch_size):
            z = model.encode(contexts[b:b + batch_size]).data[:, -1]
            if rows is None:
                rows = np.empty((n_pred, z.shape[-1]), dtype=z.dtype)
            rows[window - 1 + b:window - 1 + b + len(z)] = z
    return rows


def _nll_final(model: LanguageModel, ids: np.ndarray, window: int, batch_size: int) -> np.ndarray:
    rows = _final_rows(model, ids, window, batch_size)
    n_pred = len(ids) - 1
    out = np.empty(n_pred, dtype=np.float64)
    carry = None
    for s in range(0, n_pred, max(window, batch_size)):
        e = min(s + max(window, batch_size), n_pred)
        o, carry = model.recur(T.Tensor._wrap(rows[s:e]), carry)
        out[s:e] = _nll_rows(model.project(o).data, ids[s + 1:e + 1])
    return out


def token_nll(model: LanguageModel, corpus, mode="all", window=64, batch_size=64) -> np.ndarray:
    """Per-token negative log-likelihood (float64) of ``corpus[1:]``."""
    ids = np.asarray(corpus, dtype=np.int64)
    if len(ids) < 2:
        raise DataError("perplexity needs at least two tokens")
    if window < 1:
        raise ValueError("window must be >= 1")
    with T.no_grad():
        if mode == "all":
            return _nll_all(model, ids, window, batch_size)
        if mode == "final":
            return _nll_final(model, ids, window, batch_size)
    raise ValueError(f"unknown mode {mode!r}; expected 'all' or 'final'")


def perplexity(model: LanguageModel, corpus, mode="all", window=64, batch_size=64) -> float:
    """exp(mean NLL) over every token after the first.

    ``mode="all"`` scores every position of non-overlapping windows.
    ``mode="final"`` slides the window one token at a time and scores only
    its last position, so it runs one window per token: roughly ``window``
    times the work of ``"all"``.  Recurrent layers carry state through the
    whole corpus in both modes.
    """
    nll = token_nll(model, corpus, mode, window, batch_size)
    mean = math.fsum(nll) / len(nll)
    return math.exp(mean) if mean < 700 else math.inf


# ---------------------------------------------------------------------------
# reranking
# ---------------------------------------------------------------------------

@dataclass
class NBestList:
    utterance_id: str
    hypotheses: list  # (acoustic log score, [words])

    def __post_init__(self):
        if not self.hypotheses:
            raise DataError(f"N-best list for {self.utterance_id!r} is empty")
        for score, _ in self.hypotheses:
            if not math.isfinite(score):
                raise DataError(f"non-finite acoustic score in {self.utterance_id!r}")


def sentence_logprob(model: LanguageModel, words, vocab: Vocabulary) -> float:
    """log P(words, </s> | <s>) with a fresh recurrent state."""
    ids = np.asarray([BOS_ID] + vocab.encode(words) + [EOS_ID])
    with T.no_grad():
        logits, _ = model.forward(ids[:-1])
    return float(-_nll_rows(logits.data, ids[1:]).sum())


def lm_scores(nbest: NBestList, model: LanguageModel, vocab: Vocabulary) -> np.ndarray:
    return np.array([sentence_logprob(model, words, vocab) for _, words in nbest.hypotheses])


def rerank(nbest: NBestList, model: Optional[LanguageModel], vocab: Optional[Vocabulary],
           lm_weight: float = 0.5, scores=None) -> int:
    """Index maximizing ``acoustic + lm_weight * lm``; ties keep the earlier index.

    ``scores`` may hold precomputed LM log-probabilities for the hypotheses.
    """
    if lm_weight < 0:
        raise ValueError("lm_weight must be non-negative")
    if not nbest.hypotheses:
        raise DataError("cannot rerank an empty N-best list")
    acoustic = np.array([s for s, _ in nbest.hypotheses], dtype=np.float64)
    if lm_weight == 0:
        return int(np.argmax(acoustic))
    if scores is None:
        scores = lm_scores(nbest, model, vocab)
    return int(np.argmax(acoustic + lm_weight * np.asarray(scores, dtype=np.float64)))


# ---------------------------------------------------------------------------
# word error rate
# ---------------------------------------------------------------------------

@dataclass
class WerStats:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    reference_length: int = 0

    @property
    def errors(self):
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self):
        if self.reference_length == 0:
            raise DataError("WER is undefined for an empty reference")
        return self.errors / self.reference_length

    def __add__(self, other):
        return WerStats(self.substitutions + other.substitutions,
                        self.insertions + other.insertions,
                        self.deletions + other.deletions,
                        self.reference_length + other.reference_length)


def wer(reference, hypothesis) -> WerStats:
    """Levenshtein alignment with unit costs.

    Each DP cell keeps its cheapest (S, I, D) triple; ties on cost go to the
    triple with more substitutions, so an insertion/deletion pair never wins
    over an equally expensive substitution.  Since the preference is part of
    the cell ordering it holds globally, not just along one backtrace.
    """
    ref, hyp = list(reference), list(hypothesis)
    if not ref:
        raise DataError("WER is undefined for an empty reference")

    def key(t):
        return (t[0] + t[1] + t[2], -t[0])

    prev = [(0, j, 0) for j in range(len(hyp) + 1)]
    for i, r in enumerate(ref, start=1):
        row = [(0, 0, i)]
        for j, h in enumerate(hyp, start=1):
            s, a, d = prev[j - 1]
            diag = (s + (r != h), a, d)
            s, a, d = prev[j]
            up = (s, a, d + 1)
            s, a, d = row[j - 1]
            left = (s, a + 1, d)
            row.append(min(diag, up, left, key=key))
        prev = row
    s, ins, dele = prev[-1]
    return WerStats(s, ins, dele, len(ref))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def read_references(path) -> dict:
    """``<utt-id>\\t<words...>`` per line."""
    refs = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        utt, sep, words = line.partition("\t")
        if not sep or not utt:
            raise FormatError("expected '<utt-id><TAB><words>'", path, lineno)
        if utt in refs:
            raise FormatError(f"duplicate utterance id {utt!r}", path, lineno)
        refs[utt] = words.split()
    return refs


def read_nbest(path) -> list:
    """``<utt-id>\\t<acoustic-log-score>\\t<words...>``; one id's lines contiguous."""
    lists = []
    done = set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3) or not parts[0]:
            raise FormatError("expected '<utt-id><TAB><score><TAB><words>'", path, lineno)
        utt = parts[0]
        try:
            score = float(parts[1])
        except ValueError:
            raise FormatError(f"bad acoustic score {parts[1]!r}", path, lineno) from None
        if not math.isfinite(score):
            raise FormatError(f"non-finite acoustic score {parts[1]!r}", path, lineno)
        words = parts[2].split() if len(parts) == 3 else []
        if lists and lists[-1].utterance_id == utt:
            lists[-1].hypotheses.append((score, words))
            continue
        if utt in done:
            raise FormatError(f"hypotheses for {utt!r} are not contiguous", path, lineno)
        if lists:
            done.add(lists[-1].utterance_id)
        lists.append(NBestList(utt, [(score, words)]))
    return lists


@dataclass
class RerankReport:
    rows: list  # (utt-id, chosen index, utterance WER)
    total: WerStats

    @property
    def wer(self):
        return self.total.wer

    def lines(self):
        out = [f"{utt}\t{idx}\t{w:.6f}" for utt, idx, w in self.rows]
        out.append(f"TOTAL\t{self.wer:.6f}")
        return out


def corpus_wer(refs: dict, nbests, model, vocab, lm_weight=0.5, scores=None) -> RerankReport:
    """Rerank every utterance and pool the edit counts.

    ``scores`` optionally maps utterance id to precomputed LM scores so a
    weight sweep needs only one LM pass.
    """
    missing = [nb.utterance_id for nb in nbests if nb.utterance_id not in refs]
    if missing:
        raise DataError(f"no reference for utterance ids: {', '.join(missing)}")
    total = WerStats()
    rows = []
    for nb in nbests:
        utt_scores = None if scores is None else scores[nb.utterance_id]
        idx = rerank(nb, model, vocab, lm_weight, utt_scores)
        stats = wer(refs[nb.utterance_id], nb.hypotheses[idx][1])
        total = total + stats
        rows.append((nb.utterance_id, idx, stats.wer))
    return RerankReport(rows, total)


def sweep_lm_weight(refs, nbests, model, vocab, weights=None):
    """Evaluate ``corpus_wer`` on a weight grid; returns [(weight, report)]."""
    if weights is None:
        weights = [round(0.1 * k, 1) for k in range(11)]
    scores = {nb.utterance_id: lm_scores(nb, model, vocab) for nb in nbests}
    return [(w, corpus_wer(refs, nbests, model, vocab, w, scores)) for w in weights]
