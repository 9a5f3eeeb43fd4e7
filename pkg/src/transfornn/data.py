"""Vocabulary construction and whitespace tokenization of PTB-style text."""

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataError, FormatError

UNK, BOS, EOS = "<unk>", "<bos>", "<eos>"
RESERVED = (UNK, BOS, EOS)
UNK_ID, BOS_ID, EOS_ID = 0, 1, 2


@dataclass
class Vocabulary:
    token_of: list
    id_of: dict = field(init=False)

    def __post_init__(self):
        if list(self.token_of[:3]) != list(RESERVED):
            raise FormatError(f"vocabulary must start with {', '.join(RESERVED)}")
        self.id_of = {}
        for i, tok in enumerate(self.token_of):
            if tok in self.id_of:
                raise FormatError(f"duplicate token {tok!r} at id {i}")
            self.id_of[tok] = i

    unk_id = UNK_ID
    bos_id = BOS_ID
    eos_id = EOS_ID

    def __len__(self):
        return len(self.token_of)

    def __contains__(self, token):
        return token in self.id_of

    def lookup(self, token: str) -> int:
        return self.id_of.get(token, UNK_ID)

    def encode(self, words: Iterable[str]) -> list:
        return [self.id_of.get(w, UNK_ID) for w in words]

    def decode(self, ids) -> list:
        return [self.token_of[int(i)] for i in ids]


@dataclass
class Corpus:
    ids: np.ndarray
    source_digest: str

    def __len__(self):
        return len(self.ids)


def _lines(text):
    if isinstance(text, str):
        return text.splitlines()
    return list(text)


def build_vocab(text, max_size: int) -> Vocabulary:
    """Keep the ``max_size - 3`` most frequent words; ties go lexicographically."""
    if max_size <= 3:
        raise DataError("max_size must leave room beyond the 3 reserved tokens")
    counts = Counter(w for line in _lines(text) for w in line.split())
    for tok in RESERVED:
        counts.pop(tok, None)
    if not counts:
        raise DataError("cannot build a vocabulary from empty text")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(list(RESERVED) + [w for w, _ in ranked[: max_size - 3]])


def tokenize(text, vocab: Vocabulary, add_eos_per_line=True) -> Corpus:
    ids = []
    for line in _lines(text):
        ids.extend(vocab.encode(line.split()))
        if add_eos_per_line:
            ids.append(EOS_ID)
    arr = np.asarray(ids, dtype=np.int64)
    digest = hashlib.sha256(arr.astype("<i8").tobytes()).hexdigest()
    return Corpus(arr, digest)


def read_text(path) -> list:
    return Path(path).read_text(encoding="utf-8").splitlines()


def save_vocab(vocab: Vocabulary, path):
    Path(path).write_text("".join(tok + "\n" for tok in vocab.token_of), encoding="utf-8")


def load_vocab(path) -> Vocabulary:
    tokens = []
    seen = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        tok = line.strip()
        if not tok or len(tok.split()) != 1:
            raise FormatError("expected exactly one token per line", path, lineno)
        if tok in seen:
            raise FormatError(f"duplicate token {tok!r} (first on line {seen[tok]})", path, lineno)
        seen[tok] = lineno
        tokens.append(tok)
    try:
        return Vocabulary(tokens)
    except FormatError as exc:
        raise FormatError(str(exc), path) from None
