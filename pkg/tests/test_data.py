from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transfornn.data import (
    EOS_ID,
    UNK_ID,
    Vocabulary,
    build_vocab,
    load_vocab,
    read_text,
    save_vocab,
    tokenize,
)
from transfornn.errors import DataError, FormatError

FIXTURE = Path(__file__).parent / "fixtures" / "ptb_sample.txt"
FIXTURE_DIGEST = "e1c51967beb63a353089eb261789623b91fb709ca9a4a2da0ec46763f5f092b8"

words = st.text(alphabet="abcdef", min_size=1, max_size=3)
texts = st.lists(st.lists(words, max_size=6).map(" ".join), min_size=1, max_size=8)


def test_reserved_ids():
    v = build_vocab("a", 10)
    assert v.token_of[:3] == ["<unk>", "<bos>", "<eos>"]
    assert (v.unk_id, v.bos_id, v.eos_id) == (0, 1, 2)


def test_build_orders_by_frequency():
    v = build_vocab("a a b", 5)
    assert v.token_of == ["<unk>", "<bos>", "<eos>", "a", "b"]


def test_cap_drops_rare_words():
    v = build_vocab("a a b", 4)
    assert "b" not in v and v.lookup("b") == UNK_ID


def test_ties_are_lexicographic():
    v = build_vocab("x y x y", 10)
    assert v.token_of[3:] == ["x", "y"]


@settings(max_examples=40, deadline=None)
@given(texts, st.integers(4, 12))
def test_build_matches_sort_oracle(lines, cap):
    counts = Counter(w for line in lines for w in line.split())
    if not counts:
        with pytest.raises(DataError):
            build_vocab(lines, cap)
        return
    v = build_vocab(lines, cap)
    ranked = sorted(counts, key=lambda w: (-counts[w], w))
    assert v.token_of[3:] == ranked[: cap - 3]
    kept = [counts[w] for w in v.token_of[3:]]
    dropped = [counts[w] for w in ranked[cap - 3:]]
    assert not dropped or min(kept) >= max(dropped)


def test_build_errors():
    with pytest.raises(DataError):
        build_vocab("", 10)
    with pytest.raises(DataError):
        build_vocab("a b", 3)


def test_unk_in_text_is_not_counted():
    v = build_vocab("<unk> <unk> a", 10)
    assert v.token_of == ["<unk>", "<bos>", "<eos>", "a"]
    assert tokenize("<unk> a", v, add_eos_per_line=False).ids.tolist() == [UNK_ID, 3]


def test_tokenize_line():
    v = build_vocab("a b", 10)
    assert tokenize("a b\n", v).ids.tolist() == [v.lookup("a"), v.lookup("b"), EOS_ID]


def test_tokenize_oov():
    v = build_vocab("a b", 10)
    assert tokenize("a zebra b", v, add_eos_per_line=False).ids.tolist() == [3, UNK_ID, 4]


@settings(max_examples=40, deadline=None)
@given(texts, st.booleans())
def test_tokenize_length_and_round_trip(lines, eos):
    v = build_vocab(lines + ["a"], 1000)
    corpus = tokenize(lines, v, add_eos_per_line=eos)
    assert len(corpus) == sum(len(l.split()) for l in lines) + (len(lines) if eos else 0)
    assert np.all(corpus.ids < len(v))
    flat = [w for l in lines for w in l.split()]
    for w in flat:
        assert v.token_of[v.lookup(w)] == w


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab("c b a a", 10)
    path = tmp_path / "v.txt"
    save_vocab(v, path)
    assert path.read_text().splitlines()[:3] == ["<unk>", "<bos>", "<eos>"]
    assert load_vocab(path).id_of == v.id_of


def test_hand_written_vocab(tmp_path):
    path = tmp_path / "v.txt"
    path.write_text("<unk>\n<bos>\n<eos>\nthe\ncat\n")
    assert len(load_vocab(path)) == 5


def test_duplicate_token_on_load(tmp_path):
    path = tmp_path / "v.txt"
    path.write_text("<unk>\n<bos>\n<eos>\nthe\ncat\nthe\n")
    with pytest.raises(FormatError, match="v.txt:6:.*line 4"):
        load_vocab(path)


def test_bad_vocab_files(tmp_path):
    path = tmp_path / "v.txt"
    path.write_text("<unk>\n<bos>\n<eos>\ntwo words\n")
    with pytest.raises(FormatError, match="v.txt:4:"):
        load_vocab(path)
    path.write_text("the\n<unk>\n<bos>\n<eos>\n")
    with pytest.raises(FormatError):
        load_vocab(path)
    with pytest.raises(FormatError):
        Vocabulary(["<unk>", "<bos>", "<eos>", "a", "a"])


def test_fixture_digest_is_stable():
    lines = read_text(FIXTURE)
    vocab = build_vocab(lines, 40)
    first = tokenize(lines, vocab)
    again = tokenize(read_text(FIXTURE), build_vocab(read_text(FIXTURE), 40))
    assert first.source_digest == again.source_digest == FIXTURE_DIGEST
    assert len(first) == 90 and first.ids.dtype == np.int64
