from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import toy_pairs, write_corpus
from projsdpa.data import (
    EncodedSplit,
    Vocabulary,
    build_vocab,
    build_vocabs,
    copy_task_tokens,
    encode_pair,
    load_parallel_corpus,
    make_copy_task,
    split_dataset,
    tokenize,
)
from projsdpa.model import END_ID, PAD_ID, START_ID, UNK_ID, DataError


def test_tokenize():
    assert tokenize("Hello, World!") == ["hello", "world"]
    assert tokenize("Don't stop.") == ["don't", "stop"]
    assert tokenize("'quoted' words") == ["quoted", "words"]
    assert tokenize("¿Qué tal?") == ["qué", "tal"]
    assert tokenize("   ") == []


# --- corpus loading -----------------------------------------------------------


def test_load_single_pair(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("Hello.\tHola.\n", encoding="utf-8")
    assert list(load_parallel_corpus(p)) == [("Hello.", "Hola.")]


def test_load_skips_and_counts_malformed(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("Hello.\tHola.\nno tab here\n\tonly target\nGo.\tVe.\tCC-BY attribution\n\n", encoding="utf-8")
    corpus = load_parallel_corpus(p)
    assert list(corpus) == [("Hello.", "Hola."), ("Go.", "Ve.")]
    assert corpus.skipped == 2


def test_load_errors(tmp_path):
    with pytest.raises(DataError):
        load_parallel_corpus(tmp_path / "missing.tsv")
    (tmp_path / "bad.tsv").write_text("no tabs\nat all\n")
    with pytest.raises(DataError):
        load_parallel_corpus(tmp_path / "bad.tsv")
    (tmp_path / "bin.tsv").write_bytes(b"\xff\xfe\x00a\tb")
    with pytest.raises(DataError):
        load_parallel_corpus(tmp_path / "bin.tsv")


def test_load_full_scale_line_count(tmp_path):
    # corpus size used for the full-scale translation experiment
    assert len(load_parallel_corpus(write_corpus(tmp_path / "big.tsv", 118_000))) == 118_000


# --- vocabulary ---------------------------------------------------------------


def test_vocab_frequency_order():
    v = build_vocab(["a a b"], cap=6)
    assert v.id_of("a") == 4 and v.id_of("b") == 5 and len(v) == 6


def test_vocab_unk_and_tie_break():
    v = build_vocab(["y x", "z z"], cap=10)
    assert v.tokens[4:] == ["z", "x", "y"]
    assert v.id_of("never") == UNK_ID
    assert v.encode("x never") == [5, UNK_ID]


def test_vocab_cap():
    v = build_vocab(["c c c b b a"], cap=5)
    assert v.tokens[4:] == ["c"]
    with pytest.raises(ValueError):
        build_vocab(["a"], cap=4)
    with pytest.raises(DataError):
        build_vocab([], cap=10)


def test_vocab_rejects_bad_token_list():
    with pytest.raises(ValueError):
        Vocabulary(["a", "b"])
    with pytest.raises(ValueError):
        Vocabulary(["<pad>", "<start>", "<end>", "<unk>", "a", "a"])


def test_build_vocabs_separate_sides():
    src, tgt = build_vocabs([("the cat", "el gato")], cap=20)
    assert src.id_of("cat") != UNK_ID and src.id_of("gato") == UNK_ID
    assert tgt.id_of("gato") != UNK_ID


# --- encoding -----------------------------------------------------------------


def test_encode_empty_target():
    v = build_vocab(["a b"], 10)
    src, tin, tout = encode_pair(("a", ""), v, v, 5)
    assert tin.tolist() == [START_ID, 0, 0, 0, 0]
    assert tout.tolist() == [END_ID, 0, 0, 0, 0]
    assert src.tolist() == [v.id_of("a"), 0, 0, 0, 0]


def test_encode_truncates():
    words = " ".join(f"w{i}" for i in range(12))
    v = build_vocab([words], 20)
    src, tin, tout = encode_pair((words, words), v, v, 10)
    assert src.shape == tin.shape == tout.shape == (10,)
    assert PAD_ID not in src.tolist() and END_ID not in tout.tolist()
    assert tin[1:].tolist() == tout[:-1].tolist()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["el", "gato", "no", "llorar", "por", "favor", "it's"]), max_size=8))
def test_encode_round_trip(words):
    text = " ".join(words)
    v = build_vocab(["el gato no llorar por favor it's"], 20)
    _, tin, tout = encode_pair(("x", text), v, v, 10)
    assert v.decode(tout) == tokenize(text)
    assert v.decode(tin) == tokenize(text)[:9]


def test_encoded_split_batches():
    v = build_vocab(["a b c"], 10)
    split = EncodedSplit.from_pairs([("a", "b")] * 5, v, v, 4)
    sizes = [len(b) for b in split.batches(2)]
    assert sizes == [2, 2, 1]
    empty = EncodedSplit.from_pairs([], v, v, 4)
    assert len(empty) == 0 and list(empty.batches(2)) == []


# --- splitting ----------------------------------------------------------------


def test_split_counts():
    pairs = [(str(i), str(i)) for i in range(100)]
    tr, va, te = split_dataset(pairs, (0.7, 0.15, 0.15), seed=0)
    assert (len(tr), len(va), len(te)) == (70, 15, 15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 300), st.integers(0, 2**31))
def test_split_deterministic_and_exhaustive(n, seed):
    pairs = [(str(i % 7), "t") for i in range(n)]
    a = split_dataset(pairs, (0.7, 0.15, 0.15), seed)
    assert a == split_dataset(pairs, (0.7, 0.15, 0.15), seed)
    assert Counter(a[0] + a[1] + a[2]) == Counter(pairs)


def test_split_fraction_errors():
    for bad in [(0.5, 0.5), (0.7, 0.2, 0.2), (1.2, -0.1, -0.1)]:
        with pytest.raises(ValueError):
            split_dataset([("a", "b")], bad, 0)


# --- copy task ----------------------------------------------------------------


def test_copy_task_identity_and_determinism():
    pairs = make_copy_task(20, 8, 200, seed=3)
    assert all(s == t and len(s.split()) == 8 for s, t in pairs)
    assert pairs == make_copy_task(20, 8, 200, seed=3)
    assert pairs != make_copy_task(20, 8, 200, seed=4)


def test_copy_task_variable_lengths():
    lengths = {len(s.split()) for s, _ in make_copy_task(20, 8, 500, seed=0, min_len=2)}
    assert lengths == set(range(2, 9))
    with pytest.raises(ValueError):
        make_copy_task(20, 8, 1, min_len=9)
    with pytest.raises(ValueError):
        make_copy_task(4, 8, 1)


def test_copy_task_tokens_survive_tokenizer():
    for size in (5, 20, 40):
        names = copy_task_tokens(size)
        assert len(names) == size - 4
        assert tokenize(" ".join(names)) == names


def test_copy_task_uniform_histogram():
    # chi-square against uniform over the 16 symbols, 15 dof; 0.999 quantile is 37.7
    pairs = make_copy_task(20, 1, 10_000, seed=11)
    counts = Counter(s for s, _ in pairs)
    obs = np.array([counts[t] for t in copy_task_tokens(20)])
    exp = 10_000 / 16
    assert ((obs - exp) ** 2 / exp).sum() < 37.7


def test_toy_corpus_builds_reasonable_vocab():
    src, tgt = build_vocabs(toy_pairs(500), 15000)
    assert 20 < len(src) < 60 and 20 < len(tgt) < 60
