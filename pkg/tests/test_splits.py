import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from mmrec.splits import (
    SamplingError,
    SeededRng,
    Split,
    make_batches,
    sample_modalities,
    sample_modalities_batch,
    sample_negatives,
    sample_negatives_batch,
    split_cold,
    split_warm,
)

from conftest import make_dataset


def one_user(n_items, n_pos):
    return make_dataset([(0, i) for i in range(n_pos)], 1, n_items)


def test_warm_sizes():
    split = split_warm(one_user(12, 10), seed=0)
    assert (len(split.train), len(split.val), len(split.test)) == (8, 1, 1)
    split = split_warm(one_user(12, 5), seed=0)
    assert (len(split.train), len(split.val), len(split.test)) == (5, 0, 0)


def test_warm_partition_and_determinism(small_synth):
    a = split_warm(small_synth, seed=4)
    b = split_warm(small_synth, seed=4)
    c = split_warm(small_synth, seed=5)
    for name in ("train", "val", "test"):
        np.testing.assert_array_equal(a.part(name), b.part(name))
    assert any(not np.array_equal(a.part(n), c.part(n)) for n in ("train", "val", "test"))
    union = np.concatenate([a.train, a.val, a.test])
    assert len({tuple(p) for p in union}) == len(union) == small_synth.n_interactions
    np.testing.assert_array_equal(np.sort(union.view("i8,i8"), axis=0), np.sort(small_synth.pairs().view("i8,i8"), axis=0))


@pytest.mark.parametrize("entity,col", [("user", 0), ("item", 1)])
def test_cold_partitions_disjoint(small_synth, entity, col):
    split = split_cold(small_synth, entity, seed=1)
    sets = {n: set(split.part(n)[:, col].tolist()) for n in ("train", "val", "test")}
    assert not sets["train"] & sets["val"]
    assert not sets["train"] & sets["test"]
    assert not sets["val"] & sets["test"]
    n = small_synth.n_users if entity == "user" else small_synth.n_items
    assert sorted(np.concatenate(list(split.partitions.values())).tolist()) == list(range(n))
    assert len(split.partitions["test"]) == n // 10


def test_cold_too_small():
    with pytest.raises(ValueError):
        split_cold(make_dataset([(0, 0), (1, 1)], 2, 2), "user")


def test_split_save_load(tmp_path, small_synth):
    split = split_cold(small_synth, "item", seed=2)
    split.save(tmp_path)
    back = Split.load(tmp_path)
    assert back.scenario == "item-cold"
    for n in ("train", "val", "test"):
        np.testing.assert_array_equal(back.part(n), split.part(n))
        np.testing.assert_array_equal(back.partitions[n], split.partitions[n])
    np.testing.assert_array_equal(back.candidate_items("test"), np.sort(split.partitions["test"]))


def test_seeded_rng_streams():
    a = SeededRng(3, "x").gen.integers(0, 1 << 30, 5)
    b = SeededRng(3, "x").gen.integers(0, 1 << 30, 5)
    c = SeededRng(3, "y").gen.integers(0, 1 << 30, 5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(SeededRng(3, "x").child("k").gen.random(3), SeededRng(3, "x").gen.random(3))


def test_forced_negatives():
    R = sp.csr_matrix(np.array([[1] * 7 + [0] + [1] * 2], dtype=np.float32))
    assert sample_negatives(0, 3, R, n_items=10, rng=SeededRng(0)) == [7, 7, 7]


def test_all_items_positive_raises():
    R = sp.csr_matrix(np.ones((1, 4), dtype=np.float32))
    with pytest.raises(SamplingError):
        sample_negatives(0, 2, R, rng=SeededRng(0))


def test_negatives_uniform():
    # one user with 4 candidate negatives; 10^5 draws, each within 2% of 25%
    R = sp.csr_matrix((np.ones(6), ([0] * 6, [0, 1, 2, 3, 4, 5])), shape=(1, 10))
    draws = sample_negatives_batch(np.zeros(10**5, dtype=np.int64), 1, R, SeededRng(11))
    counts = np.bincount(draws.ravel(), minlength=10)
    assert counts[:6].sum() == 0
    freq = counts[6:] / draws.size
    assert np.all(np.abs(freq - 0.25) <= 0.02 * 0.25)


def test_negatives_respect_candidates():
    R = sp.csr_matrix((np.ones(2), ([0, 1], [0, 3])), shape=(2, 10))
    cand = np.array([0, 3, 5, 6])
    draws = sample_negatives_batch(np.array([0, 1] * 200), 4, R, SeededRng(1), candidates=cand)
    assert set(draws.ravel().tolist()) <= {0, 3, 5, 6}
    assert not np.any(draws[::2] == 0)
    assert not np.any(draws[1::2] == 3)


@given(
    st.integers(2, 30),
    st.lists(st.integers(0, 29), max_size=25),
    st.integers(1, 12),
    st.integers(0, 2**31),
)
def test_negatives_never_positive(n_items, pos, n_neg, seed):
    pos = sorted({p for p in pos if p < n_items})
    if len(pos) >= n_items:
        pos = pos[:-1]
    R = sp.csr_matrix((np.ones(len(pos)), ([0] * len(pos), pos)), shape=(1, n_items))
    out = sample_negatives(0, n_neg, R, rng=SeededRng(seed))
    assert len(out) == n_neg
    assert not set(out) & set(pos)
    assert all(0 <= x < n_items for x in out)


def test_modality_pair_frequencies():
    mods = ["a", "b", "c", "d", "e"]
    rng = SeededRng(5)
    counts = {}
    n = 10**5
    for _ in range(n):
        pair = frozenset(sample_modalities(mods, 2, rng))
        counts[pair] = counts.get(pair, 0) + 1
    assert len(counts) == 10
    for c in counts.values():
        assert abs(c / n - 0.1) <= 0.01


def test_modality_batch_respects_availability():
    avail = np.array([[True, False, True, True], [False, True, True, False]] * 500)
    out = sample_modalities_batch(avail, 2, SeededRng(0))
    assert out.shape == (1000, 2)
    rows = np.arange(1000)[:, None]
    assert avail[rows, out].all()
    assert np.all(out[:, 0] != out[:, 1])
    assert set(map(tuple, np.sort(out[1::2], axis=1))) == {(1, 2)}
    with pytest.raises(SamplingError):
        sample_modalities_batch(np.array([[True, False]]), 2, SeededRng(0))
    with pytest.raises(SamplingError):
        sample_modalities(["a"], 2, SeededRng(0))


def test_batches():
    pairs = np.arange(20).reshape(10, 2)
    sizes = [len(b) for b in make_batches(pairs, 4, 0)]
    assert sizes == [4, 4, 2]
    got = np.concatenate(list(make_batches(pairs, 4, 0)))
    assert sorted(map(tuple, got)) == sorted(map(tuple, pairs))
    a = np.concatenate(list(make_batches(pairs, 3, 9)))
    np.testing.assert_array_equal(a, np.concatenate(list(make_batches(pairs, 3, 9))))
