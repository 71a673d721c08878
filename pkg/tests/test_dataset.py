import json
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmrec.dataset import (
    DatasetError,
    ModalityStore,
    binarize_feedback,
    core_filter,
    load_dataset,
    read_mmr1,
    save_dataset,
    write_matrix_csv,
    write_mmr1,
)

from conftest import make_dataset


def write_manifest_dir(d, users, items, lines, modalities=()):
    (d / "users.tsv").write_text("".join(f"{u}\n" for u in users))
    (d / "items.tsv").write_text("".join(f"{i}\n" for i in items))
    (d / "interactions.tsv").write_text("".join(line + "\n" for line in lines))
    man = {
        "name": "t",
        "users_file": "users.tsv",
        "items_file": "items.tsv",
        "interactions_file": "interactions.tsv",
        "modalities": list(modalities),
    }
    (d / "dataset.json").write_text(json.dumps(man))
    return d / "dataset.json"


def test_load_counts(tmp_path):
    write_mmr1(tmp_path / "text.mmr1", np.ones((4, 8)))
    lines = ["a\tx", "a\ty", "b\tz", "c\tw", "c\tx"]
    path = write_manifest_dir(
        tmp_path, "abc", "xyzw", lines, [{"name": "text", "entity": "item", "dim": 8, "file": "text.mmr1", "format": "mmr1"}]
    )
    data = load_dataset(path)
    assert (data.n_users, data.n_items, data.n_interactions) == (3, 4, 5)
    assert data.modality("item", "text").dim == 8
    assert data.modality_names("item") == ["interactions", "text"]


def test_duplicate_pair_stored_once(tmp_path):
    data = load_dataset(write_manifest_dir(tmp_path, "ab", "xy", ["a\tx", "a\tx", "b\ty"]))
    assert data.n_interactions == 2
    assert set(data.interactions.data) == {1.0}


def test_dimension_mismatch(tmp_path):
    write_mmr1(tmp_path / "m.mmr1", np.zeros((2, 8)))
    path = write_manifest_dir(
        tmp_path, "ab", "xy", ["a\tx"], [{"name": "m", "entity": "item", "dim": 16, "file": "m.mmr1", "format": "mmr1"}]
    )
    with pytest.raises(DatasetError, match="dimension mismatch"):
        load_dataset(path)


def test_missing_file_unknown_and_duplicate_ids(tmp_path):
    with pytest.raises(DatasetError, match="manifest not found"):
        load_dataset(tmp_path / "nope.json")
    path = write_manifest_dir(tmp_path, "ab", "xy", ["a\tq"])
    with pytest.raises(DatasetError, match="unknown item id"):
        load_dataset(path)
    path = write_manifest_dir(tmp_path, ["a", "a"], "xy", ["a\tx"])
    with pytest.raises(DatasetError, match="duplicate raw id"):
        load_dataset(path)
    path = write_manifest_dir(
        tmp_path, "ab", "xy", ["a\tx"], [{"name": "m", "entity": "item", "dim": 2, "file": "gone.mmr1"}]
    )
    with pytest.raises(DatasetError, match="missing file"):
        load_dataset(path)


def test_csv_matrix_and_mask(tmp_path):
    write_matrix_csv(tmp_path / "g.csv", ["y", "x"], np.array([[1.0, 2.0], [3.0, 4.0]]))
    (tmp_path / "g.mask").write_text("1\n0\n")
    path = write_manifest_dir(
        tmp_path,
        "ab",
        "xy",
        ["a\tx"],
        [{"name": "g", "entity": "item", "dim": 2, "file": "g.csv", "format": "csv", "mask_file": "g.mask"}],
    )
    store = load_dataset(path).modality("item", "g")
    np.testing.assert_array_equal(store.matrix, [[3.0, 4.0], [1.0, 2.0]])
    np.testing.assert_array_equal(store.available, [True, False])


def test_threshold_in_manifest(tmp_path):
    path = write_manifest_dir(tmp_path, "ab", "xy", ["a\tx\t5", "a\ty\t2", "b\ty\t3"])
    man = json.loads(path.read_text())
    man["threshold"] = 3
    path.write_text(json.dumps(man))
    assert load_dataset(path).n_interactions == 2


def test_mmr1_roundtrip_and_corruption(tmp_path):
    m = np.random.default_rng(1).normal(size=(3, 5)).astype(np.float32)
    write_mmr1(tmp_path / "m.mmr1", m)
    raw = (tmp_path / "m.mmr1").read_bytes()
    assert raw[:4] == b"MMR1"
    np.testing.assert_array_equal(read_mmr1(tmp_path / "m.mmr1"), m)
    (tmp_path / "m.mmr1").write_bytes(raw[:-4])
    with pytest.raises(DatasetError):
        read_mmr1(tmp_path / "m.mmr1")


def test_modality_store_rejects_nan_in_available_rows():
    m = np.array([[np.nan], [1.0]])
    ModalityStore("x", "item", m, np.array([False, True]))
    with pytest.raises(DatasetError):
        ModalityStore("x", "item", m, np.array([True, True]))


def test_save_load_idempotent(tmp_path, toy):
    save_dataset(toy, tmp_path / "a")
    once = load_dataset(tmp_path / "a" / "dataset.json")
    save_dataset(once, tmp_path / "b")
    twice = load_dataset(tmp_path / "b" / "dataset.json")
    assert once.user_ids == twice.user_ids == toy.user_ids
    assert once.item_ids == twice.item_ids
    np.testing.assert_array_equal(once.pairs(), toy.pairs())
    np.testing.assert_array_equal(twice.pairs(), toy.pairs())
    for a, b in zip(toy.item_modalities, twice.item_modalities):
        np.testing.assert_array_equal(a.matrix, b.matrix)
    for name in ("users.tsv", "interactions.tsv", "dataset.json", "item_text.mmr1"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_profile_count_matches_nonzero_rows(toy):
    R = toy.interactions
    assert toy.profile_available("user").sum() == np.count_nonzero(np.diff(R.indptr))
    empty = make_dataset([(0, 0)], 3, 2)
    assert empty.profile_available("user").tolist() == [True, False, False]
    assert empty.profile_available("item").tolist() == [True, False]


def test_binarize_feedback():
    assert binarize_feedback([("u1", "i1", 5), ("u1", "i2", 2)], 3) == [("u1", "i1")]
    assert binarize_feedback([("u1", "i1", 2), ("u2", "i1", 2)], 2) == [("u1", "i1"), ("u2", "i1")]
    triples = [("a", "b", -1e300), ("c", "d", 0.0)]
    assert binarize_feedback(triples, float("-inf")) == [("a", "b"), ("c", "d")]
    assert binarize_feedback([], 3) == []


def naive_core(pairs, k_user, k_item):
    """Alternate full passes of user then item deletion until nothing changes."""
    cur = set(pairs)
    while True:
        before = set(cur)
        ucount = {}
        for u, _ in cur:
            ucount[u] = ucount.get(u, 0) + 1
        cur = {(u, i) for u, i in cur if ucount[u] >= k_user}
        icount = {}
        for _, i in cur:
            icount[i] = icount.get(i, 0) + 1
        cur = {(u, i) for u, i in cur if icount[i] >= k_item}
        if cur == before:
            return cur


def test_core_filter_examples():
    grid = [(u, i) for u in range(5) for i in range(5)]
    assert core_filter(grid, 5, 5) == grid
    assert core_filter([("u", "i")], 5, 5) == []
    # removing item 5 (one interaction) drops user 0 below 2, which then drops item 0
    chain = [(0, 5), (0, 0), (1, 0), (1, 1), (2, 1), (2, 0), (1, 2), (2, 2)]
    out = core_filter(chain, 2, 2)
    assert set(out) == naive_core(chain, 2, 2)
    assert (0, 0) not in out


def test_core_filter_matches_oracle_on_random_graphs():
    rng = random.Random(0)
    for _ in range(100):
        n_u, n_i = rng.randint(1, 12), rng.randint(1, 12)
        pairs = [(rng.randrange(n_u), rng.randrange(n_i)) for _ in range(rng.randint(0, 60))]
        ku, ki = rng.randint(1, 4), rng.randint(1, 4)
        out = core_filter(pairs, ku, ki)
        assert set(out) == naive_core(pairs, ku, ki)
        assert len(out) == len(set(out))


@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), max_size=60), st.integers(1, 4), st.integers(1, 4))
def test_core_filter_fixed_point(pairs, ku, ki):
    out = core_filter(pairs, ku, ki)
    users, items = {}, {}
    for u, i in out:
        users[u] = users.get(u, 0) + 1
        items[i] = items.get(i, 0) + 1
    assert all(c >= ku for c in users.values())
    assert all(c >= ki for c in items.values())
    assert core_filter(out, ku, ki) == out
    # survivors keep their input order
    firsts = list(dict.fromkeys(pairs))
    assert out == [p for p in firsts if p in set(out)]
    with pytest.raises(ValueError):
        core_filter(pairs, 0, 1)
