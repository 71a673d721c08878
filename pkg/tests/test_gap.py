import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmrec.gap import (
    EmbeddingBank,
    GapError,
    gap_stats,
    inter_metric,
    intra_metric,
    logistic_probe,
    pca_project,
    sample_items,
    separability_probe,
    write_gap,
    write_probe,
    write_projection,
)


def bank_of(*mats):
    mats = [np.asarray(m, dtype=float) for m in mats]
    return EmbeddingBank([f"m{k}" for k in range(len(mats))], mats, np.arange(len(mats[0])))


def ed(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def cs(a, b):
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def brute_intra(mats, f):
    n, m = len(mats[0]), len(mats)
    total = 0.0
    for j in range(n):
        pairs = [f(mats[k][j], mats[l][j]) for k in range(m) for l in range(k)]
        total += sum(pairs) / len(pairs)
    return total / n


def brute_inter(mats, f):
    out = []
    for mat in mats:
        vals = [f(mat[i], mat[j]) for i in range(len(mat)) for j in range(i)]
        out.append(sum(vals) / len(vals))
    return sum(out) / len(out)


def test_identical_modalities():
    x = np.random.default_rng(0).normal(size=(6, 4))
    b = bank_of(x, x.copy())
    assert abs(intra_metric(b, "CS") - 1.0) < 1e-12
    assert intra_metric(b, "ED") == 0.0


def test_three_four_five():
    assert intra_metric(bank_of([[0.0, 0.0]], [[3.0, 4.0]]), "ED") == 5.0


def test_degenerate_and_orthonormal_inter():
    b = bank_of(np.tile([1.0, 2.0], (5, 1)), np.tile([0.5, -1.0], (5, 1)))
    assert inter_metric(b, "ED") == 0.0
    assert abs(inter_metric(b, "CS") - 1.0) < 1e-12
    b = bank_of([[1.0, 0.0], [0.0, 1.0]])
    assert abs(inter_metric(b, "CS")) < 1e-15
    assert abs(inter_metric(b, "ED") - math.sqrt(2)) < 1e-15


def test_against_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(20):
        mats = [rng.normal(size=(5, 3)) for _ in range(3)]
        b = bank_of(*mats)
        lists = [m.tolist() for m in mats]
        for name, f in (("ED", ed), ("CS", cs)):
            assert abs(intra_metric(b, name) - brute_intra(lists, f)) < 1e-6
            assert abs(inter_metric(b, name) - brute_inter(lists, f)) < 1e-6


def test_errors():
    with pytest.raises(GapError):
        intra_metric(bank_of(np.ones((3, 2))), "CS")
    with pytest.raises(GapError):
        inter_metric(bank_of(np.ones((1, 2)), np.ones((1, 2))), "CS")
    with pytest.raises(GapError):
        bank_of(np.ones((3, 2)), np.ones((3, 3)))
    with pytest.raises(GapError):
        separability_probe(bank_of(np.ones((5, 2)), np.ones((5, 2))))


@given(st.integers(0, 2**31), st.floats(0.1, 10.0))
def test_invariances(seed, c):
    rng = np.random.default_rng(seed)
    mats = [rng.normal(size=(6, 3)) for _ in range(3)]
    base = gap_stats(bank_of(*mats))
    perm = rng.permutation(6)
    for stats in (gap_stats(bank_of(*[m[perm] for m in mats])), gap_stats(bank_of(*mats[::-1]))):
        for key in base:
            assert abs(stats[key] - base[key]) < 1e-9
    scaled = gap_stats(bank_of(*[m * c for m in mats]))
    for key in ("intra_CS", "inter_CS"):
        assert abs(scaled[key] - base[key]) < 1e-9
    for key in ("intra_ED", "inter_ED"):
        assert abs(scaled[key] - c * base[key]) < 1e-9 * max(1.0, c * base[key])


def test_pca_rank_one():
    t = np.random.default_rng(2).normal(size=(20, 1))
    line = np.hstack([t, 2 * t]) + np.array([1.0, -3.0])
    proj = pca_project(bank_of(line[:10], line[10:]), 2)
    assert proj.explained_ratio[0] >= 1 - 1e-6
    assert np.all(np.diff(proj.explained_ratio) <= 0)


def test_pca_identical_points():
    x = np.tile([1.0, 2.0, 3.0], (4, 1))
    proj = pca_project(bank_of(x, x), 2)
    for c in proj.coords:
        np.testing.assert_array_equal(c, 0.0)


def test_pca_reconstruction_and_sign():
    rng = np.random.default_rng(3)
    mats = [rng.normal(size=(15, 5)) @ rng.normal(size=(5, 5)) for _ in range(2)]
    proj = pca_project(bank_of(*mats), 5)
    np.testing.assert_allclose(proj.components.T @ proj.components, np.eye(5), atol=1e-10)
    for m, c in zip(mats, proj.coords):
        np.testing.assert_allclose(c @ proj.components.T, m - proj.center, atol=1e-4)
    comp = proj.components
    pivots = np.argmax(np.abs(comp), axis=0)
    assert np.all(comp[pivots, np.arange(5)] > 0)
    assert np.all(np.diff(proj.explained_ratio) <= 1e-15)
    with pytest.raises(GapError):
        pca_project(bank_of(*mats), 6)


def test_probe_separable():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(40, 3))
    a[:, 0] = 2 + np.abs(a[:, 0])
    b = rng.normal(size=(40, 3))
    b[:, 0] = -2 - np.abs(b[:, 0])
    res = separability_probe(bank_of(a, b), n_seeds=5)
    assert res.per_seed_accuracy == [1.0] * 5
    assert res.random_baseline == 0.5
    res = separability_probe(bank_of(a, b), n_seeds=3, classifier=logistic_probe)
    assert res.mean_accuracy == 1.0


def test_probe_identical_embeddings():
    x = np.ones((30, 4))
    for clf in (None, logistic_probe):
        kw = {} if clf is None else {"classifier": clf}
        res = separability_probe(bank_of(x, x, x), n_seeds=3, **kw)
        for acc in res.per_seed_accuracy:
            assert abs(acc - 1 / 3) < 1e-12


def test_probe_same_distribution():
    rng = np.random.default_rng(5)
    res = separability_probe(bank_of(rng.normal(size=(100, 4)), rng.normal(size=(100, 4))), n_seeds=10)
    assert abs(res.mean_accuracy - 0.5) <= 0.1
    assert all(0.0 <= a <= 1.0 for a in res.per_seed_accuracy)
    assert res.mean_accuracy == math.fsum(res.per_seed_accuracy) / 10


def test_probe_permuted_labels_near_chance():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(100, 3)) + 3.0
    b = rng.normal(size=(100, 3)) - 3.0
    res = separability_probe(bank_of(a, b), n_seeds=10, shuffle_labels=True)
    n_test_rows = 2 * 20
    sigma = math.sqrt(0.25 / n_test_rows)
    assert abs(res.mean_accuracy - 0.5) <= 3 * sigma


def test_probe_split_is_item_level():
    # each item's modality rows differ only by a per-item code; a row-level split
    # would let the classifier look up the item, an item-level split cannot
    seen = []

    def spy(x_tr, y_tr, x_te, n_classes, seed=0):
        seen.append((x_tr, x_te))
        return np.zeros(len(x_te), dtype=int)

    ids = np.arange(20, dtype=float)[:, None]
    separability_probe(bank_of(ids, ids + 0.5), n_seeds=4, classifier=spy)
    for x_tr, x_te in seen:
        assert not set(np.floor(x_tr[:, 0]).tolist()) & set(np.floor(x_te[:, 0]).tolist())
        assert len(x_tr) == 32 and len(x_te) == 8


def test_probe_deterministic():
    rng = np.random.default_rng(7)
    b = bank_of(rng.normal(size=(30, 3)), rng.normal(size=(30, 3)) + 0.3)
    assert separability_probe(b, n_seeds=4, seed=2).per_seed_accuracy == separability_probe(b, n_seeds=4, seed=2).per_seed_accuracy


def test_sample_items():
    assert sample_items(10, 500).tolist() == list(range(10))
    s = sample_items(2000, 500, seed=1)
    assert len(s) == 500 and len(set(s.tolist())) == 500 and np.all(np.diff(s) > 0)
    np.testing.assert_array_equal(s, sample_items(2000, 500, seed=1))


def test_exports(tmp_path):
    rng = np.random.default_rng(8)
    b = bank_of(rng.normal(size=(12, 3)), rng.normal(size=(12, 3)))
    write_gap(gap_stats(b), tmp_path)
    rows = (tmp_path / "gap.csv").read_text().splitlines()
    assert rows[0] == "metric,value" and len(rows) == 5
    write_projection(pca_project(b, 2), tmp_path)
    rows = (tmp_path / "projection.csv").read_text().splitlines()
    assert rows[0] == "item_index,modality,x,y" and len(rows) == 25
    write_probe(separability_probe(b, n_seeds=3), tmp_path)
    rows = (tmp_path / "probe.csv").read_text().splitlines()
    assert rows[0] == "seed,accuracy" and len(rows) == 4


def test_pair_enumeration_counts():
    # each unordered modality pair contributes exactly once per item
    mats = [np.eye(3)[[k]] for k in range(3)]
    b = bank_of(*mats)
    assert abs(intra_metric(b, "ED") - math.sqrt(2)) < 1e-15
