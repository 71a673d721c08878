"""Data scenarios (warm / user-cold / item-cold) and the training samplers."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .dataset import INTERACTIONS, Dataset

SCENARIOS = ("warm", "user-cold", "item-cold")


def hash64(master_seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{int(master_seed)}/{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class SeededRng:
    """Named random stream: Philox4x64 keyed by hash64(master_seed, label).

    Philox is counter based, so a (seed, label) pair yields the same
    sequence on every platform numpy supports.
    """

    algorithm = "philox4x64-10"

    def __init__(self, master_seed: int, stream_label: str = ""):
        self.master_seed = int(master_seed)
        self.stream_label = stream_label
        self.gen = np.random.Generator(np.random.Philox(hash64(master_seed, stream_label)))

    def child(self, label: str) -> "SeededRng":
        return SeededRng(self.master_seed, f"{self.stream_label}/{label}" if self.stream_label else label)

    def __getattr__(self, name):
        return getattr(self.gen, name)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.master_seed}, label={self.stream_label!r})"


def as_generator(rng) -> np.random.Generator:
    return rng.gen if isinstance(rng, SeededRng) else rng


@dataclass
class Split:
    scenario: str
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int
    n_users: int
    n_items: int
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    # cold scenarios: entity indices per partition
    partitions: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        for name in ("train", "val", "test"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2)
            setattr(self, name, arr)

    @property
    def cold_entity(self) -> str | None:
        return {"user-cold": "user", "item-cold": "item"}.get(self.scenario)

    def part(self, name: str) -> np.ndarray:
        return {"train": self.train, "val": self.val, "test": self.test}[name]

    def matrix(self, name: str = "train") -> sp.csr_matrix:
        p = self.part(name)
        return sp.csr_matrix(
            (np.ones(len(p), np.float32), (p[:, 0], p[:, 1])), shape=(self.n_users, self.n_items)
        )

    def train_matrix(self) -> sp.csr_matrix:
        return self.matrix("train")

    def relevant(self, name: str = "test") -> dict[int, set[int]]:
        out: dict[int, set[int]] = {}
        for u, i in self.part(name):
            out.setdefault(int(u), set()).add(int(i))
        return out

    def candidate_items(self, name: str = "test") -> np.ndarray:
        """Items that may be ranked when evaluating partition ``name``."""
        if self.scenario == "item-cold":
            return np.sort(self.partitions[name])
        return np.arange(self.n_items)

    def train_items(self) -> np.ndarray:
        if self.scenario == "item-cold":
            return np.sort(self.partitions["train"])
        return np.arange(self.n_items)

    # ------------------------------------------------------------ io

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name in ("train", "val", "test"):
            with open(d / f"{name}.tsv", "w", encoding="utf-8", newline="\n") as fh:
                for u, i in self.part(name):
                    fh.write(f"{u}\t{i}\n")
        meta = {
            "scenario": self.scenario,
            "seed": self.seed,
            "ratios": list(self.ratios),
            "n_users": self.n_users,
            "n_items": self.n_items,
            "partitions": {k: [int(x) for x in v] for k, v in self.partitions.items()},
        }
        (d / "split.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "Split":
        d = Path(directory)
        meta = json.loads((d / "split.json").read_text(encoding="utf-8"))
        parts = {}
        for name in ("train", "val", "test"):
            text = (d / f"{name}.tsv").read_text(encoding="utf-8").split()
            parts[name] = np.array(text, dtype=np.int64).reshape(-1, 2)
        return cls(
            meta["scenario"],
            parts["train"],
            parts["val"],
            parts["test"],
            meta["seed"],
            meta["n_users"],
            meta["n_items"],
            tuple(meta["ratios"]),
            {k: np.array(v, dtype=np.int64) for k, v in meta.get("partitions", {}).items()},
        )


def _floor_share(ratio: float, n: int) -> int:
    return int(math.floor(ratio * n + 1e-9))


def split_warm(data: Dataset, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0) -> Split:
    """Per-user random split; val/test sizes are floor(ratio * n)."""
    rng = SeededRng(seed, "split/warm").gen
    R = data.interactions
    train, val, test = [], [], []
    for u in range(data.n_users):
        items = R.indices[R.indptr[u] : R.indptr[u + 1]]
        items = np.sort(items)
        n = len(items)
        if n == 0:
            continue
        n_val = _floor_share(ratios[1], n)
        n_test = _floor_share(ratios[2], n)
        perm = items[rng.permutation(n)]
        val.extend((u, i) for i in perm[:n_val])
        test.extend((u, i) for i in perm[n_val : n_val + n_test])
        train.extend((u, i) for i in perm[n_val + n_test :])
    return Split("warm", _sorted(train), _sorted(val), _sorted(test), seed, data.n_users, data.n_items, tuple(ratios))


def split_cold(data: Dataset, entity: str, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0) -> Split:
    """Partition users or items into disjoint train/val/test sets."""
    if entity not in ("user", "item"):
        raise ValueError("entity must be 'user' or 'item'")
    n = data.n_users if entity == "user" else data.n_items
    n_val = _floor_share(ratios[1], n)
    n_test = _floor_share(ratios[2], n)
    if n_val < 1 or n_test < 1 or n - n_val - n_test < 1:
        raise ValueError(f"{n} {entity}s is too few to give every partition at least one")
    perm = SeededRng(seed, f"split/{entity}-cold").gen.permutation(n)
    parts = {
        "val": np.sort(perm[:n_val]),
        "test": np.sort(perm[n_val : n_val + n_test]),
        "train": np.sort(perm[n_val + n_test :]),
    }
    owner = np.empty(n, dtype=np.int8)
    for code, name in enumerate(("train", "val", "test")):
        owner[parts[name]] = code
    pairs = data.pairs()
    col = 0 if entity == "user" else 1
    codes = owner[pairs[:, col]]
    return Split(
        f"{entity}-cold",
        pairs[codes == 0],
        pairs[codes == 1],
        pairs[codes == 2],
        seed,
        data.n_users,
        data.n_items,
        tuple(ratios),
        parts,
    )


def _sorted(pairs) -> np.ndarray:
    arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    if len(arr):
        arr = arr[np.lexsort((arr[:, 1], arr[:, 0]))]
    return arr


# ---------------------------------------------------------------- samplers


class SamplingError(ValueError):
    pass


def _row_duplicates(a: np.ndarray) -> np.ndarray:
    """Mask of entries that repeat an earlier-sorted entry in the same row."""
    order = np.argsort(a, axis=1, kind="stable")
    s = np.take_along_axis(a, order, axis=1)
    dup_sorted = np.zeros_like(a, dtype=bool)
    dup_sorted[:, 1:] = s[:, 1:] == s[:, :-1]
    out = np.zeros_like(dup_sorted)
    np.put_along_axis(out, order, dup_sorted, axis=1)
    return out


def sample_negatives_batch(
    users: np.ndarray,
    n_neg: int,
    train_positives: sp.csr_matrix,
    rng,
    candidates: np.ndarray | None = None,
    max_redraws: int = 10,
) -> np.ndarray:
    """Uniform negatives for each user in ``users``; shape (len(users), n_neg).

    Negatives never hit a training positive. Duplicates inside one user's
    draw are re-drawn up to ``max_redraws`` times and then accepted.
    """
    gen = as_generator(rng)
    users = np.asarray(users, dtype=np.int64)
    R = train_positives.tocsr()
    n_items = R.shape[1]
    cand = np.arange(n_items) if candidates is None else np.asarray(candidates, dtype=np.int64)
    is_cand = np.zeros(n_items, dtype=bool)
    is_cand[cand] = True
    counts = np.array([np.count_nonzero(is_cand[R.indices[R.indptr[u] : R.indptr[u + 1]]]) for u in users])
    if np.any(counts >= len(cand)):
        bad = int(users[np.argmax(counts >= len(cand))])
        raise SamplingError(f"user {bad} has interacted with every candidate item")

    row_of = np.repeat(np.arange(R.shape[0], dtype=np.int64), np.diff(R.indptr))
    codes = np.sort(row_of * n_items + R.indices.astype(np.int64))

    def is_positive(us, its):
        q = us * n_items + its
        pos = np.searchsorted(codes, q)
        pos = np.minimum(pos, max(len(codes) - 1, 0))
        return codes[pos] == q if len(codes) else np.zeros(len(q), dtype=bool)

    neg = cand[gen.integers(0, len(cand), size=(len(users), n_neg))]
    uu = np.repeat(users, n_neg).reshape(len(users), n_neg)
    bad = is_positive(uu.ravel(), neg.ravel()).reshape(neg.shape)
    rounds = 0
    while bad.any():
        rounds += 1
        if rounds > 1000:
            # pathological density: draw from the explicit complement
            for r, c in zip(*np.nonzero(bad)):
                pos = R.indices[R.indptr[users[r]] : R.indptr[users[r] + 1]]
                pool = np.setdiff1d(cand, pos)
                neg[r, c] = pool[gen.integers(0, len(pool))]
            break
        neg[bad] = cand[gen.integers(0, len(cand), size=int(bad.sum()))]
        bad[bad] = is_positive(uu[bad], neg[bad])

    for _ in range(max_redraws):
        dup = _row_duplicates(neg)
        if not dup.any():
            break
        fresh = cand[gen.integers(0, len(cand), size=int(dup.sum()))]
        ok = ~is_positive(uu[dup], fresh)
        sel = np.flatnonzero(dup.ravel())[ok]
        neg.ravel()[sel] = fresh[ok]
    return neg


def sample_negatives(
    user: int,
    n_neg: int,
    train_positives: sp.csr_matrix,
    n_items: int | None = None,
    rng=None,
    candidates: np.ndarray | None = None,
) -> list[int]:
    if n_items is not None and train_positives.shape[1] != n_items:
        raise ValueError("n_items does not match the interaction matrix")
    return sample_negatives_batch(np.array([user]), n_neg, train_positives, rng, candidates)[0].tolist()


def sample_modalities(available: Sequence[str], n_mod: int, rng) -> list[str]:
    """Uniformly pick ``n_mod`` distinct modality ids."""
    if len(available) < n_mod:
        raise SamplingError(f"need {n_mod} modalities, only {len(available)} available")
    idx = as_generator(rng).choice(len(available), size=n_mod, replace=False)
    return [available[k] for k in idx]


def sample_modalities_batch(availability: np.ndarray, n_mod: int, rng) -> np.ndarray:
    """Vectorised modality sampling.

    ``availability`` is a boolean (batch, n_modalities) matrix; returns
    (batch, n_mod) column indices sampled without replacement per row.
    """
    availability = np.asarray(availability, dtype=bool)
    if np.any(availability.sum(axis=1) < n_mod):
        raise SamplingError(f"a row has fewer than {n_mod} available modalities")
    keys = as_generator(rng).random(availability.shape)
    keys[~availability] = np.inf
    return np.argsort(keys, axis=1, kind="stable")[:, :n_mod]


def make_batches(train_pairs: np.ndarray, batch_size: int, shuffle_seed: int) -> Iterator[np.ndarray]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    pairs = np.asarray(train_pairs)
    perm = SeededRng(shuffle_seed, "batches").gen.permutation(len(pairs))
    for lo in range(0, len(pairs), batch_size):
        yield pairs[perm[lo : lo + batch_size]]


def modality_availability(data: Dataset, entity: str, names: Sequence[str], train: sp.csr_matrix) -> np.ndarray:
    """(n_entities, len(names)) availability, with the profile judged on ``train``."""
    n = data.n_users if entity == "user" else data.n_items
    out = np.zeros((n, len(names)), dtype=bool)
    for k, name in enumerate(names):
        if name == INTERACTIONS:
            axis = 1 if entity == "user" else 0
            out[:, k] = np.asarray(train.getnnz(axis=axis) > 0)
        else:
            out[:, k] = data.modality(entity, name).available
    return out
