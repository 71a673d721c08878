"""Multimodal implicit-feedback datasets: loading, validation and filtering."""

from __future__ import annotations

import csv
import json
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

INTERACTIONS = "interactions"
MAGIC = b"MMR1"


class DatasetError(ValueError):
    pass


@dataclass
class ModalityStore:
    name: str
    entity: str  # "user" | "item"
    matrix: np.ndarray
    available: np.ndarray

    def __post_init__(self):
        if self.entity not in ("user", "item"):
            raise DatasetError(f"modality {self.name!r}: entity must be 'user' or 'item'")
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)
        self.available = np.asarray(self.available, dtype=bool)
        if self.matrix.ndim != 2 or len(self.available) != self.matrix.shape[0]:
            raise DatasetError(f"modality {self.name!r}: mask length does not match matrix rows")
        if not np.all(np.isfinite(self.matrix[self.available])):
            raise DatasetError(f"modality {self.name!r}: NaN/Inf in available rows")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass
class Dataset:
    user_ids: list[str]
    item_ids: list[str]
    interactions: sp.csr_matrix
    user_modalities: list[ModalityStore] = field(default_factory=list)
    item_modalities: list[ModalityStore] = field(default_factory=list)
    name: str = "dataset"

    def __post_init__(self):
        R = sp.csr_matrix(self.interactions, dtype=np.float32)
        R.sum_duplicates()
        R.data[:] = 1.0
        R.eliminate_zeros()
        if R.shape != (len(self.user_ids), len(self.item_ids)):
            raise DatasetError(f"interaction matrix shape {R.shape} does not match registries")
        self.interactions = R
        for store in self.user_modalities:
            self._check_store(store, "user", self.n_users)
        for store in self.item_modalities:
            self._check_store(store, "item", self.n_items)

    @staticmethod
    def _check_store(store: ModalityStore, entity: str, n: int) -> None:
        if store.entity != entity:
            raise DatasetError(f"modality {store.name!r} registered under the wrong entity")
        if store.matrix.shape[0] != n:
            raise DatasetError(f"modality {store.name!r} has {store.matrix.shape[0]} rows, expected {n}")
        if store.name == INTERACTIONS:
            raise DatasetError(f"{INTERACTIONS!r} is reserved for the interaction profile")

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_interactions(self) -> int:
        return int(self.interactions.nnz)

    def pairs(self) -> np.ndarray:
        """All positive (user, item) index pairs, sorted by user then item."""
        coo = self.interactions.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.stack([coo.row[order], coo.col[order]], axis=1).astype(np.int64)

    def modalities(self, entity: str) -> list[ModalityStore]:
        return self.item_modalities if entity == "item" else self.user_modalities

    def modality(self, entity: str, name: str) -> ModalityStore:
        for store in self.modalities(entity):
            if store.name == name:
                return store
        raise KeyError(f"no {entity} modality named {name!r}")

    def modality_names(self, entity: str, include_interactions: bool = True) -> list[str]:
        names = [m.name for m in self.modalities(entity)]
        return ([INTERACTIONS] if include_interactions else []) + names

    def profile_available(self, entity: str) -> np.ndarray:
        """Entities whose interaction profile is non-empty."""
        axis = 1 if entity == "user" else 0
        return np.asarray(self.interactions.getnnz(axis=axis) > 0)


# ---------------------------------------------------------------- matrix io


def write_mmr1(path: str | Path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(m.tobytes(order="C"))


def read_mmr1(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise DatasetError(f"{path}: not an MMR1 matrix file")
    rows, cols = struct.unpack("<II", raw[4:12])
    body = raw[12:]
    if len(body) != rows * cols * 4:
        raise DatasetError(f"{path}: expected {rows}x{cols} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float32)


def read_matrix_csv(path: str | Path, ids: Sequence[str]) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id":
            raise DatasetError(f"{path}: CSV header must start with 'id'")
        dim = len(header) - 1
        index = {rid: i for i, rid in enumerate(ids)}
        out = np.zeros((len(ids), dim), dtype=np.float32)
        seen = np.zeros(len(ids), dtype=bool)
        for row in reader:
            if not row:
                continue
            if row[0] not in index:
                raise DatasetError(f"{path}: unknown id {row[0]!r}")
            if len(row) != dim + 1:
                raise DatasetError(f"{path}: row for {row[0]!r} has {len(row) - 1} values, header says {dim}")
            out[index[row[0]]] = np.asarray(row[1:], dtype=np.float32)
            seen[index[row[0]]] = True
    if not seen.all():
        missing = ids[int(np.flatnonzero(~seen)[0])]
        raise DatasetError(f"{path}: no row for id {missing!r}")
    return out


def write_matrix_csv(path: str | Path, ids: Sequence[str], matrix: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *[f"v{k}" for k in range(matrix.shape[1])]])
        for rid, row in zip(ids, matrix):
            w.writerow([rid, *[repr(float(v)) for v in row]])


def _read_registry(path: Path) -> list[str]:
    ids = [line.rstrip("\r\n") for line in path.read_text(encoding="utf-8").splitlines()]
    ids = [i for i in ids if i]
    dupes = [k for k, c in Counter(ids).items() if c > 1]
    if dupes:
        raise DatasetError(f"{path}: duplicate raw id {dupes[0]!r}")
    return ids


def _read_mask(path: Path, n: int) -> np.ndarray:
    vals = [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if len(vals) != n or any(v not in ("0", "1") for v in vals):
        raise DatasetError(f"{path}: mask must have {n} lines of 0/1")
    return np.array([v == "1" for v in vals])


# ---------------------------------------------------------------- loading


def load_dataset(manifest_path: str | Path) -> Dataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DatasetError(f"manifest not found: {manifest_path}")
    root = manifest_path.parent
    man = json.loads(manifest_path.read_text(encoding="utf-8"))

    def resolve(key_or_path: str) -> Path:
        p = root / key_or_path
        if not p.exists():
            raise DatasetError(f"missing file: {p}")
        return p

    user_ids = _read_registry(resolve(man["users_file"]))
    item_ids = _read_registry(resolve(man["items_file"]))
    uidx = {u: i for i, u in enumerate(user_ids)}
    iidx = {it: j for j, it in enumerate(item_ids)}

    triples = []
    with open(resolve(man["interactions_file"]), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise DatasetError(f"interactions line {lineno}: expected 2 or 3 tab-separated fields")
            value = float(parts[2]) if len(parts) == 3 else 1.0
            triples.append((parts[0], parts[1], value))
    if man.get("threshold") is not None:
        pairs = binarize_feedback(triples, float(man["threshold"]))
    else:
        pairs = [(u, i) for u, i, _ in triples]

    rows, cols = [], []
    for u, i in pairs:
        if u not in uidx:
            raise DatasetError(f"unknown user id {u!r} in interactions")
        if i not in iidx:
            raise DatasetError(f"unknown item id {i!r} in interactions")
        rows.append(uidx[u])
        cols.append(iidx[i])
    R = sp.csr_matrix(
        (np.ones(len(rows), dtype=np.float32), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
        shape=(len(user_ids), len(item_ids)),
    )

    stores: dict[str, list[ModalityStore]] = {"user": [], "item": []}
    for spec in man.get("modalities", []):
        entity = spec["entity"]
        ids = user_ids if entity == "user" else item_ids
        if any(s.name == spec["name"] for s in stores[entity]):
            raise DatasetError(f"duplicate {entity} modality name {spec['name']!r}")
        fmt = spec.get("format", "mmr1").lower()
        path = resolve(spec["file"])
        if fmt == "mmr1":
            mat = read_mmr1(path)
        elif fmt == "csv":
            mat = read_matrix_csv(path, ids)
        else:
            raise DatasetError(f"unknown matrix format {fmt!r}")
        if mat.shape[1] != int(spec["dim"]):
            raise DatasetError(
                f"dimension mismatch for modality {spec['name']!r}: manifest says {spec['dim']}, file has {mat.shape[1]}"
            )
        if mat.shape[0] != len(ids):
            raise DatasetError(f"modality {spec['name']!r}: {mat.shape[0]} rows for {len(ids)} {entity}s")
        mask = _read_mask(resolve(spec["mask_file"]), len(ids)) if spec.get("mask_file") else np.ones(len(ids), bool)
        stores[entity].append(ModalityStore(spec["name"], entity, mat, mask))

    return Dataset(user_ids, item_ids, R, stores["user"], stores["item"], name=man.get("name", "dataset"))


def save_dataset(data: Dataset, directory: str | Path) -> Path:
    """Write ``data`` in the manifest layout; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "users.tsv").write_text("".join(f"{u}\n" for u in data.user_ids), encoding="utf-8")
    (d / "items.tsv").write_text("".join(f"{i}\n" for i in data.item_ids), encoding="utf-8")
    with open(d / "interactions.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for u, i in data.pairs():
            fh.write(f"{data.user_ids[u]}\t{data.item_ids[i]}\n")
    mods = []
    for store in [*data.user_modalities, *data.item_modalities]:
        fname = f"{store.entity}_{store.name}.mmr1"
        write_mmr1(d / fname, store.matrix)
        entry = {"name": store.name, "entity": store.entity, "dim": store.dim, "file": fname, "format": "mmr1"}
        if not store.available.all():
            mask_name = f"{store.entity}_{store.name}.mask"
            (d / mask_name).write_text("".join("1\n" if a else "0\n" for a in store.available), encoding="utf-8")
            entry["mask_file"] = mask_name
        mods.append(entry)
    manifest = {
        "name": data.name,
        "users_file": "users.tsv",
        "items_file": "items.tsv",
        "interactions_file": "interactions.tsv",
        "modalities": mods,
    }
    path = d / "dataset.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------- preprocessing


def binarize_feedback(raw_triples: Iterable[tuple], threshold: float) -> list[tuple]:
    """Keep (user, item) for every triple whose value reaches ``threshold``."""
    return [(u, i) for u, i, v in raw_triples if v >= threshold]


def core_filter(pairs: Sequence[tuple], k_user: int, k_item: int) -> list[tuple]:
    """Iterative k-core filtering on a bipartite interaction list.

    Removes users with fewer than ``k_user`` and items with fewer than
    ``k_item`` interactions until nothing changes. Input order is kept for
    the survivors; duplicate pairs are collapsed.
    """
    if k_user < 1 or k_item < 1:
        raise ValueError("core sizes must be >= 1")
    unique = list(dict.fromkeys(pairs))
    by_user: dict = defaultdict(set)
    by_item: dict = defaultdict(set)
    for u, i in unique:
        by_user[u].add(i)
        by_item[i].add(u)

    queue_u = [u for u, s in by_user.items() if len(s) < k_user]
    queue_i = [i for i, s in by_item.items() if len(s) < k_item]
    dead_u, dead_i = set(), set()
    while queue_u or queue_i:
        while queue_u:
            u = queue_u.pop()
            if u in dead_u:
                continue
            dead_u.add(u)
            for i in by_user.pop(u, ()):
                s = by_item.get(i)
                if s is None:
                    continue
                s.discard(u)
                if len(s) < k_item and i not in dead_i:
                    queue_i.append(i)
        while queue_i:
            i = queue_i.pop()
            if i in dead_i:
                continue
            dead_i.add(i)
            for u in by_item.pop(i, ()):
                s = by_user.get(u)
                if s is None:
                    continue
                s.discard(i)
                if len(s) < k_user and u not in dead_u:
                    queue_u.append(u)
    return [(u, i) for u, i in unique if u not in dead_u and i not in dead_i]


def subset_dataset(data: Dataset, pairs: Sequence[tuple[int, int]]) -> Dataset:
    """Restrict ``data`` to entities touched by ``pairs`` (index pairs), reindexing."""
    users = sorted({u for u, _ in pairs})
    items = sorted({i for _, i in pairs})
    umap = {u: k for k, u in enumerate(users)}
    imap = {i: k for k, i in enumerate(items)}
    rows = np.array([umap[u] for u, _ in pairs], dtype=np.int64)
    cols = np.array([imap[i] for _, i in pairs], dtype=np.int64)
    R = sp.csr_matrix((np.ones(len(rows), np.float32), (rows, cols)), shape=(len(users), len(items)))
    um = [ModalityStore(s.name, "user", s.matrix[users], s.available[users]) for s in data.user_modalities]
    im = [ModalityStore(s.name, "item", s.matrix[items], s.available[items]) for s in data.item_modalities]
    return Dataset([data.user_ids[u] for u in users], [data.item_ids[i] for i in items], R, um, im, name=data.name)
