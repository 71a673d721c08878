"""Modality-gap diagnostics: intra/inter-item distances, PCA export, separability probe."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import optimize
from scipy.special import logsumexp
from sklearn.ensemble import RandomForestClassifier

from .metrics import write_csv, write_json
from .splits import SeededRng, hash64

MEASURES = ("ED", "CS")


class GapError(ValueError):
    pass


@dataclass
class EmbeddingBank:
    modalities: list[str]
    embs: list[np.ndarray]
    items: np.ndarray

    def __post_init__(self):
        self.embs = [np.asarray(e, dtype=np.float64) for e in self.embs]
        if len(self.embs) != len(self.modalities):
            raise GapError("one embedding matrix per modality is required")
        shapes = {e.shape for e in self.embs}
        if len(shapes) != 1:
            raise GapError(f"embedding matrices differ in shape: {sorted(shapes)}")
        self.items = np.asarray(self.items, dtype=np.int64)
        if len(self.items) != self.embs[0].shape[0]:
            raise GapError("item index list does not match the matrices")

    @property
    def n_items(self) -> int:
        return self.embs[0].shape[0]

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)

    def subset(self, rows: np.ndarray) -> "EmbeddingBank":
        return EmbeddingBank(self.modalities, [e[rows] for e in self.embs], self.items[rows])


def build_bank(model, items: np.ndarray | None = None, modalities: Sequence[str] | None = None) -> EmbeddingBank:
    """Eval-mode per-modality embeddings for items on which every listed modality is available."""
    tower = model.main_tower
    mods = list(modalities) if modalities is not None else list(tower.names)
    cols = [tower.names.index(m) for m in mods]
    avail = tower.inputs.available[:, cols].all(axis=1)
    if items is None:
        items = np.flatnonzero(avail)
    else:
        items = np.asarray(items, dtype=np.int64)
        items = items[avail[items]]
    model.eval()
    embs = [tower.modality_matrix(items, m) for m in mods]
    return EmbeddingBank(mods, embs, items)


# ---------------------------------------------------------------- pair measures


def _unit(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


def rowwise(f: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """ED or CS between matching rows of ``a`` and ``b``."""
    if f == "ED":
        return np.linalg.norm(a - b, axis=-1)
    if f == "CS":
        return np.sum(_unit(a) * _unit(b), axis=-1)
    raise GapError(f"unknown measure {f!r}")


def intra_metric(bank: EmbeddingBank, f: str = "CS") -> float:
    """Mean over items of the mean measure over each item's unordered modality pairs."""
    m = bank.n_modalities
    if m < 2:
        raise GapError("intra-item measures need at least two modalities")
    per_item = np.zeros(bank.n_items)
    for k in range(m):
        for l in range(k):
            per_item += rowwise(f, bank.embs[k], bank.embs[l])
    per_item *= 2.0 / (m * (m - 1))
    return float(np.mean(per_item))


def _pairwise_mean(f: str, x: np.ndarray) -> float:
    n = x.shape[0]
    iu = np.triu_indices(n, k=1)
    if f == "CS":
        u = _unit(x)
        vals = (u @ u.T)[iu]
    elif f == "ED":
        sq = np.sum(x * x, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
        vals = np.sqrt(np.maximum(d2[iu], 0.0))
    else:
        raise GapError(f"unknown measure {f!r}")
    return float(np.mean(vals))


def inter_metric(bank: EmbeddingBank, f: str = "CS") -> float:
    """Mean over modalities of the mean measure over unordered pairs of distinct items."""
    if bank.n_items < 2:
        raise GapError("inter-item measures need at least two items")
    return float(np.mean([_pairwise_mean(f, e) for e in bank.embs]))


def gap_stats(bank: EmbeddingBank) -> dict[str, float]:
    out = {}
    for f in MEASURES:
        out[f"intra_{f}"] = intra_metric(bank, f)
        out[f"inter_{f}"] = inter_metric(bank, f)
    return out


# ---------------------------------------------------------------- PCA


@dataclass
class Projection:
    modalities: list[str]
    items: np.ndarray
    coords: list[np.ndarray]
    explained_ratio: np.ndarray
    components: np.ndarray  # (d, n_components)
    center: np.ndarray


def pca_project(bank: EmbeddingBank, n_components: int = 2) -> Projection:
    """Project all modalities onto one basis fitted on their pooled rows."""
    d = bank.embs[0].shape[1]
    if n_components > d or n_components < 1:
        raise GapError(f"n_components must lie in [1, {d}]")
    pooled = np.concatenate(bank.embs, axis=0)
    center = pooled.mean(axis=0)
    x = pooled - center
    cov = x.T @ x / max(len(x) - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.maximum(vals[order], 0.0)
    vecs = vecs[:, order]
    # sign convention: the largest-magnitude loading of each component is positive
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(d)])
    vecs = vecs * np.where(signs == 0, 1.0, signs)
    total = vals.sum()
    ratio = vals / total if total > 0 else np.zeros_like(vals)
    comp = vecs[:, :n_components]
    coords = [(e - center) @ comp for e in bank.embs]
    return Projection(bank.modalities, bank.items, coords, ratio[:n_components], comp, center)


# ---------------------------------------------------------------- probe


# (x_train, y_train, x_test, n_classes, seed) -> predicted test labels
Classifier = Callable[..., np.ndarray]


def forest_probe(x_train: np.ndarray, y_train: np.ndarray, x_test: np.ndarray, n_classes: int, seed: int = 0) -> np.ndarray:
    """Random forest with library defaults (100 trees), seeded per probe split."""
    clf = RandomForestClassifier(n_estimators=100, random_state=seed, n_jobs=1)
    return clf.fit(x_train, y_train).predict(x_test)


def logistic_probe(
    x_train: np.ndarray, y_train: np.ndarray, x_test: np.ndarray, n_classes: int, seed: int = 0, l2: float = 1e-4
) -> np.ndarray:
    """Multinomial logistic regression fitted with L-BFGS; returns test predictions."""
    mu = x_train.mean(axis=0)
    sd = x_train.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    xtr = (x_train - mu) / sd
    xte = (x_test - mu) / sd
    n, d = xtr.shape
    xb = np.hstack([xtr, np.ones((n, 1))])
    onehot = np.eye(n_classes)[y_train]

    def objective(w_flat):
        w = w_flat.reshape(d + 1, n_classes)
        logits = xb @ w
        lse = logsumexp(logits, axis=1, keepdims=True)
        loss = -np.sum(onehot * (logits - lse)) / n + 0.5 * l2 * np.sum(w[:d] ** 2)
        grad = xb.T @ (np.exp(logits - lse) - onehot) / n
        grad[:d] += l2 * w[:d]
        return loss, grad.ravel()

    res = optimize.minimize(objective, np.zeros((d + 1) * n_classes), jac=True, method="L-BFGS-B", options={"maxiter": 2000})
    w = res.x.reshape(d + 1, n_classes)
    logits = np.hstack([xte, np.ones((len(xte), 1))]) @ w
    return np.argmax(logits, axis=1)


PROBES = {"forest": forest_probe, "logistic": logistic_probe}


@dataclass
class ProbeResult:
    per_seed_accuracy: list[float]
    n_modalities: int
    seeds: list[int] = field(default_factory=list)

    @property
    def mean_accuracy(self) -> float:
        return math.fsum(self.per_seed_accuracy) / len(self.per_seed_accuracy)

    @property
    def random_baseline(self) -> float:
        return 1.0 / self.n_modalities


def separability_probe(
    bank: EmbeddingBank,
    split_ratio: float = 0.8,
    n_seeds: int = 20,
    seed: int = 0,
    classifier: Classifier = forest_probe,
    shuffle_labels: bool = False,
) -> ProbeResult:
    """Predict which modality produced an embedding; items (not rows) are split train/test."""
    n = bank.n_items
    if n < 10:
        raise GapError("the probe needs at least 10 items")
    m = bank.n_modalities
    accs, seeds = [], []
    for s in range(n_seeds):
        rng = SeededRng(seed, f"probe/{s}").gen
        perm = rng.permutation(n)
        n_train = int(round(split_ratio * n))
        tr, te = perm[:n_train], perm[n_train:]
        x_tr = np.concatenate([e[tr] for e in bank.embs])
        y_tr = np.repeat(np.arange(m), len(tr))
        x_te = np.concatenate([e[te] for e in bank.embs])
        y_te = np.repeat(np.arange(m), len(te))
        if shuffle_labels:
            y_tr = rng.permutation(y_tr)
        pred = classifier(x_tr, y_tr, x_te, m, seed=hash64(seed, f"probe/{s}/clf") % 2**31)
        accs.append(float(np.mean(pred == y_te)))
        seeds.append(s)
    return ProbeResult(accs, m, seeds)


# ---------------------------------------------------------------- export


def sample_items(n: int, size: int = 500, seed: int = 0) -> np.ndarray:
    """Uniform, seeded row subsample (sorted); everything when n <= size."""
    if n <= size:
        return np.arange(n)
    return np.sort(SeededRng(seed, "gap/subsample").gen.choice(n, size=size, replace=False))


def write_gap(stats: dict[str, float], out_dir: str | Path) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    rows = [{"metric": k, "value": v} for k, v in stats.items()]
    write_csv(d / "gap.csv", rows, ["metric", "value"])
    write_json(d / "gap.json", stats)


def write_projection(proj: Projection, out_dir: str | Path) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, c in zip(proj.modalities, proj.coords):
        for item, xy in zip(proj.items, c):
            rows.append({"item_index": int(item), "modality": name, "x": float(xy[0]), "y": float(xy[1]) if len(xy) > 1 else 0.0})
    write_csv(d / "projection.csv", rows, ["item_index", "modality", "x", "y"])
    write_json(
        d / "projection.json",
        {"explained_variance_ratio": proj.explained_ratio.tolist(), "points": rows},
    )


def write_probe(result: ProbeResult, out_dir: str | Path) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    rows = [{"seed": s, "accuracy": a} for s, a in zip(result.seeds, result.per_seed_accuracy)]
    write_csv(d / "probe.csv", rows, ["seed", "accuracy"])
    write_json(
        d / "probe.json",
        {"per_seed": rows, "mean_accuracy": result.mean_accuracy, "random_baseline": result.random_baseline},
    )

