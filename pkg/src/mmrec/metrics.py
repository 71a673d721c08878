"""Top-k accuracy and popularity-bias metrics, subset grids and paired t-tests."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy import special, stats

from .dataset import Dataset
from .splits import Split

ACCURACY = ("ndcg", "recall", "precision", "f1", "ap", "rr")
BEYOND = ("coverage", "arp", "aplt", "pl")
METRICS = ACCURACY + BEYOND


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------- accuracy


def accuracy_from_hits(hits: np.ndarray, n_relevant: np.ndarray) -> dict[str, np.ndarray]:
    """Accuracy metrics for a (users, k) boolean hit matrix.

    Sums over rank positions run left to right one column at a time so the
    result does not depend on numpy's reduction order.
    """
    hits = np.asarray(hits, dtype=bool)
    n_rel = np.asarray(n_relevant, dtype=np.float64)
    if np.any(n_rel < 1):
        raise MetricError("every evaluated user needs at least one relevant item")
    n, k = hits.shape
    h = hits.astype(np.float64)
    dcg = np.zeros(n)
    idcg = np.zeros(n)
    n_hit = np.zeros(n)
    ap_sum = np.zeros(n)
    first = np.zeros(n)
    for j in range(k):
        disc = 1.0 / math.log2(j + 2)
        dcg = dcg + h[:, j] * disc
        idcg = idcg + np.where(j < n_rel, disc, 0.0)
        n_hit = n_hit + h[:, j]
        ap_sum = ap_sum + h[:, j] * (n_hit / (j + 1))
        first = np.where((first == 0) & hits[:, j], j + 1, first)
    recall = n_hit / n_rel
    precision = n_hit / k
    denom = precision + recall
    f1 = np.divide(2.0 * precision * recall, denom, out=np.zeros(n), where=denom > 0)
    rr = np.divide(1.0, first, out=np.zeros(n), where=first > 0)
    return {
        "ndcg": dcg / idcg,
        "recall": recall,
        "precision": precision,
        "f1": f1,
        "ap": ap_sum / n_rel,
        "rr": rr,
    }


def accuracy_metrics(recs: Sequence[int], relevant, k: int | None = None) -> dict[str, float]:
    """NDCG, recall, precision, F1, AP and RR for one ranked list."""
    recs = list(recs)
    if k is not None:
        recs = recs[:k]
    if len(set(recs)) != len(recs):
        raise MetricError("recommendation list contains duplicates")
    rel = set(relevant)
    hits = np.array([[r in rel for r in recs]], dtype=bool)
    out = accuracy_from_hits(hits, np.array([len(rel)]))
    return {m: float(v[0]) for m, v in out.items()}


# ---------------------------------------------------------------- beyond accuracy


def item_popularity(train: sp.spmatrix) -> np.ndarray:
    """phi(i) = |training users of i| / |users|."""
    train = sp.csr_matrix(train)
    return np.asarray(train.getnnz(axis=0), dtype=np.float64) / max(train.shape[0], 1)


def long_tail(phi: np.ndarray, tail_fraction: float = 0.8) -> np.ndarray:
    """Boolean mask of the ceil(fraction * N) least popular items (ties by index)."""
    n = len(phi)
    size = math.ceil(tail_fraction * n - 1e-9)
    order = np.argsort(phi, kind="stable")
    mask = np.zeros(n, dtype=bool)
    mask[order[:size]] = True
    return mask


def beyond_from_recs(
    recs: np.ndarray,
    phi: np.ndarray,
    history_popularity: np.ndarray,
    tail_fraction: float = 0.8,
) -> tuple[dict[str, np.ndarray], float]:
    """Per-user ARP, APLT, PL (NaN where the history popularity is 0) and global coverage."""
    recs = np.asarray(recs, dtype=np.int64)
    n, k = recs.shape
    tail = long_tail(phi, tail_fraction)
    arp = np.zeros(n)
    aplt = np.zeros(n)
    for j in range(k):
        arp = arp + phi[recs[:, j]]
        aplt = aplt + tail[recs[:, j]]
    arp = arp / k
    aplt = aplt / k
    pb_p = np.asarray(history_popularity, dtype=np.float64)
    pl = np.full(n, np.nan)
    ok = pb_p > 0
    pl[ok] = (arp[ok] - pb_p[ok]) / pb_p[ok]
    coverage = len(np.unique(recs)) / len(phi)
    return {"arp": arp, "aplt": aplt, "pl": pl}, coverage


def history_popularity(train: sp.spmatrix, users: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Mean phi over each user's training items (0 for an empty history)."""
    train = sp.csr_matrix(train)
    out = np.zeros(len(users))
    for r, u in enumerate(users):
        items = train.indices[train.indptr[u] : train.indptr[u + 1]]
        if len(items):
            out[r] = math.fsum(phi[items]) / len(items)
    return out


def beyond_accuracy(
    recs_per_user: Sequence[Sequence[int]],
    history_per_user: Sequence[Sequence[int]],
    phi: np.ndarray,
    k: int | None = None,
    tail_fraction: float = 0.8,
) -> dict[str, float]:
    """Coverage, mean ARP, mean APLT and mean PL (over users with non-empty-popularity history)."""
    phi = np.asarray(phi, dtype=np.float64)
    recs = np.array([list(r)[:k] if k else list(r) for r in recs_per_user], dtype=np.int64)
    pb_p = np.array([math.fsum(phi[list(h)]) / len(h) if len(h) else 0.0 for h in history_per_user])
    per, coverage = beyond_from_recs(recs, phi, pb_p, tail_fraction)
    pl = per["pl"][~np.isnan(per["pl"])]
    return {
        "coverage": coverage,
        "arp": _mean(per["arp"]),
        "aplt": _mean(per["aplt"]),
        "pl": _mean(pl) if len(pl) else float("nan"),
        "pl_excluded": int(np.isnan(per["pl"]).sum()),
    }


def _mean(x: np.ndarray) -> float:
    return math.fsum(x) / len(x) if len(x) else float("nan")


# ---------------------------------------------------------------- reports


@dataclass
class MetricReport:
    k: int
    users: np.ndarray
    per_user: dict[str, np.ndarray]
    coverage: float
    subset: tuple[str, ...] = ()
    recs: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_users_evaluated(self) -> int:
        return len(self.users)

    @property
    def pl_excluded(self) -> int:
        return int(np.isnan(self.per_user["pl"]).sum())

    @property
    def mean(self) -> dict[str, float]:
        out = {}
        for m in METRICS:
            if m == "coverage":
                out[m] = self.coverage
                continue
            v = self.per_user[m]
            v = v[~np.isnan(v)]
            out[m] = _mean(v)
        return out

    def summary_rows(self) -> list[dict]:
        rows = []
        means = self.mean
        for m in METRICS:
            if m == "coverage":
                rows.append({"metric": m, "mean": self.coverage, "std": 0.0, "n": 1})
                continue
            v = self.per_user[m]
            v = v[~np.isnan(v)]
            std = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
            rows.append({"metric": m, "mean": means[m], "std": std, "n": len(v)})
        return rows

    def write(self, out_dir: str | Path, prefix: str = "") -> None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        rows = self.summary_rows()
        write_csv(d / f"{prefix}metrics.csv", rows, ["metric", "mean", "std", "n"])
        write_json(
            d / f"{prefix}metrics.json",
            {"k": self.k, "n_users_evaluated": self.n_users_evaluated, "pl_excluded": self.pl_excluded, "metrics": rows},
        )
        cols = ["user", *ACCURACY, "arp", "aplt", "pl"]
        per = [
            {"user": int(u), **{m: float(self.per_user[m][r]) for m in cols[1:]}} for r, u in enumerate(self.users)
        ]
        write_csv(d / f"{prefix}per_user.csv", per, cols)
        write_json(d / f"{prefix}per_user.json", per)


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def write_csv(path: Path, rows: list[dict], columns: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])


def write_json(path: Path, obj) -> None:
    def clean(x):
        if isinstance(x, float) and math.isnan(x):
            return None
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, np.generic):
            return clean(x.item())
        return x

    Path(path).write_text(json.dumps(clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_per_user(path: str | Path) -> dict[str, dict[int, float]]:
    """Load a per_user.csv back as metric -> {user: value}."""
    out: dict[str, dict[int, float]] = {}
    with open(path, encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            u = int(row.pop("user"))
            for m, v in row.items():
                out.setdefault(m, {})[u] = float(v)
    return out


# ---------------------------------------------------------------- evaluation


def rank_topk(scores: np.ndarray, candidates: np.ndarray, k: int, exclude_mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise top-k candidate ids; ties go to the lower id (candidates ascending)."""
    candidates = np.asarray(candidates)
    if np.any(np.diff(candidates) <= 0):
        order = np.argsort(candidates, kind="stable")
        candidates, scores = candidates[order], scores[:, order]
        if exclude_mask is not None:
            exclude_mask = exclude_mask[:, order]
    s = np.asarray(scores, dtype=np.float64).copy()
    if exclude_mask is not None:
        if np.any((~exclude_mask).sum(axis=1) < k):
            raise MetricError(f"fewer than {k} candidates left after exclusion")
        s[exclude_mask] = -np.inf
    elif len(candidates) < k:
        raise MetricError(f"only {len(candidates)} candidates for top-{k}")
    order = np.argsort(-s, axis=1, kind="stable")[:, :k]
    return candidates[order]


def eval_model(
    model,
    split: Split,
    data: Dataset,
    k: int = 10,
    subset: Sequence[str] | None = None,
    part: str = "test",
    chunk: int = 512,
    keep_recs: bool = False,
) -> MetricReport:
    """Full-catalog (warm) or partition-restricted (cold) top-k evaluation."""
    trained = model.trained_modalities
    if subset is not None:
        subset = list(subset)
        if not subset:
            raise MetricError("modality subset must be non-empty")
        missing = [m for m in subset if m not in trained]
        if missing:
            raise MetricError(f"modalities {missing} were not used in training")
    relevant = split.relevant(part)
    users = np.array(sorted(relevant), dtype=np.int64)
    if len(users) == 0:
        raise MetricError(f"no user has relevant items in {part!r}")
    candidates = np.sort(split.candidate_items(part))
    train = split.train_matrix()
    all_recs = np.empty((len(users), k), dtype=np.int64)
    model.eval()
    for start in range(0, len(users), chunk):
        us = users[start : start + chunk]
        scores = model.score_matrix(us, candidates, subset)
        excl = None
        if split.scenario == "warm":
            excl = np.asarray(train[us][:, candidates].todense(), dtype=bool)
        all_recs[start : start + len(us)] = rank_topk(scores, candidates, k, excl)
    hits = np.array([[i in relevant[u] for i in row] for u, row in zip(users, all_recs)], dtype=bool)
    n_rel = np.array([len(relevant[u]) for u in users])
    per = accuracy_from_hits(hits, n_rel)
    phi = item_popularity(train)
    beyond, coverage = beyond_from_recs(all_recs, phi, history_popularity(train, users, phi))
    per.update(beyond)
    sub = tuple(subset) if subset is not None else tuple(trained)
    return MetricReport(k, users, per, coverage, sub, all_recs if keep_recs else None)


def val_ndcg(model, split: Split, data: Dataset, k: int = 10) -> float:
    return eval_model(model, split, data, k, part="val").mean["ndcg"]


@dataclass
class SubsetGridResult:
    trained_modalities: list[str]
    rows: list[tuple[tuple[str, ...], MetricReport]]

    def mask(self, subset: Sequence[str]) -> int:
        return sum(1 << self.trained_modalities.index(m) for m in subset)

    def by_size(self, metric: str = "ndcg") -> dict[int, float]:
        """Mean of ``metric`` over rows grouped by subset size."""
        groups: dict[int, list[float]] = {}
        for subset, rep in self.rows:
            groups.setdefault(len(subset), []).append(rep.mean[metric])
        return {c: _mean(np.array(v)) for c, v in sorted(groups.items())}

    def table(self) -> list[dict]:
        out = []
        for subset, rep in self.rows:
            out.append(
                {
                    "mask": self.mask(subset),
                    "subset": "+".join(subset),
                    "n_modalities": len(subset),
                    "n_users": rep.n_users_evaluated,
                    **rep.mean,
                }
            )
        return out

    def write(self, out_dir: str | Path) -> None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        rows = self.table()
        write_csv(d / "grid.csv", rows, ["mask", "subset", "n_modalities", "n_users", *METRICS])
        write_json(d / "grid.json", {"trained_modalities": self.trained_modalities, "rows": rows})


def subset_grid(
    model, split: Split, data: Dataset, k: int = 10, modalities: Sequence[str] | None = None, part: str = "test"
) -> SubsetGridResult:
    """Evaluate every non-empty subset of the (given or trained) modalities."""
    mods = list(modalities) if modalities is not None else list(model.trained_modalities)
    if len(mods) < 2:
        raise MetricError("a subset grid needs at least two modalities")
    rows = []
    for size in range(1, len(mods) + 1):
        for subset in itertools.combinations(mods, size):
            rows.append((subset, eval_model(model, split, data, k, subset, part)))
    return SubsetGridResult(mods, rows)


# ---------------------------------------------------------------- significance


@dataclass
class TTestResult:
    t: float
    p: float
    df: int
    n_comparisons: int
    threshold: float
    significant: bool
    zero_variance: bool = False
    mean_diff: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def student_t_sf2(t: float, df: int) -> float:
    """Two-sided tail probability P(|T| >= |t|) via the regularized incomplete beta."""
    x = df / (df + t * t)
    return float(special.betainc(df / 2.0, 0.5, x))


def paired_ttest(a: Sequence[float], b: Sequence[float], n_comparisons: int = 1, alpha: float = 0.05) -> TTestResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError("paired samples must be 1-D and the same length")
    n = len(a)
    if n < 2:
        raise MetricError("paired t-test needs at least two pairs")
    if n_comparisons < 1:
        raise MetricError("n_comparisons must be >= 1")
    threshold = alpha / n_comparisons
    d = a - b
    mean = math.fsum(d) / n
    sd = float(np.sqrt(math.fsum((d - mean) ** 2) / (n - 1)))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, n - 1, n_comparisons, threshold, False, True, 0.0)
        t = math.copysign(math.inf, mean)
        return TTestResult(t, 0.0, n - 1, n_comparisons, threshold, True, True, mean)
    t = mean / (sd / math.sqrt(n))
    p = student_t_sf2(t, n - 1)
    return TTestResult(t, p, n - 1, n_comparisons, threshold, p < threshold, False, mean)


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation; 0 when either side is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    return float(stats.spearmanr(x, y).statistic)
