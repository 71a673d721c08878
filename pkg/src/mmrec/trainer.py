"""Epoch loop with validation-driven early stopping, plus checkpoint I/O."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffcore as dc
from .dataset import Dataset
from .metrics import MetricError, val_ndcg
from .models import ModelConfig, TwoTowerModel, build_model
from .splits import SeededRng, Split, hash64, make_batches

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    max_epochs: int = 50
    patience: int = 5
    lr: float = 1e-2
    weight_decay: float = 0.0
    batch_size: int = 128
    eval_k: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_ndcg: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based; 0 means no epoch finished

    @property
    def n_epochs(self) -> int:
        return len(self.val_ndcg)

    def rows(self) -> list[dict]:
        return [
            {"epoch": e + 1, "train_loss": self.train_loss[e], "val_ndcg10": self.val_ndcg[e]}
            for e in range(self.n_epochs)
        ]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_ndcg10"])
            for r in self.rows():
                w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["val_ndcg10"])])


class EarlyStopping:
    """Tracks the best score; an epoch counts as better only on strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, value: float) -> tuple[bool, bool]:
        """Returns (improved, should_stop)."""
        if value > self.best:
            self.best, self.best_epoch, self.wait = value, epoch, 0
            return True, False
        self.wait += 1
        return False, self.wait >= self.patience


def _batches(pairs: np.ndarray, batch_size: int, seed: int):
    batches = list(make_batches(pairs, batch_size, seed))
    # batchnorm needs two rows; fold a trailing singleton into its predecessor
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def train(
    model,
    split: Split,
    data: Dataset,
    cfg: TrainConfig,
    validate: Callable[[object, int], float] | None = None,
) -> tuple[dict[str, np.ndarray], TrainHistory]:
    """Train ``model`` in place; returns the best state dict and the history.

    ``validate(model, epoch)`` replaces the default validation NDCG@k. On
    return the model holds the weights of the best epoch.
    """
    history = TrainHistory()
    if not getattr(model, "trainable", False):
        return {}, history
    if validate is None:
        if not split.relevant("val"):
            raise TrainingError("validation set has no relevant items; nothing to select on")

        def validate(m, epoch):
            return val_ndcg(m, split, data, cfg.eval_k)

    train_matrix = split.train_matrix()
    pairs = split.train
    item_pool = split.train_items() if split.scenario == "item-cold" else None
    params = model.parameters()
    stopper = EarlyStopping(cfg.patience)
    best_state = {k: v.copy() for k, v in model.state_dict().items()}
    step = 0
    root = SeededRng(cfg.seed, "train")
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        model.train()
        total, count = 0.0, 0
        for b, batch_pairs in enumerate(_batches(pairs, cfg.batch_size, hash64(cfg.seed, f"epoch/{epoch}"))):
            batch = model.sample_batch(batch_pairs, train_matrix, root.child(f"{epoch}/{b}"), item_pool)
            loss = model.batch_loss(batch)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            dc.backward(loss)
            step += 1
            dc.adam_step(params, cfg.lr, weight_decay=cfg.weight_decay, t=step)
            total += value
            count += len(batch_pairs)
        model.eval()
        try:
            score = float(validate(model, epoch))
        except MetricError as exc:
            raise TrainingError(str(exc)) from exc
        history.train_loss.append(total / max(count, 1))
        history.val_ndcg.append(score)
        history.wall_time.append(time.perf_counter() - t0)
        improved, stop = stopper.update(epoch, score)
        if improved:
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
        log.info("epoch %d loss %.5f val_ndcg %.5f", epoch, history.train_loss[-1], score)
        if stop:
            break
    history.best_epoch = stopper.best_epoch
    model.load_state_dict(best_state)
    model.eval()
    return best_state, history


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: TwoTowerModel, path: str | Path) -> None:
    """Write params.json (header) and params.bin (f32 little-endian values)."""
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    entries = [{"name": k, "shape": list(v.shape)} for k, v in state.items()]
    header = {
        "version": CHECKPOINT_VERSION,
        "dtype": "float32-le",
        "scenario": model.scenario,
        "config": model.cfg.to_dict(),
        "init": {"linear": "glorot_uniform", "bias": "zeros", "embedding": "normal(0, 0.1)"},
        "batchnorm": {"momentum": 0.1, "eps": 1e-5, "order": "linear-batchnorm-relu"},
        "entries": entries,
    }
    (d / "params.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(d / "params.bin", "wb") as fh:
        for v in state.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path, data: Dataset, split: Split) -> TwoTowerModel:
    d = Path(path)
    try:
        header = json.loads((d / "params.json").read_text(encoding="utf-8"))
        blob = (d / "params.bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint at {d}: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {header.get('version')} != {CHECKPOINT_VERSION}")
    cfg = ModelConfig.from_dict(header["config"])
    model = build_model(cfg, data, split.train_matrix(), scenario=header.get("scenario", split.scenario))
    expected = sum(int(np.prod(e["shape"])) for e in header["entries"]) * 4
    if len(blob) != expected:
        raise CheckpointError(f"corrupt checkpoint: params.bin has {len(blob)} bytes, expected {expected}")
    state, offset = {}, 0
    for e in header["entries"]:
        n = int(np.prod(e["shape"]))
        state[e["name"]] = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(e["shape"]).copy()
        offset += 4 * n
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not match its config: {exc}") from exc
    model.eval()
    return model


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
