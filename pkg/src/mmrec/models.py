"""Single-branch (SiBraR), multi-branch (MuBraR) and baseline recommenders.

Every trainable model is a pair of towers, one per entity kind. A tower is
either a lookup table, a profile encoder (DeepMF style), or a multimodal
encoder that maps any of the entity's modalities into the shared space.
Scores are dot products of the two tower outputs (cosine for DeepMF).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import diffcore as dc
from .dataset import INTERACTIONS, Dataset
from .diffcore import Tensor
from .splits import SeededRng, modality_availability, sample_modalities_batch, sample_negatives_batch

KINDS = ("sibrar", "mubrar", "mf", "deepmf", "pop", "rand")
VARIANTS = ("vanilla", "S", "SC")


class ModelError(ValueError):
    pass


@dataclass
class LossConfig:
    alpha: float = 0.0
    beta: float = 0.0
    tau: float = 0.1
    n_neg: int = 10

    def __post_init__(self):
        if self.tau <= 0:
            raise ModelError("temperature must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ModelError("contrastive weights must be non-negative")


@dataclass
class ModelConfig:
    kind: str = "sibrar"
    variant: str = "SC"
    side: str = "item"
    shared_dim: int = 64
    g_layers: list[int] = field(default_factory=lambda: [64])
    branch_layers: list[int] = field(default_factory=lambda: [64])
    embedding_dim: int = 32
    batchnorm: bool = True
    g_output_relu: bool = False
    dropout: float = 0.0
    counterpart: str = "auto"  # lookup | profile | auto
    profile_layers: list[int] = field(default_factory=lambda: [64])
    relu_interactions: bool = True
    relu_embeddings: bool = True
    min_score: float = 1e-6
    train_modalities: list[str] | None = None
    user_modalities: list[str] | None = None
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.kind not in KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}")
        if self.side not in ("item", "user", "both"):
            raise ModelError(f"unknown side {self.side!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known - {"train"}
        if unknown:
            raise ModelError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def contrastive(self) -> bool:
        return self.variant == "SC" and (self.loss.alpha > 0 or self.loss.beta > 0)

    @property
    def n_mod(self) -> int | None:
        """Modalities sampled per training pair (None: use all, no sampling)."""
        if self.variant == "vanilla":
            return None
        return 2 if self.contrastive else 1


# ---------------------------------------------------------------- inputs


class SideInputs:
    """Per-entity modality inputs for one side (users or items).

    The interaction profile is taken from the training matrix and kept
    sparse; other modalities are dense feature matrices. Rows flagged
    unavailable are replaced by zeros before they reach an encoder.
    """

    def __init__(self, data: Dataset, entity: str, names: Sequence[str], train: sp.csr_matrix):
        self.entity = entity
        self.names = list(names)
        self.n = data.n_users if entity == "user" else data.n_items
        self.available = modality_availability(data, entity, self.names, train)
        self.profile = train.tocsr() if entity == "user" else train.T.tocsr()
        self.features: dict[str, np.ndarray | sp.csr_matrix] = {}
        for k, name in enumerate(self.names):
            if name == INTERACTIONS:
                self.features[name] = self.profile
            else:
                mat = data.modality(entity, name).matrix.copy()
                mat[~self.available[:, k]] = 0.0
                self.features[name] = mat

    def dim(self, name: str) -> int:
        return self.features[name].shape[1]

    def rows(self, name: str, entities: np.ndarray):
        return self.features[name][entities]


def build_inputs(data: Dataset, train: sp.csr_matrix, cfg: ModelConfig) -> dict[str, SideInputs]:
    out = {}
    if cfg.kind in ("sibrar", "mubrar"):
        if cfg.side in ("item", "both"):
            names = cfg.train_modalities or data.modality_names("item")
            out["item"] = SideInputs(data, "item", names, train)
        if cfg.side in ("user", "both"):
            names = cfg.user_modalities or data.modality_names("user")
            out["user"] = SideInputs(data, "user", names, train)
    return out


# ---------------------------------------------------------------- towers


class LookupTower(dc.Module):
    multimodal = False

    def __init__(self, n: int, dim: int, rng):
        self.table = dc.Embedding(n, dim, rng)

    def embed(self, entities: np.ndarray) -> Tensor:
        return self.table(entities)


class ProfileTower(dc.Module):
    """Encodes the multi-hot interaction profile (DeepMF tower)."""

    multimodal = False

    def __init__(self, profile: sp.csr_matrix, hidden: Sequence[int], dim: int, rng, relu_hidden=True, relu_out=True):
        self.profile = profile
        self.relu_hidden = relu_hidden
        self.relu_out = relu_out
        self.hidden = [dc.Linear(a, b, rng) for a, b in zip([profile.shape[1], *hidden], hidden)]
        self.out = dc.Linear(hidden[-1] if hidden else profile.shape[1], dim, rng)

    def embed(self, entities: np.ndarray) -> Tensor:
        x = self.profile[np.asarray(entities)]
        for lin in self.hidden:
            x = lin(x)
            if self.relu_hidden:
                x = dc.relu(x)
        x = self.out(x)
        return dc.relu(x) if self.relu_out else x


class MultimodalTower(dc.Module):
    """Encoder over an entity's modalities.

    ``shared=True`` is the single-branch layout: a one-layer adapter per
    modality followed by one encoder ``g`` whose weights every modality
    uses. ``shared=False`` is the multi-branch layout: one deeper,
    independent branch per modality.
    """

    multimodal = True

    def __init__(self, inputs: SideInputs, cfg: ModelConfig, rng, shared: bool):
        self.inputs = inputs
        self.names = inputs.names
        self.shared = shared
        self.out_dim = cfg.embedding_dim
        if shared:
            self.adapters = {
                name: dc.MLP(inputs.dim(name), [cfg.shared_dim], rng, batchnorm=False) for name in self.names
            }
            self.g = dc.MLP(
                cfg.shared_dim,
                [*cfg.g_layers, cfg.embedding_dim],
                rng,
                batchnorm=cfg.batchnorm,
                final_activation=cfg.g_output_relu,
                dropout=cfg.dropout,
            )
        else:
            self.branches = {
                name: dc.MLP(
                    inputs.dim(name),
                    [*cfg.branch_layers, cfg.embedding_dim],
                    rng,
                    batchnorm=cfg.batchnorm,
                    final_activation=False,
                    dropout=cfg.dropout,
                )
                for name in self.names
            }

    def encode(self, entities: np.ndarray, mod_cols: np.ndarray) -> Tensor:
        """Embed row r as entity ``entities[r]`` seen through modality ``mod_cols[r]``."""
        entities = np.asarray(entities)
        mod_cols = np.asarray(mod_cols)
        groups, parts = [], []
        for k, name in enumerate(self.names):
            rows = np.flatnonzero(mod_cols == k)
            if len(rows) == 0:
                continue
            x = self.inputs.rows(name, entities[rows])
            parts.append(self.adapters[name](x) if self.shared else self.branches[name](x))
            groups.append(rows)
        order = np.concatenate(groups)
        h = parts[0] if len(parts) == 1 else dc.concat(parts, axis=0)
        if self.shared:
            h = self.g(h)
        inverse = np.empty_like(order)
        inverse[order] = np.arange(len(order))
        if np.array_equal(inverse, np.arange(len(order))):
            return h
        return dc.take_rows(h, inverse)

    def encode_slots(self, entities: np.ndarray, mod_sel: np.ndarray) -> Tensor:
        """Per-slot embeddings: entities (n,), mod_sel (n, S) -> (n, S, d)."""
        n, s = mod_sel.shape
        flat = self.encode(np.repeat(entities, s), mod_sel.reshape(-1))
        return dc.reshape(flat, (n, s, self.out_dim))

    def modality_matrix(self, entities: np.ndarray, name: str) -> np.ndarray:
        """Eval-mode embeddings of ``entities`` on one modality."""
        k = self.names.index(name)
        with dc.no_grad():
            return self.encode(entities, np.full(len(entities), k)).data

    def embed_subset(self, entities: np.ndarray, subset: Sequence[str]) -> np.ndarray:
        """Mean over the available modalities of ``subset``; zeros where none is."""
        entities = np.asarray(entities)
        acc = np.zeros((len(entities), self.out_dim), dtype=np.float64)
        cnt = np.zeros(len(entities), dtype=np.float64)
        for name in subset:
            if name not in self.names:
                raise ModelError(f"modality {name!r} was not used in training")
            k = self.names.index(name)
            avail = self.inputs.available[entities, k]
            if not avail.any():
                continue
            emb = self.modality_matrix(entities[avail], name)
            acc[avail] += emb
            cnt[avail] += 1
        out = np.divide(acc, cnt[:, None], out=np.zeros_like(acc), where=cnt[:, None] > 0)
        return out.astype(np.float32)


# ---------------------------------------------------------------- losses


def bpr_loss(pos_scores, neg_scores) -> Tensor:
    """-sum ln sigma(pos - neg) over positives (B,) and negatives (B, n)."""
    pos = pos_scores if isinstance(pos_scores, Tensor) else Tensor(np.asarray(pos_scores, dtype=np.float64))
    neg = neg_scores if isinstance(neg_scores, Tensor) else Tensor(np.asarray(neg_scores, dtype=np.float64))
    if pos.data.ndim == 1:
        pos = dc.reshape(pos, (pos.shape[0], 1))
    if neg.data.ndim == 1:
        neg = dc.reshape(neg, (1, neg.shape[0]))
    return -dc.sum_(dc.log_sigmoid(dc.sub(pos, neg)))


def info_nce(anchor: Tensor, candidates: Tensor, tau: float) -> Tensor:
    """One direction: anchor (B, d) against candidates (B, 1+n, d), positive at index 0."""
    b, d = anchor.shape
    logits = dc.scale(dc.dot(dc.reshape(anchor, (b, 1, d)), candidates), 1.0 / tau)
    return dc.sum_(dc.sub(dc.logsumexp(logits, axis=-1), logits[:, 0]))


def sinfonce_loss(emb_m1, emb_m2, tau: float) -> Tensor:
    """Symmetric InfoNCE between two modality views.

    ``emb_m1``/``emb_m2`` have shape (B, 1+n, d) (or (1+n, d) for a
    single pair); index 0 along the candidate axis is the positive item.
    """
    if tau <= 0:
        raise ModelError("temperature must be positive")
    m1 = emb_m1 if isinstance(emb_m1, Tensor) else Tensor(np.asarray(emb_m1, dtype=np.float64))
    m2 = emb_m2 if isinstance(emb_m2, Tensor) else Tensor(np.asarray(emb_m2, dtype=np.float64))
    if m1.data.ndim == 2:
        m1 = dc.reshape(m1, (1, *m1.shape))
        m2 = dc.reshape(m2, (1, *m2.shape))
    return dc.add(info_nce(m1[:, 0], m2, tau), info_nce(m2[:, 0], m1, tau))


def inbatch_sinfonce(v1: Tensor, v2: Tensor, tau: float) -> Tensor:
    """Symmetric InfoNCE where the other rows of the batch act as negatives."""
    b = v1.shape[0]
    logits = dc.scale(dc.matmul(v1, dc.transpose(v2)), 1.0 / tau)
    diag = logits[np.arange(b), np.arange(b)]
    one = dc.sum_(dc.sub(dc.logsumexp(logits, axis=1), diag))
    other = dc.sum_(dc.sub(dc.logsumexp(dc.transpose(logits), axis=1), diag))
    return dc.add(one, other)


# ---------------------------------------------------------------- batches


@dataclass
class Batch:
    users: np.ndarray
    items: np.ndarray
    negatives: np.ndarray
    item_mods: np.ndarray | None = None
    user_mods: np.ndarray | None = None

    @property
    def candidates(self) -> np.ndarray:
        return np.concatenate([self.items[:, None], self.negatives], axis=1)


# ---------------------------------------------------------------- models


class Recommender:
    """Common scoring interface for trainable and heuristic recommenders."""

    kind = "base"
    trainable = False

    def score_matrix(self, users: np.ndarray, items: np.ndarray, subset: Sequence[str] | None = None) -> np.ndarray:
        raise NotImplementedError

    def train(self, mode: bool = True):
        return self

    def eval(self):
        return self.train(False)

    @property
    def trained_modalities(self) -> list[str]:
        return []


class TwoTowerModel(dc.Module, Recommender):
    trainable = True

    def __init__(self, cfg: ModelConfig, data: Dataset, train: sp.csr_matrix, dtype=np.float32, scenario: str = "warm"):
        self.cfg = cfg
        self.scenario = scenario
        self.kind = cfg.kind
        self.n_users, self.n_items = data.n_users, data.n_items
        self.inputs = build_inputs(data, train, cfg)
        rng = SeededRng(cfg.seed, "init").gen
        dim = cfg.embedding_dim
        self.cosine = cfg.kind == "deepmf"
        if cfg.kind in ("sibrar", "mubrar"):
            shared = cfg.kind == "sibrar"
            mm_user = cfg.side in ("user", "both")
            mm_item = cfg.side in ("item", "both")
            self.item_tower = (
                MultimodalTower(self.inputs["item"], cfg, rng, shared) if mm_item else self._counterpart("item", train, rng)
            )
            self.user_tower = (
                MultimodalTower(self.inputs["user"], cfg, rng, shared) if mm_user else self._counterpart("user", train, rng)
            )
        elif cfg.kind == "mf":
            self.user_tower = LookupTower(self.n_users, dim, rng)
            self.item_tower = LookupTower(self.n_items, dim, rng)
        elif cfg.kind == "deepmf":
            self.user_tower = ProfileTower(
                train.tocsr(), cfg.profile_layers, dim, rng, cfg.relu_interactions, cfg.relu_embeddings
            )
            self.item_tower = ProfileTower(
                train.T.tocsr(), cfg.profile_layers, dim, rng, cfg.relu_interactions, cfg.relu_embeddings
            )
        else:
            raise ModelError(f"{cfg.kind} is not a two-tower model")
        drop_rng = SeededRng(cfg.seed, "dropout").gen
        for m in self.modules():
            if isinstance(m, dc.MLP):
                m.set_dropout_rng(drop_rng)
        if dtype != np.float32:
            self.to(dtype)

    def _counterpart(self, entity: str, train: sp.csr_matrix, rng):
        mode = self.cfg.counterpart
        if mode == "auto":
            # a lookup table cannot embed entities that never appear in training
            mode = "profile" if self.scenario == f"{entity}-cold" else "lookup"
        n = self.n_users if entity == "user" else self.n_items
        if mode == "lookup":
            return LookupTower(n, self.cfg.embedding_dim, rng)
        if mode == "profile":
            profile = train.tocsr() if entity == "user" else train.T.tocsr()
            return ProfileTower(profile, self.cfg.profile_layers, self.cfg.embedding_dim, rng)
        raise ModelError(f"unknown counterpart {mode!r}")

    def train(self, mode: bool = True):
        return dc.Module.train(self, mode)

    @property
    def trained_modalities(self) -> list[str]:
        if self.item_tower.multimodal:
            return list(self.item_tower.names)
        if self.user_tower.multimodal:
            return list(self.user_tower.names)
        return []

    @property
    def main_tower(self):
        return self.item_tower if self.item_tower.multimodal else self.user_tower

    # ------------------------------------------------------------ training

    def sample_batch(self, pairs: np.ndarray, train: sp.csr_matrix, rng, item_candidates=None) -> Batch:
        """Draw negatives and modalities for a batch of positive pairs."""
        pairs = np.asarray(pairs)
        users, items = pairs[:, 0], pairs[:, 1]
        neg = sample_negatives_batch(users, self.cfg.loss.n_neg, train, rng.child("neg"), item_candidates)
        batch = Batch(users, items, neg)
        n_mod = self.cfg.n_mod
        for side, ents in (("item", items), ("user", users)):
            tower = self.item_tower if side == "item" else self.user_tower
            if not tower.multimodal:
                continue
            avail = tower.inputs.available[ents]
            if n_mod is None:
                mods = np.tile(np.arange(len(tower.names)), (len(ents), 1))
            else:
                mods = sample_modalities_batch(avail, n_mod, rng.child(f"mod-{side}"))
            setattr(batch, f"{side}_mods", mods)
        return batch

    def _user_side(self, batch: Batch) -> tuple[Tensor, Tensor | None]:
        if not self.user_tower.multimodal:
            return self.user_tower.embed(batch.users), None
        slots = self.user_tower.encode_slots(batch.users, batch.user_mods)
        return dc.mean(slots, axis=1), slots

    def _item_side(self, batch: Batch) -> tuple[Tensor, Tensor | None]:
        cand = batch.candidates
        b, c = cand.shape
        if not self.item_tower.multimodal:
            e = self.item_tower.embed(cand.reshape(-1))
            return dc.reshape(e, (b, c, e.shape[-1])), None
        s = batch.item_mods.shape[1]
        ents = cand.reshape(-1)
        mods = np.repeat(batch.item_mods, c, axis=0)  # negatives reuse the positive's modalities
        slots = self.item_tower.encode_slots(ents, mods)  # (b*c, s, d)
        d = slots.shape[-1]
        slots = dc.reshape(slots, (b, c, s, d))
        return dc.mean(slots, axis=2), slots

    def _pair_scores(self, eu: Tensor, ei: Tensor) -> Tensor:
        b, d = eu.shape
        if self.cosine:
            eu = dc.l2_normalize(eu)
            ei = dc.l2_normalize(ei)
        s = dc.dot(dc.reshape(eu, (b, 1, d)), ei)
        return dc.clamp_min(s, self.cfg.min_score) if self.cosine else s

    def batch_loss(self, batch: Batch, parts: dict | None = None) -> Tensor:
        """BPR plus weighted symmetric InfoNCE for one batch (summed, not averaged)."""
        lc = self.cfg.loss
        eu, user_slots = self._user_side(batch)
        ei, item_slots = self._item_side(batch)
        scores = self._pair_scores(eu, ei)
        loss = bpr_loss(scores[:, 0], scores[:, 1:])
        if parts is not None:
            parts["bpr"] = float(loss.data)
        if self.cfg.contrastive:
            item_w = lc.alpha if self.cfg.side != "user" else 0.0
            user_w = lc.beta if self.cfg.side == "both" else (lc.alpha if self.cfg.side == "user" else 0.0)
            if item_slots is not None and item_w > 0:
                c_item = sinfonce_loss(item_slots[:, :, 0], item_slots[:, :, 1], lc.tau)
                loss = dc.add(loss, dc.scale(c_item, item_w))
                if parts is not None:
                    parts["sinfonce_item"] = float(c_item.data)
            if user_slots is not None and user_w > 0:
                c_user = inbatch_sinfonce(user_slots[:, 0], user_slots[:, 1], lc.tau)
                loss = dc.add(loss, dc.scale(c_user, user_w))
                if parts is not None:
                    parts["sinfonce_user"] = float(c_user.data)
        return loss

    # ------------------------------------------------------------ inference

    def _tower_embeddings(self, tower, entities: np.ndarray, subset) -> np.ndarray:
        with dc.no_grad():
            if tower.multimodal:
                return tower.embed_subset(entities, subset if subset is not None else tower.names)
            return tower.embed(np.asarray(entities)).data

    def user_embeddings(self, users: np.ndarray, subset=None) -> np.ndarray:
        sub = subset if self.user_tower is self.main_tower else None
        return self._tower_embeddings(self.user_tower, users, sub)

    def item_embeddings(self, items: np.ndarray, subset=None) -> np.ndarray:
        sub = subset if self.item_tower is self.main_tower else None
        return self._tower_embeddings(self.item_tower, items, sub)

    def score_matrix(self, users, items, subset=None) -> np.ndarray:
        eu = self.user_embeddings(np.asarray(users), subset).astype(np.float64)
        ei = self.item_embeddings(np.asarray(items), subset).astype(np.float64)
        if self.cosine:
            eu = eu / np.maximum(np.linalg.norm(eu, axis=1, keepdims=True), 1e-12)
            ei = ei / np.maximum(np.linalg.norm(ei, axis=1, keepdims=True), 1e-12)
            return np.maximum(eu @ ei.T, self.cfg.min_score)
        return eu @ ei.T


class PopModel(Recommender):
    """Ranks by training popularity, identically for every user."""

    kind = "pop"

    def __init__(self, train: sp.csr_matrix):
        counts = np.asarray(train.getnnz(axis=0), dtype=np.float64)
        n_users = max(train.shape[0], 1)
        self.popularity = counts / n_users

    def score_matrix(self, users, items, subset=None) -> np.ndarray:
        return np.tile(self.popularity[np.asarray(items)], (len(users), 1))


class RandModel(Recommender):
    """Seeded uniform score per (user, item)."""

    kind = "rand"

    def __init__(self, n_items: int, seed: int = 0):
        self.n_items = n_items
        self.seed = seed

    def score_matrix(self, users, items, subset=None) -> np.ndarray:
        out = np.empty((len(users), len(items)))
        for r, u in enumerate(users):
            row = SeededRng(self.seed, f"rand/{int(u)}").gen.random(self.n_items)
            out[r] = row[np.asarray(items)]
        return out


def build_model(
    cfg: ModelConfig, data: Dataset, train: sp.csr_matrix, dtype=np.float32, scenario: str = "warm"
) -> Recommender:
    if cfg.kind == "pop":
        return PopModel(train)
    if cfg.kind == "rand":
        return RandModel(data.n_items, cfg.seed)
    return TwoTowerModel(cfg, data, train, dtype, scenario)


# ---------------------------------------------------------------- operations


def embed_item_training(model: TwoTowerModel, item: int, sampled_mods: Sequence[str]) -> Tensor:
    """Training-mode item embedding: mean of the sampled modality embeddings."""
    tower = model.item_tower
    avail = tower.inputs.available[item]
    cols = []
    for name in sampled_mods:
        k = tower.names.index(name)
        if not avail[k]:
            raise ModelError(f"modality {name!r} unavailable for item {item}")
        cols.append(k)
    slots = tower.encode_slots(np.array([item]), np.array([cols]))
    return dc.mean(slots, axis=1)[0]


def embed_item_inference(model: TwoTowerModel, item: int, subset: Sequence[str]) -> np.ndarray:
    if not subset:
        raise ModelError("modality subset must be non-empty")
    return model.item_tower.embed_subset(np.array([item]), list(subset))[0]


def score(model: Recommender, user: int, item_embedding=None, item: int | None = None) -> float:
    if isinstance(model, TwoTowerModel):
        eu = model.user_embeddings(np.array([user]))[0].astype(np.float64)
        ei = np.asarray(item_embedding, dtype=np.float64)
        if model.cosine:
            cos = eu @ ei / max(np.linalg.norm(eu) * np.linalg.norm(ei), 1e-12)
            return float(max(cos, model.cfg.min_score))
        return float(eu @ ei)
    if item is None:
        raise ModelError("heuristic models score by item index")
    return float(model.score_matrix(np.array([user]), np.array([item]))[0, 0])


def deepmf_score(cosine: float, min_score: float) -> float:
    return max(cosine, min_score)


def topk_from_scores(scores: np.ndarray, candidates: np.ndarray, k: int, exclude=()) -> np.ndarray:
    """Top-k of ``candidates`` by score; ties go to the lower item index."""
    candidates = np.asarray(candidates)
    keep = ~np.isin(candidates, np.fromiter(exclude, dtype=np.int64, count=len(exclude)))
    cand, sc = candidates[keep], np.asarray(scores)[keep]
    if len(cand) < k:
        raise ModelError(f"only {len(cand)} candidates for top-{k}")
    order = np.lexsort((cand, -sc))
    return cand[order[:k]]


def recommend_topk(
    model: Recommender,
    user: int,
    k: int,
    exclude=(),
    subset: Sequence[str] | None = None,
    candidates: np.ndarray | None = None,
) -> list[int]:
    n_items = getattr(model, "n_items", None)
    if candidates is None:
        if n_items is None:
            n_items = len(model.popularity)
        candidates = np.arange(n_items)
    s = model.score_matrix(np.array([user]), np.asarray(candidates), subset)[0]
    return topk_from_scores(s, candidates, k, exclude).tolist()


def preset(kind: str, variant: str = "SC", **overrides) -> ModelConfig:
    """Desk-scale defaults per model family.

    Multi-branch networks run without batchnorm: their per-modality branches
    then keep the modality-specific offsets of the inputs, which is the
    regime the multi-branch baseline is meant to represent.
    """
    base: dict = {"kind": kind, "variant": variant}
    if kind == "mubrar":
        base["batchnorm"] = False
    if variant == "SC":
        base["loss"] = LossConfig(alpha=0.1, tau=0.1)
    base.update(overrides)
    return ModelConfig(**base)
