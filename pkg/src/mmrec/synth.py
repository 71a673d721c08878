"""Planted-structure synthetic datasets.

Users and items get Gaussian latents; interactions are Bernoulli draws from
a logistic link on the latent dot product, and every modality is a fixed
random linear image of the entity latent plus Gaussian noise.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .dataset import Dataset, ModalityStore, save_dataset
from .splits import SeededRng

log = logging.getLogger(__name__)


class CalibrationError(RuntimeError):
    pass


@dataclass
class ModalitySpec:
    name: str
    dim: int
    noise_sigma: float = 0.0
    offset: float = 0.0  # scale of a constant per-modality shift (real features are rarely centred)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"modality {self.name!r}: dim must be positive")
        if self.noise_sigma < 0:
            raise ValueError(f"modality {self.name!r}: noise_sigma must be >= 0")


def _default_item_modalities() -> list[ModalitySpec]:
    return [
        ModalitySpec("text", 16, 0.3, 1.0),
        ModalitySpec("audio", 24, 0.6, 1.0),
        ModalitySpec("image", 32, 0.9, 1.0),
    ]


@dataclass
class SynthConfig:
    n_users: int = 200
    n_items: int = 300
    latent_dim: int = 8
    modalities: list[ModalitySpec] = field(default_factory=_default_item_modalities)
    user_modalities: list[ModalitySpec] = field(default_factory=list)
    density: float = 0.03
    signal: float = 6.0
    seed: int = 7
    name: str = "synthetic"

    def __post_init__(self):
        self.modalities = [m if isinstance(m, ModalitySpec) else ModalitySpec(**m) for m in self.modalities]
        self.user_modalities = [m if isinstance(m, ModalitySpec) else ModalitySpec(**m) for m in self.user_modalities]
        if self.n_users < 1 or self.n_items < 1 or self.latent_dim < 1:
            raise ValueError("sizes must be positive")
        if not 0.0 < self.density < 1.0:
            raise ValueError("density must lie in (0, 1)")
        for group in (self.modalities, self.user_modalities):
            names = [m.name for m in group]
            if len(set(names)) != len(names):
                raise ValueError("modality names must be unique per entity kind")

    @property
    def core_viable(self) -> bool:
        """Whether the expected edge count leaves room for 5-core filtering."""
        return self.density * self.n_users * self.n_items >= 5 * (self.n_users + self.n_items)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def calibrate_bias(logits: np.ndarray, uniforms: np.ndarray, density: float, max_steps: int = 100) -> float:
    """Bisection for b so that mean(uniforms < sigmoid(logits + b)) hits ``density``.

    The uniforms are fixed, so realized density is a monotone step function
    of b and the search converges to the closest achievable value.
    """
    n = logits.size
    # u < sigmoid(x) <=> logit(u) < x; compare in logit space to avoid overflow
    thresh = np.log(uniforms) - np.log1p(-uniforms) - logits
    target = density * n
    lo, hi = float(thresh.min()) - 1.0, float(thresh.max()) + 1.0
    best_b, best_err = lo, math.inf
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        count = int(np.count_nonzero(thresh < mid))
        err = abs(count - target)
        if err < best_err:
            best_b, best_err = mid, err
        if count < target:
            lo = mid
        elif count > target:
            hi = mid
        else:
            break
    if best_err > 0.05 * target:
        raise CalibrationError(f"density calibration did not converge (off by {best_err / n:.4g})")
    return best_b


def _modality(spec: ModalitySpec, latents: np.ndarray, rng: SeededRng) -> tuple[np.ndarray, dict]:
    gen = rng.child(spec.name).gen
    latent_dim = latents.shape[1]
    linear = gen.standard_normal((latent_dim, spec.dim))
    shift = spec.offset * gen.standard_normal(spec.dim)
    noise = gen.standard_normal((latents.shape[0], spec.dim))
    mat = latents @ linear + shift + spec.noise_sigma * noise
    return mat.astype(np.float32), {"map": linear.tolist(), "shift": shift.tolist()}


def generate_dataset(cfg: SynthConfig) -> tuple[Dataset, dict]:
    """Build the dataset in memory; returns it together with the planted truth."""
    if not cfg.core_viable:
        log.warning(
            "density %.4g gives fewer than 5*(users+items) expected interactions; 5-core filtering would prune heavily",
            cfg.density,
        )
    root = SeededRng(cfg.seed, "synth")
    std = 1.0 / math.sqrt(cfg.latent_dim)
    z_u = std * root.child("user-latents").gen.standard_normal((cfg.n_users, cfg.latent_dim))
    z_i = std * root.child("item-latents").gen.standard_normal((cfg.n_items, cfg.latent_dim))
    logits = cfg.signal * (z_u @ z_i.T)
    uniforms = root.child("bernoulli").gen.random(logits.shape)
    uniforms = np.clip(uniforms, 1e-12, 1 - 1e-12)
    b = calibrate_bias(logits, uniforms, cfg.density)
    hit = np.log(uniforms) - np.log1p(-uniforms) < logits + b
    R = sp.csr_matrix(hit.astype(np.float32))

    truth = {"bias": b, "signal": cfg.signal, "user_latents": z_u.tolist(), "item_latents": z_i.tolist(), "maps": {}}
    item_stores, user_stores = [], []
    for spec in cfg.modalities:
        mat, info = _modality(spec, z_i, root.child("item-mod"))
        item_stores.append(ModalityStore(spec.name, "item", mat, np.ones(cfg.n_items, dtype=bool)))
        truth["maps"][f"item/{spec.name}"] = info
    for spec in cfg.user_modalities:
        mat, info = _modality(spec, z_u, root.child("user-mod"))
        user_stores.append(ModalityStore(spec.name, "user", mat, np.ones(cfg.n_users, dtype=bool)))
        truth["maps"][f"user/{spec.name}"] = info
    width_u, width_i = len(str(cfg.n_users - 1)), len(str(cfg.n_items - 1))
    data = Dataset(
        user_ids=[f"u{k:0{width_u}d}" for k in range(cfg.n_users)],
        item_ids=[f"i{k:0{width_i}d}" for k in range(cfg.n_items)],
        interactions=R,
        user_modalities=user_stores,
        item_modalities=item_stores,
        name=cfg.name,
    )
    truth["realized_density"] = data.n_interactions / (cfg.n_users * cfg.n_items)
    return data, truth


def generate(cfg: SynthConfig, out_dir: str | Path | None = None) -> Dataset:
    """Generate a dataset; when ``out_dir`` is given also write it plus truth.json."""
    data, truth = generate_dataset(cfg)
    if out_dir is not None:
        out = Path(out_dir)
        save_dataset(data, out)
        truth["config"] = cfg.to_dict()
        (out / "truth.json").write_text(json.dumps(truth, sort_keys=True) + "\n", encoding="utf-8")
    return data
