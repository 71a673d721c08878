import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import settings

from mmrec.dataset import Dataset, ModalityStore

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def make_dataset(pairs, n_users, n_items, item_mods=None, user_mods=None, name="toy"):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    R = sp.csr_matrix((np.ones(len(pairs), np.float32), (pairs[:, 0], pairs[:, 1])), shape=(n_users, n_items))
    item_mods = item_mods or {}
    user_mods = user_mods or {}
    return Dataset(
        [f"u{k}" for k in range(n_users)],
        [f"i{k}" for k in range(n_items)],
        R,
        [ModalityStore(k, "user", m, np.ones(n_users, bool)) for k, m in user_mods.items()],
        [ModalityStore(k, "item", m, np.ones(n_items, bool)) for k, m in item_mods.items()],
        name=name,
    )


@pytest.fixture
def toy():
    """4 users x 6 items with two item modalities."""
    rng = np.random.default_rng(0)
    pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 3), (2, 2), (2, 4), (2, 5), (3, 0), (3, 5)]
    mods = {"text": rng.normal(size=(6, 5)), "audio": rng.normal(size=(6, 3))}
    return make_dataset(pairs, 4, 6, mods)


@pytest.fixture(scope="session")
def small_synth():
    from mmrec.synth import ModalitySpec, SynthConfig, generate_dataset

    cfg = SynthConfig(
        n_users=40,
        n_items=60,
        latent_dim=4,
        modalities=[ModalitySpec("text", 6, 0.2), ModalitySpec("audio", 5, 0.4)],
        density=0.15,
        seed=3,
    )
    data, _ = generate_dataset(cfg)
    return data
