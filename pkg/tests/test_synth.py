import hashlib
import json

import numpy as np
import pytest

from mmrec.dataset import load_dataset
from mmrec.synth import CalibrationError, ModalitySpec, SynthConfig, calibrate_bias, generate, generate_dataset


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_noise_free_modality_is_linear_in_latents():
    cfg = SynthConfig(modalities=[ModalitySpec("clean", 12, 0.0, 1.0), ModalitySpec("noisy", 6, 2.0)])
    data, truth = generate_dataset(cfg)
    z = np.asarray(truth["item_latents"])
    y = data.modality("item", "clean").matrix.astype(np.float64)
    # ridge regression with an intercept, solved through the normal equations
    x = np.hstack([z, np.ones((len(z), 1))])
    w = np.linalg.solve(x.T @ x + 1e-6 * np.eye(x.shape[1]), x.T @ y)
    resid = y - x @ w
    r2 = 1 - resid.var(axis=0).sum() / y.var(axis=0).sum()
    assert r2 > 0.99
    np.testing.assert_allclose(w[:-1], truth["maps"]["item/clean"]["map"], atol=1e-3)


def test_density_calibration():
    data, truth = generate_dataset(SynthConfig(density=0.02))
    assert 0.019 <= data.n_interactions / (200 * 300) <= 0.021
    assert truth["realized_density"] == data.n_interactions / 60000


def test_default_dataset_shape():
    data, _ = generate_dataset(SynthConfig())
    assert (data.n_users, data.n_items) == (200, 300)
    assert data.modality_names("item") == ["interactions", "text", "audio", "image"]
    assert [data.modality("item", m).dim for m in ("text", "audio", "image")] == [16, 24, 32]
    assert abs(data.n_interactions / 60000 - 0.03) <= 0.05 * 0.03
    pop = np.asarray(data.interactions.sum(axis=0)).ravel()
    assert pop.std() > 0  # heterogeneous popularity


def test_same_seed_byte_identical(tmp_path):
    generate(SynthConfig(seed=11), tmp_path / "a")
    generate(SynthConfig(seed=11), tmp_path / "b")
    generate(SynthConfig(seed=12), tmp_path / "c")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_roundtrip_and_truth(tmp_path):
    cfg = SynthConfig(n_users=30, n_items=40, density=0.2, user_modalities=[ModalitySpec("demo", 3, 0.1)])
    data = generate(cfg, tmp_path)
    back = load_dataset(tmp_path / "dataset.json")
    np.testing.assert_array_equal(back.pairs(), data.pairs())
    np.testing.assert_array_equal(back.modality("user", "demo").matrix, data.modality("user", "demo").matrix)
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert SynthConfig.from_dict(truth["config"]) == cfg
    assert {"bias", "user_latents", "item_latents", "maps"} <= set(truth)


def test_sparse_config_warns(caplog):
    generate_dataset(SynthConfig(n_users=20, n_items=20, density=0.05))
    assert "5-core" in caplog.text
    assert SynthConfig(n_users=20, n_items=20, density=0.5).core_viable


def test_calibration_failure():
    logits = np.zeros((2, 2))
    uniforms = np.full((2, 2), 0.5)  # every cell flips at the same b: densities 0 or 1 only
    with pytest.raises(CalibrationError):
        calibrate_bias(logits, uniforms, 0.5)


def test_invalid_configs():
    with pytest.raises(ValueError):
        SynthConfig(density=0.0)
    with pytest.raises(ValueError):
        ModalitySpec("x", 4, -1.0)
    with pytest.raises(ValueError):
        SynthConfig(modalities=[ModalitySpec("a", 2), ModalitySpec("a", 3)])
