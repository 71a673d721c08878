"""End-to-end checks on trained models over synthetic data."""

import logging

import numpy as np
import pytest

from mmrec.metrics import eval_model, subset_grid
from mmrec.models import RandModel, build_model, preset
from mmrec.splits import split_cold, split_warm
from mmrec.synth import ModalitySpec, SynthConfig, generate_dataset
from mmrec.trainer import TrainConfig, train


def fitted(data, split, seed):
    model = build_model(preset("sibrar", "SC", seed=seed), data, split.train_matrix(), scenario=split.scenario)
    train(model, split, data, TrainConfig(seed=seed))
    return model


def test_more_modalities_do_not_hurt():
    data, _ = generate_dataset(SynthConfig())
    split = split_warm(data, seed=0)
    model = fitted(data, split, 0)
    grid = subset_grid(model, split, data)
    assert len(grid.rows) == 15
    by_size = grid.by_size()
    for c in range(1, 4):
        assert by_size[c + 1] >= by_size[c] - 0.01
    full = eval_model(model, split, data)
    assert grid.rows[-1][1].mean == full.mean


def test_item_cold_beats_random_without_noise(caplog):
    # 1000 items keep the cold candidate pool (100 items) large enough that
    # a random ranking scores well below what a 5x margin allows
    caplog.set_level(logging.ERROR)
    mods = [ModalitySpec(n, d, 0.0, 1.0) for n, d in (("text", 16), ("audio", 24), ("image", 32))]
    data, _ = generate_dataset(SynthConfig(n_items=1000, modalities=mods))
    ratios = []
    for seed in (0, 1, 2):
        split = split_cold(data, "item", seed=seed)
        model = fitted(data, split, seed)
        ours = eval_model(model, split, data).mean["ndcg"]
        rand = eval_model(RandModel(data.n_items, seed), split, data).mean["ndcg"]
        ratios.append(ours / rand)
    assert np.mean(ratios) >= 5.0
