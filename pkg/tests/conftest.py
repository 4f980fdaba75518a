"""Session-scoped trained models shared by the acceptance criteria."""

import time

import pytest

from pointvig import datasets, networks, training


@pytest.fixture(scope="session")
def shape_data():
    return datasets.make_synthetic_shapes(600, 120, 256, seed=0)


@pytest.fixture(scope="session")
def trained_classifiers(shape_data):
    """Shape classifiers for seeds 0/1/2, early-stopped at OA >= 0.95.

    Returns {seed: (model, history, elapsed_seconds)}.
    """
    train, test = shape_data
    out = {}
    for seed in (0, 1, 2):
        model = networks.build_model(
            networks.desk_classification_spec(len(datasets.SHAPE_CLASSES)),
            seed=seed)
        cfg = training.TrainConfig(epochs=50, batch_size=32, seed=seed,
                                   target_metric="OA", target_value=0.95)
        t0 = time.perf_counter()
        history = training.train(model, train, test, cfg)
        out[seed] = (model, history, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="session")
def scene_data():
    return datasets.make_synthetic_scenes(48, 12, 2048, seed=0)


@pytest.fixture(scope="session")
def trained_segmenter(scene_data):
    """Scene segmenter early-stopped at mIoU >= 0.85; (model, history, secs)."""
    train, test = scene_data
    model = networks.build_model(
        networks.desk_segmentation_spec(len(datasets.SCENE_CLASSES)), seed=0)
    cfg = training.TrainConfig(epochs=60, batch_size=4, seed=0, augment=False,
                               target_metric="mIoU", target_value=0.85)
    t0 = time.perf_counter()
    history = training.train(model, train, test, cfg)
    return model, history, time.perf_counter() - t0
