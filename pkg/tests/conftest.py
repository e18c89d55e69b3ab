import csv
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, stats

from stereoloc.geometry import KITTI_RIG, HeightPrior
from stereoloc.pairs import PairTable
from stereoloc.synth import SceneConfig, dataset_split, generate_frames
from stereoloc.training import TrainConfig, evaluation_pairs, load_model, train, training_pairs


def quadrature_task_error(prior=HeightPrior()):
    """E|m/h - 1| for h ~ N(m, s) by adaptive quadrature, split at h = m where the kink lies."""
    m, s = prior.mean_m, prior.std_m
    f = lambda h: abs(m / h - 1.0) * stats.norm.pdf(h, m, s)
    lo, hi = m - 12 * s, m + 12 * s
    return integrate.quad(f, lo, m, epsabs=1e-13)[0] + integrate.quad(f, m, hi, epsabs=1e-13)[0]


@pytest.fixture(scope="session")
def c_oracle():
    return quadrature_task_error()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- trained models shared by the acceptance and trained-property tests ------------

ACCEPT_FRAMES = 2000
ACCEPT_EPOCHS = int(os.environ.get("STEREOLOC_ACCEPT_EPOCHS", "300"))
# constant rate for 70% of the run, then two tenfold drops
ACCEPT_MILESTONES = (0.7, 0.9)
VARIANTS = {"full": {}, "no_ism": {"w_ism": 0.0}, "no_ki": {"ki": False}}


@dataclass
class TrainedModel:
    network: object
    meta: dict
    log: list
    seconds: float


@pytest.fixture(scope="session")
def accept_data():
    frames = generate_frames(SceneConfig(), ACCEPT_FRAMES, seed=0)
    train_frames, val_frames = dataset_split(frames, (0.8, 0.2), seed=0)
    return {"train": train_frames, "val": val_frames,
            "train_pairs": PairTable.from_samples(training_pairs(train_frames, seed=0)),
            "val_pairs": PairTable.from_samples(evaluation_pairs(val_frames))}


@pytest.fixture(scope="session")
def accept_model(accept_data, tmp_path_factory):
    """Train (or load from $STEREOLOC_ACCEPT_CACHE) one model per variant, on demand."""
    cache_root = os.environ.get("STEREOLOC_ACCEPT_CACHE")
    models = {}

    def get(variant):
        if variant in models:
            return models[variant]
        config = TrainConfig(epochs=ACCEPT_EPOCHS, lr_milestones=ACCEPT_MILESTONES, **VARIANTS[variant])
        if cache_root:
            out = Path(cache_root) / f"{variant}-{config.digest()}-{ACCEPT_FRAMES}"
        else:
            out = tmp_path_factory.mktemp(f"model-{variant}")
        timing = out / "seconds.txt"
        if not timing.exists():
            t0 = time.perf_counter()
            train(accept_data["train_pairs"], accept_data["val_pairs"], KITTI_RIG, config, out_dir=out)
            timing.write_text(f"{time.perf_counter() - t0:.3f}\n")
        network, meta = load_model(out / "model.ckpt")
        with open(out / "train_log.csv") as fh:
            log = [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
        models[variant] = TrainedModel(network, meta, log, float(timing.read_text()))
        return models[variant]

    return get
