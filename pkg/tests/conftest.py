"""Shared fixtures: session-scoped trained models, cached on disk.

First run trains the fixture nets (the steady-data model takes a few
minutes); later runs reload checkpoints from tests/.cache keyed by a
hash of the generating configuration, so stale caches are never reused.
"""

import hashlib
import json
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pytest

from tsdm.checkpoint import load_checkpoint, save_checkpoint
from tsdm.denoiser import DenoiserConfig, TrainConfig, train
from tsdm.schedule import linear_schedule
from tsdm.threatsim import SynthSpec, synth_dataset

CACHE = Path(__file__).parent / ".cache"


def _cache_paths(tag, dcfg, tcfg, sched):
    key = json.dumps([tag, asdict(dcfg), asdict(tcfg), sched.beta.tolist()],
                     sort_keys=True)
    digest = hashlib.sha256(key.encode()).hexdigest()[:12]
    base = CACHE / f"{tag}-{digest}"
    return base.with_suffix(".tsdm"), base.with_suffix(".meta.json")


def _cached_train(tag, make_data, dcfg, tcfg, sched, norm_channelwise=False):
    path, meta_path = _cache_paths(tag, dcfg, tcfg, sched)
    if path.exists():
        params, mean, std = load_checkpoint(path)
        return params, mean, std
    data = np.asarray(make_data())
    if norm_channelwise:
        mean = data.mean(axis=(0, 2))
        std = np.maximum(data.std(axis=(0, 2)), 1e-8)
    else:
        mean = np.zeros(data.shape[1])
        std = np.ones(data.shape[1])
    normed = (data - mean[:, None]) / std[:, None]
    t0 = time.perf_counter()
    params, _ = train(normed, dcfg, tcfg, sched)
    seconds = time.perf_counter() - t0
    CACHE.mkdir(exist_ok=True)
    save_checkpoint(path, params, mean, std)
    meta_path.write_text(json.dumps({"train_seconds": seconds}))
    return params, mean, std


@pytest.fixture(scope="session")
def sched100():
    return linear_schedule(100)


@pytest.fixture(scope="session")
def toy_model(sched100):
    """Net trained on unit-Gaussian 4x16 windows; the analytic optimal
    noise predictor for this data is eps(x, n) = sqrt(1 - alpha_bar_n) x."""
    dcfg = DenoiserConfig(channels_in=4, base_width=16, depth=2,
                          time_embed_dim=16, kernel=3)
    tcfg = TrainConfig(epochs=60, batch_size=64, learning_rate=3e-3, seed=123)

    def make():
        return np.random.default_rng(123).standard_normal((512, 4, 16))

    params, _, _ = _cached_train("toy-gauss", make, dcfg, tcfg, sched100)
    return params


@pytest.fixture(scope="session")
def zeros_model(sched100):
    """Net trained on all-zero 4x16 windows; ideal samples are zero."""
    dcfg = DenoiserConfig(channels_in=4, base_width=16, depth=2,
                          time_embed_dim=16, kernel=3)
    tcfg = TrainConfig(epochs=60, batch_size=64, learning_rate=3e-3, seed=321)

    def make():
        return np.zeros((256, 4, 16))

    params, _, _ = _cached_train("toy-zeros", make, dcfg, tcfg, sched100)
    return params


STEADY_SPEC = SynthSpec(mode="steady", M=8, T=64, seed=42)
STEADY_DCFG = DenoiserConfig(channels_in=8, base_width=24, depth=2,
                             time_embed_dim=16, kernel=3)
STEADY_TCFG = TrainConfig(epochs=60, batch_size=32, learning_rate=3e-3,
                          seed=42)


@pytest.fixture(scope="session")
def steady_fixture(sched100):
    """The scaled end-to-end fixture: 2000 steady windows, M=8, T=64,
    seed 42, trained within the budget; returns (params, mean, std, spec)."""

    def make():
        return synth_dataset(STEADY_SPEC, 2000)

    params, mean, std = _cached_train("steady", make, STEADY_DCFG,
                                      STEADY_TCFG, sched100,
                                      norm_channelwise=True)
    return params, mean, std, STEADY_SPEC


@pytest.fixture(scope="session")
def steady_train_meta(steady_fixture, sched100):
    """Recorded wall-clock seconds for the steady fixture's training run
    (written when the cached checkpoint was produced)."""
    _, meta_path = _cache_paths("steady", STEADY_DCFG, STEADY_TCFG, sched100)
    return json.loads(meta_path.read_text())
