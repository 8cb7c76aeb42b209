"""Session fixtures: the deterministic toy fixture scene and models trained
on it.

Training the shared models takes minutes on CPU, so fixtures cache to
.fixture_cache/ keyed by a hash of everything that influences the result.
Delete the directory (or change a config) to force a cold retrain; the
repository's recorded test runs are produced from a cold cache.
"""

import copy
import hashlib
import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch
from filelock import FileLock

from featloc.checkpoint import load_nerf, load_posenet, save_nerf, save_posenet
from featloc.data import (
    load_toy_scene,
    make_toy_scene,
    save_toy_scene,
    subsample_training,
)
from featloc.hist_nerf import (
    EncodingConfig,
    HistNerfModel,
    NerfConfig,
    NerfSchedule,
    RenderSettings,
    train_nerf,
)
from featloc.matching import MatchConfig, finetune_unlabeled
from featloc.posenet import PoseNetConfig, PoseNetSchedule, PoseRegressor, train_posenet
from featloc.viewsynth import ViewSynthConfig

torch.set_num_threads(1)

CACHE_DIR = Path(__file__).resolve().parent.parent / ".fixture_cache"

# the shared toy fixture: seed 42, 100 train / 50 val frames, 60 px images
TOY_PARAMS = dict(seed=42, n_blobs=5, n_train=100, n_val=50, image_size=60,
                  exposure_split=True, n_unlabeled=20, n_quad=768)

# field configuration used by every trained-model fixture; position_scale
# puts encoded coordinates inside the unit range of the frequency ladder
TOY_NERF_CONFIG = NerfConfig(
    mlp_width=64, base_depth=4, head_depth=2,
    encoding=EncodingConfig(n_freqs_position=6, n_freqs_direction=2),
    position_scale=1.0 / 6.5)

TOY_NERF_SCHEDULE = NerfSchedule(
    epochs=40, lr=5e-4, lr_decay=0.01, ray_batch=1024, rays_per_epoch=16384,
    n_coarse=32, n_fine=32, seed=1)

TOY_RENDER_SETTINGS = RenderSettings(near=1.5, far=6.5, n_coarse=32, n_fine=32)

# pose-regressor fixture recipe, sized so one arm trains in ~4 min on a core
TOY_POSENET_CONFIG = PoseNetConfig(
    widths=(6, 12, 18, 24, 24), feature_kernels=16, feature_channels=32,
    feature_taps=(1, 3, 5), input_short_side=60, fc_dim=64)

TOY_POSENET_SCHEDULE = PoseNetSchedule(
    epochs=150, lr=1e-3, batch_size=4, margin=1.0, feature_levels=("fine",),
    feature_mode="triplet", seed=11, patience=400, plateau_decay=0.95,
    plateau_window=50, render_short_side=30)

TOY_RVS_CONFIG = ViewSynthConfig(
    t_psi=0.2, r_phi_deg=10.0, d_max=0.2, refresh_every=20,
    pool_multiplier=1.0, render_short_side=30)

TOY_MATCH_CONFIG = MatchConfig(
    learning_rate=1e-4, batch_size=1, feature_levels=("fine",),
    max_steps=150, loss_reduction="sum", render_short_side=30)

# deliberate miscalibration used by the recovery tests: a constant world-space
# shift written into the final layer's translation bias slots
DEGRADE_BIAS = (0.8, -0.55, 0.7)


def _key(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str)
                          .encode()).hexdigest()[:12]


def _locked(path: Path):
    CACHE_DIR.mkdir(exist_ok=True)
    return FileLock(str(path) + ".lock")


@pytest.fixture(scope="session")
def toy_fixture():
    """(scene, dataset, true_poses, meta) for the shared toy fixture."""
    root = CACHE_DIR / f"toy-{_key(TOY_PARAMS)}"
    with _locked(root):
        if not (root / "scene.json").exists():
            t0 = time.time()
            scene, dataset, truth = make_toy_scene(**TOY_PARAMS)
            gen_seconds = time.time() - t0
            save_toy_scene(scene, dataset, truth, root)
            (root / "meta.json").write_text(json.dumps({"gen_seconds": gen_seconds}))
    scene, dataset, truth = load_toy_scene(root)
    meta = json.loads((root / "meta.json").read_text())
    return scene, dataset, truth, meta


def _train_nerf_cached(dataset, schedule: NerfSchedule, tag: str):
    key = _key({"toy": TOY_PARAMS, "config": str(TOY_NERF_CONFIG),
                "schedule": str(schedule), "tag": tag})
    path = CACHE_DIR / f"nerf-{tag}-{key}.ckpt"
    metrics_path = CACHE_DIR / f"nerf-{tag}-{key}.metrics.json"
    with _locked(path):
        if not path.exists():
            model = HistNerfModel(TOY_NERF_CONFIG)
            model, metrics = train_nerf(dataset, model, schedule)
            save_nerf(path, model)
            metrics_path.write_text(json.dumps(metrics))
    model = load_nerf(path, expected_config=TOY_NERF_CONFIG)
    model.eval()
    metrics = json.loads(metrics_path.read_text())
    return model, metrics


@pytest.fixture(scope="session")
def trained_nerf(toy_fixture):
    """Histogram-conditioned field trained on the toy fixture, with its
    per-epoch metrics log."""
    _, dataset, _, _ = toy_fixture
    return _train_nerf_cached(dataset, TOY_NERF_SCHEDULE, "conditioned")


@pytest.fixture(scope="session")
def trained_nerf_zeroed(toy_fixture):
    """Ablation arm: identical schedule but zeroed histogram embeddings."""
    _, dataset, _, _ = toy_fixture
    schedule = NerfSchedule(**{**TOY_NERF_SCHEDULE.__dict__, "use_histogram": False})
    return _train_nerf_cached(dataset, schedule, "zeroed")


def _train_posenet_cached(dataset, nerf_model, schedule: PoseNetSchedule,
                          rvs, tag: str):
    key = _key({"toy": TOY_PARAMS, "nerf": str(TOY_NERF_SCHEDULE),
                "config": str(TOY_POSENET_CONFIG), "schedule": str(schedule),
                "rvs": str(rvs), "settings": str(TOY_RENDER_SETTINGS),
                "tag": tag})
    path = CACHE_DIR / f"posenet-{tag}-{key}.ckpt"
    metrics_path = CACHE_DIR / f"posenet-{tag}-{key}.metrics.json"
    with _locked(path):
        if not path.exists():
            torch.manual_seed(schedule.seed)
            model = PoseRegressor(TOY_POSENET_CONFIG)
            model, metrics = train_posenet(dataset, nerf_model, model,
                                           schedule, TOY_RENDER_SETTINGS, rvs)
            save_posenet(path, model)
            metrics_path.write_text(json.dumps(metrics))
    model = load_posenet(path, expected_config=TOY_POSENET_CONFIG)
    model.eval()
    metrics = json.loads(metrics_path.read_text())
    return model, metrics


@pytest.fixture(scope="session")
def trained_posenet(toy_fixture, trained_nerf):
    """Main arm: triplet feature loss + synthetic-view augmentation."""
    _, dataset, _, _ = toy_fixture
    nerf_model, _ = trained_nerf
    return _train_posenet_cached(dataset, nerf_model, TOY_POSENET_SCHEDULE,
                                 TOY_RVS_CONFIG, "main")


@pytest.fixture(scope="session")
def trained_posenet_mse(toy_fixture, trained_nerf):
    """Ablation arm: squared-error feature loss in place of the triplet."""
    _, dataset, _, _ = toy_fixture
    nerf_model, _ = trained_nerf
    schedule = replace(TOY_POSENET_SCHEDULE, feature_mode="mse")
    return _train_posenet_cached(dataset, nerf_model, schedule,
                                 TOY_RVS_CONFIG, "mse")


# the augmentation comparison runs in a sparse-training regime (every 4th
# frame kept, 25 views) where synthetic views have coverage gaps to fill;
# at the full 100-view density the training set already tiles the pose
# space and augmentation only adds render noise
SPARSE_STRIDE = 4
SPARSE_SCHEDULE = replace(TOY_POSENET_SCHEDULE, epochs=300)


def _sparse_dataset(dataset):
    return replace(dataset, train=subsample_training(dataset.train, SPARSE_STRIDE))


@pytest.fixture(scope="session")
def trained_posenet_rvs_sparse(toy_fixture, trained_nerf):
    """Sparse-training arm with synthetic-view augmentation."""
    _, dataset, _, _ = toy_fixture
    nerf_model, _ = trained_nerf
    return _train_posenet_cached(_sparse_dataset(dataset), nerf_model,
                                 SPARSE_SCHEDULE, TOY_RVS_CONFIG, "rvs-sparse")


@pytest.fixture(scope="session")
def trained_posenet_norvs_sparse(toy_fixture, trained_nerf):
    """Sparse-training arm without augmentation, otherwise identical."""
    _, dataset, _, _ = toy_fixture
    nerf_model, _ = trained_nerf
    return _train_posenet_cached(_sparse_dataset(dataset), nerf_model,
                                 SPARSE_SCHEDULE, None, "norvs-sparse")


def degraded_posenet_copy(model: PoseRegressor) -> PoseRegressor:
    """A deep copy whose predicted translations are shifted by DEGRADE_BIAS.

    The final layer emits the flattened 3x4 pose block row-major, so the
    translation outputs sit at flat indices 4k+3; adding to those bias
    entries shifts every prediction by the same world-space vector while
    leaving the rotation logits untouched.
    """
    degraded = copy.deepcopy(model)
    with torch.no_grad():
        final = degraded.pose_fc[-1]
        for k in range(3):
            final.bias[4 * k + 3] += DEGRADE_BIAS[k]
    return degraded


@pytest.fixture(scope="session")
def finetuned_posenet(toy_fixture, trained_nerf, trained_posenet):
    """The degraded main arm after direct-matching finetuning on the
    unlabeled split, with the degraded copy it started from."""
    _, dataset, _, _ = toy_fixture
    nerf_model, _ = trained_nerf
    model, _ = trained_posenet
    key = _key({"toy": TOY_PARAMS, "nerf": str(TOY_NERF_SCHEDULE),
                "config": str(TOY_POSENET_CONFIG),
                "schedule": str(TOY_POSENET_SCHEDULE),
                "rvs": str(TOY_RVS_CONFIG), "match": str(TOY_MATCH_CONFIG),
                "bias": DEGRADE_BIAS, "tag": "finetuned"})
    path = CACHE_DIR / f"posenet-finetuned-{key}.ckpt"
    log_path = CACHE_DIR / f"posenet-finetuned-{key}.log.json"
    degraded = degraded_posenet_copy(model)
    with _locked(path):
        if not path.exists():
            torch.manual_seed(5)
            finetuned, log = finetune_unlabeled(
                copy.deepcopy(degraded), nerf_model, dataset.unlabeled,
                TOY_MATCH_CONFIG, TOY_RENDER_SETTINGS)
            save_posenet(path, finetuned)
            log_path.write_text(json.dumps(log))
    finetuned = load_posenet(path, expected_config=TOY_POSENET_CONFIG)
    finetuned.eval()
    log = json.loads(log_path.read_text())
    return degraded, finetuned, log


@pytest.fixture()
def tiny_scene():
    """A cheap function-scoped scene for fast unit tests."""
    return make_toy_scene(seed=5, n_blobs=3, n_train=6, n_val=2, image_size=24,
                          n_quad=256)


def seeded_generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed)
