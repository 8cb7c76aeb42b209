"""Synthetic-view pool tests: noise bounds, determinism, dump round trip."""

import math

import numpy as np
import pytest
import torch

from featloc.data import read_image
from featloc.geometry import load_pose_file, pose_error
from featloc.hist_nerf import (
    EncodingConfig,
    HistNerfModel,
    NerfConfig,
    RenderSettings,
    embed_histogram,
    render_image,
)
from featloc.viewsynth import (
    ViewSynthConfig,
    ViewSynthSample,
    dump_pool,
    generate_pool,
    sample_pose_loss,
)

torch.set_num_threads(1)

SETTINGS = RenderSettings(near=1.5, far=6.5, n_coarse=4, n_fine=4)


@pytest.fixture()
def tiny_nerf():
    torch.manual_seed(3)
    config = NerfConfig(mlp_width=16, base_depth=2, head_depth=1,
                        encoding=EncodingConfig(2, 1), position_scale=0.25)
    return HistNerfModel(config).eval()


class TestConfigValidation:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            ViewSynthConfig(t_psi=-0.1)
        with pytest.raises(ValueError):
            ViewSynthConfig(refresh_every=0)
        with pytest.raises(ValueError):
            ViewSynthConfig(pool_multiplier=0.0)


class TestGeneratePool:
    def test_zero_noise_reproduces_training_views(self, tiny_scene, tiny_nerf):
        _, dataset, _ = tiny_scene
        cfg = ViewSynthConfig(t_psi=0.0, r_phi_deg=0.0, d_max=0.0,
                              render_short_side=12)
        pool = generate_pool(dataset.train, tiny_nerf, cfg,
                             np.random.default_rng(0), SETTINGS)
        assert len(pool) == len(dataset.train)
        for sample, frame in zip(pool, dataset.train):
            err = pose_error(sample.pose, frame.pose)
            assert err.translation_error <= 1e-12
            assert err.rotation_error <= 1e-5
            want = render_image(
                tiny_nerf, frame.pose,
                frame.intrinsics.scaled_to_short_side(12),
                embed_histogram(frame.histogram, tiny_nerf), SETTINGS,
                mode="static").rgb_static
            assert np.array_equal(sample.image, want)

    def test_bounds_hold_on_every_sample(self, tiny_scene, tiny_nerf):
        _, dataset, _ = tiny_scene
        cfg = ViewSynthConfig(t_psi=0.15, r_phi_deg=8.0, d_max=0.15,
                              pool_multiplier=3.0, render_short_side=8)
        train_t = np.stack([f.pose.translation for f in dataset.train])
        for seed in (1, 2):
            pool = generate_pool(dataset.train, tiny_nerf, cfg,
                                 np.random.default_rng(seed), SETTINGS)
            assert len(pool) == 3 * len(dataset.train)
            for sample in pool:
                src = dataset.train[sample.source_index].pose
                err = pose_error(sample.pose, src)
                assert err.translation_error <= cfg.t_psi + 1e-9
                assert err.rotation_error <= cfg.r_phi_deg + 1e-6
                d_nearest = np.linalg.norm(
                    train_t - sample.pose.translation, axis=1).min()
                assert d_nearest <= cfg.d_max + 1e-9

    def test_rejection_fallback_keeps_translation(self, tiny_scene, tiny_nerf):
        # an unsatisfiable d_max forces the rotation-only fallback, whose
        # translation equals the source pose's by construction
        _, dataset, _ = tiny_scene
        cfg = ViewSynthConfig(t_psi=0.5, r_phi_deg=8.0, d_max=1e-6,
                              max_attempts=2, render_short_side=8)
        pool = generate_pool(dataset.train, tiny_nerf, cfg,
                             np.random.default_rng(4), SETTINGS)
        for sample in pool:
            src = dataset.train[sample.source_index].pose
            assert np.allclose(sample.pose.translation, src.translation)

    def test_deterministic_under_fixed_rng(self, tiny_scene, tiny_nerf):
        _, dataset, _ = tiny_scene
        cfg = ViewSynthConfig(t_psi=0.1, r_phi_deg=5.0, d_max=0.1,
                              render_short_side=8)
        a = generate_pool(dataset.train, tiny_nerf, cfg,
                          np.random.default_rng(7), SETTINGS)
        b = generate_pool(dataset.train, tiny_nerf, cfg,
                          np.random.default_rng(7), SETTINGS)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.pose.matrix(), sb.pose.matrix())
            assert np.array_equal(sa.image, sb.image)
            assert sa.source_index == sb.source_index

    def test_pool_multiplier_cycles_sources(self, tiny_scene, tiny_nerf):
        _, dataset, _ = tiny_scene
        n = len(dataset.train)
        cfg = ViewSynthConfig(t_psi=0.05, r_phi_deg=2.0, d_max=0.05,
                              pool_multiplier=0.5, render_short_side=8)
        pool = generate_pool(dataset.train, tiny_nerf, cfg,
                             np.random.default_rng(0), SETTINGS)
        assert [s.source_index for s in pool] == list(range(round(0.5 * n)))

    def test_empty_training_set_rejected(self, tiny_nerf):
        with pytest.raises(ValueError):
            generate_pool([], tiny_nerf, ViewSynthConfig(),
                          np.random.default_rng(0), SETTINGS)


class _FixedOutputModel(torch.nn.Module):
    """Stub regressor returning a constant raw 3x4, for exact loss oracles."""

    def __init__(self, raw):
        super().__init__()
        self.raw = torch.nn.Parameter(torch.as_tensor(raw, dtype=torch.float32))

        class _Cfg:
            input_short_side = 8

        self.config = _Cfg()

    def forward(self, x, levels=()):
        return self.raw.unsqueeze(0), {}


class TestSamplePoseLoss:
    def test_exact_prediction_gives_zero(self, tiny_scene, tiny_nerf):
        _, dataset, _ = tiny_scene
        pose = dataset.train[0].pose
        sample = ViewSynthSample(pose=pose,
                                 image=dataset.train[0].image,
                                 source_index=0)
        model = _FixedOutputModel(pose.matrix34())
        assert float(sample_pose_loss(sample, model).detach()) == 0.0

    def test_uniform_offset_gives_known_norm(self, tiny_scene, tiny_nerf):
        # [TRIVIAL] every raw entry off by 0.5 -> L2 norm 0.5 * sqrt(12)
        _, dataset, _ = tiny_scene
        pose = dataset.train[0].pose
        sample = ViewSynthSample(pose=pose, image=dataset.train[0].image,
                                 source_index=0)
        model = _FixedOutputModel(pose.matrix34() + 0.5)
        assert float(sample_pose_loss(sample, model).detach()) == pytest.approx(
            0.5 * math.sqrt(12.0), rel=1e-6)

    def test_differentiable_into_the_network(self, tiny_scene, tiny_nerf):
        from featloc.posenet import PoseNetConfig, PoseRegressor

        _, dataset, _ = tiny_scene
        torch.manual_seed(0)
        model = PoseRegressor(PoseNetConfig(
            widths=(4, 6, 8, 10, 12), feature_kernels=8, feature_channels=12,
            input_short_side=24, fc_dim=16))
        sample = ViewSynthSample(pose=dataset.train[0].pose,
                                 image=dataset.train[0].image, source_index=0)
        loss = sample_pose_loss(sample, model)
        loss.backward()
        grads = [p.grad for p in model.pose_estimator_parameters()]
        assert any(g is not None and float(g.abs().sum()) > 0 for g in grads)


class TestDumpPool:
    def test_round_trip(self, tiny_scene, tiny_nerf, tmp_path):
        _, dataset, _ = tiny_scene
        cfg = ViewSynthConfig(t_psi=0.1, r_phi_deg=5.0, d_max=0.1,
                              render_short_side=8)
        pool = generate_pool(dataset.train, tiny_nerf, cfg,
                             np.random.default_rng(2), SETTINGS)
        dump_pool(pool, tmp_path)
        manifest = (tmp_path / "manifest.txt").read_text().splitlines()
        assert len(manifest) == len(pool)
        for line, sample in zip(manifest, pool):
            pose_name, image_name, source = line.split()
            assert int(source) == sample.source_index
            pose = load_pose_file(tmp_path / pose_name)
            err = pose_error(pose, sample.pose)
            assert err.translation_error <= 1e-9
            assert err.rotation_error <= 1e-5
            image = read_image(tmp_path / image_name)
            # images quantize to the 16-bit grid on write
            assert np.abs(image - sample.image).max() <= 1.0 / 65535
