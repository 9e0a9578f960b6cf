"""Metric correctness (PSNR, SSIM vs an independent oracle, depth error),
report serialization, and the evaluation pipeline's pairing guarantees."""

import json
import math

import numpy as np
import pytest
import torch
from skimage.metrics import structural_similarity

from burstsplat.config import (
    EvalConfig,
    ExperimentConfig,
    ModelConfig,
    SceneGenConfig,
    TrainConfig,
)
from burstsplat.evaluation import (
    EvalReport,
    SceneMetrics,
    bench_fps,
    depth_abs_rel,
    eval_burst,
    eval_scenes,
    evaluate,
    export_spectrum,
    gain_sweep,
    psnr,
    spectrum_magnitude,
    ssim,
    write_report_csv,
    write_report_json,
    write_sweep_json,
)
from burstsplat.model import GaussianRegressor
from burstsplat.noise import linearize
from burstsplat.renderer import RenderConfig
from burstsplat.training import init_state


def oracle_ssim(a, b, **kw):
    return structural_similarity(a, b, gaussian_weights=True, sigma=1.5,
                                 use_sample_covariance=False, data_range=1.0, **kw)


class TestPsnr:
    def test_hand_value(self):
        target = np.zeros((4, 4, 3))
        pred = np.full((4, 4, 3), 0.1)
        assert psnr(pred, target) == pytest.approx(20.0, abs=1e-12)

    def test_identical_is_infinite(self):
        img = np.random.default_rng(0).uniform(size=(8, 8, 3))
        assert math.isinf(psnr(img, img))

    def test_data_range(self):
        target = np.zeros((4, 4))
        pred = np.full((4, 4), 25.5)
        assert psnr(pred, target, data_range=255.0) == pytest.approx(20.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSsim:
    def test_matches_oracle_color(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(size=(64, 64, 3))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(oracle_ssim(a, b, channel_axis=2), abs=1e-9)

    def test_matches_oracle_gray(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(size=(32, 32))
        b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(oracle_ssim(a, b), abs=1e-9)

    def test_matches_oracle_odd_rectangular(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(size=(17, 13))
        b = rng.uniform(size=(17, 13))
        assert ssim(a, b) == pytest.approx(oracle_ssim(a, b), abs=1e-9)

    def test_matches_oracle_structured(self):
        # smooth image pair, not iid noise: exercises the covariance path
        y, x = np.mgrid[0:48, 0:48] / 48.0
        a = 0.5 + 0.4 * np.sin(6 * x) * np.cos(4 * y)
        b = 0.5 + 0.4 * np.sin(6 * x + 0.2) * np.cos(4 * y)
        assert ssim(a, b) == pytest.approx(oracle_ssim(a, b), abs=1e-9)

    def test_identical_is_one(self):
        img = np.random.default_rng(6).uniform(size=(16, 16, 3))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_more_noise_scores_lower(self):
        rng = np.random.default_rng(7)
        a = rng.uniform(size=(32, 32))
        light = np.clip(a + rng.normal(0, 0.02, a.shape), 0, 1)
        heavy = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
        assert ssim(a, heavy) < ssim(a, light)

    def test_inverted_binary_image_is_negative(self):
        y, x = np.mgrid[0:16, 0:16]
        a = ((x + y) % 2).astype(np.float64)
        assert ssim(a, 1.0 - a) < 0

    def test_too_small_raises(self):
        with pytest.raises(ValueError, match="window"):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            ssim(np.zeros((16, 16)), np.zeros((16, 17)))


class TestDepthAbsRel:
    def test_hand_value(self):
        pred = np.array([[2.0, 3.0]])
        target = np.array([[1.0, 2.0]])
        assert depth_abs_rel(pred, target) == pytest.approx(0.75)

    def test_zero_target_excluded(self):
        pred = np.array([[2.0, 99.0]])
        target = np.array([[1.0, 0.0]])
        assert depth_abs_rel(pred, target) == pytest.approx(1.0)

    def test_valid_mask(self):
        pred = np.array([[2.0, 3.0]])
        target = np.array([[1.0, 2.0]])
        mask = np.array([[True, False]])
        assert depth_abs_rel(pred, target, valid=mask) == pytest.approx(1.0)

    def test_all_invalid_raises(self):
        with pytest.raises(ValueError, match="valid"):
            depth_abs_rel(np.ones((2, 2)), np.zeros((2, 2)))


def tiny_report(psnr_value: float) -> EvalReport:
    return EvalReport(
        task="denoise", gain=8.0, num_inputs=2, num_scenes=1, seed=1,
        psnr=psnr_value, ssim=0.9, depth_abs_rel=0.1,
        per_scene=[SceneMetrics("scene00001", "denoise", 8.0,
                                psnr_value, 0.9, 0.1)],
    )


class TestReports:
    def test_json_finite(self, tmp_path):
        write_report_json(tiny_report(31.5), tmp_path / "r.json")
        data = json.loads((tmp_path / "r.json").read_text())
        assert data["psnr"] == pytest.approx(31.5)
        assert data["psnr_infinite"] is False
        assert data["fps"] is None
        assert data["per_scene"][0]["psnr"] == pytest.approx(31.5)

    def test_json_infinite_psnr_becomes_null(self, tmp_path):
        write_report_json(tiny_report(math.inf), tmp_path / "r.json")
        data = json.loads((tmp_path / "r.json").read_text())
        assert data["psnr"] is None
        assert data["psnr_infinite"] is True
        assert data["per_scene"][0]["psnr"] is None
        assert data["per_scene"][0]["psnr_infinite"] is True

    def test_csv_rows(self, tmp_path):
        write_report_csv(tiny_report(31.5), tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().strip().splitlines()
        assert lines[0] == "scene,task,gain,psnr,ssim,depth_abs_rel"
        assert len(lines) == 2
        assert lines[1].startswith("scene00001,denoise,8.0,31.5")


def micro_eval_config() -> ExperimentConfig:
    return ExperimentConfig(
        model=ModelConfig(image_size=(16, 16), patch_size=8, embed_dim=32,
                          num_blocks=1, num_heads=4, near=1.5, far=6.5),
        train=TrainConfig(total_iters=10, num_train_scenes=2, seed=11),
        render=RenderConfig(max_radius_px=8),
        scene=SceneGenConfig(image_size=(16, 16), num_views=4, wall_grid=10,
                             num_blobs=(2, 3)),
        eval=EvalConfig(num_scenes=2, seed=55, num_inputs=2, gain=8.0,
                        gains=(1.0, 8.0)),
    )


@pytest.fixture(scope="module")
def eval_setup():
    cfg = micro_eval_config()
    model = init_state(cfg).model
    # the zero-initialized head ignores its input, which would make every
    # gain level score identically; randomize it so outputs track inputs
    gen = torch.Generator().manual_seed(123)
    with torch.no_grad():
        model.head.weight.normal_(0, 0.05, generator=gen)
    return cfg, model


class TestEvaluatePipeline:
    def test_report_shape(self, eval_setup):
        cfg, model = eval_setup
        report = evaluate(model, cfg)
        assert report.num_scenes == 2
        assert len(report.per_scene) == 2
        assert report.task == "denoise"
        assert report.gain == 8.0
        assert math.isfinite(report.psnr)
        assert -1.0 <= report.ssim <= 1.0
        assert report.depth_abs_rel >= 0
        assert report.fps is None
        assert report.psnr == pytest.approx(
            np.mean([m.psnr for m in report.per_scene]))

    def test_deterministic(self, eval_setup):
        cfg, model = eval_setup
        a = evaluate(model, cfg)
        b = evaluate(model, cfg)
        assert a == b

    def test_gain_zero_means_clean_inputs(self, eval_setup):
        cfg, _ = eval_setup
        scene = eval_scenes(cfg)[0]
        burst = eval_burst(scene, 0, cfg, gain=0.0, task="denoise")
        assert np.abs(burst.noisy_images - burst.clean_images).max() < 1e-9

    def test_noise_fields_pair_across_gains(self, eval_setup):
        """Same eval burst at two gains: identical standard-normal field."""
        cfg, _ = eval_setup
        scene = eval_scenes(cfg)[0]
        low = eval_burst(scene, 0, cfg, gain=1.0, task="denoise")
        high = eval_burst(scene, 0, cfg, gain=16.0, task="denoise")
        assert low.input_indices == high.input_indices

        clean_lin = linearize(low.clean_images)
        z = []
        for burst in (low, high):
            sigma = np.sqrt(burst.noise.sigma_r ** 2
                            + burst.noise.sigma_s ** 2 * clean_lin)
            z.append((linearize(burst.noisy_images) - clean_lin) / sigma)
        # delinearize clamps to [0, 1]; compare where neither burst clipped
        interior = (low.noisy_images > 0.01) & (low.noisy_images < 0.99) \
            & (high.noisy_images > 0.01) & (high.noisy_images < 0.99)
        assert interior.mean() > 0.5
        assert np.allclose(z[0][interior], z[1][interior], atol=1e-6)

    def test_depth_reference_is_clean_input_prediction(self, eval_setup):
        """At gain 0 the noisy and clean inputs coincide, so the depth error
        against the model's own clean-input prediction is exactly zero."""
        cfg, model = eval_setup
        report = evaluate(model, cfg, gain=0.0)
        assert report.depth_abs_rel == 0.0
        noisy = evaluate(model, cfg, gain=8.0)
        assert noisy.depth_abs_rel > 0.0

    def test_gain_sweep_reuses_scenes(self, eval_setup):
        cfg, model = eval_setup
        sweep = gain_sweep(model, cfg)
        assert sweep.gains == (1.0, 8.0)
        assert sweep.num_scenes == 2
        low, high = sweep.reports
        assert [m.scene for m in low.per_scene] == [m.scene for m in high.per_scene]
        assert low.psnr != high.psnr

    def test_sweep_json_byte_identical(self, eval_setup, tmp_path):
        cfg, model = eval_setup
        write_sweep_json(gain_sweep(model, cfg), tmp_path / "a.json")
        write_sweep_json(gain_sweep(model, cfg), tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_bench_smoke(self, eval_setup):
        cfg, model = eval_setup
        result = bench_fps(model, cfg, iters=2)
        assert result["fps"] > 0
        assert result["median_seconds"] > 0
        assert result["iters"] == 2
        assert "hardware" in result


class TestSpectrum:
    def test_export_contract(self):
        img = np.random.default_rng(8).uniform(size=(16, 16, 3))
        spec = export_spectrum(img)
        assert spec.shape == (16, 16)
        assert spec.dtype == np.uint8
        assert spec.max() == 255

    def test_constant_image_is_dc_only(self):
        spec = export_spectrum(np.full((9, 9), 0.5))
        assert spec[4, 4] == 255
        spec[4, 4] = 0
        assert (spec == 0).all()

    def test_real_input_symmetry_odd_sizes(self):
        img = np.random.default_rng(9).uniform(size=(17, 15))
        mag = spectrum_magnitude(img)
        assert np.allclose(mag, mag[::-1, ::-1], atol=1e-9)

    def test_horizontal_sinusoid_bins(self):
        x = np.arange(32)
        img = np.tile(0.5 + 0.5 * np.sin(2 * np.pi * 4 * x / 32), (32, 1))
        mag = spectrum_magnitude(img)
        mag[16, 16] = 0  # remove DC; the sinusoid has a 0.5 offset
        peaks = np.argwhere(mag > 0.5 * mag.max())
        assert sorted(map(tuple, peaks)) == [(16, 12), (16, 20)]

    def test_channel_selection(self):
        img = np.random.default_rng(10).uniform(size=(12, 12, 3))
        assert np.allclose(spectrum_magnitude(img),
                           spectrum_magnitude(img.mean(axis=2)))
        assert np.allclose(spectrum_magnitude(img, channel=1),
                           spectrum_magnitude(img[..., 1]))
        with pytest.raises(ValueError, match="channel"):
            spectrum_magnitude(img, channel=3)
