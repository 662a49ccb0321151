"""
Tests for the pipeline tasks
"""

import csv
import json

import numpy as np
import pytest

from discodiff.config import Arm, RunConfig
from discodiff.services.datagen import default_mixture, read_dataset_csv, sample_dataset
from discodiff.tasks import cmd_analyze, cmd_compare, cmd_gen_data, cmd_sample, cmd_train, cmd_train_prior
from discodiff.tasks.common import build_model, load_model, stream_rng, stream_seed


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def train_both(config, out):
    cmd_gen_data(config, out)
    cmd_train(config.with_overrides(arm="disco"), out)
    cmd_train(config.with_overrides(arm="baseline"), out)
    cmd_train_prior(config.with_overrides(arm="disco"), out)


class TestTraining:
    """First-stage training"""

    def test_outputs(self, tiny_config, tmp_path):
        """Test outputs"""
        result = cmd_train(tiny_config, tmp_path)
        assert result["arm"] == "disco"
        assert result["steps"] == 6
        assert np.isfinite(result["final_loss"])
        assert 0.0 <= result["mode_purity"] <= 1.0
        target = tmp_path / "disco"
        assert (target / "model.ckpt.json").is_file()
        assert (target / "train_loss.svg").is_file()
        rows = read_rows(target / "train_loss.csv")
        assert [int(r["step"]) for r in rows] == [1, 2, 3, 4, 5, 6]

    def test_generates_missing_dataset(self, tiny_config, tmp_path):
        """Test generates missing dataset"""
        cmd_train(tiny_config, tmp_path)
        assert len(read_rows(tmp_path / "data.csv")) == 64

    def test_baseline_leaves_encoder_untouched(self, tiny_config, tmp_path):
        """Test baseline leaves encoder untouched"""
        config = tiny_config.with_overrides(arm="baseline")
        result = cmd_train(config, tmp_path)
        assert "mode_purity" not in result
        trained, checkpoint = load_model(config, tmp_path, Arm.BASELINE)
        fresh = build_model(config, float(checkpoint.metadata["sigma_data"]), stream_rng(config.seed, "init"))
        for name, value in fresh.encoder.state_dict().items():
            np.testing.assert_array_equal(trained.encoder.state_dict()[name], value)
        assert any(not np.array_equal(trained.denoiser.state_dict()[name], value)
                   for name, value in fresh.denoiser.state_dict().items())

    def test_resume_continues_step_counter(self, tiny_config, tmp_path):
        """Test resume continues step counter"""
        cmd_train(tiny_config, tmp_path)
        result = cmd_train(tiny_config.with_overrides(train_steps=10), tmp_path, resume=True)
        assert result["steps"] == 10
        rows = read_rows(tmp_path / "disco" / "train_loss.csv")
        assert [int(r["step"]) for r in rows] == list(range(1, 11))

    def test_resume_without_checkpoint(self, tiny_config, tmp_path, caplog):
        """Test resume without checkpoint"""
        result = cmd_train(tiny_config, tmp_path, resume=True)
        assert result["steps"] == 6
        assert "Nothing to resume" in caplog.text

    def test_chunked_checkpointing_is_transparent(self, tiny_config, tmp_path):
        """Test chunked checkpointing is transparent"""
        whole = cmd_train(tiny_config, tmp_path / "a")
        chunked = cmd_train(tiny_config, tmp_path / "b", checkpoint_every=2)
        assert whole["final_loss"] == chunked["final_loss"]

    def test_loss_trends_down_over_the_first_thousand_steps(self, tmp_path):
        """Test loss trends down over the first thousand steps"""
        config = RunConfig.load(n_per_component=100, hidden_width=16, denoiser_depth=3, encoder_width=16,
                                encoder_depth=3, time_embedding_dim=8, train_steps=1000, batch_size=128)
        cmd_train(config, tmp_path)
        losses = np.array([float(r["loss"]) for r in read_rows(tmp_path / "disco" / "train_loss.csv")])
        assert losses.size == 1000
        smoothed = np.convolve(losses, np.ones(100) / 100, mode="valid")
        assert smoothed[-1] < smoothed[0]

    def test_dataset_uses_its_own_stream(self, tiny_config, tmp_path):
        """Test dataset uses its own stream"""
        cmd_gen_data(tiny_config, tmp_path)
        written = read_dataset_csv(tmp_path / "data.csv")
        expected = sample_dataset(default_mixture(tiny_config.sigma_component), tiny_config.n_per_component,
                                  stream_seed(tiny_config.seed, "data"))
        np.testing.assert_array_equal(written.points, expected.points)


class TestPrior:
    """Second-stage prior"""

    def test_refuses_baseline(self, tiny_config, tmp_path):
        """Test refuses baseline"""
        with pytest.raises(ValueError):
            cmd_train_prior(tiny_config.with_overrides(arm="baseline"), tmp_path)

    def test_needs_first_stage(self, tiny_config, tmp_path):
        """Test needs first stage"""
        with pytest.raises(FileNotFoundError):
            cmd_train_prior(tiny_config, tmp_path)

    def test_categorical_for_single_latent(self, tiny_config, tmp_path):
        """Test categorical for single latent"""
        cmd_train(tiny_config, tmp_path)
        result = cmd_train_prior(tiny_config, tmp_path)
        assert result["kind"] == "categorical"
        assert result["tv"] < 1e-6
        assert (tmp_path / "disco" / "prior.ckpt.json").is_file()

    def test_autoregressive_for_several_latents(self, tiny_config, tmp_path):
        """Test autoregressive for several latents"""
        config = tiny_config.with_overrides(num_latents=2)
        cmd_train(config, tmp_path)
        result = cmd_train_prior(config, tmp_path)
        assert result["kind"] == "autoregressive"
        assert "tv" not in result
        assert np.isfinite(result["log_likelihood"])


class TestSamplingAndAnalysis:
    """Sampling, the metric suite and the seed comparison"""

    def test_sample_outputs(self, tiny_config, tmp_path):
        """Test sample outputs"""
        train_both(tiny_config, tmp_path)
        result = cmd_sample(tiny_config, tmp_path, trajectories=2)
        assert (result["n"], result["nfe"]) == (12, 7)
        rows = read_rows(tmp_path / "disco" / "samples.csv")
        assert len(rows) == 12
        assert {int(r["latent_0"]) for r in rows} <= {0, 1, 2, 3}
        assert (tmp_path / "disco" / "samples.svg").is_file()

    def test_baseline_samples_have_null_latent(self, tiny_config, tmp_path):
        """Test baseline samples have null latent"""
        train_both(tiny_config, tmp_path)
        cmd_sample(tiny_config.with_overrides(arm="baseline"), tmp_path, n=5)
        rows = read_rows(tmp_path / "baseline" / "samples.csv")
        assert [int(r["latent_0"]) for r in rows] == [-1] * 5

    def test_guidance_scale_changes_samples(self, tiny_config, tmp_path):
        """Test guidance scale changes samples"""
        train_both(tiny_config, tmp_path)
        path = tmp_path / "disco" / "samples.csv"
        cmd_sample(tiny_config, tmp_path)
        plain = path.read_text()
        cmd_sample(tiny_config.with_overrides(cfg_scale=2.0), tmp_path)
        assert path.read_text() != plain

    def test_analyze_report(self, tiny_config, tmp_path):
        """Test analyze report"""
        train_both(tiny_config, tmp_path)
        result = cmd_analyze(tiny_config, tmp_path)
        assert result["arms"] == ["disco", "baseline"]
        report = json.loads((tmp_path / "report.json").read_text())
        assert set(report["arms"]) == {"disco", "baseline"}
        assert report["config_hash"] == tiny_config.config_hash()
        disco = report["arms"]["disco"]
        assert disco["w2"] is not None and disco["w2"] >= 0.0
        assert disco["mode_purity"] is not None
        assert report["arms"]["baseline"]["mode_purity"] is None
        for name in ("curvature.svg", "jacobian.svg", "loss_vs_t.svg"):
            assert (tmp_path / name).is_file()
        metrics = {row["metric"] for row in read_rows(tmp_path / "metrics.csv")}
        assert "w2" in metrics

    def test_analyze_is_repeatable(self, tiny_config, tmp_path):
        """Test analyze is repeatable"""
        train_both(tiny_config, tmp_path)
        cmd_analyze(tiny_config, tmp_path)
        first = (tmp_path / "metrics.csv").read_bytes()
        cmd_analyze(tiny_config, tmp_path)
        assert (tmp_path / "metrics.csv").read_bytes() == first

    def test_analyze_single_arm(self, tiny_config, tmp_path, caplog):
        """Test analyze single arm"""
        cmd_train(tiny_config.with_overrides(arm="baseline"), tmp_path)
        result = cmd_analyze(tiny_config, tmp_path)
        assert result["arms"] == ["baseline"]
        assert result["comparison"] == {}
        assert "skipping the comparison" in caplog.text

    def test_analyze_nothing_trained(self, tiny_config, tmp_path):
        """Test analyze nothing trained"""
        with pytest.raises(FileNotFoundError):
            cmd_analyze(tiny_config, tmp_path)

    def test_config_mismatch_warns(self, tiny_config, tmp_path, caplog):
        """Test config mismatch warns"""
        train_both(tiny_config, tmp_path)
        cmd_analyze(tiny_config.with_overrides(jacobian_probes=2), tmp_path)
        assert "written with config" in caplog.text

    def test_compare(self, tiny_config, tmp_path):
        """Test compare"""
        result = cmd_compare(tiny_config, tmp_path, seeds=[0, 1])
        assert [r["seed"] for r in result["per_seed"]] == [0, 1]
        assert (tmp_path / "compare.json").is_file()
        assert (tmp_path / "seed-1" / "report.json").is_file()
        w2 = [r["w2_disco"] for r in result["per_seed"]]
        assert result["median_w2_disco"] == pytest.approx(float(np.median(w2)))

    def test_compare_needs_seeds(self, tiny_config, tmp_path):
        """Test compare needs seeds"""
        with pytest.raises(ValueError):
            cmd_compare(tiny_config, tmp_path, seeds=[])


class TestReducedStudy:
    """Both arms end to end at reduced size"""

    def test_latents_capture_modes_and_lower_w2(self, tmp_path):
        """Test latents capture modes and lower w2"""
        config = RunConfig.load(n_per_component=150, hidden_width=32, encoder_width=32, time_embedding_dim=8,
                                train_steps=2000, batch_size=256, prior_epochs=5, sigma_max=20.0, n_steps=20,
                                n_samples=400, n_trajectories=16, jacobian_probes=16, loss_bins=4,
                                loss_probes_per_bin=64)
        summary = cmd_compare(config, tmp_path, seeds=[0])
        report = json.loads((tmp_path / "seed-0" / "report.json").read_text())
        assert report["arms"]["disco"]["mode_purity"] >= 0.8
        assert summary["median_w2_disco"] < summary["median_w2_baseline"]
