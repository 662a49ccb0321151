"""
Tests for the time grid, the Heun solver and sample generation
"""

import numpy as np
import pytest

from discodiff.engine import NonFiniteError
from discodiff.services.datagen import MixtureSpec, exact_denoiser
from discodiff.services.diffusion import DiffusionConfig
from discodiff.services.latent_prior import CategoricalPrior
from discodiff.services.sampler import (
    TimeGrid,
    edm_time_grid,
    generate,
    heun_solve,
    model_denoise_fn,
    read_samples_csv,
    write_samples_csv,
)

GAUSSIAN = MixtureSpec(means=np.array([[3.0, 0.0]]), sigma=0.2)


def gaussian_denoiser(x, t):
    return exact_denoiser(GAUSSIAN, x, t)


def gaussian_flow(x0, t0, t):
    """Exact probability-flow solution for the single Gaussian"""
    mu = GAUSSIAN.means[0]
    return mu + (x0 - mu) * np.sqrt(0.04 + t * t) / np.sqrt(0.04 + t0 * t0)


class TestTimeGrid:
    """EDM discretisation"""

    def setup_method(self):
        self.config = DiffusionConfig(sigma_data=2.0)

    def test_boundaries(self):
        """Test boundaries"""
        grid = edm_time_grid(self.config, 50)
        assert grid.times.size == 51
        assert grid.times[0] == 80.0
        assert grid.times[49] == 0.002
        assert grid.times[50] == 0.0
        assert grid.n_steps == 50

    def test_interior_point(self):
        """Test interior point"""
        grid = edm_time_grid(self.config, 50)
        expected = (80.0 ** (1 / 7) + (25 / 49) * (0.002 ** (1 / 7) - 80.0 ** (1 / 7))) ** 7
        assert grid.times[25] == pytest.approx(expected, rel=1e-12)

    def test_without_zero(self):
        """Test without zero"""
        grid = edm_time_grid(self.config, 10, sigma_min=0.1, append_zero=False)
        assert grid.times.size == 10
        assert grid.times[-1] == 0.1

    def test_too_few_steps(self):
        """Test too few steps"""
        with pytest.raises(ValueError):
            edm_time_grid(self.config, 1)

    def test_grid_validation(self):
        """Test grid validation"""
        with pytest.raises(ValueError):
            TimeGrid(np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            TimeGrid(np.array([1.0]))


class TestHeunSolve:
    """Deterministic probability-flow integration"""

    def setup_method(self):
        self.grid = edm_time_grid(DiffusionConfig(sigma_data=2.0), 50)
        self.rng = np.random.default_rng(0)

    def test_constant_denoiser_is_exact(self):
        """Test constant denoiser is exact"""
        c = np.array([1.5, -0.5])
        x0 = 80.0 * self.rng.standard_normal((5, 2))
        result = heun_solve(lambda x, t: np.broadcast_to(c, x.shape), self.grid, x0)
        np.testing.assert_allclose(result.samples, np.tile(c, (5, 1)), rtol=0, atol=1e-12)

    def test_evaluation_count(self):
        """Test evaluation count"""
        seen = []

        def fn(x, t):
            seen.append(t)
            return np.zeros_like(x)

        result = heun_solve(fn, self.grid, np.ones((3, 2)))
        assert result.nfe == 2 * 50 - 1 == len(seen)
        assert 0.0 not in seen

    def test_trajectory_recorded(self):
        """Test trajectory recorded"""
        result = heun_solve(gaussian_denoiser, self.grid, 80.0 * self.rng.standard_normal((4, 2)), record=True)
        traj = result.trajectory
        assert traj.states.shape == (51, 4, 2)
        assert traj.drifts.shape == (50, 4, 2)
        assert np.all(np.isfinite(traj.states))
        np.testing.assert_array_equal(traj.states[-1], result.samples)
        np.testing.assert_array_equal(traj.path(2), traj.states[:, 2, :])

    def test_gaussian_oracle_samples(self):
        """Test gaussian oracle samples"""
        x0 = 80.0 * self.rng.standard_normal((10_000, 2))
        result = heun_solve(gaussian_denoiser, self.grid, x0)
        assert result.nfe == 99
        assert np.linalg.norm(result.samples.mean(axis=0) - [3.0, 0.0]) < 0.01
        np.testing.assert_allclose(result.samples.std(axis=0), 0.2, rtol=0.02)

    def test_second_order_convergence(self):
        """Test second order convergence"""
        config = DiffusionConfig(sigma_data=2.0)
        x0 = 80.0 * self.rng.standard_normal((16, 2))
        errors = []
        for n in (40, 80):
            grid = edm_time_grid(config, n, sigma_min=0.1, append_zero=False)
            result = heun_solve(gaussian_denoiser, grid, x0)
            errors.append(np.abs(result.samples - gaussian_flow(x0, 80.0, 0.1)).max())
        assert 3.0 <= errors[0] / errors[1] <= 5.0

    def test_non_finite_state_names_the_step(self):
        """Test non finite state names the step"""
        with np.errstate(all="ignore"), pytest.raises(NonFiniteError, match="step 0"):
            heun_solve(lambda x, t: np.full_like(x, np.inf), self.grid, np.ones((2, 2)))

    def test_rejects_bad_initial_state(self):
        """Test rejects bad initial state"""
        with pytest.raises(ValueError):
            heun_solve(gaussian_denoiser, self.grid, np.ones(2))


class TestGenerate:
    """Prior sample, then ODE solve"""

    def setup_method(self):
        self.grid = edm_time_grid(DiffusionConfig(sigma_data=2.0), 6)
        self.prior = CategoricalPrior(8)
        self.prior.fit(np.arange(8))

    def test_empty(self, toy_denoiser):
        """Test empty"""
        generated = generate(toy_denoiser, self.prior, self.grid, 0, seed=0, w_cfg=1.0)
        assert generated.samples.shape == (0, 2)
        assert generated.latents.shape == (0, 1)

    def test_guidance_weight_is_required(self, toy_denoiser):
        """Test guidance weight is required"""
        with pytest.raises(TypeError):
            generate(toy_denoiser, self.prior, self.grid, 2, seed=0)

    def test_fixed_seed_repeats(self, toy_denoiser):
        """Test fixed seed repeats"""
        a = generate(toy_denoiser, self.prior, self.grid, 20, seed=3, w_cfg=1.0)
        b = generate(toy_denoiser, self.prior, self.grid, 20, seed=3, w_cfg=1.0)
        np.testing.assert_array_equal(a.samples, b.samples)
        np.testing.assert_array_equal(a.latents, b.latents)
        assert a.nfe == 11

    def test_baseline_uses_null_latents(self, toy_denoiser):
        """Test baseline uses null latents"""
        generated = generate(toy_denoiser, None, self.grid, 5, seed=0, w_cfg=1.0, record=True)
        assert np.all(generated.latents == -1)
        assert generated.trajectory.seed == 0
        np.testing.assert_array_equal(generated.trajectory.latents, generated.latents)

    def test_stream_decouples_start_noise_from_the_bare_seed(self, toy_denoiser):
        """Test stream decouples start noise from the bare seed"""
        bare = generate(toy_denoiser, None, self.grid, 5, seed=0, w_cfg=1.0, record=True)
        streamed = generate(toy_denoiser, None, self.grid, 5, seed=0, w_cfg=1.0, record=True, stream=9)
        same_seed = self.grid.t_max * np.random.default_rng(0).standard_normal((5, 2))
        np.testing.assert_allclose(bare.trajectory.states[0], same_seed)
        assert not np.allclose(streamed.trajectory.states[0], same_seed)
        assert streamed.seed == 0

    def test_systematic_latents_balance_codes(self, toy_denoiser):
        """Test systematic latents balance codes"""
        generated = generate(toy_denoiser, self.prior, self.grid, 80, seed=2, w_cfg=1.0, systematic=True)
        np.testing.assert_array_equal(np.bincount(generated.latents[:, 0], minlength=8), [10] * 8)

    def test_guidance_changes_samples(self, toy_denoiser):
        """Test guidance changes samples"""
        toy_denoiser.null_embeddings[0].data = np.array([[1.0, 1.0]])
        a = generate(toy_denoiser, self.prior, self.grid, 10, seed=1, w_cfg=1.0)
        b = generate(toy_denoiser, self.prior, self.grid, 10, seed=1, w_cfg=2.0)
        np.testing.assert_array_equal(a.latents, b.latents)
        assert not np.allclose(a.samples, b.samples)

    def test_model_denoise_fn_matches_latent_choice(self, toy_denoiser):
        """Test model denoise fn matches latent choice"""
        x = np.random.default_rng(0).normal(size=(3, 2))
        fn = model_denoise_fn(toy_denoiser, np.array([[0], [1], [2]]))
        assert fn(x, 1.0).shape == (3, 2)

    def test_csv_round_trip(self, tmp_path, toy_denoiser):
        """Test csv round trip"""
        generated = generate(toy_denoiser, self.prior, self.grid, 7, seed=4, w_cfg=1.0)
        path = write_samples_csv(generated, tmp_path / "samples.csv")
        assert path.read_text().splitlines()[0] == "x,y,latent_0,seed"
        loaded = read_samples_csv(path)
        np.testing.assert_array_equal(loaded.samples, generated.samples)
        np.testing.assert_array_equal(loaded.latents, generated.latents)
        assert loaded.seed == 4
