"""
Tests for the encoder, Gumbel-Softmax, joint training and guidance
"""

import numpy as np
import pytest

from discodiff.config import Arm
from discodiff.engine import NonFiniteError, Tensor, grad, parameter
from discodiff.engine.gradcheck import numeric_gradient, relative_error
from discodiff.engine.tensor import multiply, reduce_sum
from discodiff.services.datagen import default_mixture, sample_dataset
from discodiff.services.diffusion import (
    DiffusionConfig,
    LatentCode,
    ToyDenoiser,
    denoise,
    empirical_sigma_data,
    per_sample_dsm,
    sample_training_sigma,
)
from discodiff.services.disco import (
    DiscoModel,
    DiscoTrainer,
    Encoder,
    cfg_denoise,
    encode,
    extract_latents,
    gumbel_noise,
    gumbel_softmax,
    guided_combination,
    mode_purity,
)


class TestGumbelSoftmax:
    """Relaxed categorical sampling"""

    def test_uniform_logits_argmax_frequencies(self):
        """Test uniform logits argmax frequencies"""
        rng = np.random.default_rng(0)
        sample = gumbel_softmax(np.zeros((100_000, 8)), 1.0, rng=rng)
        freq = np.bincount(np.argmax(sample.data, axis=1), minlength=8) / 100_000
        np.testing.assert_allclose(freq, 1 / 8, atol=0.005)

    def test_low_temperature_concentrates(self):
        """Test low temperature concentrates"""
        logits = np.zeros(8)
        logits[0] = 10.0
        sample = gumbel_softmax(logits, 0.01, noise=np.zeros(8))
        assert sample.data.max() > 1 - 1e-6
        assert np.argmax(sample.data) == 0

    def test_max_component_grows_as_temperature_falls(self):
        """Test max component grows as temperature falls"""
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(20, 5))
        noise = gumbel_noise(rng, logits.shape)
        maxima = [gumbel_softmax(logits, tau, noise=noise).data.max(axis=1) for tau in (1.0, 0.1, 0.01)]
        assert np.all(maxima[1] >= maxima[0] - 1e-15)
        assert np.all(maxima[2] >= maxima[1] - 1e-15)

    def test_rows_on_the_simplex(self):
        """Test rows on the simplex"""
        sample = gumbel_softmax(np.random.default_rng(2).normal(size=(4, 6)), 0.5, rng=np.random.default_rng(3))
        assert np.all(sample.data >= 0)
        np.testing.assert_allclose(sample.data.sum(axis=1), 1.0)

    def test_gradcheck(self):
        """Test gradcheck"""
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 5))
        noise = gumbel_noise(rng, x.shape)
        weights = Tensor(rng.normal(size=(3, 5)))

        def f(v):
            return reduce_sum(multiply(gumbel_softmax(v, 0.7, noise=noise), weights))

        logits = parameter(x, "logits")
        (analytic,) = grad(f(logits), [logits])
        numeric = numeric_gradient(lambda v: f(Tensor(v)).item(), x)
        assert relative_error(analytic, numeric) < 1e-5

    def test_rejects_non_positive_temperature(self):
        """Test rejects non positive temperature"""
        with pytest.raises(ValueError):
            gumbel_softmax(np.zeros(3), 0.0, noise=np.zeros(3))


class TestEncode:
    """Encoder sampling and extraction"""

    def setup_method(self):
        self.encoder = Encoder(1, 8, np.random.default_rng(0), hidden_width=8, depth=3)
        self.points = np.random.default_rng(1).normal(size=(10, 2))

    def test_one_simplex_row_of_length_eight(self):
        """Test one simplex row of length eight"""
        sample = encode(self.encoder, self.points, 1.0, np.random.default_rng(2))
        assert sample.relaxed.shape == (10, 8)
        assert sample.hard.shape == (10, 1)
        np.testing.assert_array_equal(sample.hard[:, 0], np.argmax(sample.relaxed.data, axis=1))

    def test_same_seed_same_sample(self):
        """Test same seed same sample"""
        a = encode(self.encoder, self.points, 1.0, np.random.default_rng(5))
        b = encode(self.encoder, self.points, 1.0, np.random.default_rng(5))
        np.testing.assert_array_equal(a.relaxed.data, b.relaxed.data)
        np.testing.assert_array_equal(a.hard, b.hard)

    def test_several_latents(self):
        """Test several latents"""
        encoder = Encoder(3, 4, np.random.default_rng(0), hidden_width=8, depth=2)
        sample = encode(encoder, self.points, 1.0, np.random.default_rng(2))
        assert sample.relaxed.shape == (10, 12)
        assert sample.hard.shape == (10, 3)
        assert sample.hard.max() < 4

    def test_low_temperature_extraction_follows_a_clear_leader(self):
        """Test low temperature extraction follows a clear leader"""
        encoder = Encoder(1, 2, np.random.default_rng(0), hidden_width=4, depth=2)
        last = encoder.net.layers[-1]
        last.weight.data = np.zeros(last.weight.shape)
        last.bias.data = np.array([5.0, 0.0])
        points = np.random.default_rng(1).normal(size=(20_000, 2))
        sample = encode(encoder, points, 0.01, np.random.default_rng(2))
        agree = np.mean(sample.hard[:, 0] == 0)
        assert agree > 0.99
        assert agree == pytest.approx(np.exp(5.0) / (np.exp(5.0) + 1.0), abs=0.003)

    def test_extract_in_batches(self):
        """Test extract in batches"""
        latents = extract_latents(self.encoder, self.points, 0.01, np.random.default_rng(3), batch_size=3)
        assert latents.shape == (10, 1)
        empty = extract_latents(self.encoder, np.zeros((0, 2)), 0.01, np.random.default_rng(3))
        assert empty.shape == (0, 1)

    def test_mode_purity(self):
        """Test mode purity"""
        assert mode_purity(np.array([0, 0, 1, 1]), np.array([3, 3, 5, 5])) == 1.0
        assert mode_purity(np.array([0, 0, 0, 0]), np.array([3, 3, 5, 5])) == 0.5
        assert mode_purity(np.array([], dtype=int), np.array([], dtype=int)) == 0.0


class TestGuidance:
    """Classifier-free guidance identities"""

    def setup_method(self):
        rng = np.random.default_rng(6)
        self.model = ToyDenoiser(1, 4, rng, sigma_component=0.2, hidden_width=8, depth=3,
                                 time_embedding_dim=4)
        for layer in self.model.residual.layers:
            layer.weight.data = rng.normal(size=layer.weight.shape)
        self.model.null_embeddings[0].data = rng.normal(size=(1, 2))
        self.x = rng.normal(size=(7, 2)) * 2
        self.t = np.exp(rng.normal(size=7))
        self.code = LatentCode.hard(rng.integers(0, 4, size=(7, 1)), 4)

    def test_scalar_combination(self):
        """Test scalar combination"""
        out = guided_combination(Tensor([1.0, 0.0]), Tensor([0.5, 0.0]), 2.0)
        np.testing.assert_allclose(out.data, [1.5, 0.0])

    def test_weight_one_is_conditional(self):
        """Test weight one is conditional"""
        conditional = denoise(self.model, self.x, self.t, self.code)
        np.testing.assert_array_equal(cfg_denoise(self.model, self.x, self.t, self.code, 1.0).data, conditional.data)

    def test_weight_zero_is_unconditional(self):
        """Test weight zero is unconditional"""
        null = LatentCode.null(7, 1, 4)
        unconditional = denoise(self.model, self.x, self.t, null)
        np.testing.assert_array_equal(cfg_denoise(self.model, self.x, self.t, self.code, 0.0).data,
                                      unconditional.data)

    def test_affine_in_weight(self):
        """Test affine in weight"""
        d0 = cfg_denoise(self.model, self.x, self.t, self.code, 0.0).data
        d1 = cfg_denoise(self.model, self.x, self.t, self.code, 1.0).data
        for w in (-0.5, 0.3, 2.0, 3.5):
            dw = cfg_denoise(self.model, self.x, self.t, self.code, w).data
            np.testing.assert_allclose(dw, d0 + w * (d1 - d0), rtol=0, atol=1e-11)

    def test_weights_other_than_one_change_output(self):
        """Test weights other than one change output"""
        d1 = cfg_denoise(self.model, self.x, self.t, self.code, 1.0).data
        d2 = cfg_denoise(self.model, self.x, self.t, self.code, 2.0).data
        assert not np.allclose(d1, d2)


class TestDiscoTrainer:
    """Joint training of denoiser and encoder"""

    def setup_method(self):
        self.diffusion = DiffusionConfig(sigma_data=2.0)
        self.points = np.random.default_rng(7).normal(size=(64, 2)) * 2

    def _model(self, seed=0):
        rng = np.random.default_rng(seed)
        denoiser = ToyDenoiser(1, 4, rng, sigma_component=0.2, hidden_width=8, depth=3,
                               time_embedding_dim=4)
        return DiscoModel(denoiser, Encoder(1, 4, rng, hidden_width=8, depth=3, input_scale=0.5))

    def test_full_drop_gives_zero_encoder_gradient(self):
        """Test full drop gives zero encoder gradient"""
        model = self._model()
        trainer = DiscoTrainer(model, self.diffusion, np.random.default_rng(0), arm=Arm.DISCO, p_drop=1.0)
        _, grads = trainer.compute_gradients(self.points)
        for name in model.encoder.parameters():
            np.testing.assert_array_equal(grads[name], np.zeros_like(grads[name]))

    def test_encoder_receives_gradient(self):
        """Test encoder receives gradient"""
        model = self._model()
        trainer = DiscoTrainer(model, self.diffusion, np.random.default_rng(0), arm=Arm.DISCO, p_drop=0.0)
        _, grads = trainer.compute_gradients(self.points)
        assert any(np.any(grads[name] != 0) for name in model.encoder.parameters())

    def test_one_step_moves_denoiser_and_encoder(self):
        """Test one step moves denoiser and encoder"""
        model = self._model()
        tables = model.denoiser.tables[0].data.copy()
        encoder_before = model.encoder.state_dict()
        trainer = DiscoTrainer(model, self.diffusion, np.random.default_rng(0), arm=Arm.DISCO, tau=1.0,
                               p_drop=0.0, batch_size=64)
        trainer.joint_train_step(self.points)
        assert not np.array_equal(model.denoiser.tables[0].data, tables)
        assert any(not np.array_equal(value, encoder_before[name])
                   for name, value in model.encoder.state_dict().items())

    def test_latents_beat_the_baseline_on_the_octagon(self):
        """Test latents beat the baseline on the octagon"""
        points = sample_dataset(default_mixture(), 100, seed=0).points
        diffusion = DiffusionConfig(sigma_data=empirical_sigma_data(points))
        eval_rng = np.random.default_rng(9)
        y = points[eval_rng.integers(len(points), size=2000)]
        sigma = sample_training_sigma(diffusion, eval_rng, 2000)
        noise = eval_rng.standard_normal((2000, 2))
        losses = {}
        for arm in (Arm.DISCO, Arm.BASELINE):
            rng = np.random.default_rng(0)
            denoiser = ToyDenoiser(1, 8, rng, hidden_width=32, depth=3, time_embedding_dim=8)
            encoder = Encoder(1, 8, rng, hidden_width=32, depth=3, input_scale=1.0 / diffusion.sigma_data)
            if arm == Arm.DISCO:
                denoiser.init_embeddings_from_data(points, np.random.default_rng(1))
            trainer = DiscoTrainer(DiscoModel(denoiser, encoder), diffusion, np.random.default_rng(2), arm=arm,
                                   p_drop=0.0, batch_size=256, lr=3e-3)
            trainer.train(points, 500)
            if arm == Arm.DISCO:
                code = LatentCode.hard(extract_latents(encoder, y, 0.01, np.random.default_rng(3)), 8)
            else:
                code = LatentCode.null(len(y), 1, 8)
            losses[arm] = per_sample_dsm(denoiser, diffusion, y, code, sigma, noise).mean()
        assert losses[Arm.DISCO] < losses[Arm.BASELINE]

    def test_baseline_keeps_encoder_frozen(self):
        """Test baseline keeps encoder frozen"""
        model = self._model()
        before = model.encoder.state_dict()
        trainer = DiscoTrainer(model, self.diffusion, np.random.default_rng(0), arm=Arm.BASELINE, batch_size=16)
        trainer.train(self.points, 5)
        assert set(trainer.params) == set(model.denoiser.parameters())
        for name, value in model.encoder.state_dict().items():
            np.testing.assert_array_equal(value, before[name])
        assert trainer.step_count == 5

    def test_training_lowers_the_loss(self):
        """Test training lowers the loss"""
        model = self._model()
        trainer = DiscoTrainer(model, self.diffusion, np.random.default_rng(0), arm=Arm.BASELINE,
                               batch_size=64, lr=1e-2)
        rng = np.random.default_rng(8)
        sigma = np.exp(rng.normal(-1.2, 1.2, size=64))
        noise = rng.standard_normal((64, 2))
        null = LatentCode.null(64, 1, 4)
        before = per_sample_dsm(model.denoiser, self.diffusion, self.points, null, sigma, noise).mean()
        trainer.train(self.points, 300)
        after = per_sample_dsm(model.denoiser, self.diffusion, self.points, null, sigma, noise).mean()
        assert after < before

    def test_deterministic(self):
        """Test deterministic"""
        losses = []
        for _ in range(2):
            trainer = DiscoTrainer(self._model(), self.diffusion, np.random.default_rng(3), batch_size=16)
            losses.append(trainer.train(self.points, 3))
        assert losses[0] == losses[1]

    def test_non_finite_step_leaves_parameters(self):
        """Test non finite step leaves parameters"""
        model = self._model()
        model.denoiser.null_embeddings[0].data = np.array([[1e200, 1e200]])
        trainer = DiscoTrainer(model, self.diffusion, np.random.default_rng(0), arm=Arm.BASELINE)
        before = model.denoiser.state_dict()
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            trainer.joint_train_step(self.points)
        assert trainer.step_count == 0
        for name, value in model.denoiser.state_dict().items():
            np.testing.assert_array_equal(value, before[name])

    def test_invalid_settings(self):
        """Test invalid settings"""
        with pytest.raises(ValueError):
            DiscoTrainer(self._model(), self.diffusion, np.random.default_rng(0), tau=0.0)
        with pytest.raises(ValueError):
            DiscoTrainer(self._model(), self.diffusion, np.random.default_rng(0), p_drop=1.5)

    def test_mismatched_model(self):
        """Test mismatched model"""
        rng = np.random.default_rng(0)
        denoiser = ToyDenoiser(1, 4, rng, hidden_width=8, depth=2, time_embedding_dim=4)
        with pytest.raises(ValueError):
            DiscoModel(denoiser, Encoder(1, 5, rng, hidden_width=8, depth=2))
