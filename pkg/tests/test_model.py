"""Tests for the GRU encoder and decoder."""

import numpy as np
import pytest

from gmm_wae.data import BOS, EOS, PAD, Batch
from gmm_wae.exceptions import ContractError, VocabError
from gmm_wae.latent import MmdCrossCoeff
from gmm_wae.model import (
    GRUParams,
    ModelConfig,
    PriorMode,
    Seq2SeqModel,
    decode_sample,
    decode_teacher_forced,
    encode,
    encode_batch,
    gru_step,
    reparameterize,
)
from gmm_wae.tensor import Tape, Tensor
from gmm_wae.trainer import Adam, TrainConfig, train_step


class TestGruStep:
    """The single-step gated recurrent update."""

    def test_zero_parameters_halve_state(self, float64):
        zeros = [np.zeros((7, 3)), np.zeros(3)] * 3
        params = GRUParams(*[Tensor(z) for z in zeros])
        h = np.array([1.0, -2.0, 0.5])

        out = gru_step(params, Tensor(np.zeros(4)), Tensor(h))
        np.testing.assert_allclose(out.data, 0.5 * h)

    def test_bounded_by_one(self, float64):
        rng = np.random.default_rng(0)
        params = GRUParams.initialize(4, 3, rng, "gru")
        h = Tensor(rng.uniform(-1, 1, size=(5, 3)))
        out = gru_step(params, Tensor(rng.standard_normal((5, 4)) * 10), h)

        assert out.shape == (5, 3)
        assert np.all(np.abs(out.data) <= 1.0)

    def test_wrong_input_width(self, float64):
        params = GRUParams.initialize(4, 3, np.random.default_rng(0), "gru")
        with pytest.raises(ContractError):
            gru_step(params, Tensor(np.zeros(5)), Tensor(np.zeros(3)))


class TestModelConfig:
    """Validation and serialization of the architecture."""

    def test_kernel_default(self):
        assert ModelConfig(50, 3, latent_dim=8).kernel_constant == 16.0

    def test_single_prior_has_one_component(self):
        config = ModelConfig(50, 3, prior_mode="single")
        assert config.prior_mode is PriorMode.SINGLE
        assert config.num_components == 1

    def test_round_trip(self):
        config = ModelConfig(50, 3, hidden_dim=7, kernel_c=2.5)
        assert ModelConfig.from_dict(config.to_dict()) == config

    def test_vocab_must_exceed_specials(self):
        with pytest.raises(ContractError):
            ModelConfig(4, 2)


class TestEncoder:
    """Posterior parameters of whole sentences."""

    def test_deterministic(self, tiny_model):
        mu_a, log_sigma_a = encode(tiny_model, [4, 5, 6])
        mu_b, log_sigma_b = encode(tiny_model, [4, 5, 6])

        assert mu_a.shape == (3,)
        np.testing.assert_array_equal(mu_a.data, mu_b.data)
        np.testing.assert_array_equal(log_sigma_a.data, log_sigma_b.data)

    def test_distinct_inputs(self, tiny_model):
        assert not np.allclose(encode(tiny_model, [4, 5])[0].data, encode(tiny_model, [9, 10])[0].data)

    def test_batch_matches_single(self, tiny_model):
        batch = Batch.from_sequences([0, 0], [[4, 5, 6, 7], [8, 9]])
        mu, _ = encode_batch(tiny_model, batch)

        np.testing.assert_allclose(mu.data[0], encode(tiny_model, [4, 5, 6, 7])[0].data)
        np.testing.assert_allclose(mu.data[1], encode(tiny_model, [8, 9])[0].data)

    def test_empty(self, tiny_model):
        with pytest.raises(ContractError):
            encode(tiny_model, [])

    def test_too_long(self, tiny_model):
        with pytest.raises(ContractError):
            encode(tiny_model, [4] * 7)

    def test_unknown_id(self, tiny_model):
        with pytest.raises(VocabError):
            encode(tiny_model, [4, 12])

    @pytest.mark.parametrize("seed", range(5))
    def test_sensitive_to_truncation(self, float64, tiny_config, seed):
        model = Seq2SeqModel.initialize(tiny_config, np.random.default_rng(seed))
        tokens = np.random.default_rng(100 + seed).integers(4, 12, size=5).tolist()

        full, _ = encode(model, tokens)
        prefix, _ = encode(model, tokens[:-1])
        assert not np.allclose(full.data, prefix.data)


class TestReparameterize:
    """Posterior sampling through the reparameterization trick."""

    def test_zero_noise_is_mean(self, float64):
        mu, log_sigma = Tensor([0.5, -1.0]), Tensor([0.3, 0.1])
        h = reparameterize(mu, log_sigma, None, noise=np.zeros(2))
        np.testing.assert_array_equal(h.data, mu.data)

    def test_scaled_noise(self, float64):
        h = reparameterize(Tensor([1.0]), Tensor([np.log(3.0)]), None, noise=np.array([2.0]))
        assert h.item() == pytest.approx(7.0)

    def test_empirical_spread(self, float64):
        log_sigma = np.log(np.array([0.2, 1.0, 2.5]))
        mu = Tensor(np.tile([1.0, -3.0, 0.0], (10000, 1)))
        h = reparameterize(mu, Tensor(np.tile(log_sigma, (10000, 1))), np.random.default_rng(8))

        np.testing.assert_allclose(h.data.std(axis=0), np.exp(log_sigma), rtol=0.05)
        np.testing.assert_allclose(h.data.mean(axis=0), [1.0, -3.0, 0.0], atol=0.1)


class TestDecoder:
    """Teacher-forced loss and sampling."""

    def test_zero_output_layer_gives_log_vocab(self, tiny_model):
        tiny_model.output.w.data[:] = 0.0
        tiny_model.output.b.data[:] = 0.0

        loss = decode_teacher_forced(tiny_model, Tensor(np.zeros(3)), [BOS, 4, 5, 6, EOS])
        assert loss.item() == pytest.approx(np.log(12))

    def test_padding_is_ignored(self, tiny_model):
        h = Tensor(np.random.default_rng(1).standard_normal(3))
        short = decode_teacher_forced(tiny_model, h, [BOS, 4, 5, EOS])
        padded = decode_teacher_forced(tiny_model, h, [BOS, 4, 5, EOS, PAD, PAD])
        assert short.item() == pytest.approx(padded.item(), abs=1e-12)

    def test_rows_need_bos_and_eos(self, tiny_model):
        with pytest.raises(ContractError):
            decode_teacher_forced(tiny_model, Tensor(np.zeros(3)), [4, 5, EOS])

    def test_loss_decreases_when_fitting_one_sentence(self, tiny_model):
        h = Tensor(np.zeros(3))
        params = tiny_model.network_parameters()
        optimizer = Adam(params, learning_rate=0.01)

        losses = []
        for _ in range(50):
            optimizer.zero_grad()
            with Tape() as tape:
                loss = decode_teacher_forced(tiny_model, h, [BOS, 4, 9, 6, EOS])
            tape.backward(loss)
            optimizer.step()
            losses.append(loss.item())

        increases = sum(after > before for before, after in zip(losses, losses[1:]))
        assert increases <= 5
        assert losses[-1] < losses[0]

    def test_greedy_is_deterministic(self, tiny_model):
        h = np.random.default_rng(2).standard_normal(3)
        first = decode_sample(tiny_model, h, 0.0, None)
        second = decode_sample(tiny_model, h, 0.0, None)

        assert first == second
        assert len(first) <= tiny_model.config.max_len

    def test_greedy_ignores_logit_shift(self, tiny_model):
        h = np.random.default_rng(9).standard_normal(3)
        before = decode_sample(tiny_model, h, 0.0, None)
        tiny_model.output.b.data += 4.0

        assert decode_sample(tiny_model, h, 0.0, None) == before

    def test_sampling_never_emits_pad_or_bos(self, tiny_model):
        rng = np.random.default_rng(3)
        for _ in range(20):
            ids = decode_sample(tiny_model, rng.standard_normal(3), 2.0, rng, max_len=4)
            assert len(ids) <= 4
            assert not {PAD, BOS, EOS} & set(ids)

    def test_negative_temperature(self, tiny_model):
        with pytest.raises(ContractError):
            decode_sample(tiny_model, np.zeros(3), -0.5, None)


class TestAutoencoding:
    """A model trained on one sentence reproduces it."""

    def test_overfit_single_sentence(self, float64):
        config = ModelConfig(12, 2, embed_dim=8, hidden_dim=16, latent_dim=3, max_len=6)
        model = Seq2SeqModel.initialize(config, np.random.default_rng(4))
        train_config = TrainConfig(
            lambda_kl=0.0,
            lambda_mmd=0.0,
            learning_rate=0.05,
            mmd_cross_coeff=MmdCrossCoeff.STANDARD,
            clip_norm=None,
        )
        optimizer = Adam(model.named_parameters(), train_config.learning_rate)
        batch = Batch.from_sequences([0, 0], [[4, 9, 6, 11], [4, 9, 6, 11]])

        rng = np.random.default_rng(5)
        for step in range(400):
            train_step(model, optimizer, batch, train_config, rng, step)

        mu, _ = encode(model, [4, 9, 6, 11])
        assert decode_sample(model, mu, 0.0, None) == [4, 9, 6, 11]
