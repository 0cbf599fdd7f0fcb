"""Tests for latent sampling and sentence generation."""

import json

import numpy as np
import pytest

from gmm_wae import StyleWAE
from gmm_wae.exceptions import ContractError, NotTrainedException
from gmm_wae.generation import (
    GenerationRequest,
    SampleMode,
    format_line,
    generate_conditioned,
    generate_interpolated,
    sample_latent,
)
from gmm_wae.latent import StyleWeights


@pytest.fixture
def wae(toy_vocab, tiny_config) -> StyleWAE:
    wae = StyleWAE()
    wae.build_model(toy_vocab, ["left", "right"], tiny_config)
    return wae


def _collapse(model, means):
    for component, mu in zip(model.prior.components, means):
        component.mu.data[:] = mu
        component.log_sigma.data[:] = -30.0


class TestSampleLatent:
    """Latent vectors drawn for style weights."""

    def test_collapsed_priors_give_weighted_mean(self, wae):
        _collapse(wae.model, [[1.0, 0.0, 2.0], [-1.0, 4.0, 0.0]])
        h = sample_latent(wae.model, StyleWeights([0.25, 0.75]), np.random.default_rng(0))
        np.testing.assert_allclose(h, [-0.5, 3.0, 0.5], atol=1e-6)

    def test_linear_in_weights_for_fixed_noise(self, wae):
        noise = np.random.default_rng(1).standard_normal((2, 3))
        h = {
            t: sample_latent(wae.model, StyleWeights([t, 1.0 - t]), None, noise=noise)
            for t in (0.0, 0.5, 1.0)
        }
        np.testing.assert_allclose(h[0.5], 0.5 * (h[0.0] + h[1.0]), atol=1e-6)

    def test_mixture_picks_one_component(self, wae):
        _collapse(wae.model, [[1.0, 1.0, 1.0], [5.0, 5.0, 5.0]])
        rng = np.random.default_rng(2)
        draws = [
            sample_latent(wae.model, StyleWeights([0.5, 0.5]), rng, SampleMode.MIXTURE)
            for _ in range(40)
        ]

        firsts = {round(float(h[0])) for h in draws}
        assert firsts == {1, 5}

    def test_weight_count(self, wae):
        with pytest.raises(ContractError):
            sample_latent(wae.model, StyleWeights([0.2, 0.3, 0.5]), np.random.default_rng(0))


class TestGenerate:
    """Token-id generation from the model."""

    def test_conditioned_is_one_hot_interpolation(self, wae):
        conditioned = generate_conditioned(wae.model, 1, 4, 1.0, np.random.default_rng(3))
        interpolated = generate_interpolated(
            wae.model, StyleWeights.one_hot(1, 2), 4, 1.0, np.random.default_rng(3)
        )
        assert conditioned == interpolated

    def test_count_and_length(self, wae):
        sentences = generate_interpolated(
            wae.model, StyleWeights([0.5, 0.5]), 7, 1.5, np.random.default_rng(4), max_len=3
        )
        assert len(sentences) == 7
        assert all(len(ids) <= 3 for ids in sentences)

    def test_parameters_untouched(self, wae):
        before = {name: p.data.copy() for name, p in wae.model.named_parameters().items()}
        generate_conditioned(wae.model, 0, 5, 1.0, np.random.default_rng(5))

        for name, p in wae.model.named_parameters().items():
            np.testing.assert_array_equal(p.data, before[name])

    def test_class_out_of_range(self, wae):
        with pytest.raises(IndexError):
            generate_conditioned(wae.model, 2, 1, 1.0, np.random.default_rng(0))


class TestGenerationRequest:
    """Validation of generation requests."""

    def test_count(self):
        with pytest.raises(ContractError):
            GenerationRequest(StyleWeights([1.0]), count=0)

    def test_temperature(self):
        with pytest.raises(ContractError):
            GenerationRequest(StyleWeights([1.0]), temperature=-1.0)

    def test_sample_mode_from_string(self):
        assert GenerationRequest(StyleWeights([1.0]), sample_mode="mixture").sample_mode is SampleMode.MIXTURE


class TestStyleWAEGenerate:
    """Sentence generation through the facade."""

    def test_seeded(self, wae):
        request = GenerationRequest(StyleWeights([0.4, 0.6]), count=5, seed=9)
        assert wae.generate(request) == wae.generate(request)

    def test_sentences_use_vocabulary(self, wae):
        for sentence in wae.generate_conditioned(0, count=5, seed=1):
            assert all(token in wae.vocab for token in sentence.split())
            assert "<pad>" not in sentence and "<bos>" not in sentence

    def test_untrained(self):
        with pytest.raises(NotTrainedException):
            StyleWAE().generate(GenerationRequest(StyleWeights([0.5, 0.5])))


class TestFormatLine:
    """Output line formatting."""

    def test_plain(self):
        assert format_line(StyleWeights([1.0, 0.0]), "a b") == "a b"

    def test_with_meta(self):
        weights, sentence = format_line(StyleWeights([0.25, 0.75]), "a b", with_meta=True).split("\t")
        assert json.loads(weights) == [0.25, 0.75]
        assert sentence == "a b"
