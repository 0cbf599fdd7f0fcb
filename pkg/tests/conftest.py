"""Shared fixtures: 64-bit precision, a toy two-style corpus and a tiny model."""

import numpy as np
import pytest

from gmm_wae import tensor as T
from gmm_wae.data import SPECIAL_TOKENS, Batch, LabeledCorpus, Vocab
from gmm_wae.model import ModelConfig, Seq2SeqModel

TOY_WORDS = ["a", "b", "c", "d", "w", "x", "y", "z"]


@pytest.fixture
def float64():
    with T.precision("float64"):
        yield


@pytest.fixture
def toy_vocab() -> Vocab:
    return Vocab(SPECIAL_TOKENS + TOY_WORDS)


@pytest.fixture
def toy_corpus() -> LabeledCorpus:
    """Ten sentences per class; class 0 uses ids 4-7, class 1 uses ids 8-11."""

    rng = np.random.default_rng(123)
    sentences = []
    for label, low in ((0, 4), (1, 8)):
        for _ in range(10):
            length = int(rng.integers(2, 5))
            sentences.append((label, rng.integers(low, low + 4, size=length).tolist()))
    return LabeledCorpus(sentences, ["left", "right"], max_len=6)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(
        vocab_size=12, num_classes=2, embed_dim=4, hidden_dim=5, latent_dim=3, max_len=6
    )


@pytest.fixture
def tiny_model(float64, tiny_config) -> Seq2SeqModel:
    return Seq2SeqModel.initialize(tiny_config, np.random.default_rng(0))


@pytest.fixture
def tiny_batch() -> Batch:
    return Batch.from_sequences([1, 1], [[8, 9, 10], [11, 8]])


@pytest.fixture
def brute_force_mmd():
    """Double-loop reference evaluation of the MMD estimators."""

    def imq(x, y, c):
        return c / (c + np.sum((x - y) ** 2))

    def evaluate(x, y, c, cross="standard"):
        n = len(x)
        within = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    within += imq(x[i], x[j], c) + imq(y[i], y[j], c)
        within /= n * (n - 1)

        cross_sum = 0.0
        for i in range(n):
            for j in range(n):
                if cross != "standard" or i != j:
                    cross_sum += imq(x[i], y[j], c)

        if cross == "standard":
            return within - 2.0 * cross_sum / (n * (n - 1))
        if cross == "full":
            return within - 2.0 * cross_sum / (n * n)
        return within - cross_sum / (n * n)

    return evaluate
