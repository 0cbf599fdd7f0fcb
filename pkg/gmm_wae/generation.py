import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from gmm_wae.exceptions import ContractError, DimensionError
from gmm_wae.latent import StyleWeights, mix_latent
from gmm_wae.model import Seq2SeqModel, decode_sample
from gmm_wae.module import Module, ModuleHelper

logger = logging.getLogger(__name__)


class SampleMode(str, Enum):
    # one draw per active component, averaged with the weights
    AVERAGE = "average"
    # one component picked with probability w_i, then a single draw from it
    MIXTURE = "mixture"


@dataclass
class GenerationRequest:
    weights: StyleWeights
    count: int = 1
    temperature: float = 1.0
    seed: int = 0
    sample_mode: SampleMode = SampleMode.AVERAGE
    max_len: Optional[int] = None

    def __post_init__(self):
        self.sample_mode = SampleMode(self.sample_mode)

        if self.count < 1:
            raise ContractError(f"count must be >= 1, got {self.count}")

        if self.temperature < 0:
            raise ContractError(f"temperature must be >= 0, got {self.temperature}")

        if self.max_len is not None and self.max_len < 1:
            raise ContractError(f"max_len must be >= 1, got {self.max_len}")


def _draw(model: Seq2SeqModel, k: int, eps: np.ndarray) -> np.ndarray:
    component = model.prior[model.component_for(k)]
    mu = component.mu.data.astype(np.float64)
    sigma = np.exp(component.log_sigma.data.astype(np.float64))
    return mu + sigma * eps


def sample_latent(
    model: Seq2SeqModel,
    weights: StyleWeights,
    rng: np.random.Generator,
    sample_mode: SampleMode = SampleMode.AVERAGE,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One latent vector for `weights`.

    `noise` of shape (num_classes, latent_dim) fixes the standard-normal draw
    of every component instead of taking it from `rng`.
    """

    num_classes, d = model.config.num_classes, model.config.latent_dim
    if len(weights) != num_classes:
        raise ContractError(f"{len(weights)} weights for a model with {num_classes} classes")

    if noise is not None and noise.shape != (num_classes, d):
        raise DimensionError(f"noise has shape {noise.shape}, expected {(num_classes, d)}")

    def eps(k: int) -> np.ndarray:
        return noise[k] if noise is not None else rng.standard_normal(d)

    if sample_mode is SampleMode.MIXTURE:
        k = int(rng.choice(num_classes, p=weights.w / weights.w.sum()))
        return _draw(model, k, eps(k))

    samples = np.zeros((num_classes, d))
    for k in weights.active():
        samples[k] = _draw(model, k, eps(k))

    return mix_latent(samples, weights)


def generate_interpolated(
    model: Seq2SeqModel,
    weights: StyleWeights,
    count: int,
    temperature: float,
    rng: np.random.Generator,
    sample_mode: SampleMode = SampleMode.AVERAGE,
    max_len: Optional[int] = None,
) -> list[list[int]]:
    if count < 1:
        raise ContractError(f"count must be >= 1, got {count}")

    return [
        decode_sample(
            model, sample_latent(model, weights, rng, sample_mode), temperature, rng, max_len
        )
        for _ in range(count)
    ]


def generate_conditioned(
    model: Seq2SeqModel,
    k: int,
    count: int,
    temperature: float,
    rng: np.random.Generator,
    max_len: Optional[int] = None,
) -> list[list[int]]:
    weights = StyleWeights.one_hot(k, model.config.num_classes)
    return generate_interpolated(model, weights, count, temperature, rng, max_len=max_len)


def format_line(weights: StyleWeights, sentence: str, with_meta: bool = False) -> str:
    if not with_meta:
        return sentence
    return f"{json.dumps(weights.to_json())}\t{sentence}"


class Generator(Module):
    @ModuleHelper.trained
    def generate_ids(self, request: GenerationRequest) -> list[list[int]]:
        rng = np.random.default_rng(request.seed)
        return generate_interpolated(
            self.wae.model,
            request.weights,
            request.count,
            request.temperature,
            rng,
            request.sample_mode,
            request.max_len,
        )

    @ModuleHelper.trained
    def generate(self, request: GenerationRequest) -> list[str]:
        sentences = [
            " ".join(self.wae.vocab.decode(ids)) for ids in self.generate_ids(request)
        ]
        logger.debug(
            "Generated %d sentences for weights %s", len(sentences), request.weights.to_json()
        )
        return sentences
