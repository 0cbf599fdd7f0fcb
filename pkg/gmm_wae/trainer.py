import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
from tqdm import tqdm

from gmm_wae.data import Batch, LabeledCorpus, class_batches
from gmm_wae.exceptions import ContractError, NumericError
from gmm_wae.latent import MmdCrossCoeff, kl_unit_variance, mmd_hat, sample_component
from gmm_wae.model import (
    ModelConfig,
    Seq2SeqModel,
    decode_teacher_forced,
    encode_batch,
    reparameterize,
)
from gmm_wae.module import Module, ModuleHelper
from gmm_wae.tensor import Tape, Tensor

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["step", "class", "recon", "kl", "mmd", "total"]


@dataclass
class TrainConfig:
    lambda_kl: float = 0.1
    lambda_mmd: float = 10.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    mmd_cross_coeff: MmdCrossCoeff = MmdCrossCoeff.STANDARD
    freeze_priors: bool = False
    clip_norm: Optional[float] = 5.0
    holdout_fraction: float = 0.1
    subset_per_class: Optional[int] = None

    def __post_init__(self):
        self.mmd_cross_coeff = MmdCrossCoeff(self.mmd_cross_coeff)

        if self.lambda_kl < 0 or self.lambda_mmd < 0:
            raise ContractError(
                f"Loss weights must be >= 0, got lambda_kl={self.lambda_kl}, "
                f"lambda_mmd={self.lambda_mmd}"
            )

        if self.learning_rate <= 0:
            raise ContractError(f"learning_rate must be positive, got {self.learning_rate}")

        if self.batch_size < 2:
            raise ContractError(f"batch_size must be >= 2, got {self.batch_size}")

        if self.epochs < 0:
            raise ContractError(f"epochs must be >= 0, got {self.epochs}")

        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ContractError(f"clip_norm must be positive, got {self.clip_norm}")

        if not 0 < self.holdout_fraction < 1:
            raise ContractError(
                f"holdout_fraction must be in (0, 1), got {self.holdout_fraction}"
            )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["mmd_cross_coeff"] = self.mmd_cross_coeff.value
        return data

    @staticmethod
    def from_dict(data: dict) -> "TrainConfig":
        return TrainConfig(**data)


@dataclass
class LossBreakdown:
    step: int
    class_index: int
    recon: float
    kl: float
    mmd: float
    total: float

    def as_row(self) -> list:
        return [self.step, self.class_index, self.recon, self.kl, self.mmd, self.total]


@dataclass
class TrainHistory:
    records: list[LossBreakdown] = field(default_factory=list)
    epoch_ends: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, record: LossBreakdown):
        self.records.append(record)

    def end_epoch(self):
        self.epoch_ends.append(len(self.records))

    @property
    def num_epochs(self) -> int:
        return len(self.epoch_ends)

    def epoch(self, e: int) -> list[LossBreakdown]:
        if not -self.num_epochs <= e < self.num_epochs:
            raise IndexError(f"Epoch {e} out of range for {self.num_epochs} epochs")

        e = e % self.num_epochs
        start = self.epoch_ends[e - 1] if e > 0 else 0
        return self.records[start : self.epoch_ends[e]]

    def component_mmd(self, e: int, num_classes: int) -> np.ndarray:
        """Mean MMD per class over epoch `e`; NaN for classes without a step."""

        totals = np.zeros(num_classes)
        counts = np.zeros(num_classes)
        for record in self.epoch(e):
            totals[record.class_index] += record.mmd
            counts[record.class_index] += 1

        with np.errstate(invalid="ignore"):
            return totals / counts

    def epoch_means(self, e: int) -> dict[str, float]:
        records = self.epoch(e)
        return {
            name: float(np.mean([getattr(record, name) for record in records]))
            for name in ("recon", "kl", "mmd", "total")
        }

    def to_csv(self, path: Union[str, Path]):
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(HISTORY_COLUMNS)
            for record in self.records:
                writer.writerow(record.as_row())

    @staticmethod
    def from_csv(path: Union[str, Path], epoch_ends: Optional[list[int]] = None) -> "TrainHistory":
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            records = [
                LossBreakdown(
                    int(row["step"]),
                    int(row["class"]),
                    float(row["recon"]),
                    float(row["kl"]),
                    float(row["mmd"]),
                    float(row["total"]),
                )
                for row in reader
            ]
        return TrainHistory(records, list(epoch_ends or []))


class Adam:
    """Adam with per-parameter step counters.

    `step(names)` only touches the named parameters, so a prior component
    that took no part in the loss keeps its value and moments.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        learning_rate: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1, self.beta2 = betas
        self.eps = eps

        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.t = {name: 0 for name in params}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, names: Optional[Iterable[str]] = None):
        for name in self.params if names is None else names:
            p = self.params[name]
            if p.grad is None:
                continue

            self.t[name] += 1
            t = self.t[name]

            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * p.grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * p.grad**2

            m_hat = self.m[name] / (1.0 - self.beta1**t)
            v_hat = self.v[name] / (1.0 - self.beta2**t)
            update = self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
            p.data -= update.astype(p.data.dtype)

    def state(self) -> dict:
        return {"t": dict(self.t), "m": self.m, "v": self.v}

    def load_state(self, t: dict[str, int], m: dict[str, np.ndarray], v: dict[str, np.ndarray]):
        for name, p in self.params.items():
            self.t[name] = int(t.get(name, 0))
            if name in m:
                self.m[name] = m[name].astype(p.data.dtype).reshape(p.shape)
            if name in v:
                self.v[name] = v[name].astype(p.data.dtype).reshape(p.shape)


def trainable_parameters(model: Seq2SeqModel, config: TrainConfig) -> dict[str, Tensor]:
    params = dict(model.network_parameters())
    if model.prior.trainable and not config.freeze_priors:
        params.update(model.prior.named_parameters())
    return params


def wae_loss(
    model: Seq2SeqModel,
    batch: Batch,
    config: TrainConfig,
    posterior_noise: np.ndarray,
    prior_noise: np.ndarray,
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """(total, recon, kl, mmd) for a single-class batch with explicit noise.

    Only the prior component of the batch's class enters the graph.
    """

    component = model.component_for(batch.label)

    mu, log_sigma = encode_batch(model, batch)
    h = reparameterize(mu, log_sigma, None, noise=posterior_noise)

    recon = decode_teacher_forced(model, h, batch.ids)
    kl = kl_unit_variance(mu, log_sigma)

    prior_samples = sample_component(model.prior, component, len(batch), None, noise=prior_noise)
    if config.freeze_priors:
        prior_samples = prior_samples.detach()

    mmd = mmd_hat(h, prior_samples, model.config.kernel_constant, config.mmd_cross_coeff)

    total = recon + kl * config.lambda_kl + mmd * config.lambda_mmd
    return total, recon, kl, mmd


def _clip_gradients(params: list[Tensor], clip_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params)))
    if norm > clip_norm:
        scale = clip_norm / norm
        for p in params:
            p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
    return norm


def train_step(
    model: Seq2SeqModel,
    optimizer: Adam,
    batch: Batch,
    config: TrainConfig,
    rng: np.random.Generator,
    step: int = 0,
) -> LossBreakdown:
    """One optimizer update on a single-class batch.

    Raises:
        ContractError: the batch mixes classes or holds fewer than 2 sentences.
        NumericError: the loss is not finite.
    """

    label = batch.label
    if len(batch) < 2:
        raise ContractError(f"A training batch needs >= 2 sentences, got {len(batch)}")

    shape = (len(batch), model.config.latent_dim)
    posterior_noise = rng.standard_normal(shape)
    prior_noise = rng.standard_normal(shape)

    for p in model.named_parameters().values():
        p.zero_grad()

    with Tape() as tape:
        total, recon, kl, mmd = wae_loss(model, batch, config, posterior_noise, prior_noise)

    if not np.isfinite(total.item()):
        raise NumericError(
            f"Non-finite loss at step {step} (class {label}): recon={recon.item()}, "
            f"kl={kl.item()}, mmd={mmd.item()}"
        )

    tape.backward(total)

    component = model.component_for(label)
    active = [
        name
        for name in optimizer.params
        if not name.startswith("prior.") or name.startswith(f"prior.{component}.")
    ]

    if config.clip_norm is not None:
        norm = _clip_gradients([optimizer.params[name] for name in active], config.clip_norm)
        logger.debug("step %d: gradient norm %.4f", step, norm)

    optimizer.step(active)

    return LossBreakdown(step, label, recon.item(), kl.item(), mmd.item(), total.item())


def fit(
    model: Seq2SeqModel,
    corpus: LabeledCorpus,
    config: TrainConfig,
    rng: np.random.Generator,
    optimizer: Optional[Adam] = None,
    history: Optional[TrainHistory] = None,
    progress: bool = False,
) -> tuple[Adam, TrainHistory]:
    if corpus.num_classes != model.config.num_classes:
        raise ContractError(
            f"Corpus has {corpus.num_classes} classes, model expects {model.config.num_classes}"
        )

    optimizer = optimizer or Adam(trainable_parameters(model, config), config.learning_rate)
    history = history if history is not None else TrainHistory()

    for epoch in range(config.epochs):
        batches = list(class_batches(corpus, config.batch_size, rng))
        for batch in tqdm(
            batches,
            desc=f"epoch {epoch + 1}/{config.epochs}",
            disable=not progress,
            leave=False,
        ):
            history.append(train_step(model, optimizer, batch, config, rng, len(history)))
        history.end_epoch()

        if not batches:
            logger.warning("Epoch %d produced no batches", epoch + 1)
            continue

        means = history.epoch_means(-1)
        per_class = history.component_mmd(-1, corpus.num_classes)
        logger.info(
            "epoch %d/%d: recon=%.4f kl=%.4f mmd=%.4f total=%.4f per-class mmd=%s",
            epoch + 1,
            config.epochs,
            means["recon"],
            means["kl"],
            means["mmd"],
            means["total"],
            np.array2string(per_class, precision=4),
        )

    return optimizer, history


class Trainer(Module):
    def build_model(self, model_config: ModelConfig) -> Seq2SeqModel:
        self.wae.model = Seq2SeqModel.initialize(model_config, self.wae.rng)
        self.wae.optimizer = None
        logger.info(
            "Initialized model: vocab=%d latent=%d hidden=%d components=%d (%s prior)",
            model_config.vocab_size,
            model_config.latent_dim,
            model_config.hidden_dim,
            model_config.num_components,
            model_config.prior_mode.value,
        )
        return self.wae.model

    @ModuleHelper.trained
    def fit(self, corpus: LabeledCorpus, progress: bool = False) -> TrainHistory:
        self.wae.optimizer, self.wae.history = fit(
            self.wae.model,
            corpus,
            self.wae.train_config,
            self.wae.rng,
            optimizer=self.wae.optimizer,
            history=self.wae.history,
            progress=progress,
        )
        return self.wae.history
