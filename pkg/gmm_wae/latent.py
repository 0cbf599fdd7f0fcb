"""Gaussian-mixture prior, IMQ kernel, MMD penalty, KL regularizer and latent mixing."""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from gmm_wae import tensor as T
from gmm_wae.exceptions import ContractError, DimensionError
from gmm_wae.tensor import Tensor


class MmdCrossCoeff(str, Enum):
    # 2/(N(N-1)) over n != m: unbiased, exactly 0 for identical sample sets
    STANDARD = "standard"
    # 2/N^2 over all (n, m)
    FULL = "full"
    # 1/N^2 over all (n, m); biased away from 0 at the optimum
    PAPER = "paper"


@dataclass
class GaussianComponent:
    mu: Tensor
    log_sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_sigma.shape or self.mu.ndim != 1:
            raise DimensionError(
                f"Component needs two equal vectors, got {self.mu.shape} "
                f"and {self.log_sigma.shape}"
            )

        T.check_finite(self.mu, "component mean")
        T.check_finite(self.log_sigma, "component log sigma")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma.data)

    def parameters(self) -> list[Tensor]:
        return [self.mu, self.log_sigma]


@dataclass
class PriorBank:
    components: list[GaussianComponent]
    trainable: bool = True

    def __post_init__(self):
        if not self.components:
            raise ContractError("A prior bank needs at least one component")

        dims = {component.dim for component in self.components}
        if len(dims) != 1:
            raise DimensionError(f"Components disagree on latent dimension: {sorted(dims)}")

        for component in self.components:
            component.mu.requires_grad = self.trainable
            component.log_sigma.requires_grad = self.trainable

    @staticmethod
    def initialize(
        num_components: int, dim: int, rng: np.random.Generator, scale: float = 2.0
    ) -> "PriorBank":
        """Seeded standard-normal means scaled by `scale`, unit standard deviations."""

        if num_components < 1 or dim < 1:
            raise ContractError(
                f"Need num_components >= 1 and dim >= 1, got {num_components}, {dim}"
            )

        components = []
        for i in range(num_components):
            mu = Tensor(rng.standard_normal(dim) * scale, name=f"prior.{i}.mu")
            log_sigma = Tensor(np.zeros(dim), name=f"prior.{i}.log_sigma")
            components.append(GaussianComponent(mu, log_sigma))

        return PriorBank(components, trainable=True)

    @staticmethod
    def standard_normal(dim: int) -> "PriorBank":
        component = GaussianComponent(
            Tensor(np.zeros(dim), name="prior.0.mu"),
            Tensor(np.zeros(dim), name="prior.0.log_sigma"),
        )
        return PriorBank([component], trainable=False)

    def __len__(self):
        return len(self.components)

    def __getitem__(self, k: int) -> GaussianComponent:
        if not 0 <= k < len(self.components):
            raise IndexError(f"Component {k} out of range for {len(self.components)} components")
        return self.components[k]

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def named_parameters(self) -> dict[str, Tensor]:
        named = {}
        for i, component in enumerate(self.components):
            named[f"prior.{i}.mu"] = component.mu
            named[f"prior.{i}.log_sigma"] = component.log_sigma
        return named


@dataclass
class StyleWeights:
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)

        if self.w.ndim != 1 or self.w.size == 0:
            raise ContractError(f"Style weights must be a non-empty vector, got {self.w!r}")

        if np.any(~np.isfinite(self.w)) or np.any(self.w < 0):
            raise ContractError(f"Style weights must be finite and >= 0, got {self.w.tolist()}")

        if abs(self.w.sum() - 1.0) > 1e-6:
            raise ContractError(f"Style weights must sum to 1, got {self.w.sum():.6f}")

    @staticmethod
    def one_hot(k: int, num_components: int) -> "StyleWeights":
        if not 0 <= k < num_components:
            raise IndexError(f"Class {k} out of range for {num_components} classes")

        w = np.zeros(num_components)
        w[k] = 1.0
        return StyleWeights(w)

    @staticmethod
    def from_pairs(
        classes: Sequence[int], weights: Sequence[float], num_components: int
    ) -> "StyleWeights":
        if len(classes) != len(weights):
            raise ContractError(
                f"{len(classes)} classes but {len(weights)} weights were given"
            )

        w = np.zeros(num_components)
        for k, weight in zip(classes, weights):
            if not 0 <= k < num_components:
                raise IndexError(f"Class {k} out of range for {num_components} classes")
            w[k] += weight
        return StyleWeights(w)

    def __len__(self):
        return self.w.size

    def active(self) -> list[int]:
        return [i for i, weight in enumerate(self.w) if weight > 0]

    def to_json(self) -> list[float]:
        return [round(float(weight), 6) for weight in self.w]


def imq_kernel(x: np.ndarray, y: np.ndarray, c: float) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"imq_kernel: shapes {x.shape} and {y.shape} differ")

    if c <= 0:
        raise ContractError(f"Kernel constant must be positive, got {c}")

    return float(c / (c + np.sum((x - y) ** 2)))


def default_kernel_c(dim: int, sigma_prior: float = 1.0) -> float:
    return 2.0 * dim * sigma_prior**2


def imq_kernel_matrix(x: Tensor, y: Tensor, c: float) -> Tensor:
    n, d = x.shape
    m, d_y = y.shape
    if d != d_y:
        raise DimensionError(f"imq_kernel_matrix: shapes {x.shape} and {y.shape} differ")

    diff = x.reshape(n, 1, d) - y.reshape(1, m, d)
    sq_dist = diff.square().sum(axis=2)
    return c / (sq_dist + c)


def mmd_hat(
    posterior: Tensor,
    prior: Tensor,
    c: float,
    cross_coeff: MmdCrossCoeff = MmdCrossCoeff.STANDARD,
) -> Tensor:
    """Empirical MMD between posterior and prior samples under the IMQ kernel.

    Within-set terms always skip the diagonal and are scaled by 1/(N(N-1)).
    The cross term depends on `cross_coeff`, see `MmdCrossCoeff`.

    Raises:
        ContractError: fewer than two samples, unequal sample counts or c <= 0.
        DimensionError: the two sample sets disagree on dimension.
    """

    if posterior.ndim != 2 or prior.ndim != 2:
        raise DimensionError(
            f"mmd_hat needs (N, d) samples, got {posterior.shape} and {prior.shape}"
        )

    n = posterior.shape[0]
    if prior.shape[0] != n:
        raise ContractError(
            f"mmd_hat needs equal sample counts, got {n} and {prior.shape[0]}"
        )

    if n < 2:
        raise ContractError(f"mmd_hat needs at least 2 samples per side, got {n}")

    if c <= 0:
        raise ContractError(f"Kernel constant must be positive, got {c}")

    off_diagonal = 1.0 - np.eye(n, dtype=posterior.data.dtype)

    within = (imq_kernel_matrix(posterior, posterior, c) * off_diagonal).sum() + (
        imq_kernel_matrix(prior, prior, c) * off_diagonal
    ).sum()
    within = within * (1.0 / (n * (n - 1)))

    cross = imq_kernel_matrix(posterior, prior, c)
    if cross_coeff is MmdCrossCoeff.STANDARD:
        cross = (cross * off_diagonal).sum() * (2.0 / (n * (n - 1)))
    elif cross_coeff is MmdCrossCoeff.FULL:
        cross = cross.sum() * (2.0 / (n * n))
    else:
        cross = cross.sum() * (1.0 / (n * n))

    return within - cross


def kl_unit_variance(mu_post: Tensor, log_sigma_post: Tensor) -> Tensor:
    """Batch mean of KL(N(mu, diag(sigma)^2) || N(mu, I)); independent of `mu_post`."""

    if mu_post.shape != log_sigma_post.shape:
        raise DimensionError(
            f"kl_unit_variance: shapes {mu_post.shape} and {log_sigma_post.shape} differ"
        )

    batch = log_sigma_post if log_sigma_post.ndim == 2 else log_sigma_post.reshape(1, -1)
    per_row = ((batch * 2.0).exp() - batch * 2.0 - 1.0).sum(axis=1) * 0.5
    return per_row.mean()


def sample_component(
    bank: PriorBank,
    k: int,
    n: int,
    rng: np.random.Generator,
    noise: Optional[np.ndarray] = None,
) -> Tensor:
    """Draw `n` samples from component `k`; differentiable in its mean and log sigma.

    `noise`, when given, replaces the standard-normal draw (shape `(n, d)`).
    """

    component = bank[k]
    if n < 1:
        raise ContractError(f"Sample count must be >= 1, got {n}")

    if noise is None:
        noise = rng.standard_normal((n, component.dim))
    elif noise.shape != (n, component.dim):
        raise DimensionError(f"noise has shape {noise.shape}, expected {(n, component.dim)}")

    noise = np.asarray(noise, dtype=component.mu.data.dtype)
    return component.mu + component.log_sigma.exp() * noise


def mix_latent(
    samples: Union[np.ndarray, Tensor], weights: StyleWeights
) -> Union[np.ndarray, Tensor]:
    """h = sum_i w_i * h_i over one sample row per component."""

    rows = samples.shape[0]
    if rows != len(weights):
        raise ContractError(f"{rows} sample rows but {len(weights)} weights")

    if isinstance(samples, Tensor):
        w = Tensor(weights.w.reshape(1, -1), dtype=samples.data.dtype)
        return (w @ samples).reshape(samples.shape[1])

    return weights.w @ np.asarray(samples, dtype=np.float64)


def gmm_log_density(bank: PriorBank, weights: StyleWeights, z: np.ndarray) -> float:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (bank.dim,):
        raise DimensionError(f"z has shape {z.shape}, expected {(bank.dim,)}")

    if len(weights) != len(bank):
        raise ContractError(f"{len(weights)} weights for {len(bank)} components")

    log_densities = []
    for component in bank.components:
        mu = component.mu.data.astype(np.float64)
        log_sigma = component.log_sigma.data.astype(np.float64)
        standardized = (z - mu) / np.exp(log_sigma)
        log_densities.append(
            -0.5 * np.sum(standardized**2)
            - np.sum(log_sigma)
            - 0.5 * bank.dim * np.log(2.0 * np.pi)
        )

    return float(logsumexp(np.asarray(log_densities), b=weights.w))
