"""GRU encoder/decoder carrying the reconstruction loss.

The encoder maps a sentence to a diagonal Gaussian posterior (mu, log sigma).
The decoder starts from an affine image of the latent vector and appends the
latent vector to the embedding of every input token.
"""

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import softmax

from gmm_wae import tensor as T
from gmm_wae.data import BOS, EOS, PAD, SPECIAL_TOKENS, Batch
from gmm_wae.exceptions import ContractError, DimensionError, VocabError
from gmm_wae.latent import PriorBank, default_kernel_c
from gmm_wae.tensor import Tensor


class PriorMode(str, Enum):
    GMM = "gmm"
    SINGLE = "single"


@dataclass
class ModelConfig:
    vocab_size: int
    num_classes: int
    embed_dim: int = 64
    hidden_dim: int = 128
    latent_dim: int = 100
    max_len: int = 30
    prior_mode: PriorMode = PriorMode.GMM
    prior_init_scale: float = 2.0
    kernel_c: Optional[float] = None

    def __post_init__(self):
        self.prior_mode = PriorMode(self.prior_mode)

        for name in ("vocab_size", "num_classes", "embed_dim", "hidden_dim", "latent_dim"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive, got {getattr(self, name)}")

        if self.max_len < 2:
            raise ContractError(f"max_len must be >= 2, got {self.max_len}")

        if self.vocab_size <= len(SPECIAL_TOKENS):
            raise ContractError(f"vocab_size must leave room for special tokens, got {self.vocab_size}")

        if self.kernel_c is not None and self.kernel_c <= 0:
            raise ContractError(f"kernel_c must be positive, got {self.kernel_c}")

    @property
    def kernel_constant(self) -> float:
        return self.kernel_c if self.kernel_c is not None else default_kernel_c(self.latent_dim)

    @property
    def num_components(self) -> int:
        return 1 if self.prior_mode is PriorMode.SINGLE else self.num_classes

    def to_dict(self) -> dict:
        data = asdict(self)
        data["prior_mode"] = self.prior_mode.value
        return data

    @staticmethod
    def from_dict(data: dict) -> "ModelConfig":
        return ModelConfig(**data)


def _uniform(rng: np.random.Generator, shape: tuple, bound: float, name: str) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


@dataclass
class Affine:
    w: Tensor
    b: Tensor

    @staticmethod
    def initialize(in_dim: int, out_dim: int, rng: np.random.Generator, name: str) -> "Affine":
        bound = 1.0 / np.sqrt(in_dim)
        return Affine(
            _uniform(rng, (in_dim, out_dim), bound, f"{name}.w"),
            _uniform(rng, (out_dim,), bound, f"{name}.b"),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


@dataclass
class GRUParams:
    w_z: Tensor
    b_z: Tensor
    w_r: Tensor
    b_r: Tensor
    w_h: Tensor
    b_h: Tensor

    @staticmethod
    def initialize(
        input_dim: int, hidden_dim: int, rng: np.random.Generator, name: str
    ) -> "GRUParams":
        bound = 1.0 / np.sqrt(hidden_dim)
        shape = (input_dim + hidden_dim, hidden_dim)
        return GRUParams(
            _uniform(rng, shape, bound, f"{name}.w_z"),
            _uniform(rng, (hidden_dim,), bound, f"{name}.b_z"),
            _uniform(rng, shape, bound, f"{name}.w_r"),
            _uniform(rng, (hidden_dim,), bound, f"{name}.b_r"),
            _uniform(rng, shape, bound, f"{name}.w_h"),
            _uniform(rng, (hidden_dim,), bound, f"{name}.b_h"),
        )

    @property
    def hidden_dim(self) -> int:
        return self.w_z.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_z.shape[0] - self.hidden_dim

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.{name}": getattr(self, name)
            for name in ("w_z", "b_z", "w_r", "b_r", "w_h", "b_h")
        }


def gru_step(params: GRUParams, x: Tensor, h: Tensor) -> Tensor:
    """One GRU update; accepts single vectors or (batch, features) rows."""

    single = x.ndim == 1
    if single:
        x, h = x.reshape(1, -1), h.reshape(1, -1)

    if x.shape[1] != params.input_dim or h.shape[1] != params.hidden_dim:
        raise DimensionError(
            f"gru_step expects input {params.input_dim} and hidden {params.hidden_dim}, "
            f"got {x.shape} and {h.shape}"
        )

    if x.shape[0] != h.shape[0]:
        raise DimensionError(f"gru_step: batch sizes {x.shape[0]} and {h.shape[0]} differ")

    xh = T.concat([x, h], axis=1)
    z = (xh @ params.w_z + params.b_z).sigmoid()
    r = (xh @ params.w_r + params.b_r).sigmoid()
    h_tilde = (T.concat([x, r * h], axis=1) @ params.w_h + params.b_h).tanh()
    h_next = (1.0 - z) * h + z * h_tilde

    return h_next.reshape(-1) if single else h_next


@dataclass
class Seq2SeqModel:
    config: ModelConfig
    embedding: Tensor
    encoder: GRUParams
    to_mu: Affine
    to_log_sigma: Affine
    latent_to_hidden: Affine
    decoder: GRUParams
    output: Affine
    prior: PriorBank

    @staticmethod
    def initialize(config: ModelConfig, rng: np.random.Generator) -> "Seq2SeqModel":
        embedding = Tensor(
            rng.standard_normal((config.vocab_size, config.embed_dim)) * 0.1,
            requires_grad=True,
            name="embedding",
        )
        encoder = GRUParams.initialize(config.embed_dim, config.hidden_dim, rng, "encoder")
        to_mu = Affine.initialize(config.hidden_dim, config.latent_dim, rng, "to_mu")
        to_log_sigma = Affine.initialize(
            config.hidden_dim, config.latent_dim, rng, "to_log_sigma"
        )
        latent_to_hidden = Affine.initialize(
            config.latent_dim, config.hidden_dim, rng, "latent_to_hidden"
        )
        decoder = GRUParams.initialize(
            config.embed_dim + config.latent_dim, config.hidden_dim, rng, "decoder"
        )
        output = Affine.initialize(config.hidden_dim, config.vocab_size, rng, "output")

        if config.prior_mode is PriorMode.SINGLE:
            prior = PriorBank.standard_normal(config.latent_dim)
        else:
            prior = PriorBank.initialize(
                config.num_classes, config.latent_dim, rng, config.prior_init_scale
            )

        return Seq2SeqModel(
            config,
            embedding,
            encoder,
            to_mu,
            to_log_sigma,
            latent_to_hidden,
            decoder,
            output,
            prior,
        )

    def network_parameters(self) -> dict[str, Tensor]:
        named = {"embedding": self.embedding}
        named.update(self.encoder.named_parameters("encoder"))
        named.update(self.to_mu.named_parameters("to_mu"))
        named.update(self.to_log_sigma.named_parameters("to_log_sigma"))
        named.update(self.latent_to_hidden.named_parameters("latent_to_hidden"))
        named.update(self.decoder.named_parameters("decoder"))
        named.update(self.output.named_parameters("output"))
        return named

    def named_parameters(self) -> dict[str, Tensor]:
        named = self.network_parameters()
        named.update(self.prior.named_parameters())
        return named

    def component_for(self, label: int) -> int:
        """Prior component trained and sampled for class `label`."""

        if not 0 <= label < self.config.num_classes:
            raise IndexError(f"Class {label} out of range for {self.config.num_classes} classes")

        return 0 if self.config.prior_mode is PriorMode.SINGLE else label


def _check_ids(model: Seq2SeqModel, ids: np.ndarray):
    if ids.size and (ids.min() < 0 or ids.max() >= model.config.vocab_size):
        raise VocabError(
            f"Token ids must be in [0, {model.config.vocab_size}), "
            f"got [{ids.min()}, {ids.max()}]"
        )


def encode_batch(model: Seq2SeqModel, batch: Batch) -> tuple[Tensor, Tensor]:
    """Posterior (mu, log sigma) rows for every sentence of `batch`."""

    ids, lengths = batch.ids, batch.lengths
    _check_ids(model, ids)

    if lengths.max() > model.config.max_len:
        raise ContractError(
            f"Sentence of length {lengths.max()} exceeds max_len {model.config.max_len}"
        )

    dtype = model.embedding.data.dtype
    h = Tensor(np.zeros((len(batch), model.config.hidden_dim)), dtype=dtype)

    for t in range(1, int(lengths.max()) + 1):
        x = T.embedding(model.embedding, ids[:, t])
        h_next = gru_step(model.encoder, x, h)

        active = (lengths >= t).astype(dtype)[:, None]
        if active.all():
            h = h_next
        else:
            h = h_next * active + h * (1.0 - active)

    return model.to_mu(h), model.to_log_sigma(h)


def encode(model: Seq2SeqModel, tokens: Sequence[int]) -> tuple[Tensor, Tensor]:
    if len(tokens) == 0:
        raise ContractError("Cannot encode an empty sequence")

    if len(tokens) > model.config.max_len:
        raise ContractError(
            f"Sequence of length {len(tokens)} exceeds max_len {model.config.max_len}"
        )

    _check_ids(model, np.asarray(tokens))
    mu, log_sigma = encode_batch(model, Batch.from_sequences([0], [list(tokens)]))
    return mu.reshape(-1), log_sigma.reshape(-1)


def reparameterize(
    mu_post: Tensor,
    log_sigma_post: Tensor,
    rng: Optional[np.random.Generator],
    noise: Optional[np.ndarray] = None,
) -> Tensor:
    """h = mu + exp(log sigma) * eps; `noise` overrides the draw of eps."""

    if noise is None:
        noise = rng.standard_normal(mu_post.shape)
    elif noise.shape != mu_post.shape:
        raise DimensionError(f"noise has shape {noise.shape}, expected {mu_post.shape}")

    noise = np.asarray(noise, dtype=mu_post.data.dtype)
    return mu_post + log_sigma_post.exp() * noise


def decode_teacher_forced(
    model: Seq2SeqModel, h: Tensor, ids: Union[np.ndarray, Sequence[int]]
) -> Tensor:
    """Mean per-token negative log-likelihood of `ids` given latent `h`.

    `ids` rows start with BOS, contain EOS, and are PAD-padded after it.
    """

    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    if h.ndim == 1:
        h = h.reshape(1, -1)

    _check_ids(model, ids)

    if ids.shape[0] != h.shape[0] or h.shape[1] != model.config.latent_dim:
        raise DimensionError(f"Latent rows {h.shape} do not match token rows {ids.shape}")

    if np.any(ids[:, 0] != BOS) or not np.all(np.any(ids == EOS, axis=1)):
        raise ContractError("Every row must start with BOS and contain EOS")

    if ids.shape[1] - 2 > model.config.max_len:
        raise ContractError(
            f"Sequence of length {ids.shape[1] - 2} exceeds max_len {model.config.max_len}"
        )

    state = model.latent_to_hidden(h)
    states = []
    for t in range(ids.shape[1] - 1):
        x = T.concat([T.embedding(model.embedding, ids[:, t]), h], axis=1)
        state = gru_step(model.decoder, x, state)
        states.append(state)

    logits = model.output(T.concat(states, axis=0))
    targets = ids[:, 1:].T.reshape(-1)
    mask = targets != PAD

    losses = T.softmax_cross_entropy(logits, targets, mask)
    return losses.sum() * (1.0 / mask.sum())


def decode_sample(
    model: Seq2SeqModel,
    h: Union[Tensor, np.ndarray],
    temperature: float,
    rng: Optional[np.random.Generator],
    max_len: Optional[int] = None,
) -> list[int]:
    """Autoregressive generation from BOS; temperature 0 decodes greedily.

    Ties in greedy decoding go to the lowest token id. PAD and BOS are never
    emitted. The returned ids exclude the terminating EOS.
    """

    if temperature < 0:
        raise ContractError(f"temperature must be >= 0, got {temperature}")

    max_len = model.config.max_len if max_len is None else max_len
    dtype = model.embedding.data.dtype

    h = h.detach() if isinstance(h, Tensor) else Tensor(h, dtype=dtype)
    if h.shape != (model.config.latent_dim,):
        raise DimensionError(f"Latent has shape {h.shape}, expected {(model.config.latent_dim,)}")

    h_row = h.reshape(1, -1)
    state = model.latent_to_hidden(h_row)
    token = BOS
    generated = []

    for _ in range(max_len):
        x = T.concat([T.embedding(model.embedding, np.array([token])), h_row], axis=1)
        state = gru_step(model.decoder, x, state)
        logits = model.output(state).data[0].astype(np.float64)
        logits[[PAD, BOS]] = -np.inf

        if temperature == 0:
            token = int(np.argmax(logits))
        else:
            probs = softmax(logits / temperature)
            token = int(rng.choice(probs.size, p=probs / probs.sum()))

        if token == EOS:
            break
        generated.append(token)

    return generated
