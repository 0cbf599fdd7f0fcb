"""Binary checkpoint format.

Layout (all integers little-endian):

    b"GMWA"                   magic
    uint32                    format version
    uint32 + UTF-8 JSON       config block (model config, train config, class names)
    uint32 + UTF-8 JSON       vocabulary block (id-ordered token list)
    uint32 + UTF-8 JSON       state block (step, epoch ends, Adam step counters, RNG state)
    uint32                    tensor count
    per tensor:
        uint32 + UTF-8        name
        uint8                 float width in bytes (4 or 8)
        uint32                ndim
        ndim * uint32         dims
        raw floats            row-major data
    20 bytes                  SHA-1 of everything above
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from hashlib import sha1
from pathlib import Path
from typing import Optional, Union

import numpy as np

from gmm_wae.data import Vocab
from gmm_wae.exceptions import CheckpointFormatError, CheckpointIOError
from gmm_wae.model import ModelConfig, Seq2SeqModel
from gmm_wae.module import Module, ModuleHelper
from gmm_wae.trainer import Adam, TrainConfig, TrainHistory, trainable_parameters

logger = logging.getLogger(__name__)

MAGIC = b"GMWA"
FORMAT_VERSION = 1

MODEL_FILE = "model.bin"
VOCAB_FILE = "vocab.tsv"
HISTORY_FILE = "history.csv"

_FLOAT_TYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}
_DIGEST_SIZE = 20


@dataclass
class Checkpoint:
    model_config: ModelConfig
    vocab: Vocab
    class_names: list[str]
    parameters: dict[str, np.ndarray]
    train_config: Optional[TrainConfig] = None
    step: int = 0
    epoch_ends: list[int] = field(default_factory=list)
    adam_t: dict[str, int] = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: Optional[dict] = None

    @staticmethod
    def capture(
        model: Seq2SeqModel,
        vocab: Vocab,
        class_names: list[str],
        train_config: Optional[TrainConfig] = None,
        optimizer: Optional[Adam] = None,
        history: Optional[TrainHistory] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> "Checkpoint":
        checkpoint = Checkpoint(
            model.config,
            vocab,
            list(class_names),
            {name: p.data.copy() for name, p in model.named_parameters().items()},
            train_config=train_config,
            step=len(history) if history is not None else 0,
            epoch_ends=list(history.epoch_ends) if history is not None else [],
            rng_state=rng.bit_generator.state if rng is not None else None,
        )

        if optimizer is not None:
            checkpoint.adam_t = dict(optimizer.t)
            checkpoint.adam_m = {name: m.copy() for name, m in optimizer.m.items()}
            checkpoint.adam_v = {name: v.copy() for name, v in optimizer.v.items()}

        return checkpoint

    def build_model(self) -> Seq2SeqModel:
        model = Seq2SeqModel.initialize(self.model_config, np.random.default_rng(0))
        named = model.named_parameters()

        if set(named) != set(self.parameters):
            missing = sorted(set(named) - set(self.parameters))
            extra = sorted(set(self.parameters) - set(named))
            raise CheckpointFormatError(
                f"Parameter table does not match the model: missing {missing}, unexpected {extra}"
            )

        for name, p in named.items():
            if p.shape != self.parameters[name].shape:
                raise CheckpointFormatError(
                    f"Parameter {name} has shape {self.parameters[name].shape}, "
                    f"model expects {p.shape}"
                )
            p.data = self.parameters[name].copy()

        return model

    def build_optimizer(self, model: Seq2SeqModel) -> Adam:
        config = self.train_config or TrainConfig()
        optimizer = Adam(trainable_parameters(model, config), config.learning_rate)
        optimizer.load_state(self.adam_t, self.adam_m, self.adam_v)
        return optimizer

    def build_rng(self) -> np.random.Generator:
        rng = np.random.default_rng(self.train_config.seed if self.train_config else 0)
        if self.rng_state is not None:
            rng.bit_generator.state = self.rng_state
        return rng


def _block(payload) -> bytes:
    data = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return struct.pack("<I", len(data)) + data


def _tensor_entry(name: str, array: np.ndarray) -> bytes:
    width = array.dtype.itemsize
    if width not in _FLOAT_TYPES:
        raise CheckpointFormatError(f"Tensor {name} has unsupported dtype {array.dtype}")

    encoded_name = name.encode("utf-8")
    header = struct.pack("<I", len(encoded_name)) + encoded_name
    header += struct.pack("<BI", width, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)

    return header + np.ascontiguousarray(array, dtype=_FLOAT_TYPES[width]).tobytes()


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    config = {
        "model": checkpoint.model_config.to_dict(),
        "train": checkpoint.train_config.to_dict() if checkpoint.train_config else None,
        "class_names": checkpoint.class_names,
    }
    state = {
        "step": checkpoint.step,
        "epoch_ends": checkpoint.epoch_ends,
        "adam_t": checkpoint.adam_t,
        "rng": checkpoint.rng_state,
    }

    tensors = dict(sorted(checkpoint.parameters.items()))
    for name, m in sorted(checkpoint.adam_m.items()):
        tensors[f"adam.m.{name}"] = m
    for name, v in sorted(checkpoint.adam_v.items()):
        tensors[f"adam.v.{name}"] = v

    body = MAGIC + struct.pack("<I", FORMAT_VERSION)
    body += _block(config) + _block(checkpoint.vocab.itos) + _block(state)
    body += struct.pack("<I", len(tensors))
    body += b"".join(_tensor_entry(name, array) for name, array in tensors.items())

    return body + sha1(body).digest()


class _Reader:
    def __init__(self, buffer: bytes):
        self.buffer = buffer
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.buffer):
            raise CheckpointIOError(
                f"Checkpoint truncated: needed {size} bytes at offset {self.offset}, "
                f"{len(self.buffer) - self.offset} left"
            )

        chunk = self.buffer[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def block(self):
        (size,) = self.unpack("<I")
        try:
            return json.loads(self.take(size).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointFormatError(f"Malformed JSON block at offset {self.offset}: {e}")

    def tensor(self) -> tuple[str, np.ndarray]:
        (name_size,) = self.unpack("<I")
        name = self.take(name_size).decode("utf-8")

        width, ndim = self.unpack("<BI")
        if width not in _FLOAT_TYPES:
            raise CheckpointFormatError(f"Tensor {name} has unsupported float width {width}")

        dims = self.unpack(f"<{ndim}I")
        count = int(np.prod(dims, dtype=np.int64))
        data = self.take(count * width)

        array = np.frombuffer(data, dtype=_FLOAT_TYPES[width]).reshape(dims)
        return name, array.astype(array.dtype.newbyteorder("="))


def decode_checkpoint(buffer: bytes) -> Checkpoint:
    """Parse a whole checkpoint; nothing is built unless every check passes.

    Raises:
        CheckpointFormatError: bad magic, unsupported version, checksum mismatch
            or inconsistent content.
        CheckpointIOError: the buffer ends early.
    """

    reader = _Reader(buffer)

    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError("Not a checkpoint file (bad magic bytes)")

    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"Unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )

    config = reader.block()
    itos = reader.block()
    state = reader.block()

    (count,) = reader.unpack("<I")
    tensors = dict(reader.tensor() for _ in range(count))

    body_end = reader.offset
    digest = reader.take(_DIGEST_SIZE)
    if reader.offset != len(buffer):
        raise CheckpointFormatError(f"{len(buffer) - reader.offset} unexpected trailing bytes")

    if sha1(buffer[:body_end]).digest() != digest:
        raise CheckpointFormatError("Checkpoint checksum mismatch")

    try:
        parameters = {
            name: array for name, array in tensors.items() if not name.startswith("adam.")
        }
        adam_m = {
            name[len("adam.m.") :]: array
            for name, array in tensors.items()
            if name.startswith("adam.m.")
        }
        adam_v = {
            name[len("adam.v.") :]: array
            for name, array in tensors.items()
            if name.startswith("adam.v.")
        }

        return Checkpoint(
            ModelConfig.from_dict(config["model"]),
            Vocab(itos),
            list(config["class_names"]),
            parameters,
            train_config=TrainConfig.from_dict(config["train"]) if config["train"] else None,
            step=int(state["step"]),
            epoch_ends=[int(end) for end in state["epoch_ends"]],
            adam_t={name: int(t) for name, t in state["adam_t"].items()},
            adam_m=adam_m,
            adam_v=adam_v,
            rng_state=state["rng"],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointFormatError(f"Inconsistent checkpoint content: {e}")


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]):
    path = Path(path)
    temporary = path.with_name(path.name + f".tmp.{os.getpid()}")

    with open(temporary, "wb") as f:
        f.write(encode_checkpoint(checkpoint))
    os.replace(temporary, path)

    logger.info("Saved checkpoint (step %d) to %s", checkpoint.step, path)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    with open(path, "rb") as f:
        buffer = f.read()

    checkpoint = decode_checkpoint(buffer)
    logger.info("Loaded checkpoint (step %d) from %s", checkpoint.step, path)
    return checkpoint


class Checkpoints(Module):
    @ModuleHelper.trained
    def save(self, directory: Union[str, Path]) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)

        checkpoint = Checkpoint.capture(
            self.wae.model,
            self.wae.vocab,
            self.wae.class_names,
            self.wae.train_config,
            self.wae.optimizer,
            self.wae.history,
            self.wae.rng,
        )
        save_checkpoint(checkpoint, directory / MODEL_FILE)
        self.wae.vocab.dump(directory / VOCAB_FILE)
        self.wae.history.to_csv(directory / HISTORY_FILE)

        return directory

    def load(self, directory: Union[str, Path]):
        directory = Path(directory)
        checkpoint = load_checkpoint(directory / MODEL_FILE)

        model = checkpoint.build_model()

        self.wae.model = model
        self.wae.vocab = checkpoint.vocab
        self.wae.class_names = checkpoint.class_names
        self.wae.train_config = checkpoint.train_config or TrainConfig()
        self.wae.optimizer = checkpoint.build_optimizer(model)
        self.wae.rng = checkpoint.build_rng()

        history_path = directory / HISTORY_FILE
        if history_path.exists():
            self.wae.history = TrainHistory.from_csv(history_path, checkpoint.epoch_ends)
        else:
            self.wae.history = TrainHistory()
