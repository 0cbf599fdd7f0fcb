import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from gmm_wae.exceptions import ContractError, IngestionError, VocabError

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ["<pad>", "<bos>", "<eos>", "<unk>"]


def tokenize(sentence: str) -> list[str]:
    return sentence.lower().split()


@dataclass
class LabeledLine:
    label: str
    text: str

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.text)


@dataclass
class Vocab:
    itos: list[str]
    max_size: int = 30000
    stoi: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.itos[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise IngestionError(f"Vocabulary must start with {SPECIAL_TOKENS}")

        self.stoi = {token: i for i, token in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise IngestionError("Vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def token_id(self, token: str) -> int:
        """Id of a text token; unknown tokens and literal control names map to UNK."""

        token_id = self.stoi.get(token, UNK)
        return UNK if token_id < len(SPECIAL_TOKENS) else token_id

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.itos):
            raise VocabError(f"Token id {token_id} out of range for {len(self.itos)} tokens")
        return self.itos[token_id]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.token_id(token) for token in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        """Map ids back to tokens, skipping PAD/BOS and stopping at EOS."""

        tokens = []
        for token_id in ids:
            token_id = int(token_id)
            if token_id == EOS:
                break
            if token_id in (PAD, BOS):
                continue
            tokens.append(self.token(token_id))
        return tokens

    def dump(self, path: Union[str, Path]):
        with open(path, "w", encoding="utf-8") as f:
            for i, token in enumerate(self.itos):
                f.write(f"{i}\t{token}\n")

    @staticmethod
    def load(path: Union[str, Path]) -> "Vocab":
        itos = []
        with open(path, encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue

                token_id, _, token = line.partition("\t")
                if not token or int(token_id) != len(itos):
                    raise IngestionError(f"{path}:{line_number}: malformed vocabulary line")
                itos.append(token)

        return Vocab(itos, max_size=max(len(itos), len(SPECIAL_TOKENS)))


def build_vocab(lines: Iterable[LabeledLine], max_size: int = 30000) -> Vocab:
    """Frequency-ranked vocabulary; ties are broken lexicographically."""

    if max_size < len(SPECIAL_TOKENS):
        raise ContractError(f"max_size must be >= {len(SPECIAL_TOKENS)}, got {max_size}")

    counts = Counter()
    line_count = 0
    for line in lines:
        counts.update(line.tokens)
        line_count += 1

    if line_count == 0:
        raise IngestionError("Cannot build a vocabulary from an empty corpus")

    for special in SPECIAL_TOKENS:
        counts.pop(special, None)

    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    kept = [token for token, _ in ranked[: max_size - len(SPECIAL_TOKENS)]]

    logger.info(
        "Built vocabulary: %d of %d token types kept", len(kept), len(counts)
    )
    return Vocab(SPECIAL_TOKENS + kept, max_size=max_size)


@dataclass
class LabeledCorpus:
    sentences: list[tuple[int, list[int]]]
    class_names: list[str]
    max_len: int = 30

    def __post_init__(self):
        if not self.class_names:
            raise IngestionError("A corpus needs at least one class")

        seen = set()
        for label, ids in self.sentences:
            if not 0 <= label < len(self.class_names):
                raise IngestionError(
                    f"Class index {label} out of range for {len(self.class_names)} classes"
                )
            if not 1 <= len(ids) <= self.max_len:
                raise IngestionError(
                    f"Sentence length {len(ids)} outside [1, {self.max_len}]"
                )
            seen.add(label)

        missing = [name for i, name in enumerate(self.class_names) if i not in seen]
        if missing:
            raise IngestionError(f"Classes without sentences: {', '.join(missing)}")

    def __len__(self):
        return len(self.sentences)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def indices_by_class(self) -> list[list[int]]:
        grouped = [[] for _ in self.class_names]
        for i, (label, _) in enumerate(self.sentences):
            grouped[label].append(i)
        return grouped

    def class_sizes(self) -> list[int]:
        return [len(indices) for indices in self.indices_by_class()]

    def __select(self, indices: Iterable[int]) -> "LabeledCorpus":
        return LabeledCorpus(
            [self.sentences[i] for i in sorted(indices)], self.class_names, self.max_len
        )

    def split(
        self, holdout_fraction: float, rng: np.random.Generator
    ) -> tuple["LabeledCorpus", "LabeledCorpus"]:
        """Seeded per-class split into (train, held-out); both keep every class."""

        if not 0 < holdout_fraction < 1:
            raise ContractError(f"holdout_fraction must be in (0, 1), got {holdout_fraction}")

        train, held_out = [], []
        for name, indices in zip(self.class_names, self.indices_by_class()):
            if len(indices) < 2:
                raise IngestionError(f"Class {name!r} is too small to split")

            order = rng.permutation(indices)
            count = min(max(1, int(round(len(order) * holdout_fraction))), len(order) - 1)
            held_out.extend(order[:count].tolist())
            train.extend(order[count:].tolist())

        return self.__select(train), self.__select(held_out)

    def subset(self, per_class: int, rng: np.random.Generator) -> "LabeledCorpus":
        if per_class < 1:
            raise ContractError(f"per_class must be >= 1, got {per_class}")

        chosen = []
        for indices in self.indices_by_class():
            order = rng.permutation(indices)
            chosen.extend(order[:per_class].tolist())

        return self.__select(chosen)

    def texts(self, vocab: Vocab) -> list[tuple[int, list[str]]]:
        return [(label, vocab.decode(ids)) for label, ids in self.sentences]


def read_labeled_lines(path: Union[str, Path]) -> list[LabeledLine]:
    lines = []
    with open(path, encoding="utf-8") as f:
        for line_number, raw in enumerate(f, start=1):
            raw = raw.rstrip("\r\n")
            if not raw.strip():
                continue

            label, tab, text = raw.partition("\t")
            if not tab or not label.strip():
                raise IngestionError(
                    f"{path}:{line_number}: expected '<class_name>\\t<sentence>'"
                )

            if not tokenize(text):
                logger.warning("%s:%d: skipping empty sentence", path, line_number)
                continue

            lines.append(LabeledLine(label.strip(), text))

    if not lines:
        raise IngestionError(f"{path}: corpus is empty")

    return lines


def write_labeled_lines(lines: Iterable[LabeledLine], path: Union[str, Path]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            text = " ".join(line.text.split())
            if "\t" in line.label or not line.label:
                raise IngestionError(f"Invalid class name {line.label!r}")
            f.write(f"{line.label}\t{text}\n")
            count += 1

    logger.info("Wrote %d labeled sentences to %s", count, path)
    return count


def encode_corpus(
    lines: Sequence[LabeledLine],
    vocab: Vocab,
    max_len: int = 30,
    class_names: Optional[Sequence[str]] = None,
) -> LabeledCorpus:
    """Encode labeled lines, truncating sentences to `max_len` tokens.

    Class indices follow `class_names` when given (unknown classes are rejected),
    otherwise the sorted set of labels in `lines`.
    """

    if class_names is None:
        class_names = sorted({line.label for line in lines})
    class_index = {name: i for i, name in enumerate(class_names)}

    sentences = []
    truncated = 0
    for line in lines:
        if line.label not in class_index:
            raise IngestionError(f"Unknown class {line.label!r}")

        tokens = line.tokens
        if len(tokens) > max_len:
            tokens = tokens[:max_len]
            truncated += 1
        sentences.append((class_index[line.label], vocab.encode(tokens)))

    if truncated:
        logger.info("Truncated %d sentences to %d tokens", truncated, max_len)

    return LabeledCorpus(sentences, list(class_names), max_len)


def load_corpus(
    path: Union[str, Path],
    vocab: Optional[Vocab] = None,
    max_size: int = 30000,
    max_len: int = 30,
    class_names: Optional[Sequence[str]] = None,
) -> tuple[LabeledCorpus, Vocab]:
    lines = read_labeled_lines(path)
    if vocab is None:
        vocab = build_vocab(lines, max_size)

    corpus = encode_corpus(lines, vocab, max_len, class_names)
    logger.info(
        "Loaded %d sentences in %d classes from %s", len(corpus), corpus.num_classes, path
    )
    return corpus, vocab


@dataclass
class Batch:
    labels: np.ndarray
    ids: np.ndarray
    lengths: np.ndarray

    def __len__(self):
        return self.ids.shape[0]

    @property
    def label(self) -> int:
        """The single class of this batch."""

        unique = np.unique(self.labels)
        if unique.size != 1:
            raise ContractError(f"Batch mixes classes {unique.tolist()}")
        return int(unique[0])

    @staticmethod
    def from_sequences(labels: Sequence[int], sequences: Sequence[Sequence[int]]) -> "Batch":
        """Pad `BOS + ids + EOS` rows with PAD to a common width."""

        if not sequences or len(labels) != len(sequences):
            raise ContractError("A batch needs one label per non-empty sequence list")

        lengths = np.array([len(seq) for seq in sequences], dtype=np.int64)
        if lengths.min() < 1:
            raise ContractError("Batch sequences must be non-empty")

        ids = np.full((len(sequences), int(lengths.max()) + 2), PAD, dtype=np.int64)
        for row, seq in enumerate(sequences):
            ids[row, 0] = BOS
            ids[row, 1 : len(seq) + 1] = seq
            ids[row, len(seq) + 1] = EOS

        return Batch(np.asarray(labels, dtype=np.int64), ids, lengths)


def class_batches(
    corpus: LabeledCorpus, batch_size: int, rng: np.random.Generator
) -> Iterator[Batch]:
    """One epoch of single-class batches.

    Each class is shuffled and cut into `batch_size` chunks; the incomplete
    trailing chunk is dropped unless it is the class's only chunk (and has at
    least 2 sentences). Classes are interleaved round-robin over a shuffled
    class order.
    """

    if batch_size < 2:
        raise ContractError(f"batch_size must be >= 2, got {batch_size}")

    per_class = []
    for indices in corpus.indices_by_class():
        order = rng.permutation(indices)
        chunks = [
            order[start : start + batch_size]
            for start in range(0, len(order), batch_size)
        ]
        if len(chunks) > 1 and len(chunks[-1]) < batch_size:
            chunks.pop()
        per_class.append([chunk for chunk in chunks if len(chunk) >= 2])

    class_order = rng.permutation(corpus.num_classes)
    return _interleave(corpus, per_class, class_order)


def _interleave(
    corpus: LabeledCorpus, per_class: list[list[np.ndarray]], class_order: np.ndarray
) -> Iterator[Batch]:
    rounds = max((len(chunks) for chunks in per_class), default=0)

    for r in range(rounds):
        for label in class_order:
            chunks = per_class[label]
            if r >= len(chunks):
                continue

            chunk = chunks[r]
            yield Batch.from_sequences(
                [int(label)] * len(chunk), [corpus.sentences[i][1] for i in chunk]
            )
