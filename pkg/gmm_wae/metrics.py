"""Corpus-level text metrics: diversity, unigram entropy, trigram Kneser-Ney
perplexity and Jensen-Shannon divergence between probability vectors.

Sentences are token lists throughout.
"""

import logging
import math
from collections import Counter, defaultdict
from typing import Iterable, Sequence

import numpy as np
from nltk.util import ngrams
from scipy.stats import entropy

from gmm_wae.data import SPECIAL_TOKENS, UNK
from gmm_wae.exceptions import ContractError, UndefinedMetricError
from gmm_wae.module import ModuleHelper

logger = logging.getLogger(__name__)

SENTENCE_START = "<s>"
SENTENCE_END = "</s>"
UNKNOWN = SPECIAL_TOKENS[UNK]

_STRUCTURAL_TOKENS = {token for i, token in enumerate(SPECIAL_TOKENS) if i != UNK}


def distinct_n(sentences: Iterable[Sequence[str]], n: int) -> float:
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")

    counter = Counter()
    for sentence in sentences:
        counter.update(ngrams(sentence, n))

    total = sum(counter.values())
    if total == 0:
        raise UndefinedMetricError(f"No {n}-grams in the corpus")

    return len(counter) / total


def unigram_entropy(sentences: Iterable[Sequence[str]]) -> float:
    """Shannon entropy in bits of the pooled unigram distribution."""

    counter = Counter(
        token
        for sentence in sentences
        for token in sentence
        if token not in _STRUCTURAL_TOKENS
    )
    if not counter:
        raise UndefinedMetricError("Entropy of an empty corpus is undefined")

    return float(entropy(np.fromiter(counter.values(), dtype=np.float64), base=2))


def _check_simplex(p: np.ndarray, name: str):
    if p.ndim != 1 or p.size == 0:
        raise ContractError(f"{name} must be a non-empty vector, got shape {p.shape}")

    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ContractError(f"{name} must be finite and >= 0, got {p.tolist()}")

    if abs(p.sum() - 1.0) > 1e-6:
        raise ContractError(f"{name} must sum to 1, got {p.sum():.6f}")


def jsd(p: Sequence[float], q: Sequence[float]) -> float:
    """Jensen-Shannon divergence in bits, within [0, 1]."""

    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _check_simplex(p, "p")
    _check_simplex(q, "q")

    if p.shape != q.shape:
        raise ContractError(f"p and q differ in length: {p.size} and {q.size}")

    m = 0.5 * (p + q)
    value = 0.5 * entropy(p, m, base=2) + 0.5 * entropy(q, m, base=2)
    return float(min(max(value, 0.0), 1.0))


class TrigramKN:
    """Interpolated Kneser-Ney trigram model with a fixed absolute discount.

    Each sentence is padded as `<s> <s> w1 ... wn </s>`. The bigram and unigram
    levels use continuation counts; the unigram level is further interpolated
    with a uniform distribution over the vocabulary so that every token has
    non-zero probability. Tokens unseen during `fit` are scored as `<unk>`.
    """

    def __init__(self, discount: float = 0.75):
        if not 0 < discount < 1:
            raise ContractError(f"discount must be in (0, 1), got {discount}")

        self.discount = discount
        self.is_fitted = False

    def fit(self, sentences: Iterable[Sequence[str]]) -> "TrigramKN":
        trigrams = Counter()
        sentence_count = 0
        vocabulary = {SENTENCE_END, UNKNOWN}

        for sentence in sentences:
            vocabulary.update(sentence)
            padded = [SENTENCE_START, SENTENCE_START, *sentence, SENTENCE_END]
            trigrams.update(ngrams(padded, 3))
            sentence_count += 1

        if sentence_count == 0:
            raise ContractError("Cannot fit a language model on an empty corpus")

        vocabulary.discard(SENTENCE_START)

        # c(u v .) and N1+(u v .)
        self.context_counts = Counter()
        self.context_types = Counter()
        # N1+(. v w)
        bigram_continuations = Counter()
        for (u, v, w), count in trigrams.items():
            self.context_counts[(u, v)] += count
            self.context_types[(u, v)] += 1
            bigram_continuations[(v, w)] += 1

        # N1+(. v .) and N1+(v .)
        self.middle_totals = Counter()
        self.middle_types = Counter()
        # N1+(. w)
        self.unigram_continuations = Counter()
        for (v, w), count in bigram_continuations.items():
            self.middle_totals[v] += count
            self.middle_types[v] += 1
            self.unigram_continuations[w] += 1

        self.trigrams = trigrams
        self.bigram_continuations = bigram_continuations
        self.bigram_types = len(bigram_continuations)
        self.vocab = vocabulary
        self.is_fitted = True

        logger.info(
            "Fitted trigram KN model on %d sentences: %d trigram types, %d word types",
            sentence_count,
            len(trigrams),
            len(vocabulary),
        )
        return self

    def __map(self, token: str) -> str:
        return token if token in self.vocab or token == SENTENCE_START else UNKNOWN

    def __unigram(self, w: str) -> float:
        d = self.discount
        continuation = max(self.unigram_continuations[w] - d, 0.0) / self.bigram_types
        backoff = d * len(self.unigram_continuations) / self.bigram_types
        return continuation + backoff / len(self.vocab)

    def __bigram(self, v: str, w: str) -> float:
        total = self.middle_totals[v]
        if total == 0:
            return self.__unigram(w)

        d = self.discount
        discounted = max(self.bigram_continuations[(v, w)] - d, 0.0) / total
        return discounted + d * self.middle_types[v] / total * self.__unigram(w)

    @ModuleHelper.fitted
    def prob(self, word: str, context: tuple[str, str]) -> float:
        """p(word | context) for a two-token context."""

        if len(context) != 2:
            raise ContractError(f"A trigram context has two tokens, got {len(context)}")

        u, v = (self.__map(token) for token in context)
        w = self.__map(word)

        count = self.context_counts[(u, v)]
        if count == 0:
            return self.__bigram(v, w)

        d = self.discount
        discounted = max(self.trigrams[(u, v, w)] - d, 0.0) / count
        return discounted + d * self.context_types[(u, v)] / count * self.__bigram(v, w)

    @ModuleHelper.fitted
    def vocabulary(self) -> list[str]:
        return sorted(self.vocab)

    @ModuleHelper.fitted
    def log_likelihood(self, sentence: Sequence[str]) -> tuple[float, int]:
        """Natural-log likelihood of a sentence and the number of predicted tokens."""

        padded = [SENTENCE_START, SENTENCE_START, *sentence, SENTENCE_END]
        total = 0.0
        for u, v, w in ngrams(padded, 3):
            total += math.log(self.prob(w, (u, v)))
        return total, len(padded) - 2

    @ModuleHelper.fitted
    def perplexity(self, sentences: Iterable[Sequence[str]]) -> float:
        total, tokens = 0.0, 0
        for sentence in sentences:
            log_likelihood, count = self.log_likelihood(sentence)
            total += log_likelihood
            tokens += count

        if tokens == 0:
            raise UndefinedMetricError("Perplexity of an empty corpus is undefined")

        return math.exp(-total / tokens)
