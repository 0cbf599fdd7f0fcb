import logging
from typing import Sequence

import numpy as np
from sklearn.feature_extraction.text import CountVectorizer
from sklearn.linear_model import LogisticRegression

from gmm_wae.exceptions import ContractError
from gmm_wae.module import ModuleHelper

logger = logging.getLogger(__name__)


class StyleClassifier:
    """Bag-of-n-gram multinomial logistic regression over whitespace tokens.

    `predict` always returns a probability vector over all `num_classes`
    classes; classes absent from the training data get probability 0.
    """

    def __init__(
        self,
        num_classes: int,
        ngram_range: tuple[int, int] = (1, 2),
        C: float = 10.0,
        max_iter: int = 200,
        tol: float = 1e-4,
    ):
        if num_classes < 2:
            raise ContractError(f"A style classifier needs >= 2 classes, got {num_classes}")

        self.num_classes = num_classes
        self.vectorizer = CountVectorizer(
            ngram_range=ngram_range,
            tokenizer=str.split,
            lowercase=False,
            token_pattern=None,
        )
        self.model = LogisticRegression(C=C, max_iter=max_iter, tol=tol)
        self.is_fitted = False

    def fit(self, sentences: Sequence[str], labels: Sequence[int]) -> "StyleClassifier":
        if len(sentences) != len(labels) or not sentences:
            raise ContractError(
                f"Need one label per sentence, got {len(sentences)} sentences "
                f"and {len(labels)} labels"
            )

        labels = np.asarray(labels, dtype=np.int64)
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise IndexError(f"Labels must be in [0, {self.num_classes})")

        present, counts = np.unique(labels, return_counts=True)
        if present.size < 2:
            raise ContractError("Cannot train a style classifier on a single class")

        if counts.min() < 10:
            logger.warning("Some classes have fewer than 10 training sentences: %s", counts.tolist())

        try:
            features = self.vectorizer.fit_transform(sentences)
        except ValueError as e:
            raise ContractError(f"No usable features in the training sentences: {e}")

        self.model.fit(features, labels)
        self.is_fitted = True

        logger.info(
            "Trained style classifier on %d sentences, %d features",
            len(sentences),
            features.shape[1],
        )
        return self

    @ModuleHelper.fitted
    def predict_proba(self, sentences: Sequence[str]) -> np.ndarray:
        probs = np.zeros((len(sentences), self.num_classes))
        if not sentences:
            return probs

        features = self.vectorizer.transform(sentences)
        probs[:, self.model.classes_] = self.model.predict_proba(features)
        return probs

    @ModuleHelper.fitted
    def predict(self, sentence: str) -> np.ndarray:
        return self.predict_proba([sentence])[0]

    @ModuleHelper.fitted
    def predict_labels(self, sentences: Sequence[str]) -> np.ndarray:
        return np.argmax(self.predict_proba(sentences), axis=1)

    @ModuleHelper.fitted
    def accuracy(self, sentences: Sequence[str], labels: Sequence[int]) -> float:
        if not sentences:
            raise ContractError("Accuracy of an empty sample is undefined")

        return float(np.mean(self.predict_labels(sentences) == np.asarray(labels)))
