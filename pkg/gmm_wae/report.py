import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from gmm_wae.classifier import StyleClassifier
from gmm_wae.data import LabeledCorpus, Vocab
from gmm_wae.exceptions import ContractError, UndefinedMetricError
from gmm_wae.generation import SampleMode, generate_interpolated
from gmm_wae.latent import StyleWeights
from gmm_wae.metrics import TrigramKN, distinct_n, jsd, unigram_entropy
from gmm_wae.model import Seq2SeqModel
from gmm_wae.module import Module, ModuleHelper

logger = logging.getLogger(__name__)


class Metric(str, Enum):
    DISTINCT = "distinct"
    ENTROPY = "entropy"
    PPL = "ppl"
    ACCURACY = "accuracy"
    JSD = "jsd"


ALL_METRICS = list(Metric)


@dataclass
class ReportRow:
    weights: StyleWeights
    percentages: np.ndarray
    jsd: float
    top1_in_source: float
    samples: int

    @property
    def classes(self) -> list[int]:
        return self.weights.active()

    @property
    def conditioned(self) -> bool:
        return len(self.classes) == 1


@dataclass
class CorpusSummary:
    distinct_1: Optional[float] = None
    distinct_2: Optional[float] = None
    entropy: Optional[float] = None
    perplexity: Optional[float] = None
    real_perplexity: Optional[float] = None
    accuracy: Optional[float] = None
    classifier_accuracy: Optional[float] = None

    def items(self) -> list[tuple[str, Optional[float]]]:
        return list(self.__dict__.items())


@dataclass
class MetricReport:
    class_names: list[str]
    rows: list[ReportRow] = field(default_factory=list)
    summary: CorpusSummary = field(default_factory=CorpusSummary)

    def __sampled_label(self, row: ReportRow) -> str:
        return " + ".join(self.class_names[k] for k in row.classes)

    def header(self) -> list[str]:
        return ["sampled", "weights", *self.class_names, "top1_in_source", "jsd"]

    def table_rows(self) -> list[list[str]]:
        return [
            [
                self.__sampled_label(row),
                ",".join(f"{w:g}" for w in row.weights.w),
                *(f"{p:.1f}" for p in row.percentages),
                f"{row.top1_in_source * 100:.1f}",
                f"{row.jsd:.4f}",
            ]
            for row in self.rows
        ]

    def to_csv(self, path: Union[str, Path]):
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(self.header())
            writer.writerows(self.table_rows())

    def summary_to_csv(self, path: Union[str, Path]):
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow([name for name, _ in self.summary.items()])
            writer.writerow(["" if value is None else value for _, value in self.summary.items()])

    def to_table(self) -> str:
        lines = []

        if self.rows:
            header = self.header()
            body = self.table_rows()
            widths = [max(len(cell) for cell in column) for column in zip(header, *body)]

            def render(cells: Sequence[str]) -> str:
                first = cells[0].ljust(widths[0])
                rest = (cell.rjust(width) for cell, width in zip(cells[1:], widths[1:]))
                return "  ".join([first, *rest])

            lines.append(render(header))
            lines.append("  ".join("-" * width for width in widths))
            lines.extend(render(cells) for cells in body)
            lines.append("")

        for name, value in self.summary.items():
            if value is not None:
                lines.append(f"{name:<20} {value:.4f}")

        return "\n".join(lines) + "\n"

    def save(self, path: Union[str, Path]) -> list[Path]:
        """Write the rows CSV at `path`, plus `<stem>_summary.csv` and `<stem>.txt`."""

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)

        summary_path = path.with_name(f"{path.stem}_summary.csv")
        table_path = path.with_suffix(".txt")

        self.to_csv(path)
        self.summary_to_csv(summary_path)
        table_path.write_text(self.to_table(), encoding="utf-8")

        logger.info("Wrote metric report to %s", path)
        return [path, summary_path, table_path]


def report_weights(num_classes: int) -> list[StyleWeights]:
    """One-hot rows for every class, then (0.5, 0.5) rows for every class pair."""

    rows = [StyleWeights.one_hot(k, num_classes) for k in range(num_classes)]
    for i, j in itertools.combinations(range(num_classes), 2):
        rows.append(StyleWeights.from_pairs([i, j], [0.5, 0.5], num_classes))
    return rows


def score_row(
    clf: StyleClassifier, weights: StyleWeights, sentences: Sequence[str]
) -> ReportRow:
    if not sentences:
        raise ContractError("A report row needs at least one sample")

    probs = clf.predict_proba(sentences)
    mean = probs.mean(axis=0)
    mean = mean / mean.sum()

    top1 = np.argmax(probs, axis=1)
    top1_in_source = float(np.mean(np.isin(top1, weights.active())))

    return ReportRow(weights, mean * 100.0, jsd(weights.w, mean), top1_in_source, len(sentences))


def style_report(
    model: Seq2SeqModel,
    vocab: Vocab,
    clf: Optional[StyleClassifier],
    rows: Sequence[StyleWeights],
    samples_per_row: int,
    rng: np.random.Generator,
    temperature: float = 1.0,
    sample_mode: SampleMode = SampleMode.AVERAGE,
    progress: bool = False,
) -> tuple[list[ReportRow], list[list[list[str]]]]:
    """Score generations of every weight row with the classifier.

    Returns the scored rows (empty without a classifier) and, per row, the
    generated token lists.
    """

    if samples_per_row < 1:
        raise ContractError(f"samples_per_row must be >= 1, got {samples_per_row}")

    if clf is not None and clf.num_classes != model.config.num_classes:
        raise ContractError(
            f"Classifier covers {clf.num_classes} classes, model {model.config.num_classes}"
        )

    scored, generated = [], []
    for weights in tqdm(rows, desc="report rows", disable=not progress, leave=False):
        ids = generate_interpolated(
            model, weights, samples_per_row, temperature, rng, sample_mode
        )
        tokens = [vocab.decode(sentence) for sentence in ids]
        generated.append(tokens)

        if clf is not None:
            scored.append(score_row(clf, weights, [" ".join(t) for t in tokens]))

    return scored, generated


def _safe(metric, *args) -> float:
    try:
        return metric(*args)
    except UndefinedMetricError as e:
        logger.warning("%s", e)
        return math.nan


class Evaluator(Module):
    @ModuleHelper.trained
    def evaluate(
        self,
        corpus: LabeledCorpus,
        metrics: Sequence[Metric] = ALL_METRICS,
        samples_per_row: int = 200,
        temperature: float = 1.0,
        seed: int = 0,
        holdout_fraction: float = 0.1,
        sample_mode: SampleMode = SampleMode.AVERAGE,
        progress: bool = False,
    ) -> MetricReport:
        """Generate from every conditioned and pairwise row and measure `metrics`.

        The classifier and the trigram model are trained on the training part
        of a seeded split of `corpus`; the held-out part gives the real-sentence
        baselines.
        """

        model, vocab = self.wae.model, self.wae.vocab
        metrics = set(metrics)
        rng = np.random.default_rng(seed)

        train, held_out = corpus.split(holdout_fraction, rng)
        train_texts = train.texts(vocab)
        held_out_texts = held_out.texts(vocab)

        report = MetricReport(list(self.wae.class_names))
        summary = report.summary
        rows = report_weights(model.config.num_classes)

        clf = None
        if metrics & {Metric.ACCURACY, Metric.JSD}:
            clf = StyleClassifier(model.config.num_classes).fit(
                [" ".join(tokens) for _, tokens in train_texts],
                [label for label, _ in train_texts],
            )
            summary.classifier_accuracy = clf.accuracy(
                [" ".join(tokens) for _, tokens in held_out_texts],
                [label for label, _ in held_out_texts],
            )

        report.rows, generated = style_report(
            model,
            vocab,
            clf,
            rows,
            samples_per_row,
            rng,
            temperature,
            sample_mode,
            progress,
        )

        # pooled conditioned generations
        pooled = [
            tokens
            for weights, row_tokens in zip(rows, generated)
            if len(weights.active()) == 1
            for tokens in row_tokens
        ]

        if Metric.DISTINCT in metrics:
            summary.distinct_1 = _safe(distinct_n, pooled, 1)
            summary.distinct_2 = _safe(distinct_n, pooled, 2)

        if Metric.ENTROPY in metrics:
            summary.entropy = _safe(unigram_entropy, pooled)

        if Metric.PPL in metrics:
            lm = TrigramKN().fit(tokens for _, tokens in train_texts)
            summary.perplexity = _safe(lm.perplexity, pooled)
            summary.real_perplexity = _safe(
                lm.perplexity, [tokens for _, tokens in held_out_texts]
            )

        if Metric.ACCURACY in metrics:
            summary.accuracy = float(
                np.mean([row.top1_in_source for row in report.rows if row.conditioned])
            )

        if Metric.JSD not in metrics:
            for row in report.rows:
                row.jsd = math.nan

        logger.info(
            "Evaluated %d rows of %d samples; %s",
            len(rows),
            samples_per_row,
            ", ".join(
                f"{name}={value:.4f}" for name, value in summary.items() if value is not None
            ),
        )
        return report
