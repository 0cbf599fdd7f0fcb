import functools
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import requests

from gmm_wae.checkpoint import Checkpoints
from gmm_wae.data import LabeledCorpus, Vocab
from gmm_wae.download import DEFAULT_EXCLUDED_GENRES, MnliImport
from gmm_wae.generation import GenerationRequest, Generator, SampleMode
from gmm_wae.latent import StyleWeights
from gmm_wae.model import ModelConfig, Seq2SeqModel
from gmm_wae.module import WAEModule
from gmm_wae.report import ALL_METRICS, Evaluator, Metric, MetricReport
from gmm_wae.trainer import TrainConfig, Trainer, TrainHistory


class StyleWAE(WAEModule):
    def __init__(self, train_config: Optional[TrainConfig] = None, request_timeout=30):
        """Initialize a `StyleWAE` without a model.

        Args:
            train_config (TrainConfig, optional): Loss weights, optimizer and batching
                settings. Its seed also seeds model initialization. Defaults to `TrainConfig()`.
            request_timeout (int, optional): Timeout in seconds of HTTP requests made
                by `fetch_mnli`. Defaults to `30`.
        """

        self.model = None
        self.vocab = None
        self.class_names = []
        self.train_config = train_config or TrainConfig()
        self.optimizer = None
        self.history = TrainHistory()
        self.rng = np.random.default_rng(self.train_config.seed)

        self.session = requests.session()
        self.session.request = functools.partial(
            self.session.request, timeout=request_timeout
        )

    @classmethod
    def from_checkpoint(cls, directory: Union[str, Path], request_timeout=30) -> "StyleWAE":
        """Restore a `StyleWAE` saved with `StyleWAE.save`.

        Args:
            directory (Union[str, Path]): Checkpoint directory holding `model.bin`.
            request_timeout (int, optional): See `StyleWAE.__init__`.

        Returns:
            StyleWAE: The restored model with its vocabulary, optimizer state,
            loss history and random state.
        """

        wae = cls(request_timeout=request_timeout)
        Checkpoints(wae).load(directory)
        return wae

    def build_model(self, vocab: Vocab, class_names: Sequence[str], model_config: ModelConfig) -> Seq2SeqModel:
        """Create a freshly initialized model, discarding any previous one.

        Args:
            vocab (Vocab): Vocabulary shared by the model and its outputs.
            class_names (Sequence[str]): Style names in class-index order.
            model_config (ModelConfig): Architecture and prior settings.

        Returns:
            Seq2SeqModel: The new model.
        """

        self.vocab = vocab
        self.class_names = list(class_names)
        self.history = TrainHistory()
        return Trainer(self).build_model(model_config)

    def fit(
        self,
        corpus: LabeledCorpus,
        vocab: Optional[Vocab] = None,
        model_config: Optional[ModelConfig] = None,
        progress: bool = False,
    ) -> TrainHistory:
        """Train for `train_config.epochs` epochs, building a model first if there is none.

        Args:
            corpus (LabeledCorpus): Encoded training sentences.
            vocab (Vocab, optional): Needed only when no model exists yet.
            model_config (ModelConfig, optional): Used when no model exists yet.
                Defaults to `ModelConfig` sized by `vocab` and `corpus`.
            progress (bool, optional): Show a progress bar. Defaults to `False`.

        Returns:
            TrainHistory: Loss breakdown of every step trained so far.
        """

        if self.model is None:
            config = model_config or ModelConfig(
                len(vocab), corpus.num_classes, max_len=corpus.max_len
            )
            self.build_model(vocab, corpus.class_names, config)

        return Trainer(self).fit(corpus, progress)

    def generate(self, request: GenerationRequest) -> list[str]:
        """Generate sentences for a style-weight request.

        Args:
            request (GenerationRequest): Weights, count, temperature, seed and sample mode.

        Returns:
            list[str]: `request.count` whitespace-joined sentences.
        """

        return Generator(self).generate(request)

    def generate_conditioned(
        self, k: int, count: int = 1, temperature: float = 1.0, seed: int = 0
    ) -> list[str]:
        """Generate sentences in the style of class `k`."""

        weights = StyleWeights.one_hot(k, len(self.class_names))
        return self.generate(GenerationRequest(weights, count, temperature, seed))

    def generate_interpolated(
        self,
        weights: StyleWeights,
        count: int = 1,
        temperature: float = 1.0,
        seed: int = 0,
        sample_mode: SampleMode = SampleMode.AVERAGE,
    ) -> list[str]:
        """Generate sentences from a weighted blend of styles."""

        return self.generate(GenerationRequest(weights, count, temperature, seed, sample_mode))

    def evaluate(
        self,
        corpus: LabeledCorpus,
        metrics: Sequence[Metric] = ALL_METRICS,
        samples_per_row: int = 200,
        temperature: float = 1.0,
        seed: int = 0,
        sample_mode: SampleMode = SampleMode.AVERAGE,
        progress: bool = False,
    ) -> MetricReport:
        """Measure style control, diversity and fluency of the model's generations.

        Args:
            corpus (LabeledCorpus): Real sentences encoded with this model's vocabulary.
                A seeded split of it trains the style classifier and the trigram model.
            metrics (Sequence[Metric], optional): Metrics to compute. Defaults to all.
            samples_per_row (int, optional): Generations per report row. Defaults to `200`.
            temperature (float, optional): Sampling temperature. Defaults to `1.0`.
            seed (int, optional): Seed of the split and of the generations. Defaults to `0`.
            sample_mode (SampleMode, optional): How interpolated latents are drawn.

        Returns:
            MetricReport: One row per class and per class pair, plus a summary.
        """

        return Evaluator(self).evaluate(
            corpus,
            metrics,
            samples_per_row,
            temperature,
            seed,
            self.train_config.holdout_fraction,
            sample_mode,
            progress,
        )

    def save(self, directory: Union[str, Path]) -> Path:
        """Write `model.bin`, `vocab.tsv` and `history.csv` into `directory`."""

        return Checkpoints(self).save(directory)

    def fetch_mnli(
        self,
        url: str,
        out: Union[str, Path],
        genres: Optional[Sequence[str]] = None,
        exclude: Sequence[str] = DEFAULT_EXCLUDED_GENRES,
    ) -> int:
        """Download MultiNLI and write its premises as a genre-labeled corpus.

        Args:
            url (str): Location of the MultiNLI `.jsonl` file or `.zip` archive.
            out (Union[str, Path]): Output corpus path.
            genres (Sequence[str], optional): Genres to keep. Defaults to all.
            exclude (Sequence[str], optional): Genres to drop. Defaults to `("slate",)`.

        Returns:
            int: Number of sentences written.
        """

        return MnliImport(self).fetch(url, out, genres, exclude)
