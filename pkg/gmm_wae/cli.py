import argparse
import logging
import sys
from contextlib import contextmanager
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np
from colorama import Fore, Style, just_fix_windows_console

from gmm_wae import StyleWAE
from gmm_wae.data import load_corpus, write_labeled_lines
from gmm_wae.download import DEFAULT_EXCLUDED_GENRES
from gmm_wae.exceptions import ContractError, UsageError
from gmm_wae.generation import GenerationRequest, SampleMode, format_line
from gmm_wae.latent import MmdCrossCoeff, StyleWeights
from gmm_wae.model import ModelConfig, PriorMode
from gmm_wae.module import ModuleHelper
from gmm_wae.report import Metric
from gmm_wae.synth import synthesize
from gmm_wae.trainer import TrainConfig

logger = logging.getLogger("gmm_wae")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

_LEVEL_COLORS = {
    logging.DEBUG: Fore.CYAN,
    logging.INFO: Fore.GREEN,
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.RED,
    logging.CRITICAL: Fore.RED,
}


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class ColorFormatter(logging.Formatter):
    def __init__(self, use_color: bool):
        super().__init__("%(asctime)s %(levelname)s %(name)s: %(message)s", "%H:%M:%S")
        self.use_color = use_color

    def formatMessage(self, record: logging.LogRecord) -> str:
        line = super().formatMessage(record)
        if not self.use_color:
            return line

        color = _LEVEL_COLORS.get(record.levelno, "")
        return line.replace(record.levelname, f"{color}{record.levelname}{Style.RESET_ALL}", 1)


def _paint(text: str, color: str) -> str:
    return f"{color}{text}{Style.RESET_ALL}" if sys.stderr.isatty() else text


def configure_logging(verbose: bool, quiet: bool):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO

    root = logging.getLogger()
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(ColorFormatter(sys.stderr.isatty()))
        root.addHandler(handler)
    root.setLevel(level)


@contextmanager
def _usage():
    """Report invalid flag values as usage errors."""

    try:
        yield
    except (ContractError, IndexError) as e:
        raise UsageError(str(e))


def _class_index(value: str, class_names: Sequence[str]) -> int:
    if value in class_names:
        return list(class_names).index(value)

    try:
        k = int(value)
    except ValueError:
        raise UsageError(f"Unknown style {value!r}; known: {', '.join(class_names)}")

    if not 0 <= k < len(class_names):
        raise UsageError(f"Style {k} out of range for {len(class_names)} classes")
    return k


# Subcommands


def _train(args) -> int:
    with _usage():
        train_config = TrainConfig(
            lambda_kl=args.lambda_kl,
            lambda_mmd=args.lambda_mmd,
            learning_rate=args.lr,
            batch_size=args.batch,
            epochs=args.epochs,
            seed=args.seed,
            mmd_cross_coeff=args.mmd_cross_coeff,
            freeze_priors=args.freeze_priors,
            clip_norm=args.clip_norm if args.clip_norm > 0 else None,
            subset_per_class=args.subset_per_class,
        )

    corpus, vocab = load_corpus(args.corpus, max_size=args.max_vocab, max_len=args.max_len)

    if train_config.subset_per_class is not None:
        with _usage():
            corpus = corpus.subset(
                train_config.subset_per_class, np.random.default_rng(train_config.seed)
            )
        logger.info("Training on a subset of %d sentences", len(corpus))

    with _usage():
        model_config = ModelConfig(
            vocab_size=len(vocab),
            num_classes=corpus.num_classes,
            embed_dim=args.embed_dim,
            hidden_dim=args.hidden_dim,
            latent_dim=args.latent_dim,
            max_len=args.max_len,
            prior_mode=args.prior,
            kernel_c=args.kernel_c,
        )

    wae = StyleWAE(train_config)
    history = wae.fit(corpus, vocab, model_config, progress=not args.quiet)
    wae.save(args.out)

    print(_paint(f"Trained {len(history)} steps, checkpoint written to {args.out}", Fore.GREEN), file=sys.stderr)
    return EXIT_OK


def _generate(args) -> int:
    wae = StyleWAE.from_checkpoint(args.ckpt)
    num_classes = len(wae.class_names)

    with _usage():
        if args.style is not None and args.weights is not None:
            raise UsageError("--weights needs --styles, not --style")

        if args.style is not None:
            weights = StyleWeights.one_hot(_class_index(args.style, wae.class_names), num_classes)
        else:
            classes = [_class_index(part.strip(), wae.class_names) for part in args.styles.split(",")]
            if args.weights is None:
                values = [1.0 / len(classes)] * len(classes)
            else:
                values = ModuleHelper.parse_csv_floats(args.weights)
            weights = StyleWeights.from_pairs(classes, values, num_classes)

        request = GenerationRequest(
            weights, args.num, args.temperature, args.seed, args.sample_mode, args.max_len
        )

    for sentence in wae.generate(request):
        print(format_line(weights, sentence, args.with_meta))

    return EXIT_OK


def _eval(args) -> int:
    wae = StyleWAE.from_checkpoint(args.ckpt)

    with _usage():
        metrics = [
            ModuleHelper.parse_enum(name.strip(), Metric) for name in args.metrics.split(",")
        ]
        if args.holdout_fraction is not None:
            wae.train_config = replace(wae.train_config, holdout_fraction=args.holdout_fraction)

    corpus, _ = load_corpus(
        args.corpus,
        vocab=wae.vocab,
        max_len=wae.model.config.max_len,
        class_names=wae.class_names,
    )

    report = wae.evaluate(
        corpus,
        metrics,
        args.samples,
        args.temperature,
        args.seed,
        args.sample_mode,
        progress=not args.quiet,
    )

    print(report.to_table(), end="")
    if args.report:
        report.save(args.report)

    return EXIT_OK


def _synth(args) -> int:
    with _usage():
        lines = synthesize(args.styles, args.per_class, np.random.default_rng(args.seed))

    write_labeled_lines(lines, args.out)
    return EXIT_OK


def _fetch_mnli(args) -> int:
    genres = [g.strip() for g in args.genres.split(",") if g.strip()] if args.genres else None
    exclude = [g.strip() for g in args.exclude.split(",") if g.strip()]

    count = StyleWAE(request_timeout=args.timeout).fetch_mnli(args.url, args.out, genres, exclude)
    print(_paint(f"Wrote {count} sentences to {args.out}", Fore.GREEN), file=sys.stderr)
    return EXIT_OK


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="log warnings and errors only")

    parser = ArgumentParser(
        prog="gmm-wae",
        description="Style-conditioned sentence generation with a Gaussian-mixture WAE.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    train = subparsers.add_parser("train", parents=[common], help="train a model on a labeled corpus")
    train.add_argument("--corpus", required=True, help="TSV file of <class>\\t<sentence> lines")
    train.add_argument("--out", required=True, help="checkpoint directory")
    train.add_argument("--latent-dim", type=int, default=100)
    train.add_argument("--embed-dim", type=int, default=64)
    train.add_argument("--hidden-dim", type=int, default=128)
    train.add_argument("--max-len", type=int, default=30)
    train.add_argument("--max-vocab", type=int, default=30000)
    train.add_argument("--batch", type=int, default=32)
    train.add_argument("--lambda-kl", type=float, default=0.1)
    train.add_argument("--lambda-mmd", type=float, default=10.0)
    train.add_argument("--lr", type=float, default=1e-3)
    train.add_argument("--epochs", type=int, default=10)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--clip-norm", type=float, default=5.0, help="0 disables clipping")
    train.add_argument("--kernel-c", type=float, default=None, help="IMQ constant, default 2 * latent dim")
    train.add_argument("--freeze-priors", action="store_true")
    train.add_argument(
        "--mmd-cross-coeff", choices=[c.value for c in MmdCrossCoeff], default=MmdCrossCoeff.STANDARD.value
    )
    train.add_argument("--prior", choices=[p.value for p in PriorMode], default=PriorMode.GMM.value)
    train.add_argument("--subset-per-class", type=int, default=None)
    train.set_defaults(handler=_train)

    generate = subparsers.add_parser("generate", parents=[common], help="generate sentences")
    generate.add_argument("--ckpt", required=True, help="checkpoint directory")
    style = generate.add_mutually_exclusive_group(required=True)
    style.add_argument("--style", help="class index or name")
    style.add_argument("--styles", help="comma-separated class indices or names")
    generate.add_argument("--weights", help="comma-separated weights for --styles, summing to 1")
    generate.add_argument("--num", type=int, default=1)
    generate.add_argument("--temperature", type=float, default=1.0)
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument("--max-len", type=int, default=None)
    generate.add_argument(
        "--sample-mode", choices=[m.value for m in SampleMode], default=SampleMode.AVERAGE.value
    )
    generate.add_argument("--with-meta", action="store_true", help="prefix lines with the weights")
    generate.set_defaults(handler=_generate)

    evaluate = subparsers.add_parser("eval", parents=[common], help="write a metric report")
    evaluate.add_argument("--ckpt", required=True, help="checkpoint directory")
    evaluate.add_argument("--corpus", required=True, help="labeled corpus for the classifier and baselines")
    evaluate.add_argument("--metrics", default=",".join(m.value for m in Metric))
    evaluate.add_argument("--report", default=None, help="CSV path of the report")
    evaluate.add_argument("--samples", type=int, default=200, help="generations per row")
    evaluate.add_argument("--temperature", type=float, default=1.0)
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--holdout-fraction", type=float, default=None)
    evaluate.add_argument(
        "--sample-mode", choices=[m.value for m in SampleMode], default=SampleMode.AVERAGE.value
    )
    evaluate.set_defaults(handler=_eval)

    synth = subparsers.add_parser("synth", parents=[common], help="write a synthetic style corpus")
    synth.add_argument("--styles", type=int, default=4)
    synth.add_argument("--per-class", type=int, default=2000)
    synth.add_argument("--out", required=True)
    synth.add_argument("--seed", type=int, default=0)
    synth.set_defaults(handler=_synth)

    fetch = subparsers.add_parser("fetch-mnli", parents=[common], help="download MultiNLI as a genre corpus")
    fetch.add_argument("--url", required=True)
    fetch.add_argument("--out", required=True)
    fetch.add_argument("--genres", default=None, help="comma-separated genres to keep")
    fetch.add_argument("--exclude", default=",".join(DEFAULT_EXCLUDED_GENRES))
    fetch.add_argument("--timeout", type=int, default=60)
    fetch.set_defaults(handler=_fetch_mnli)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    just_fix_windows_console()

    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(_paint(f"usage error: {e}", Fore.RED), file=sys.stderr)
        return EXIT_USAGE

    configure_logging(args.verbose, args.quiet)

    try:
        return args.handler(args)
    except UsageError as e:
        print(_paint(f"usage error: {e}", Fore.RED), file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.debug("Command %s failed", args.command, exc_info=True)
        print(_paint(f"error: {type(e).__name__}: {e}", Fore.RED), file=sys.stderr)
        return EXIT_RUNTIME
