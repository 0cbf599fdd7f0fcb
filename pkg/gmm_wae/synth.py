"""Template-grammar corpus with one disjoint content vocabulary per style.

All styles share the templates and a small set of function words, so the
class of a sentence is only recoverable from its content words.
"""

import logging

import numpy as np

from gmm_wae.data import LabeledLine
from gmm_wae.exceptions import ContractError

logger = logging.getLogger(__name__)

TEMPLATES = [
    "the {adj} {noun} {verb} the {noun}",
    "a {noun} {verb} in the {adj} {noun}",
    "{noun} and {noun} {verb} with a {noun}",
    "the {noun} of the {noun} {verb} to the {adj} {noun}",
    "it was a {adj} {noun} and the {noun} {verb}",
    "they {verb} the {adj} {noun} on the {noun}",
]

STYLE_LEXICON = {
    "fiction": {
        "noun": [
            "dragon", "castle", "knight", "witch", "forest", "sword", "princess", "tower",
            "ghost", "legend", "wizard", "kingdom", "shadow", "moon", "riddle",
        ],
        "verb": [
            "whispered", "vanished", "wandered", "feared", "summoned",
            "enchanted", "slept", "cursed", "sang", "dreamed",
        ],
        "adj": [
            "ancient", "dark", "silver", "haunted", "magical",
            "lonely", "golden", "mysterious", "wild", "secret",
        ],
    },
    "government": {
        "noun": [
            "senate", "budget", "policy", "agency", "minister", "law", "committee", "citizen",
            "treasury", "council", "election", "mandate", "official", "report", "regulation",
        ],
        "verb": [
            "approved", "funded", "regulated", "debated", "enacted",
            "audited", "reviewed", "proposed", "vetoed", "certified",
        ],
        "adj": [
            "federal", "public", "national", "fiscal", "legislative",
            "municipal", "regional", "annual", "administrative", "statutory",
        ],
    },
    "travel": {
        "noun": [
            "beach", "hotel", "flight", "island", "museum", "harbor", "train", "passport",
            "village", "market", "cathedral", "coast", "guide", "ferry", "valley",
        ],
        "verb": [
            "visited", "explored", "booked", "toured", "hiked",
            "sailed", "photographed", "crossed", "reached", "admired",
        ],
        "adj": [
            "scenic", "sunny", "crowded", "historic", "tropical",
            "charming", "coastal", "remote", "colorful", "famous",
        ],
    },
    "telephone": {
        "noun": [
            "guy", "kids", "job", "weekend", "mom", "truck", "dog", "game",
            "paycheck", "neighbor", "lawn", "football", "uncle", "buddy", "phone",
        ],
        "verb": [
            "guess", "figure", "reckon", "bet", "mean",
            "suppose", "like", "wonder", "told", "said",
        ],
        "adj": [
            "pretty", "kinda", "awful", "crazy", "funny",
            "nice", "weird", "cheap", "busy", "okay",
        ],
    },
}

_SLOT_SIZES = {"noun": 15, "verb": 10, "adj": 10}


def style_names(num_styles: int) -> list[str]:
    names = list(STYLE_LEXICON)[:num_styles]
    names.extend(f"style{i}" for i in range(len(names), num_styles))
    return names


def style_lexicon(name: str) -> dict[str, list[str]]:
    if name in STYLE_LEXICON:
        return STYLE_LEXICON[name]

    return {
        slot: [f"{name}{slot}{i}" for i in range(size)] for slot, size in _SLOT_SIZES.items()
    }


def _fill(template: str, lexicon: dict[str, list[str]], rng: np.random.Generator) -> str:
    words = []
    for part in template.split():
        if part.startswith("{") and part.endswith("}"):
            choices = lexicon[part[1:-1]]
            words.append(choices[int(rng.integers(len(choices)))])
        else:
            words.append(part)
    return " ".join(words)


def synthesize(num_styles: int, per_class: int, rng: np.random.Generator) -> list[LabeledLine]:
    """`per_class` sentences for each of `num_styles` styles, classes interleaved."""

    if num_styles < 2:
        raise ContractError(f"A style corpus needs >= 2 styles, got {num_styles}")

    if per_class < 1:
        raise ContractError(f"per_class must be >= 1, got {per_class}")

    names = style_names(num_styles)
    lexicons = [style_lexicon(name) for name in names]

    lines = []
    for _ in range(per_class):
        for name, lexicon in zip(names, lexicons):
            template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
            lines.append(LabeledLine(name, _fill(template, lexicon, rng)))

    logger.info("Synthesized %d sentences over %d styles", len(lines), num_styles)
    return lines
