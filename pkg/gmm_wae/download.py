import io
import json
import logging
import zipfile
from json import JSONDecodeError
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import requests

from gmm_wae.data import LabeledLine, write_labeled_lines
from gmm_wae.exceptions import DownloadError, IngestionError
from gmm_wae.module import Module

logger = logging.getLogger(__name__)

DEFAULT_EXCLUDED_GENRES = ("slate",)


def parse_mnli(
    lines: Iterable[str],
    genres: Optional[Sequence[str]] = None,
    exclude: Sequence[str] = DEFAULT_EXCLUDED_GENRES,
) -> list[LabeledLine]:
    """Premise sentences labeled by genre, de-duplicated in file order.

    `genres`, when given, keeps only those genres; `exclude` always applies.
    """

    seen = set()
    result = []
    for line_number, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue

        try:
            record = json.loads(raw)
        except JSONDecodeError as e:
            raise IngestionError(f"line {line_number}: invalid JSON ({e})")

        genre, sentence = record.get("genre"), record.get("sentence1")
        if not genre or not sentence:
            continue

        if genre in exclude or (genres is not None and genre not in genres):
            continue

        key = (genre, sentence)
        if key in seen:
            continue
        seen.add(key)

        result.append(LabeledLine(genre, " ".join(sentence.split())))

    return result


def _jsonl_lines(content: bytes) -> list[str]:
    if not zipfile.is_zipfile(io.BytesIO(content)):
        return content.decode("utf-8").splitlines()

    with zipfile.ZipFile(io.BytesIO(content)) as archive:
        members = [name for name in archive.namelist() if name.endswith("train.jsonl")]
        members = members or [name for name in archive.namelist() if name.endswith(".jsonl")]
        if not members:
            raise IngestionError("Archive contains no .jsonl file")

        logger.info("Reading %s from archive", members[0])
        return archive.read(members[0]).decode("utf-8").splitlines()


class MnliImport(Module):
    def fetch(
        self,
        url: str,
        out: Union[str, Path],
        genres: Optional[Sequence[str]] = None,
        exclude: Sequence[str] = DEFAULT_EXCLUDED_GENRES,
    ) -> int:
        """Download the MultiNLI file at `url` and write it as a labeled corpus.

        Returns:
            int: Number of sentences written.
        """

        logger.info("Downloading %s", url)
        try:
            response = self.wae.session.get(url)
        except requests.RequestException as e:
            raise DownloadError(f"Failed to download {url}: {e}")

        if response.status_code != 200:
            raise DownloadError(f"Failed to download {url}: HTTP {response.status_code}")

        lines = parse_mnli(_jsonl_lines(response.content), genres, exclude)
        if not lines:
            raise IngestionError(f"No sentences left after genre filtering in {url}")

        genre_counts = {}
        for line in lines:
            genre_counts[line.label] = genre_counts.get(line.label, 0) + 1
        logger.info("Genres: %s", ", ".join(f"{g}={c}" for g, c in sorted(genre_counts.items())))

        return write_labeled_lines(lines, out)
