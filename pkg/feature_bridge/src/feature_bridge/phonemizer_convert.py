"""Reshape raw phonemizer output into the keyword-table TSV.

The phonemizer emits one line of space-separated phoneme symbols per
input keyword, in order. Pairing those lines back up with the keywords
(and a language code) yields rows the lexicon builder consumes directly:
``keyword<TAB>language<TAB>phonemes``.
"""

from __future__ import annotations

import logging
from typing import Sequence

log = logging.getLogger(__name__)


class ConversionError(ValueError):
    pass


def convert_phonemizer_output(
    phonemizer_lines: Sequence[str],
    keywords: Sequence[str],
    language: str,
) -> str:
    """Build keyword-table TSV text; blank phonemizer lines drop their row.

    A blank line means the phonemizer produced no pronunciation, so the
    keyword is unusable (logged and skipped). Line/keyword count mismatch
    is an error: silent misalignment would corrupt every following row.
    """
    if len(phonemizer_lines) != len(keywords):
        raise ConversionError(
            f"{len(phonemizer_lines)} phonemizer lines for {len(keywords)} keywords")
    rows = []
    dropped = 0
    for keyword, line in zip(keywords, phonemizer_lines):
        phonemes = " ".join(line.split())
        if not phonemes:
            dropped += 1
            log.warning("dropping %r: phonemizer produced no pronunciation", keyword)
            continue
        keyword = keyword.strip()
        if not keyword:
            raise ConversionError("empty keyword")
        rows.append(f"{keyword}\t{language}\t{phonemes}")
    if dropped:
        log.warning("dropped %d of %d keywords", dropped, len(keywords))
    return "\n".join(rows) + "\n" if rows else ""
