"""Pronunciation lexicons.

A lexicon is the non-trainable pronunciation model: every keyword maps to
a token sequence in one unit system (characters, phonemes, or articulatory
attributes), and the union of those tokens plus a reserved blank forms the
unit vocabulary the acoustic model emits over. Blank always sits at index
0; content tokens follow in lexicographic order.
"""

from __future__ import annotations

import logging
import unicodedata
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

from .attributes import Inventory, UnknownSymbolError, phonemes_to_attributes

UNIT_SYSTEMS = ("character", "phoneme", "attribute")

BLANK_TOKEN = "<blank>"
BLANK_INDEX = 0

log = logging.getLogger(__name__)


class LexiconError(ValueError):
    """Malformed lexicon input: bad row, duplicate entry, bad unit system."""


class EntryNotFoundError(LookupError):
    def __init__(self, keyword: str, language: str):
        super().__init__(f"no lexicon entry for keyword {keyword!r} in language {language!r}")


def normalize_keyword(keyword: str) -> str:
    """NFC + lowercase, the normalization applied to every stored keyword."""
    return unicodedata.normalize("NFC", keyword.strip()).lower()


def keyword_to_characters(keyword: str) -> list[str]:
    """Split a keyword into lowercased grapheme clusters.

    Combining marks attach to the preceding base character, so characters
    that lack a precomposed form still come out as single tokens.
    """
    normalized = normalize_keyword(keyword)
    if not normalized:
        raise LexiconError("empty keyword")
    clusters: list[str] = []
    for ch in normalized:
        if clusters and unicodedata.combining(ch):
            clusters[-1] += ch
        else:
            clusters.append(ch)
    return clusters


@dataclass(frozen=True)
class LexiconRow:
    """One input record: a keyword and its phoneme sequence, if any."""

    keyword: str
    language: str
    phonemes: tuple[str, ...] | None = None


@dataclass(frozen=True)
class LexiconEntry:
    keyword: str
    language: str
    pronunciation: tuple[str, ...]


@dataclass(frozen=True)
class Lexicon:
    """Immutable keyword -> pronunciation map in one unit system.

    ``dropped`` counts rows discarded by a lenient build; it is not part
    of the serialized form.
    """

    unit_system: str
    entries: tuple[LexiconEntry, ...]
    vocab: tuple[str, ...]
    dropped: int = field(default=0, compare=False)

    @cached_property
    def token_index(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.vocab)}

    @cached_property
    def _by_key(self) -> dict[tuple[str, str], LexiconEntry]:
        return {(e.keyword, e.language): e for e in self.entries}

    def lookup(self, keyword: str, language: str) -> list[int]:
        """Pronunciation as vocab indices (all >= 1; blank never appears)."""
        key = (normalize_keyword(keyword), language)
        entry = self._by_key.get(key)
        if entry is None:
            raise EntryNotFoundError(*key)
        index = self.token_index
        return [index[tok] for tok in entry.pronunciation]

    def entry(self, keyword: str, language: str) -> LexiconEntry:
        key = (normalize_keyword(keyword), language)
        entry = self._by_key.get(key)
        if entry is None:
            raise EntryNotFoundError(*key)
        return entry

    def __contains__(self, key: tuple[str, str]) -> bool:
        keyword, language = key
        return (normalize_keyword(keyword), language) in self._by_key


def _row_pronunciation(
    row: LexiconRow, keyword: str, system: str, inv: Inventory | None
) -> tuple[str, ...]:
    if system == "character":
        return tuple(keyword_to_characters(keyword))
    if not row.phonemes:
        raise LexiconError(
            f"row ({row.keyword!r}, {row.language!r}): {system} mode requires "
            f"a phoneme sequence")
    if system == "phoneme":
        return tuple(row.phonemes)
    assert inv is not None
    return tuple(tok.canonical for tok in phonemes_to_attributes(inv, row.phonemes))


def build_lexicon(
    rows: Iterable[LexiconRow],
    system: str,
    inv: Inventory | None = None,
    lenient: bool = False,
) -> Lexicon:
    """Build a lexicon from keyword records in the chosen unit system.

    Rows whose phoneme sequence is missing or contains symbols outside the
    inventory are errors in strict mode; in lenient mode they are dropped
    (logged, and counted in ``Lexicon.dropped``). Duplicate
    (keyword, language) pairs are always errors.
    """
    if system not in UNIT_SYSTEMS:
        raise LexiconError(
            f"unknown unit system {system!r}; expected one of {', '.join(UNIT_SYSTEMS)}")
    if system == "attribute" and inv is None:
        raise LexiconError("attribute mode requires a phoneme inventory")

    entries: list[LexiconEntry] = []
    seen: set[tuple[str, str]] = set()
    dropped = 0
    for row in rows:
        keyword = normalize_keyword(row.keyword)
        try:
            pronunciation = _row_pronunciation(row, keyword, system, inv)
        except (LexiconError, UnknownSymbolError) as err:
            if not lenient:
                raise
            dropped += 1
            log.warning("dropping row (%r, %r): %s", row.keyword, row.language, err)
            continue
        key = (keyword, row.language)
        if key in seen:
            raise LexiconError(
                f"duplicate entry for keyword {keyword!r} in language {row.language!r}")
        seen.add(key)
        entries.append(LexiconEntry(keyword, row.language, pronunciation))

    if dropped:
        log.warning("lenient build dropped %d of %d rows", dropped, dropped + len(entries))
    tokens = sorted({tok for e in entries for tok in e.pronunciation})
    if BLANK_TOKEN in tokens:
        raise LexiconError(f"unit token collides with reserved blank {BLANK_TOKEN!r}")
    vocab = (BLANK_TOKEN, *tokens)
    return Lexicon(system, tuple(entries), vocab, dropped)


def load_keyword_table(text: str) -> list[LexiconRow]:
    """Parse keyword-table TSV: ``keyword<TAB>language[<TAB>phonemes]``.

    The phoneme field is space-separated and optional (character-mode
    inputs may omit it). ``#``-prefixed and blank lines are ignored.
    """
    rows: list[LexiconRow] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3):
            raise LexiconError(
                f"line {lineno}: expected 2 or 3 tab-separated fields, got {len(fields)}")
        keyword, language = fields[0].strip(), fields[1].strip()
        if not keyword or not language:
            raise LexiconError(f"line {lineno}: empty keyword or language")
        phonemes: tuple[str, ...] | None = None
        if len(fields) == 3 and fields[2].strip():
            phonemes = tuple(fields[2].split())
        rows.append(LexiconRow(keyword, language, phonemes))
    return rows


def write_lexicon(lex: Lexicon) -> str:
    """Serialize to the lexicon TSV format (header line, then one entry per line)."""
    lines = ["#vocab\t" + " ".join(lex.vocab)]
    for e in lex.entries:
        lines.append("\t".join((e.keyword, e.language, lex.unit_system,
                                " ".join(e.pronunciation))))
    return "\n".join(lines) + "\n"


def parse_lexicon(text: str) -> Lexicon:
    """Parse the serialized lexicon TSV format produced by :func:`write_lexicon`."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#vocab\t"):
        raise LexiconError("missing #vocab header line")
    vocab = tuple(lines[0].split("\t", 1)[1].split())
    if not vocab or vocab[BLANK_INDEX] != BLANK_TOKEN:
        raise LexiconError(f"vocab must start with the blank token {BLANK_TOKEN!r}")
    known = set(vocab)

    entries: list[LexiconEntry] = []
    system: str | None = None
    seen: set[tuple[str, str]] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise LexiconError(
                f"line {lineno}: expected 4 tab-separated fields, got {len(fields)}")
        keyword, language, row_system, tokens_field = fields
        if row_system not in UNIT_SYSTEMS:
            raise LexiconError(f"line {lineno}: unknown unit system {row_system!r}")
        if system is None:
            system = row_system
        elif row_system != system:
            raise LexiconError(
                f"line {lineno}: mixed unit systems {system!r} and {row_system!r}")
        pronunciation = tuple(tokens_field.split())
        if not pronunciation:
            raise LexiconError(f"line {lineno}: empty pronunciation")
        bad = [t for t in pronunciation if t not in known]
        if bad:
            raise LexiconError(f"line {lineno}: tokens not in vocab: {bad}")
        key = (keyword, language)
        if key in seen:
            raise LexiconError(
                f"line {lineno}: duplicate entry for {keyword!r}/{language!r}")
        seen.add(key)
        entries.append(LexiconEntry(keyword, language, pronunciation))
    if system is None:
        raise LexiconError("lexicon has no entries")
    return Lexicon(system, tuple(entries), vocab)


def demo_keyword_rows() -> list[LexiconRow]:
    """The shipped multilingual demo keyword set."""
    from importlib import resources

    text = resources.files("attrkws.data").joinpath("demo_keywords.tsv").read_text("utf-8")
    return load_keyword_table(text)
