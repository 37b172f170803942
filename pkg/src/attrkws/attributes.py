"""Universal articulatory token inventory.

Every phoneme is described by a manner of articulation plus a place of
articulation; the pair forms one attribute token (e.g. ``tap-alveolar``,
``vowel-high``). Consonants and vowels use disjoint place sets because
vowel articulation is classified by height rather than constriction
location. The token space is therefore closed: 6 consonant manners x 10
places + 1 vowel manner x 8 heights = 68 possible tokens.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

MANNERS: tuple[str, ...] = (
    "approximant", "tap", "fricative", "affricate", "nasal", "stop", "vowel",
)

CONSONANT_PLACES: tuple[str, ...] = (
    "bilabial", "labiodental", "dental", "alveolar", "postalveolar",
    "retroflex", "palatal", "velar", "uvular", "glottal",
)

VOWEL_PLACES: tuple[str, ...] = (
    "high", "semi-high", "upper-mid", "mid", "lower-mid", "semi-mid",
    "low", "unknown",
)

MAX_TOKENS = (len(MANNERS) - 1) * len(CONSONANT_PLACES) + len(VOWEL_PLACES)

# Stripped from IPA input by default: length marks, primary/secondary
# stress, and the tie bars used to join affricate digraphs.
DEFAULT_STRIP_MARKS = frozenset("ːˑˈˌ͜͡")

DEFAULT_TABLE_RESOURCE = "phoneme_table.tsv"


class InventoryError(ValueError):
    """Malformed phoneme table: bad row, duplicate symbol, illegal pairing."""


class UnknownSymbolError(LookupError):
    """IPA symbol not covered by the inventory.

    Carries the offending ``symbol`` and, when raised while mapping a
    sequence, its ``position`` in that sequence. Signals an inventory
    gap; callers may extend the table and retry.
    """

    def __init__(self, symbol: str, position: int | None = None):
        self.symbol = symbol
        self.position = position
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"no inventory entry for symbol {symbol!r}{where}")


def _check_pairing(manner: str, place: str) -> None:
    if manner not in MANNERS:
        raise InventoryError(
            f"unknown manner {manner!r}; expected one of {', '.join(MANNERS)}")
    if manner == "vowel":
        if place not in VOWEL_PLACES:
            raise InventoryError(
                f"illegal pairing: vowel manner requires a vowel place "
                f"(high .. unknown), got {place!r}")
    elif place not in CONSONANT_PLACES:
        raise InventoryError(
            f"illegal pairing: manner {manner!r} requires a consonant "
            f"place (bilabial .. glottal), got {place!r}")


@dataclass(frozen=True)
class AttributeToken:
    """A manner+place pair, canonically spelled ``<manner>-<place>``."""

    manner: str
    place: str

    def __post_init__(self) -> None:
        _check_pairing(self.manner, self.place)

    @property
    def canonical(self) -> str:
        return f"{self.manner}-{self.place}"

    def __str__(self) -> str:
        return self.canonical


@dataclass(frozen=True)
class PhonemeEntry:
    """One table row: an IPA symbol and its articulatory classification."""

    ipa: str
    manner: str
    place: str

    def __post_init__(self) -> None:
        if not self.ipa:
            raise InventoryError("empty IPA symbol")
        _check_pairing(self.manner, self.place)

    @property
    def token(self) -> AttributeToken:
        return AttributeToken(self.manner, self.place)


def normalize_ipa(symbol: str, keep: Iterable[str] = ()) -> str:
    """NFC-normalize an IPA symbol and strip length/stress/tie marks.

    ``keep`` lists marks to preserve (for tables that distinguish, say,
    long vowels). Stripping happens before lookup on both the table and
    the query side, so the two always agree.
    """
    strip = DEFAULT_STRIP_MARKS.difference(keep)
    normalized = unicodedata.normalize("NFC", symbol.strip())
    return "".join(ch for ch in normalized if ch not in strip)


class Inventory:
    """Immutable IPA-symbol -> attribute-token map.

    Construct via :func:`load_phoneme_table` (or :func:`default_inventory`
    for the shipped table). Safe for unrestricted concurrent reads.
    """

    def __init__(self, entries: Iterable[PhonemeEntry], keep_marks: Iterable[str] = ()):
        self._keep = frozenset(keep_marks)
        table: dict[str, PhonemeEntry] = {}
        for entry in entries:
            if entry.ipa in table:
                raise InventoryError(f"duplicate IPA symbol {entry.ipa!r}")
            table[entry.ipa] = entry
        self._entries = table

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, symbol: str) -> bool:
        return normalize_ipa(symbol, self._keep) in self._entries

    @property
    def symbols(self) -> tuple[str, ...]:
        return tuple(self._entries)

    @property
    def entries(self) -> tuple[PhonemeEntry, ...]:
        return tuple(self._entries.values())

    def entry(self, symbol: str) -> PhonemeEntry:
        key = normalize_ipa(symbol, self._keep)
        if not key:
            raise UnknownSymbolError(symbol)
        try:
            return self._entries[key]
        except KeyError:
            raise UnknownSymbolError(key) from None


def load_phoneme_table(source: str, keep_marks: Iterable[str] = ()) -> Inventory:
    """Parse phoneme-table text into an :class:`Inventory`.

    Format: UTF-8 TSV with three columns ``ipa<TAB>manner<TAB>place``;
    ``#``-prefixed lines and blank lines are ignored. Raises
    :class:`InventoryError` (with the line number) on malformed rows,
    duplicate symbols, or illegal manner/place pairings.
    """
    keep = frozenset(keep_marks)
    entries: list[PhonemeEntry] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise InventoryError(
                f"line {lineno}: expected 3 tab-separated fields, got {len(fields)}")
        ipa, manner, place = (f.strip() for f in fields)
        ipa = normalize_ipa(ipa, keep)
        if not ipa:
            raise InventoryError(f"line {lineno}: empty IPA symbol after normalization")
        if ipa in seen:
            raise InventoryError(f"line {lineno}: duplicate IPA symbol {ipa!r}")
        seen.add(ipa)
        try:
            entries.append(PhonemeEntry(ipa, manner.lower(), place.lower()))
        except InventoryError as err:
            raise InventoryError(f"line {lineno}: {err}") from None
    return Inventory(entries, keep)


def map_phoneme(inv: Inventory, ipa: str) -> AttributeToken:
    """Map one IPA symbol to its attribute token."""
    return inv.entry(ipa).token


def phonemes_to_attributes(inv: Inventory, seq: Sequence[str]) -> list[AttributeToken]:
    """Map a phoneme sequence elementwise, preserving order and length.

    Unknown symbols raise :class:`UnknownSymbolError` carrying the index
    of the offending element.
    """
    out: list[AttributeToken] = []
    for i, symbol in enumerate(seq):
        try:
            out.append(map_phoneme(inv, symbol))
        except UnknownSymbolError as err:
            raise UnknownSymbolError(err.symbol, position=i) from None
    return out


def attribute_vocab(inv: Inventory) -> list[AttributeToken]:
    """Sorted unique attribute tokens actually produced by the inventory."""
    unique = {entry.token for entry in inv.entries}
    return sorted(unique, key=lambda tok: tok.canonical)


@lru_cache(maxsize=1)
def default_inventory() -> Inventory:
    """The shipped table: common IPA symbols per IPA-chart/PHOIBLE conventions."""
    text = resources.files("attrkws.data").joinpath(DEFAULT_TABLE_RESOURCE).read_text("utf-8")
    return load_phoneme_table(text)
