"""Lexicon-constrained keyword decoding.

Two routes from a posterior grid to a keyword: exhaustive rescoring
(every lexicon entry scored with the exact CTC forward value) and a
frame-synchronous prefix beam search over a trie of pronunciations. The
search keeps the standard blank-ending / non-blank-ending score split per
prefix; because the trie maps prefixes to nodes one-to-one, the whole beam
is updated as a few vectorized operations per frame. Unpruned, the search
computes exactly the forward probability of every entry, so it must agree
with the exhaustive route.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ctc import NEG_INF, ctc_log_forward
from .kwsp import KwspError, PosteriorMatrix, read_posteriors
from .lexicon import BLANK_INDEX, Lexicon, LexiconEntry

log = logging.getLogger(__name__)


class DecodeError(ValueError):
    """Vocab mismatch or unusable lexicon/posteriors."""


class NoFeasibleKeywordError(DecodeError):
    """Every lexicon entry has probability zero under the posteriors."""


@dataclass(frozen=True)
class RecognitionResult:
    keyword: str
    language: str
    log_score: float
    alternatives: tuple[tuple[str, str, float], ...] = ()


class LexiconTrie:
    """Prefix tree over pronunciation index sequences.

    Node 0 is the root. Each node stores its parent, the token index on
    its incoming edge, and the (keyword, language) pairs whose
    pronunciation ends there. Immutable once built.
    """

    def __init__(self, lex: Lexicon):
        if not lex.entries:
            raise DecodeError("cannot build a trie from an empty lexicon")
        self.vocab_size = len(lex.vocab)
        parents = [0]
        tokens = [-1]  # root emits nothing
        children: list[dict[int, int]] = [{}]
        terminals: list[list[tuple[str, str]]] = [[]]
        for entry in lex.entries:
            node = 0
            for idx in lex.lookup(entry.keyword, entry.language):
                nxt = children[node].get(idx)
                if nxt is None:
                    nxt = len(parents)
                    parents.append(node)
                    tokens.append(idx)
                    children.append({})
                    terminals.append([])
                    children[node][idx] = nxt
                node = nxt
            terminals[node].append((entry.keyword, entry.language))
        self.children = children
        self.terminals = [tuple(sorted(t)) for t in terminals]
        self.parent = np.asarray(parents, dtype=np.int64)
        self.token = np.asarray(tokens, dtype=np.int64)
        # whether a node's incoming token repeats its parent's incoming
        # token; such extensions may only leave the parent's blank-ending mass
        self.repeats_parent = np.zeros(len(parents), dtype=bool)
        self.repeats_parent[1:] = self.token[1:] == self.token[self.parent[1:]]
        self.terminal_nodes = np.asarray(
            [i for i, t in enumerate(self.terminals) if t], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.children)


def build_trie(lex: Lexicon) -> LexiconTrie:
    return LexiconTrie(lex)


def _sort_scored(
    scored: list[tuple[LexiconEntry, float]]
) -> list[tuple[LexiconEntry, float]]:
    return sorted(scored, key=lambda item: (-item[1], item[0].keyword, item[0].language))


def score_all(post: PosteriorMatrix, lex: Lexicon) -> list[tuple[LexiconEntry, float]]:
    """Exact CTC log-score for every entry, best first (ties lexicographic)."""
    if post.vocab_size != len(lex.vocab):
        raise DecodeError(
            f"posterior vocab size {post.vocab_size} != lexicon vocab size {len(lex.vocab)}")
    scored = [
        (entry, ctc_log_forward(post, lex.lookup(entry.keyword, entry.language)))
        for entry in lex.entries
    ]
    return _sort_scored(scored)


def beam_recognize(
    post: PosteriorMatrix,
    trie: LexiconTrie,
    beam_width: int | None = 16,
    blank: int = BLANK_INDEX,
    topk: int = 5,
) -> RecognitionResult:
    """Frame-synchronous prefix beam search constrained to trie paths.

    ``beam_width=None`` disables pruning, making the result exactly the
    exhaustive argmax. With pruning, the top ``beam_width`` prefixes by
    total score survive each frame; that is lossy by design.
    """
    if beam_width is not None and beam_width < 1:
        raise DecodeError(f"beam width must be >= 1, got {beam_width}")
    if post.vocab_size != trie.vocab_size:
        raise DecodeError(
            f"posterior vocab size {post.vocab_size} != lexicon vocab size {trie.vocab_size}")
    log_probs = post.log_probs()
    n = len(trie)

    blank_ending = np.full(n, NEG_INF)
    nonblank_ending = np.full(n, NEG_INF)
    blank_ending[0] = 0.0
    safe_token = np.where(trie.token >= 0, trie.token, blank)

    for lp in log_probs:
        total = np.logaddexp(blank_ending, nonblank_ending)
        new_blank = total + lp[blank]
        # same prefix, repeated emission of its own last token
        new_nonblank = nonblank_ending + lp[safe_token]
        # extension from the parent prefix; a repeated token must cross a blank
        src = np.where(
            trie.repeats_parent, blank_ending[trie.parent], total[trie.parent])
        new_nonblank = np.logaddexp(new_nonblank, src + lp[safe_token])
        new_nonblank[0] = NEG_INF
        blank_ending, nonblank_ending = new_blank, new_nonblank

        if beam_width is not None:
            total = np.logaddexp(blank_ending, nonblank_ending)
            alive = np.flatnonzero(total > NEG_INF)
            if alive.size > beam_width:
                order = alive[np.argsort(total[alive], kind="stable")]
                pruned = order[: alive.size - beam_width]
                blank_ending[pruned] = NEG_INF
                nonblank_ending[pruned] = NEG_INF

    total = np.logaddexp(blank_ending, nonblank_ending)
    ranked: list[tuple[str, str, float]] = []
    for node in trie.terminal_nodes:
        score = float(total[node])
        if score == NEG_INF:
            continue
        for keyword, language in trie.terminals[node]:
            ranked.append((keyword, language, score))
    if not ranked:
        raise NoFeasibleKeywordError("no lexicon entry is feasible for these posteriors")
    ranked.sort(key=lambda item: (-item[2], item[0], item[1]))
    best = ranked[0]
    return RecognitionResult(
        keyword=best[0],
        language=best[1],
        log_score=best[2],
        alternatives=tuple(ranked[1 : topk + 1]),
    )


@dataclass(frozen=True)
class BatchItem:
    """Outcome for one posterior file; exactly one of result/error is set."""

    path: str
    utt_id: str
    result: RecognitionResult | None = None
    error: str | None = None


def _recognize_file(
    path: str | Path, trie: LexiconTrie, beam_width: int | None, topk: int
) -> BatchItem:
    utt_id = Path(path).stem
    try:
        post = read_posteriors(path)
        result = beam_recognize(post, trie, beam_width, topk=topk)
        return BatchItem(str(path), utt_id, result=result)
    except (OSError, KwspError, DecodeError) as err:
        return BatchItem(str(path), utt_id, error=str(err))


def batch_recognize(
    paths: Sequence[str | Path],
    trie: LexiconTrie,
    beam_width: int | None = 16,
    workers: int = 1,
    topk: int = 5,
) -> list[BatchItem]:
    """Decode many posterior files; results come back in input order.

    Per-file failures (unreadable or mismatched files) are recorded on the
    corresponding item and the run continues.
    """
    if workers < 1:
        raise DecodeError(f"worker count must be >= 1, got {workers}")
    if not paths:
        return []
    if workers == 1:
        items = [_recognize_file(p, trie, beam_width, topk) for p in paths]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            items = list(pool.map(
                lambda p: _recognize_file(p, trie, beam_width, topk), paths))
    failures = [it for it in items if it.error is not None]
    if failures:
        log.warning("%d of %d files failed to decode; first: %s: %s",
                    len(failures), len(items), failures[0].path, failures[0].error)
    return items


def results_to_jsonl(items: Sequence[BatchItem]) -> str:
    """One JSON object per line; failed items carry an ``error`` field."""
    lines = []
    for item in items:
        if item.result is None:
            record = {"utt_id": item.utt_id, "error": item.error}
        else:
            record = {
                "utt_id": item.utt_id,
                "keyword": item.result.keyword,
                "language": item.result.language,
                "log_score": item.result.log_score,
                "alternatives": [
                    {"keyword": k, "language": lang, "log_score": s}
                    for k, lang, s in item.result.alternatives
                ],
            }
        lines.append(json.dumps(record, ensure_ascii=False))
    return "\n".join(lines) + "\n"
