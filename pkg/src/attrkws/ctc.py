"""Exact CTC scoring and gradients, entirely in log space.

The forward value is the log-probability that a per-frame token process
emits any frame path collapsing (merge adjacent repeats, then delete
blanks) to the given label sequence. The gradient is the analytic
forward-backward result taken with respect to pre-softmax logits, which is
how a linear output layer trains. A brute-force path enumerator doubles as
the test oracle. Everything here is a pure function over immutable inputs,
safe to call concurrently from any number of workers.
"""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np

from .kwsp import PosteriorMatrix, softmax
from .lexicon import BLANK_INDEX

NEG_INF = -math.inf

BRUTE_FORCE_PATH_LIMIT = 10**6


class CtcError(ValueError):
    """Dimension mismatch or invalid label sequence."""


class InfeasibleLabelsError(CtcError):
    """Label sequence cannot be emitted in the available frames."""


def check_labels(labels: Sequence[int], vocab_size: int, blank: int = BLANK_INDEX) -> None:
    if len(labels) == 0:
        raise CtcError("empty label sequence")
    for idx in labels:
        if idx == blank:
            raise CtcError(f"label index {idx} equals the blank index")
        if not 0 <= idx < vocab_size:
            raise CtcError(f"label index {idx} out of range for vocab size {vocab_size}")


def min_frames(labels: Sequence[int]) -> int:
    """Shortest frame path that can emit the labels: one frame per label
    plus one separating blank per adjacent repeat."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _augment(labels: Sequence[int], blank: int) -> np.ndarray:
    aug = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    aug[1::2] = labels
    return aug


def _log_alpha(log_probs: np.ndarray, aug: np.ndarray, blank: int) -> np.ndarray:
    """Forward lattice over the blank-augmented labels; emissions included
    at every frame, so row t sums (over reachable states) to the
    probability of the first t+1 frames."""
    frames, states = log_probs.shape[0], aug.shape[0]
    # skip transition s-2 -> s is legal unless the target is a blank or
    # repeats the label two slots back
    can_skip = np.zeros(states, dtype=bool)
    can_skip[2:] = (aug[2:] != blank) & (aug[2:] != aug[:-2])

    alpha = np.full((frames, states), NEG_INF)
    alpha[0, 0] = log_probs[0, aug[0]]
    if states > 1:
        alpha[0, 1] = log_probs[0, aug[1]]
    for t in range(1, frames):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate(([NEG_INF], prev[:-1]))
        skip = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))
        skip = np.where(can_skip, skip, NEG_INF)
        alpha[t] = np.logaddexp(np.logaddexp(stay, step), skip) + log_probs[t, aug]
    return alpha


def ctc_log_forward(
    post: PosteriorMatrix, labels: Sequence[int], blank: int = BLANK_INDEX
) -> float:
    """log P(labels | posteriors); -inf when the labels are infeasible."""
    labels = list(labels)
    check_labels(labels, post.vocab_size, blank)
    if post.frames < min_frames(labels):
        return NEG_INF
    aug = _augment(labels, blank)
    alpha = _log_alpha(post.log_probs(), aug, blank)
    tail = alpha[-1, -2:] if aug.shape[0] > 1 else alpha[-1, -1:]
    return float(np.logaddexp.reduce(tail))


def ctc_loss_and_grad(
    logits: PosteriorMatrix | np.ndarray,
    labels: Sequence[int],
    blank: int = BLANK_INDEX,
) -> tuple[float, np.ndarray]:
    """Negative log-likelihood and its gradient with respect to the logits.

    Runs the forward-backward recursion on the softmaxed logits; the
    returned grid is d(-log P)/d(logit), whose rows each sum to zero by
    the softmax Jacobian. Infeasible labels are an error here (a training
    pair that can never align is invalid input, not a zero-probability
    event to differentiate).
    """
    if isinstance(logits, PosteriorMatrix):
        if not logits.is_logit:
            raise CtcError("expected logit-mode input")
        logits = logits.values
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise CtcError(f"expected a T x V logit grid, got shape {logits.shape}")
    frames, vocab = logits.shape
    labels = list(labels)
    check_labels(labels, vocab, blank)
    if frames < min_frames(labels):
        raise InfeasibleLabelsError(
            f"{len(labels)} labels (min {min_frames(labels)} frames) cannot "
            f"align to {frames} frames")

    probs = softmax(logits)
    with np.errstate(divide="ignore"):
        log_probs = np.log(probs)
    aug = _augment(labels, blank)
    states = aug.shape[0]
    alpha = _log_alpha(log_probs, aug, blank)

    # beta excludes the current frame's emission: beta[t, s] is the log
    # probability of completing the sequence from frames t+1.. given state s
    can_skip = np.zeros(states, dtype=bool)
    can_skip[2:] = (aug[2:] != blank) & (aug[2:] != aug[:-2])
    beta = np.full((frames, states), NEG_INF)
    beta[-1, -1] = 0.0
    if states > 1:
        beta[-1, -2] = 0.0
    for t in range(frames - 2, -1, -1):
        nxt = beta[t + 1] + log_probs[t + 1, aug]
        stay = nxt
        step = np.concatenate((nxt[1:], [NEG_INF]))
        skip = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))
        skip = np.where(np.concatenate((can_skip[2:], [False, False])), skip, NEG_INF)
        beta[t] = np.logaddexp(np.logaddexp(stay, step), skip)

    gamma = alpha + beta
    total = np.logaddexp.reduce(alpha[-1, -2:] if states > 1 else alpha[-1, -1:])
    if not np.isfinite(total):
        raise InfeasibleLabelsError("label probability underflowed to zero")

    # d(-logP)/d(logit[t,k]) = softmax[t,k] - sum_{s: aug[s]=k} exp(gamma[t,s] - logP)
    occupancy = np.zeros((frames, vocab))
    contrib = np.exp(gamma - total)
    for s, symbol in enumerate(aug):
        occupancy[:, symbol] += contrib[:, s]
    grad = probs - occupancy
    return float(-total), grad


def greedy_collapse(path: Sequence[int], blank: int = BLANK_INDEX) -> list[int]:
    """Merge adjacent repeats, then drop blanks."""
    merged = [k for k, _ in itertools.groupby(path)]
    return [k for k in merged if k != blank]


def brute_force_ctc(
    post: PosteriorMatrix, labels: Sequence[int], blank: int = BLANK_INDEX
) -> float:
    """Test oracle: enumerate every V^T frame path and sum the probability
    of those that collapse to the labels. Bounded to 10^6 paths."""
    labels = list(labels)
    check_labels(labels, post.vocab_size, blank)
    frames, vocab = post.frames, post.vocab_size
    if vocab**frames > BRUTE_FORCE_PATH_LIMIT:
        raise CtcError(
            f"enumeration bound exceeded: {vocab}^{frames} > {BRUTE_FORCE_PATH_LIMIT}")
    probs = post.probs()
    total = 0.0
    for path in itertools.product(range(vocab), repeat=frames):
        if greedy_collapse(path, blank) == labels:
            p = 1.0
            for t, k in enumerate(path):
                p *= probs[t, k]
            total += p
    return math.log(total) if total > 0.0 else NEG_INF
