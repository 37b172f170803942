"""Desk-scale adversarial trainer.

The model is a feed-forward frame encoder feeding two heads: a linear
output layer trained with CTC over unit tokens, and a language classifier
over the time-pooled encoder output, attached through a gradient reversal
layer. Reversal is the identity in the forward pass; in the backward pass
the classifier's gradient into the encoder is multiplied by -lambda, so a
single update step performs

    theta_E <- theta_E - alpha * (dL_ctc/dtheta_E - lambda * dL_cls/dtheta_E)
    theta_O <- theta_O - alpha * dL_ctc/dtheta_O
    theta_C <- theta_C - alpha * dL_cls/dtheta_C

in plain-SGD mode. AdamW (the training default) applies the same combined
gradients through its moment estimates instead. Everything is hand-written
numpy so each gradient can be checked against finite differences.
"""

from __future__ import annotations

import copy
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .ctc import ctc_loss_and_grad
from .kwsp import PosteriorMatrix, read_features, softmax, write_posteriors
from .lexicon import Lexicon
from .manifest import ManifestRecord

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adamw")


class TrainerError(ValueError):
    """Bad configuration or invalid training input."""


class NonFiniteError(ArithmeticError):
    """An activation, loss, or gradient left the finite range."""


@dataclass(frozen=True)
class ModelConfig:
    """Shapes and hyperparameters for the encoder/output/classifier stack."""

    feature_dim: int
    vocab_size: int
    num_languages: int
    context: int = 2
    encoder_layers: int = 2
    encoder_width: int = 64
    classifier_layers: int = 2
    classifier_width: int = 64
    grl_lambda: float = 1.0
    learning_rate: float = 1e-3
    lr_decay: float = 1.0
    optimizer: str = "adamw"
    beta1: float = 0.9
    beta2: float = 0.98
    weight_decay: float = 0.0
    adam_eps: float = 1e-8
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise TrainerError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.num_languages < 2:
            raise TrainerError(f"num_languages must be >= 2, got {self.num_languages}")
        if self.grl_lambda < 0:
            raise TrainerError(f"grl_lambda must be >= 0, got {self.grl_lambda}")
        if self.learning_rate <= 0:
            raise TrainerError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise TrainerError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.optimizer not in OPTIMIZERS:
            raise TrainerError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if min(self.feature_dim, self.encoder_layers, self.encoder_width,
               self.classifier_layers, self.classifier_width) < 1 or self.context < 0:
            raise TrainerError("model dimensions must be positive (context >= 0)")


@dataclass
class ModelState:
    """Parameters plus optimizer moments and the step counter.

    ``languages`` maps classifier class indices back to language codes.
    """

    config: ModelConfig
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int = 0
    languages: tuple[str, ...] = ()

    def clone(self) -> "ModelState":
        return ModelState(
            config=self.config,
            params={k: v.copy() for k, v in self.params.items()},
            adam_m={k: v.copy() for k, v in self.adam_m.items()},
            adam_v={k: v.copy() for k, v in self.adam_v.items()},
            step=self.step,
            languages=self.languages,
        )


@dataclass(frozen=True)
class TrainBatch:
    features: tuple[np.ndarray, ...]
    labels: tuple[tuple[int, ...], ...]
    language_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if not (len(self.features) == len(self.labels) == len(self.language_ids)):
            raise TrainerError("features, labels, and language_ids must align")
        if not self.features:
            raise TrainerError("empty batch")


@dataclass(frozen=True)
class LossReport:
    loss_ctc: float
    loss_cls: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.loss_ctc) and np.isfinite(self.loss_cls)):
            raise NonFiniteError(
                f"non-finite loss: ctc={self.loss_ctc}, cls={self.loss_cls}")


def _layer_sizes(config: ModelConfig) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    in_dim = config.feature_dim * (2 * config.context + 1)
    enc = []
    for _ in range(config.encoder_layers):
        enc.append((in_dim, config.encoder_width))
        in_dim = config.encoder_width
    cls = []
    in_dim = config.encoder_width
    for _ in range(config.classifier_layers - 1):
        cls.append((in_dim, config.classifier_width))
        in_dim = config.classifier_width
    cls.append((in_dim, config.num_languages))
    return enc, cls


def init_state(config: ModelConfig, languages: Sequence[str] = ()) -> ModelState:
    """Seeded initialization: scaled-normal weights, zero biases."""
    if languages and len(languages) != config.num_languages:
        raise TrainerError(
            f"{len(languages)} language names for {config.num_languages} classes")
    rng = np.random.default_rng(config.seed)
    params: dict[str, np.ndarray] = {}
    enc, cls = _layer_sizes(config)
    for i, (fan_in, fan_out) in enumerate(enc):
        params[f"enc.{i}.W"] = rng.normal(0.0, fan_in**-0.5, size=(fan_in, fan_out))
        params[f"enc.{i}.b"] = np.zeros(fan_out)
    params["out.W"] = rng.normal(
        0.0, config.encoder_width**-0.5, size=(config.encoder_width, config.vocab_size))
    params["out.b"] = np.zeros(config.vocab_size)
    for i, (fan_in, fan_out) in enumerate(cls):
        params[f"cls.{i}.W"] = rng.normal(0.0, fan_in**-0.5, size=(fan_in, fan_out))
        params[f"cls.{i}.b"] = np.zeros(fan_out)
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    return ModelState(
        config=config,
        params=params,
        adam_m=zeros,
        adam_v={k: v.copy() for k, v in zeros.items()},
        languages=tuple(languages),
    )


def unfold_context(features: np.ndarray, context: int) -> np.ndarray:
    """Stack each frame with its +-context neighbours (zero-padded edges)."""
    if context == 0:
        return features
    frames, dim = features.shape
    padded = np.zeros((frames + 2 * context, dim))
    padded[context : context + frames] = features
    blocks = [padded[o : o + frames] for o in range(2 * context + 1)]
    return np.concatenate(blocks, axis=1)


def _check_finite(name: str, value: np.ndarray) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite values in {name}")


class _UtteranceCache:
    """Per-utterance activations kept for the backward pass."""

    __slots__ = ("unfolded", "enc_acts", "hidden", "logits", "cls_acts", "cls_logits")

    def __init__(self, unfolded, enc_acts, hidden, logits, cls_acts, cls_logits):
        self.unfolded = unfolded
        self.enc_acts = enc_acts
        self.hidden = hidden
        self.logits = logits
        self.cls_acts = cls_acts
        self.cls_logits = cls_logits


def _forward_utterance(state: ModelState, features: np.ndarray) -> _UtteranceCache:
    config = state.config
    if features.ndim != 2 or features.shape[1] != config.feature_dim:
        raise TrainerError(
            f"expected frames x {config.feature_dim} features, got {features.shape}")
    x = unfold_context(features.astype(np.float64), config.context)
    enc_acts = [x]
    for i in range(config.encoder_layers):
        z = enc_acts[-1] @ state.params[f"enc.{i}.W"] + state.params[f"enc.{i}.b"]
        enc_acts.append(np.tanh(z))
    hidden = enc_acts[-1]
    _check_finite("encoder output", hidden)
    logits = hidden @ state.params["out.W"] + state.params["out.b"]

    pooled = hidden.mean(axis=0)
    cls_acts = [pooled]
    n_cls = state.config.classifier_layers
    for i in range(n_cls - 1):
        z = cls_acts[-1] @ state.params[f"cls.{i}.W"] + state.params[f"cls.{i}.b"]
        cls_acts.append(np.tanh(z))
    cls_logits = (cls_acts[-1] @ state.params[f"cls.{n_cls - 1}.W"]
                  + state.params[f"cls.{n_cls - 1}.b"])
    _check_finite("classifier logits", cls_logits)
    return _UtteranceCache(x, enc_acts, hidden, logits, cls_acts, cls_logits)


def _cross_entropy(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    shifted = logits - logits.max()
    log_z = np.log(np.exp(shifted).sum())
    loss = float(log_z - shifted[target])
    grad = np.exp(shifted - log_z)
    grad[target] -= 1.0
    return loss, grad


def forward(
    state: ModelState, batch: TrainBatch
) -> tuple[list[PosteriorMatrix], np.ndarray, LossReport]:
    """Forward pass only: per-utterance CTC logits, language logits, mean losses."""
    caches = [_forward_utterance(state, f) for f in batch.features]
    loss_ctc = 0.0
    loss_cls = 0.0
    for cache, labels, lang in zip(caches, batch.labels, batch.language_ids):
        loss_ctc += ctc_loss_and_grad(cache.logits, list(labels))[0]
        loss_cls += _cross_entropy(cache.cls_logits, lang)[0]
    n = len(caches)
    report = LossReport(loss_ctc / n, loss_cls / n)
    ctc_logits = [PosteriorMatrix(c.logits.astype(np.float32), is_logit=True) for c in caches]
    language_logits = np.stack([c.cls_logits for c in caches])
    return ctc_logits, language_logits, report


def _zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def _backward_classifier(
    state: ModelState, cache: _UtteranceCache, d_cls_logits: np.ndarray,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    """Accumulate classifier grads; return the gradient at the pooled input."""
    n_cls = state.config.classifier_layers
    delta = d_cls_logits
    for i in range(n_cls - 1, -1, -1):
        grads[f"cls.{i}.W"] += np.outer(cache.cls_acts[i], delta)
        grads[f"cls.{i}.b"] += delta
        delta = delta @ state.params[f"cls.{i}.W"].T
        if i > 0:
            delta = delta * (1.0 - cache.cls_acts[i] ** 2)
    return delta


def _backward_encoder(
    state: ModelState, cache: _UtteranceCache, d_hidden: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    delta = d_hidden * (1.0 - cache.enc_acts[-1] ** 2)
    for i in range(state.config.encoder_layers - 1, -1, -1):
        grads[f"enc.{i}.W"] += cache.enc_acts[i].T @ delta
        grads[f"enc.{i}.b"] += delta.sum(axis=0)
        if i > 0:
            delta = (delta @ state.params[f"enc.{i}.W"].T) * (1.0 - cache.enc_acts[i] ** 2)


def gradients(
    state: ModelState, batch: TrainBatch, grl_lambda: float | None = None
) -> tuple[dict[str, np.ndarray], LossReport]:
    """Mean-loss gradients for every parameter, reversal already applied.

    The returned encoder entries hold d(L_ctc)/dtheta - lambda*d(L_cls)/dtheta;
    output and classifier entries hold their plain branch gradients.
    """
    lam = state.config.grl_lambda if grl_lambda is None else grl_lambda
    grads = _zero_grads(state.params)
    n = len(batch.features)
    loss_ctc = 0.0
    loss_cls = 0.0
    for features, labels, lang in zip(batch.features, batch.labels, batch.language_ids):
        cache = _forward_utterance(state, features)
        utt_loss, d_logits = ctc_loss_and_grad(cache.logits, list(labels))
        loss_ctc += utt_loss
        d_logits = d_logits / n
        grads["out.W"] += cache.hidden.T @ d_logits
        grads["out.b"] += d_logits.sum(axis=0)
        d_hidden = d_logits @ state.params["out.W"].T

        cls_loss, d_cls = _cross_entropy(cache.cls_logits, lang)
        loss_cls += cls_loss
        d_pooled = _backward_classifier(state, cache, d_cls / n, grads)
        # gradient reversal: the classifier branch enters the encoder scaled
        # by -lambda; mean-pooling spreads it evenly over frames
        frames = cache.hidden.shape[0]
        d_hidden = d_hidden + (-lam) * d_pooled[None, :] / frames
        _backward_encoder(state, cache, d_hidden, grads)
    for name, g in grads.items():
        _check_finite(f"gradient {name}", g)
    return grads, LossReport(loss_ctc / n, loss_cls / n)


def encoder_grads_split(
    state: ModelState, batch: TrainBatch
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Encoder gradients of each loss separately (no reversal): the explicit
    route for verifying the combined update."""
    grads_ctc = _zero_grads(state.params)
    grads_cls = _zero_grads(state.params)
    n = len(batch.features)
    for features, labels, lang in zip(batch.features, batch.labels, batch.language_ids):
        cache = _forward_utterance(state, features)
        _, d_logits = ctc_loss_and_grad(cache.logits, list(labels))
        d_hidden = (d_logits / n) @ state.params["out.W"].T
        _backward_encoder(state, cache, d_hidden, grads_ctc)

        _, d_cls = _cross_entropy(cache.cls_logits, lang)
        d_pooled = _backward_classifier(state, cache, d_cls / n, _zero_grads(state.params))
        frames = cache.hidden.shape[0]
        _backward_encoder(state, cache, np.tile(d_pooled / frames, (frames, 1)), grads_cls)
    enc_keys = [k for k in state.params if k.startswith("enc.")]
    return ({k: grads_ctc[k] for k in enc_keys}, {k: grads_cls[k] for k in enc_keys})


def sgd_update(theta: np.ndarray, grad: np.ndarray, alpha: float) -> np.ndarray:
    return theta - alpha * grad


def train_step(
    state: ModelState,
    batch: TrainBatch,
    alpha: float | None = None,
    grl_lambda: float | None = None,
) -> tuple[ModelState, LossReport]:
    """One update of every parameter group; returns the new state."""
    config = state.config
    alpha = config.learning_rate if alpha is None else alpha
    grads, report = gradients(state, batch, grl_lambda)
    new = state.clone()
    new.step = state.step + 1
    if config.optimizer == "sgd":
        for name, g in grads.items():
            new.params[name] = sgd_update(new.params[name], g, alpha)
    else:
        b1, b2 = config.beta1, config.beta2
        t = new.step
        for name, g in grads.items():
            m = b1 * new.adam_m[name] + (1.0 - b1) * g
            v = b2 * new.adam_v[name] + (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            step_dir = m_hat / (np.sqrt(v_hat) + config.adam_eps)
            if config.weight_decay:
                step_dir = step_dir + config.weight_decay * new.params[name]
            new.params[name] = new.params[name] - alpha * step_dir
            new.adam_m[name] = m
            new.adam_v[name] = v
    return new, report


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss_ctc: float
    train_loss_cls: float
    val_loss_ctc: float
    val_loss_cls: float


def _load_batch(
    records: Sequence[ManifestRecord], lexicon: Lexicon, languages: Sequence[str]
) -> TrainBatch:
    lang_index = {code: i for i, code in enumerate(languages)}
    features = []
    labels = []
    langs = []
    for rec in records:
        features.append(read_features(rec.path).astype(np.float64))
        labels.append(tuple(lexicon.lookup(rec.keyword, rec.language)))
        if rec.language not in lang_index:
            raise TrainerError(f"{rec.utt_id}: language {rec.language!r} not in model classes")
        langs.append(lang_index[rec.language])
    return TrainBatch(tuple(features), tuple(labels), tuple(langs))


def evaluate_losses(
    state: ModelState, records: Sequence[ManifestRecord], lexicon: Lexicon
) -> LossReport:
    batch = _load_batch(records, lexicon, state.languages)
    return forward(state, batch)[2]


def train(
    config: ModelConfig,
    train_records: Sequence[ManifestRecord],
    val_records: Sequence[ManifestRecord],
    lexicon: Lexicon,
    progress: Callable[[EpochStats], None] | None = None,
) -> tuple[ModelState, list[EpochStats]]:
    """Epoch loop with seeded shuffling and early stopping.

    Stops once validation CTC loss has gone ``patience`` consecutive
    epochs without improving (patience 0 therefore trains exactly one
    epoch) or after ``max_epochs``; returns the best-validation state.
    """
    if not train_records or not val_records:
        raise TrainerError("need non-empty train and validation manifests")
    languages = tuple(sorted({r.language for r in train_records}))
    if len(languages) != config.num_languages:
        raise TrainerError(
            f"config expects {config.num_languages} languages, manifest has "
            f"{len(languages)}: {languages}")
    state = init_state(config, languages)
    order = np.arange(len(train_records))
    best_val = np.inf
    best_state = state.clone()
    stale = 0
    curves: list[EpochStats] = []
    for epoch in range(config.max_epochs):
        rng = np.random.default_rng([config.seed, epoch])
        rng.shuffle(order)
        alpha = config.learning_rate * config.lr_decay**epoch
        epoch_ctc = 0.0
        epoch_cls = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            chunk = [train_records[i] for i in order[start : start + config.batch_size]]
            batch = _load_batch(chunk, lexicon, languages)
            state, report = train_step(state, batch, alpha=alpha)
            epoch_ctc += report.loss_ctc
            epoch_cls += report.loss_cls
            n_batches += 1
        val = evaluate_losses(state, val_records, lexicon)
        stats = EpochStats(epoch, epoch_ctc / n_batches, epoch_cls / n_batches,
                           val.loss_ctc, val.loss_cls)
        curves.append(stats)
        if progress is not None:
            progress(stats)
        if val.loss_ctc < best_val:
            best_val = val.loss_ctc
            best_state = state.clone()
            stale = 0
        else:
            stale += 1
        if stale >= config.patience:
            break
    return best_state, curves


def infer_utterance(state: ModelState, features: np.ndarray) -> tuple[PosteriorMatrix, np.ndarray]:
    """Posterior matrix and language logits for one utterance."""
    cache = _forward_utterance(state, features.astype(np.float64))
    return PosteriorMatrix(softmax(cache.logits).astype(np.float32)), cache.cls_logits


def ctc_posteriors(state: ModelState, features: np.ndarray) -> PosteriorMatrix:
    """Softmaxed per-frame output for one utterance."""
    return infer_utterance(state, features)[0]


def predict_language(state: ModelState, features: np.ndarray) -> int:
    """Classifier head's argmax class for one utterance."""
    cache = _forward_utterance(state, features.astype(np.float64))
    return int(np.argmax(cache.cls_logits))


def encode_pooled(state: ModelState, features: np.ndarray) -> np.ndarray:
    """Time-mean encoder output, the classifier/probe input."""
    cache = _forward_utterance(state, features.astype(np.float64))
    return cache.hidden.mean(axis=0)


def export_posteriors(
    state: ModelState, records: Sequence[ManifestRecord], out_dir: str | Path
) -> list[Path]:
    """Write one probability-mode KWSP file per utterance into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for rec in records:
        post = ctc_posteriors(state, read_features(rec.path))
        path = out_dir / f"{rec.utt_id}.kwsp"
        write_posteriors(path, post)
        written.append(path)
    return written


def language_probe_accuracy(
    state: ModelState,
    fit_records: Sequence[ManifestRecord],
    eval_records: Sequence[ManifestRecord],
    seed: int = 0,
    epochs: int = 400,
    learning_rate: float = 0.02,
) -> float:
    """How much language identity survives in the encoder features.

    Freezes the encoder, trains a fresh classifier head (same architecture
    as the model's) on standardized pooled features from ``fit_records``,
    and reports its accuracy on ``eval_records`` as a percentage.
    Near-chance output means the encoder has erased language information.
    The probe trains full-batch with Adam so its verdict does not depend
    on the adversarially trained head's own convergence.
    """
    languages = state.languages
    if not languages:
        raise TrainerError("model state carries no language names")
    lang_index = {code: i for i, code in enumerate(languages)}

    def embed(records: Sequence[ManifestRecord]) -> tuple[np.ndarray, np.ndarray]:
        xs = np.stack([encode_pooled(state, read_features(r.path)) for r in records])
        ys = np.asarray([lang_index[r.language] for r in records])
        return xs, ys

    x_fit, y_fit = embed(fit_records)
    x_eval, y_eval = embed(eval_records)
    mean = x_fit.mean(axis=0)
    scale = x_fit.std(axis=0) + 1e-6
    x_fit = (x_fit - mean) / scale
    x_eval = (x_eval - mean) / scale

    config = state.config
    rng = np.random.default_rng(seed)
    dims = [config.encoder_width] + [config.classifier_width] * (config.classifier_layers - 1)
    dims.append(config.num_languages)
    weights = [rng.normal(0.0, dims[i] ** -0.5, size=(dims[i], dims[i + 1]))
               for i in range(len(dims) - 1)]
    biases = [np.zeros(d) for d in dims[1:]]
    moments = [(np.zeros_like(w), np.zeros_like(w), np.zeros_like(b), np.zeros_like(b))
               for w, b in zip(weights, biases)]

    n = x_fit.shape[0]
    onehot = np.zeros((n, config.num_languages))
    onehot[np.arange(n), y_fit] = 1.0
    b1, b2, eps = 0.9, 0.999, 1e-8
    for step in range(1, epochs + 1):
        acts = [x_fit]
        for i, (w, b) in enumerate(zip(weights, biases)):
            z = acts[-1] @ w + b
            acts.append(np.tanh(z) if i < len(weights) - 1 else z)
        delta = (softmax(acts[-1]) - onehot) / n
        for i in range(len(weights) - 1, -1, -1):
            gw = acts[i].T @ delta
            gb = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ weights[i].T) * (1.0 - acts[i] ** 2)
            mw, vw, mb, vb = moments[i]
            mw[:] = b1 * mw + (1 - b1) * gw
            vw[:] = b2 * vw + (1 - b2) * gw * gw
            mb[:] = b1 * mb + (1 - b1) * gb
            vb[:] = b2 * vb + (1 - b2) * gb * gb
            corr1 = 1 - b1**step
            corr2 = 1 - b2**step
            weights[i] -= learning_rate * (mw / corr1) / (np.sqrt(vw / corr2) + eps)
            biases[i] -= learning_rate * (mb / corr1) / (np.sqrt(vb / corr2) + eps)

    h = x_eval
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if i < len(weights) - 1:
            h = np.tanh(h)
    predictions = h.argmax(axis=1)
    return 100.0 * float((predictions == y_eval).mean())


# --- deterministic state serialization ---------------------------------

_STATE_MAGIC = b"KWSM"
_STATE_VERSION = 1


def save_state(path: str | Path, state: ModelState) -> None:
    """Write a model state with byte-deterministic layout."""
    arrays: dict[str, np.ndarray] = {}
    for group, store in (("params", state.params), ("adam_m", state.adam_m),
                         ("adam_v", state.adam_v)):
        for name, value in store.items():
            arrays[f"{group}/{name}"] = value
    meta = {
        "config": {k: getattr(state.config, k) for k in state.config.__dataclass_fields__},
        "step": state.step,
        "languages": list(state.languages),
        "arrays": [
            {"name": name, "shape": list(arr.shape)} for name, arr in sorted(arrays.items())
        ],
    }
    header = json.dumps(meta, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_STATE_MAGIC)
        fh.write(struct.pack("<HI", _STATE_VERSION, len(header)))
        fh.write(header)
        for name, arr in sorted(arrays.items()):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_state(path: str | Path) -> ModelState:
    blob = Path(path).read_bytes()
    if blob[:4] != _STATE_MAGIC:
        raise TrainerError(f"{path}: not a model state file")
    version, header_len = struct.unpack_from("<HI", blob, 4)
    if version != _STATE_VERSION:
        raise TrainerError(f"{path}: unsupported state version {version}")
    offset = 10 + header_len
    meta = json.loads(blob[10:offset].decode("utf-8"))
    config = ModelConfig(**meta["config"])
    stores: dict[str, dict[str, np.ndarray]] = {"params": {}, "adam_m": {}, "adam_v": {}}
    for spec in meta["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += 8 * count
        group, name = spec["name"].split("/", 1)
        stores[group][name] = arr.copy()
    return ModelState(
        config=config,
        params=stores["params"],
        adam_m=stores["adam_m"],
        adam_v=stores["adam_v"],
        step=int(meta["step"]),
        languages=tuple(meta["languages"]),
    )
