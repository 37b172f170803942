import math

import numpy as np
import pytest

from attrkws.kwsp import read_posteriors, write_features
from attrkws.lexicon import LexiconRow, build_lexicon
from attrkws.manifest import ManifestRecord
from attrkws.trainer import (
    LossReport,
    ModelConfig,
    NonFiniteError,
    TrainBatch,
    TrainerError,
    encoder_grads_split,
    export_posteriors,
    forward,
    gradients,
    init_state,
    load_state,
    save_state,
    sgd_update,
    train,
    train_step,
    unfold_context,
)

TINY = ModelConfig(
    feature_dim=3, vocab_size=3, num_languages=2, context=1,
    encoder_layers=2, encoder_width=5, classifier_layers=2, classifier_width=4,
    optimizer="sgd", grl_lambda=0.7, learning_rate=0.05, seed=1,
)


def tiny_state(rng=None, config=TINY):
    state = init_state(config, ("aa", "bb"))
    if rng is not None:
        for key in state.params:
            state.params[key] = rng.normal(0.0, 0.4, size=state.params[key].shape)
    return state


def tiny_batch(rng, n=3, feature_dim=3, vocab=3):
    feats, labels, langs = [], [], []
    for _ in range(n):
        frames = int(rng.integers(2, 5))
        feats.append(rng.normal(size=(frames, feature_dim)))
        length = int(rng.integers(1, 3))
        labels.append(tuple(int(x) for x in rng.integers(1, vocab, size=length)))
        langs.append(int(rng.integers(0, 2)))
    return TrainBatch(tuple(feats), tuple(labels), tuple(langs))


def test_config_validation():
    with pytest.raises(TrainerError):
        ModelConfig(feature_dim=3, vocab_size=1, num_languages=2)
    with pytest.raises(TrainerError):
        ModelConfig(feature_dim=3, vocab_size=3, num_languages=1)
    with pytest.raises(TrainerError):
        ModelConfig(feature_dim=3, vocab_size=3, num_languages=2, grl_lambda=-0.1)
    with pytest.raises(TrainerError):
        ModelConfig(feature_dim=3, vocab_size=3, num_languages=2, learning_rate=0.0)
    with pytest.raises(TrainerError):
        ModelConfig(feature_dim=3, vocab_size=3, num_languages=2, optimizer="sgdm")


def test_unfold_context_window():
    x = np.arange(6, dtype=float).reshape(3, 2)
    u = unfold_context(x, 1)
    assert u.shape == (3, 6)
    np.testing.assert_array_equal(u[0], [0, 0, 0, 1, 2, 3])
    np.testing.assert_array_equal(u[1], [0, 1, 2, 3, 4, 5])
    np.testing.assert_array_equal(u[2], [2, 3, 4, 5, 0, 0])
    np.testing.assert_array_equal(unfold_context(x, 0), x)


def test_forward_zero_classifier_head_gives_uniform_loss(rng):
    state = tiny_state(rng)
    last = f"cls.{TINY.classifier_layers - 1}"
    state.params[f"{last}.W"] = np.zeros_like(state.params[f"{last}.W"])
    state.params[f"{last}.b"] = np.zeros_like(state.params[f"{last}.b"])
    batch = tiny_batch(rng)
    _, lang_logits, report = forward(state, batch)
    assert np.all(lang_logits == 0.0)
    assert report.loss_cls == pytest.approx(math.log(2))


def test_forward_single_frame_reduces_to_softmax_loss(rng):
    state = tiny_state(rng)
    batch = TrainBatch((rng.normal(size=(1, 3)),), ((1,),), (0,))
    ctc_logits, _, report = forward(state, batch)
    z = ctc_logits[0].values.astype(np.float64)[0]
    expected = -(z[1] - np.log(np.exp(z - z.max()).sum()) - z.max())
    assert report.loss_ctc == pytest.approx(expected, abs=1e-6)


def test_forward_batch_of_identical_utterances(rng):
    state = tiny_state(rng)
    feats = rng.normal(size=(3, 3))
    single = TrainBatch((feats,), ((1,),), (1,))
    double = TrainBatch((feats, feats.copy()), ((1,), (1,)), (1, 1))
    _, _, one = forward(state, single)
    _, _, two = forward(state, double)
    assert two.loss_ctc == pytest.approx(one.loss_ctc)
    assert two.loss_cls == pytest.approx(one.loss_cls)


def test_grl_forward_is_identity_in_lambda(rng):
    batch = tiny_batch(rng)
    outs = []
    for lam in (0.0, 0.5, 2.0):
        config = ModelConfig(**{**{f: getattr(TINY, f) for f in TINY.__dataclass_fields__},
                               "grl_lambda": lam})
        state = tiny_state(np.random.default_rng(5), config)
        ctc_logits, lang_logits, _ = forward(state, batch)
        outs.append((tuple(pm.values.tobytes() for pm in ctc_logits), lang_logits.tobytes()))
    assert outs[0] == outs[1] == outs[2]


def test_gradients_match_finite_differences(rng):
    state = tiny_state(rng)
    batch = tiny_batch(rng)
    grads, _ = gradients(state, batch)
    step = 1e-5
    for name, grad in grads.items():
        numeric = np.zeros_like(grad)
        flat = state.params[name]
        it = np.nditer(grad, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            vals = []
            for sign in (1.0, -1.0):
                flat[idx] += sign * step
                _, _, report = forward(state, batch)
                if name.startswith("enc."):
                    vals.append(report.loss_ctc - TINY.grl_lambda * report.loss_cls)
                elif name.startswith("out."):
                    vals.append(report.loss_ctc)
                else:
                    vals.append(report.loss_cls)
                flat[idx] -= sign * step
            numeric[idx] = (vals[0] - vals[1]) / (2 * step)
        denom = np.maximum(np.abs(numeric), np.abs(grad))
        mask = denom > 1e-8
        assert np.max(np.abs(numeric - grad)[mask] / denom[mask]) < 1e-4, name


def test_reversal_update_matches_explicit_gradients(rng):
    state = tiny_state(rng)
    batch = tiny_batch(rng)
    alpha, lam = 0.05, TINY.grl_lambda
    grads_ctc, grads_cls = encoder_grads_split(state, batch)
    updated, _ = train_step(state, batch, alpha=alpha)
    for key in grads_ctc:
        explicit = state.params[key] - alpha * (grads_ctc[key] - lam * grads_cls[key])
        assert np.abs(explicit - updated.params[key]).max() < 1e-10


def test_update_rule_scalar_cancellation_exact():
    theta = sgd_update(np.float64(1.0), np.float64(0.2) - 0.5 * np.float64(0.4), 0.1)
    assert theta == 1.0


def test_lambda_zero_ignores_classifier_parameters(rng):
    state = tiny_state(rng)
    batch = tiny_batch(rng)
    grads_a, _ = gradients(state, batch, grl_lambda=0.0)
    other = state.clone()
    for key in other.params:
        if key.startswith("cls."):
            other.params[key] = rng.normal(size=other.params[key].shape)
    grads_b, _ = gradients(other, batch, grl_lambda=0.0)
    for key in grads_a:
        if not key.startswith("cls."):
            np.testing.assert_array_equal(grads_a[key], grads_b[key])


def test_adamw_step_updates_moments(rng):
    config = ModelConfig(**{**{f: getattr(TINY, f) for f in TINY.__dataclass_fields__},
                           "optimizer": "adamw", "weight_decay": 0.01})
    state = tiny_state(rng, config)
    batch = tiny_batch(rng)
    new, report = train_step(state, batch)
    assert new.step == 1
    assert isinstance(report, LossReport)
    assert any(np.abs(new.adam_m[k]).max() > 0 for k in new.adam_m)
    assert all(np.isfinite(v).all() for v in new.params.values())


def test_non_finite_inputs_raise(rng):
    state = tiny_state(rng)
    bad = TrainBatch((np.full((2, 3), np.nan),), ((1,),), (0,))
    with pytest.raises(NonFiniteError):
        forward(state, bad)


def _write_dataset(tmp_path, rng, n=24, feature_dim=3):
    lex = build_lexicon(
        [LexiconRow("ka", "aa", ("a", "b")), LexiconRow("ba", "bb", ("b", "a"))],
        "phoneme")
    records = []
    for i in range(n):
        lang = ("aa", "bb")[i % 2]
        keyword = {"aa": "ka", "bb": "ba"}[lang]
        frames = int(rng.integers(3, 6))
        feats = rng.normal(size=(frames, feature_dim)).astype(np.float32)
        path = tmp_path / f"u{i}.kwsp"
        write_features(path, feats)
        records.append(ManifestRecord(f"u{i}", str(path), keyword, lang, "train"))
    return lex, records


def test_train_patience_zero_runs_exactly_one_epoch(tmp_path, rng):
    lex, records = _write_dataset(tmp_path, rng)
    config = ModelConfig(feature_dim=3, vocab_size=len(lex.vocab), num_languages=2,
                         encoder_width=4, classifier_width=4, optimizer="sgd",
                         learning_rate=0.01, batch_size=8, max_epochs=10, patience=0)
    _, curves = train(config, records[:16], records[16:], lex)
    assert len(curves) == 1


def test_train_determinism_and_best_state(tmp_path, rng):
    lex, records = _write_dataset(tmp_path, rng)
    config = ModelConfig(feature_dim=3, vocab_size=len(lex.vocab), num_languages=2,
                         encoder_width=4, classifier_width=4, optimizer="sgd",
                         learning_rate=0.01, batch_size=8, max_epochs=3, patience=3, seed=11)
    state_a, curves_a = train(config, records[:16], records[16:], lex)
    state_b, curves_b = train(config, records[:16], records[16:], lex)
    assert curves_a == curves_b
    for key in state_a.params:
        np.testing.assert_array_equal(state_a.params[key], state_b.params[key])
    assert state_a.languages == ("aa", "bb")


def test_export_posteriors_rows_sum_to_one(tmp_path, rng):
    lex, records = _write_dataset(tmp_path, rng, n=4)
    config = ModelConfig(feature_dim=3, vocab_size=len(lex.vocab), num_languages=2,
                         encoder_width=4, classifier_width=4)
    state = init_state(config, ("aa", "bb"))
    out = tmp_path / "post"
    written = export_posteriors(state, records, out)
    assert len(written) == 4
    for rec, path in zip(records, written):
        post = read_posteriors(path)
        assert np.abs(post.values.sum(axis=1) - 1.0).max() < 1e-5
        assert path.name == f"{rec.utt_id}.kwsp"
    # frame count preserved
    first = read_posteriors(written[0])
    from attrkws.kwsp import read_features

    assert first.frames == read_features(records[0].path).shape[0]
    # byte-identical on re-export
    out2 = tmp_path / "post2"
    written2 = export_posteriors(state, records, out2)
    assert written[0].read_bytes() == written2[0].read_bytes()


def test_state_serialization_round_trip(tmp_path, rng):
    state = tiny_state(rng)
    state.languages = ("aa", "bb")
    state.step = 7
    path = tmp_path / "model.kwsm"
    save_state(path, state)
    again = load_state(path)
    assert again.config == state.config
    assert again.step == 7
    assert again.languages == ("aa", "bb")
    for key in state.params:
        np.testing.assert_array_equal(again.params[key], state.params[key])
    save_state(tmp_path / "model2.kwsm", again)
    assert path.read_bytes() == (tmp_path / "model2.kwsm").read_bytes()
