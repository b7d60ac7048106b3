import numpy as np
import pytest

from methodtagger.corpus import LabeledSentence
from methodtagger.labels import Category, LabelScheme, is_valid_bio
from methodtagger.model import TaggerModel, split_long
from methodtagger.synthetic import separable_corpus
from methodtagger.training import (AdamW, EmptyData, ModelSpec, TrainConfig, build_model,
                                   make_examples, train)

from oracles import central_difference, max_relative_error


def small_model(scheme="coarse", scorer="window-linear", decoder="crf", seed=0):
    sents = separable_corpus(20, seed=seed).sentences
    spec = ModelSpec(scorer=scorer, decoder=decoder, dim=4, hidden=3)
    return build_model(spec, LabelScheme(scheme), sents, seed), sents


@pytest.mark.parametrize("scorer", ["window-linear", "bilstm"])
@pytest.mark.parametrize("decoder", ["crf", "softmax"])
def test_model_gradients(scorer, decoder):
    model, sents = small_model(scorer=scorer, decoder=decoder)
    tokens, gold, key = make_examples(model, sents[:1])[0]
    tokens, gold = tokens[:4], gold[:4]
    gold = model.scheme.encode([lab if i or lab != "I" else "B" for i, lab in enumerate(model.scheme.decode(gold))])
    _, grads = model.nll_and_gradients(tokens, gold, key)
    for name, value in model.parameters().items():
        num = central_difference(lambda: model.loss(tokens, gold, key), value)
        assert max_relative_error(grads[name], num) < 1e-5, name


def test_serialization_roundtrip_is_exact(tmp_path):
    model, sents = small_model("fine-binary")
    model.save(tmp_path / "m.npz")
    back = TaggerModel.load(tmp_path / "m.npz")
    assert back.to_bytes() == model.to_bytes()
    assert back.decode(sents[0].tokens) == model.decode(sents[0].tokens)


def test_split_long_respects_limit():
    labels = ["O", "B", "I", "I", "O", "O", "B", "I", "O", "B"]
    pieces = split_long(labels, 4)
    assert pieces[0][0] == 0 and pieces[-1][1] == len(labels)
    assert all(hi - lo <= 4 for lo, hi in pieces)
    assert all(a[1] == b[0] for a, b in zip(pieces, pieces[1:]))


def test_long_sentences_decode_valid():
    model, sents = small_model()
    model.max_len = 5
    tokens = [t for s in sents[:4] for t in s.tokens]
    out = model.decode(tokens)
    # each chunk starts outside a span, so the joined output stays valid
    assert len(out) == len(tokens) and is_valid_bio(out)


def test_adamw_step_matches_hand_computation():
    p = {"w": np.array([1.0, -2.0]), "transitions": np.array([0.5])}
    opt = AdamW(p, lr=0.1, weight_decay=0.5)
    opt.step({"w": np.array([0.2, -0.4]), "transitions": np.array([1.0])})
    # first step: m_hat = g, v_hat = g^2, so the Adam move is lr * sign(g)
    np.testing.assert_allclose(p["w"], [1.0 - 0.05 - 0.1, -2.0 + 0.1 + 0.1], atol=1e-6)
    np.testing.assert_allclose(p["transitions"], [0.5 - 0.1], atol=1e-6)


def test_train_improves_and_restores_best():
    model, sents = small_model()
    examples = make_examples(model, sents)
    before = np.mean([model.loss(*e) for e in examples])
    history = []
    train(model, sents, TrainConfig(learning_rate=0.05, max_epochs=5, dev_fraction=0.0), history=history)
    after = np.mean([model.loss(*e) for e in examples])
    assert after < before
    assert after == pytest.approx(min(h["dev_loss"] for h in history), rel=1e-9)


def test_zero_epochs_is_identity():
    model, sents = small_model()
    snapshot = model.to_bytes()
    train(model, sents, TrainConfig(max_epochs=0))
    assert model.to_bytes() == snapshot


def test_train_on_empty_raises():
    model, _ = small_model()
    with pytest.raises(EmptyData):
        train(model, [], TrainConfig())


def test_training_is_deterministic():
    a, sents = small_model(seed=3)
    b, _ = small_model(seed=3)
    cfg = TrainConfig(learning_rate=0.05, max_epochs=3, seed=9, unk_dropout=0.1)
    assert train(a, sents, cfg).to_bytes() == train(b, sents, cfg).to_bytes()


def test_make_examples_expands_for_fine_schemes():
    model, _ = small_model("fine")
    s = LabeledSentence(["x", "y"], ["B", "O"], Category.RL, 2000, "p")
    (_, gold, _), = make_examples(model, [s])
    assert model.scheme.decode(gold) == ["B-RL", "O-RL"]


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"lr": 1})
    with pytest.raises(ValueError):
        ModelSpec.from_dict({"layers": 2})
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)


def test_precomputed_scorer_training(tmp_path):
    from methodtagger.encoder import PrecomputedVectors
    sents = separable_corpus(12, seed=1).sentences
    rng = np.random.default_rng(0)
    store = PrecomputedVectors({s.key: rng.normal(size=(len(s.tokens), 5)) for s in sents})
    store.save(tmp_path / "v.jsonl")
    spec = ModelSpec(scorer="precomputed", precomputed=str(tmp_path / "v.jsonl"))
    model = build_model(spec, LabelScheme("coarse"), sents, 0)
    train(model, sents, TrainConfig(learning_rate=0.05, max_epochs=2))
    assert len(model.decode(sents[0].tokens, sents[0].key)) == len(sents[0].tokens)
