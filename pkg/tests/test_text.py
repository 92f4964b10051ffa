import math

import numpy as np
import pytest

from cgdmer import numerics as nx
from cgdmer.numerics import Tensor
from cgdmer.text_mae import (
    BOS,
    EOS,
    PAD,
    SENTINEL,
    UNK,
    TextBatch,
    TextMAE,
    Vocab,
    loss_t_rec,
    mask_text,
    normalize_text,
    pooled_text_representation,
    reconstruction_nll,
    tokenize_text,
)
from cgdmer.verify.oracles import ref_t_rec

SENTENCES = [
    "Normal sinus rhythm.",
    "Sinus tachycardia at rest.",
    "Sinus bradycardia, otherwise normal.",
    "Irregular rhythm with variable intervals.",
    "Atrial fibrillation suspected.",
    "Left axis deviation noted.",
    "Borderline ecg, clinical correlation advised.",
    "No acute changes compared with prior.",
    "Low voltage in limb leads.",
    "Possible inferior infarct, age undetermined.",
]


@pytest.fixture(scope="module")
def vocab():
    return Vocab.build(SENTENCES)


def test_specials_are_reserved(vocab):
    assert vocab.tokens[:5] == ["<pad>", "<bos>", "<eos>", "<mask>", "<unk>"]
    assert len({PAD, BOS, EOS, SENTINEL, UNK}) == 5
    assert sorted(vocab.index.values()) == list(range(len(vocab)))


def test_tokenize_example(vocab):
    ids = tokenize_text("Normal sinus rhythm.", vocab, 8)
    words = [vocab.index[w] for w in ("normal", "sinus", "rhythm", ".")]
    assert ids.tolist() == [BOS] + words + [EOS, PAD, PAD]


def test_unknown_word_maps_to_unk(vocab):
    assert tokenize_text("zebra", vocab, 4).tolist() == [BOS, UNK, EOS, PAD]


def test_empty_report_is_single_eos(vocab):
    assert tokenize_text("", vocab, 4).tolist() == [EOS, PAD, PAD, PAD]


def test_truncation_keeps_eos(vocab):
    ids = tokenize_text(SENTENCES[6], vocab, 5)
    assert ids[0] == BOS and ids[-1] == EOS and len(ids) == 5


@pytest.mark.parametrize("text", SENTENCES)
def test_round_trip(vocab, text):
    assert vocab.decode(tokenize_text(text, vocab, 32)) == normalize_text(text).replace(" .", ".").replace(" ,", ",")


def test_vocab_file_round_trip(vocab, tmp_path):
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    lines = path.read_text().splitlines()
    assert lines[:4] == ["<pad>", "<bos>", "<eos>", "<mask>"]
    assert Vocab.load(path) == vocab


def test_mask_counts():
    ids = np.array([BOS] + list(range(10, 30)) + [EOS, PAD])
    m = mask_text(ids, 0.15, seed=0)
    assert len(m.masked_positions) == 3
    assert (m.corrupted[m.masked_positions] == SENTINEL).all()
    assert len(m.corrupted) == len(ids)
    np.testing.assert_array_equal(ids[m.masked_positions], m.masked_ids)
    assert mask_text(np.array([BOS, 10, 11, EOS]), 0.15, 0).masked_positions.size == 1


def test_mask_never_touches_specials():
    ids = np.array([BOS, 10, 11, 12, EOS, PAD, PAD])
    for s in range(50):
        pos = mask_text(ids, 0.5, s).masked_positions
        assert set(pos.tolist()) <= {1, 2, 3}


def test_mask_rejects_no_maskable():
    with pytest.raises(ValueError):
        mask_text(np.array([BOS, EOS, PAD]), 0.15, 0)


def test_mask_deterministic():
    ids = np.array([BOS] + list(range(10, 40)) + [EOS])
    a, b = mask_text(ids, 0.15, 5), mask_text(ids, 0.15, 5)
    np.testing.assert_array_equal(a.corrupted, b.corrupted)


def test_mask_frequency_monte_carlo():
    ids = np.array([BOS] + list(range(10, 30)) + [EOS])
    hits = np.zeros(len(ids))
    for s in range(10000):
        hits[mask_text(ids, 0.15, s).masked_positions] += 1
    freq = hits[1:-1] / 10000
    assert np.abs(freq - 0.15).max() <= 0.02


def test_uniform_logits_give_log_v():
    logits = Tensor(np.zeros((2, 3, 16)))
    valid = np.array([[True, True, False], [True, True, True]])
    got = reconstruction_nll(logits, np.array([[1, 2, 0], [3, 4, 5]]), valid).item()
    assert abs(got - math.log(16)) < 1e-12


def test_perfect_prediction_gives_zero():
    logits = np.full((1, 2, 5), -1e4)
    logits[0, 0, 1] = logits[0, 1, 3] = 0.0
    assert reconstruction_nll(Tensor(logits), np.array([[1, 3]]), np.ones((1, 2), bool)).item() == 0.0


def test_scalar_loop_oracle():
    rng = np.random.default_rng(9)
    logits = rng.normal(size=(2, 2, 6))
    valid = np.array([[True, False], [True, True]])
    targets = np.array([[4, 0], [2, 5]])
    got = reconstruction_nll(Tensor(logits), targets, valid).item()
    want = ref_t_rec([logits[0, :1].tolist(), logits[1].tolist()], [[4], [2, 5]])
    assert abs(got - want) < 1e-12


def _model(vocab, dtype=np.float64, seed=0):
    return TextMAE(np.random.default_rng(seed), len(vocab), 16, 8, 2, 16, 1, 1, dtype=dtype)


def _batch(vocab, seeds=(0, 1)):
    ids = [tokenize_text(SENTENCES[i], vocab, 16) for i in range(len(seeds))]
    return ids, TextBatch.from_masked([mask_text(x, 0.15, s) for x, s in zip(ids, seeds)])


def test_out_of_range_position_rejected(vocab):
    _, batch = _batch(vocab)
    batch.positions[0, 0] = 99
    with pytest.raises(ValueError):
        loss_t_rec(_model(vocab), batch)


def test_pooled_single_token_and_pad_invariance(vocab):
    model = _model(vocab)
    one = np.array([[EOS]])
    h, _ = model.encode(one)
    np.testing.assert_allclose(pooled_text_representation(model, one).data, h.data[:, 0], atol=1e-15)
    ids = tokenize_text(SENTENCES[0], vocab, 8)
    a = pooled_text_representation(model, ids[None]).data
    padded = np.concatenate([ids, [PAD] * 8])
    b = pooled_text_representation(model, padded[None]).data
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_pooled_matches_scalar_mean(vocab):
    model = _model(vocab)
    ids = np.array([[BOS, 7, EOS, PAD, PAD]])
    h, _ = model.encode(ids)
    want = [(h.data[0, 0, k] + h.data[0, 1, k] + h.data[0, 2, k]) / 3.0 for k in range(8)]
    np.testing.assert_allclose(model.pooled(ids).data[0], want, atol=1e-14)


def test_decoder_is_causal_over_masked_slots(vocab):
    model = _model(vocab)
    ids = tokenize_text(SENTENCES[6], vocab, 16)
    batch = TextBatch.from_masked([mask_text(ids, 0.4, 3)])
    base = model.decode_logits(batch).data
    changed = TextBatch(batch.corrupted, batch.positions, batch.targets.copy(), batch.valid)
    changed.targets[0, -1] = 5  # only feeds a later step, which does not exist
    np.testing.assert_array_equal(model.decode_logits(changed).data, base)
    changed.targets[0, 0] = 5
    after = model.decode_logits(changed).data
    np.testing.assert_array_equal(after[0, 0], base[0, 0])
    assert not np.allclose(after[0, 1:], base[0, 1:])


def test_t_rec_gradients(vocab):
    rng = np.random.default_rng(1)
    model = _model(vocab)
    for name, p in model.named_parameters():
        p.data = rng.uniform(-0.4, 0.4, size=p.shape) + (1.0 if name.endswith("gamma") else 0.0)
    _, batch = _batch(vocab)
    res = nx.grad_check_many(lambda: loss_t_rec(model, batch), model.parameters(), max_coords=3, rng=rng)
    assert res.passed, res


def test_t_rec_learns_ten_sentences(vocab):
    model = _model(vocab, dtype=np.float32, seed=3)
    ids = np.stack([tokenize_text(s, vocab, 16) for s in SENTENCES])
    opt = nx.OptimizerState.for_params(model.parameters(), lr_max=3e-3, weight_decay=1e-5, total_steps=500)
    bound = 0.5 * math.log(len(vocab))
    first = last = None
    for step in range(500):
        batch = TextBatch.from_masked([mask_text(x, 0.15, [step, i]) for i, x in enumerate(ids)])
        loss = loss_t_rec(model, batch)
        grads = nx.backward(loss, model.parameters())
        nx.adamw_step(model.parameters(), grads, opt, lr=3e-3)
        first = loss.item() if first is None else first
        last = loss.item()
        assert 0.0 <= last
        if step >= 50 and last < bound:
            break
    assert last < bound, (first, last, bound)
