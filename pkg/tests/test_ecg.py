import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgdmer import numerics as nx
from cgdmer.ecg_mae import ECGMAE, EncoderConfig, loss_e_rec, masks_for_batch
from cgdmer.ecg_tokenizer import (
    EmbeddingTable,
    MaskSet,
    masked_per_lead,
    patchify,
    round_half_away,
    select_mask,
    tokenize,
    unpatchify,
)
from cgdmer.numerics import Tensor


def test_patchify_small():
    grid = patchify(np.array([[1.0, 2.0, 3.0, 4.0]]), 2)
    np.testing.assert_array_equal(grid.patches, [[[1, 2], [3, 4]]])


def test_patchify_counts():
    grid = patchify(np.zeros((12, 1000)), 50)
    assert grid.patches.shape == (12, 50, 20)
    assert grid.lead_count * grid.patch_count == 600


def test_patchify_lists_divisors():
    with pytest.raises(ValueError, match=r"\[1, 2, 3, 6\]"):
        patchify(np.zeros((1, 6)), 4)


@given(st.integers(1, 4), st.sampled_from([(12, 3), (20, 5), (30, 10)]))
def test_unpatchify_round_trip(leads, tn):
    t, n = tn
    x = np.arange(leads * t, dtype=float).reshape(leads, t)
    np.testing.assert_array_equal(unpatchify(patchify(x, n)), x)


def test_round_half_away():
    assert [round_half_away(v) for v in (0.5, 1.5, 2.5, -0.5, 2.4)] == [1, 2, 3, -1, 2]


def test_mask_example_counts():
    m = select_mask(12, 100, 0.75, seed=3)
    assert len(m) == 900 and m.per_lead == 75
    assert (m.mask.sum(axis=1) == 75).all()


def test_mask_rejects_degenerate():
    with pytest.raises(ValueError):
        select_mask(2, 4, 0.9, 0)  # round(3.6) = 4 = N
    with pytest.raises(ValueError):
        select_mask(2, 4, 1.0, 0)
    with pytest.raises(ValueError):
        select_mask(2, 4, 0.0, 0)


def test_mask_deterministic():
    a, b = select_mask(3, 10, 0.5, 11), select_mask(3, 10, 0.5, 11)
    np.testing.assert_array_equal(a.mask, b.mask)
    assert a.indices == b.indices


def test_mask_indices_flat_views_partition():
    m = select_mask(3, 6, 0.5, 2)
    both = np.sort(np.concatenate([m.flat_masked(), m.flat_visible()]))
    np.testing.assert_array_equal(both, np.arange(18))
    assert all(m.mask[i, j] for i, j in m.indices)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(2, 60), st.floats(0.01, 0.99), st.integers(0, 2**31))
def test_mask_count_property(leads, n, r, seed):
    k = round_half_away(n * r)
    if not 0 < k < n:
        with pytest.raises(ValueError):
            select_mask(leads, n, r, seed)
        return
    m = select_mask(leads, n, r, seed)
    assert len(m) == leads * k
    assert (m.mask.sum(axis=1) == k).all()


def test_mask_frequency_monte_carlo():
    freq = np.mean([select_mask(1, 4, 0.5, s).mask[0] for s in range(10000)], axis=0)
    assert np.abs(freq - 0.5).max() <= 0.02


# ---------------------------------------------------------------------------
# tokenizer
# ---------------------------------------------------------------------------


def _table(rng, leads=2, n=3, d=8, dtype=np.float64):
    return EmbeddingTable(rng, leads, n, d, channels=[4, 8], groups=2, dtype=dtype)


def _zero_tokenizer(table):
    for p in table.tokenizer.parameters():
        p.data[:] = 0.0


def test_tokens_equal_position_terms_with_zero_tokenizer():
    rng = np.random.default_rng(0)
    table = _table(rng)
    _zero_tokenizer(table)
    tok = tokenize(patchify(rng.normal(size=(2, 12)), 3), table)
    want = (table.spatial.data[:, None, :] + table.temporal.data[None, :, :]).reshape(6, 8)
    np.testing.assert_allclose(tok.data, want, atol=1e-15)


def test_same_patch_two_leads_differs_by_spatial():
    rng = np.random.default_rng(1)
    table = _table(rng)
    lead = rng.normal(size=12)
    tok = tokenize(patchify(np.stack([lead, lead]), 3), table).data.reshape(2, 3, 8)
    np.testing.assert_allclose(tok[0] - tok[1], np.broadcast_to(table.spatial.data[0] - table.spatial.data[1], (3, 8)),
                               atol=1e-12)


def test_identical_patches_differ_by_temporal():
    rng = np.random.default_rng(2)
    table = _table(rng, leads=1, n=2)
    patch = rng.normal(size=4)
    tok = tokenize(patchify(np.concatenate([patch, patch])[None], 2), table).data
    np.testing.assert_allclose(tok[0] - tok[1], table.temporal.data[0] - table.temporal.data[1], atol=1e-12)


def test_tokenize_dimension_mismatch():
    table = _table(np.random.default_rng(0), leads=2, n=3)
    with pytest.raises(ValueError):
        tokenize(patchify(np.zeros((3, 12)), 3), table)


# ---------------------------------------------------------------------------
# masked autoencoder
# ---------------------------------------------------------------------------


def _mae(rng, layers=1, dec=1, dtype=np.float64):
    return ECGMAE(rng, 2, 4, 5, EncoderConfig(layers, 2, 8, 16), dec, [4, 8], groups=2, dtype=dtype)


def test_encoder_input_length_one_visible_per_lead():
    rng = np.random.default_rng(0)
    mae = _mae(rng)
    ecg = rng.normal(size=(1, 2, 20))
    masks = [select_mask(2, 4, 0.75, 0)]
    enc, vis = mae.encode_visible(mae.tokens(ecg), masks)
    assert enc.shape == (1, 2, 8) and vis.shape == (1, 2)


def test_zero_layer_encoder_is_identity():
    rng = np.random.default_rng(0)
    mae = _mae(rng, layers=0)
    ecg = rng.normal(size=(2, 2, 20))
    masks = masks_for_batch(2, 4, 0.5, [1, 2])
    tokens = mae.tokens(ecg)
    enc, vis = mae.encode_visible(tokens, masks)
    np.testing.assert_array_equal(enc.data, np.take_along_axis(tokens.data, vis[:, :, None], axis=1))


def test_reconstruction_shapes_and_zero_head():
    rng = np.random.default_rng(0)
    mae = _mae(rng)
    ecg = rng.normal(size=(3, 2, 20))
    masks = masks_for_batch(2, 4, 0.5, [0, 1, 2])
    out = mae.masked_forward(ecg, masks)
    assert out.reconstructed_patches.shape == (3, 4, 5)
    assert out.masked_index.shape[1] == len(masks[0])
    mae.head.weight.data[:] = 0.0
    mae.head.bias.data[:] = 0.0
    assert np.all(mae.masked_forward(ecg, masks).reconstructed_patches.data == 0.0)


def test_pooled_zero_layers_zero_tokenizer_is_position_mean():
    rng = np.random.default_rng(0)
    mae = _mae(rng, layers=0)
    _zero_tokenizer(mae.table)
    pooled = mae.pooled_representation(rng.normal(size=(1, 2, 20))).data[0]
    np.testing.assert_allclose(pooled, mae.table.position_grid().data.mean(axis=0), atol=1e-15)


def test_token_reuse_and_lead_major_targets():
    rng = np.random.default_rng(4)
    mae = _mae(rng)
    ecg = rng.normal(size=(1, 2, 20))
    masks = [select_mask(2, 4, 0.5, 9)]
    a = mae.masked_forward(ecg, masks)
    b = mae.masked_forward(ecg, masks, tokens=mae.tokens(ecg))
    np.testing.assert_array_equal(a.reconstructed_patches.data, b.reconstructed_patches.data)
    targets = mae.patch_targets(ecg, a.masked_index)
    grid = patchify(ecg, 4).patches.reshape(1, 8, 5)
    np.testing.assert_array_equal(targets[0], grid[0, a.masked_index[0]])


def test_empty_visible_set_rejected():
    rng = np.random.default_rng(0)
    mae = _mae(rng)
    mask = MaskSet(np.ones((2, 4), dtype=bool), 0.99)
    with pytest.raises(ValueError):
        mae.encode_visible(mae.tokens(rng.normal(size=(1, 2, 20))), [mask])


def test_loss_e_rec_examples():
    x = np.random.default_rng(0).normal(size=(2, 3, 4))
    assert loss_e_rec(Tensor(x), x).item() == 0.0
    assert loss_e_rec(Tensor([[[1.0, 2.0]]]), np.array([[[1.0, 1.0]]])).item() == 1.0


def test_loss_e_rec_misaligned_keys():
    p = Tensor(np.zeros((1, 2, 3)))
    with pytest.raises(ValueError):
        loss_e_rec(p, np.zeros((1, 2, 3)), pred_keys=np.array([[0, 1]]), target_keys=np.array([[1, 0]]))


def test_masked_per_lead_examples():
    assert masked_per_lead(100, 0.75) == 75
    assert masked_per_lead(10, 0.25) == 3  # 2.5 rounds away from zero


def test_e_rec_gradient_through_model():
    rng = np.random.default_rng(5)
    mae = _mae(rng)
    for p in mae.parameters():
        p.data = p.data + rng.uniform(-0.3, 0.3, size=p.shape)
    ecg = rng.normal(size=(2, 2, 20))
    masks = masks_for_batch(2, 4, 0.5, [3, 4])

    def fn():
        out = mae.masked_forward(ecg, masks)
        return loss_e_rec(out.reconstructed_patches, mae.patch_targets(ecg, out.masked_index))

    res = nx.grad_check_many(fn, mae.parameters(), max_coords=2, rng=rng)
    assert res.passed, res
