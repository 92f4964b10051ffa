import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgdmer import numerics as nx
from cgdmer.align import AlignConfig, loss_full, loss_infonce, loss_siglip, pair_labels, similarity
from cgdmer.disentangle import DisentangledPair, HeadSet, ProjectionHead, loss_orth, project
from cgdmer.numerics import Tensor
from cgdmer.verify.oracles import ORACLES, ref_orth, run_oracles


@pytest.mark.parametrize("oracle", ORACLES, ids=lambda o: o.name)
def test_oracle_table(oracle):
    ((_, passed, err),) = run_oracles([oracle])
    assert passed, (oracle.name, err)


def test_heads_are_independent():
    heads = HeadSet(np.random.default_rng(0), 8, 4, dtype=np.float64)
    x = Tensor(np.random.default_rng(1).normal(size=(3, 8)))
    pair = project(x, heads, "ecg")
    assert pair.specific.shape == (3, 4)
    assert not np.allclose(pair.specific.data, pair.shared.data)
    assert len(heads.parameters()) == 16


def test_head_distinct_inputs_differ():
    head = ProjectionHead(np.random.default_rng(0), 6, 6, dtype=np.float64)
    out = head(Tensor(np.random.default_rng(1).normal(size=(2, 6)))).data
    assert not np.allclose(out[0], out[1])


def test_head_dimension_mismatch():
    head = ProjectionHead(np.random.default_rng(0), 6, 4)
    with pytest.raises(ValueError, match="expects dimension 6"):
        head(Tensor(np.zeros((2, 5), dtype=np.float32)))


def test_unknown_modality():
    with pytest.raises(ValueError):
        HeadSet(np.random.default_rng(0), 4, 4).pair("audio")


def _pairs(rng, b, d):
    return [DisentangledPair(Tensor(rng.normal(size=(b, d))), Tensor(rng.normal(size=(b, d))), m)
            for m in ("ecg", "text")]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(2, 8), st.integers(0, 2**31))
def test_orth_bounded(b, d, seed):
    e, t = _pairs(np.random.default_rng(seed), b, d)
    assert 0.0 <= loss_orth(e, t).item() <= 2.0 + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100.0))
def test_orth_scale_invariant(seed, scale):
    e, t = _pairs(np.random.default_rng(seed), 3, 5)
    scaled = DisentangledPair(e.specific * scale, e.shared, "ecg")
    assert abs(loss_orth(scaled, t).item() - loss_orth(e, t).item()) < 1e-12


def test_orth_zero_vector_counts_as_orthogonal():
    rng = np.random.default_rng(0)
    e, t = _pairs(rng, 2, 3)
    e.specific.data[:] = 0.0
    want = ref_orth([[0.0] * 3] * 2, e.shared.data.tolist(), t.specific.data.tolist(), t.shared.data.tolist())
    assert abs(loss_orth(e, t).item() - want) < 1e-12


def test_orth_batch_mismatch():
    rng = np.random.default_rng(0)
    e, _ = _pairs(rng, 2, 3)
    _, t = _pairs(rng, 3, 3)
    with pytest.raises(ValueError):
        loss_orth(e, t)


def test_orth_alone_is_trainable():
    rng = np.random.default_rng(0)
    heads = HeadSet(rng, 16, 16, dtype=np.float64)
    xe, xt = Tensor(rng.normal(size=(8, 16))), Tensor(rng.normal(size=(8, 16)))
    params = heads.parameters()
    opt = nx.OptimizerState.for_params(params, lr_max=1e-3, weight_decay=0.0, total_steps=500)
    history = []
    for _ in range(500):
        loss = loss_orth(project(xe, heads, "ecg"), project(xt, heads, "text"))
        history.append(loss.item())
        nx.adamw_step(params, nx.backward(loss, params), opt, lr=1e-3)
    assert min(history) < 1e-3
    assert all(0.0 <= v <= 2.0 for v in history)


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------


def test_pair_labels():
    np.testing.assert_array_equal(pair_labels(2), [[1, -1], [-1, 1]])


def test_similarity_shape_mismatch():
    with pytest.raises(ValueError):
        similarity(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


def test_siglip_decreases_when_optimizing_embeddings():
    rng = np.random.default_rng(0)
    e = Tensor(rng.normal(size=(8, 16)), requires_grad=True)
    t = Tensor(rng.normal(size=(8, 16)), requires_grad=True)
    opt = nx.OptimizerState.for_params([e.data, t.data], lr_max=1e-2, weight_decay=0.0)
    history = []
    for _ in range(100):
        loss = loss_siglip(nx.l2_normalize(e), nx.l2_normalize(t))
        history.append(loss.item())
        nx.adamw_step([e.data, t.data], nx.backward(loss, [e, t]), opt, lr=1e-2)
    assert np.all(np.diff(history) < 0)


def test_infonce_lower_temperature_sharpens_a_correct_ranking():
    s = Tensor(np.array([[0.9, 0.1, 0.0], [0.2, 0.8, 0.1], [0.0, 0.3, 0.7]]))
    values = [loss_infonce(s, tau).item() for tau in (1.0, 0.5, 0.1, 0.07, 0.01)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_infonce_rejects_bad_inputs():
    s = Tensor(np.eye(2))
    with pytest.raises(ValueError):
        loss_infonce(s, tau=0.0)
    with pytest.raises(ValueError):
        loss_infonce(s, mode="symmetric")
    with pytest.raises(ValueError):
        loss_infonce(Tensor(np.zeros((2, 3))))
    with pytest.raises(ValueError):
        AlignConfig(tau=-1.0)


def test_infonce_single_pair_warns_and_returns_zero():
    with pytest.warns(RuntimeWarning):
        assert loss_infonce(Tensor([[0.4]])).item() == 0.0


def test_infonce_modes_differ():
    s = Tensor(np.array([[0.9, 0.1], [0.2, 0.8]]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        std, lit = loss_infonce(s, mode="standard").item(), loss_infonce(s, mode="literal").item()
    assert 0.0 < std < 1e-4
    assert lit < 0.0  # off-diagonal numerators can push the literal form negative


def test_loss_full_weights():
    assert loss_full(0.5, 0.2, 0.3, 0.1, 0.4, AlignConfig()) == pytest.approx(1.5, abs=1e-15)
    zero = AlignConfig(lambda0=0, lambda1=0, lambda2=0, lambda3=0)
    assert loss_full(0.5, math.nan, 0.3, 0.1, 0.4, zero) == 0.5
    with pytest.raises(ValueError):
        AlignConfig(lambda2=-0.1)
