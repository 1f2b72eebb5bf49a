import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mcs.autodiff import (
    Adam,
    DimensionError,
    NonFiniteError,
    ParameterError,
    Tape,
    TapeError,
    Tensor,
    backward,
    clip_grad_norm,
    global_grad_norm,
    log,
    matmul,
)
from mcs.autodiff import checkpoint as ckpt
from mcs.autodiff import functional as F
from mcs.autodiff.nn import Linear, Module

from fdcheck import numeric_grad, rel_error
from gradcases import CASES, check_case

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("case", CASES, ids=lambda c: c.name)
def test_op_gradients_match_central_differences(case):
    rng = np.random.default_rng(abs(hash(case.name)) % 2 ** 32)
    for _ in range(10):
        assert check_case(case, rng) < 1e-4


# -- tensor contract ----------------------------------------------------


def test_tensor_rejects_non_finite_and_empty():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError):
        Tensor([np.inf])
    with pytest.raises(DimensionError):
        Tensor(np.zeros((0, 3)))


def test_log_of_zero_surfaces_as_error():
    x = Tensor([0.0, 1.0], requires_grad=True)
    with Tape(), pytest.raises(NonFiniteError):
        log(x)


# -- matmul ---------------------------------------------------------------


def test_matmul_identity_and_annihilation():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor(a)).data, a)
    out = matmul(Tensor([[1.0, 0.0], [0.0, 0.0]]), Tensor([[0.0], [5.0]]))
    np.testing.assert_array_equal(out.data, [[0.0], [0.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_sum_gradient_matches_transpose_rule():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    with Tape() as tape:
        loss = matmul(ta, tb).sum()
    backward(loss, tape)
    np.testing.assert_allclose(ta.grad, np.ones((3, 3)) @ b.T, rtol=1e-14)
    num = numeric_grad(lambda: float((a @ b).sum()), a)
    assert rel_error(ta.grad, num) < 1e-4


# -- softmax / gumbel -----------------------------------------------------


def test_softmax_examples():
    np.testing.assert_array_equal(F.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    out = F.softmax(Tensor([1000.0, 0.0])).data
    assert np.isfinite(out).all() and out[0] == 1.0 and out[1] < 1e-300


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float64, st.integers(2, 7), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    assert abs(F.softmax(Tensor(x)).data.sum() - 1.0) < 1e-12


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float64, st.integers(2, 6), elements=st.floats(-20, 20)),
       st.floats(0.05, 5.0), st.integers(0, 2 ** 31))
def test_gumbel_softmax_sums_to_one(logits, tau, seed):
    out = F.gumbel_softmax(Tensor(logits), tau, rng=np.random.default_rng(seed)).data
    assert abs(out.sum() - 1.0) < 1e-12
    assert (out >= 0).all()


def test_gumbel_softmax_rejects_non_positive_temperature():
    for tau in (0.0, -1.0):
        with pytest.raises(ParameterError):
            F.gumbel_softmax(Tensor([0.0, 1.0]), tau, rng=np.random.default_rng(0))


def test_gumbel_softmax_strong_logit_dominates():
    rng = np.random.default_rng(2)
    logits = Tensor([10.0, -10.0])
    hits = sum(F.gumbel_softmax(logits, 0.5, rng=rng).data[0] > 0.99 for _ in range(1000))
    assert hits / 1000 >= 0.99


def test_gumbel_argmax_frequencies_match_softmax():
    rng = np.random.default_rng(3)
    logits = np.array([0.5, -0.3, 1.2, 0.0])
    noise = F.sample_gumbel((100_000, 4), rng)
    samples = F.gumbel_softmax(Tensor(np.broadcast_to(logits, (100_000, 4))), 0.1, noise=noise).data
    freq = np.bincount(samples.argmax(axis=1), minlength=4) / 100_000
    target = np.exp(logits) / np.exp(logits).sum()
    assert np.abs(freq - target).max() < 0.02


def test_gumbel_replay_with_stored_noise_is_exact():
    rng = np.random.default_rng(4)
    noise = F.sample_gumbel((3,), rng)
    a = F.gumbel_softmax(Tensor([0.1, 0.2, 0.3]), 1.0, noise=noise).data
    b = F.gumbel_softmax(Tensor([0.1, 0.2, 0.3]), 1.0, noise=noise.copy()).data
    np.testing.assert_array_equal(a, b)


# -- gru --------------------------------------------------------------------


def _zero_gru(d_in, d_h):
    return {"w_x": Tensor(np.zeros((d_in, 3 * d_h))), "w_h": Tensor(np.zeros((d_h, 3 * d_h))),
            "b_x": Tensor(np.zeros(3 * d_h)), "b_h": Tensor(np.zeros(3 * d_h))}


def test_gru_zero_case():
    out = F.gru_cell(Tensor(np.zeros(3)), Tensor(np.zeros(4)), _zero_gru(3, 4))
    np.testing.assert_array_equal(out.data, np.zeros(4))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_gru_output_stays_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    params = {k: Tensor(rng.normal(scale=2.0, size=s)) for k, s in
              zip(F.GRU_KEYS, [(3, 12), (4, 12), (12,), (12,)])}
    h = F.gru_cell(Tensor(rng.normal(scale=3.0, size=(5, 3))), Tensor(rng.uniform(-0.99, 0.99, (5, 4))), params)
    # convex mix of the old state and a tanh; tanh may round to exactly 1 in float64
    assert (np.abs(h.data) <= 1).all()


def test_gru_dimension_mismatch():
    with pytest.raises(DimensionError):
        F.gru_cell(Tensor(np.zeros(2)), Tensor(np.zeros(4)), _zero_gru(3, 4))


# -- mean pool -------------------------------------------------------------


def test_mean_pool_examples():
    np.testing.assert_array_equal(F.mean_pool(Tensor([[1.5, -2.0]])).data, [1.5, -2.0])
    np.testing.assert_array_equal(F.mean_pool(Tensor([[1.0, 1.0], [3.0, 3.0]])).data, [2.0, 2.0])


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 4)), elements=finite),
       st.randoms())
def test_mean_pool_is_bit_identical_under_row_shuffle(x, rnd):
    perm = list(range(x.shape[0]))
    rnd.shuffle(perm)
    np.testing.assert_array_equal(F.mean_pool(Tensor(x)).data, F.mean_pool(Tensor(x[perm])).data)


def test_mean_pool_empty_axis():
    with pytest.raises(ParameterError):
        F.mean_pool(Tensor._wrap(np.zeros((0, 3))))


# -- attention --------------------------------------------------------------


def _mha_params(rng, d=8):
    return {k: Tensor(rng.normal(size=(d, d))) for k in F.MHA_KEYS}


def test_single_key_attention_weights_are_one():
    rng = np.random.default_rng(5)
    _, mu = F.multi_head_attention(Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(1, 8))),
                                   Tensor(rng.normal(size=(1, 8))), 2, _mha_params(rng), return_weights=True)
    np.testing.assert_array_equal(mu.data, np.ones((2, 3, 1)))


def test_identical_keys_give_projected_value_average():
    rng = np.random.default_rng(6)
    params = _mha_params(rng)
    key = rng.normal(size=8)
    v = rng.normal(size=(4, 8))
    out = F.multi_head_attention(Tensor(rng.normal(size=(2, 8))), Tensor(np.tile(key, (4, 1))), Tensor(v), 2, params)
    expected = (v.mean(axis=0) @ params["w_v"].data) @ params["w_o"].data
    np.testing.assert_allclose(out.data, np.tile(expected, (2, 1)), rtol=1e-12, atol=1e-12)


def test_indivisible_heads():
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(2, 8)))
    with pytest.raises(ParameterError):
        F.multi_head_attention(x, x, x, 3, _mha_params(rng))


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(8)
    _, mu = F.multi_head_attention(Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(5, 8))),
                                   Tensor(rng.normal(size=(5, 8))), 4, _mha_params(rng), return_weights=True)
    np.testing.assert_allclose(mu.data.sum(axis=-1), 1.0, atol=1e-12)


# -- backward ----------------------------------------------------------------


def test_backward_examples():
    p = Tensor(np.arange(4.0), requires_grad=True)
    with Tape() as tape:
        loss = p.sum()
    backward(loss, tape)
    np.testing.assert_array_equal(p.grad, np.ones(4))

    q = Tensor(np.arange(4.0), requires_grad=True)
    with Tape() as tape:
        loss = (F.softmax(q) * 0.0).sum()
    backward(loss, tape)
    np.testing.assert_array_equal(q.grad, np.zeros(4))


def test_backward_rejects_non_scalar_and_missing_tape():
    p = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        out = p * 2.0
    with pytest.raises(TapeError):
        backward(out, tape)
    with pytest.raises(TapeError):
        backward(out.sum())


def test_tensor_created_outside_tape_gets_zero_gradient():
    p = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones(2), requires_grad=True)
    opt = Adam([([p, unused], 0.1)])
    opt.zero_grad()
    with Tape() as tape:
        loss = (p * p).sum()
    backward(loss, tape)
    np.testing.assert_array_equal(unused.grad, np.zeros(2))


def test_reverse_pass_visits_nodes_in_reverse_order():
    order = []
    p = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        a = p * 2.0
        b = a + 1.0
        c = b.sum()
    for node in tape.nodes:
        inputs, fn = node._op

        def spy(g, fn=fn, node=node):
            order.append(id(node))
            return fn(g)
        node._op = (inputs, spy)
    backward(c, tape)
    assert order == [id(c), id(b), id(a)]


def test_backward_is_deterministic():
    def grads():
        rng = np.random.default_rng(9)
        lin = Linear(rng, 5, 3)
        x = rng.normal(size=(7, 5))
        with Tape() as tape:
            loss = F.log_softmax(lin(Tensor(x))).sum()
        backward(loss, tape)
        return [p.grad.copy() for p in lin.parameters()]
    for g1, g2 in zip(grads(), grads()):
        np.testing.assert_array_equal(g1, g2)


def test_tape_exit_out_of_order():
    outer, inner = Tape(), Tape()
    outer.__enter__()
    inner.__enter__()
    with pytest.raises(TapeError):
        outer.__exit__(None, None, None)
    inner.__exit__(None, None, None)
    outer.__exit__(None, None, None)


# -- optimiser ---------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.01, 20.0))
def test_clip_grad_norm_bounds_global_norm(seed, max_norm):
    rng = np.random.default_rng(seed)
    params = [Tensor(rng.normal(size=s), requires_grad=True) for s in [(3, 4), (5,), (2, 2)]]
    for p in params:
        p.grad = rng.normal(scale=10.0, size=p.shape)
    before = global_grad_norm(params)
    reported = clip_grad_norm(params, max_norm)
    assert reported == before
    assert global_grad_norm(params) <= max_norm + 1e-9


def test_adam_first_step_moves_each_weight_by_lr():
    p = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    opt = Adam([([p], 0.1)], eps=1e-5)
    opt.zero_grad()
    p.grad = np.array([0.5, -4.0, 1e-3])
    opt.step()
    # bias-corrected first step is lr * g / (|g| + eps)
    expected = np.array([1.0, -2.0, 3.0]) - 0.1 * p.grad / (np.abs(p.grad) + 1e-5)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)


# -- checkpoint ----------------------------------------------------------------


class _Toy(Module):
    def __init__(self, rng):
        self.a = Linear(rng, 3, 4)
        self.blocks = [Linear(rng, 4, 4), Linear(rng, 4, 2)]


def test_checkpoint_roundtrip(tmp_path):
    model = _Toy(np.random.default_rng(10))
    sha = ckpt.save(tmp_path / "m.ckpt", model.state_dict(), {"note": "x"})
    state, meta = ckpt.load(tmp_path / "m.ckpt")
    assert meta == {"note": "x"}
    assert list(state) == list(model.state_dict())
    other = _Toy(np.random.default_rng(11))
    other.load_state_dict(state)
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), other.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.data, p2.data)
    assert len(sha) == 64
    assert ckpt.content_hash(model.state_dict()) == ckpt.content_hash(other.state_dict())


def test_checkpoint_header_layout(tmp_path):
    blob = ckpt.encode({"w": np.arange(6.0).reshape(2, 3)})
    assert blob[:8] == b"MCSCKPT\0"
    n = int.from_bytes(blob[8:16], "little")
    import json
    header = json.loads(blob[16:16 + n])
    assert header["format_version"] == 1 and header["dtype"] == "f64-le"
    assert header["tensors"] == [{"name": "w", "shape": [2, 3], "offset": 0, "nbytes": 48}]


def test_checkpoint_errors(tmp_path):
    with pytest.raises(ckpt.CheckpointError):
        ckpt.decode(b"NOTACKPT" + bytes(16))
    model = _Toy(np.random.default_rng(12))
    state = model.state_dict()
    state["a.weight"] = np.zeros((5, 5))
    with pytest.raises(ValueError, match="a.weight"):
        model.load_state_dict(state)
