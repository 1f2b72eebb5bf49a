"""Gradient cases shared by the unit tests and the acceptance gate.

Each case builds fresh leaf tensors from numpy inputs, evaluates a scalar
loss ``sum(w * op(...))`` with a fixed random projection ``w`` and compares
every input gradient with central differences.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np

from mcs.autodiff import Tape, Tensor, backward
from mcs.autodiff import functional as F
from mcs.autodiff import tensor as T

from fdcheck import numeric_grad, rel_error


@dataclass
class Case:
    name: str
    fn: Callable            # tensors -> Tensor
    make: Callable          # rng -> list of numpy inputs


def _away_from(values, points, gap=1e-3):
    """Nudge entries so none sits within ``gap`` of a kink."""
    for p in points:
        close = np.abs(values - p) < gap
        values[close] += 2 * gap
    return values


def _gru_params(rng, d_in=3, d_h=4):
    return [rng.normal(size=(d_in, 3 * d_h)), rng.normal(size=(d_h, 3 * d_h)),
            rng.normal(size=3 * d_h), rng.normal(size=3 * d_h)]


def _gru(x, h, wx, wh, bx, bh):
    return F.gru_cell(x, h, {"w_x": wx, "w_h": wh, "b_x": bx, "b_h": bh})


def _mha(q, k, v, wq, wk, wv, wo):
    return F.multi_head_attention(q, k, v, 2, {"w_q": wq, "w_k": wk, "w_v": wv, "w_o": wo})


CASES = [
    Case("add", lambda a, b: a + b, lambda r: [r.normal(size=(3, 4)), r.normal(size=(4,))]),
    Case("sub", lambda a, b: a - b, lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 1))]),
    Case("mul", lambda a, b: a * b, lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))]),
    Case("div", lambda a, b: a / b,
         lambda r: [r.normal(size=(2, 3)), r.uniform(0.5, 2.0, size=(2, 3)) * r.choice([-1, 1], size=(2, 3))]),
    Case("neg", lambda a: -a, lambda r: [r.normal(size=(4,))]),
    Case("power", lambda a: a ** 3.0, lambda r: [r.normal(size=(5,))]),
    Case("exp", T.exp, lambda r: [r.normal(size=(3, 2))]),
    Case("log", T.log, lambda r: [r.uniform(0.2, 3.0, size=(3, 2))]),
    Case("tanh", T.tanh, lambda r: [r.normal(size=(6,))]),
    Case("sigmoid", T.sigmoid, lambda r: [r.normal(scale=3.0, size=(6,))]),
    Case("relu", T.relu, lambda r: [_away_from(r.normal(size=(6,)), [0.0])]),
    Case("clip", lambda a: T.clip(a, -0.5, 0.5), lambda r: [_away_from(r.normal(size=(6,)), [-0.5, 0.5])]),
    Case("minimum", T.minimum, lambda r: [r.normal(size=(5,)), r.normal(size=(5,))]),
    Case("where", lambda a, b: T.where(np.array([True, False, True, False]), a, b),
         lambda r: [r.normal(size=(4,)), r.normal(size=(4,))]),
    Case("matmul", T.matmul, lambda r: [r.normal(size=(3, 3)), r.normal(size=(3, 3))]),
    Case("matmul_batched", T.matmul, lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(2, 4, 2))]),
    Case("matmul_broadcast", T.matmul, lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(4, 5))]),
    Case("reshape", lambda a: T.reshape(a, (3, 2)) * T.reshape(a, (3, 2)), lambda r: [r.normal(size=(2, 3))]),
    Case("transpose", lambda a: T.transpose(a, (2, 0, 1)), lambda r: [r.normal(size=(2, 3, 4))]),
    Case("swapaxes", lambda a: T.swapaxes(a, 0, 1), lambda r: [r.normal(size=(2, 3))]),
    Case("broadcast_to", lambda a: T.broadcast_to(a, (3, 4)), lambda r: [r.normal(size=(1, 4))]),
    Case("take", lambda a: a[np.array([0, 2, 2]), 1:], lambda r: [r.normal(size=(3, 3))]),
    Case("concat", lambda a, b: T.concat([a, b], axis=-1), lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 2))]),
    Case("stack", lambda a, b: T.stack([a, b], axis=1), lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))]),
    Case("sum", lambda a: a.sum(axis=0), lambda r: [r.normal(size=(3, 4))]),
    Case("mean", lambda a: a.mean(axis=-1, keepdims=True), lambda r: [r.normal(size=(3, 4))]),
    Case("softmax", lambda a: F.softmax(a), lambda r: [r.normal(size=(5,))]),
    Case("log_softmax", lambda a: F.log_softmax(a, axis=0), lambda r: [r.normal(size=(4, 3))]),
    Case("gumbel_softmax", lambda a: F.gumbel_softmax(a, 0.7, noise=np.array([0.3, -0.2, 1.1, 0.05])),
         lambda r: [r.normal(size=(4,))]),
    Case("linear", lambda x, w, b: F.linear(x, w, b),
         lambda r: [r.normal(size=(3, 4)), r.normal(size=(4, 2)), r.normal(size=(2,))]),
    Case("layer_norm", lambda x, g, b: F.layer_norm(x, g, b),
         lambda r: [r.normal(size=(3, 5)), r.normal(size=(5,)), r.normal(size=(5,))]),
    Case("mean_pool", lambda x: F.mean_pool(x), lambda r: [r.normal(size=(2, 5, 3))]),
    Case("gru_cell", _gru, lambda r: [r.normal(size=(2, 3)), r.uniform(-0.9, 0.9, size=(2, 4))] + _gru_params(r)),
    Case("multi_head_attention", _mha,
         lambda r: [r.normal(size=(2, 8)), r.normal(size=(3, 8)), r.normal(size=(3, 8))]
         + [r.normal(scale=0.5, size=(8, 8)) for _ in range(4)]),
    Case("masked_fill", lambda a: F.masked_fill(a, np.array([False, True, False]), 2.0),
         lambda r: [r.normal(size=(2, 3))]),
    Case("entropy_from_logits", F.entropy_from_logits, lambda r: [r.normal(size=(3, 5))]),
    Case("gather_last", lambda a: F.gather_last(a, np.array([[0, 2], [1, 1]])), lambda r: [r.normal(size=(2, 2, 3))]),
]


def check_case(case: Case, rng: np.random.Generator) -> float:
    """Worst relative error over all inputs for one random point."""
    arrays = case.make(rng)
    out_shape = np.shape(case.fn(*[Tensor(a) for a in arrays]).data)
    w = rng.normal(size=out_shape)
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = (case.fn(*leaves) * w).sum()
    backward(loss, tape)
    worst = 0.0
    for leaf, arr in zip(leaves, arrays):
        def f():
            return float((case.fn(*[Tensor(a) for a in arrays]).data * w).sum())
        num = numeric_grad(f, arr)
        worst = max(worst, rel_error(leaf.grad, num))
    return worst
