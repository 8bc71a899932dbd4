"""Gradient and contract checks for the autodiff engine.

Every differentiable op is checked against central finite differences
(step 1e-5, relative tolerance 1e-4) over 100 seeded random trials on
small shapes.
"""

import math

import numpy as np
import pytest

from dancesynth import autodiff as ad
from dancesynth.rng import derive

FD_STEP = 1e-5
FD_RTOL = 1e-4
N_TRIALS = 100


def fd_check(build, leaves):
    """Compare analytic gradients of scalar build(params) to central FD.

    `build` maps a list of parameter Nodes to a loss Node; it is re-invoked
    with fresh nodes for every perturbed evaluation, so it must be pure.
    """
    params = [ad.parameter(leaf.copy()) for leaf in leaves]
    loss = build(params)
    ad.backward(loss)
    analytic = [
        p.grad if p.grad is not None else np.zeros_like(p.value) for p in params
    ]

    def value_at(arrs):
        return float(build([ad.parameter(a) for a in arrs]).value)

    for i, leaf in enumerate(leaves):
        numeric = np.zeros_like(leaf)
        flat = numeric.reshape(-1)
        for j in range(leaf.size):
            plus = [l.copy() for l in leaves]
            plus[i].reshape(-1)[j] += FD_STEP
            minus = [l.copy() for l in leaves]
            minus[i].reshape(-1)[j] -= FD_STEP
            flat[j] = (value_at(plus) - value_at(minus)) / (2 * FD_STEP)
        err = np.abs(analytic[i] - numeric)
        denom = np.maximum(np.abs(numeric), 1.0)
        assert (err / denom).max() < FD_RTOL, f"leaf {i}: max rel err {(err/denom).max()}"


def test_op_gradients_match_finite_differences():
    for trial in range(N_TRIALS):
        rng = derive(7, "fd", trial)

        a = rng.standard_normal((4, 5))
        b = rng.standard_normal((4, 5))
        fd_check(lambda ps: ad.mean(ad.add(*ps)), [a, b])
        fd_check(lambda ps: ad.mean(ad.mul(*ps)), [a, b])

        bias = rng.standard_normal(5)
        fd_check(lambda ps: ad.mean(ad.add(*ps)), [a, bias])

        w = rng.standard_normal((5, 3))
        fd_check(lambda ps: ad.mean(ad.matmul(*ps)), [a, w])
        fd_check(lambda ps: ad.sum_all(ad.transpose(ps[0])), [a])
        fd_check(lambda ps: ad.mean(ad.scale(ps[0], -1.7)), [a])
        # keep relu inputs away from the kink
        ar = a.copy()
        ar[np.abs(ar) < 1e-3] = 0.5
        fd_check(lambda ps: ad.mean(ad.relu(ps[0])), [ar])
        fd_check(lambda ps: ad.mean(ad.softmax(ps[0])), [a])
        fd_check(lambda ps: ad.sum_all(ad.log_softmax(ps[0])), [a])

        gain = rng.standard_normal(5)
        lbias = rng.standard_normal(5)
        fd_check(lambda ps: ad.mean(ad.layer_norm(*ps)), [a, gain, lbias])

        x = rng.standard_normal((6, 3))
        kern = rng.standard_normal((3, 3, 2))
        fd_check(lambda ps: ad.mean(ad.conv1d(*ps)), [x, kern])

        table = rng.standard_normal((4, 7))
        tokens = rng.integers(0, 7, size=(5, 2))
        fd_check(lambda ps: ad.mean(ad.embedding(ps[0], tokens)), [table])

        fd_check(lambda ps: ad.mean(ad.concat(ps, axis=-1)), [a, b])
        fd_check(lambda ps: ad.mean(ad.slice_rows(ps[0], 1, 3)), [a])
        fd_check(lambda ps: ad.mean(ad.slice_cols(ps[0], 1, 4)), [a])
        fd_check(lambda ps: ad.mean(ad.reshape(ps[0], (5, 4))), [a])

        logits = rng.standard_normal((6, 4))
        targets = rng.integers(0, 4, size=6)
        fd_check(lambda ps: ad.mean(ad.cross_entropy(ps[0], targets)), [logits])

        fd_check(
            lambda ps: ad.mean(ad.dropout(ps[0], 0.3, derive(11, trial))), [a]
        )


def test_composite_graph_gradient():
    # a small attention-flavoured composite, FD-checked end to end
    for trial in range(10):
        rng = derive(13, "composite", trial)
        x = rng.standard_normal((4, 6))
        w1 = rng.standard_normal((6, 6))
        w2 = rng.standard_normal((6, 2))
        gain = np.ones(2)
        bias = np.zeros(2)

        def build(ps):
            xn, w1n, w2n, gn, bn = ps
            h = ad.relu(ad.matmul(xn, w1n))
            s = ad.softmax(ad.scale(ad.matmul(h, ad.transpose(h)), 1 / math.sqrt(6)))
            out = ad.matmul(ad.matmul(s, h), w2n)
            return ad.mean(ad.layer_norm(out, gn, bn))

        fd_check(build, [x, w1, w2, gain, bias])


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = derive(3, "softmax")
    logits = rng.standard_normal((8, 7)) * 5
    s = ad.softmax(ad.constant(logits)).value
    assert np.abs(s.sum(axis=-1) - 1.0).max() < 1e-12
    shifted = ad.softmax(ad.constant(logits + 123.456)).value
    assert np.abs(s - shifted).max() < 1e-10


def test_softmax_singleton_axis():
    out = ad.softmax(ad.constant(np.array([[3.7]]))).value
    assert out.tolist() == [[1.0]]


def test_cross_entropy_uniform_logits_is_log_300():
    logits = np.zeros((4, 300))
    nll = ad.cross_entropy(ad.constant(logits), np.array([0, 10, 150, 299])).value
    assert np.abs(nll - math.log(300)).max() < 1e-12


def test_layer_norm_constant_vector_is_zero():
    out = ad.layer_norm(
        ad.constant(np.full((3, 6), 2.5)), np.ones(6), np.zeros(6)
    ).value
    assert np.abs(out).max() == 0.0


def test_linear_map_gradient_is_broadcast_input():
    rng = derive(5, "linear")
    w = ad.parameter(rng.standard_normal((4, 3)))
    x = rng.standard_normal((3, 1))
    loss = ad.sum_all(ad.matmul(w, ad.constant(x)))
    ad.backward(loss)
    assert np.allclose(w.grad, np.tile(x.T, (4, 1)))


def test_constant_leaf_gets_no_gradient():
    c = ad.constant(np.ones((2, 2)))
    p = ad.parameter(np.ones((2, 2)))
    loss = ad.mean(ad.mul(c, p))
    ad.backward(loss)
    assert c.grad is None or np.all(c.grad == 0)
    assert p.grad is not None


def test_backward_twice_is_an_error():
    loss = ad.mean(ad.parameter(np.ones(3)))
    ad.backward(loss)
    with pytest.raises(RuntimeError):
        ad.backward(loss)


def test_backward_rejects_non_scalar():
    with pytest.raises(ad.ShapeError):
        ad.backward(ad.parameter(np.ones(3)))


@pytest.mark.parametrize(
    "op",
    [
        lambda: ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3)))),
        lambda: ad.layer_norm(ad.constant(np.ones((2, 3))), np.ones(2), np.zeros(3)),
        lambda: ad.conv1d(ad.constant(np.ones((4, 3))), ad.constant(np.ones((3, 2, 5)))),
        lambda: ad.cross_entropy(ad.constant(np.ones((2, 3))), np.array([0])),
        lambda: ad.slice_rows(ad.constant(np.ones((2, 3))), 0, 5),
    ],
)
def test_shape_mismatches_name_shapes(op):
    with pytest.raises(ad.ShapeError) as exc:
        op()
    assert "(" in str(exc.value)  # both shapes spelled out


def test_gradients_accumulate_across_shared_use():
    p = ad.parameter(np.array([2.0]))
    loss = ad.sum_all(ad.add(ad.mul(p, p), p))  # d/dp (p^2 + p) = 2p + 1
    ad.backward(loss)
    assert np.allclose(p.grad, [5.0])
