import itertools

import numpy as np
import pytest

from favex._kernels import reference

try:
    from favex._kernels import _native as native
except ImportError:
    native = None

needs_native = pytest.mark.skipif(native is None, reason="compiled kernels not built")


def _random_case(rng, rows=5, n=7):
    a = rng.normal(size=(rows, n))
    bias = rng.normal(size=rows)
    lo = rng.normal(size=n) - 1.0
    hi = lo + rng.uniform(0.1, 2.0, size=n)
    return a, bias, lo, hi


def _random_layers(rng, dims):
    ws = [rng.normal(size=(n, m)) for m, n in zip(dims, dims[1:])]
    bs = [rng.normal(size=n) for n in dims[1:]]
    return ws, bs


@needs_native
@pytest.mark.parametrize("seed", range(5))
def test_native_matches_reference(seed):
    rng = np.random.default_rng(seed)
    a, bias, lo, hi = _random_case(rng)
    w = rng.normal(size=(4, 7))
    b = rng.normal(size=4)

    for fn, args in [
        ("affine_interval", (w, b, lo, hi)),
        ("relu_backward_lower", (a, bias, lo, hi)),
        ("linear_box_lower", (a, bias, lo, hi, (lo + hi) / 2)),
    ]:
        ref = getattr(reference, fn)(*args)
        nat = getattr(native, fn)(*args)
        for r, n_ in zip(ref, nat):
            np.testing.assert_allclose(n_, r, rtol=1e-12, atol=1e-12)

    ws, bs = _random_layers(rng, [6, 5, 4, 3])
    xs = rng.uniform(size=(11, 6))
    np.testing.assert_allclose(
        native.forward_batch(ws, bs, xs), reference.forward_batch(ws, bs, xs),
        rtol=1e-10, atol=1e-12,
    )
    for y in range(3):
        l_ref, g_ref = reference.margin_grad_batch(ws, bs, xs, y)
        l_nat, g_nat = native.margin_grad_batch(ws, bs, xs, y)
        np.testing.assert_allclose(l_nat, l_ref, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(g_nat, g_ref, rtol=1e-10, atol=1e-12)


@needs_native
def test_native_matches_reference_on_degenerate_shapes():
    # single-class heads, width-1 layers, and empty batches must agree
    rng = np.random.default_rng(11)
    for k, width, d in [(1, 1, 1), (1, 2, 1), (2, 1, 3), (3, 5, 1)]:
        ws = [rng.normal(size=(width, d)), rng.normal(size=(k, width))]
        bs = [rng.normal(size=width), rng.normal(size=k)]
        for n in (0, 1, 9):
            xs = rng.uniform(size=(n, d))
            for y in range(k):
                l_ref, g_ref = reference.margin_grad_batch(ws, bs, xs, y)
                l_nat, g_nat = native.margin_grad_batch(ws, bs, xs, y)
                assert l_ref.shape == l_nat.shape == (n,)
                assert np.all(np.isinf(l_ref) == np.isinf(l_nat))
                fin = np.isfinite(l_ref)
                np.testing.assert_allclose(l_nat[fin], l_ref[fin], rtol=1e-10)
                np.testing.assert_allclose(g_nat, g_ref, rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(
                native.forward_batch(ws, bs, xs),
                reference.forward_batch(ws, bs, xs), rtol=1e-10, atol=1e-12,
            )


def test_margin_single_class_is_unbounded():
    w = np.array([[1.0, 1.0]])
    b = np.array([0.0])
    loss, grad = reference.margin_grad_batch([w], [b], np.array([[0.3, 0.4]]), 0)
    assert np.isinf(loss[0])
    np.testing.assert_array_equal(grad, [[0.0, 0.0]])


def test_linear_box_lower_matches_corner_enumeration():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 5))
    bias = rng.normal(size=4)
    lo = rng.normal(size=5)
    hi = lo + rng.uniform(0.0, 1.5, size=5)
    vals, corners = reference.linear_box_lower(a, bias, lo, hi, (lo + hi) / 2)
    for i in range(4):
        brute = min(
            a[i] @ np.where(mask, hi, lo) + bias[i]
            for mask in itertools.product([False, True], repeat=5)
        )
        assert vals[i] == pytest.approx(brute, abs=1e-12)
        assert vals[i] == pytest.approx(a[i] @ corners[i] + bias[i], abs=1e-12)
        assert np.all(corners[i] >= lo) and np.all(corners[i] <= hi)


def test_relu_backward_lower_is_sound():
    # a·relu(h) >= a_out·h + bias_out for every h in [lo, hi]
    rng = np.random.default_rng(4)
    for _ in range(50):
        a, bias, lo, hi = _random_case(rng, rows=3, n=6)
        a_out, bias_out = reference.relu_backward_lower(a, bias, lo, hi)
        hs = rng.uniform(lo, hi, size=(200, 6))
        lhs = np.maximum(hs, 0.0) @ a.T + bias
        rhs = hs @ a_out.T + bias_out
        assert np.all(lhs >= rhs - 1e-9)


def test_margin_grad_matches_finite_differences():
    rng = np.random.default_rng(5)
    ws, bs = _random_layers(rng, [4, 6, 5, 3])
    xs = rng.uniform(0.05, 0.95, size=(30, 4))
    y = 1
    loss, grad = reference.margin_grad_batch(ws, bs, xs, y)
    h = 1e-6
    for s in range(len(xs)):
        # skip points too close to a ReLU kink for finite differences
        v = xs[s]
        pre_ok = True
        cur = v
        for i, (w, b) in enumerate(zip(ws, bs)):
            cur = w @ cur + b
            if i < len(ws) - 1:
                if np.min(np.abs(cur)) < 1e-4:
                    pre_ok = False
                cur = np.maximum(cur, 0.0)
        if not pre_ok:
            continue
        fd = np.empty(4)
        for j in range(4):
            up = v.copy()
            up[j] += h
            dn = v.copy()
            dn[j] -= h
            lu, _ = reference.margin_grad_batch(ws, bs, up[None], y)
            ld, _ = reference.margin_grad_batch(ws, bs, dn[None], y)
            fd[j] = (lu[0] - ld[0]) / (2 * h)
        np.testing.assert_allclose(grad[s], fd, rtol=1e-4, atol=1e-6)


def test_margin_competitor_tie_breaks_to_lowest_index():
    # two competitors with identical logits: gradient must follow the lower index
    w = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    b = np.zeros(3)
    loss, grad = reference.margin_grad_batch([w], [b], np.array([[0.9, 0.2]]), 0)
    assert loss[0] == pytest.approx(0.7)
    np.testing.assert_allclose(grad[0], [1.0, -1.0])
