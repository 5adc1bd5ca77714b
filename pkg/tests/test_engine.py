"""Engine primitives: forward semantics against independent oracles and
backward passes against central finite differences (f64)."""

import mpmath
import numpy as np
import pytest

import looplab.engine as en
from looplab.optim import AdamState, adam_update

from conftest import fd_gradient, rel_err

FD_TOL = 1e-4


def param(arr):
    return en.parameter(np.asarray(arr, dtype=np.float64), dtype=np.float64)


def check_grads(build, *params, tol=FD_TOL):
    """Autodiff grads of a scalar-valued builder vs finite differences."""
    loss = build()
    loss.backward()
    for p in params:
        ad = p.grad.copy()
        fd = fd_gradient(lambda: build().item(), p.data)
        assert rel_err(ad, fd) < tol, f"grad mismatch on {p.shape}: {rel_err(ad, fd)}"
        p.zero_grad()


# ---------------------------------------------------------------------------
# forward semantics
# ---------------------------------------------------------------------------


def test_matmul_identity():
    a = param([[1.0, 2.0], [3.0, 4.0]])
    eye = param(np.eye(2))
    out = en.matmul(a, eye)
    np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])


def test_matmul_column_pick():
    a = param([[1.0, 0.0], [0.0, 1.0]])
    b = param([[5.0], [7.0]])
    np.testing.assert_array_equal(en.matmul(a, b).data, [[5.0], [7.0]])


def test_matmul_against_triple_loop(rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    oracle = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for l in range(4):
                oracle[i, j] += a[i, l] * b[l, j]
    out = en.matmul(param(a), param(b)).data
    assert np.abs(out - oracle).max() < 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(en.ShapeError):
        en.matmul(param(np.zeros((2, 3))), param(np.zeros((2, 3))))


def test_softmax_uniform_and_stability():
    out = en.softmax_rows(param([[0.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[0.5, 0.5]])
    big = en.softmax_rows(param([[1000.0, 0.0]])).data
    assert np.isfinite(big).all()
    assert big[0, 0] > 1 - 1e-12 and big[0, 1] < 1e-12


def test_softmax_against_mpmath():
    row = [1.0, 2.0, 3.0]
    with mpmath.workdps(50):
        exps = [mpmath.e ** (x - 3.0) for x in row]
        total = sum(exps)
        expected = np.array([float(e / total) for e in exps])
    out = en.softmax_rows(param([row])).data[0]
    assert np.abs((out - expected) / expected).max() < 1e-10


def test_softmax_rows_sum_to_one(rng):
    x = rng.standard_normal((8, 13))
    out = en.softmax_rows(param(x)).data
    np.testing.assert_allclose(out.sum(axis=-1), np.ones(8), atol=1e-6)
    assert (out >= 0).all()


def test_softmax_nan_rejected():
    with pytest.raises(en.NumericsError):
        en.softmax_rows(param([[np.nan, 0.0]]))


def test_layer_norm_already_normalized():
    out = en.layer_norm(param([1.0, -1.0]), param([1.0, 1.0]), param([0.0, 0.0]), eps=0.0)
    np.testing.assert_allclose(out.data, [1.0, -1.0], atol=1e-12)


def test_layer_norm_constant_vector():
    beta = param([0.5, 0.5, 0.5])
    out = en.layer_norm(param([3.0, 3.0, 3.0]), param(np.ones(3)), beta, eps=1e-5)
    np.testing.assert_allclose(out.data, beta.data, atol=1e-12)
    assert np.isfinite(out.data).all()


def test_layer_norm_against_formula(rng):
    x = rng.standard_normal(16)
    g = rng.standard_normal(16)
    b = rng.standard_normal(16)
    eps = 1e-6
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    expected = g * (x - mu) / np.sqrt(var + eps) + b
    out = en.layer_norm(param(x), param(g), param(b), eps=eps).data
    assert rel_err(out, expected) < 1e-10


def test_layer_norm_moments(rng):
    x = rng.standard_normal((5, 32))
    out = en.layer_norm(param(x), param(np.ones(32)), param(np.zeros(32)), eps=1e-12).data
    assert np.abs(out.mean(axis=-1)).max() < 1e-6
    assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-5


def test_gelu_points():
    vals = en.gelu(param([0.0, 10.0, -10.0])).data
    assert vals[0] == 0.0
    assert abs(vals[1] - 10.0) < 1e-4
    assert abs(vals[2]) < 1e-4


def test_gelu_monotone_on_grid():
    # gelu dips below x ~ -0.75; the monotone claim holds right of the dip
    xs = np.linspace(-0.75, 6, 301)
    ys = en.gelu(param(xs)).data
    assert (np.diff(ys) >= -1e-12).all()


def test_backward_simple_quadratic():
    x = param([1.0, 2.0])
    loss = en.reduce_sum(en.mul(x, x))
    loss.backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_backward_no_path_gives_no_grad():
    x = param([1.0, 2.0])
    loss = en.reduce_sum(en.mul(param([3.0]), param([4.0])))
    loss.backward()
    assert x.grad is None


def test_backward_rejects_nonscalar():
    x = param([1.0, 2.0])
    with pytest.raises(en.ShapeError):
        en.mul(x, x).backward()


def test_backward_visits_shared_node_once(rng):
    # y used twice: gradient must accumulate over both paths exactly
    x = param([3.0])
    y = en.mul(x, x)           # x^2
    loss = en.reduce_sum(en.add(y, y))  # 2 x^2 -> dx = 4x = 12
    loss.backward()
    np.testing.assert_allclose(x.grad, [12.0])


# ---------------------------------------------------------------------------
# finite-difference gradient checks, every primitive
# ---------------------------------------------------------------------------


def test_grad_add_sub_mul_broadcast(rng):
    a = param(rng.standard_normal((3, 4)))
    b = param(rng.standard_normal((4,)))
    check_grads(lambda: en.reduce_sum(en.mul(en.add(a, b), en.sub(a, b))), a, b)


def test_grad_matmul(rng):
    a = param(rng.standard_normal((3, 4)))
    b = param(rng.standard_normal((4, 2)))
    check_grads(lambda: en.reduce_sum(en.mul(en.matmul(a, b), en.matmul(a, b))), a, b)


def test_grad_matmul_batched(rng):
    a = param(rng.standard_normal((2, 3, 4)))
    w = param(rng.standard_normal((4, 5)))
    check_grads(lambda: en.reduce_sum(en.mul(en.matmul(a, w), en.matmul(a, w))), a, w)


def test_grad_batched_both(rng):
    a = param(rng.standard_normal((2, 3, 4)))
    b = param(rng.standard_normal((2, 4, 3)))
    check_grads(lambda: en.reduce_sum(en.mul(en.matmul(a, b), en.matmul(a, b))), a, b)


def test_grad_transpose_reshape(rng):
    a = param(rng.standard_normal((2, 3, 4)))
    check_grads(
        lambda: en.reduce_sum(en.mul(en.reshape(en.transpose(a, (2, 0, 1)), (4, 6)),
                                     en.reshape(en.transpose(a, (2, 0, 1)), (4, 6)))), a)


def test_grad_softmax(rng):
    a = param(rng.standard_normal((3, 5)))
    w = param(rng.standard_normal((3, 5)))
    check_grads(lambda: en.reduce_sum(en.mul(en.softmax_rows(a), w)), a, w)


def test_grad_layer_norm(rng):
    x = param(rng.standard_normal((4, 6)))
    g = param(rng.standard_normal(6))
    b = param(rng.standard_normal(6))
    w = param(rng.standard_normal((4, 6)))
    check_grads(lambda: en.reduce_sum(en.mul(en.layer_norm(x, g, b, 1e-5), w)), x, g, b)


def test_grad_gelu_relu(rng):
    x = param(rng.standard_normal(17) * 2)
    check_grads(lambda: en.reduce_sum(en.mul(en.gelu(x), en.gelu(x))), x)
    y = param(rng.standard_normal(17) + 0.3)  # keep away from the kink
    check_grads(lambda: en.reduce_sum(en.mul(en.relu(y), en.relu(y))), y)


def test_grad_index_select(rng):
    table = param(rng.standard_normal((6, 4)))
    idx = np.array([0, 2, 2, 5])
    check_grads(
        lambda: en.reduce_sum(en.mul(en.index_select(table, 0, idx),
                                     en.index_select(table, 0, idx))), table)


def test_grad_reduce_ops(rng):
    a = param(rng.standard_normal((3, 4)))
    check_grads(lambda: en.reduce_sum(en.mul(en.reduce_mean(a, axis=1), en.reduce_mean(a, axis=1))), a)
    check_grads(lambda: en.reduce_mean(en.mul(a, a)), a)


def test_grad_squared_error(rng):
    p = param(rng.standard_normal((4, 3)))
    t = param(rng.standard_normal((4, 3)))
    check_grads(lambda: en.squared_error_mean(p, t), p, t)


def test_grad_masked_softmax(rng):
    # additive causal masking feeding softmax, the attention pattern
    s = 5
    mask = en.Tensor(np.triu(np.full((s, s), -1e30), k=1).astype(np.float64))
    a = param(rng.standard_normal((s, s)))
    v = param(rng.standard_normal((s, s)))
    check_grads(
        lambda: en.reduce_sum(en.mul(en.matmul(en.softmax_rows(en.add(a, mask)), v), v)), a, v)


# ---------------------------------------------------------------------------
# engine invariants
# ---------------------------------------------------------------------------


def test_determinism_bitwise(rng):
    x = rng.standard_normal((6, 6))

    def run():
        p = param(x.copy())
        loss = en.reduce_sum(en.mul(en.softmax_rows(en.matmul(p, p)), p))
        loss.backward()
        return loss.data.copy(), p.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1.tobytes() == l2.tobytes()
    assert g1.tobytes() == g2.tobytes()


def test_debug_checks_flag():
    big = param([1e200])
    with np.errstate(over="ignore"):
        with en.debug_checks(True):
            with pytest.raises(en.NumericsError):
                en.mul(big, big)  # overflow to inf
        out = en.mul(big, big)  # release mode: silent here, trainers check per step
    assert np.isinf(out.data).all()


def test_no_grad_blocks_tracking():
    x = param([1.0])
    with en.no_grad():
        y = en.mul(x, x)
    assert y._parents == ()
    z = en.mul(x, x)
    assert z._parents != ()


def test_detach_cuts_graph():
    x = param([2.0])
    y = en.mul(x, x).detach()
    loss = en.reduce_sum(en.mul(y, x))
    loss.backward()
    np.testing.assert_allclose(x.grad, [4.0])  # only the direct factor


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_first_step_magnitude():
    p = {"w": param(np.array([1.0, -2.0, 3.0]))}
    g = {"w": np.array([0.5, -0.25, 1.0])}
    st = AdamState(lr=0.01)
    before = p["w"].data.copy()
    adam_update(p, g, st)
    delta = p["w"].data - before
    np.testing.assert_allclose(np.abs(delta), 0.01 * np.ones(3), atol=1e-6)
    np.testing.assert_allclose(np.sign(delta), -np.sign(g["w"]))
    assert st.t == 1


def test_adam_zero_grad_keeps_params():
    p = {"w": param(np.array([1.0, 2.0]))}
    st = AdamState(lr=0.1)
    adam_update(p, {"w": np.zeros(2)}, st)
    np.testing.assert_array_equal(p["w"].data, [1.0, 2.0])


def test_adam_three_steps_vs_scalar_reference():
    # oracle: hand-rolled scalar Adam on f(w) = w^2 from w = 1, lr = 0.1
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    w, m, v = 1.0, 0.0, 0.0
    trace = []
    for t in range(1, 4):
        g = 2 * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        w = w - lr * mh / (np.sqrt(vh) + eps)
        trace.append(w)

    p = {"w": param(np.array([1.0]))}
    st = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps)
    got = []
    for _ in range(3):
        grads = {"w": 2 * p["w"].data}
        adam_update(p, grads, st)
        got.append(float(p["w"].data[0]))
    np.testing.assert_allclose(got, trace, atol=1e-10)


def test_adam_shape_mismatch():
    p = {"w": param(np.zeros(3))}
    st = AdamState()
    with pytest.raises(en.ShapeError):
        adam_update(p, {"w": np.zeros(4)}, st)
