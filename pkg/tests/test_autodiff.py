import math

import numpy as np
import pytest

from trackmil import autodiff as ad
from trackmil.autodiff import AdamState, Tensor, adam_step
from trackmil.errors import ConfigurationError, DimensionError, InputError, UsageError

from _gradcheck import check_gradients, random_weighting


def tensor(rng, rows, cols, lo=-1.0, hi=1.0, requires_grad=True):
    return Tensor(rng.uniform(lo, hi, size=(rows, cols)), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# forward values


def test_matmul_identity():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    eye = Tensor(np.eye(2))
    assert np.array_equal(ad.matmul(eye, m).data, m.data)


def test_matmul_hand_computed():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[0.0], [1.0]])
    assert np.array_equal(ad.matmul(a, b).data, [[2.0], [4.0]])


def test_matmul_shape_error_names_both_shapes():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((2, 3)))
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(a, b)


def test_softmax_columns_uniform_on_zero():
    out = ad.softmax_columns(Tensor(np.zeros((2, 2))))
    assert np.allclose(out.data, 0.5, atol=1e-15)


def test_softmax_columns_single_element():
    for x in (-100.0, 0.0, 3.7, 250.0):
        assert ad.softmax_columns(Tensor([[x]])).data[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_softmax_columns_closed_form():
    out = ad.softmax_columns(Tensor([[0.0], [math.log(3.0)]]))
    assert out.data[:, 0] == pytest.approx([0.25, 0.75], abs=1e-12)


def test_softmax_columns_sum_and_shift_invariance():
    rng = np.random.default_rng(7)
    for _ in range(10):
        m = rng.normal(size=(5, 4)) * rng.uniform(0.1, 50.0)
        out = ad.softmax_columns(Tensor(m)).data
        assert np.all(out >= 0.0)
        assert np.abs(out.sum(axis=0) - 1.0).max() <= 1e-12
        shifted = m.copy()
        shifted[:, 2] += 123.456
        out2 = ad.softmax_columns(Tensor(shifted)).data
        assert np.allclose(out, out2, atol=1e-12)


def test_conv1d_identity_kernel():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(1, 6)))
    kernel = Tensor([[0.0, 1.0, 0.0]])  # centered tap only
    out = ad.conv1d_dilated(x, kernel, kernel_size=3, dilation=1)
    assert np.allclose(out.data, x.data, atol=1e-15)


def test_conv1d_hand_computed_dilation_2():
    x = Tensor([[1.0, 2.0, 3.0, 4.0]])
    kernel = Tensor([[1.0, 0.0, -1.0]])
    out = ad.conv1d_dilated(x, kernel, kernel_size=3, dilation=2)
    assert np.array_equal(out.data, [[-3.0, -4.0, 1.0, 2.0]])


@pytest.mark.parametrize("dilation", [1, 2, 3, 5])
@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv1d_preserves_length(dilation, k):
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(3, 7)))
    kernel = Tensor(rng.normal(size=(4, 3 * k)))
    out = ad.conv1d_dilated(x, kernel, kernel_size=k, dilation=dilation)
    assert out.shape == (4, 7)


def test_conv1d_even_kernel_rejected():
    x = Tensor(np.zeros((2, 4)))
    kernel = Tensor(np.zeros((2, 4)))
    with pytest.raises(ConfigurationError):
        ad.conv1d_dilated(x, kernel, kernel_size=2, dilation=1)


def test_maxpool_hand_values_and_degenerate_t():
    out = ad.maxpool_time(Tensor([[1.0, 3.0], [2.0, 0.0]]))
    assert np.array_equal(out.data, [[3.0], [2.0]])
    single = Tensor([[4.0], [5.0]])
    assert np.array_equal(ad.maxpool_time(single).data, single.data)


def test_maxpool_tie_routes_gradient_to_first_index():
    x = Tensor([[5.0, 5.0]], requires_grad=True)
    out = ad.maxpool_time(x)
    assert out.data[0, 0] == 5.0
    ad.sum_all(out).backward()
    assert np.array_equal(x.grad, [[1.0, 0.0]])


def test_meanpool_time():
    out = ad.meanpool_time(Tensor([[1.0, 5.0, 3.0]]))
    assert out.data[0, 0] == pytest.approx(3.0)


def test_gradient_reversal_forward_is_bitwise_identity():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(4, 5))
    out = ad.gradient_reversal(Tensor(m, requires_grad=True), alpha=0.1)
    assert np.array_equal(out.data, m)


def test_gradient_reversal_backward_scales_negatively():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    out = ad.gradient_reversal(x, alpha=0.1)
    ad.sum_all(out).backward()
    assert np.allclose(x.grad, -0.1, atol=1e-15)


def test_gradient_reversal_rejects_nonpositive_alpha():
    x = Tensor(np.ones((1, 1)))
    for alpha in (0.0, -1.0):
        with pytest.raises(ConfigurationError):
            ad.gradient_reversal(x, alpha)


def test_sigmoid_at_zero():
    assert ad.sigmoid(Tensor([[0.0]])).item() == pytest.approx(0.5, abs=1e-15)


def test_sigmoid_extreme_logits_stay_finite():
    out = ad.sigmoid(Tensor([[-1000.0, 1000.0]]))
    assert np.all(np.isfinite(out.data))
    assert out.data[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert out.data[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_channel_norm_constant_row_collapses_to_shift():
    x = Tensor(np.full((2, 5), 3.0), requires_grad=True)
    gamma = Tensor(np.full((2, 1), 2.0), requires_grad=True)
    beta = Tensor([[0.5], [-0.25]], requires_grad=True)
    out = ad.channel_norm(x, gamma, beta)
    assert np.allclose(out.data[0], 0.5, atol=1e-12)
    assert np.allclose(out.data[1], -0.25, atol=1e-12)


def test_frame_norm_is_column_local():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 6))
    gamma = Tensor(rng.uniform(0.5, 1.5, size=(4, 1)))
    beta = Tensor(rng.normal(size=(4, 1)))
    base = ad.frame_norm(Tensor(x), gamma, beta).data
    bumped = x.copy()
    bumped[:, 2] += 10.0
    out = ad.frame_norm(Tensor(bumped), gamma, beta).data
    untouched = [c for c in range(6) if c != 2]
    assert np.array_equal(out[:, untouched], base[:, untouched])


def test_bce_closed_form_and_label_validation():
    assert ad.binary_cross_entropy(Tensor([[0.0]]), 1).item() == pytest.approx(math.log(2.0))
    assert ad.binary_cross_entropy(Tensor([[0.0]]), 0).item() == pytest.approx(math.log(2.0))
    with pytest.raises(InputError):
        ad.binary_cross_entropy(Tensor([[0.0]]), 2)


def test_bce_stable_for_huge_logits():
    assert ad.binary_cross_entropy(Tensor([[500.0]]), 1).item() == pytest.approx(0.0, abs=1e-12)
    assert ad.binary_cross_entropy(Tensor([[-500.0]]), 0).item() == pytest.approx(0.0, abs=1e-12)
    assert ad.binary_cross_entropy(Tensor([[-500.0]]), 1).item() == pytest.approx(500.0)


def test_cross_entropy_uniform_logits():
    assert ad.cross_entropy(Tensor(np.zeros((3, 1))), 0).item() == pytest.approx(math.log(3.0))
    with pytest.raises(InputError):
        ad.cross_entropy(Tensor(np.zeros((3, 1))), 3)


def test_l1_norm_value():
    assert ad.l1_norm(Tensor([[0.3], [-0.2]])).item() == pytest.approx(0.5)


def test_tensor_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((2, 3, 4)))
    with pytest.raises(DimensionError):
        Tensor(np.zeros((0, 3)))


def test_backward_requires_scalar():
    x = Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(UsageError):
        ad.relu(x).backward()


# ---------------------------------------------------------------------------
# gradient checks against finite differences: every differentiable op,
# >= 5 random shapes each


SHAPES = [(1, 1), (2, 3), (3, 2), (4, 5), (5, 4), (1, 7)]


@pytest.mark.parametrize("shape", SHAPES)
def test_grad_add_sub_mul_scale(shape):
    rng = np.random.default_rng(hash(shape) % 2**32)
    a = tensor(rng, *shape)
    b = tensor(rng, *shape)
    w = random_weighting(rng, shape)
    check_gradients(lambda: ad.sum_all(ad.mul(ad.add(a, b), w)), [a, b])
    check_gradients(lambda: ad.sum_all(ad.mul(ad.sub(a, b), w)), [a, b])
    check_gradients(lambda: ad.sum_all(ad.mul(ad.mul(a, b), w)), [a, b])
    check_gradients(lambda: ad.sum_all(ad.mul(ad.scale(a, -1.7), w)), [a])


@pytest.mark.parametrize("shape", [(3, 4, 2), (1, 1, 1), (2, 5, 3), (4, 2, 6), (5, 3, 3)])
def test_grad_matmul(shape):
    m, k, n = shape
    rng = np.random.default_rng(m * 100 + k * 10 + n)
    a = tensor(rng, m, k)
    b = tensor(rng, k, n)
    w = random_weighting(rng, (m, n))
    check_gradients(lambda: ad.sum_all(ad.mul(ad.matmul(a, b), w)), [a, b])


@pytest.mark.parametrize("shape", SHAPES)
def test_grad_transpose_and_sum(shape):
    rng = np.random.default_rng(31 + shape[0])
    a = tensor(rng, *shape)
    w = random_weighting(rng, (shape[1], shape[0]))
    check_gradients(lambda: ad.sum_all(ad.mul(ad.transpose(a), w)), [a])
    check_gradients(lambda: ad.sum_all(a), [a])


@pytest.mark.parametrize("shape", SHAPES)
def test_grad_elementwise_nonlinearities(shape):
    rng = np.random.default_rng(57 + shape[1])
    w = random_weighting(rng, shape)
    # keep relu inputs away from the kink at 0
    a = Tensor(rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape),
               requires_grad=True)
    check_gradients(lambda: ad.sum_all(ad.mul(ad.relu(a), w)), [a])
    b = tensor(rng, *shape, lo=-2.0, hi=2.0)
    check_gradients(lambda: ad.sum_all(ad.mul(ad.tanh(b), w)), [b])
    check_gradients(lambda: ad.sum_all(ad.mul(ad.sigmoid(b), w)), [b])


@pytest.mark.parametrize("shape", SHAPES)
def test_grad_softmax_columns(shape):
    rng = np.random.default_rng(91 + shape[0] * shape[1])
    a = tensor(rng, *shape, lo=-2.0, hi=2.0)
    w = random_weighting(rng, shape)
    check_gradients(lambda: ad.sum_all(ad.mul(ad.softmax_columns(a), w)), [a])


@pytest.mark.parametrize("case", [(1, 1, 1, 1, 5), (2, 3, 3, 1, 6), (3, 2, 3, 2, 8),
                                  (4, 4, 5, 2, 9), (2, 2, 3, 4, 7)])
def test_grad_conv1d_dilated(case):
    d_in, d_out, k, dilation, length = case
    rng = np.random.default_rng(sum(case))
    x = tensor(rng, d_in, length)
    kernel = tensor(rng, d_out, d_in * k)
    w = random_weighting(rng, (d_out, length))
    check_gradients(
        lambda: ad.sum_all(ad.mul(ad.conv1d_dilated(x, kernel, k, dilation), w)), [x, kernel]
    )


@pytest.mark.parametrize("shape", SHAPES)
def test_grad_pooling(shape):
    rng = np.random.default_rng(13 + shape[0])
    # well-separated values keep the max argument stable under fd probes
    base = rng.permutation(shape[0] * shape[1]).astype(float).reshape(shape)
    a = Tensor(base * 0.1, requires_grad=True)
    w = random_weighting(rng, (shape[0], 1))
    check_gradients(lambda: ad.sum_all(ad.mul(ad.maxpool_time(a), w)), [a])
    b = tensor(rng, *shape)
    check_gradients(lambda: ad.sum_all(ad.mul(ad.meanpool_time(b), w)), [b])


@pytest.mark.parametrize("parts", [2, 3, 4, 5, 6])
def test_grad_concat(parts):
    rng = np.random.default_rng(parts)
    xs = [tensor(rng, rng.integers(1, 4), 3) for _ in range(parts)]
    total = sum(x.rows for x in xs)
    w = random_weighting(rng, (total, 3))
    check_gradients(lambda: ad.sum_all(ad.mul(ad.concat_rows(xs), w)), xs)
    ys = [tensor(rng, 3, rng.integers(1, 4)) for _ in range(parts)]
    wc = random_weighting(rng, (3, sum(y.cols for y in ys)))
    check_gradients(lambda: ad.sum_all(ad.mul(ad.concat_cols(ys), wc)), ys)


@pytest.mark.parametrize("shape", [(2, 4), (3, 5), (1, 6), (4, 3), (5, 8)])
def test_grad_normalizations(shape):
    rng = np.random.default_rng(shape[0] * 17 + shape[1])
    x = tensor(rng, *shape, lo=-2.0, hi=2.0)
    gamma = Tensor(rng.uniform(0.5, 1.5, size=(shape[0], 1)), requires_grad=True)
    beta = Tensor(rng.normal(size=(shape[0], 1)), requires_grad=True)
    w = random_weighting(rng, shape)
    check_gradients(lambda: ad.sum_all(ad.mul(ad.channel_norm(x, gamma, beta), w)),
                    [x, gamma, beta], rel_tol=1e-4)
    check_gradients(lambda: ad.sum_all(ad.mul(ad.frame_norm(x, gamma, beta), w)),
                    [x, gamma, beta], rel_tol=1e-4)


@pytest.mark.parametrize("shape", SHAPES)
def test_grad_gradient_reversal_and_losses(shape):
    rng = np.random.default_rng(3 + shape[0] * shape[1])
    # reversal composed with a scalar readout: analytic grad must be -alpha * w
    a = tensor(rng, *shape)
    w = random_weighting(rng, shape)
    a.grad = None
    ad.sum_all(ad.mul(ad.gradient_reversal(a, 0.3), w)).backward()
    assert np.allclose(a.grad, -0.3 * w.data, atol=1e-12)

    logit = tensor(rng, 1, 1, lo=-2.0, hi=2.0)
    for label in (0, 1):
        check_gradients(lambda: ad.binary_cross_entropy(logit, label), [logit])
    logits = tensor(rng, 4, 1, lo=-2.0, hi=2.0)
    check_gradients(lambda: ad.cross_entropy(logits, 2), [logits])
    # keep |v| away from the kink at 0
    v = Tensor(rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape),
               requires_grad=True)
    check_gradients(lambda: ad.l1_norm(v), [v])


def test_grad_gradient_reversal_quality_composition():
    # trunk -> {l1 regression head, reversed cross-entropy head}: the trunk
    # gradient must equal grad(l1) - alpha * grad(ce) from separate sweeps
    rng = np.random.default_rng(123)
    alpha = 0.1
    trunk = Tensor(rng.normal(size=(5, 1)), requires_grad=True)
    wq = Tensor(rng.normal(size=(1, 5)))
    wd = Tensor(rng.normal(size=(3, 5)))
    target = Tensor([[0.37]])

    def combined():
        pred = ad.sigmoid(ad.matmul(wq, trunk))
        l1 = ad.l1_norm(ad.sub(pred, target))
        ce = ad.cross_entropy(ad.matmul(wd, ad.gradient_reversal(trunk, alpha)), 1)
        return ad.add(l1, ce)

    trunk.grad = None
    combined().backward()
    g_combined = trunk.grad.copy()

    trunk.grad = None
    ad.l1_norm(ad.sub(ad.sigmoid(ad.matmul(wq, trunk)), target)).backward()
    g_l1 = trunk.grad.copy()
    trunk.grad = None
    ad.cross_entropy(ad.matmul(wd, trunk), 1).backward()
    g_ce = trunk.grad.copy()

    expected = g_l1 - alpha * g_ce
    assert np.linalg.norm(g_combined - expected) <= 1e-12 * max(1.0, np.linalg.norm(expected))


def test_backward_accumulates_over_shared_input():
    x = Tensor([[2.0]], requires_grad=True)
    # x feeds two consumers; contributions must sum: d/dx (x*x + 3x) = 2x + 3
    loss = ad.add(ad.mul(x, x), ad.scale(x, 3.0))
    loss.backward()
    assert x.grad[0, 0] == pytest.approx(7.0)


def test_backward_accumulates_across_separate_graphs():
    x = Tensor([[1.0], [2.0]], requires_grad=True)
    ad.sum_all(x).backward()
    ad.sum_all(ad.scale(x, 2.0)).backward()
    assert np.array_equal(x.grad, [[3.0], [3.0]])


def test_no_grad_blocks_tape():
    x = Tensor([[1.0]], requires_grad=True)
    with ad.no_grad():
        y = ad.relu(x)
    assert y._backward is None and not y.requires_grad


# ---------------------------------------------------------------------------
# Adam


def test_adam_first_step_magnitude():
    rng = np.random.default_rng(0)
    p = Tensor(rng.uniform(0.2, 1.0, size=(3, 2)) * rng.choice([-1.0, 1.0], size=(3, 2)),
               requires_grad=True)
    before = p.data.copy()
    loss = ad.scale(ad.sum_all(ad.mul(p, p)), 0.5)
    loss.backward()
    state = AdamState(lr=1e-4)
    adam_step({"p": p}, state)
    step = p.data - before
    assert np.allclose(step, -1e-4 * np.sign(before), atol=1e-8)
    assert state.step == 1


def test_adam_deterministic_across_runs():
    def run():
        rng = np.random.default_rng(42)
        p = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        state = AdamState(lr=1e-3)
        for _ in range(25):
            p.grad = None
            ad.scale(ad.sum_all(ad.mul(p, p)), 0.5).backward()
            adam_step({"p": p}, state)
        return p.data.tobytes()

    assert run() == run()


def test_adam_rejects_mismatched_state():
    p = Tensor(np.zeros((2, 2)), requires_grad=True)
    state = AdamState()
    state.m["p"] = np.zeros((3, 3))
    state.v["p"] = np.zeros((3, 3))
    with pytest.raises(DimensionError):
        adam_step({"p": p}, state)
