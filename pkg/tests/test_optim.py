"""Adam update oracle values and finite-difference checks for every primitive op."""

import numpy as np
import pytest

import ppsenn.tensor as T
from ppsenn.optim import Adam, AdamState, adam_step, gradient_check


class TestAdam:
    def test_first_step_magnitude(self):
        p = T.Tensor([1.0], requires_grad=True)
        state = AdamState(lr=0.001)
        adam_step([p], [np.array([1.0])], state)
        # closed form at t=1: lr * g / (|g| + eps) with full bias correction
        assert p.values[0] == pytest.approx(1.0 - 0.001, abs=1e-6)
        assert state.step_count == 1

    def test_zero_gradient_is_a_no_op_except_count(self):
        p = T.Tensor([2.5], requires_grad=True)
        state = AdamState()
        adam_step([p], [np.array([0.0])], state)
        assert p.values[0] == 2.5
        assert state.first_moment[0][0] == 0.0
        assert state.second_moment[0][0] == 0.0
        assert state.step_count == 1

    def test_two_constant_steps(self):
        # hand recursion: both bias-corrected steps move by ~lr for constant g
        p = T.Tensor([0.0], requires_grad=True)
        state = AdamState(lr=0.001)
        for _ in range(2):
            adam_step([p], [np.array([1.0])], state)
        assert 0.0019 < -p.values[0] < 0.0021

    def test_shape_mismatch_rejected(self):
        p = T.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(T.ShapeError):
            adam_step([p], [np.zeros(3)], AdamState())

    def test_wrapper_reads_param_grads(self):
        p = T.Tensor([3.0], requires_grad=True)
        opt = Adam([p], lr=0.1)
        opt.zero_grad()
        T.square(p)[0].backward()
        opt.step()
        assert p.values[0] < 3.0


class TestGradientCheckHarness:
    def test_affine_tanh_graph(self):
        rng = np.random.default_rng(11)
        x = T.Tensor(rng.normal(size=(3, 4)))
        w = T.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        b = T.Tensor(rng.normal(size=(1, 2)), requires_grad=True)
        err = gradient_check(lambda: T.sum_(T.tanh(T.affine(x, w, b))), [w, b], 1e-5)
        assert err < 1e-6

    def test_pure_linear_graph_is_near_exact(self):
        rng = np.random.default_rng(12)
        x = T.Tensor(rng.normal(size=(2, 3)))
        w = T.Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        err = gradient_check(lambda: T.sum_(x @ w), [w], 1e-5)
        assert err < 1e-9

    def test_leaky_relu_away_from_kink(self):
        rng = np.random.default_rng(13)
        vals = rng.normal(size=(3, 3))
        vals[np.abs(vals) < 0.2] = 0.5
        x = T.Tensor(vals, requires_grad=True)
        err = gradient_check(lambda: T.sum_(T.leaky_relu(x)), [x], 1e-5)
        assert err < 1e-6

    def test_epsilon_validated(self):
        x = T.Tensor([1.0], requires_grad=True)
        with pytest.raises(ValueError):
            gradient_check(lambda: T.sum_(x), [x], epsilon=0.5)


def _random_away_from_zero(rng, shape, margin=0.25):
    vals = rng.normal(size=shape)
    vals[np.abs(vals) < margin] += np.sign(vals[np.abs(vals) < margin] + 0.5) * margin
    return vals


# one scalar-valued graph builder per primitive op, sampled away from kinks
OP_CASES = {
    "add": lambda p, c: T.sum_(p + c),
    "sub": lambda p, c: T.sum_(c - p),
    "mul": lambda p, c: T.sum_(p * c),
    "div": lambda p, c: T.sum_(c / (T.square(p) + 1.0)),
    "neg": lambda p, c: T.sum_(T.neg(p)),
    "square": lambda p, c: T.sum_(T.square(p)),
    "exp": lambda p, c: T.sum_(T.exp(p)),
    "log": lambda p, c: T.sum_(T.log(T.square(p) + 0.5)),
    "tanh": lambda p, c: T.sum_(T.tanh(p)),
    "softplus": lambda p, c: T.sum_(T.softplus(p)),
    "leaky_relu": lambda p, c: T.sum_(T.leaky_relu(p)),
    "matmul": lambda p, c: T.sum_(p @ c),
    "transpose": lambda p, c: T.sum_(T.transpose(p) @ c),
    "affine": lambda p, c: T.sum_(T.affine(c, p, T.Tensor(np.zeros((1, p.values.shape[1]))))),
    "softmax": lambda p, c: T.sum_(T.square(T.softmax(p))),
    "log_softmax": lambda p, c: T.sum_(T.square(T.log_softmax(p))),
    "sum": lambda p, c: T.sum_(T.square(T.sum_(p, axis=0, keepdims=True))),
    "mean": lambda p, c: T.sum_(T.square(T.mean(p, axis=1, keepdims=True))),
    "concat": lambda p, c: T.sum_(T.square(T.concat([p, c], axis=0))),
    "reshape": lambda p, c: T.sum_(T.square(T.reshape(p, (1, p.values.size)))),
    "slice": lambda p, c: T.sum_(T.square(p[1:3, :2])),
    "gather_rows": lambda p, c: T.sum_(T.square(T.gather_rows(p, [0, 2, 2]))),
    "clip": lambda p, c: T.sum_(T.clip(p, -0.9, 0.9)),
    "diag_part": lambda p, c: T.sum_(T.square(T.diag_part(p))),
    "amin": lambda p, c: T.sum_(T.amin(T.square(p) + c, axis=1)),
    "bilinear_resize": lambda p, c: T.sum_(T.square(T.bilinear_resize(p, 5, 7))),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_primitive_gradients_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    build = OP_CASES[name]
    worst = 0.0
    for trial in range(100):
        shape = (4, 4) if name in ("diag_part",) else (4, 3)
        vals = _random_away_from_zero(rng, shape)
        if name == "clip":
            # keep samples off the clip boundaries
            vals = np.where(np.abs(np.abs(vals) - 0.9) < 0.05, vals * 1.2, vals)
        p = T.Tensor(vals, requires_grad=True)
        c = T.Tensor(_random_away_from_zero(rng, (shape[1], 3) if name == "matmul" else shape))
        if name == "affine":
            c = T.Tensor(rng.normal(size=(3, shape[0])))
        if name == "amin":
            # well-separated entries so the argmin is stable under perturbation
            base = rng.permuted(np.arange(vals.size, dtype=float).reshape(shape) * 0.7, axis=1)
            c = T.Tensor(base)
        worst = max(worst, gradient_check(lambda: build(p, c), [p], 1e-5))
    assert worst < 1e-5, f"{name}: max relative error {worst}"


@pytest.mark.parametrize("op", ["conv2d", "conv2d_transpose", "batchnorm", "spatial_mean"])
def test_image_op_gradients(op):
    rng = np.random.default_rng(99)
    x = T.Tensor(rng.normal(size=(2, 3, 5, 5)), requires_grad=True)
    if op == "conv2d":
        w = T.Tensor(rng.normal(size=(4, 3, 4, 4)) * 0.3, requires_grad=True)
        b = T.Tensor(rng.normal(size=(4,)), requires_grad=True)
        fn = lambda: T.sum_(T.square(T.conv2d(x, w, b, stride=2, pad=1)))
        params = [x, w, b]
    elif op == "conv2d_transpose":
        w = T.Tensor(rng.normal(size=(3, 2, 4, 4)) * 0.3, requires_grad=True)
        b = T.Tensor(rng.normal(size=(2,)), requires_grad=True)
        fn = lambda: T.sum_(T.square(T.conv2d_transpose(x, w, b, stride=2, pad=1)))
        params = [x, w, b]
    elif op == "batchnorm":
        gamma = T.Tensor(rng.normal(size=(3,)) + 2.0, requires_grad=True)
        beta = T.Tensor(rng.normal(size=(3,)), requires_grad=True)
        rm = rng.normal(size=(3,))
        rv = np.abs(rng.normal(size=(3,))) + 0.5
        fn = lambda: T.sum_(T.square(T.batchnorm_inference(x, gamma, beta, rm, rv)))
        params = [x, gamma, beta]
    else:
        fn = lambda: T.sum_(T.square(T.spatial_mean(x)))
        params = [x]
    assert gradient_check(fn, params, 1e-5) < 1e-5
