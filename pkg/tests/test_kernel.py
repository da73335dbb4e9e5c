import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dgvqa.kernel import (
    DenseParams,
    NonFiniteGradientError,
    OptimState,
    Rng,
    cross_entropy_loss,
    finite_diff_check,
    init_dense,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    optimizer_step,
    save_checkpoint,
    sigmoid_bce,
    softmax,
    zeros_dense,
)


def scalar_net(w1, b1, w2, b2):
    f = lambda x: np.array(x, dtype=np.float64)
    return DenseParams(f(w1), f(b1), f(w2), f(b2))


class TestForward:
    def test_zero_params_give_zero_logits(self):
        p = zeros_dense(5, 7, 3)
        z, _ = mlp_forward(p, np.arange(5.0))
        assert np.array_equal(z, np.zeros(3))

    def test_hand_computed(self):
        p = scalar_net([[1.0]], [0.0], [[2.0]], [3.0])
        z, _ = mlp_forward(p, [5.0], 0.0, "eval")
        assert z.tolist() == [13.0]

    def test_relu_clamps(self):
        p = scalar_net([[1.0]], [0.0], [[2.0]], [3.0])
        z, _ = mlp_forward(p, [-5.0], 0.0, "eval")
        assert z.tolist() == [3.0]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dim"):
            mlp_forward(zeros_dense(4, 3, 2), np.zeros(5))

    def test_train_without_dropout_matches_eval(self):
        p = init_dense(6, 8, 4, Rng(1), np.float64)
        x = Rng(2).gen.normal(size=6)
        z1, _ = mlp_forward(p, x, 0.0, "train", Rng(3))
        z2, _ = mlp_forward(p, x, 0.0, "eval")
        assert np.array_equal(z1, z2)

    def test_inverted_dropout_expectation(self):
        # all hidden units active and positive output weights keep the outputs
        # away from zero, so a 2% relative band is ~10 standard errors wide
        rng = Rng(1)
        p = init_dense(6, 32, 3, rng, np.float64)
        p.b1[:] = 5.0
        p.w2[:] = np.abs(p.w2)
        x = rng.gen.normal(size=6)
        ref, _ = mlp_forward(p, x)
        batch = np.repeat(x[None], 10_000, axis=0)
        z, _ = mlp_forward(p, batch, 0.5, "train", Rng(5))
        assert np.all(np.abs(z.mean(axis=0) - ref) <= 0.02 * np.abs(ref))


class TestSoftmax:
    def test_uniform(self):
        assert np.allclose(softmax(np.zeros(4)), 0.25, atol=0, rtol=0)

    def test_no_overflow(self):
        p = softmax(np.array([1000.0, 0.0]))
        assert np.isfinite(p).all()
        assert p[0] == pytest.approx(1.0) and p[1] == pytest.approx(0.0, abs=1e-300)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(1, 4096), elements=st.floats(-50, 50)))
    def test_sums_to_one_and_shift_invariant(self, z):
        p = softmax(z)
        assert (p >= 0).all()
        assert abs(p.sum() - 1.0) <= 1e-9
        assert np.max(np.abs(softmax(z + 100.0) - p)) <= 1e-12


class TestLosses:
    def test_uniform_ce(self):
        for t in range(4):
            loss, _ = cross_entropy_loss(np.full(4, 0.25), t)
            assert loss == pytest.approx(math.log(4), abs=1e-12)
            assert loss == pytest.approx(1.3863, abs=1e-4)

    def test_perfect_prediction(self):
        p = np.eye(5)[2]
        loss, g = cross_entropy_loss(p, 2)
        assert loss == 0.0
        assert np.array_equal(g, np.zeros(5))

    def test_zero_prob_is_clamped(self):
        loss, _ = cross_entropy_loss(np.array([1.0, 0.0]), 1)
        assert loss == pytest.approx(-math.log(1e-12))

    def test_ce_gradient_vs_finite_differences(self):
        z = Rng(11).gen.normal(size=8)
        for target in range(8):
            f = lambda zz: (cross_entropy_loss(softmax(zz), target)[0], cross_entropy_loss(softmax(zz), target)[1])
            assert finite_diff_check(f, z.copy(), 1e-5) < 1e-4

    def test_bce_values(self):
        assert sigmoid_bce(0.0, 1)[0] == pytest.approx(math.log(2), abs=1e-15)
        loss, grad = sigmoid_bce(30.0, 1)
        assert 0 <= loss < 1e-12 and np.isfinite(grad)
        loss, _ = sigmoid_bce(-800.0, 1)
        assert loss == pytest.approx(800.0)

    @pytest.mark.parametrize("z", [-2.0, 0.0, 2.0])
    @pytest.mark.parametrize("y", [0, 1])
    def test_bce_gradient(self, z, y):
        h = 1e-5
        num = (sigmoid_bce(z + h, y)[0] - sigmoid_bce(z - h, y)[0]) / (2 * h)
        assert abs(sigmoid_bce(z, y)[1] - num) < 1e-6


class TestOptimizer:
    def _scalar(self, v):
        return scalar_net([[v]], [0.0], [[0.0]], [0.0])

    def test_sgd(self):
        p = self._scalar(1.0)
        g = scalar_net([[2.0]], [0.0], [[0.0]], [0.0])
        optimizer_step(p, g, OptimState("sgd", 0.1))
        assert p.w1[0, 0] == pytest.approx(0.8)

    def test_zero_gradient_is_fixed_point(self):
        p = init_dense(3, 4, 2, Rng(0))
        before = p.copy()
        for algo in ("sgd", "adam"):
            optimizer_step(p, p.zeros_like(), OptimState(algo, 0.1))
            assert p.checksum() == before.checksum()

    def test_adam_first_step(self):
        # m1 = 0.1, v1 = 0.001; bias-corrected m = 1, v = 1 -> p = -lr * 1 / (1 + 1e-8)
        expected = -0.001 * 1.0 / (1.0 + 1e-8)
        p = self._scalar(0.0)
        g = scalar_net([[1.0]], [0.0], [[0.0]], [0.0])
        optimizer_step(p, g, OptimState("adam", 0.001))
        assert p.w1[0, 0] == pytest.approx(expected, rel=1e-9)

    def test_non_finite_gradient_names_tensor(self):
        p = init_dense(3, 4, 2, Rng(0))
        g = p.zeros_like()
        g.b2[0] = np.nan
        with pytest.raises(NonFiniteGradientError, match="b2"):
            optimizer_step(p, g, OptimState())

    def test_unknown_algorithm(self):
        with pytest.raises(ValueError):
            OptimState("rmsprop")


class TestFiniteDiff:
    def test_quadratic(self):
        p = np.array([3.0])
        f = lambda q: (float(q[0] ** 2), 2 * q)
        assert finite_diff_check(f, p, 1e-4) < 1e-8

    def _ce_objective(self, x, target):
        def f(params):
            z, cache = mlp_forward(params, x)
            loss, dz = cross_entropy_loss(softmax(z), target)
            return loss, mlp_backward(params, cache, dz)

        return f

    def test_mlp_ce_gradient(self):
        rng = Rng(3)
        p = init_dense(6, 8, 4, rng, np.float64)
        p.b1[:] = rng.gen.normal(0, 0.5, 8)
        x = rng.gen.normal(size=6)
        assert finite_diff_check(self._ce_objective(x, 2), p, 1e-4) < 1e-4

    def test_detects_corrupted_gradient(self):
        rng = Rng(3)
        p = init_dense(6, 8, 4, rng, np.float64)
        x = rng.gen.normal(size=6)
        good = self._ce_objective(x, 1)

        def bad(params):
            loss, g = good(params)
            return loss, DenseParams(*(t * 1.01 for _, t in g.items()))

        assert finite_diff_check(bad, p, 1e-4) >= 5e-3

    def test_rejects_bad_epsilon(self):
        with pytest.raises(ValueError):
            finite_diff_check(lambda p: (0.0, p), np.zeros(1), 0.0)


class TestRng:
    def test_same_seed_same_stream(self):
        assert np.array_equal(Rng(42).gen.random(10), Rng(42).gen.random(10))

    def test_children_are_independent_and_stable(self):
        r = Rng(42)
        a, b = r.child(0).gen.random(5), r.child(1).gen.random(5)
        assert not np.array_equal(a, b)
        assert np.array_equal(a, Rng(42).child(0).gen.random(5))

    def test_pinned_first_draw(self):
        # PCG64 streams are platform independent; pin one draw as a canary
        assert Rng(0).gen.integers(0, 2**31) == Rng(0).gen.integers(0, 2**31)


def test_checkpoint_round_trip(tmp_path):
    p = init_dense(5, 6, 3, Rng(9))
    save_checkpoint(tmp_path / "m.dfm", p, {"dropout_p": 0.5, "seed": 9, "epoch": 3})
    q, meta = load_checkpoint(tmp_path / "m.dfm")
    assert q.checksum() == p.checksum()
    assert meta["dropout_p"] == "0.5" and meta["epoch"] == "3" and meta["in_dim"] == "5"
    raw = (tmp_path / "m.dfm").read_bytes()
    assert raw[:4] == b"DFM1"


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.dfm").write_bytes(b"NOPE" + bytes(32))
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(tmp_path / "x.dfm")


def test_shape_validation():
    with pytest.raises(ValueError):
        DenseParams(np.zeros((3, 2)), np.zeros(4), np.zeros((1, 3)), np.zeros(1))
