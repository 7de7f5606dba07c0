import numpy as np
import pytest

from gpcn.graphs import make_grid, laplacian
from gpcn.numcore import (
    AdamState,
    adam_step,
    eig_sym,
    glorot_uniform,
    linear,
    matmul,
    relu,
    row_softmax,
    seeded_rng,
    sigmoid,
    spmm,
)


def naive_matmul(a, b):
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


class TestProducts:
    def test_identity(self):
        x = seeded_rng(0).normal(size=(4, 3))
        assert np.array_equal(matmul(np.eye(4), x), x)

    def test_matches_naive_triple_loop(self):
        rng = seeded_rng(1)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        assert np.abs(matmul(a, b) - naive_matmul(a, b)).max() < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_spmm_forced_small_case(self):
        z = laplacian(make_grid(1, 2))
        out = spmm(z, np.array([[1.0], [0.0]]))
        assert np.array_equal(out, [[-1.0], [1.0]])

    def test_spmm_matches_dense(self):
        rng = seeded_rng(2)
        z = laplacian(make_grid(5, 6))
        x = rng.normal(size=(30, 7))
        assert np.abs(spmm(z, x) - z.toarray() @ x).max() < 1e-10

    def test_spmm_batched(self):
        rng = seeded_rng(3)
        z = laplacian(make_grid(2, 3))
        xb = rng.normal(size=(4, 6, 2))
        out = spmm(z, xb)
        for i in range(4):
            assert np.abs(out[i] - z.toarray() @ xb[i]).max() < 1e-12

    def test_spmm_rejects_dense_left(self):
        with pytest.raises(TypeError):
            spmm(np.eye(2), np.zeros((2, 2)))


class TestActivations:
    def test_relu(self):
        assert relu(np.array([-1.0]))[0] == 0.0
        assert relu(np.array([2.0]))[0] == 2.0

    def test_sigmoid_at_zero(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5

    def test_sigmoid_extremes_stable(self):
        out = sigmoid(np.array([-1000.0, 1000.0]))
        assert 0.0 <= out[0] < 1e-12 and 1.0 - 1e-12 < out[1] <= 1.0

    def test_linear(self):
        x = np.array([1.5, -2.0])
        assert np.array_equal(linear(x), x)

    def test_row_softmax_uniform(self):
        out = row_softmax(np.zeros((1, 3)))
        assert np.abs(out - 1.0 / 3.0).max() < 1e-15

    def test_row_softmax_rows_sum_to_one(self):
        x = seeded_rng(4).normal(size=(5, 7)) * 10
        assert np.abs(row_softmax(x).sum(axis=1) - 1.0).max() < 1e-10


class TestEigSym:
    def test_diagonal_matrix(self):
        es = eig_sym(np.diag([3.0, 1.0, 2.0]))
        assert np.array_equal(es.lambdas, [1.0, 2.0, 3.0])
        perm = np.abs(es.u)
        assert np.array_equal(np.sort(perm.ravel()), np.sort(np.eye(3).ravel()))

    def test_path_two_laplacian(self):
        es = eig_sym(laplacian(make_grid(1, 2)))
        assert np.abs(es.lambdas - np.array([-2.0, 0.0])).max() < 1e-12
        r2 = 1.0 / np.sqrt(2.0)
        assert np.abs(es.u[:, 0] - np.array([r2, -r2])).max() < 1e-12
        assert np.abs(es.u[:, 1] - np.array([r2, r2])).max() < 1e-12

    def test_reconstruction_residual(self):
        rng = seeded_rng(5)
        a = rng.normal(size=(8, 8))
        a = (a + a.T) / 2
        es = eig_sym(a)
        resid = np.linalg.norm(a - (es.u * es.lambdas) @ es.u.T)
        assert resid < 1e-8
        assert np.linalg.norm(es.u.T @ es.u - np.eye(8)) < 1e-8

    def test_deterministic_bits(self):
        a = seeded_rng(6).normal(size=(6, 6))
        a = a + a.T
        e1, e2 = eig_sym(a), eig_sym(a.copy())
        assert e1.u.tobytes() == e2.u.tobytes()
        assert e1.lambdas.tobytes() == e2.lambdas.tobytes()

    def test_rejects_nonsymmetric(self):
        with pytest.raises(ValueError):
            eig_sym(np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = np.array([1.0, -2.0])
        state = AdamState.for_params([p])
        adam_step(state, [p], [np.zeros(2)])
        assert np.array_equal(p, [1.0, -2.0])

    def test_single_step_matches_hand_formula(self):
        p = np.array([0.0])
        state = AdamState.for_params([p])
        adam_step(state, [p], [np.array([1.0])])
        # bias-corrected m=1, v=1: step = lr / (1 + eps)
        assert abs(p[0] + 0.001 / (1.0 + 1e-7)) < 1e-15
        assert abs(p[0] + 0.001) < 1e-6

    def test_descends_quadratic(self):
        p = np.array([1.0])
        state = AdamState.for_params([p])
        for _ in range(5000):
            adam_step(state, [p], [2.0 * p])
        assert abs(p[0]) < 1e-2

    def test_shape_mismatch(self):
        p = np.array([0.0, 0.0])
        state = AdamState.for_params([p])
        with pytest.raises(ValueError):
            adam_step(state, [p], [np.zeros(3)])


def test_glorot_uniform_bounds():
    rng = seeded_rng(7)
    w = glorot_uniform(rng, 30, 50)
    limit = np.sqrt(6.0 / 80.0)
    assert w.shape == (30, 50)
    assert np.abs(w).max() <= limit
    assert np.abs(w).max() > 0.5 * limit


class TestActivationDerivatives:
    def test_registry_derivatives_match_finite_differences(self):
        from gpcn.numcore import ACTIVATIONS

        rng = seeded_rng(8)
        x = rng.normal(size=(40,))
        x[np.abs(x) < 1e-3] = 0.5  # keep relu inputs off the kink
        h = 1e-6
        for name, (fwd, deriv) in ACTIVATIONS.items():
            fd = (fwd(x + h) - fwd(x - h)) / (2 * h)
            got = deriv(fwd(x))
            assert np.abs(got - fd).max() < 1e-6, name
