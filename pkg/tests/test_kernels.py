import numpy as np
import pytest

from contextsafe import kernels
from contextsafe.errors import NumericalError
from contextsafe.kernels import GramMatrix, KernelSpec, SpdFactor


def test_gaussian_diagonal_is_magnitude_squared():
    k = KernelSpec("gaussian", lengthscale=2.0, magnitude=3.0)
    assert kernels.evaluate(k, [1.0, 2.0], [1.0, 2.0]) == pytest.approx(9.0)


def test_gaussian_closed_form_value():
    k = KernelSpec("gaussian", 1.0, 1.0)
    assert kernels.evaluate(k, [0.0], [2.0]) == pytest.approx(0.1353352832366127, abs=1e-12)


def test_kronecker_delta_values():
    k = KernelSpec("kronecker-delta")
    assert kernels.evaluate(k, [3.0], [3.0]) == 1.0
    assert kernels.evaluate(k, [3.0], [4.0]) == 0.0


def test_matern_diagonal_and_symmetry():
    k = KernelSpec("matern52", lengthscale=0.7, magnitude=1.5)
    assert kernels.evaluate(k, [0.5], [0.5]) == pytest.approx(1.5**2)
    assert kernels.evaluate(k, [0.1], [0.9]) == pytest.approx(kernels.evaluate(k, [0.9], [0.1]))


def test_evaluate_rejects_dimension_mismatch():
    k = KernelSpec("gaussian")
    with pytest.raises(ValueError):
        kernels.evaluate(k, [0.0, 1.0], [0.0])


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec("gaussian", lengthscale=0.0)
    with pytest.raises(ValueError):
        KernelSpec("gaussian", magnitude=-1.0)
    with pytest.raises(ValueError):
        KernelSpec("cubic")


def test_gram_single_point():
    k = KernelSpec("gaussian", 1.0, 2.0)
    g = kernels.gram(k, [[0.0]])
    assert g.values.shape == (1, 1)
    assert g.values[0, 0] == pytest.approx(4.0)


def test_gram_identical_points():
    k = KernelSpec("gaussian", 1.0, 1.0)
    g = kernels.gram(k, [[1.5], [1.5]])
    assert np.allclose(g.values, np.ones((2, 2)))


def test_gram_collinear_points():
    k = KernelSpec("gaussian", 1.0, 1.0)
    g = kernels.gram(k, [[0.0], [1.0], [2.0]])
    assert g.values[0, 1] == pytest.approx(0.6065306597126334, abs=1e-12)
    assert g.values[0, 2] == pytest.approx(0.1353352832366127, abs=1e-12)
    assert np.allclose(g.values, g.values.T)


def test_gram_positive_semidefinite_random():
    rng = np.random.default_rng(7)
    for kind in ("gaussian", "matern52"):
        k = KernelSpec(kind, lengthscale=0.5, magnitude=1.3)
        pts = rng.normal(size=(12, 3))
        g = kernels.gram(k, pts)
        eigs = np.linalg.eigvalsh(g.values)
        assert eigs.min() >= -1e-9 * np.trace(g.values)


def test_regularized_solve_diagonal():
    x = kernels.regularized_solve(np.eye(2), 1.0, np.array([2.0, 4.0]))
    assert np.allclose(x, [1.0, 2.0])


def test_regularized_solve_rank_deficient():
    k = np.array([[1.0, 1.0], [1.0, 1.0]])
    x = kernels.regularized_solve(k, 1.0, np.array([1.0, 1.0]))
    assert np.allclose(x, [1.0 / 3.0, 1.0 / 3.0])


def test_regularized_solve_zero_rhs():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 4))
    k = a @ a.T
    x = kernels.regularized_solve(k, 0.5, np.zeros(4))
    assert np.allclose(x, 0.0)


def test_regularized_solve_roundtrip_random():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n = rng.integers(2, 10)
        a = rng.normal(size=(n, n))
        k = a @ a.T
        ridge = float(rng.uniform(0.01, 1.0))
        rhs = rng.normal(size=n)
        x = kernels.regularized_solve(k, ridge, rhs)
        residual = (k + ridge * np.eye(n)) @ x - rhs
        assert np.linalg.norm(residual) <= 1e-8 * np.linalg.norm(rhs)


def test_log_det_zero_matrix():
    assert kernels.log_det_regularized(np.zeros((4, 4)), 1.0) == pytest.approx(0.0, abs=1e-12)


def test_log_det_identity():
    assert kernels.log_det_regularized(np.eye(3), 1.0) == pytest.approx(
        2.0794415416798357, abs=1e-12)


def test_log_det_rank_one():
    k = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert kernels.log_det_regularized(k, 1.0) == pytest.approx(
        1.0986122886681098, abs=1e-10)


def test_factorization_failure_raises_numerical_error():
    # trace-free indefinite matrix: jitter escalation cannot rescue it
    bad = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(NumericalError) as exc:
        SpdFactor(bad)
    assert hasattr(exc.value, "jitter")


def test_jitter_escalation_recovers_near_singular():
    # tiny negative eigenvalue within reach of the relative jitter
    n = 6
    ones = np.ones((n, n))
    m = ones + 1e-14 * np.eye(n)
    m[0, 0] -= 5e-12
    factor = SpdFactor(m)
    x = factor.solve(np.ones(n))
    assert np.all(np.isfinite(x))


def test_shift_identity_small():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n, d = rng.integers(1, 9), rng.integers(1, 9)
        phi = rng.normal(size=(n, d))
        ridge = float(rng.uniform(0.05, 2.0))
        left = phi.T @ np.linalg.inv(phi @ phi.T + ridge * np.eye(n))
        right = np.linalg.inv(phi.T @ phi + ridge * np.eye(d)) @ phi.T
        assert np.allclose(left, right, atol=1e-8)


def test_power_function_identity_small():
    # linear kernel: ridge * phi(y)^T (Phi^T Phi + ridge I)^-1 phi(y)
    # equals k(y,y) - K_y^T (K + ridge I)^-1 K_y
    rng = np.random.default_rng(13)
    for _ in range(20):
        n, d = rng.integers(1, 9), rng.integers(1, 9)
        phi = rng.normal(size=(n, d))
        y = rng.normal(size=d)
        ridge = float(rng.uniform(0.05, 2.0))
        lhs = ridge * y @ np.linalg.inv(phi.T @ phi + ridge * np.eye(d)) @ y
        k_y = phi @ y
        rhs = y @ y - k_y @ np.linalg.inv(phi @ phi.T + ridge * np.eye(n)) @ k_y
        assert lhs == pytest.approx(rhs, abs=1e-8)


def test_gram_matrix_records_jitter_default_zero():
    g = kernels.gram(KernelSpec("gaussian"), [[0.0], [1.0]])
    assert isinstance(g, GramMatrix)
    assert g.jitter_added == 0.0
