"""Kernel functions, Gram matrices, and the regularized SPD solve.

Everything downstream (classifier, MMD test, GP surrogates) funnels its
linear algebra through this module so that conditioning policy and
factorization caching live in one place. All computations are float64.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

from .errors import NumericalError

GAUSSIAN = "gaussian"
MATERN52 = "matern52"
KRONECKER = "kronecker-delta"

_KINDS = (GAUSSIAN, MATERN52, KRONECKER)

# Jitter escalation: base relative jitter, growth factor, number of attempts.
_JITTER_BASE = 1e-10
_JITTER_GROWTH = 10.0
_JITTER_ATTEMPTS = 3


@dataclass(frozen=True)
class KernelSpec:
    """A stationary kernel: 'gaussian', 'matern52', or 'kronecker-delta'.

    ``lengthscale`` and ``magnitude`` must be positive; the Kronecker delta
    kernel ignores both and returns values in {0, 1}.
    """

    kind: str
    lengthscale: float = 1.0
    magnitude: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {_KINDS}")
        if not (self.lengthscale > 0):
            raise ValueError("lengthscale must be positive")
        if not (self.magnitude > 0):
            raise ValueError("magnitude must be positive")

    def diag_value(self):
        """k(y, y), constant for stationary kernels."""
        return 1.0 if self.kind == KRONECKER else self.magnitude**2

    def to_dict(self):
        return {"kind": self.kind, "lengthscale": self.lengthscale, "magnitude": self.magnitude}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], lengthscale=float(d.get("lengthscale", 1.0)),
                   magnitude=float(d.get("magnitude", 1.0)))


@dataclass
class GramMatrix:
    """Symmetric kernel matrix plus the diagonal jitter added for stability."""

    values: np.ndarray
    jitter_added: float = 0.0

    @property
    def n(self):
        return self.values.shape[0]


def cross_gram(kernel: KernelSpec, a, b) -> np.ndarray:
    """Kernel matrix between two point sets (rows are points)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if kernel.kind == KRONECKER:
        eq = np.all(a[:, None, :] == b[None, :, :], axis=2)
        return eq.astype(float)
    if kernel.kind == GAUSSIAN:
        d2 = cdist(a, b, "sqeuclidean")
        return kernel.magnitude**2 * np.exp(d2 * (-0.5 / kernel.lengthscale**2))
    # Matern 5/2
    s = np.sqrt(5.0) * cdist(a, b, "euclidean") / kernel.lengthscale
    return kernel.magnitude**2 * (1.0 + s + s**2 / 3.0) * np.exp(-s)


def evaluate(kernel: KernelSpec, y1, y2) -> float:
    """Evaluate the kernel on a single pair of (same-dimension) points."""
    a = np.atleast_1d(np.asarray(y1, dtype=float)).ravel()
    b = np.atleast_1d(np.asarray(y2, dtype=float)).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(cross_gram(kernel, a.reshape(1, -1), b.reshape(1, -1))[0, 0])


def gram(kernel: KernelSpec, points) -> GramMatrix:
    """Full kernel matrix of a point list; symmetric by construction."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        raise ValueError("gram requires a nonempty point list")
    values = cross_gram(kernel, pts, pts)
    values = 0.5 * (values + values.T)
    return GramMatrix(values=values)


class SpdFactor:
    """Cholesky factorization of an SPD matrix with jitter escalation.

    Retries the factorization with a diagonal jitter starting at
    ``1e-10 * trace / n`` and growing tenfold, three attempts in total.
    Raises :class:`NumericalError` carrying the final jitter tried.
    """

    def __init__(self, matrix: np.ndarray):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("SpdFactor needs a square matrix")
        n = m.shape[0]
        base = _JITTER_BASE * float(np.trace(m)) / n
        jitters = [0.0] + [base * _JITTER_GROWTH**i for i in range(_JITTER_ATTEMPTS)]
        last_error = None
        for jitter in jitters:
            try:
                self._cho = cho_factor(m + jitter * np.eye(n), lower=True)
                self.jitter = jitter
                self.n = n
                return
            except (np.linalg.LinAlgError, ValueError) as err:
                last_error = err
        raise NumericalError(
            f"Cholesky factorization failed after jitter escalation (last jitter {jitters[-1]:g}): {last_error}",
            jitter=jitters[-1],
        )

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        return cho_solve(self._cho, rhs)

    @property
    def log_det(self) -> float:
        """log-determinant of the factored matrix (twice the log-diagonal sum)."""
        return 2.0 * float(np.sum(np.log(np.diag(self._cho[0]))))


def _gram_values(K) -> np.ndarray:
    return K.values if isinstance(K, GramMatrix) else np.asarray(K, dtype=float)


def regularized_solve(K, ridge: float, rhs) -> np.ndarray:
    """Solve (K + ridge*I) x = rhs through an SPD factorization."""
    if not (ridge > 0):
        raise ValueError("ridge must be positive")
    values = _gram_values(K)
    factor = SpdFactor(values + ridge * np.eye(values.shape[0]))
    return factor.solve(rhs)


def log_det_regularized(K, lam_bar: float) -> float:
    """log det(K + lam_bar*I) from the Cholesky factor."""
    if not (lam_bar > 0):
        raise ValueError("lam_bar must be positive")
    values = _gram_values(K)
    factor = SpdFactor(values + lam_bar * np.eye(values.shape[0]))
    return factor.log_det
