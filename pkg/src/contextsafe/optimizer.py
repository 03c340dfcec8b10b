"""Minimal contextual safe Bayesian optimizer on a discretized parameter grid.

Gaussian-process surrogates (one for the reward, one per constraint, all
sharing a product kernel over parameter and context id) maintain monotone
confidence intervals. The safe set collects grid points whose constraint
lower bounds are nonnegative, seeds included; acquisition picks the most
uncertain point among potential maximizers and expanders.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .kernels import KernelSpec, SpdFactor


@dataclass(frozen=True)
class ObjectiveObservation:
    """One noisy measurement of reward and constraints at (a, c)."""

    a: np.ndarray
    c: int
    f_meas: float
    g_meas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a, dtype=float)))
        object.__setattr__(self, "g_meas", np.atleast_1d(np.asarray(self.g_meas, dtype=float)))
        if self.g_meas.shape[0] < 1:
            raise ValueError("at least one constraint measurement is required")
        if not (np.isfinite(self.a).all() and np.isfinite(self.f_meas)
                and np.isfinite(self.g_meas).all()):
            raise ValueError("observations must be finite")


class SafeOptimizer:
    """Safe-set/expander/maximizer state machine over (grid point, context).

    Parameters
    ----------
    grid : ndarray, shape (G, d)
        Discretized parameter domain.
    n_contexts : int
        Number of context slots (context ids 0..n_contexts-1).
    seed_indices : sequence of int
        Grid indices assumed safe in every context; they are never removed
        from the safe set.
    param_kernel, context_kernel : KernelSpec
        Factors of the product kernel over parameters and context ids.
    noise_std : float
        Assumed measurement noise standard deviation.
    beta : float
        Confidence interval half-width in posterior standard deviations.
    n_constraints : int
        Number of constraint functions q.
    """

    REWARD = 0

    def __init__(self, grid, n_contexts, seed_indices, param_kernel: KernelSpec,
                 context_kernel: KernelSpec, noise_std: float, beta: float = 3.0,
                 n_constraints: int = 1):
        self.grid = np.atleast_2d(np.asarray(grid, dtype=float))
        if self.grid.ndim != 2 or self.grid.shape[0] < 1:
            raise ValueError("grid must be a nonempty (G, d) array")
        self.n_contexts = int(n_contexts)
        self.seed_indices = tuple(int(i) for i in seed_indices)
        if not self.seed_indices:
            raise ValueError("at least one safe seed is required")
        for i in self.seed_indices:
            if not (0 <= i < self.grid.shape[0]):
                raise ValueError(f"seed index {i} outside the grid")
        self.param_kernel = param_kernel
        self.context_kernel = context_kernel
        self.noise_std = float(noise_std)
        self.beta = float(beta)
        self.q = int(n_constraints)
        if self.q < 1:
            raise ValueError("n_constraints must be at least 1")

        g = self.grid.shape[0]
        m = self.n_contexts
        self._context_values = np.arange(m, dtype=float).reshape(-1, 1)
        self._k_grid = kernels.cross_gram(param_kernel, self.grid, self.grid)
        self._k_ctx = kernels.cross_gram(context_kernel, self._context_values,
                                         self._context_values)
        prior_sd = np.sqrt(param_kernel.diag_value() * context_kernel.diag_value())
        # Confidence intervals per function, grid point, and context;
        # intersected monotonically as data arrives.
        shape = (1 + self.q, g, m)
        self.lower = np.full(shape, -self.beta * prior_sd)
        self.upper = np.full(shape, self.beta * prior_sd)

        self.safe_set = np.zeros((g, m), dtype=bool)
        self.maximizers = np.zeros((g, m), dtype=bool)
        self.expanders = np.zeros((g, m), dtype=bool)
        self.safe_set[list(self.seed_indices), :] = True

        self._obs: list[ObjectiveObservation] = []
        self._factor = None
        self._alpha = None

    # -- data handling ------------------------------------------------

    @property
    def n_data(self) -> int:
        return len(self._obs)

    def observations(self):
        return tuple(self._obs)

    def _data_arrays(self):
        a = np.stack([o.a for o in self._obs])
        c = np.array([o.c for o in self._obs], dtype=float).reshape(-1, 1)
        y = np.column_stack([[o.f_meas for o in self._obs]]
                            + [[o.g_meas[i] for o in self._obs] for i in range(self.q)])
        return a, c, y

    def _kernel_between(self, a1, c1, a2, c2):
        return (kernels.cross_gram(self.param_kernel, a1, a2)
                * kernels.cross_gram(self.context_kernel, c1, c2))

    def observe(self, obs: ObjectiveObservation) -> "SafeOptimizer":
        """Append one observation and shrink the confidence intervals."""
        if obs.g_meas.shape[0] != self.q:
            raise ValueError(f"expected {self.q} constraint measurements")
        if not (0 <= obs.c < self.n_contexts):
            raise ValueError(f"context {obs.c} outside 0..{self.n_contexts - 1}")
        self._obs.append(obs)
        a, c, y = self._data_arrays()
        k_data = self._kernel_between(a, c, a, c)
        self._factor = SpdFactor(k_data + self.noise_std**2 * np.eye(len(self._obs)))
        self._alpha = self._factor.solve(y)
        self._refresh_intervals()
        return self

    def _cross_to_grid(self, context: int):
        """Kernel matrix between the data and the grid slice of one context."""
        a, c, _ = self._data_arrays()
        ctx = np.full((self.grid.shape[0], 1), float(context))
        return self._kernel_between(a, c, self.grid, ctx)

    def _slice_posterior(self, context: int):
        """Posterior means (per function) and shared variance on one slice."""
        prior_var = self.param_kernel.diag_value() * self.context_kernel.diag_value()
        g = self.grid.shape[0]
        if not self._obs:
            return np.zeros((1 + self.q, g)), np.full(g, prior_var)
        k_star = self._cross_to_grid(context)
        means = (k_star.T @ self._alpha).T
        solved = self._factor.solve(k_star)
        var = prior_var - np.einsum("ng,ng->g", k_star, solved)
        return means, np.maximum(var, 0.0)

    def _refresh_intervals(self):
        for context in range(self.n_contexts):
            means, var = self._slice_posterior(context)
            sd = np.sqrt(var)
            for f in range(1 + self.q):
                old_lo = self.lower[f, :, context]
                old_hi = self.upper[f, :, context]
                lo = np.maximum(old_lo, means[f] - self.beta * sd)
                hi = np.minimum(old_hi, means[f] + self.beta * sd)
                # model mismatch can empty the intersection; collapse to a
                # point inside the previous interval so both bounds stay
                # monotone and lower <= upper holds
                crossed = lo > hi
                if np.any(crossed):
                    mid = np.clip(0.5 * (lo + hi), old_lo, old_hi)
                    lo = np.where(crossed, mid, lo)
                    hi = np.where(crossed, mid, hi)
                self.lower[f, :, context] = lo
                self.upper[f, :, context] = hi

    # -- queries --------------------------------------------------------

    def posterior(self, a, c: int, function: int):
        """GP posterior (mean, variance) at an arbitrary parameter vector.

        ``function`` 0 is the reward; 1..q are the constraints.
        """
        if not (0 <= function <= self.q):
            raise ValueError(f"function index {function} outside 0..{self.q}")
        a = np.atleast_2d(np.asarray(a, dtype=float))
        ctx = np.full((a.shape[0], 1), float(c))
        prior_var = self.param_kernel.diag_value() * self.context_kernel.diag_value()
        if not self._obs:
            return 0.0, float(prior_var)
        xa, xc, _ = self._data_arrays()
        k_star = self._kernel_between(xa, xc, a, ctx)
        mean = float(k_star[:, 0].dot(self._alpha[:, function]))
        var = prior_var - float(k_star[:, 0].dot(self._factor.solve(k_star[:, 0])))
        return mean, max(var, 0.0)

    def _slice_covariance(self, context: int):
        """Posterior covariance across the grid slice (shared by all functions)."""
        prior = self._k_grid * kernels.evaluate(
            self.context_kernel, [float(context)], [float(context)])
        if not self._obs:
            return prior
        k_star = self._cross_to_grid(context)
        return prior - k_star.T @ self._factor.solve(k_star)

    def update_sets(self, context: int) -> "SafeOptimizer":
        """Recompute safe set, maximizers, and expanders for one context."""
        g = self.grid.shape[0]
        lo_g = self.lower[1:, :, context]
        up_g = self.upper[1:, :, context]
        safe = np.all(lo_g >= 0.0, axis=0)
        safe[list(self.seed_indices)] = True
        self.safe_set[:, context] = safe

        lo_f = self.lower[self.REWARD, :, context]
        up_f = self.upper[self.REWARD, :, context]
        maximizers = np.zeros(g, dtype=bool)
        maximizers[safe] = up_f[safe] >= np.max(lo_f[safe])
        self.maximizers[:, context] = maximizers

        expanders = np.zeros(g, dtype=bool)
        unsafe = ~safe
        if np.any(unsafe) and np.any(safe):
            cov = self._slice_covariance(context)
            means, var = self._slice_posterior(context)
            g_means = means[1:]
            for j in np.flatnonzero(safe):
                denom = cov[j, j] + self.noise_std**2
                gain = cov[unsafe, j] / denom
                new_var = np.maximum(var[unsafe] - cov[unsafe, j] ** 2 / denom, 0.0)
                new_sd = np.sqrt(new_var)
                # optimistic measurement of every constraint at point j
                becomes_safe = np.ones(unsafe.sum(), dtype=bool)
                for i in range(self.q):
                    shifted = g_means[i, unsafe] + gain * (up_g[i, j] - g_means[i, j])
                    becomes_safe &= (shifted - self.beta * new_sd) >= 0.0
                expanders[j] = bool(np.any(becomes_safe))
        self.expanders[:, context] = expanders
        return self

    def propose(self, context: int) -> np.ndarray:
        """Most uncertain point among maximizers and expanders for a context.

        Falls back to the seed with the best reward lower bound when both
        sets are empty. Ties resolve to the lowest grid index.
        """
        self.update_sets(context)
        candidates = self.maximizers[:, context] | self.expanders[:, context]
        if not np.any(candidates):
            seeds = np.array(self.seed_indices)
            best = seeds[np.argmax(self.lower[self.REWARD, seeds, context])]
            return self.grid[best]
        width = np.max(self.upper[:, :, context] - self.lower[:, :, context], axis=0)
        width = np.where(candidates, width, -np.inf)
        return self.grid[int(np.argmax(width))]

    # -- persistence ------------------------------------------------------

    def snapshot(self) -> dict:
        """JSON-serializable state for harness checkpointing."""
        for context in range(self.n_contexts):
            self.update_sets(context)
        return {
            "grid": self.grid.tolist(),
            "beta": self.beta,
            "noise_std": self.noise_std,
            "seed_indices": list(self.seed_indices),
            "param_kernel": self.param_kernel.to_dict(),
            "context_kernel": self.context_kernel.to_dict(),
            "observations": [
                {"a": o.a.tolist(), "c": o.c, "f": o.f_meas, "g": o.g_meas.tolist()}
                for o in self._obs
            ],
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "safe_set": self.safe_set.tolist(),
            "maximizers": self.maximizers.tolist(),
            "expanders": self.expanders.tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.snapshot(), indent=2, sort_keys=True))
