"""Context identification from trajectory data via MMD two-sample tests.

A context is identified by comparing the current (sub-sampled) trajectory
against stored per-context data with the biased squared-MMD estimator and
accepting whenever the statistic falls below a finite-sample threshold.
Sub-sampling with a mixing shift makes trajectory samples approximately
independent so that the i.i.d. concentration argument applies.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from . import kernels
from .kernels import KernelSpec

_BLOCK_ROWS = 2048


@dataclass
class Trajectory:
    """Uniformly sampled state trajectory.

    ``samples[0]`` is the initial state; the trajectory's length in the
    sub-sampling formulas counts transitions, i.e. ``len(samples) - 1``.
    """

    samples: np.ndarray
    dt: float
    context_truth: int | None = None

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.shape[0] < 2:
            raise ValueError("a trajectory needs at least two samples")
        if not (self.dt > 0):
            raise ValueError("dt must be positive")

    @property
    def length(self) -> int:
        return self.samples.shape[0] - 1


@dataclass(frozen=True)
class SubsampleConfig:
    """Mixing shift and the residual-dependence budget epsilon."""

    shift: int
    epsilon: float = 0.01

    def __post_init__(self):
        if self.shift < 1:
            raise ValueError("shift must be at least 1")
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError("epsilon must lie in (0, 1)")


@dataclass(frozen=True)
class MmdTestResult:
    """One context-vs-current MMD test with its acceptance threshold."""

    context: int
    mmd_sq: float
    accept_threshold: float
    eta_required: float
    accepted: bool
    r: int
    delta_mmd: float
    delta_mmd_prime: float


@dataclass
class ContextLibrary:
    """Stored sub-sampled trajectory data per context for MMD comparison."""

    kernel: KernelSpec
    k_bound: float
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.k_bound > 0):
            raise ValueError("k_bound must be positive")

    @property
    def r(self) -> int | None:
        """Common row count of the stored entries (None when empty)."""
        if not self.entries:
            return None
        return next(iter(self.entries.values())).shape[0]

    def add(self, context: int, data) -> None:
        data = np.atleast_2d(np.asarray(data, dtype=float))
        if self.entries:
            r = self.r
            if data.shape[0] < r:
                raise ValueError(f"new context data has {data.shape[0]} rows; library stores {r}")
            data = data[:r]
            if data.shape[1] != next(iter(self.entries.values())).shape[1]:
                raise ValueError("state dimension differs from stored entries")
        diag = kernels.cross_gram(self.kernel, data, data)
        if diag.max() > self.k_bound * (1.0 + 1e-9):
            raise ValueError("kernel exceeds k_bound on the stored data")
        self.entries[int(context)] = data

    def next_id(self) -> int:
        return max(self.entries) + 1 if self.entries else 0


def _mmd_term(kernel: KernelSpec, a: np.ndarray, b: np.ndarray) -> float:
    """Mean kernel value over all pairs (a_i, b_j), blocked for large inputs."""
    r = a.shape[0]
    if r <= _BLOCK_ROWS:
        return float(kernels.cross_gram(kernel, a, b).sum()) / (r * b.shape[0])
    if a is b:
        # symmetric case: sum the upper block triangle once and mirror it
        total = 0.0
        starts = list(range(0, r, _BLOCK_ROWS))
        for i, si in enumerate(starts):
            block_i = a[si:si + _BLOCK_ROWS]
            total += float(kernels.cross_gram(kernel, block_i, block_i).sum())
            for sj in starts[i + 1:]:
                total += 2.0 * float(
                    kernels.cross_gram(kernel, block_i, a[sj:sj + _BLOCK_ROWS]).sum())
        return total / (r * r)
    total = 0.0
    for start in range(0, r, _BLOCK_ROWS):
        total += float(kernels.cross_gram(kernel, a[start:start + _BLOCK_ROWS], b).sum())
    return total / (r * b.shape[0])


def mmd_squared(x, x_c, kernel: KernelSpec) -> float:
    """Biased (V-statistic) squared-MMD estimate between equal-length samples.

    Includes the diagonal terms, hence is zero on identical inputs and
    never negative up to roundoff; tiny negative values are clamped to 0.
    The cross term is accumulated in a canonical argument order so the
    estimate is exactly symmetric in its inputs.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x_c = np.atleast_2d(np.asarray(x_c, dtype=float))
    if x.shape[0] != x_c.shape[0]:
        raise ValueError(f"sample counts differ: {x.shape[0]} vs {x_c.shape[0]}")
    first, second = (x, x_c) if x.tobytes() <= x_c.tobytes() else (x_c, x)
    value = (_mmd_term(kernel, x, x) + _mmd_term(kernel, x_c, x_c)
             - 2.0 * _mmd_term(kernel, first, second))
    return max(0.0, value)


def closed_form_gaussian_mmd(mu_a: float, sigma_a: float, mu_b: float, sigma_b: float,
                             gamma: float) -> float:
    """Population squared MMD of two scalar Gaussians under a unit Gaussian kernel.

    Uses the Gaussian-smoothing identity
    ``E k(x, y) = gamma / sqrt(gamma^2 + s^2) * exp(-(m)^2 / (2 (gamma^2 + s^2)))``
    with ``m`` and ``s^2`` the mean and variance of ``x - y``; the self terms
    therefore carry no exponential factor and the cross term decays with the
    squared mean difference. Matches :func:`mmd_squared` with a magnitude-1
    Gaussian kernel of lengthscale ``gamma`` in the large-sample limit.
    """
    if not (sigma_a > 0 and sigma_b > 0 and gamma > 0):
        raise ValueError("sigmas and gamma must be positive")
    g2 = gamma * gamma
    t_aa = gamma / np.sqrt(g2 + 2.0 * sigma_a**2)
    t_bb = gamma / np.sqrt(g2 + 2.0 * sigma_b**2)
    s_ab = g2 + sigma_a**2 + sigma_b**2
    t_ab = gamma / np.sqrt(s_ab) * np.exp(-((mu_a - mu_b) ** 2) / (2.0 * s_ab))
    return float(t_aa + t_bb - 2.0 * t_ab)


def subsample(traj: Trajectory, shift: int) -> np.ndarray:
    """Rows at indices shift, 2*shift, ... up to the trajectory length."""
    if shift < 1:
        raise ValueError("shift must be at least 1")
    idx = np.arange(shift, traj.samples.shape[0], shift)
    return traj.samples[idx]


def accept_threshold(r: int, k_bound: float, delta_prime: float) -> float:
    """Finite-sample acceptance level for the squared-MMD statistic."""
    if r < 1:
        raise ValueError("r must be at least 1")
    if not (k_bound > 0):
        raise ValueError("k_bound must be positive")
    if not (0.0 < delta_prime < 1.0):
        raise ValueError("delta_prime must lie in (0, 1)")
    return 2.0 * np.sqrt(2.0 * k_bound / r) * (1.0 + np.sqrt(2.0 * np.log(2.0 / delta_prime)))


def required_eta(r: int, k_bound: float, delta_mmd: float) -> float:
    """Population separation two contexts must exceed for the test to bind."""
    if r < 1:
        raise ValueError("r must be at least 1")
    if not (k_bound > 0):
        raise ValueError("k_bound must be positive")
    if not (0.0 < delta_mmd < 1.0):
        raise ValueError("delta_mmd must lie in (0, 1)")
    return 4.0 * np.sqrt(2.0 * k_bound / r) * (1.0 + np.sqrt(2.0 * np.log(2.0 / delta_mmd)))


def combined_delta_mmd(delta_prime: float, epsilon: float) -> float:
    """Overall identification failure probability (delta' + 2 epsilon) / 3."""
    return (delta_prime + 2.0 * epsilon) / 3.0


@dataclass(frozen=True)
class MixingShiftResult:
    """Outcome of the data-driven mixing-shift search."""

    shift: int
    satisfied: bool
    mmd_curve: np.ndarray
    thresholds: np.ndarray


def estimate_mixing_shift(traj1: Trajectory, traj2: Trajectory, kernel: KernelSpec,
                          a_max: int, delta_prime: float = 0.05,
                          window: int = 10) -> MixingShiftResult:
    """Smallest shift at which two independent same-context trajectories pass.

    Scans shifts 1..a_max, computing the squared MMD between the two
    sub-sampled trajectories and the acceptance threshold at the
    post-sub-sampling sample count. Returns the smallest shift for which the
    statistic stays below the threshold over the following ``window`` shifts;
    if none qualifies, returns a_max flagged unsatisfied.
    """
    if a_max < 1:
        raise ValueError("a_max must be at least 1")
    k_bound = kernel.diag_value()
    curve = np.empty(a_max)
    thresholds = np.empty(a_max)
    for a in range(1, a_max + 1):
        x1 = subsample(traj1, a)
        x2 = subsample(traj2, a)
        r = min(x1.shape[0], x2.shape[0])
        if r < 1:
            curve[a - 1:] = np.inf
            thresholds[a - 1:] = 0.0
            break
        curve[a - 1] = mmd_squared(x1[:r], x2[:r], kernel)
        thresholds[a - 1] = accept_threshold(r, k_bound, delta_prime)
    below = curve < thresholds
    for a in range(1, a_max + 1):
        end = min(a + window, a_max)
        if np.all(below[a - 1:end]):
            return MixingShiftResult(shift=a, satisfied=True, mmd_curve=curve,
                                     thresholds=thresholds)
    return MixingShiftResult(shift=a_max, satisfied=False, mmd_curve=curve,
                             thresholds=thresholds)


@dataclass(frozen=True)
class IdentificationResult:
    """Per-context MMD tests plus the overall verdict."""

    tests: tuple
    context: int
    is_new: bool


def identify(current: Trajectory, library: ContextLibrary, config: SubsampleConfig,
             delta_prime: float) -> IdentificationResult:
    """Identify the active context by testing against every stored context.

    Contexts are scanned in ascending id order and the first acceptance
    wins. If no stored context is accepted (or the library is empty), the
    verdict is a new context and its sub-sampled data is stored.
    """
    if not (0.0 < delta_prime < 1.0):
        raise ValueError("delta_prime must lie in (0, 1)")
    data = subsample(current, config.shift)
    if data.shape[0] < 1:
        raise ValueError("trajectory is shorter than the sub-sampling shift")
    delta_mmd = combined_delta_mmd(delta_prime, config.epsilon)
    tests = []
    verdict = None
    for context in sorted(library.entries):
        stored = library.entries[context]
        r = min(data.shape[0], stored.shape[0])
        mmd_sq = mmd_squared(data[:r], stored[:r], library.kernel)
        threshold = accept_threshold(r, library.k_bound, delta_prime)
        eta = required_eta(r, library.k_bound, delta_mmd)
        accepted = bool(mmd_sq < threshold)
        tests.append(MmdTestResult(
            context=context, mmd_sq=mmd_sq, accept_threshold=threshold,
            eta_required=eta, accepted=accepted, r=r, delta_mmd=delta_mmd,
            delta_mmd_prime=delta_prime,
        ))
        if accepted and verdict is None:
            verdict = context
    if verdict is not None:
        return IdentificationResult(tests=tuple(tests), context=verdict, is_new=False)
    new_id = library.next_id()
    library.add(new_id, data)
    return IdentificationResult(tests=tuple(tests), context=new_id, is_new=True)


def median_heuristic_lengthscale(data) -> float:
    """Median pairwise distance of the rows, ignoring zero-distance pairs."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] < 2:
        return 1.0
    dists = pdist(data, "euclidean")
    dists = dists[dists > 0]
    if dists.size == 0:
        return 1.0
    return float(np.median(dists))


# ---------------------------------------------------------------------------
# Persistence: trajectory CSV + sidecar JSON, library directory + manifest


def save_trajectory(path, traj: Trajectory) -> None:
    """CSV with columns x_0..x_{l-1}; metadata in a .json sidecar."""
    path = Path(path)
    dim = traj.samples.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{i}" for i in range(dim)])
        for row in traj.samples:
            writer.writerow([repr(float(v)) for v in row])
    sidecar = {"dt": traj.dt}
    if traj.context_truth is not None:
        sidecar["context_truth"] = int(traj.context_truth)
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    samples = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    return Trajectory(samples=samples, dt=float(sidecar["dt"]),
                      context_truth=sidecar.get("context_truth"))


def save_library(directory, library: ContextLibrary, config: SubsampleConfig) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "kernel": library.kernel.to_dict(),
        "k_bound": library.k_bound,
        "shift": config.shift,
        "epsilon": config.epsilon,
        "contexts": sorted(library.entries),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    for context, data in library.entries.items():
        with open(directory / f"context_{context}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x_{i}" for i in range(data.shape[1])])
            for row in data:
                writer.writerow([repr(float(v)) for v in row])


def load_library(directory):
    """Load a persisted library; returns (library, subsample_config)."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    library = ContextLibrary(kernel=KernelSpec.from_dict(manifest["kernel"]),
                             k_bound=float(manifest["k_bound"]))
    for context in manifest["contexts"]:
        data = np.loadtxt(directory / f"context_{context}.csv", delimiter=",",
                          skiprows=1, ndmin=2)
        library.add(int(context), data)
    config = SubsampleConfig(shift=int(manifest["shift"]),
                             epsilon=float(manifest.get("epsilon", 0.01)))
    return library, config
