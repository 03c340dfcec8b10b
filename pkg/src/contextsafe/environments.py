"""Simulated context-dependent systems and synthetic data generators.

Provides the linearized rotary inverted pendulum whose pole mass/length
change with the context, the noisy context-observation channel (height of
the attached weight), and the scalar logistic two-class generator used to
exercise the classifier bounds. All randomness is seeded and episodes are
bit-reproducible.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, solve_discrete_are

from .classifier import LabeledObservation
from .identify import Trajectory


@dataclass(frozen=True)
class Chirp:
    """Linear frequency sweep added to the control input during identification."""

    f0: float = 0.5
    f1: float = 5.0
    amplitude: float = 0.02

    def signal(self, steps: int, dt: float) -> np.ndarray:
        k = np.arange(steps, dtype=float)
        freq = self.f0 + (self.f1 - self.f0) * k / (2.0 * steps)
        return self.amplitude * np.sin(2.0 * math.pi * freq * k * dt)


@dataclass
class ContextDynamics:
    """Per-context discrete-time linear systems sharing shapes and dt.

    ``a_mats[c]`` and ``b_mats[c]`` are the closed-form ZOH discretizations
    of the context's continuous dynamics; ``failure_state`` indexes the
    state whose magnitude exceeding ``failure_limit`` counts as failure.
    """

    a_mats: list
    b_mats: list
    noise_std: np.ndarray
    dt: float
    failure_state: int
    failure_limit: float
    seed_gain: np.ndarray
    tuned_index: int
    constraint_floor: float = -0.5
    reward_floor: float = -25.0
    episode_x0: np.ndarray | None = None
    params_table: list = field(default_factory=list)

    def __post_init__(self):
        self.noise_std = np.asarray(self.noise_std, dtype=float)
        self.seed_gain = np.asarray(self.seed_gain, dtype=float)
        if len(self.a_mats) < 2:
            raise ValueError("need at least two contexts")

    @property
    def n_contexts(self) -> int:
        return len(self.a_mats)

    @property
    def dim(self) -> int:
        return self.a_mats[0].shape[0]

    def gain_with_parameter(self, a) -> np.ndarray:
        """Seed gain with the tuned entry replaced by the parameter value."""
        gain = self.seed_gain.copy()
        gain[self.tuned_index] = float(np.atleast_1d(a)[0])
        return gain


@dataclass
class EpisodeRecord:
    """One simulated experiment with its measurements and outcome."""

    trajectory: Trajectory
    reward: float
    constraints: np.ndarray
    failed: bool
    context_truth: int
    context_decided: int | None = None
    decision_path: str | None = None


def simulate_episode(dyn: ContextDynamics, c: int, feedback_gain, steps: int,
                     excitation: Chirp | None = None, seed: int = 0,
                     x0=None) -> EpisodeRecord:
    """Closed-loop rollout u(k) = -F x(k) + excitation(k).

    Starts from the origin unless ``x0`` is given (the harness releases the
    pole from a small fixed angle so that the transient dominates). Reward
    is the negative time-mean squared state norm; the single constraint is
    the worst margin to the failure limit over the episode. Divergence
    (non-finite or astronomically large states) truncates the rollout and
    floors reward and constraint.
    """
    a_mat = dyn.a_mats[c]
    b_vec = np.asarray(dyn.b_mats[c], dtype=float).reshape(-1)
    gain = np.asarray(feedback_gain, dtype=float).reshape(-1)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((steps, dyn.dim)) * dyn.noise_std
    exc = excitation.signal(steps, dyn.dt) if excitation is not None else np.zeros(steps)

    samples = np.zeros((steps + 1, dyn.dim))
    x = np.zeros(dyn.dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    samples[0] = x
    diverged = False
    recorded = steps
    for k in range(steps):
        u = -gain.dot(x) + exc[k]
        x = a_mat.dot(x) + b_vec * u + noise[k]
        if not np.all(np.abs(x) < 1e9):
            diverged = True
            recorded = k
            break
        samples[k + 1] = x

    samples = samples[: recorded + 1]
    traj = Trajectory(samples=samples, dt=dyn.dt, context_truth=c)
    if diverged:
        reward = dyn.reward_floor
        margin = dyn.constraint_floor
    else:
        reward = -float(np.mean(np.sum(samples**2, axis=1)))
        reward = max(reward, dyn.reward_floor)
        peak = float(np.max(np.abs(samples[:, dyn.failure_state])))
        margin = max(dyn.failure_limit - peak, dyn.constraint_floor)
    constraints = np.array([margin])
    return EpisodeRecord(
        trajectory=traj,
        reward=reward,
        constraints=constraints,
        failed=bool(constraints.min() < 0.0),
        context_truth=c,
    )


@dataclass
class ObservationChannel:
    """Context observation: per-context mean vector plus Gaussian noise."""

    means: np.ndarray
    noise_std: float

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        if self.means.ndim == 2 and self.means.shape[1] == 0:
            raise ValueError("means must be nonempty")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    @property
    def n_contexts(self) -> int:
        return self.means.shape[0]


def observe_context(channel: ObservationChannel, c: int, seed: int = 0) -> np.ndarray:
    """Draw one noisy context observation for context c."""
    rng = np.random.default_rng(seed)
    mean = channel.means[c]
    return mean + channel.noise_std * rng.standard_normal(mean.shape)


# ---------------------------------------------------------------------------
# Synthetic logistic two-class generator

_LOGISTIC_BANDS = ((-6.0, -4.7), (0.5, 1.78), (5.7, 7.0))
_LOGISTIC_PER_BAND = 50


def logistic_p0(y):
    """P(context 0 | y) = 1 / (1 + exp(-y + 1))."""
    return 1.0 / (1.0 + np.exp(-np.asarray(y, dtype=float) + 1.0))


def logistic_p1(y):
    return 1.0 - logistic_p0(y)


@dataclass
class LogisticSample:
    """Scalar inputs in three bands with Bernoulli context labels."""

    ys: np.ndarray
    labels: np.ndarray

    def observations(self):
        return [LabeledObservation(y=np.array([y]), context=int(c))
                for y, c in zip(self.ys, self.labels)]

    def resample_labels(self, rng) -> np.ndarray:
        """Fresh label draw at the same inputs (context 0 w.p. p0)."""
        return (rng.random(self.ys.shape[0]) >= logistic_p0(self.ys)).astype(int)


def logistic_generator(seed: int = 0, points_per_band: int = _LOGISTIC_PER_BAND) -> LogisticSample:
    """Sample inputs uniformly from the three bands and label them."""
    rng = np.random.default_rng(seed)
    ys = np.concatenate([rng.uniform(lo, hi, points_per_band) for lo, hi in _LOGISTIC_BANDS])
    labels = (rng.random(ys.shape[0]) >= logistic_p0(ys)).astype(int)
    return LogisticSample(ys=ys, labels=labels)


# ---------------------------------------------------------------------------
# Rotary inverted pendulum with scaled pole mass/length as contexts

#: Base physical parameters of the rotary pendulum (SI units) and the
#: per-context scale applied to pole mass and length.
PENDULUM_BASE = {
    "arm_inertia": 0.01,       # kg m^2, arm plus rotor about the motor axis
    "arm_length": 0.4,         # m
    "pole_mass": 0.12,         # kg
    "pole_length": 0.75,       # m
    "gravity": 9.81,           # m s^-2
}
PENDULUM_SCALES = (1.0, 1.3, 1.6)
PENDULUM_DT = 1.0 / 200.0
PENDULUM_NOISE = (5e-5, 1e-3, 5e-5, 1e-3)
PENDULUM_FAILURE_LIMIT = 0.5   # rad on the pole angle
PENDULUM_SEED_PARAMETER = 2.8  # pole-angle gain safe in every context


def _rotary_pendulum_continuous(arm_inertia, arm_length, pole_mass, pole_length, gravity):
    """Linearized upright dynamics; state (alpha, alpha_dot, theta, theta_dot)."""
    l1 = pole_length / 2.0
    j1 = pole_mass * pole_length**2 / 12.0
    j0_hat = arm_inertia + pole_mass * arm_length**2
    j1_hat = j1 + pole_mass * l1**2
    delta = j0_hat * j1_hat - (pole_mass * l1 * arm_length) ** 2
    a = np.zeros((4, 4))
    a[0, 1] = 1.0
    a[2, 3] = 1.0
    a[1, 2] = (pole_mass * l1) ** 2 * arm_length * gravity / delta
    a[3, 2] = pole_mass * gravity * l1 * j0_hat / delta
    b = np.array([0.0, j1_hat / delta, 0.0, pole_mass * l1 * arm_length / delta])
    return a, b


def _discretize(a, b, dt):
    """Exact zero-order-hold discretization via the augmented exponential."""
    n = a.shape[0]
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = a
    aug[:n, n] = b
    phi = expm(aug * dt)
    return phi[:n, :n], phi[:n, n]


def _dlqr(a, b, q, r):
    p = solve_discrete_are(a, b.reshape(-1, 1), q, np.array([[r]]))
    bt_p = b.reshape(1, -1) @ p
    gain = np.linalg.solve(r + bt_p @ b.reshape(-1, 1), bt_p @ a)
    return gain.reshape(-1)


def default_pendulum_contexts() -> ContextDynamics:
    """Three pendulum contexts: pole mass and length scaled by 1.0/1.3/1.6.

    The base gain is an LQR design for the lightest context; replacing its
    pole-angle entry by ``PENDULUM_SEED_PARAMETER`` gives the shared seed
    gain, which keeps the closed loop stable (and the pole margin positive)
    in every context. See the README for the full parameter table.
    """
    a_mats, b_mats, table = [], [], []
    for scale in PENDULUM_SCALES:
        params = dict(PENDULUM_BASE)
        params["pole_mass"] *= scale
        params["pole_length"] *= scale
        a_c, b_c = _rotary_pendulum_continuous(**params)
        a_d, b_d = _discretize(a_c, b_c, PENDULUM_DT)
        a_mats.append(a_d)
        b_mats.append(b_d)
        table.append({"scale": scale, **params})
    q = np.diag([1.0, 0.1, 10.0, 0.1])
    base_gain = _dlqr(a_mats[0], b_mats[0], q, 50.0)
    base_gain[2] = PENDULUM_SEED_PARAMETER
    return ContextDynamics(
        a_mats=a_mats,
        b_mats=b_mats,
        noise_std=np.array(PENDULUM_NOISE),
        dt=PENDULUM_DT,
        failure_state=2,
        failure_limit=PENDULUM_FAILURE_LIMIT,
        seed_gain=base_gain,
        tuned_index=2,
        params_table=table,
    )
