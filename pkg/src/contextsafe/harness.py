"""The safe-exploration decision loop and the experiment scenarios.

Each iteration of the main loop observes the context channel, asks the
classifier for a context whose lower confidence bound clears ``p_safe``,
and falls back to an identification experiment (chirp excitation under
the seed-safe gain, MMD test against the stored library) when no context
qualifies. Identified labels feed back into the classifier. The safe
optimizer then runs one exploration episode in the decided context.

Scenario variants: ``pure-safeopt`` ignores contexts altogether
(single-slot optimizer), ``always-identify`` skips the classifier gate,
``sensitivity`` sweeps p_safe over the five-height channel,
``logistic-bounds`` tabulates bounds on the synthetic logistic task, and
``mmd-demo`` traces the MMD-versus-shift curves behind the mixing-shift
choice.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classifier as clf
from . import identify as idf
from .environments import (Chirp, ContextDynamics, ObservationChannel,
                           default_pendulum_contexts, logistic_generator,
                           logistic_p0, observe_context, simulate_episode)
from .errors import ConfigError
from .kernels import KernelSpec
from .optimizer import ObjectiveObservation, SafeOptimizer

SCENARIOS = ("full-loop", "pure-safeopt", "always-identify", "sensitivity",
             "logistic-bounds", "mmd-demo", "classify")

CLASSIFIED = "classified"
IDENTIFIED = "identified"

_SEED_SPAN = 2**31


@dataclass
class ExperimentConfig:
    """Flat experiment configuration with defaults for every scenario.

    The JSON config file may set any subset of these fields; unknown keys
    raise :class:`ConfigError`. See the README for the documented schema.
    """

    scenario: str = "full-loop"
    seed: int = 0
    iterations: int = 200

    # probability budget
    p_safe: float = 0.8
    delta_class: float = 0.05
    delta_mmd_prime: float = 0.05
    epsilon: float = 0.01
    delta_safe: float = 0.05

    # classifier
    lam: float = 1e-4
    gamma: float = 2.0
    classifier_kernel: KernelSpec = field(
        default_factory=lambda: KernelSpec("gaussian", 0.2, 1.0))

    # context observation channel
    heights: tuple = (1.0, 2.0, 3.0)
    observation_noise: float = 0.1

    # identification
    mmd_kernel: KernelSpec = field(
        default_factory=lambda: KernelSpec("gaussian", 0.16, 650.0))
    subsample_shift: int = 50
    mmd_state_columns: tuple = (2, 3)
    max_contexts: int = 3

    # optimizer
    beta: float = 3.0
    param_kernel: KernelSpec = field(
        default_factory=lambda: KernelSpec("matern52", 0.1, 0.5))
    context_kernel: KernelSpec = field(
        default_factory=lambda: KernelSpec("gaussian", 1.0, 1.0))
    optimizer_noise_std: float = 0.03
    gain_low: float = 1.9
    gain_high: float = 3.0
    grid_size: int = 101
    reward_scale: float = 50.0

    # episodes
    episode_steps: int = 2500
    chirp_f0: float = 0.5
    chirp_f1: float = 5.0
    chirp_amplitude: float = 0.18
    optimization_excitation: str = "chirp"  # "chirp" or "none"

    # sensitivity scenario
    p_safe_sweep: tuple = (0.5, 0.6, 0.7, 0.8, 0.9)
    sensitivity_heights: tuple = (1.0, 2.0, 2.5, 2.75, 2.875)
    sensitivity_train: int = 2000
    sensitivity_decisions: int = 2000

    # logistic-bounds scenario
    logistic_points_per_band: int = 50
    logistic_queries: int = 100
    logistic_kernel: KernelSpec = field(
        default_factory=lambda: KernelSpec("gaussian", 1.0, 1.0))

    # mmd-demo scenario
    shift_max: int = 100

    # classify scenario
    dataset: str | None = None
    queries: tuple = ()

    figures: bool = True

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        for name in ("p_safe", "delta_class", "delta_mmd_prime", "epsilon", "delta_safe"):
            value = getattr(self, name)
            if not (0.0 < value < 1.0):
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")
        if self.gain_high <= self.gain_low:
            raise ConfigError("gain_high must exceed gain_low")
        if self.grid_size < 2:
            raise ConfigError("grid_size must be at least 2")
        if self.optimization_excitation not in ("chirp", "none"):
            raise ConfigError("optimization_excitation must be 'chirp' or 'none'")

    @property
    def delta_mmd(self) -> float:
        return idf.combined_delta_mmd(self.delta_mmd_prime, self.epsilon)

    @property
    def chirp(self) -> Chirp:
        return Chirp(f0=self.chirp_f0, f1=self.chirp_f1, amplitude=self.chirp_amplitude)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, KernelSpec):
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out


_KERNEL_FIELDS = {"classifier_kernel", "mmd_kernel", "param_kernel",
                  "context_kernel", "logistic_kernel"}
_TUPLE_FIELDS = {"heights", "mmd_state_columns", "p_safe_sweep",
                 "sensitivity_heights", "queries"}


def config_from_dict(payload: dict) -> ExperimentConfig:
    """Build a config from a JSON dictionary, rejecting unknown keys."""
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in payload.items():
        try:
            if key in _KERNEL_FIELDS:
                value = KernelSpec.from_dict(value) if isinstance(value, dict) else value
            elif key in _TUPLE_FIELDS:
                value = tuple(value)
        except (TypeError, KeyError, ValueError) as err:
            raise ConfigError(f"bad value for {key}: {err}") from err
        kwargs[key] = value
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err


def load_config(path) -> ExperimentConfig:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(payload, dict):
        raise ConfigError("config file must hold a JSON object")
    return config_from_dict(payload)


def safety_probability(delta_safe: float, delta_class: float, delta_mmd: float,
                         p_safe: float, path: str) -> float:
    """End-to-end safety probability of one loop iteration by decision path."""
    if path == IDENTIFIED:
        return (1.0 - delta_safe) * (1.0 - delta_mmd)
    if path == CLASSIFIED:
        return (1.0 - delta_safe) * p_safe * (1.0 - delta_class) * (1.0 - delta_mmd)
    raise ValueError(f"unknown path {path!r}")


@dataclass
class RunMetrics:
    """Aggregate counters for one loop run."""

    scenario: str
    seed: int
    episodes: int = 0
    identification_episodes: int = 0
    failures: int = 0
    total_samples: int = 0
    per_context_correct: dict = field(default_factory=dict)
    per_context_incorrect: dict = field(default_factory=dict)
    identified_correct: int = 0
    identified_incorrect: int = 0
    classified_path_used: bool = False
    safety_probability: float = 0.0
    safety_probability_identified: float = 0.0
    delta_mmd: float = 0.0

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["per_context_correct"] = {str(k): v for k, v in self.per_context_correct.items()}
        out["per_context_incorrect"] = {str(k): v for k, v in self.per_context_incorrect.items()}
        return out


@dataclass
class LoopResult:
    metrics: RunMetrics
    episode_rows: list
    decision_rows: list


def _norm_grid(config: ExperimentConfig) -> np.ndarray:
    return np.linspace(0.0, 1.0, config.grid_size).reshape(-1, 1)


def _gain_of(config: ExperimentConfig, a_norm: float) -> float:
    return config.gain_low + float(a_norm) * (config.gain_high - config.gain_low)


def _norm_of(config: ExperimentConfig, gain: float) -> float:
    return (gain - config.gain_low) / (config.gain_high - config.gain_low)


def _build_optimizer(config: ExperimentConfig, n_contexts: int,
                     dyn: ContextDynamics) -> SafeOptimizer:
    grid = _norm_grid(config)
    seed_norm = _norm_of(config, dyn.seed_gain[dyn.tuned_index])
    seed_index = int(np.argmin(np.abs(grid[:, 0] - seed_norm)))
    return SafeOptimizer(
        grid=grid,
        n_contexts=n_contexts,
        seed_indices=[seed_index],
        param_kernel=config.param_kernel,
        context_kernel=config.context_kernel,
        noise_std=config.optimizer_noise_std,
        beta=config.beta,
        n_constraints=1,
    )


def run_algorithm1(config: ExperimentConfig, dyn: ContextDynamics | None = None) -> LoopResult:
    """Run the decision loop for one seed under the configured scenario."""
    if config.scenario not in ("full-loop", "pure-safeopt", "always-identify"):
        raise ConfigError(f"run_algorithm1 does not handle scenario {config.scenario!r}")
    if dyn is None:
        dyn = default_pendulum_contexts()
    m_env = dyn.n_contexts
    if len(config.heights) != m_env:
        raise ConfigError(f"need {m_env} heights, got {len(config.heights)}")

    rng = np.random.default_rng(config.seed)
    channel = ObservationChannel(
        means=np.asarray(config.heights, dtype=float).reshape(-1, 1),
        noise_std=config.observation_noise)
    pooled = config.scenario == "pure-safeopt"
    optimizer = _build_optimizer(config, 1 if pooled else config.max_contexts, dyn)
    library = idf.ContextLibrary(kernel=config.mmd_kernel,
                                 k_bound=config.mmd_kernel.diag_value())
    sub_config = idf.SubsampleConfig(shift=config.subsample_shift, epsilon=config.epsilon)
    mmd_cols = list(config.mmd_state_columns)
    chirp = config.chirp
    opt_excitation = chirp if config.optimization_excitation == "chirp" else None
    delta_mmd = config.delta_mmd

    observations: list[clf.LabeledObservation] = []
    model = None
    truth_of_library_id: dict[int, int] = {}

    metrics = RunMetrics(scenario=config.scenario, seed=config.seed, delta_mmd=delta_mmd)
    episode_rows, decision_rows = [], []

    def record_episode(iteration, kind, episode, context_decided, gain_value):
        metrics.failures += int(episode.failed)
        metrics.total_samples += episode.trajectory.length
        episode_rows.append({
            "iteration": iteration,
            "kind": kind,
            "context_truth": episode.context_truth,
            "context_decided": context_decided,
            "decision_path": episode.decision_path,
            "gain": gain_value,
            "reward": episode.reward,
            "margin": float(episode.constraints[0]),
            "failed": int(episode.failed),
            "samples": episode.trajectory.length,
        })

    for iteration in range(config.iterations):
        c_true = int(rng.integers(m_env))
        y = observe_context(channel, c_true, seed=int(rng.integers(_SEED_SPAN)))

        path = None
        c_dec = None
        lower_bound = None
        if pooled:
            path = "pooled"
            c_dec = 0
        elif config.scenario == "full-loop" and model is not None:
            decision = clf.decide(model, y, config.p_safe, config.delta_class, delta_mmd)
            lower_bound = decision.lower_bound
            if decision.confident:
                path = CLASSIFIED
                c_dec = decision.context
                metrics.classified_path_used = True
                key = truth_of_library_id.get(c_dec)
                if key == c_true:
                    metrics.per_context_correct[c_true] = (
                        metrics.per_context_correct.get(c_true, 0) + 1)
                else:
                    metrics.per_context_incorrect[c_true] = (
                        metrics.per_context_incorrect.get(c_true, 0) + 1)

        if path is None and not pooled:
            path = IDENTIFIED
            episode = simulate_episode(dyn, c_true, dyn.seed_gain, config.episode_steps,
                                       excitation=chirp,
                                       seed=int(rng.integers(_SEED_SPAN)))
            episode.decision_path = path
            pole_traj = idf.Trajectory(samples=episode.trajectory.samples[:, mmd_cols],
                                       dt=dyn.dt, context_truth=c_true)
            result = idf.identify(pole_traj, library, sub_config, config.delta_mmd_prime)
            if result.is_new and len(library.entries) > config.max_contexts:
                # library at capacity: drop the spurious entry, take the closest
                del library.entries[result.context]
                c_dec = min(result.tests, key=lambda t: t.mmd_sq).context
            else:
                c_dec = result.context
                if result.is_new:
                    truth_of_library_id[c_dec] = c_true
            if truth_of_library_id.get(c_dec) == c_true:
                metrics.identified_correct += 1
            else:
                metrics.identified_incorrect += 1
            metrics.identification_episodes += 1
            episode.context_decided = c_dec
            record_episode(iteration, "identification", episode, c_dec,
                           float(dyn.seed_gain[dyn.tuned_index]))
            observations.append(clf.LabeledObservation(
                y=y, context=c_dec, provenance=clf.IDENTIFIED, delta_mmd=delta_mmd))
            model = clf.fit(observations, config.classifier_kernel, config.lam, config.gamma)

        a_norm = float(optimizer.propose(c_dec)[0])
        gain_value = _gain_of(config, a_norm)
        episode = simulate_episode(dyn, c_true, dyn.gain_with_parameter(gain_value),
                                   config.episode_steps, excitation=opt_excitation,
                                   seed=int(rng.integers(_SEED_SPAN)))
        episode.decision_path = path
        episode.context_decided = c_dec
        record_episode(iteration, "optimization", episode, c_dec, gain_value)
        optimizer.observe(ObjectiveObservation(
            a=[a_norm], c=c_dec, f_meas=episode.reward / config.reward_scale,
            g_meas=episode.constraints))

        metrics.episodes += 1
        decision_rows.append({
            "iteration": iteration,
            "context_truth": c_true,
            "y": float(y[0]),
            "path": path,
            "context_decided": c_dec,
            "lower_bound": lower_bound,
            "gain": gain_value,
        })

    metrics.safety_probability_identified = safety_probability(
        config.delta_safe, config.delta_class, delta_mmd, config.p_safe, IDENTIFIED)
    if metrics.classified_path_used:
        metrics.safety_probability = safety_probability(
            config.delta_safe, config.delta_class, delta_mmd, config.p_safe, CLASSIFIED)
    else:
        metrics.safety_probability = metrics.safety_probability_identified
    return LoopResult(metrics=metrics, episode_rows=episode_rows, decision_rows=decision_rows)


@dataclass
class SensitivityResult:
    counts: dict
    decision_rows: list
    model_size: int


def run_sensitivity(config: ExperimentConfig) -> SensitivityResult:
    """Sweep p_safe over the five-height channel with a ground-truth-trained model.

    The same decision queries are reused for every threshold, so the
    per-context confident counts are non-increasing in p_safe by decision
    monotonicity.
    """
    rng = np.random.default_rng(config.seed)
    heights = np.asarray(config.sensitivity_heights, dtype=float).reshape(-1, 1)
    channel = ObservationChannel(means=heights, noise_std=config.observation_noise)
    m = channel.n_contexts

    train = []
    for _ in range(config.sensitivity_train):
        c = int(rng.integers(m))
        y = observe_context(channel, c, seed=int(rng.integers(_SEED_SPAN)))
        train.append(clf.LabeledObservation(y=y, context=c))
    model = clf.fit(train, config.classifier_kernel, config.lam, config.gamma)

    queries = []
    for _ in range(config.sensitivity_decisions):
        c = int(rng.integers(m))
        y = observe_context(channel, c, seed=int(rng.integers(_SEED_SPAN)))
        queries.append((c, y))

    query_matrix = np.stack([y for _, y in queries])
    raw = clf.predict_raw_batch(model, query_matrix)
    breakdowns = clf.total_bound_batch(model, query_matrix, config.delta_class,
                                       config.delta_mmd)
    totals = np.array([b.total for b in breakdowns])
    lower = raw - totals[:, None]
    best = np.argmax(lower, axis=1)
    best_bound = lower[np.arange(len(queries)), best]

    counts = {}
    decision_rows = []
    for p_safe in config.p_safe_sweep:
        key = p_safe
        counts[key] = {c: {"correct": 0, "incorrect": 0} for c in range(m)}
        for j, (c_true, y) in enumerate(queries):
            confident = bool(best_bound[j] > p_safe)
            decided = model.context_ids[int(best[j])] if confident else None
            if confident:
                bucket = "correct" if decided == c_true else "incorrect"
                counts[key][c_true][bucket] += 1
            decision_rows.append({
                "p_safe": p_safe,
                "context_truth": c_true,
                "y": float(y[0]),
                "confident": int(confident),
                "context_decided": decided if confident else "",
                "lower_bound": float(best_bound[j]),
            })
    return SensitivityResult(counts=counts, decision_rows=decision_rows,
                             model_size=model.n)


@dataclass
class LogisticBoundsResult:
    rows: list
    coverage: float
    mean_total: float
    model_size: int


def run_logistic_bounds(config: ExperimentConfig) -> LogisticBoundsResult:
    """Tabulate estimates, bound breakdowns, and the truth on the logistic task."""
    sample = logistic_generator(config.seed, config.logistic_points_per_band)
    model = clf.fit(sample.observations(), config.logistic_kernel, config.lam, config.gamma)
    rng = np.random.default_rng(config.seed + 1)
    queries = np.sort(rng.uniform(-6.0, 7.0, config.logistic_queries))

    rows = []
    covered = 0
    for y in queries:
        point = np.array([y])
        raw = clf.predict_raw(model, point)
        breakdown = clf.total_bound(model, point, config.delta_class, config.delta_mmd)
        truth = float(logistic_p0(y))
        inside = abs(truth - raw[0]) <= breakdown.total
        covered += int(inside)
        rows.append({
            "y": float(y),
            "p_hat_0": float(raw[0]),
            "p_hat_1": float(raw[1]),
            "truth_p0": truth,
            "rho": breakdown.rho,
            "term_estimation": breakdown.term_estimation,
            "term_measurement": breakdown.term_measurement,
            "term_context_id": breakdown.term_context_id,
            "offset_context_id": breakdown.offset_context_id,
            "total": breakdown.total,
            "lower_0": float(raw[0]) - breakdown.total,
            "upper_0": float(raw[0]) + breakdown.total,
            "covered": int(inside),
        })
    mean_total = float(np.mean([r["total"] for r in rows]))
    return LogisticBoundsResult(rows=rows, coverage=covered / len(rows),
                                mean_total=mean_total, model_size=model.n)


@dataclass
class MmdDemoResult:
    rows: list
    summaries: list


def run_mmd_demo(config: ExperimentConfig, dyn: ContextDynamics | None = None) -> MmdDemoResult:
    """Trace squared MMD between two independent trajectories per context
    as the sub-sampling shift grows, with the acceptance threshold."""
    if dyn is None:
        dyn = default_pendulum_contexts()
    rng = np.random.default_rng(config.seed)
    cols = list(config.mmd_state_columns)
    rows, summaries = [], []
    for c in range(dyn.n_contexts):
        ep1 = simulate_episode(dyn, c, dyn.seed_gain, config.episode_steps,
                               excitation=config.chirp, seed=int(rng.integers(_SEED_SPAN)))
        ep2 = simulate_episode(dyn, c, dyn.seed_gain, config.episode_steps,
                               excitation=config.chirp, seed=int(rng.integers(_SEED_SPAN)))
        t1 = idf.Trajectory(samples=ep1.trajectory.samples[:, cols], dt=dyn.dt)
        t2 = idf.Trajectory(samples=ep2.trajectory.samples[:, cols], dt=dyn.dt)
        result = idf.estimate_mixing_shift(t1, t2, config.mmd_kernel, config.shift_max,
                                           delta_prime=config.delta_mmd_prime)
        for a in range(1, config.shift_max + 1):
            rows.append({
                "context": c,
                "shift": a,
                "mmd_sq": float(result.mmd_curve[a - 1]),
                "accept_threshold": float(result.thresholds[a - 1]),
            })
        summaries.append({"context": c, "shift": result.shift,
                          "satisfied": bool(result.satisfied)})
    return MmdDemoResult(rows=rows, summaries=summaries)


@dataclass
class ClassifyResult:
    rows: list
    model_size: int


def run_classify(config: ExperimentConfig) -> ClassifyResult:
    """Ad-hoc classification of query points against a CSV dataset."""
    if not config.dataset:
        raise ConfigError("classify requires a 'dataset' CSV path in the config")
    observations = clf.load_observations(config.dataset)
    if not observations:
        raise ConfigError(f"dataset {config.dataset} is empty")
    model = clf.fit(observations, config.classifier_kernel, config.lam, config.gamma)
    if not config.queries:
        raise ConfigError("classify requires 'queries' (list of measurement vectors)")
    rows = []
    for query in config.queries:
        y = np.atleast_1d(np.asarray(query, dtype=float))
        raw = clf.predict_raw(model, y)
        normalized = clf.predict_normalized(model, y)
        breakdown = clf.total_bound(model, y, config.delta_class, config.delta_mmd)
        decision = clf.decide(model, y, config.p_safe, config.delta_class, config.delta_mmd)
        row = {
            "y": " ".join(repr(float(v)) for v in y),
            "confident": int(decision.confident),
            "context": decision.context,
            "lower_bound": decision.lower_bound,
            "rho": breakdown.rho,
            "total": breakdown.total,
        }
        for i, c in enumerate(model.context_ids):
            row[f"p_hat_{c}"] = float(raw[i])
            row[f"p_norm_{c}"] = float(normalized[i])
        rows.append(row)
    return ClassifyResult(rows=rows, model_size=model.n)
