"""Multi-class context classifier with pointwise frequentist uncertainty bounds.

The classifier is a kernel ridge regression onto one-hot context labels
(a conditional mean embedding with a Kronecker-delta output kernel). Its
uncertainty at a query decomposes into three terms that share the power
function rho(y) as a width factor:

* an estimation term ``sqrt(Gamma) * rho`` from fitting with finitely
  many samples of a function with RKHS norm at most sqrt(Gamma),
* a measurement term from observing binary labels instead of the
  underlying probabilities (labels are 1/4-sub-Gaussian around them),
* an identification term plus an offset when the labels themselves came
  from a statistical test that is only right with probability
  ``1 - delta_mmd``.

Models are immutable; ``fit`` and ``add_context`` build new instances.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .kernels import GramMatrix, KernelSpec, SpdFactor

GROUND_TRUTH = "gt"
IDENTIFIED = "id"


@dataclass(frozen=True)
class LabeledObservation:
    """A measurement vector with its context label and label provenance.

    ``delta_mmd`` records the identification failure probability in force
    when an identified label was produced; it must be None for ground truth.
    """

    y: np.ndarray
    context: int
    provenance: str = GROUND_TRUTH
    delta_mmd: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "y", np.atleast_1d(np.asarray(self.y, dtype=float)))
        if self.provenance not in (GROUND_TRUTH, IDENTIFIED):
            raise ValueError(f"provenance must be {GROUND_TRUTH!r} or {IDENTIFIED!r}")
        if self.provenance == IDENTIFIED:
            if self.delta_mmd is None or not (0.0 < self.delta_mmd < 1.0):
                raise ValueError("identified labels carry delta_mmd in (0, 1)")
        elif self.delta_mmd is not None:
            raise ValueError("ground-truth labels carry no delta_mmd")


@dataclass(frozen=True)
class BoundBreakdown:
    """Per-query decomposition of the classification uncertainty bound.

    ``total = term_estimation + term_measurement + term_context_id +
    offset_context_id``; each rho-scaled term already includes the factor
    rho(y). For a model trained purely on ground-truth labels the two
    identification entries are zero and the bound holds with probability
    ``1 - delta_class``; otherwise it holds with probability
    ``(1 - delta_mmd) * (1 - delta_class)``.
    """

    rho: float
    term_estimation: float
    term_measurement: float
    term_context_id: float
    offset_context_id: float
    total: float
    delta_class: float
    delta_mmd: float

    @property
    def joint_probability(self) -> float:
        if self.term_context_id == 0.0 and self.offset_context_id == 0.0:
            return 1.0 - self.delta_class
        return (1.0 - self.delta_mmd) * (1.0 - self.delta_class)


@dataclass(frozen=True)
class ContextDecision:
    """Outcome of gating the classifier's lower confidence bound at p_safe."""

    confident: bool
    context: int
    lower_bound: float


class ClassifierModel:
    """Kernel embedding classifier state: data, kernel, and cached solves.

    Parameters
    ----------
    inputs : ndarray, shape (n, s)
        Training measurement vectors.
    labels_onehot : ndarray, shape (n, m)
        One-hot context labels; row j is all zero except at the column of
        context c_j.
    kernel : KernelSpec
        Input-space kernel.
    lam : float
        Regularizer; the ridge actually applied to the kernel matrix is
        ``n * lam``.
    gamma : float
        Known bound on the squared RKHS norm of the true context
        probability functions.
    """

    def __init__(self, inputs, labels_onehot, kernel: KernelSpec, lam: float, gamma: float,
                 context_ids, provenance, delta_mmds):
        self.inputs = np.asarray(inputs, dtype=float)
        self.labels_onehot = np.asarray(labels_onehot, dtype=float)
        self.kernel = kernel
        self.lam = float(lam)
        self.gamma = float(gamma)
        self.context_ids = tuple(int(c) for c in context_ids)
        self.provenance = tuple(provenance)
        self.delta_mmds = tuple(delta_mmds)

        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError("inputs must be a nonempty (n, s) matrix")
        if not (self.lam > 0):
            raise ValueError("lam must be positive")
        if not (self.gamma > 0):
            raise ValueError("gamma must be positive")
        row_sums = self.labels_onehot.sum(axis=1)
        if not np.all(row_sums == 1.0):
            raise ValueError("each one-hot label row must sum to exactly 1")

        n = self.inputs.shape[0]
        gram_matrix = kernels.gram(kernel, self.inputs)
        ridge = n * self.lam
        self.factor = SpdFactor(gram_matrix.values + ridge * np.eye(n))
        gram_matrix.jitter_added = self.factor.jitter
        self.gram = gram_matrix
        self.lam_bar = max(1.0, n * self.lam)
        self.logdet_bar = kernels.log_det_regularized(gram_matrix, self.lam_bar)
        # Cached solves shared by every query: one-hot weights for the raw
        # prediction and all-ones weights for the identification offset.
        self._label_weights = self.factor.solve(self.labels_onehot)
        self._ones_weights = self.factor.solve(np.ones(n))

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def m(self) -> int:
        return self.labels_onehot.shape[1]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def has_identified_labels(self) -> bool:
        return any(p == IDENTIFIED for p in self.provenance)

    def observations(self):
        """Reconstruct the training set as LabeledObservation records."""
        cols = np.argmax(self.labels_onehot, axis=1)
        return [
            LabeledObservation(y=self.inputs[j], context=self.context_ids[cols[j]],
                               provenance=self.provenance[j], delta_mmd=self.delta_mmds[j])
            for j in range(self.n)
        ]

    def _query_matrix(self, ys) -> np.ndarray:
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        if ys.shape[1] != self.dim:
            raise ValueError(f"query dimension {ys.shape[1]} does not match training dimension {self.dim}")
        return ys


def fit(data, kernel: KernelSpec, lam: float, gamma: float) -> ClassifierModel:
    """Fit a classifier to labeled observations.

    Context ids may be arbitrary integers; they are remapped onto columns
    in ascending order. Raises ValueError on empty or inconsistent data.
    """
    data = list(data)
    if not data:
        raise ValueError("fit requires at least one observation")
    dims = {obs.y.shape[0] for obs in data}
    if len(dims) != 1:
        raise ValueError("all observations must share the same dimension")
    context_ids = sorted({obs.context for obs in data})
    col = {c: i for i, c in enumerate(context_ids)}
    n, m = len(data), len(context_ids)
    inputs = np.stack([obs.y for obs in data])
    onehot = np.zeros((n, m))
    for j, obs in enumerate(data):
        onehot[j, col[obs.context]] = 1.0
    return ClassifierModel(
        inputs, onehot, kernel, lam, gamma,
        context_ids=context_ids,
        provenance=[obs.provenance for obs in data],
        delta_mmds=[obs.delta_mmd for obs in data],
    )


def add_context(model: ClassifierModel, data_for_new_context) -> ClassifierModel:
    """Refit with observations of one previously unseen context appended."""
    new = list(data_for_new_context)
    if not new:
        raise ValueError("add_context requires at least one observation")
    new_ids = {obs.context for obs in new}
    if len(new_ids) != 1:
        raise ValueError("add_context takes observations of a single new context")
    (new_id,) = new_ids
    if new_id in model.context_ids:
        raise ValueError(f"context {new_id} already present")
    return fit(model.observations() + new, model.kernel, model.lam, model.gamma)


def predict_raw_batch(model: ClassifierModel, ys) -> np.ndarray:
    """Raw per-context scores for a batch of queries, shape (q, m).

    Components are label-weighted ridge predictions; they may fall outside
    [0, 1] at finite sample sizes.
    """
    ys = model._query_matrix(ys)
    k_y = kernels.cross_gram(model.kernel, model.inputs, ys)
    return model._label_weights.T.dot(k_y).T


def predict_raw(model: ClassifierModel, y) -> np.ndarray:
    return predict_raw_batch(model, y)[0]


def predict_normalized(model: ClassifierModel, y) -> np.ndarray:
    """Clip raw scores to [0, 1] and renormalize to a probability vector."""
    raw = np.clip(predict_raw(model, y), 0.0, 1.0)
    total = raw.sum()
    if total == 0.0:
        return np.full(model.m, 1.0 / model.m)
    return raw / total


def power_function_batch(model: ClassifierModel, ys) -> np.ndarray:
    """rho(y) = sqrt(k(y,y) - K_y^T (K + n*lam*I)^-1 K_y), clipped at zero."""
    ys = model._query_matrix(ys)
    k_y = kernels.cross_gram(model.kernel, model.inputs, ys)
    quad = np.einsum("nq,nq->q", k_y, model.factor.solve(k_y))
    return np.sqrt(np.maximum(0.0, model.kernel.diag_value() - quad))


def power_function(model: ClassifierModel, y) -> float:
    return float(power_function_batch(model, y)[0])


def bound_estimation(model: ClassifierModel, y) -> float:
    """Estimation uncertainty sqrt(Gamma) * rho(y)."""
    return float(np.sqrt(model.gamma) * power_function(model, y))


def _check_delta(delta, name, upper=1.0):
    if not (0.0 < delta < upper):
        raise ValueError(f"{name} must lie in (0, {upper})")


def _measurement_factor(model: ClassifierModel, delta_class: float) -> float:
    # 1/(4 sqrt(n lam)) * sqrt(log det(K + lam_bar I) - 2 log delta)
    return np.sqrt(model.logdet_bar - 2.0 * np.log(delta_class)) / (
        4.0 * np.sqrt(model.n * model.lam))


def bound_measurement(model: ClassifierModel, y, delta_class: float) -> float:
    """Uncertainty from observing binary labels instead of probabilities."""
    _check_delta(delta_class, "delta_class")
    return float(power_function(model, y) * _measurement_factor(model, delta_class))


def _context_id_factor(model: ClassifierModel, delta_mmd: float) -> float:
    # The sub-Gaussian parameter of a label that is wrong with probability
    # delta is (1 - 2 delta) / (2 (ln(1-delta) - ln delta)); it is only
    # meaningful for delta < 1/2.
    sigma = (1.0 - 2.0 * delta_mmd) / (2.0 * (np.log1p(-delta_mmd) - np.log(delta_mmd)))
    return sigma * np.sqrt(model.logdet_bar - 2.0 * np.log(delta_mmd)) / np.sqrt(model.n * model.lam)


def bound_context_id(model: ClassifierModel, y, delta_mmd: float):
    """Identification uncertainty: a rho-scaled term and a constant offset.

    The offset is ``(1 - delta_mmd) * ones^T (K + n*lam*I)^-1 K_y`` with the
    all-ones vector standing in worst case for the label column.
    """
    _check_delta(delta_mmd, "delta_mmd", upper=0.5)
    ys = model._query_matrix(y)
    k_y = kernels.cross_gram(model.kernel, model.inputs, ys)[:, 0]
    term = float(power_function(model, y) * _context_id_factor(model, delta_mmd))
    offset = float((1.0 - delta_mmd) * model._ones_weights.dot(k_y))
    return term, offset


def total_bound_batch(model: ClassifierModel, ys, delta_class: float,
                      delta_mmd: float) -> list[BoundBreakdown]:
    """Uncertainty bounds for a batch of queries (one breakdown per row).

    When every training label is ground truth the identification term and
    offset are omitted (no identification uncertainty was ever incurred).
    """
    _check_delta(delta_class, "delta_class")
    _check_delta(delta_mmd, "delta_mmd")
    ys = model._query_matrix(ys)
    k_y = kernels.cross_gram(model.kernel, model.inputs, ys)
    quad = np.einsum("nq,nq->q", k_y, model.factor.solve(k_y))
    rho = np.sqrt(np.maximum(0.0, model.kernel.diag_value() - quad))
    est = np.sqrt(model.gamma) * rho
    meas = rho * _measurement_factor(model, delta_class)
    if model.has_identified_labels:
        _check_delta(delta_mmd, "delta_mmd", upper=0.5)
        ctx = rho * _context_id_factor(model, delta_mmd)
        offset = (1.0 - delta_mmd) * model._ones_weights.dot(k_y)
    else:
        ctx = np.zeros_like(rho)
        offset = np.zeros_like(rho)
    return [
        BoundBreakdown(
            rho=float(rho[j]),
            term_estimation=float(est[j]),
            term_measurement=float(meas[j]),
            term_context_id=float(ctx[j]),
            offset_context_id=float(offset[j]),
            total=float(est[j] + meas[j] + ctx[j] + offset[j]),
            delta_class=delta_class,
            delta_mmd=delta_mmd,
        )
        for j in range(ys.shape[0])
    ]


def total_bound(model: ClassifierModel, y, delta_class: float, delta_mmd: float) -> BoundBreakdown:
    """Assemble the full uncertainty bound at a single query point."""
    return total_bound_batch(model, y, delta_class, delta_mmd)[0]


def decide(model: ClassifierModel, y, p_safe: float, delta_class: float,
           delta_mmd: float) -> ContextDecision:
    """Pick a context iff its lower confidence bound clears p_safe.

    Ties break toward the largest lower bound, then the smallest context id
    (columns are already in ascending id order).
    """
    if not (0.0 < p_safe < 1.0):
        raise ValueError("p_safe must lie in (0, 1)")
    raw = predict_raw(model, y)
    breakdown = total_bound(model, y, delta_class, delta_mmd)
    lower = raw - breakdown.total
    best = int(np.argmax(lower))
    best_bound = float(lower[best])
    return ContextDecision(
        confident=best_bound > p_safe,
        context=model.context_ids[best],
        lower_bound=best_bound,
    )


def estimate_rkhs_norm(alpha, K) -> float:
    """RKHS norm sqrt(alpha^T K alpha) of the expansion sum_i alpha_i k(y_i, .)."""
    alpha = np.asarray(alpha, dtype=float)
    values = K.values if isinstance(K, GramMatrix) else np.asarray(K, dtype=float)
    return float(np.sqrt(max(0.0, alpha.dot(values).dot(alpha))))


# ---------------------------------------------------------------------------
# Dataset and model persistence


def save_observations(path, observations):
    """Write observations as CSV: y_0..y_{s-1}, context, provenance, delta_mmd."""
    observations = list(observations)
    s = observations[0].y.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"y_{i}" for i in range(s)] + ["context", "provenance", "delta_mmd"])
        for obs in observations:
            dm = "" if obs.delta_mmd is None else repr(obs.delta_mmd)
            writer.writerow([repr(float(v)) for v in obs.y] + [obs.context, obs.provenance, dm])


def load_observations(path):
    """Read a dataset written by :func:`save_observations`."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "context" not in reader.fieldnames:
            raise ValueError(f"{path}: missing dataset header")
        y_cols = [c for c in reader.fieldnames if c.startswith("y_")]
        y_cols.sort(key=lambda c: int(c.split("_", 1)[1]))
        for row in reader:
            dm = row.get("delta_mmd", "")
            out.append(LabeledObservation(
                y=np.array([float(row[c]) for c in y_cols]),
                context=int(row["context"]),
                provenance=row.get("provenance", GROUND_TRUTH) or GROUND_TRUTH,
                delta_mmd=float(dm) if dm not in ("", None) else None,
            ))
    return out


def model_to_json(model: ClassifierModel) -> dict:
    """JSON-serializable model state; factorizations are rebuilt on load."""
    cols = np.argmax(model.labels_onehot, axis=1)
    return {
        "kernel": model.kernel.to_dict(),
        "lam": model.lam,
        "gamma": model.gamma,
        "context_ids": list(model.context_ids),
        "inputs": model.inputs.tolist(),
        "labels": [model.context_ids[c] for c in cols],
        "provenance": list(model.provenance),
        "delta_mmd": [dm for dm in model.delta_mmds],
    }


def model_from_json(payload: dict) -> ClassifierModel:
    obs = [
        LabeledObservation(y=np.asarray(y, dtype=float), context=int(c),
                           provenance=p, delta_mmd=dm)
        for y, c, p, dm in zip(payload["inputs"], payload["labels"],
                               payload["provenance"], payload["delta_mmd"])
    ]
    return fit(obs, KernelSpec.from_dict(payload["kernel"]),
               float(payload["lam"]), float(payload["gamma"]))


def save_model(path, model: ClassifierModel):
    Path(path).write_text(json.dumps(model_to_json(model), indent=2, sort_keys=True))


def load_model(path) -> ClassifierModel:
    return model_from_json(json.loads(Path(path).read_text()))
