"""Safe exploration under uncertain discrete contexts.

Library layout:

* :mod:`contextsafe.kernels` -- kernel functions and the regularized solve
* :mod:`contextsafe.classifier` -- embedding classifier with uncertainty bounds
* :mod:`contextsafe.identify` -- MMD-based context identification
* :mod:`contextsafe.optimizer` -- minimal contextual safe Bayesian optimizer
* :mod:`contextsafe.environments` -- simulated systems and data generators
* :mod:`contextsafe.harness` -- the decision loop and experiment scenarios
* :mod:`contextsafe.cli` -- command-line entry points
"""

from .classifier import (BoundBreakdown, ClassifierModel, ContextDecision,
                         LabeledObservation)
from .errors import ConfigError, NumericalError
from .identify import ContextLibrary, MmdTestResult, SubsampleConfig, Trajectory
from .kernels import GramMatrix, KernelSpec
from .optimizer import ObjectiveObservation, SafeOptimizer

__version__ = "0.1.0"

__all__ = [
    "BoundBreakdown",
    "ClassifierModel",
    "ConfigError",
    "ContextDecision",
    "ContextLibrary",
    "GramMatrix",
    "KernelSpec",
    "LabeledObservation",
    "MmdTestResult",
    "NumericalError",
    "ObjectiveObservation",
    "SafeOptimizer",
    "SubsampleConfig",
    "Trajectory",
    "__version__",
]
