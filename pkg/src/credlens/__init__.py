"""Credit scoring with built-in explanations.

Trains a gradient-boosted tree classifier on tabular loan data and explains
it three ways: a global interpretation tree distilled from SHAP
contributions, local high-precision anchor rules, and local prototype
examples selected by kernel similarity. A metrics module scores the
explanations (rule counts, consistency, fidelity to the model).
"""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: F401
from . import anchors, gbdt, girp, metrics, protodash, shap, tabular  # noqa: E402,F401
