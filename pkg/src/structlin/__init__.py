"""Structured substitutes for dense pointwise layers, with cost accounting and budget-matched fitting."""

from .linop import (
    DEFAULT_COST_MODEL,
    CostModel,
    Kind,
    OperatorSpec,
    ParamStore,
    apply,
    build,
    cost_report,
    materialize,
    multadd_count,
    param_count,
)

__all__ = [
    "DEFAULT_COST_MODEL",
    "CostModel",
    "Kind",
    "OperatorSpec",
    "ParamStore",
    "apply",
    "build",
    "cost_report",
    "materialize",
    "multadd_count",
    "param_count",
]
