"""Parameter budgets: normalised knob curves, common support, and a budget solver.

Every kind gets one knob ``t`` in ``[0, 1]`` shared by all substituted layers;
``t = 0`` is the smallest configuration and ``t = 1`` the largest. Integer
hyperparameters make each curve a non-decreasing step function of ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import kernels
from .errors import NoCommonSupportError, OutOfSupportError, SpecError
from .linop import Kind, OperatorSpec, param_count
from .transforms import tt_full_rank

ACDC_MAX_LAYERS = 12

KNOB_MEANING = {
    Kind.DENSE: "no knob: the dense matrix",
    Kind.ACDC: f"L = 1 + round(t * {ACDC_MAX_LAYERS - 1}), layers ascending",
    Kind.TT: "tt_rank = 1 + round(t * (full_rank - 1))",
    Kind.TUCKER: "rank_fraction from 1/(2*max dim) at t=0 up to 1 at t=1",
    Kind.RF: "d_bn = 1 + round(t * (min(n_out, n_in) - 1))",
    Kind.HASHED: "n_real = max(1, round(t * n_out * n_in))",
    Kind.SHUFFLE: "groups walks the divisors >= 2 of n, descending (more groups, fewer params)",
}

Dims = Sequence[tuple[int, int]]


def _rhu(x: float) -> int:
    return int(math.floor(x + 0.5))


def _shuffle_groups(n: int) -> list[int]:
    return [g for g in range(n, 1, -1) if n % g == 0]


def layer_hyper(kind: Kind, n_out: int, n_in: int, t: float) -> dict[str, Any]:
    """Hyperparameters of one ``n_out x n_in`` layer at knob position ``t``."""
    kind = Kind.parse(kind)
    t = min(1.0, max(0.0, float(t)))
    if kind is Kind.DENSE:
        return {}
    if kind is Kind.ACDC:
        if n_out != n_in or n_in % 2:
            raise SpecError(f"ACDC needs square even layers, got {n_out}x{n_in}")
        return {"L": 1 + _rhu(t * (ACDC_MAX_LAYERS - 1))}
    if kind is Kind.TT:
        rmax = tt_full_rank(kernels.reshape3(n_out, n_in))
        return {"tt_rank": 1 + _rhu(t * (rmax - 1))}
    if kind is Kind.TUCKER:
        fmin = 1.0 / (2 * max(kernels.reshape3(n_out, n_in)))
        return {"rank_fraction": fmin + t * (1.0 - fmin)}
    if kind is Kind.RF:
        return {"d_bn": 1 + _rhu(t * (min(n_out, n_in) - 1))}
    if kind is Kind.HASHED:
        return {"n_real": max(1, _rhu(t * n_out * n_in))}
    if kind is Kind.SHUFFLE:
        if n_out != n_in or n_in % 2:
            raise SpecError(f"ShuffleLinear needs square even layers, got {n_out}x{n_in}")
        groups = _shuffle_groups(n_in)
        return {"groups": groups[_rhu(t * (len(groups) - 1))]}
    raise SpecError(f"no knob for {kind}")


def layer_specs(kind: Kind, layer_dims: Dims, t: float, seed: int = 0) -> list[OperatorSpec]:
    return [
        OperatorSpec(kind, n_out, n_in, layer_hyper(kind, n_out, n_in, t), seed)
        for n_out, n_in in layer_dims
    ]


def total_params(kind: Kind, layer_dims: Dims, t: float) -> int:
    return sum(param_count(s) for s in layer_specs(kind, layer_dims, t))


@dataclass(frozen=True)
class KnobCurve:
    kind: Kind
    layer_dims: tuple[tuple[int, int], ...]
    samples: tuple[tuple[float, int], ...]
    knob_meaning: str = ""

    @property
    def min_params(self) -> int:
        return total_params(self.kind, self.layer_dims, 0.0)

    @property
    def max_params(self) -> int:
        return total_params(self.kind, self.layer_dims, 1.0)

    def params_at(self, t: float) -> int:
        return total_params(self.kind, self.layer_dims, t)

    def hypers_at(self, t: float) -> list[dict[str, Any]]:
        return [layer_hyper(self.kind, o, i, t) for o, i in self.layer_dims]


def knob_curve(kind, layer_dims: Dims, resolution: int = 65) -> KnobCurve:
    """Total parameter count of ``kind`` over an evenly spaced ``t`` grid."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    kind = Kind.parse(kind)
    dims = tuple((int(o), int(i)) for o, i in layer_dims)
    if not dims:
        raise ValueError("need at least one layer")
    grid = np.linspace(0.0, 1.0, resolution)
    samples = tuple((float(t), total_params(kind, dims, t)) for t in grid)
    return KnobCurve(kind, dims, samples, KNOB_MEANING[kind])


def support_interval(curves: Sequence[KnobCurve]) -> tuple[int, int]:
    """Parameter range every curve can reach: (max of minima, min of maxima)."""
    if not curves:
        raise ValueError("need at least one curve")
    lo = max(c.min_params for c in curves)
    hi = min(c.max_params for c in curves)
    if lo > hi:
        raise NoCommonSupportError(f"no common support: lower end {lo} exceeds upper end {hi}")
    return lo, hi


def log_midpoint(p_lo: float, p_hi: float) -> float:
    """Midpoint of ``[p_lo, p_hi]`` in log parameter count."""
    if not 0 < p_lo <= p_hi:
        raise ValueError(f"need 0 < p_lo <= p_hi, got {p_lo}, {p_hi}")
    return math.sqrt(p_lo * p_hi)


def geometric_budgets(p_lo: float, p_hi: float, k: int) -> list[int]:
    """``k`` budgets evenly spaced in log count; ``k == 3`` gives ends plus :func:`log_midpoint`."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return [_rhu(log_midpoint(p_lo, p_hi))]
    if k == 3:
        return [int(p_lo), _rhu(log_midpoint(p_lo, p_hi)), int(p_hi)]
    ratio = p_hi / p_lo
    return [_rhu(p_lo * ratio ** (i / (k - 1))) for i in range(k)]


@dataclass(frozen=True)
class BudgetSolution:
    kind: Kind
    t: float
    hypers: list[dict[str, Any]] = field(hash=False)
    params: int
    target: float
    within_tol: bool

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "t": self.t,
            "hypers": self.hypers,
            "params": self.params,
            "target": self.target,
            "within_tol": self.within_tol,
        }


def solve_budget(kind, layer_dims: Dims, target_params: float, tol: float = 0.0) -> BudgetSolution:
    """Knob position whose total parameter count is closest to ``target_params``.

    Bisects ``t`` to the step where the curve first reaches the target, then
    takes whichever neighbouring configuration is nearer, ties going to the
    smaller one.
    """
    kind = Kind.parse(kind)
    dims = tuple((int(o), int(i)) for o, i in layer_dims)
    lo_p, hi_p = total_params(kind, dims, 0.0), total_params(kind, dims, 1.0)
    if not lo_p <= target_params <= hi_p:
        raise OutOfSupportError(target_params, (lo_p, hi_p), kind.value)

    if lo_p >= target_params:
        t_best, p_best = 0.0, lo_p
    else:
        lo_t, hi_t = 0.0, 1.0  # params(lo_t) < target <= params(hi_t)
        for _ in range(64):
            mid = 0.5 * (lo_t + hi_t)
            if mid in (lo_t, hi_t):
                break
            if total_params(kind, dims, mid) >= target_params:
                hi_t = mid
            else:
                lo_t = mid
        p_lo, p_hi = total_params(kind, dims, lo_t), total_params(kind, dims, hi_t)
        if target_params - p_lo <= p_hi - target_params:
            t_best, p_best = lo_t, p_lo
        else:
            t_best, p_best = hi_t, p_hi
    hypers = [layer_hyper(kind, o, i, t_best) for o, i in dims]
    within = abs(p_best - target_params) <= tol * target_params
    return BudgetSolution(kind, t_best, hypers, p_best, target_params, within)


def wrn_pointwise_dims(depth: int = 28, width: int = 10, square_only: bool = False) -> list[tuple[int, int]]:
    """(n_out, n_in) of the block convolutions of a WRN-depth-width, read as pointwise layers."""
    if (depth - 4) % 6:
        raise ValueError("WRN depth must be 6k + 4")
    blocks = (depth - 4) // 6
    dims = []
    prev = 16
    for base in (16, 32, 64):
        w = base * width
        for b in range(blocks):
            dims.append((w, prev if b == 0 else w))
            dims.append((w, w))
        prev = w
    if square_only:
        dims = [d for d in dims if d[0] == d[1]]
    return dims
