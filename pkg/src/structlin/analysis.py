"""HashedNet weight-exclusion statistics, the ACDC mult-add crossover, and result tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import NoCrossoverError
from .linop import DEFAULT_COST_MODEL, CostModel
from .transforms import acdc_multadds


def exclusion_exact(n_real: int, n_virtual: int) -> float:
    """Expected number of real weights no virtual entry points at.

    ``n_real * (1 - 1/n_real) ** n_virtual``, evaluated in log space.
    """
    if n_real < 1 or n_virtual < 1:
        raise ValueError("n_real and n_virtual must be >= 1")
    if n_real == 1:
        return 0.0
    return n_real * math.exp(n_virtual * math.log1p(-1.0 / n_real))


def exclusion_limit(c: float) -> float:
    """Excluded fraction ``exp(-1/c)`` for compression ratio ``c = n_real / n_virtual``."""
    if not c > 0:
        raise ValueError("compression ratio must be positive")
    return math.exp(-1.0 / c)


def exclusion_montecarlo(n_real: int, n_virtual: int, trials: int, seed: int = 0) -> tuple[float, float]:
    """Mean excluded fraction over sampled index tables, with its standard error."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    fractions = np.empty(trials)
    for i in range(trials):
        idx = rng.integers(0, n_real, size=n_virtual)
        used = np.count_nonzero(np.bincount(idx, minlength=n_real))
        fractions[i] = (n_real - used) / n_real
    mean = float(fractions.mean())
    stderr = float(fractions.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return mean, stderr


@dataclass(frozen=True)
class ExclusionReport:
    n_real: int
    n_virtual: int
    exact_expected_excluded: float
    exact_ratio: float
    limit_ratio: float
    montecarlo_ratio: float | None = None
    montecarlo_stderr: float | None = None

    def to_json(self) -> dict:
        return dict(self.__dict__)


def exclusion_report(n_real: int, n_virtual: int, trials: int = 0, seed: int = 0) -> ExclusionReport:
    exact = exclusion_exact(n_real, n_virtual)
    mc = exclusion_montecarlo(n_real, n_virtual, trials, seed) if trials else (None, None)
    return ExclusionReport(
        n_real=n_real,
        n_virtual=n_virtual,
        exact_expected_excluded=exact,
        exact_ratio=exact / n_real,
        limit_ratio=exclusion_limit(n_real / n_virtual),
        montecarlo_ratio=mc[0],
        montecarlo_stderr=mc[1],
    )


def acdc_crossover(L: int, cost_model: CostModel | None = None, n_max: int = 1 << 22) -> int:
    """Smallest width N at which an L-layer ACDC stack costs fewer mult-adds than N*N."""
    if L < 1:
        raise ValueError("L must be >= 1")
    model = cost_model or DEFAULT_COST_MODEL
    for n in range(2, n_max + 1):
        if acdc_multadds(n, L, model) < n * n:
            return n
    raise NoCrossoverError(f"{L}-layer ACDC never beats dense below N={n_max}")


@dataclass(frozen=True)
class ReportRow:
    kind: str
    knob: Any
    params: int
    multadds: int | None
    param_ratio: float
    eval_loss: float
    diverged: bool
    label: str = ""

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ComparisonTable:
    rows: list[ReportRow]
    frontier: list[ReportRow] = field(default_factory=list)


def dominates(a: ReportRow, b: ReportRow) -> bool:
    """``a`` is no worse than ``b`` in params and loss, and strictly better in one."""
    return (
        a.params <= b.params
        and a.eval_loss <= b.eval_loss
        and (a.params < b.params or a.eval_loss < b.eval_loss)
    )


def pareto_frontier(rows: Sequence[ReportRow]) -> list[ReportRow]:
    """Non-dominated rows (diverged runs never qualify), sorted by params then loss."""
    live = sorted(
        (r for r in rows if not r.diverged and math.isfinite(r.eval_loss)),
        key=lambda r: (r.params, r.eval_loss, r.kind, r.label),
    )
    front: list[ReportRow] = []
    best = math.inf
    for r in live:
        if r.eval_loss < best:
            front.append(r)
            best = r.eval_loss
        elif r.eval_loss == best and front and front[-1].params == r.params:
            front.append(r)
    return front


def assemble_report(results: Sequence[Any]) -> ComparisonTable:
    """Rows sorted by parameter count plus their Pareto frontier.

    ``results`` are :class:`~structlin.runner.ExperimentResult` records (or
    their JSON dicts); unsupported cells are skipped.
    """
    if not results:
        raise ValueError("need at least one result")
    rows = []
    for res in results:
        r = res if isinstance(res, dict) else res.to_json()
        if r.get("status") == "unsupported":
            continue
        diverged = bool(r.get("diverged", False))
        loss = r.get("eval_loss")
        rows.append(
            ReportRow(
                kind=r["kind"],
                knob=r.get("hypers"),
                params=int(r["params"]),
                multadds=r.get("multadds"),
                param_ratio=float(r["param_ratio"]),
                eval_loss=math.inf if diverged or loss is None else float(loss),
                diverged=diverged,
                label=r.get("label", ""),
            )
        )
    rows.sort(key=lambda r: (r.params, r.eval_loss, r.kind, r.label))
    return ComparisonTable(rows, pareto_frontier(rows))
