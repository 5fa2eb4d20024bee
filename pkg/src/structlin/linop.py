"""Uniform compressed-linear-operator interface.

An operator is described by an immutable :class:`OperatorSpec` and carries its
trainable numbers in a :class:`ParamStore`. The per-kind maths lives in
:mod:`structlin.transforms`; this module dispatches to it and does the cost
bookkeeping against a dense ``n_out x n_in`` baseline.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ShapeError, SpecError


class Kind(str, enum.Enum):
    DENSE = "Dense"
    ACDC = "ACDC"
    TT = "TensorTrain"
    TUCKER = "Tucker"
    RF = "RankFactorised"
    HASHED = "HashedNet"
    SHUFFLE = "ShuffleLinear"

    @classmethod
    def parse(cls, value: "str | Kind") -> "Kind":
        if isinstance(value, Kind):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        for k in cls:
            if key == k.value.lower():
                return k
        if key in _ALIASES:
            return _ALIASES[key]
        raise SpecError(f"unknown operator kind {value!r}")

    def __str__(self) -> str:
        return self.value


_ALIASES = {
    "tt": Kind.TT,
    "rf": Kind.RF,
    "lowrank": Kind.RF,
    "hashed": Kind.HASHED,
    "hash": Kind.HASHED,
    "shuffle": Kind.SHUFFLE,
    "shufflenet": Kind.SHUFFLE,
}


def _freeze(value: Any) -> Any:
    if isinstance(value, Mapping):
        return MappingProxyType({k: _freeze(v) for k, v in value.items()})
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


def _thaw(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {k: _thaw(v) for k, v in value.items()}
    if isinstance(value, tuple):
        return [_thaw(v) for v in value]
    return value


@dataclass(frozen=True)
class OperatorSpec:
    kind: Kind
    n_out: int
    n_in: int
    hyper: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        object.__setattr__(self, "hyper", _freeze(dict(self.hyper)))
        if int(self.n_out) < 1 or int(self.n_in) < 1:
            raise SpecError(f"shape must be positive, got {self.n_out}x{self.n_in}")
        if not 0 <= int(self.seed) < 2**64:
            raise SpecError("seed must fit in 64 unsigned bits")
        object.__setattr__(self, "n_out", int(self.n_out))
        object.__setattr__(self, "n_in", int(self.n_in))
        object.__setattr__(self, "seed", int(self.seed))
        impl(self.kind).validate(self)

    @property
    def dense_params(self) -> int:
        return self.n_out * self.n_in

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "n_out": self.n_out,
            "n_in": self.n_in,
            "hyper": _thaw(self.hyper),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: "Mapping | str") -> "OperatorSpec":
        if isinstance(obj, str):
            obj = json.loads(obj)
        try:
            return cls(
                kind=obj["kind"],
                n_out=obj["n_out"],
                n_in=obj["n_in"],
                hyper=obj.get("hyper", {}),
                seed=obj.get("seed", 0),
            )
        except KeyError as exc:
            raise SpecError(f"operator spec is missing field {exc.args[0]!r}") from None


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    shape: tuple[int, ...]

    @property
    def length(self) -> int:
        return math.prod(self.shape)


@dataclass
class ParamStore:
    """Flat trainable vector, a named segment map over it, and fixed metadata."""

    flat: np.ndarray
    segments: tuple[Segment, ...]
    fixed: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        self.segments = tuple(self.segments)
        pos = 0
        for seg in self.segments:
            if seg.offset != pos:
                raise SpecError(f"segment {seg.name!r} starts at {seg.offset}, expected {pos}")
            pos += seg.length
        if pos != self.flat.size or self.flat.ndim != 1:
            raise SpecError(f"segments cover {pos} entries but flat has {self.flat.size}")
        for arr in self.fixed.values():
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)

    @classmethod
    def from_arrays(cls, pieces: Sequence[tuple[str, np.ndarray]], fixed=None) -> "ParamStore":
        segs, pos = [], 0
        for name, arr in pieces:
            segs.append(Segment(name, pos, tuple(np.shape(arr))))
            pos += np.size(arr)
        flat = np.concatenate([np.ravel(a) for _, a in pieces]) if pieces else np.zeros(0)
        return cls(flat, tuple(segs), dict(fixed or {}))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.view(self.flat, name)

    def view(self, vec: np.ndarray, name: str) -> np.ndarray:
        """Reshape the slice of ``vec`` that belongs to segment ``name``."""
        for seg in self.segments:
            if seg.name == name:
                return vec[seg.offset : seg.offset + seg.length].reshape(seg.shape)
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.segments]

    @property
    def size(self) -> int:
        return self.flat.size

    def with_flat(self, flat: np.ndarray) -> "ParamStore":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != self.flat.shape:
            raise ShapeError(f"expected {self.flat.shape} parameters, got {flat.shape}")
        return ParamStore(flat, self.segments, self.fixed)

    def copy(self) -> "ParamStore":
        return self.with_flat(self.flat.copy())

    def pack(self, pieces: Mapping[str, np.ndarray]) -> np.ndarray:
        """Inverse of :meth:`view`: lay named arrays out in segment order."""
        out = np.zeros_like(self.flat)
        for seg in self.segments:
            out[seg.offset : seg.offset + seg.length] = np.ravel(pieces[seg.name])
        return out


def _default_kappa(layers: int = 12, crossover: int = 625) -> float:
    # Midpoint of the continuous break-even constants at crossover-1 and crossover.
    def kappa_at(n):
        return (n / layers - 2.0) / (2.0 * math.log2(n))

    return 0.5 * (kappa_at(crossover - 1) + kappa_at(crossover))


@dataclass(frozen=True)
class CostModel:
    """Mult-add conventions for the structured kinds.

    A length-N DCT costs ``ceil(dct_kappa * N * log2 N)``; a diagonal scale
    costs N; permutations are free unless ``count_permutation`` is set.
    """

    dct_kappa: float = _default_kappa()
    count_permutation: bool = False

    def dct(self, n: int) -> int:
        if n <= 1:
            return 0
        return math.ceil(self.dct_kappa * n * math.log2(n))

    def permutation(self, n: int) -> int:
        return n if self.count_permutation else 0

    @classmethod
    def calibrated(cls, layers: int = 12, crossover: int = 625, **kw) -> "CostModel":
        return cls(dct_kappa=_default_kappa(layers, crossover), **kw)


DEFAULT_COST_MODEL = CostModel()


@dataclass(frozen=True)
class CostReport:
    params: int
    multadds: int | None
    dense_params: int
    dense_multadds: int
    param_ratio: float
    multadd_ratio: float | None

    def to_json(self) -> dict:
        return dict(self.__dict__)


def impl(kind: Kind):
    from .transforms import IMPLEMENTATIONS

    return IMPLEMENTATIONS[Kind.parse(kind)]


def build(spec: OperatorSpec) -> ParamStore:
    """Fresh parameters for ``spec``, deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    return impl(spec.kind).init(spec, rng)


def check_params(spec: OperatorSpec, params: ParamStore) -> None:
    expected = impl(spec.kind).segments(spec)
    got = [(s.name, s.shape) for s in params.segments]
    if got != expected:
        raise SpecError(f"params do not match {spec.kind} spec: {got[:4]}... vs {expected[:4]}...")
    impl(spec.kind).check_fixed(spec, params)


def _as_input(spec: OperatorSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != spec.n_in:
        raise ShapeError(f"input has length {x.shape[-1] if x.ndim else 0}, operator expects {spec.n_in}")
    return x


def apply(spec: OperatorSpec, params: ParamStore, x) -> np.ndarray:
    """``y = W x`` along the last axis of ``x`` (rows of a batch are independent)."""
    check_params(spec, params)
    return impl(spec.kind).apply(spec, params, _as_input(spec, x))


def materialize(spec: OperatorSpec, params: ParamStore) -> np.ndarray:
    """The dense ``n_out x n_in`` matrix represented by ``(spec, params)``."""
    check_params(spec, params)
    return impl(spec.kind).materialize(spec, params)


def param_count(spec: OperatorSpec) -> int:
    return impl(spec.kind).param_count(spec)


def multadd_count(
    spec: OperatorSpec, cost_model: CostModel | None = None, materialized: bool = False
) -> int | None:
    """Mult-adds of one matvec, or None where no robust structured figure exists.

    TT and Tucker only report a cost when ``materialized`` is set; the figure
    is then the reconstruction cost plus the dense matvec.
    """
    return impl(spec.kind).multadds(spec, cost_model or DEFAULT_COST_MODEL, materialized)


def cost_report(
    spec: OperatorSpec, cost_model: CostModel | None = None, materialized: bool = False
) -> CostReport:
    params = param_count(spec)
    madds = multadd_count(spec, cost_model, materialized)
    dense = spec.dense_params
    return CostReport(
        params=params,
        multadds=madds,
        dense_params=dense,
        dense_multadds=dense,
        param_ratio=params / dense,
        multadd_ratio=None if madds is None else madds / dense,
    )
