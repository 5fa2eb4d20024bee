"""The dense baseline and its six structured substitutes.

Each kind is a small stateless class; :data:`IMPLEMENTATIONS` maps
:class:`~structlin.linop.Kind` to an instance. Every ``apply``/``grad`` works on
a batch of row vectors (last axis is the feature axis) and ``grad`` returns
parameter gradients summed over the batch, laid out like ``ParamStore.flat``.
"""

from __future__ import annotations

import math
import warnings
from typing import Any

import numpy as np

from . import kernels
from .errors import ShapeError, SpecError
from .linop import CostModel, Kind, OperatorSpec, ParamStore, build


class CapacityWarning(UserWarning):
    """Structured operator holds more parameters than the dense matrix it replaces."""


def _int_hyper(spec: OperatorSpec, key: str, lo: int = 1, hi: int | None = None) -> int:
    try:
        value = spec.hyper[key]
    except KeyError:
        raise SpecError(f"{spec.kind} spec needs hyperparameter {key!r}") from None
    if isinstance(value, bool) or int(value) != value:
        raise SpecError(f"{key} must be an integer, got {value!r}")
    value = int(value)
    if value < lo or (hi is not None and value > hi):
        raise SpecError(f"{key}={value} outside [{lo}, {hi if hi is not None else 'inf'}]")
    return value


def _uniform(rng, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 1:
        return x[None, :], True
    return x.reshape(-1, x.shape[-1]), False


class Transform:
    kind: Kind

    def validate(self, spec: OperatorSpec) -> None:
        pass

    def segments(self, spec: OperatorSpec) -> list[tuple[str, tuple[int, ...]]]:
        raise NotImplementedError

    def param_count(self, spec: OperatorSpec) -> int:
        return sum(math.prod(shape) for _, shape in self.segments(spec))

    def init(self, spec: OperatorSpec, rng: np.random.Generator) -> ParamStore:
        raise NotImplementedError

    def check_fixed(self, spec: OperatorSpec, params: ParamStore) -> None:
        pass

    def apply(self, spec, params, x):
        return x @ self.materialize(spec, params).T

    def materialize(self, spec, params) -> np.ndarray:
        return self.apply(spec, params, np.eye(spec.n_in)).T

    def grad(self, spec, params, x, upstream):
        """Reverse mode of ``apply`` for operators that go through the dense matrix."""
        w = self.materialize(spec, params)
        xb, _ = _batch(x)
        ub = upstream.reshape(-1, spec.n_out)
        gw = ub.T @ xb
        return self.grad_from_matrix(spec, params, gw), (upstream @ w)

    def grad_from_matrix(self, spec, params, gw: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def multadds(self, spec: OperatorSpec, model: CostModel, materialized: bool) -> int | None:
        return spec.n_out * spec.n_in


class Dense(Transform):
    kind = Kind.DENSE
    via_matrix = True

    def segments(self, spec):
        return [("W", (spec.n_out, spec.n_in))]

    def init(self, spec, rng):
        return ParamStore.from_arrays([("W", _uniform(rng, (spec.n_out, spec.n_in), spec.n_in))])

    def materialize(self, spec, params):
        return params["W"].copy()

    def apply(self, spec, params, x):
        return x @ params["W"].T

    def grad_from_matrix(self, spec, params, gw):
        return gw.ravel().copy()


class ACDC(Transform):
    """Stack of ``A C D C^-1`` layers preceded by one riffle shuffle.

    Applied right to left: riffle, then for each layer ``l = 0..L-1`` the
    inverse DCT, diagonal ``D_l``, forward DCT and diagonal ``A_l``.
    """

    kind = Kind.ACDC
    init_scale = 1e-2

    def validate(self, spec):
        if spec.n_out != spec.n_in:
            raise SpecError(f"ACDC is square, got {spec.n_out}x{spec.n_in}")
        if spec.n_in % 2:
            raise SpecError(f"ACDC needs an even width for the riffle, got {spec.n_in}")
        _int_hyper(spec, "L")

    def segments(self, spec):
        n, layers = spec.n_in, int(spec.hyper["L"])
        return [(f"A_{l}", (n,)) for l in range(layers)] + [(f"D_{l}", (n,)) for l in range(layers)]

    def init(self, spec, rng):
        n, layers = spec.n_in, int(spec.hyper["L"])
        diag = 1.0 + self.init_scale * rng.standard_normal((2, layers, n))
        pieces = [(f"A_{l}", diag[0, l]) for l in range(layers)]
        pieces += [(f"D_{l}", diag[1, l]) for l in range(layers)]
        return ParamStore.from_arrays(pieces, {"permutation": kernels.riffle_index(n).copy()})

    def _diags(self, spec, params):
        layers = int(spec.hyper["L"])
        a = params.flat[: layers * spec.n_in].reshape(layers, spec.n_in)
        d = params.flat[layers * spec.n_in :].reshape(layers, spec.n_in)
        return a, d

    def apply(self, spec, params, x):
        a, d = self._diags(spec, params)
        h = kernels.riffle(x)
        for l in range(a.shape[0]):
            h = a[l] * kernels.dct2(d[l] * kernels.idct2(h))
        return h

    def grad(self, spec, params, x, upstream):
        a, d = self._diags(spec, params)
        layers, n = a.shape
        h = kernels.riffle(x)
        saved = []
        for l in range(layers):
            u = kernels.idct2(h)
            w = kernels.dct2(d[l] * u)
            saved.append((u, w))
            h = a[l] * w
        ga = np.empty_like(a)
        gd = np.empty_like(d)
        g = upstream
        for l in reversed(range(layers)):
            u, w = saved[l]
            ga[l] = (g * w).reshape(-1, n).sum(axis=0)
            gv = kernels.idct2(g * a[l])
            gd[l] = (gv * u).reshape(-1, n).sum(axis=0)
            g = kernels.dct2(gv * d[l])
        return np.concatenate([ga.ravel(), gd.ravel()]), kernels.riffle_inverse(g)

    def multadds(self, spec, model, materialized):
        n, layers = spec.n_in, int(spec.hyper["L"])
        return acdc_multadds(n, layers, model)


def acdc_multadds(n: int, layers: int, model: CostModel) -> int:
    """Two DCTs and two diagonal scalings per layer, one riffle up front."""
    return layers * (2 * model.dct(n) + 2 * n) + model.permutation(n)


def tt_full_rank(dims: tuple[int, int, int]) -> int:
    """Smallest shared TT-rank that represents every tensor of shape ``dims``."""
    d0, d1, d2 = dims
    return max(min(d0, d1 * d2), min(d0 * d1, d2))


class TensorTrain(Transform):
    """Three-core TT over ``reshape3(n_out, n_in)``; shared inner rank ``r``."""

    kind = Kind.TT
    via_matrix = True

    def validate(self, spec):
        if spec.n_out * spec.n_in < 8:
            raise SpecError("TensorTrain needs n_out*n_in >= 8")
        _int_hyper(spec, "tt_rank")

    def dims(self, spec):
        return kernels.reshape3(spec.n_out, spec.n_in)

    def segments(self, spec):
        d0, d1, d2 = self.dims(spec)
        r = int(spec.hyper["tt_rank"])
        return [("G_0", (1, d0, r)), ("G_1", (r, d1, r)), ("G_2", (r, d2, 1))]

    def init(self, spec, rng):
        d0, d1, d2 = self.dims(spec)
        r = int(spec.hyper["tt_rank"])
        if self.param_count(spec) > spec.dense_params:
            warnings.warn(
                f"TT rank {r} stores more than the {spec.dense_params} dense weights",
                CapacityWarning,
                stacklevel=3,
            )
        # Each reconstructed entry sums r*r products of three core entries.
        target = 2.0 / (spec.n_in + spec.n_out)
        g0 = rng.standard_normal((1, d0, r)) * math.sqrt(target)
        g1 = rng.standard_normal((r, d1, r)) / math.sqrt(r)
        g2 = rng.standard_normal((r, d2, 1)) / math.sqrt(r)
        return ParamStore.from_arrays([("G_0", g0), ("G_1", g1), ("G_2", g2)])

    def full_tensor(self, spec, params):
        g0, g1, g2 = params["G_0"][0], params["G_1"], params["G_2"][:, :, 0]
        left = np.tensordot(g0, g1, axes=(1, 0))  # (d0, d1, r)
        return np.tensordot(left, g2, axes=(2, 0))  # (d0, d1, d2)

    def materialize(self, spec, params):
        return self.full_tensor(spec, params).reshape(spec.n_out, spec.n_in)

    def grad_from_matrix(self, spec, params, gw):
        t = gw.reshape(self.dims(spec))
        g0, g1, g2 = params["G_0"][0], params["G_1"], params["G_2"][:, :, 0]
        right = np.tensordot(g1, g2, axes=(2, 0))  # (r, d1, d2)
        left = np.tensordot(g0, g1, axes=(1, 0))  # (d0, d1, r)
        d_g0 = np.tensordot(t, right, axes=([1, 2], [1, 2]))  # (d0, r)
        d_g2 = np.tensordot(t, left, axes=([0, 1], [0, 1])).T  # (r, d2)
        tg2 = np.tensordot(t, g2, axes=(2, 1))  # (d0, d1, r)
        d_g1 = np.tensordot(g0, tg2, axes=(0, 0))  # (r, d1, r)
        return np.concatenate([d_g0.ravel(), d_g1.ravel(), d_g2.ravel()])

    def multadds(self, spec, model, materialized):
        if not materialized:
            return None
        d0, d1, d2 = self.dims(spec)
        r = int(spec.hyper["tt_rank"])
        return spec.dense_params + d0 * r * d1 * r + d0 * d1 * r * d2


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


class Tucker(Transform):
    """Core of shape ``(R_0, R_1, R_2)`` expanded by factors ``U_k`` of shape ``(I_k, R_k)``."""

    kind = Kind.TUCKER
    via_matrix = True

    def validate(self, spec):
        if spec.n_out * spec.n_in < 8:
            raise SpecError("Tucker needs n_out*n_in >= 8")
        try:
            f = float(spec.hyper["rank_fraction"])
        except KeyError:
            raise SpecError("Tucker spec needs hyperparameter 'rank_fraction'") from None
        if not 0.0 < f <= 1.0:
            raise SpecError(f"rank_fraction must lie in (0, 1], got {f}")

    def dims(self, spec):
        return kernels.reshape3(spec.n_out, spec.n_in)

    def ranks(self, spec):
        f = float(spec.hyper["rank_fraction"])
        return tuple(min(d, max(1, _round_half_up(f * d))) for d in self.dims(spec))

    def segments(self, spec):
        dims, ranks = self.dims(spec), self.ranks(spec)
        return [("core", ranks)] + [(f"U_{k}", (dims[k], ranks[k])) for k in range(3)]

    def init(self, spec, rng):
        dims, ranks = self.dims(spec), self.ranks(spec)
        target = 2.0 / (spec.n_in + spec.n_out)
        core = rng.standard_normal(ranks) * math.sqrt(target)
        pieces = [("core", core)]
        for k in range(3):
            pieces.append((f"U_{k}", rng.standard_normal((dims[k], ranks[k])) / math.sqrt(ranks[k])))
        return ParamStore.from_arrays(pieces)

    def full_tensor(self, spec, params):
        t = params["core"]
        for k in range(3):
            t = kernels.kmode_product(t, params[f"U_{k}"], k)
        return t

    def materialize(self, spec, params):
        return self.full_tensor(spec, params).reshape(spec.n_out, spec.n_in)

    def grad_from_matrix(self, spec, params, gw):
        t = gw.reshape(self.dims(spec))
        core = params["core"]
        us = [params[f"U_{k}"] for k in range(3)]
        d_core = t
        for k in range(3):
            d_core = kernels.kmode_product(d_core, us[k].T, k)
        pieces = {"core": d_core}
        for k in range(3):
            partial = core
            for j in range(3):
                if j != k:
                    partial = kernels.kmode_product(partial, us[j], j)
            axes = [j for j in range(3) if j != k]
            pieces[f"U_{k}"] = np.tensordot(t, partial, axes=(axes, axes))
        return params.pack(pieces)

    def multadds(self, spec, model, materialized):
        if not materialized:
            return None
        (d0, d1, d2), (r0, r1, r2) = self.dims(spec), self.ranks(spec)
        return spec.dense_params + d0 * r0 * r1 * r2 + d0 * d1 * r1 * r2 + d0 * d1 * d2 * r2


class RankFactorised(Transform):
    kind = Kind.RF

    def validate(self, spec):
        _int_hyper(spec, "d_bn", 1, min(spec.n_in, spec.n_out))

    def segments(self, spec):
        b = int(spec.hyper["d_bn"])
        return [("W1", (b, spec.n_in)), ("W2", (spec.n_out, b))]

    def init(self, spec, rng):
        b = int(spec.hyper["d_bn"])
        w1 = _uniform(rng, (b, spec.n_in), spec.n_in)
        w2 = _uniform(rng, (spec.n_out, b), b)
        return ParamStore.from_arrays([("W1", w1), ("W2", w2)])

    def apply(self, spec, params, x):
        return (x @ params["W1"].T) @ params["W2"].T

    def materialize(self, spec, params):
        return params["W2"] @ params["W1"]

    def grad(self, spec, params, x, upstream):
        w1, w2 = params["W1"], params["W2"]
        xb, _ = _batch(x)
        ub = upstream.reshape(-1, spec.n_out)
        h = xb @ w1.T
        gh = ub @ w2
        flat = np.concatenate([(gh.T @ xb).ravel(), (ub.T @ h).ravel()])
        return flat, (upstream @ w2) @ w1

    def multadds(self, spec, model, materialized):
        b = int(spec.hyper["d_bn"])
        return b * (spec.n_in + spec.n_out)


class HashedNet(Transform):
    """Virtual matrix ``V[i, j] = w[idx[i, j]]`` over a fixed random index table.

    The table is sampled once from the spec seed and lives in ``fixed``; only
    the real weights ``w`` count as parameters. ``hyper["bijective"]`` swaps the
    i.i.d. table for a random permutation (requires ``n_real == n_out*n_in``).
    """

    kind = Kind.HASHED
    via_matrix = True

    def validate(self, spec):
        n_real = _int_hyper(spec, "n_real", 1, spec.dense_params)
        if spec.hyper.get("bijective", False) and n_real != spec.dense_params:
            raise SpecError("a bijective index table needs n_real == n_out*n_in")

    def segments(self, spec):
        return [("w", (int(spec.hyper["n_real"]),))]

    def init(self, spec, rng):
        n_real = int(spec.hyper["n_real"])
        shape = (spec.n_out, spec.n_in)
        if spec.hyper.get("bijective", False):
            table = rng.permutation(n_real).reshape(shape)
        else:
            table = rng.integers(0, n_real, size=shape)
        w = _uniform(rng, n_real, spec.n_in)
        return ParamStore.from_arrays([("w", w)], {"index_table": table.astype(np.int64)})

    def check_fixed(self, spec, params):
        table = params.fixed.get("index_table")
        if table is None or table.shape != (spec.n_out, spec.n_in):
            raise SpecError("HashedNet params need an n_out x n_in index table")

    def materialize(self, spec, params):
        return params["w"][params.fixed["index_table"]]

    def grad_from_matrix(self, spec, params, gw):
        table = params.fixed["index_table"]
        return np.bincount(table.ravel(), weights=gw.ravel(), minlength=params.size)


class ShuffleLinear(Transform):
    """``B2 P B1`` with block-diagonal ``B1, B2`` (``groups`` blocks each) and riffle ``P``."""

    kind = Kind.SHUFFLE

    def validate(self, spec):
        if spec.n_out != spec.n_in:
            raise SpecError(f"ShuffleLinear is square, got {spec.n_out}x{spec.n_in}")
        n = spec.n_in
        if n % 2:
            raise SpecError(f"ShuffleLinear needs an even width, got {n}")
        g = _int_hyper(spec, "groups", 1, n)
        if n % g:
            raise SpecError(f"groups={g} does not divide {n}")

    def _shape(self, spec):
        g = int(spec.hyper["groups"])
        return g, spec.n_in // g

    def segments(self, spec):
        g, b = self._shape(spec)
        return [("B1", (g, b, b)), ("B2", (g, b, b))]

    def init(self, spec, rng):
        g, b = self._shape(spec)
        return ParamStore.from_arrays(
            [("B1", _uniform(rng, (g, b, b), b)), ("B2", _uniform(rng, (g, b, b), b))],
            {"permutation": kernels.riffle_index(spec.n_in).copy()},
        )

    @staticmethod
    def _blocks(blocks, x):
        g, b, _ = blocks.shape
        xg = x.reshape(-1, g, b).transpose(1, 0, 2)
        return np.matmul(xg, blocks.transpose(0, 2, 1)).transpose(1, 0, 2).reshape(x.shape)

    @staticmethod
    def _blocks_t(blocks, x):
        g, b, _ = blocks.shape
        xg = x.reshape(-1, g, b).transpose(1, 0, 2)
        return np.matmul(xg, blocks).transpose(1, 0, 2).reshape(x.shape)

    @staticmethod
    def _outer(u, v, g, b):
        # Sum over rows of per-block outer products, shape (g, b, b).
        return np.matmul(u.reshape(-1, g, b).transpose(1, 2, 0), v.reshape(-1, g, b).transpose(1, 0, 2))

    def apply(self, spec, params, x):
        return self._blocks(params["B2"], kernels.riffle(self._blocks(params["B1"], x)))

    def grad(self, spec, params, x, upstream):
        g, b = self._shape(spec)
        b1, b2 = params["B1"], params["B2"]
        xb, _ = _batch(x)
        ub = upstream.reshape(-1, spec.n_out)
        h = self._blocks(b1, xb)
        p = kernels.riffle(h)
        gp = self._blocks_t(b2, ub)
        gh = kernels.riffle_inverse(gp)
        d_b2 = self._outer(ub, p, g, b)
        d_b1 = self._outer(gh, xb, g, b)
        gx = self._blocks_t(b1, kernels.riffle_inverse(self._blocks_t(b2, upstream)))
        return np.concatenate([d_b1.ravel(), d_b2.ravel()]), gx

    def multadds(self, spec, model, materialized):
        g, b = self._shape(spec)
        return 2 * g * b * b


IMPLEMENTATIONS: dict[Kind, Transform] = {
    t.kind: t for t in (Dense(), ACDC(), TensorTrain(), Tucker(), RankFactorised(), HashedNet(), ShuffleLinear())
}


def _built(kind: Kind, n_out: int, n_in: int, hyper: dict[str, Any], seed: int):
    spec = OperatorSpec(kind, n_out, n_in, hyper, seed)
    return spec, build(spec)


def build_dense(n_out: int, n_in: int, seed: int = 0, weight=None):
    spec, params = _built(Kind.DENSE, n_out, n_in, {}, seed)
    if weight is not None:
        weight = np.asarray(weight, dtype=np.float64)
        if weight.shape != (n_out, n_in):
            raise ShapeError(f"weight has shape {weight.shape}, expected {(n_out, n_in)}")
        params = params.with_flat(weight.ravel().copy())
    return spec, params


def build_acdc(n: int, L: int, seed: int = 0):
    return _built(Kind.ACDC, n, n, {"L": L}, seed)


def build_tt(n_out: int, n_in: int, tt_rank: int, seed: int = 0):
    return _built(Kind.TT, n_out, n_in, {"tt_rank": tt_rank}, seed)


def build_tucker(n_out: int, n_in: int, rank_fraction: float, seed: int = 0):
    return _built(Kind.TUCKER, n_out, n_in, {"rank_fraction": rank_fraction}, seed)


def build_rf(d_in: int, d_out: int, d_bn: int, seed: int = 0):
    return _built(Kind.RF, d_out, d_in, {"d_bn": d_bn}, seed)


def build_hashed(n_out: int, n_in: int, n_real: int, seed: int = 0, *, bijective: bool = False, index_table=None):
    """HashedNet operator; ``index_table`` overrides the sampled table (for tests)."""
    hyper: dict[str, Any] = {"n_real": n_real}
    if bijective:
        hyper["bijective"] = True
    spec, params = _built(Kind.HASHED, n_out, n_in, hyper, seed)
    if index_table is not None:
        table = np.asarray(index_table, dtype=np.int64)
        if table.shape != (n_out, n_in):
            raise ShapeError(f"index table has shape {table.shape}, expected {(n_out, n_in)}")
        if table.min() < 0 or table.max() >= n_real:
            raise SpecError(f"index table entries must lie in [0, {n_real})")
        params = ParamStore(params.flat, params.segments, {"index_table": table.copy()})
    return spec, params


def build_shuffle_linear(n: int, groups: int, seed: int = 0):
    return _built(Kind.SHUFFLE, n, n, {"groups": groups}, seed)
