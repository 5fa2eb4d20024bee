import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ALL_KINDS, small_spec
from structlin import kernels, linop
from structlin.errors import ShapeError, SpecError
from structlin.linop import Kind, OperatorSpec, ParamStore
from structlin.transforms import (
    CapacityWarning,
    acdc_multadds,
    build_acdc,
    build_dense,
    build_hashed,
    build_rf,
    build_shuffle_linear,
    build_tt,
    build_tucker,
)

pytestmark = pytest.mark.filterwarnings("ignore::structlin.transforms.CapacityWarning", "ignore::structlin.kernels.ReshapeWarning")


@pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.value)
class TestEveryKind:
    def test_apply_matches_materialize(self, kind, rng):
        for _ in range(5):
            spec = small_spec(kind, rng, 64)
            params = linop.build(spec)
            x = rng.standard_normal((7, spec.n_in))
            w = linop.materialize(spec, params)
            assert w.shape == (spec.n_out, spec.n_in)
            np.testing.assert_allclose(linop.apply(spec, params, x), x @ w.T, atol=1e-10)
            np.testing.assert_allclose(linop.apply(spec, params, x[0]), w @ x[0], atol=1e-10)

    def test_linear(self, kind, rng):
        spec = small_spec(kind, rng, 32)
        params = linop.build(spec)
        x, y = rng.standard_normal((2, spec.n_in))
        a, b = 1.7, -0.3
        lhs = linop.apply(spec, params, a * x + b * y)
        rhs = a * linop.apply(spec, params, x) + b * linop.apply(spec, params, y)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)
        np.testing.assert_array_equal(linop.apply(spec, params, np.zeros(spec.n_in)), np.zeros(spec.n_out))

    def test_deterministic_build(self, kind, rng):
        spec = small_spec(kind, rng)
        a, b = linop.build(spec), linop.build(spec)
        np.testing.assert_array_equal(a.flat, b.flat)
        for key in a.fixed:
            np.testing.assert_array_equal(a.fixed[key], b.fixed[key])

    def test_param_count_is_flat_size(self, kind, rng):
        spec = small_spec(kind, rng)
        assert linop.param_count(spec) == linop.build(spec).size

    def test_json_roundtrip(self, kind, rng):
        spec = small_spec(kind, rng)
        again = OperatorSpec.from_json(json.dumps(spec.to_json()))
        assert again == spec

    def test_wrong_input_length(self, kind, rng):
        spec = small_spec(kind, rng)
        with pytest.raises(ShapeError):
            linop.apply(spec, linop.build(spec), np.zeros(spec.n_in + 1))


def test_params_from_other_spec_rejected():
    spec_a, p_a = build_rf(8, 8, 2)
    spec_b, _ = build_rf(8, 8, 3)
    with pytest.raises(SpecError):
        linop.apply(spec_b, p_a, np.zeros(8))


def test_fixed_arrays_read_only():
    _, params = build_hashed(4, 4, 3)
    with pytest.raises(ValueError):
        params.fixed["index_table"][0, 0] = 1


def test_kind_aliases():
    assert Kind.parse("tt") is Kind.TT
    assert Kind.parse("RankFactorised") is Kind.RF
    with pytest.raises(SpecError):
        Kind.parse("conv")


class TestDense:
    def test_identity(self):
        spec, params = build_dense(4, 4, weight=np.eye(4))
        np.testing.assert_array_equal(linop.apply(spec, params, [1.0, 2, 3, 4]), [1, 2, 3, 4])

    def test_materialize_verbatim(self):
        w = np.arange(12.0).reshape(3, 4)
        spec, params = build_dense(3, 4, weight=w)
        np.testing.assert_array_equal(linop.materialize(spec, params), w)

    def test_counts(self):
        spec, _ = build_dense(100, 100)
        assert linop.param_count(spec) == 10000
        assert linop.multadd_count(spec) == 10000


def acdc_factor_product(spec, params):
    n, layers = spec.n_in, spec.hyper["L"]
    c = kernels.dct_matrix(n)
    m = kernels.riffle_matrix(n)
    for l in range(layers):
        m = np.diag(params[f"A_{l}"]) @ c @ np.diag(params[f"D_{l}"]) @ c.T @ m
    return m


class TestACDC:
    def test_ones_give_riffle(self):
        spec, params = build_acdc(8, 1)
        params = params.with_flat(np.ones(params.size))
        np.testing.assert_allclose(linop.materialize(spec, params), kernels.riffle_matrix(8), atol=1e-14)

    def test_factor_product_oracle(self):
        spec, params = build_acdc(16, 2, seed=3)
        params = params.with_flat(np.random.default_rng(0).standard_normal(params.size))
        np.testing.assert_allclose(linop.materialize(spec, params), acdc_factor_product(spec, params), atol=1e-10)

    def test_apply_vs_materialize(self):
        spec, params = build_acdc(16, 2, seed=5)
        x = np.random.default_rng(1).standard_normal(16)
        np.testing.assert_allclose(linop.apply(spec, params, x), linop.materialize(spec, params) @ x, atol=1e-10)

    def test_param_count(self):
        assert linop.param_count(build_acdc(64, 12)[0]) == 1536

    def test_needs_square_even(self):
        with pytest.raises(SpecError):
            OperatorSpec(Kind.ACDC, 8, 4, {"L": 1})
        with pytest.raises(SpecError):
            OperatorSpec(Kind.ACDC, 7, 7, {"L": 1})

    def test_multadd_crossover_at_625(self):
        model = linop.DEFAULT_COST_MODEL
        for n in (600, 623, 624):
            assert acdc_multadds(n, 12, model) > n * n
        for n in (625, 626, 1024):
            assert acdc_multadds(n, 12, model) < n * n
        assert linop.multadd_count(build_acdc(1024, 12)[0]) == acdc_multadds(1024, 12, model)


def tt_svd(t, rank):
    """Sequential-SVD TT decomposition of a 3-way tensor, truncated to ``rank``."""
    d0, d1, d2 = t.shape
    u, s, vt = np.linalg.svd(t.reshape(d0, d1 * d2), full_matrices=False)
    r1 = min(rank, s.size)
    g0 = u[:, :r1].reshape(1, d0, r1)
    rest = (s[:r1, None] * vt[:r1]).reshape(r1 * d1, d2)
    u, s, vt = np.linalg.svd(rest, full_matrices=False)
    r2 = min(rank, s.size)
    g1 = u[:, :r2].reshape(r1, d1, r2)
    g2 = (s[:r2, None] * vt[:r2]).reshape(r2, d2, 1)
    return [np.pad(g0, ((0, 0), (0, 0), (0, rank - r1))),
            np.pad(g1, ((0, rank - r1), (0, 0), (0, rank - r2))),
            np.pad(g2, ((0, rank - r2), (0, 0), (0, 0)))]


class TestTT:
    def test_full_rank_roundtrip(self):
        spec, params = build_tt(2, 4, 2)
        assert kernels.reshape3(2, 4) == (2, 2, 2)
        target = np.random.default_rng(7).standard_normal((2, 2, 2))
        g0, g1, g2 = tt_svd(target, 2)
        params = params.with_flat(np.concatenate([g0.ravel(), g1.ravel(), g2.ravel()]))
        np.testing.assert_allclose(linop.materialize(spec, params), target.reshape(2, 4), atol=1e-12)

    def test_rank_one_minors_vanish(self):
        spec, params = build_tt(2, 4, 1, seed=9)
        t = linop.materialize(spec, params).reshape(2, 2, 2)
        for k in range(3):
            unfold = np.moveaxis(t, k, 0).reshape(2, 4)
            for i in range(4):
                for j in range(i + 1, 4):
                    assert abs(np.linalg.det(unfold[:, [i, j]])) < 1e-14

    def test_param_count_256(self):
        assert linop.param_count(build_tt(256, 256, 8)[0]) == 4608

    def test_multadds_unavailable(self):
        spec, _ = build_tt(16, 16, 2)
        assert linop.multadd_count(spec) is None
        assert linop.multadd_count(spec, materialized=True) > 256

    def test_over_capacity_warns(self):
        with pytest.warns(CapacityWarning):
            build_tt(4, 4, 8)


def brute_tucker(core, us):
    r = core.shape
    dims = [u.shape[0] for u in us]
    out = np.zeros(dims)
    for i in range(dims[0]):
        for j in range(dims[1]):
            for k in range(dims[2]):
                s = 0.0
                for a in range(r[0]):
                    for b in range(r[1]):
                        for c in range(r[2]):
                            s += core[a, b, c] * us[0][i, a] * us[1][j, b] * us[2][k, c]
                out[i, j, k] = s
    return out


class TestTucker:
    def test_identity_factors(self):
        spec, params = build_tucker(8, 8, 1.0)
        dims = kernels.reshape3(8, 8)
        core = np.random.default_rng(0).standard_normal(dims)
        params = params.with_flat(params.pack({"core": core, **{f"U_{k}": np.eye(dims[k]) for k in range(3)}}))
        np.testing.assert_allclose(linop.materialize(spec, params), core.reshape(8, 8), atol=1e-15)

    def test_param_count(self):
        spec = OperatorSpec(Kind.TUCKER, 8, 8, {"rank_fraction": 0.5})
        assert kernels.reshape3(8, 8) == (4, 4, 4)
        assert linop.param_count(spec) == 8 + 3 * 8 == 32

    def test_nested_loop_oracle(self):
        spec, params = build_tucker(3, 9, 2 / 3, seed=11)
        assert kernels.reshape3(3, 9) == (3, 3, 3)
        oracle = brute_tucker(params["core"], [params[f"U_{k}"] for k in range(3)])
        np.testing.assert_allclose(linop.materialize(spec, params), oracle.reshape(3, 9), atol=1e-12)

    def test_bad_fraction(self):
        with pytest.raises(SpecError):
            OperatorSpec(Kind.TUCKER, 8, 8, {"rank_fraction": 0.0})


class TestRF:
    def test_param_count(self):
        assert linop.param_count(build_rf(100, 100, 25)[0]) == 5000

    def test_full_rank_exact(self):
        rng = np.random.default_rng(4)
        w = rng.standard_normal((6, 6))
        w1 = rng.standard_normal((6, 6))
        spec, params = build_rf(6, 6, 6)
        params = params.with_flat(params.pack({"W1": w1, "W2": w @ np.linalg.inv(w1)}))
        np.testing.assert_allclose(linop.materialize(spec, params), w, atol=1e-10)

    @pytest.mark.parametrize("d_bn", [1, 3, 7])
    def test_rank_bounded(self, d_bn):
        spec, params = build_rf(20, 16, d_bn, seed=d_bn)
        s = np.linalg.svd(linop.materialize(spec, params), compute_uv=False)
        assert np.all(s[d_bn:] < 1e-10)
        assert s[d_bn - 1] > 1e-6


class TestHashed:
    def test_single_weight_fills(self):
        spec, params = build_hashed(3, 5, 1)
        params = params.with_flat(np.array([2.0]))
        np.testing.assert_array_equal(linop.materialize(spec, params), np.full((3, 5), 2.0))
        x = np.arange(5.0)
        np.testing.assert_array_equal(linop.apply(spec, params, x), np.full(3, 2.0 * x.sum()))

    def test_bijective_is_dense(self):
        spec, params = build_hashed(4, 6, 24, bijective=True, seed=2)
        w = linop.materialize(spec, params)
        assert sorted(w.ravel().tolist()) == sorted(params.flat.tolist())
        assert sorted(params.fixed["index_table"].ravel().tolist()) == list(range(24))

    def test_bijective_needs_full_table(self):
        with pytest.raises(SpecError):
            build_hashed(4, 4, 10, bijective=True)

    def test_index_table_override(self):
        table = np.arange(16).reshape(4, 4) % 3
        spec, params = build_hashed(4, 4, 3, index_table=table)
        params = params.with_flat(np.array([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(linop.materialize(spec, params), (table + 1).astype(float))

    def test_table_uniform(self):
        n_real, shape = 50, (200, 200)
        _, params = build_hashed(*shape, n_real, seed=8)
        counts = np.bincount(params.fixed["index_table"].ravel(), minlength=n_real)
        expected = shape[0] * shape[1] / n_real
        sigma = math.sqrt(expected * (1 - 1 / n_real))
        assert np.abs(counts - expected).max() < 5 * sigma

    def test_counts(self):
        spec, _ = build_hashed(8, 8, 5)
        assert linop.param_count(spec) == 5


class TestShuffle:
    def test_counts(self):
        assert linop.param_count(build_shuffle_linear(8, 2)[0]) == 64
        assert linop.param_count(build_shuffle_linear(10, 1)[0]) == 200

    @pytest.mark.parametrize("n,g", [(16, 4), (12, 1), (8, 8)])
    def test_permutation_matrix_oracle(self, n, g):
        spec, params = build_shuffle_linear(n, g, seed=n + g)
        b = n // g
        dense = []
        for name in ("B1", "B2"):
            m = np.zeros((n, n))
            for i in range(g):
                m[i * b:(i + 1) * b, i * b:(i + 1) * b] = params[name][i]
            dense.append(m)
        oracle = dense[1] @ kernels.riffle_matrix(n) @ dense[0]
        np.testing.assert_allclose(linop.materialize(spec, params), oracle, atol=1e-12)

    def test_bad_groups(self):
        with pytest.raises(SpecError):
            OperatorSpec(Kind.SHUFFLE, 8, 8, {"groups": 3})


class TestCost:
    def test_report(self):
        spec, _ = build_rf(100, 100, 25)
        rep = linop.cost_report(spec)
        assert rep.params == 5000 and rep.param_ratio == 0.5 and rep.multadds == 5000

    def test_calibrated_model(self):
        assert linop.CostModel.calibrated() == linop.DEFAULT_COST_MODEL
        assert linop.DEFAULT_COST_MODEL.dct(1) == 0


class TestParamStore:
    def test_bad_partition(self):
        with pytest.raises(SpecError):
            ParamStore(np.zeros(3), (linop.Segment("a", 0, (2,)),))

    def test_pack_inverts_view(self):
        spec, params = build_tucker(8, 8, 0.5, seed=1)
        pieces = {n: params[n] for n in params.names}
        np.testing.assert_array_equal(params.pack(pieces), params.flat)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(ALL_KINDS), st.integers(0, 2**32 - 1))
def test_materialize_is_apply_on_identity(kind, seed):
    spec = small_spec(kind, np.random.default_rng(seed), 12)
    params = linop.build(spec)
    np.testing.assert_allclose(
        linop.apply(spec, params, np.eye(spec.n_in)).T, linop.materialize(spec, params), atol=1e-10
    )
