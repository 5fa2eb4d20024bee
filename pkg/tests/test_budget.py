import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from structlin import budget
from structlin.errors import NoCommonSupportError, OutOfSupportError, SpecError
from structlin.linop import Kind

pytestmark = pytest.mark.filterwarnings(
    "ignore::structlin.transforms.CapacityWarning", "ignore::structlin.kernels.ReshapeWarning"
)

SQUARE_KINDS = [k for k in Kind if k is not Kind.DENSE]
ANY_SHAPE_KINDS = [Kind.TT, Kind.TUCKER, Kind.RF, Kind.HASHED]


def test_rf_curve_ends():
    curve = budget.knob_curve(Kind.RF, [(256, 256)])
    assert curve.hypers_at(1.0) == [{"d_bn": 256}] and curve.max_params == 131072
    assert curve.hypers_at(0.0) == [{"d_bn": 1}] and curve.min_params == 512


def test_hashed_curve():
    dims = [(16, 24)]
    for t in (0.0, 0.1, 0.5, 1.0):
        assert budget.layer_hyper(Kind.HASHED, 16, 24, t) == {"n_real": max(1, round(t * 384))}
    assert budget.knob_curve(Kind.HASHED, dims).max_params == 384


@pytest.mark.parametrize("kind", SQUARE_KINDS, ids=lambda k: k.value)
def test_monotone_on_three_layers(kind):
    curve = budget.knob_curve(kind, [(32, 32), (64, 64), (16, 16)], resolution=257)
    counts = [p for _, p in curve.samples]
    assert all(a <= b for a, b in zip(counts, counts[1:]))
    assert counts[0] < counts[-1]


def test_square_only_kinds_reject_rectangles():
    for kind in (Kind.ACDC, Kind.SHUFFLE):
        with pytest.raises(SpecError):
            budget.knob_curve(kind, [(32, 16)])


class TestSupport:
    def _curve(self, lo, hi):
        class C:
            min_params, max_params = lo, hi

        return C()

    def test_intersection(self):
        assert budget.support_interval([self._curve(100, 1000), self._curve(200, 800)]) == (200, 800)

    def test_identical(self):
        assert budget.support_interval([self._curve(5, 9)] * 2) == (5, 9)

    def test_empty_intersection(self):
        with pytest.raises(NoCommonSupportError):
            budget.support_interval([self._curve(1, 5), self._curve(6, 9)])

    def test_wrn_limits(self):
        dims = budget.wrn_pointwise_dims(square_only=True)
        kinds = [Kind.TT, Kind.TUCKER, Kind.RF, Kind.HASHED, Kind.SHUFFLE]
        curves = {k: budget.knob_curve(k, dims, resolution=2) for k in kinds}
        lo, hi = budget.support_interval(list(curves.values()))
        assert lo == curves[Kind.RF].min_params
        assert hi == curves[Kind.SHUFFLE].max_params

    def test_wrn_dims(self):
        dims = budget.wrn_pointwise_dims()
        assert len(dims) == 24 and dims[0] == (160, 16) and dims[-1] == (640, 640)


class TestMidpoint:
    def test_cifar_budgets(self):
        assert budget.log_midpoint(0.6e6, 2.4e6) == pytest.approx(1.2e6, rel=1e-12)

    def test_darts_budgets(self):
        assert budget.log_midpoint(0.49e6, 1.42e6) == pytest.approx(0.834e6, rel=1e-3)

    @settings(max_examples=50)
    @given(st.floats(1.0, 1e6), st.floats(1.0, 1e3))
    def test_geometric_identity(self, x, k):
        assert budget.log_midpoint(x, x * k * k) == pytest.approx(x * k, rel=1e-12)

    def test_geometric_budgets(self):
        assert budget.geometric_budgets(100, 10000, 3) == [100, 1000, 10000]
        assert budget.geometric_budgets(1, 1000, 4) == [1, 10, 100, 1000]

    def test_bad_order(self):
        with pytest.raises(ValueError):
            budget.log_midpoint(10, 5)


class TestSolve:
    def test_rf_exact(self):
        sol = budget.solve_budget(Kind.RF, [(256, 256)], 32768)
        assert sol.hypers == [{"d_bn": 64}] and sol.params == 32768 and sol.within_tol

    def test_hashed_exact(self):
        for target in (1, 77, 4096):
            assert budget.solve_budget(Kind.HASHED, [(64, 64)], target).params == target

    def test_tt(self):
        assert budget.solve_budget(Kind.TT, [(256, 256)], 4608).hypers == [{"tt_rank": 8}]

    def test_out_of_support(self):
        with pytest.raises(OutOfSupportError) as err:
            budget.solve_budget(Kind.RF, [(64, 64)], 10)
        assert err.value.interval == (128, 8192)

    def test_tie_goes_to_smaller(self):
        # d_bn=1 gives 64 params and d_bn=2 gives 128; 96 sits halfway.
        assert budget.solve_budget(Kind.RF, [(32, 32)], 96).params == 64

    def test_roundtrip_random(self):
        rng = np.random.default_rng(2024)
        shapes = [(8, 8), (16, 16), (32, 32), (24, 24), (12, 20), (64, 32)]
        for _ in range(100):
            square = [s for s in shapes if s[0] == s[1]]
            kind = Kind(rng.choice([k.value for k in SQUARE_KINDS]))
            pool = square if kind in (Kind.ACDC, Kind.SHUFFLE) else shapes
            dims = [pool[i] for i in rng.choice(len(pool), size=int(rng.integers(1, 4)))]
            t = float(rng.uniform())
            target = budget.total_params(kind, dims, t)
            sol = budget.solve_budget(kind, dims, target)
            assert sol.params == target, (kind, dims, t)
            assert budget.total_params(kind, dims, sol.t) == target

    @settings(max_examples=60, deadline=None)
    @given(st.sampled_from(ANY_SHAPE_KINDS), st.floats(0, 1))
    def test_nearest_feasible(self, kind, frac):
        dims = [(16, 16), (16, 32)]
        lo, hi = budget.total_params(kind, dims, 0), budget.total_params(kind, dims, 1)
        target = lo + frac * (hi - lo)
        sol = budget.solve_budget(kind, dims, target)
        grid = {budget.total_params(kind, dims, t) for t in np.linspace(0, 1, 2001)}
        assert abs(sol.params - target) <= min(abs(p - target) for p in grid) + 1e-9

    def test_layer_order_irrelevant(self):
        a = budget.solve_budget(Kind.TT, [(16, 16), (32, 32)], 900)
        b = budget.solve_budget(Kind.TT, [(32, 32), (16, 16)], 900)
        assert a.params == b.params and a.hypers == b.hypers[::-1]

    def test_json(self):
        js = budget.solve_budget(Kind.RF, [(64, 64)], 410).to_json()
        assert js["kind"] == "RankFactorised" and js["hypers"] == [{"d_bn": 3}]
