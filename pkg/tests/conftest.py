import numpy as np
import pytest

from structlin.linop import Kind, OperatorSpec

ACCEPTANCE_LINES: list[str] = []

ALL_KINDS = list(Kind)


def small_spec(kind: Kind, rng: np.random.Generator, max_n: int = 16) -> OperatorSpec:
    """A random valid spec of ``kind`` with both sides at most ``max_n``."""
    seed = int(rng.integers(0, 2**31))
    if kind in (Kind.ACDC, Kind.SHUFFLE):
        n = 2 * int(rng.integers(1, max_n // 2 + 1))
        if kind is Kind.ACDC:
            return OperatorSpec(kind, n, n, {"L": int(rng.integers(1, 4))}, seed)
        divisors = [g for g in range(1, n + 1) if n % g == 0]
        return OperatorSpec(kind, n, n, {"groups": int(rng.choice(divisors))}, seed)
    n_out = int(rng.integers(2, max_n + 1))
    n_in = int(rng.integers(4, max_n + 1))
    if kind is Kind.DENSE:
        return OperatorSpec(kind, n_out, n_in, {}, seed)
    if kind is Kind.TT:
        return OperatorSpec(kind, n_out, n_in, {"tt_rank": int(rng.integers(1, 5))}, seed)
    if kind is Kind.TUCKER:
        return OperatorSpec(kind, n_out, n_in, {"rank_fraction": float(rng.uniform(0.2, 1.0))}, seed)
    if kind is Kind.RF:
        return OperatorSpec(kind, n_out, n_in, {"d_bn": int(rng.integers(1, min(n_out, n_in) + 1))}, seed)
    if kind is Kind.HASHED:
        return OperatorSpec(kind, n_out, n_in, {"n_real": int(rng.integers(1, n_out * n_in + 1))}, seed)
    raise AssertionError(kind)


def central_fd(f, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return out


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
