"""Numeric primitives shared by the structured operators.

All routines act on the last axis of their input (except ``kmode_product``)
so that a batch of row vectors can be pushed through in one call.
"""

from __future__ import annotations

import math
import warnings
from functools import lru_cache

import numpy as np

from .errors import ShapeError


class ReshapeWarning(UserWarning):
    """Raised when a size cannot be split into three factors >= 2."""


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@lru_cache(maxsize=64)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``C`` with ``C @ C.T == I``."""
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    c = np.cos(np.pi * k * (2 * j + 1) / (2 * n))
    c[0] *= math.sqrt(1.0 / n)
    c[1:] *= math.sqrt(2.0 / n)
    c.setflags(write=False)
    return c


@lru_cache(maxsize=64)
def _ortho_scale(n: int) -> np.ndarray:
    s = np.full(n, math.sqrt(2.0 / n))
    s[0] = math.sqrt(1.0 / n)
    s.setflags(write=False)
    return s


@lru_cache(maxsize=64)
def _twiddle(n: int) -> np.ndarray:
    t = np.exp(-1j * np.pi * np.arange(n) / (2 * n))
    t.setflags(write=False)
    return t


def _check_len(x: np.ndarray) -> int:
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("DCT of an empty vector")
    return x.shape[-1]


def dct2(x) -> np.ndarray:
    """Orthonormal DCT-II along the last axis.

    Power-of-two lengths use Makhoul's reordering plus one complex FFT; any
    other length falls back to the dense O(N^2) matrix.
    """
    x = np.asarray(x, dtype=np.float64)
    n = _check_len(x)
    if n == 1:
        return x.copy()
    if not _is_pow2(n):
        return x @ dct_matrix(n).T
    v = np.concatenate([x[..., 0::2], x[..., 1::2][..., ::-1]], axis=-1)
    spec = np.fft.fft(v, axis=-1)
    return np.real(spec * _twiddle(n)) * _ortho_scale(n)


def idct2(y) -> np.ndarray:
    """Inverse of :func:`dct2` (orthonormal DCT-III)."""
    y = np.asarray(y, dtype=np.float64)
    n = _check_len(y)
    if n == 1:
        return y.copy()
    if not _is_pow2(n):
        return y @ dct_matrix(n)
    c = y / _ortho_scale(n)
    # C_N is taken as zero.
    c_rev = np.concatenate([np.zeros_like(c[..., :1]), c[..., :0:-1]], axis=-1)
    spec = np.conj(_twiddle(n)) * (c - 1j * c_rev)
    v = np.real(np.fft.ifft(spec, axis=-1))
    out = np.empty_like(y)
    half = (n + 1) // 2
    out[..., 0::2] = v[..., :half]
    out[..., 1::2] = v[..., half:][..., ::-1]
    return out


@lru_cache(maxsize=64)
def riffle_index(n: int) -> np.ndarray:
    """Gather indices such that ``x[riffle_index(n)] == riffle(x)``."""
    if n % 2:
        raise ValueError(f"riffle needs an even length, got {n}")
    h = n // 2
    idx = np.empty(n, dtype=np.intp)
    idx[0::2] = np.arange(h)
    idx[1::2] = np.arange(h, n)
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=64)
def riffle_inverse_index(n: int) -> np.ndarray:
    inv = np.argsort(riffle_index(n))
    inv.setflags(write=False)
    return inv


def riffle(x) -> np.ndarray:
    """Interleave the two halves: ``out[2i] = x[i]``, ``out[2i+1] = x[i + N/2]``."""
    x = np.asarray(x)
    return x[..., riffle_index(x.shape[-1])]


def riffle_inverse(x) -> np.ndarray:
    x = np.asarray(x)
    return x[..., riffle_inverse_index(x.shape[-1])]


def riffle_matrix(n: int) -> np.ndarray:
    """Permutation matrix P with ``P @ x == riffle(x)``."""
    p = np.zeros((n, n))
    p[np.arange(n), riffle_index(n)] = 1.0
    return p


def kmode_product(t, m, k: int) -> np.ndarray:
    """k-mode product ``t x_k m``: contract mode ``k`` of ``t`` with the columns of ``m``.

    The result has the shape of ``t`` with dimension ``k`` replaced by
    ``m.shape[0]``.
    """
    t = np.asarray(t, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"k-mode factor must be a matrix, got ndim={m.ndim}")
    if not -t.ndim <= k < t.ndim:
        raise ShapeError(f"mode {k} out of range for a rank-{t.ndim} tensor")
    if m.shape[1] != t.shape[k]:
        raise ShapeError(f"factor has {m.shape[1]} columns but mode {k} has size {t.shape[k]}")
    out = np.tensordot(m, t, axes=([1], [k]))
    return np.moveaxis(out, 0, k)


def _divisors(n: int) -> list[int]:
    small, large = [], []
    i = 1
    while i * i <= n:
        if n % i == 0:
            small.append(i)
            if i != n // i:
                large.append(n // i)
        i += 1
    return small + large[::-1]


def reshape3(n_out: int, n_in: int) -> tuple[int, int, int]:
    """Split ``n_out * n_in`` into three near-equal factors.

    Picks the factor multiset (all factors >= 2) minimising max/min, ties to
    the lexicographically smallest sorted multiset ``a <= b <= c``, and
    returns it as ``(a, c, b)`` so the largest factor sits in the middle
    mode. Sizes with no such split come back as ``(p, 1, 1)`` with a
    :class:`ReshapeWarning`.
    """
    p = int(n_out) * int(n_in)
    if n_out < 1 or n_in < 1 or p < 8:
        raise ValueError(f"reshape3 needs n_out*n_in >= 8, got {n_out}x{n_in}")
    best = None
    for a in _divisors(p):
        if a < 2 or a ** 3 > p:
            continue
        rest = p // a
        for b in _divisors(rest):
            if b < a:
                continue
            c = rest // b
            if c < b:
                break
            if best is None or c * best[0] < best[2] * a or (
                c * best[0] == best[2] * a and (a, b, c) < best
            ):
                best = (a, b, c)
    if best is None:
        warnings.warn(f"{p} has no 3-factor split with factors >= 2", ReshapeWarning, stacklevel=2)
        return (p, 1, 1)
    a, b, c = best
    return (a, c, b)
