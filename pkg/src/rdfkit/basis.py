"""Tensor-product Bernstein features on an axis-aligned box.

Feature layout: for a point with normalized coordinates (t1, t2, t3) the
feature row is ``kron(phi(t1), kron(phi(t2), phi(t3)))``, i.e. the flat index
of basis triple (a, b, c) is ``a*N*N + b*N + c`` (axis 1 slowest, axis 3
fastest).  This is the C-order ravel of an ``(N, N, N)`` weight tensor.

Gradients returned by :func:`features_grad` are taken with respect to metric
coordinates, not the normalized ones.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import comb

MAX_N = 32

# slack allowed when checking that normalized coordinates lie in [0, 1]
_T_TOL = 1e-9


@dataclass(frozen=True)
class AxisBox:
    """Axis-aligned box, meters."""

    min: tuple
    max: tuple

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float).reshape(3)
        hi = np.asarray(self.max, dtype=float).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(hi <= lo):
            raise ValueError(f"box max must exceed min on every axis, got {lo} / {hi}")
        object.__setattr__(self, "min", tuple(float(v) for v in lo))
        object.__setattr__(self, "max", tuple(float(v) for v in hi))

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.min)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.max)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= self.lo - tol) & (p <= self.hi + tol), axis=-1)

    def clamp(self, points) -> np.ndarray:
        return np.clip(points, self.lo, self.hi)

    def to_dict(self) -> dict:
        return {"min": list(self.min), "max": list(self.max)}

    @classmethod
    def from_dict(cls, d: dict) -> "AxisBox":
        return cls(tuple(d["min"]), tuple(d["max"]))


@dataclass(frozen=True)
class BasisConfig:
    n_per_axis: int
    domain: AxisBox

    def __post_init__(self):
        _check_n(self.n_per_axis)

    @property
    def n_features(self) -> int:
        return self.n_per_axis ** 3

    def normalize(self, points) -> np.ndarray:
        """Map metric points to [0, 1]^3 (no range check)."""
        p = np.asarray(points, dtype=float)
        return (p - self.domain.lo) / self.domain.extent


def _check_n(n) -> None:
    if int(n) != n or n < 2:
        raise ValueError(f"need at least 2 basis functions per axis, got N={n}")
    if n > MAX_N:
        raise ValueError(f"N={n} exceeds the supported maximum of {MAX_N}")


@lru_cache(maxsize=None)
def _binomials(n: int) -> np.ndarray:
    # row of C(n-1, k), k = 0..n-1; exact integers in float64 up to n = 32
    out = comb(n - 1, np.arange(n), exact=False)
    out.setflags(write=False)
    return out


def _check_t(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("normalized coordinate must be finite")
    if np.any(t < -_T_TOL) or np.any(t > 1.0 + _T_TOL):
        raise ValueError("normalized coordinate outside [0, 1]")
    return np.clip(t, 0.0, 1.0)


def _bernstein(t: np.ndarray, n: int) -> np.ndarray:
    # t already validated; np.power(0., 0) == 1 handles the endpoints
    k = np.arange(n)
    tt = t[..., None]
    return _binomials(n) * np.power(tt, k) * np.power(1.0 - tt, n - 1 - k)


def _bernstein_deriv(t: np.ndarray, n: int) -> np.ndarray:
    # d/dt B_{k,n-1} = (n-1) (B_{k-1,n-2} - B_{k,n-2}); lower basis padded with zeros
    if n == 2:
        return np.broadcast_to(np.array([-1.0, 1.0]), t.shape + (2,)).copy()
    low = _bernstein(t, n - 1)
    pad = np.zeros(t.shape + (1,))
    return (n - 1) * (np.concatenate([pad, low], axis=-1) - np.concatenate([low, pad], axis=-1))


def eval_1d(t, n: int) -> np.ndarray:
    """Bernstein basis of degree ``n - 1`` at ``t``.

    ``t`` may be a scalar or an array; the basis index is the last axis of
    the result.
    """
    _check_n(n)
    return _bernstein(_check_t(t), n)


def grad_1d(t, n: int) -> np.ndarray:
    """Derivative of :func:`eval_1d` with respect to ``t``."""
    _check_n(n)
    return _bernstein_deriv(_check_t(t), n)


def _axis_bases(points, cfg: BasisConfig, with_grad: bool):
    p = np.asarray(points, dtype=float)
    if p.shape[-1] != 3:
        raise ValueError(f"points must have trailing dimension 3, got shape {p.shape}")
    t = cfg.normalize(p)
    if np.any(t < -_T_TOL) or np.any(t > 1.0 + _T_TOL) or not np.all(np.isfinite(t)):
        raise ValueError("point outside the basis domain")
    t = np.clip(t, 0.0, 1.0)
    n = cfg.n_per_axis
    phi = [_bernstein(t[..., i], n) for i in range(3)]
    if not with_grad:
        return phi, None
    scale = 1.0 / cfg.domain.extent
    dphi = [_bernstein_deriv(t[..., i], n) * scale[i] for i in range(3)]
    return phi, dphi


def _kron3(a, b, c) -> np.ndarray:
    n = a.shape[-1]
    out = a[..., :, None, None] * b[..., None, :, None] * c[..., None, None, :]
    return out.reshape(a.shape[:-1] + (n ** 3,))


def features(points, cfg: BasisConfig) -> np.ndarray:
    """Feature rows for one point ``(3,)`` or many ``(M, 3)``."""
    (p1, p2, p3), _ = _axis_bases(points, cfg, with_grad=False)
    return _kron3(p1, p2, p3)


def features_grad(points, cfg: BasisConfig) -> np.ndarray:
    """Metric gradient of the feature rows.

    Returns shape ``(3, N**3)`` for a single point or ``(M, 3, N**3)`` for a
    batch; entry ``[..., i, :]`` is the derivative along axis ``i`` in 1/m.
    """
    (p1, p2, p3), (d1, d2, d3) = _axis_bases(points, cfg, with_grad=True)
    rows = [_kron3(d1, p2, p3), _kron3(p1, d2, p3), _kron3(p1, p2, d3)]
    return np.stack(rows, axis=-2)


def evaluate(points, cfg: BasisConfig, weights, with_grad: bool = False):
    """Evaluate ``<features(p), weights>`` without materializing feature rows.

    Contracts the ``(N, N, N)`` weight tensor one axis at a time, which keeps
    memory at ``O(M N^2)`` instead of ``O(M N^3)``.  Returns values of shape
    ``(M,)`` and, if requested, metric gradients ``(M, 3)``.
    """
    n = cfg.n_per_axis
    p = np.atleast_2d(np.asarray(points, dtype=float))
    (p1, p2, p3), d = _axis_bases(p, cfg, with_grad=with_grad)
    w = np.asarray(weights, dtype=float).reshape(n * n, n)
    m = p.shape[0]

    def contract(a, b, c):
        tmp = (c @ w.T).reshape(m, n, n)         # sum over axis-3 index
        tmp = np.einsum("mab,mb->ma", tmp, b)    # axis 2
        return np.einsum("ma,ma->m", tmp, a)     # axis 1

    if not with_grad:
        return contract(p1, p2, p3)

    d1, d2, d3 = d
    wc3 = (p3 @ w.T).reshape(m, n, n)
    wd3 = (d3 @ w.T).reshape(m, n, n)
    s2 = np.einsum("mab,mb->ma", wc3, p2)
    val = np.einsum("ma,ma->m", s2, p1)
    g1 = np.einsum("ma,ma->m", s2, d1)
    g2 = np.einsum("ma,ma->m", np.einsum("mab,mb->ma", wc3, d2), p1)
    g3 = np.einsum("ma,ma->m", np.einsum("mab,mb->ma", wd3, p2), p1)
    return val, np.stack([g1, g2, g3], axis=-1)
