"""Ridge regression of Bernstein weights, batch and recursive.

Both paths minimize ``||Psi w - f||^2 + lam ||w - w0||^2``.  The recursive
path is the Kalman-gain update over mini-batches; the batch path solves the
normal equations directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import basis
from .basis import BasisConfig

# rows per chunk when streaming data through the feature contractions
_CHUNK = 8192


@dataclass(frozen=True)
class FitConfig:
    lam: float = 1e-4
    # None picks min(4096, N**3); see rls_batch_size
    batch_size: int | None = None
    w_init: np.ndarray | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"ridge lambda must be positive, got {self.lam}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")

    def initial_weights(self, n_features: int) -> np.ndarray:
        if self.w_init is None:
            return np.zeros(n_features)
        w0 = np.asarray(self.w_init, dtype=float).reshape(-1)
        if w0.shape[0] != n_features:
            raise ValueError(f"w_init has {w0.shape[0]} entries, expected {n_features}")
        return w0.copy()


def rls_batch_size(cfg: BasisConfig, fit_cfg: FitConfig) -> int:
    """Mini-batch size used by :func:`fit_recursive`.

    Once a batch is larger than the feature count, the m x m solve dominates
    the cost of an update, so the default is capped at ``N**3``.
    """
    if fit_cfg.batch_size is not None:
        return fit_cfg.batch_size
    return int(min(4096, cfg.n_features))


def _check_data(points, distances, cfg: BasisConfig):
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    f = np.asarray(distances, dtype=float).reshape(-1)
    if p.shape[0] != f.shape[0]:
        raise ValueError(f"{p.shape[0]} points but {f.shape[0]} distances")
    if p.shape[0] == 0:
        raise ValueError("need at least one sample")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(f))):
        raise ValueError("samples must be finite")
    return p, f


def design_matrix(points, cfg: BasisConfig) -> np.ndarray:
    """Explicit ``(T, N**3)`` feature matrix.  Only sensible for small problems."""
    return basis.features(np.asarray(points, dtype=float).reshape(-1, 3), cfg)


def _moment_monomials(t: np.ndarray, n: int) -> np.ndarray:
    # t^i (1-t)^(2n-2-i), i = 0..2n-2
    k = np.arange(2 * n - 1)
    tt = t[:, None]
    return np.power(tt, k) * np.power(1.0 - tt, 2 * n - 2 - k)


def gram_matrix(points, cfg: BasisConfig) -> np.ndarray:
    """``Psi^T Psi`` assembled from a product-moment tensor.

    A product of two degree ``N-1`` Bernstein polynomials is a multiple of a
    degree ``2N-2`` one::

        phi_a(t) phi_b(t) = C(N-1,a) C(N-1,b) t^(a+b) (1-t)^(2N-2-a-b)

    so every Gram entry is a scaled entry of the ``(2N-1)^3`` moment tensor
    ``M[i,j,k] = sum_t m_i(t1) m_j(t2) m_k(t3)``.  Building M costs
    ``O(T N^3)`` instead of the ``O(T N^6)`` of ``Psi.T @ Psi``.
    """
    n = cfg.n_per_axis
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    t = np.clip(cfg.normalize(p), 0.0, 1.0)
    k = 2 * n - 1
    moments = np.zeros((k * k, k))
    for s in range(0, p.shape[0], _CHUNK):
        m1, m2, m3 = (_moment_monomials(t[s:s + _CHUNK, i], n) for i in range(3))
        pair = (m1[:, :, None] * m2[:, None, :]).reshape(-1, k * k)
        moments += pair.T @ m3
    moments = moments.reshape(k, k, k)

    idx = np.add.outer(np.arange(n), np.arange(n))
    i1 = idx[:, None, None, :, None, None]
    i2 = idx[None, :, None, None, :, None]
    i3 = idx[None, None, :, None, None, :]
    gram = moments[i1, i2, i3].reshape(n ** 3, n ** 3)

    c = basis._binomials(n)
    scale = (c[:, None, None] * c[None, :, None] * c[None, None, :]).reshape(-1)
    gram *= scale[:, None]
    gram *= scale[None, :]
    return gram


def feature_moments(points, values, cfg: BasisConfig) -> np.ndarray:
    """``Psi^T f`` without materializing ``Psi``."""
    n = cfg.n_per_axis
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    f = np.asarray(values, dtype=float).reshape(-1)
    out = np.zeros((n * n, n))
    for s in range(0, p.shape[0], _CHUNK):
        (a, b, c), _ = basis._axis_bases(p[s:s + _CHUNK], cfg, with_grad=False)
        a = a * f[s:s + _CHUNK, None]
        out += (a[:, :, None] * b[:, None, :]).reshape(-1, n * n).T @ c
    return out.reshape(-1)


def fit_batch(points, distances, cfg: BasisConfig, fit_cfg: FitConfig = FitConfig()) -> np.ndarray:
    """Closed-form ridge solution ``(Psi^T Psi + lam I)^-1 (Psi^T f + lam w0)``."""
    p, f = _check_data(points, distances, cfg)
    if not np.all(cfg.domain.contains(p, tol=1e-9 * cfg.domain.diagonal)):
        raise ValueError("training points must lie inside the basis domain")
    w0 = fit_cfg.initial_weights(cfg.n_features)
    a = gram_matrix(p, cfg)
    a[np.diag_indices_from(a)] += fit_cfg.lam
    rhs = feature_moments(p, f, cfg) + fit_cfg.lam * w0
    del p
    # a is symmetric; its transpose is the Fortran-ordered view LAPACK can factor in place
    factor = scipy.linalg.cho_factor(a.T, lower=False, overwrite_a=True, check_finite=False)
    return scipy.linalg.cho_solve(factor, rhs, check_finite=False)


@dataclass
class RlsState:
    cfg: BasisConfig
    b_matrix: np.ndarray
    weights: np.ndarray
    n_samples_seen: int = 0
    n_updates: int = field(default=0, repr=False)


def rls_init(cfg: BasisConfig, fit_cfg: FitConfig = FitConfig()) -> RlsState:
    nf = cfg.n_features
    return RlsState(
        cfg=cfg,
        b_matrix=np.eye(nf) / fit_cfg.lam,
        weights=fit_cfg.initial_weights(nf),
    )


def rls_update(state: RlsState, batch_points, batch_distances) -> RlsState:
    """One Kalman-gain step on a mini-batch; updates ``state`` in place.

    ``K = B Psi^T (I + Psi B Psi^T)^-1``, ``B <- B - K Psi B``,
    ``w <- w + K (f - Psi w)``.  The inner m x m system is solved by Cholesky.
    Batches with more rows than features use the equivalent information
    form ``B <- (B^-1 + Psi^T Psi)^-1`` so the factorization stays N^3 wide.
    """
    p, f = _check_data(batch_points, batch_distances, state.cfg)
    psi = basis.features(p, state.cfg)
    b = state.b_matrix
    if psi.shape[0] > psi.shape[1]:
        return _information_update(state, psi, f)
    bpt = b @ psi.T                       # B Psi^T, also (Psi B)^T
    s = psi @ bpt
    s[np.diag_indices_from(s)] += 1.0
    try:
        factor = scipy.linalg.cho_factor(s, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("innovation matrix not positive definite; RLS state is corrupted") from exc
    gain = scipy.linalg.cho_solve(factor, bpt.T, check_finite=False).T
    innovation = f - psi @ state.weights
    state.weights = state.weights + gain @ innovation
    b -= gain @ bpt.T
    state.b_matrix = 0.5 * (b + b.T)
    state.n_samples_seen += p.shape[0]
    state.n_updates += 1
    return state


def _information_update(state: RlsState, psi: np.ndarray, f: np.ndarray) -> RlsState:
    eye = np.eye(psi.shape[1])
    try:
        info = scipy.linalg.cho_solve(scipy.linalg.cho_factor(state.b_matrix, lower=True, check_finite=False), eye,
                                      check_finite=False)
        info = 0.5 * (info + info.T) + psi.T @ psi
        b = scipy.linalg.cho_solve(scipy.linalg.cho_factor(info, lower=True, check_finite=False), eye,
                                   check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("information matrix not positive definite; RLS state is corrupted") from exc
    state.b_matrix = 0.5 * (b + b.T)
    state.weights = state.weights + state.b_matrix @ (psi.T @ (f - psi @ state.weights))
    state.n_samples_seen += psi.shape[0]
    state.n_updates += 1
    return state


def iter_batches(n: int, batch_size: int):
    for s in range(0, n, batch_size):
        yield slice(s, min(n, s + batch_size))


def fit_recursive(points, distances, cfg: BasisConfig, fit_cfg: FitConfig = FitConfig()) -> np.ndarray:
    """Stream the samples through :func:`rls_update` in order."""
    p, f = _check_data(points, distances, cfg)
    state = rls_init(cfg, fit_cfg)
    for sl in iter_batches(p.shape[0], rls_batch_size(cfg, fit_cfg)):
        rls_update(state, p[sl], f[sl])
    return state.weights


def predict(points, cfg: BasisConfig, weights) -> np.ndarray:
    return basis.evaluate(points, cfg, weights)
