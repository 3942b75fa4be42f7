"""Matrix normal distribution primitives.

Samples are stored as a ``(n, d_c, d_r)`` array. The column covariance
``sigma_c`` acts on the ``d_c`` rows of each sample and the row covariance
``sigma_r`` on its ``d_r`` columns, so that ``vec(X)`` (columns stacked) has
covariance ``kron(sigma_r, sigma_c)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cholesky
from scipy.linalg.lapack import dtrtri

from .errors import (
    ArgumentError,
    CapacityError,
    InsufficientDataError,
    NumericalDomainError,
    ShapeError,
)

LOG_2PI = math.log(2.0 * math.pi)

#: a factorization whose squared pivot ratio falls below this is declared non-PD
PIVOT_RATIO = 1e-12

#: largest d_c * d_r for which :func:`kron_covariance` materializes the product
KRON_GUARD = 4096


def min_effective_count(d_c: int, d_r: int) -> int:
    """Smallest (weighted) sample size admitting a matrix normal fit."""
    return (d_c * d_c + d_r * d_r) // (d_c * d_r) + 2


def spd_cholesky(S: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises :class:`NumericalDomainError` when LAPACK rejects the matrix or
    when the smallest pivot is below ``PIVOT_RATIO`` times the largest.
    """
    if not np.all(np.isfinite(S)):
        raise NumericalDomainError(f"{name} has non-finite entries")
    try:
        L = cholesky(S, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NumericalDomainError(f"{name} is not positive definite") from exc
    piv = np.diag(L) ** 2
    if not piv.min() > PIVOT_RATIO * piv.max():
        raise NumericalDomainError(f"{name} is numerically singular")
    return L


@dataclass(frozen=True)
class MatrixDataset:
    """n real matrices of a common ``d_c x d_r`` shape."""

    samples: np.ndarray
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ShapeError("samples must be a sequence of 2-d matrices")
        n, d_c, d_r = arr.shape
        if n < 1 or d_c < 1 or d_r < 1:
            raise ShapeError(f"empty dataset shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ArgumentError("samples contain non-finite entries")
        arr.setflags(write=False)
        ids = np.arange(n) if self.ids is None else np.array(self.ids, dtype=np.int64)
        if ids.shape != (n,):
            raise ShapeError(f"expected {n} ids, got shape {ids.shape}")
        ids.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d_c(self) -> int:
        return self.samples.shape[1]

    @property
    def d_r(self) -> int:
        return self.samples.shape[2]

    @property
    def shape(self) -> tuple:
        return (self.d_c, self.d_r)

    def __len__(self):
        return self.n

    def subset(self, index) -> "MatrixDataset":
        index = np.asarray(index)
        return MatrixDataset(self.samples[index], self.ids[index])

    def replace(self, index, matrices) -> "MatrixDataset":
        """Copy of the dataset with ``samples[index]`` overwritten."""
        arr = self.samples.copy()
        arr[np.asarray(index, dtype=np.int64)] = matrices
        return MatrixDataset(arr, self.ids)


def _check_symmetric(S, name):
    S = np.array(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {S.shape}")
    scale = max(np.abs(S).max(), np.finfo(float).tiny)
    if np.abs(S - S.T).max() > 1e-12 * scale:
        raise ArgumentError(f"{name} is not symmetric")
    S = 0.5 * (S + S.T)
    S.setflags(write=False)
    return S


@dataclass(frozen=True)
class MatNormalParams:
    """Mean ``M`` and the two covariance factors of a matrix normal law.

    Positive definiteness is checked lazily, when a factorization is first
    needed; the triangular factors are cached on the instance.
    """

    M: np.ndarray
    sigma_c: np.ndarray
    sigma_r: np.ndarray

    def __post_init__(self):
        M = np.array(self.M, dtype=float)
        if M.ndim != 2:
            raise ShapeError("M must be a matrix")
        sc = _check_symmetric(self.sigma_c, "sigma_c")
        sr = _check_symmetric(self.sigma_r, "sigma_r")
        if sc.shape[0] != M.shape[0] or sr.shape[0] != M.shape[1]:
            raise ShapeError(
                f"M is {M.shape} but covariances are {sc.shape} and {sr.shape}"
            )
        M.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "sigma_c", sc)
        object.__setattr__(self, "sigma_r", sr)

    @property
    def d_c(self) -> int:
        return self.M.shape[0]

    @property
    def d_r(self) -> int:
        return self.M.shape[1]

    @cached_property
    def chol_c(self) -> np.ndarray:
        return spd_cholesky(self.sigma_c, "sigma_c")

    @cached_property
    def chol_r(self) -> np.ndarray:
        return spd_cholesky(self.sigma_r, "sigma_r")

    @cached_property
    def whitener_c(self) -> np.ndarray:
        return tri_inv(self.chol_c)

    @cached_property
    def whitener_r(self) -> np.ndarray:
        return tri_inv(self.chol_r)

    @cached_property
    def logdet_c(self) -> float:
        return 2.0 * float(np.log(np.diag(self.chol_c)).sum())

    @cached_property
    def logdet_r(self) -> float:
        return 2.0 * float(np.log(np.diag(self.chol_r)).sum())

    def normalized(self) -> "MatNormalParams":
        """Rescale so that ``trace(sigma_c) == d_c``; the Kronecker product is kept."""
        c = self.d_c / np.trace(self.sigma_c)
        if c == 1.0:
            return self
        return MatNormalParams(self.M, self.sigma_c * c, self.sigma_r / c)

    def scaled(self, factor: float) -> "MatNormalParams":
        """Multiply the Kronecker covariance by ``factor`` (applied to sigma_c)."""
        return MatNormalParams(self.M, self.sigma_c * factor, self.sigma_r).normalized()


def _as_matrix(X, params: MatNormalParams) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != params.M.shape:
        raise ShapeError(f"X has shape {X.shape}, expected {params.M.shape}")
    return X


def _as_stack(data, params: MatNormalParams) -> np.ndarray:
    arr = data.samples if isinstance(data, MatrixDataset) else np.asarray(data, dtype=float)
    if arr.ndim != 3 or arr.shape[1:] != params.M.shape:
        raise ShapeError(f"samples have shape {arr.shape[1:]}, expected {params.M.shape}")
    return arr


def tri_inv(L: np.ndarray) -> np.ndarray:
    """Inverse of a lower-triangular factor (the whitening matrix)."""
    W, info = dtrtri(L, lower=1)
    if info != 0:
        raise NumericalDomainError("singular triangular factor")
    return W


def whiten(E: np.ndarray, chol_c: np.ndarray, chol_r: np.ndarray) -> np.ndarray:
    """Return ``L_c^{-1} E_i L_r^{-T}`` for every matrix of a ``(n, d_c, d_r)`` stack."""
    n, d_c, d_r = E.shape
    Et = E.transpose(1, 0, 2).reshape(d_c, n * d_r)
    Y = _whiten_t(Et, tri_inv(chol_c), tri_inv(chol_r))
    return Y.reshape(d_c, n, d_r).transpose(1, 0, 2)


def _whiten_t(Et, Wc, Wr):
    # Et holds the centered samples in (d_c, n * d_r) layout
    d_c = Et.shape[0]
    d_r = Wr.shape[0]
    Y = (Wc @ Et).reshape(-1, d_r) @ Wr.T
    return Y.reshape(d_c, -1)


def distances_t(Xt: np.ndarray, params: "MatNormalParams") -> np.ndarray:
    """mmd2 of every sample given the ``(d_c, n, d_r)`` transposed stack ``Xt``."""
    d_c, n, d_r = Xt.shape
    Et = (Xt - params.M[:, None, :]).reshape(d_c, n * d_r)
    Y = _whiten_t(Et, params.whitener_c, params.whitener_r)
    Y = Y.reshape(d_c, n, d_r)
    return np.einsum("anj,anj->n", Y, Y)


def mmd2(X, params: MatNormalParams) -> float:
    """Squared matrix Mahalanobis distance of a single matrix."""
    return float(mmd2_all(_as_matrix(X, params)[None], params)[0])


def mmd2_all(data, params: MatNormalParams) -> np.ndarray:
    """Squared matrix Mahalanobis distances of every sample in ``data``."""
    X = _as_stack(data, params)
    return distances_t(X.transpose(1, 0, 2), params)


def matnorm_logpdf(X, params: MatNormalParams) -> float:
    """Log-density of the matrix normal distribution at ``X``."""
    d_c, d_r = params.d_c, params.d_r
    dist = mmd2(X, params)
    return (
        -0.5 * d_c * d_r * LOG_2PI
        - 0.5 * d_r * params.logdet_c
        - 0.5 * d_c * params.logdet_r
        - 0.5 * dist
    )


def kron_covariance(params: MatNormalParams, guard: int = KRON_GUARD) -> np.ndarray:
    """Dense ``kron(sigma_r, sigma_c)``, the covariance of column-stacked ``vec(X)``."""
    if params.d_c * params.d_r > guard:
        raise CapacityError(
            f"d_c * d_r = {params.d_c * params.d_r} exceeds the guard of {guard}"
        )
    return np.kron(params.sigma_r, params.sigma_c)


def vec(X) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(X, dtype=float).reshape(-1, order="F")


class FlipFlopFit(NamedTuple):
    params: MatNormalParams
    iterations: int
    objective_trace: list
    converged: bool


def _scatter_c(Et, chol_r, total):
    # sum_i w_i E_i Sigma_r^{-1} E_i' / (total * d_r), rows of Et pre-scaled by sqrt(w)
    d_c = Et.shape[0]
    d_r = chol_r.shape[0]
    Z = (Et.reshape(-1, d_r) @ tri_inv(chol_r).T).reshape(d_c, -1)
    S = Z @ Z.T / (total * d_r)
    return 0.5 * (S + S.T)


def _scatter_r(Et, chol_c, total, d_r):
    # sum_i w_i E_i' Sigma_c^{-1} E_i / (total * d_c)
    d_c = Et.shape[0]
    Z = (tri_inv(chol_c) @ Et).reshape(-1, d_r)
    S = Z.T @ Z / (total * d_c)
    return 0.5 * (S + S.T)


def flipflop_fit(
    data,
    weights: Optional[Sequence[float]] = None,
    init: Optional[MatNormalParams] = None,
    tol: float = 1e-8,
    max_iter: int = 1000,
) -> FlipFlopFit:
    """Weighted maximum-likelihood fit of a matrix normal model.

    The mean is the weighted sample mean; the two covariance factors are
    updated alternately (``sigma_c`` first, then ``sigma_r``) until the
    relative change of the weighted log-likelihood drops below ``tol`` or
    ``max_iter`` sweeps have run.

    Parameters
    ----------
    data : MatrixDataset or array of shape (n, d_c, d_r)
    weights : array of shape (n,), optional
        Nonnegative observation weights; all ones when omitted.
    init : MatNormalParams, optional
        Starting covariances. Only ``init.sigma_r`` influences the first
        sweep. Defaults to identities.
    tol : float
        Threshold on ``|1 - L_prev / L_new|``.
    max_iter : int
        Maximum number of sweeps.

    Returns
    -------
    FlipFlopFit
        ``(params, iterations, objective_trace, converged)``; params are
        trace-normalized and ``objective_trace[t]`` is the weighted
        log-likelihood after sweep ``t + 1``.
    """
    X = data.samples if isinstance(data, MatrixDataset) else np.asarray(data, dtype=float)
    if X.ndim != 3:
        raise ShapeError("data must be a (n, d_c, d_r) stack")
    n, d_c, d_r = X.shape
    if not tol > 0:
        raise ArgumentError("tol must be positive")
    if max_iter < 1:
        raise ArgumentError("max_iter must be at least 1")

    if weights is None:
        w = None
        total = float(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ArgumentError("weights must be a finite nonnegative n-vector")
        keep = w > 0
        X, w = X[keep], w[keep]
        total = float(w.sum())
        if np.all(w == 1.0):
            w = None
    need = min_effective_count(d_c, d_r)
    if total < need:
        raise InsufficientDataError(
            f"effective sample size {total:g} is below the minimum {need}"
        )

    M = X.mean(axis=0) if w is None else np.tensordot(w, X, axes=1) / total
    E = X - M
    if w is not None:
        E = E * np.sqrt(w)[:, None, None]
    Et = np.ascontiguousarray(E.transpose(1, 0, 2)).reshape(d_c, -1)
    if init is None:
        chol_r = np.eye(d_r)
    else:
        if init.M.shape != (d_c, d_r):
            raise ShapeError("init has the wrong shape")
        chol_r = init.chol_r

    trace: list = []
    converged = False
    const = d_c * d_r * (1.0 + LOG_2PI)
    sigma_c = sigma_r = None
    it = 0
    for it in range(1, max_iter + 1):
        try:
            sigma_c = _scatter_c(Et, chol_r, total)
            chol_c = spd_cholesky(sigma_c, "sigma_c")
            sigma_r = _scatter_r(Et, chol_c, total, d_r)
            chol_r = spd_cholesky(sigma_r, "sigma_r")
        except NumericalDomainError as exc:
            raise NumericalDomainError(f"{exc} at flip-flop sweep {it}", iteration=it) from exc
        logdet_c = 2.0 * np.log(np.diag(chol_c)).sum()
        logdet_r = 2.0 * np.log(np.diag(chol_r)).sum()
        # right after a sigma_r update the weighted distances sum to total * d_c * d_r
        loglik = -0.5 * total * (d_r * logdet_c + d_c * logdet_r + const)
        trace.append(float(loglik))
        if it > 1:
            prev = trace[-2]
            change = abs(1.0 - prev / loglik) if loglik != 0.0 else abs(prev - loglik)
            if change < tol:
                converged = True
                break

    params = MatNormalParams(M, sigma_c, sigma_r).normalized()
    return FlipFlopFit(params, it, trace, converged)


def weighted_loglik(data, params: MatNormalParams, weights=None) -> float:
    """Weighted matrix normal log-likelihood of ``data`` under ``params``."""
    X = _as_stack(data, params)
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    d_c, d_r = params.d_c, params.d_r
    dist = mmd2_all(X, params)
    per = d_r * params.logdet_c + d_c * params.logdet_r + dist + d_c * d_r * LOG_2PI
    return float(-0.5 * np.dot(w, per))


@dataclass(frozen=True)
class FactoredPCs:
    """Leading eigenpairs of the two covariance factors."""

    U_c: np.ndarray
    lambda_c: np.ndarray
    U_r: np.ndarray
    lambda_r: np.ndarray

    @property
    def q_c(self) -> int:
        return self.U_c.shape[1]

    @property
    def q_r(self) -> int:
        return self.U_r.shape[1]


def sym_eig_desc(S: np.ndarray):
    """Eigenpairs in descending order, each vector's largest-magnitude entry positive."""
    vals, vecs = np.linalg.eigh(S)
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    # argmax returns the lowest index among ties
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


def eigendecompose_params(params: MatNormalParams, q_c: int, q_r: int) -> FactoredPCs:
    """Top ``q_c`` column and ``q_r`` row eigenpairs of the covariance factors."""
    if not 1 <= q_c <= params.d_c:
        raise ArgumentError(f"q_c={q_c} must lie in [1, {params.d_c}]")
    if not 1 <= q_r <= params.d_r:
        raise ArgumentError(f"q_r={q_r} must lie in [1, {params.d_r}]")
    lc, Uc = sym_eig_desc(params.sigma_c)
    lr, Ur = sym_eig_desc(params.sigma_r)
    return FactoredPCs(Uc[:, :q_c], lc[:q_c], Ur[:, :q_r], lr[:q_r])
