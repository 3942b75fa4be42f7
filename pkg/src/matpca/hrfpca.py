"""Factored PCA on robust (or plain ML) covariance factors, plus diagnostics.

A fitted :class:`HrfpcaModel` holds the location and covariance factors and
their leading eigenpairs. Observations are summarized by the score matrix
``Z = U_c' (X - M) U_r``, the score distance (Mahalanobis distance of ``Z``
inside the PC subspace) and the orthogonal distance of ``X`` to that
subspace. The two distances, with their cutoffs, sort observations into
four groups (the SODA classification).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import ArgumentError, EstimationFailure, NumericalDomainError, ShapeError
from .matnorm import (
    FactoredPCs,
    MatNormalParams,
    MatrixDataset,
    eigendecompose_params,
    flipflop_fit,
    mmd2_all,
)
from .mmcd import MmcdConfig, MmcdFit, raw_mmcd, reweight_mmcd
from .robust_stats import chi2_quantile, std_normal_quantile, univariate_mcd

METHODS = ("hrfpca", "fpca")
LABELS = ("regular", "good_leverage", "orthogonal_outlier", "bad_leverage")
OD_CONVENTIONS = ("squared", "norm")

#: tail probability used by both SODA cutoffs
SODA_LEVEL = 0.975


@dataclass(frozen=True)
class HrfpcaModel:
    """Location, covariance factors and leading eigenpairs of a fitted model.

    ``mmcd`` is the robust-fit provenance and is None for ``fpca`` models.
    ``raw`` marks a model built from the raw (not reweighted) MMCD estimate.
    """

    params: MatNormalParams
    pcs: FactoredPCs
    method_tag: str
    mmcd: Optional[MmcdFit] = None
    raw: bool = False

    def __post_init__(self):
        if self.method_tag not in METHODS:
            raise ArgumentError(f"method must be one of {METHODS}, got {self.method_tag!r}")
        if (self.method_tag == "fpca") != (self.mmcd is None):
            raise ArgumentError("fpca models carry no MMCD fit and hrfpca models need one")

    @property
    def q_c(self) -> int:
        return self.pcs.q_c

    @property
    def q_r(self) -> int:
        return self.pcs.q_r

    @property
    def shape(self) -> tuple:
        return self.params.M.shape


def fit(
    data: MatrixDataset,
    q_c: int,
    q_r: int,
    config: MmcdConfig = MmcdConfig(),
    method: str = "hrfpca",
    alpha: float = 0.975,
    threads: int = 1,
    raw: bool = False,
) -> HrfpcaModel:
    """Fit a factored PCA model.

    ``hrfpca`` runs the MMCD search and one reweighting pass and takes the
    eigenpairs of the reweighted factors (of the raw ones when ``raw``).
    ``fpca`` takes them from the plain flip-flop ML fit on all observations;
    ``config``, ``alpha`` and ``raw`` are then ignored.
    """
    if method not in METHODS:
        raise ArgumentError(f"method must be one of {METHODS}, got {method!r}")
    d_c, d_r = data.shape
    if not 1 <= q_c <= d_c:
        raise ArgumentError(f"q_c={q_c} must lie in [1, {d_c}]")
    if not 1 <= q_r <= d_r:
        raise ArgumentError(f"q_r={q_r} must lie in [1, {d_r}]")
    if method == "fpca":
        params = flipflop_fit(data).params
        return HrfpcaModel(params, eigendecompose_params(params, q_c, q_r), "fpca")
    fitted = reweight_mmcd(data, raw_mmcd(data, config, threads=threads), alpha)
    params = fitted.raw_params if raw else fitted.params
    return HrfpcaModel(params, eigendecompose_params(params, q_c, q_r), "hrfpca", fitted, raw)


def _stack(model: HrfpcaModel, data) -> np.ndarray:
    X = data.samples if isinstance(data, MatrixDataset) else np.asarray(data, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != model.shape:
        raise ShapeError(f"samples have shape {X.shape[1:]}, expected {model.shape}")
    return X


def _single(model: HrfpcaModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != model.shape:
        raise ShapeError(f"X has shape {X.shape}, expected {model.shape}")
    return X


def scores_all(model: HrfpcaModel, data) -> np.ndarray:
    """Score matrices of every sample, shape ``(n, q_c, q_r)``."""
    E = _stack(model, data) - model.params.M
    return model.pcs.U_c.T @ E @ model.pcs.U_r


def project_scores(model: HrfpcaModel, X) -> np.ndarray:
    """``U_c' (X - M) U_r``."""
    return scores_all(model, _single(model, X)[None])[0]


def whitened_scores(model: HrfpcaModel, X, center: bool = True) -> np.ndarray:
    """Scores scaled to unit variance: ``L_c^{-1/2} U_c' (X - M) U_r L_r^{-1/2}``.

    With ``center=False`` the mean is not subtracted.
    """
    lc, lr = model.pcs.lambda_c, model.pcs.lambda_r
    if not (np.all(lc > 0) and np.all(lr > 0)):
        raise NumericalDomainError("whitening needs strictly positive kept eigenvalues")
    X = _single(model, X)
    E = X - model.params.M if center else X
    Z = model.pcs.U_c.T @ E @ model.pcs.U_r
    return Z / np.sqrt(np.outer(lc, lr))


def _od_from(E, Z, pcs, convention):
    R = E - pcs.U_c @ Z @ pcs.U_r.T
    od = np.einsum("nij,nij->n", R, R)
    return od if convention == "squared" else np.sqrt(od)


def _check_convention(convention):
    if convention not in OD_CONVENTIONS:
        raise ArgumentError(f"OD convention must be one of {OD_CONVENTIONS}, got {convention!r}")


def distances_all(model: HrfpcaModel, data, convention: str = "squared"):
    """Score and orthogonal distances of every sample.

    ``convention="squared"`` reports OD as the squared Frobenius norm of the
    residual ``X - M - U_c Z U_r'``; ``"norm"`` reports the norm itself.
    """
    _check_convention(convention)
    E = _stack(model, data) - model.params.M
    pcs = model.pcs
    Z = pcs.U_c.T @ E @ pcs.U_r
    sd = np.sqrt(np.einsum("nij,ij->n", Z * Z, 1.0 / np.outer(pcs.lambda_c, pcs.lambda_r)))
    return sd, _od_from(E, Z, pcs, convention)


def score_distance(model: HrfpcaModel, X) -> float:
    return float(distances_all(model, _single(model, X)[None])[0][0])


def orthogonal_distance(model: HrfpcaModel, X, convention: str = "squared") -> float:
    return float(distances_all(model, _single(model, X)[None], convention)[1][0])


def sd_cutoff(q_c: int, q_r: int) -> float:
    return float(np.sqrt(chi2_quantile(q_c * q_r, SODA_LEVEL)))


def od_cutoff(od) -> float:
    """``(mu + sigma z_0.975)^{3/2}`` from a univariate MCD of ``od^{2/3}``."""
    od = np.asarray(od, dtype=float)
    if od.size < 4:
        raise EstimationFailure(f"the OD cutoff needs at least 4 observations, got {od.size}")
    est = univariate_mcd(od ** (2.0 / 3.0)).estimate
    top = est.location + est.scale * std_normal_quantile(SODA_LEVEL)
    return float(max(top, 0.0) ** 1.5)


def soda_thresholds(model: HrfpcaModel, data: MatrixDataset, convention: str = "squared"):
    """``(sd_cut, od_cut)`` for the SODA plot of ``data``."""
    _, od = distances_all(model, data, convention)
    return sd_cutoff(model.q_c, model.q_r), od_cutoff(od)


class SodaReport(NamedTuple):
    sd: np.ndarray
    od: np.ndarray
    sd_cut: float
    od_cut: float
    labels: np.ndarray

    def counts(self) -> dict:
        return {lab: int(np.sum(self.labels == lab)) for lab in LABELS}


def label_points(sd, od, sd_cut, od_cut) -> np.ndarray:
    far_sd = np.asarray(sd) > sd_cut
    far_od = np.asarray(od) > od_cut
    # index = far_sd + 2 * far_od follows the order of LABELS
    return np.array(LABELS, dtype=object)[far_sd.astype(int) + 2 * far_od.astype(int)]


def classify_soda(model: HrfpcaModel, data: MatrixDataset, convention: str = "squared") -> SodaReport:
    """Score/orthogonal distances, cutoffs and the four-way labels."""
    sd, od = distances_all(model, data, convention)
    sd_cut = sd_cutoff(model.q_c, model.q_r)
    od_cut = od_cutoff(od)
    return SodaReport(sd, od, sd_cut, od_cut, label_points(sd, od, sd_cut, od_cut))


class Detection(NamedTuple):
    flags: np.ndarray
    distances: np.ndarray
    cutoff: float


def detect_outliers(params: MatNormalParams, data: MatrixDataset, alpha: float = 0.975) -> Detection:
    """Flag observations whose mmd2 exceeds the ``alpha`` chi-square quantile."""
    if not 0.0 < alpha < 1.0:
        raise ArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    dist = mmd2_all(data, params)
    cutoff = chi2_quantile(params.d_c * params.d_r, alpha)
    return Detection(dist > cutoff, dist, cutoff)


def shapley_cellwise(X, params: MatNormalParams) -> np.ndarray:
    """Cellwise contributions ``(X - M) * [sigma_c^{-1} (X - M) sigma_r^{-1}]``.

    The entries sum to the squared matrix Mahalanobis distance of ``X``.
    """
    X = np.asarray(X, dtype=float)
    if X.shape != params.M.shape:
        raise ShapeError(f"X has shape {X.shape}, expected {params.M.shape}")
    E = X - params.M
    # sigma^{-1} = W' W with W the inverse Cholesky factor
    Wc, Wr = params.whitener_c, params.whitener_r
    G = Wc.T @ (Wc @ E @ Wr.T) @ Wr
    return E * G


def scree(params: MatNormalParams):
    """Full spectra of ``sigma_c`` and ``sigma_r``, descending."""
    return (
        np.linalg.eigvalsh(params.sigma_c)[::-1].copy(),
        np.linalg.eigvalsh(params.sigma_r)[::-1].copy(),
    )


def suggest_rank(eigenvalues) -> int:
    """Number of leading eigenvalues before the largest ratio ``l_k / l_{k+1}``."""
    ev = np.asarray(eigenvalues, dtype=float)
    if ev.size < 2:
        return int(ev.size)
    tiny = np.finfo(float).tiny
    ratios = ev[:-1] / np.maximum(ev[1:], tiny)
    return int(np.argmax(ratios)) + 1


def suggest_ranks(params: MatNormalParams):
    eig_c, eig_r = scree(params)
    return suggest_rank(eig_c), suggest_rank(eig_r)
