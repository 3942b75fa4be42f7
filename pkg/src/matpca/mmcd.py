"""Matrix minimum covariance determinant (MMCD) estimation.

The raw estimator searches for the h-subset whose matrix normal ML fit has
the smallest ``log|sigma_r (x) sigma_c|``; the search follows the Fast-MCD
template (random elemental starts, two short concentration steps each,
then full concentration of the best few). A single reweighting pass then
refits on every observation whose raw distance is below a chi-square
cutoff.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from typing import NamedTuple, Optional

import numpy as np

from .errors import ArgumentError, EstimationFailure, InsufficientDataError, NumericalDomainError
from .matnorm import (
    MatNormalParams,
    MatrixDataset,
    distances_t,
    flipflop_fit,
    min_effective_count,
    mmd2_all,
)
from .robust_stats import chi2_quantile, consistency_factor

log = logging.getLogger(__name__)

#: relative slack allowed before a C-step objective increase counts as a violation
MONOTONE_RTOL = 1e-9

#: redraws allowed for an elemental start whose fit is singular
START_RETRIES = 10

#: convergence threshold of the full-data fit used to standardize the search
STANDARDIZE_TOL = 1e-13


def shape_index(d_c: int, d_r: int) -> int:
    """``floor(d_c/d_r + d_r/d_c)``."""
    return (d_c * d_c + d_r * d_r) // (d_c * d_r)


def default_h(n: int, d_c: int, d_r: int) -> int:
    return (n + shape_index(d_c, d_r) + 2) // 2


def max_breakdown(n: int, d_c: int, d_r: int) -> Fraction:
    """Maximal breakdown point ``floor((n - d)/2) / n`` at the default h."""
    return Fraction((n - shape_index(d_c, d_r)) // 2, n)


@dataclass(frozen=True)
class MmcdConfig:
    """Search settings. ``None`` fields are filled in by :meth:`resolve`."""

    h: Optional[int] = None
    n_starts: int = 500
    n_keep: int = 10
    initial_subset_size: Optional[int] = None
    cstep_inner_flipflop_iters: int = 2
    final_flipflop_iters: int = 100
    cstep_max: int = 100
    tol: float = 1e-8
    seed: int = 0
    # raise instead of counting when a C-step increases the objective
    check_monotone: bool = False

    def resolve(self, n: int, d_c: int, d_r: int) -> "MmcdConfig":
        d = shape_index(d_c, d_r)
        h = default_h(n, d_c, d_r) if self.h is None else int(self.h)
        k = d + 2 if self.initial_subset_size is None else int(self.initial_subset_size)
        if not (2 * h > n and h <= n):
            raise ArgumentError(f"h={h} must satisfy n/2 < h <= n (n={n})")
        if h < d + 2:
            raise ArgumentError(f"h={h} is below the minimum {d + 2}")
        if self.n_starts < 1 or not 1 <= self.n_keep <= self.n_starts:
            raise ArgumentError("need 1 <= n_keep <= n_starts")
        if not min_effective_count(d_c, d_r) <= k <= n:
            raise ArgumentError(f"initial_subset_size={k} is out of range")
        if self.cstep_inner_flipflop_iters < 1 or self.final_flipflop_iters < 1:
            raise ArgumentError("flip-flop iteration counts must be positive")
        if self.cstep_max < 1 or not self.tol > 0:
            raise ArgumentError("cstep_max and tol must be positive")
        if not 0 <= self.seed < 2**64:
            raise ArgumentError("seed must be an unsigned 64-bit integer")
        return replace(self, h=h, initial_subset_size=k)


@dataclass(frozen=True)
class MmcdDiagnostics:
    valid_starts: int
    failed_starts: int
    # C-steps (stage A and concentration) whose objective rose
    cstep_violations: int
    unterminated_chains: int
    chain_lengths: tuple


@dataclass(frozen=True)
class MmcdFit:
    """Raw (and, after :func:`reweight_mmcd`, reweighted) MMCD estimates.

    ``raw_params`` carry the consistency rescale; ``raw_mle`` is the plain
    ML fit on the selected subset and ``raw_objective`` its determinant
    objective.
    """

    subset: np.ndarray
    raw_mle: MatNormalParams
    raw_params: MatNormalParams
    raw_objective: float
    raw_consistency: float
    config_echo: MmcdConfig
    diagnostics: MmcdDiagnostics
    reweighted_params: Optional[MatNormalParams] = None
    weights: Optional[np.ndarray] = None
    distances: Optional[np.ndarray] = None
    reweight_alpha: Optional[float] = None
    reweight_consistency: Optional[float] = None

    @property
    def h(self) -> int:
        return len(self.subset)

    @property
    def params(self) -> MatNormalParams:
        """Reweighted estimates when available, raw ones otherwise."""
        return self.raw_params if self.reweighted_params is None else self.reweighted_params


def mmcd_objective(params: MatNormalParams) -> float:
    """``d_c log|sigma_r| + d_r log|sigma_c|``, i.e. ``log|sigma_r (x) sigma_c|``."""
    return params.d_c * params.logdet_r + params.d_r * params.logdet_c


class CStep(NamedTuple):
    subset: np.ndarray
    params: MatNormalParams
    objective: float


def _smallest(dist: np.ndarray, h: int) -> np.ndarray:
    # stable sort: equal distances resolve to the lower index
    return np.sort(np.argsort(dist, kind="stable")[:h])


def _cstep_t(X, Xt, params, h, inner_iters, tol):
    subset = _smallest(distances_t(Xt, params), h)
    fit = flipflop_fit(X[subset], init=params, tol=tol, max_iter=inner_iters)
    return CStep(subset, fit.params, mmcd_objective(fit.params))


def c_step(data, params: MatNormalParams, h: int, inner_iters: int, tol: float = 1e-8) -> CStep:
    """One concentration step.

    Ranks all observations by their distance under ``params``, keeps the
    ``h`` closest (lower index first on ties) and runs at most
    ``inner_iters`` flip-flop sweeps on them, warm-started from ``params``.
    """
    X = data.samples if isinstance(data, MatrixDataset) else np.asarray(data, dtype=float)
    if not 0 < h <= X.shape[0]:
        raise ArgumentError(f"h={h} out of range")
    return _cstep_t(X, X.transpose(1, 0, 2), params, h, inner_iters, tol)


def _run_start(X, Xt, cfg: MmcdConfig, start: int):
    """Elemental start plus two short C-steps; returns (step, violations) or None."""
    n = X.shape[0]
    rng = np.random.default_rng([cfg.seed, start])
    for _ in range(START_RETRIES + 1):
        idx = rng.choice(n, cfg.initial_subset_size, replace=False)
        try:
            params = flipflop_fit(
                X[idx], tol=cfg.tol, max_iter=cfg.cstep_inner_flipflop_iters
            ).params
            step = None
            violations = 0
            for _ in range(2):
                new = _cstep_t(X, Xt, params, cfg.h, cfg.cstep_inner_flipflop_iters, cfg.tol)
                if step is not None:
                    violations += _check_step(cfg, step.objective, new.objective)
                step, params = new, new.params
            return step, violations
        except (NumericalDomainError, InsufficientDataError):
            continue
    return None


def _increase(prev: float, new: float) -> bool:
    return new > prev + MONOTONE_RTOL * max(1.0, abs(prev))


def _check_step(cfg: MmcdConfig, prev: float, new: float) -> int:
    if not _increase(prev, new):
        return 0
    msg = f"C-step objective rose from {prev!r} to {new!r}"
    if cfg.check_monotone:
        raise AssertionError(msg)
    log.warning(msg)
    return 1


def _concentrate(X, Xt, cfg: MmcdConfig, step: CStep):
    """Full C-steps until the subset repeats.

    Returns ``(step, n_steps, violations, terminated)``, or None when a fit
    along the chain turns singular.
    """
    violations = 0
    try:
        for k in range(1, cfg.cstep_max + 1):
            new = _cstep_t(X, Xt, step.params, cfg.h, cfg.final_flipflop_iters, cfg.tol)
            violations += _check_step(cfg, step.objective, new.objective)
            repeated = np.array_equal(new.subset, step.subset)
            step = new
            if repeated:
                return step, k, violations, True
    except NumericalDomainError as exc:
        log.warning("dropping a concentration chain: %s", exc)
        return None
    return step, cfg.cstep_max, violations, False


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _standardize(X):
    """Whiten by the full-data ML fit: ``Y_i = L_c^{-1} (X_i - M) L_r^{-T}``.

    The ML fit is affine equivariant, so after this step an affine change of
    the data only rotates ``Y``; the search below is rotation invariant (it
    starts from identity covariances), hence the selected subsets are affine
    invariant. Falls back to the raw data when the full-data fit is singular.
    """
    try:
        ref = flipflop_fit(X, tol=STANDARDIZE_TOL, max_iter=1000).params
        Wc, Wr = ref.whitener_c, ref.whitener_r
    except (NumericalDomainError, InsufficientDataError) as exc:
        log.warning("searching on unstandardized data: %s", exc)
        return X
    return np.ascontiguousarray(Wc @ (X - ref.M) @ Wr.T)


def raw_mmcd(data: MatrixDataset, config: MmcdConfig = MmcdConfig(), threads: int = 1) -> MmcdFit:
    """Raw MMCD estimate by the multi-start concentration search.

    The search runs on data standardized by the full-data ML fit, which
    makes the selected subset invariant under ``X -> A X B + C``; the
    final estimate is the ML fit of the original samples in that subset.

    Results depend only on ``(data, config)``: start ``s`` draws from a
    generator keyed by ``(seed, s)`` and candidates are reduced by objective
    with the start index as tie-break, so ``threads`` does not matter.
    """
    n, d_c, d_r = data.samples.shape
    cfg = config.resolve(n, d_c, d_r)
    X0 = data.samples
    X = _standardize(X0)
    Xt = X.transpose(1, 0, 2)

    starts = _map(lambda s: _run_start(X, Xt, cfg, s), range(cfg.n_starts), threads)
    ranked = sorted(
        (st[0].objective, s) for s, st in enumerate(starts) if st is not None
    )
    if not ranked:
        raise EstimationFailure(
            f"all {cfg.n_starts} elemental starts of size {cfg.initial_subset_size} "
            f"were singular after {START_RETRIES} redraws each"
        )
    start_violations = sum(st[1] for st in starts if st is not None)
    kept = [starts[s][0] for _, s in ranked[: cfg.n_keep]]

    chains = _map(lambda st: _concentrate(X, Xt, cfg, st), kept, threads)
    done = [(c[0].objective, i) for i, c in enumerate(chains) if c is not None]
    if not done:
        raise EstimationFailure("every concentration chain hit a singular fit")
    best_step = chains[min(done)[1]][0]
    chains = [c for c in chains if c is not None]

    try:
        mle = flipflop_fit(X0[best_step.subset], tol=cfg.tol, max_iter=1000).params
    except NumericalDomainError as exc:
        raise EstimationFailure(f"final fit on the best subset is singular: {exc}") from exc
    factor = consistency_factor(cfg.h / n, d_c * d_r)
    diag = MmcdDiagnostics(
        valid_starts=len(ranked),
        failed_starts=cfg.n_starts - len(ranked),
        cstep_violations=start_violations + sum(c[2] for c in chains),
        unterminated_chains=sum(not c[3] for c in chains),
        chain_lengths=tuple(c[1] for c in chains),
    )
    return MmcdFit(
        subset=best_step.subset,
        raw_mle=mle,
        raw_params=mle.scaled(factor),
        raw_objective=mmcd_objective(mle),
        raw_consistency=factor,
        config_echo=cfg,
        diagnostics=diag,
    )


def reweight_mmcd(data: MatrixDataset, raw: MmcdFit, alpha: float = 0.975) -> MmcdFit:
    """One reweighting pass on top of a raw fit.

    Observations with raw distance at most the ``alpha`` chi-square quantile
    (``d_c * d_r`` degrees of freedom) get weight one; the matrix normal ML
    fit on them is rescaled by the consistency factor of the kept fraction.
    ``alpha == 1`` keeps every observation.
    """
    if not 0.0 < alpha <= 1.0:
        raise ArgumentError(f"alpha must lie in (0, 1], got {alpha}")
    n, d_c, d_r = data.samples.shape
    raw_dist = mmd2_all(data, raw.raw_params)
    cutoff = np.inf if alpha == 1.0 else chi2_quantile(d_c * d_r, alpha)
    weights = (raw_dist <= cutoff).astype(float)
    kept = int(weights.sum())
    need = min_effective_count(d_c, d_r)
    if kept < need:
        raise EstimationFailure(f"reweighting kept {kept} observations, need {need}")
    cfg = raw.config_echo
    try:
        fit = flipflop_fit(data, weights=weights, init=raw.raw_mle, tol=cfg.tol, max_iter=1000)
    except NumericalDomainError as exc:
        raise EstimationFailure(f"reweighted fit is singular: {exc}") from exc
    frac = kept / n
    factor = consistency_factor(frac, d_c * d_r)
    params = fit.params.scaled(factor)
    return replace(
        raw,
        reweighted_params=params,
        weights=weights,
        distances=mmd2_all(data, params),
        reweight_alpha=alpha,
        reweight_consistency=factor,
    )


def fit_mmcd(data: MatrixDataset, config: MmcdConfig = MmcdConfig(), alpha: float = 0.975, threads: int = 1) -> MmcdFit:
    """Raw search followed by the reweighting pass."""
    return reweight_mmcd(data, raw_mmcd(data, config, threads=threads), alpha)


def config_to_dict(cfg: MmcdConfig) -> dict:
    return asdict(cfg)
