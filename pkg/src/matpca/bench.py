"""Monte-Carlo benchmark of covariance recovery under contamination.

Each (kind, situation, proportion, replication) draws a fresh sample from
the population, contaminates it and fits every requested method. Seeds are
derived by hashing the master seed with the cell coordinates, so cells can
run in any order or in parallel without changing results.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .datagen import ContaminationSpec, build_population, contaminate, relative_difference, sample_matrix_normal
from .errors import EstimationFailure, InsufficientDataError, NumericalDomainError
from .hrfpca import whitened_scores
from .matnorm import flipflop_fit
from .mmcd import MmcdConfig, raw_mmcd, reweight_mmcd

BENCH_METHODS = ("hrfpca", "fpca")
CSV_HEADER = ("kind", "sit", "p", "method", "mean_reldiff", "sd_reldiff", "reps", "seed", "note")


def hash64(*parts) -> int:
    """Unsigned 64-bit hash of the ``repr`` of ``parts``."""
    key = "|".join(repr(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class RepResult:
    kind: str
    sit: int
    p: float
    rep: int
    seed: int
    reldiff: dict
    errors: dict
    cstep_violations: int = 0
    unterminated_chains: int = 0


@dataclass
class BenchResult:
    rows: list
    reps: list = field(default_factory=list)


def _run_rep(population, kind, sit, p, rep, master, methods, raw, config, mode):
    seed = hash64(master, population, kind, sit, p, rep)
    truth = build_population(population)
    data = sample_matrix_normal(truth, seed)
    if p > 0:
        data, _ = contaminate(data, truth, ContaminationSpec.situation(kind, p, sit, seed), mode=mode)
    out, errs, viol, open_chains = {}, {}, 0, 0
    if "hrfpca" in methods:
        try:
            rawfit = raw_mmcd(data, replace(config, seed=seed))
            viol = rawfit.diagnostics.cstep_violations
            open_chains = rawfit.diagnostics.unterminated_chains
            if raw:
                out["hrfpca_raw"] = relative_difference(truth, rawfit.raw_params)
            out["hrfpca"] = relative_difference(truth, reweight_mmcd(data, rawfit).params)
        except (EstimationFailure, NumericalDomainError, InsufficientDataError, AssertionError) as exc:
            errs["hrfpca"] = f"{type(exc).__name__}: {exc}"
            if isinstance(exc, AssertionError):
                viol += 1
    if "fpca" in methods:
        try:
            out["fpca"] = relative_difference(truth, flipflop_fit(data).params)
        except (NumericalDomainError, InsufficientDataError) as exc:
            errs["fpca"] = f"{type(exc).__name__}: {exc}"
    return RepResult(kind, sit, p, rep, seed, out, errs, viol, open_chains)


def run_bench(
    population: str = "data1",
    kinds: Sequence[str] = ("PC", "OC", "PC_OC"),
    sits: Sequence[int] = (1, 2, 3, 4),
    props: Sequence[float] = (0.1, 0.3, 0.4, 0.49),
    reps: int = 50,
    methods: Sequence[str] = BENCH_METHODS,
    seed: int = 0,
    threads: int = 1,
    raw: bool = False,
    config: MmcdConfig = MmcdConfig(),
    mode: str = "additive",
) -> BenchResult:
    """Mean and standard deviation of the relative difference per cell and method.

    ``raw`` adds an ``hrfpca_raw`` method reporting the raw MMCD estimate.
    A replication whose fit fails contributes NaN; the cell mean is then
    NaN and the note column says how many replications failed and why.
    """
    build_population(population)
    tasks = [
        (kind, sit, float(p), rep)
        for kind in kinds
        for sit in sits
        for p in props
        for rep in range(reps)
    ]

    def work(t):
        return _run_rep(population, *t, seed, tuple(methods), raw, config, mode)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]

    names = []
    for m in methods:
        names.append(m)
        if m == "hrfpca" and raw:
            names.append("hrfpca_raw")
    rows = []
    for kind in kinds:
        for sit in sits:
            for p in props:
                cell = [r for r in results if (r.kind, r.sit, r.p) == (kind, sit, float(p))]
                for m in names:
                    base = "hrfpca" if m == "hrfpca_raw" else m
                    vals = np.array([r.reldiff.get(m, np.nan) for r in cell], dtype=float)
                    failed = [r.errors[base] for r in cell if base in r.errors]
                    note = ""
                    if failed:
                        note = f"{len(failed)}/{len(cell)} reps failed; first: {failed[0]}"
                    mean = float(vals.mean()) if vals.size else math.nan
                    sd = float(vals.std(ddof=1)) if vals.size > 1 else math.nan
                    rows.append((kind, sit, float(p), m, mean, sd, len(cell), seed, note))
    return BenchResult(rows, results)


def nn_error_rate(model, train, train_labels, test, test_labels, center: bool = True) -> float:
    """Error rate of the 1-nearest-neighbour rule on whitened scores."""
    ztr = np.stack([whitened_scores(model, X, center).ravel() for X in train.samples])
    zts = np.stack([whitened_scores(model, X, center).ravel() for X in test.samples])
    d2 = ((zts[:, None, :] - ztr[None, :, :]) ** 2).sum(axis=2)
    pred = np.asarray(train_labels)[np.argmin(d2, axis=1)]
    return float(np.mean(pred != np.asarray(test_labels)))
