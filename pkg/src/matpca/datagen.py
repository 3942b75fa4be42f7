"""Synthetic matrix normal populations and outlier contamination.

Two populations are provided: ``data1`` (n=1000, 4 x 10) and ``data2``
(n=200, 10 x 8, mean all fives). Their covariance factors have prescribed
spectra whose leading eigenvectors are disjoint difference vectors
``(e_{2k-1} - e_{2k}) / sqrt(2)``.

Outlier mechanisms are a reconstruction: PC outliers put uniform scores
into the generating PC subspace only, OC outliers put uniform noise into
its orthogonal complement only, PC_OC outliers add one of each.

Two modes place these perturbations. ``replace`` substitutes the outlier
matrix for the observation, so the score/orthogonal taxonomy holds exactly
under the true subspace; with Sit-I and wide scores the PC outliers then
span only a ``q_c q_r``-dimensional affine set. ``additive`` (the default)
keeps the clean draw and adds the perturbation, so each outlier still has
full-rank noise and the shift alone is confined to the stated subspace.
``raw_uniform`` outliers always replace.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ArgumentError, ShapeError
from .matnorm import MatNormalParams, MatrixDataset

KINDS = ("PC", "OC", "PC_OC", "raw_uniform")

#: uniform ranges of the four contamination regimes
SITUATIONS = {
    1: (-100.0, 100.0),
    2: (-10000.0, 10000.0),
    3: (100.0, 110.0),
    4: (10000.0, 11000.0),
}


def linspace(a: float, b: float, m: int) -> np.ndarray:
    return np.linspace(a, b, m)


def canonical_pcs(dim: int, k: int) -> np.ndarray:
    """Columns ``u_1..u_k`` with ``+-1/sqrt(2)`` at positions ``2j, 2j+1``."""
    if not 1 <= k <= 3:
        raise ArgumentError("k must be 1, 2 or 3")
    if dim < 2 * k:
        raise ArgumentError(f"dim={dim} is too small for {k} vectors")
    U = np.zeros((dim, k))
    s = 1.0 / math.sqrt(2.0)
    for j in range(k):
        U[2 * j, j] = s
        U[2 * j + 1, j] = -s
    return U


def complete_basis(U: np.ndarray) -> np.ndarray:
    """Extend orthonormal columns to a full basis by Gram-Schmidt on ``e_1, e_2, ...``."""
    dim = U.shape[0]
    cols = [U[:, j] for j in range(U.shape[1])]
    for i in range(dim):
        if len(cols) == dim:
            break
        v = np.zeros(dim)
        v[i] = 1.0
        # two passes keep the result orthogonal to working precision
        for _ in range(2):
            for c in cols:
                v = v - (c @ v) * c
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            cols.append(v / nv)
    return np.column_stack(cols)


@dataclass(frozen=True)
class PopulationSpec:
    name: str
    n: int
    M: np.ndarray
    eig_c: np.ndarray
    lead_c: np.ndarray
    eig_r: np.ndarray
    lead_r: np.ndarray

    @property
    def d_c(self) -> int:
        return self.M.shape[0]

    @property
    def d_r(self) -> int:
        return self.M.shape[1]

    @property
    def q_c(self) -> int:
        return self.lead_c.shape[1]

    @property
    def q_r(self) -> int:
        return self.lead_r.shape[1]

    @property
    def basis_c(self) -> np.ndarray:
        return complete_basis(self.lead_c)

    @property
    def basis_r(self) -> np.ndarray:
        return complete_basis(self.lead_r)

    @property
    def sigma_c(self) -> np.ndarray:
        B = self.basis_c
        S = (B * self.eig_c) @ B.T
        return 0.5 * (S + S.T)

    @property
    def sigma_r(self) -> np.ndarray:
        B = self.basis_r
        S = (B * self.eig_r) @ B.T
        return 0.5 * (S + S.T)

    @property
    def params(self) -> MatNormalParams:
        return MatNormalParams(self.M, self.sigma_c, self.sigma_r)


def build_population(name: str) -> PopulationSpec:
    if name == "data1":
        return PopulationSpec(
            name="data1",
            n=1000,
            M=np.zeros((4, 10)),
            eig_c=np.concatenate(([5.0], linspace(0.8, 0.5, 3))),
            lead_c=canonical_pcs(4, 1),
            eig_r=np.concatenate(([4.0, 3.0, 2.0], linspace(0.5, 0.3, 7))),
            lead_r=canonical_pcs(10, 3),
        )
    if name == "data2":
        return PopulationSpec(
            name="data2",
            n=200,
            M=np.full((10, 8), 5.0),
            eig_c=np.concatenate(([5.0, 4.0, 3.0], linspace(0.8, 0.5, 7))),
            lead_c=canonical_pcs(10, 3),
            eig_r=np.concatenate(([4.0, 3.0], linspace(0.5, 0.3, 6))),
            lead_r=canonical_pcs(8, 2),
        )
    raise ArgumentError(f"unknown population {name!r}; expected data1 or data2")


def _sym_sqrt(S: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(S)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _obs_rng(seed: int, stream: int, i: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, i])


_SAMPLE_STREAM = 1
_CONTAM_STREAM = 2


def sample_matrix_normal(spec: PopulationSpec, seed: int, n: Optional[int] = None) -> MatrixDataset:
    """Draw ``X_i = M + A G_i B'`` with symmetric square roots ``A``, ``B``.

    ``G_i`` comes from a generator keyed by ``(seed, i)`` so every sample is
    reproducible on its own.
    """
    n = spec.n if n is None else n
    A = _sym_sqrt(spec.sigma_c)
    B = _sym_sqrt(spec.sigma_r)
    G = np.stack(
        [_obs_rng(seed, _SAMPLE_STREAM, i).standard_normal(spec.M.shape) for i in range(n)]
    )
    return MatrixDataset(spec.M + A @ G @ B.T)


@dataclass(frozen=True)
class ContaminationSpec:
    kind: str
    proportion: float
    range: tuple
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"unknown outlier kind {self.kind!r}")
        if not 0.0 <= self.proportion <= 0.5:
            raise ArgumentError("proportion must lie in [0, 0.5]")
        a, b = self.range
        if not a < b:
            raise ArgumentError("range must satisfy a < b")

    @classmethod
    def situation(cls, kind: str, proportion: float, sit: int, seed: int = 0):
        if sit not in SITUATIONS:
            raise ArgumentError(f"situation must be one of 1-4, got {sit}")
        return cls(kind, proportion, SITUATIONS[sit], seed)


def outlier_matrix(kind: str, truth: PopulationSpec, rng: np.random.Generator, a: float, b: float) -> np.ndarray:
    """A single outlying matrix of the requested kind."""
    Uc, Ur = truth.lead_c, truth.lead_r
    if kind == "PC":
        S = rng.uniform(a, b, size=(truth.q_c, truth.q_r))
        return truth.M + Uc @ S @ Ur.T
    if kind == "OC":
        Pc = np.eye(truth.d_c) - Uc @ Uc.T
        Pr = np.eye(truth.d_r) - Ur @ Ur.T
        N = rng.uniform(a, b, size=truth.M.shape)
        return truth.M + Pc @ N @ Pr
    if kind == "PC_OC":
        pc = outlier_matrix("PC", truth, rng, a, b)
        oc = outlier_matrix("OC", truth, rng, a, b)
        return pc + oc - truth.M
    if kind == "raw_uniform":
        return rng.uniform(a, b, size=truth.M.shape)
    raise ArgumentError(f"unknown outlier kind {kind!r}")


MODES = ("additive", "replace")


def _draw_outliers(data, truth, kinds: Sequence[str], a, b, seed, mode="additive"):
    if mode not in MODES:
        raise ArgumentError(f"mode must be one of {MODES}, got {mode!r}")
    n = data.n
    count = len(kinds)
    pick = np.random.default_rng([seed, _CONTAM_STREAM, n])
    idx = np.sort(pick.choice(n, count, replace=False))
    mats = [
        outlier_matrix(kind, truth, _obs_rng(seed, _CONTAM_STREAM, int(i)), a, b)
        for kind, i in zip(kinds, idx)
    ]
    if mode == "additive" and count:
        # keep the clean draw and add the structured perturbation on top
        mats = [data.samples[i] + (m - truth.M) if k != "raw_uniform" else m
                for k, i, m in zip(kinds, idx, mats)]
    if count:
        data = data.replace(idx, np.stack(mats))
    return data, idx


def contaminate(data: MatrixDataset, truth: PopulationSpec, spec: ContaminationSpec, mode: str = "additive"):
    """Replace ``floor(n * p)`` randomly chosen observations by outliers.

    Returns the new dataset and the sorted indices of replaced observations.
    """
    if data.shape != truth.M.shape:
        raise ShapeError("dataset and population shapes differ")
    count = int(math.floor(data.n * spec.proportion + 1e-9))
    a, b = spec.range
    return _draw_outliers(data, truth, [spec.kind] * count, a, b, spec.seed, mode)


def contaminate_mixed(data: MatrixDataset, truth: PopulationSpec, proportion: float, sit: int, seed: int = 0,
                      kinds=("PC", "OC", "PC_OC"), mode: str = "additive"):
    """Replace ``floor(n * p)`` observations by a mix of outlier kinds.

    Kinds are assigned in turn over the sorted replaced indices. Returns the
    dataset and a dict mapping each kind to its indices.
    """
    if not 0.0 <= proportion <= 0.5:
        raise ArgumentError("proportion must lie in [0, 0.5]")
    if sit not in SITUATIONS:
        raise ArgumentError(f"situation must be one of 1-4, got {sit}")
    count = int(math.floor(data.n * proportion + 1e-9))
    labels = [kinds[j % len(kinds)] for j in range(count)]
    a, b = SITUATIONS[sit]
    data, idx = _draw_outliers(data, truth, labels, a, b, seed, mode)
    groups = {k: idx[np.array([lab == k for lab in labels], dtype=bool)] for k in kinds}
    return data, groups


def relative_difference(truth, est: MatNormalParams) -> float:
    """``||S - S_hat||_F / ||S||_F`` for ``S = sigma_r (x) sigma_c``, without forming S."""
    tc, tr = (truth.sigma_c, truth.sigma_r)
    ec, er = est.sigma_c, est.sigma_r
    if tc.shape != ec.shape or tr.shape != er.shape:
        raise ShapeError("covariance shapes differ")
    nt = np.sum(tr * tr) * np.sum(tc * tc)
    ne = np.sum(er * er) * np.sum(ec * ec)
    cross = np.sum(tr * er) * np.sum(tc * ec)
    return float(math.sqrt(max(nt - 2.0 * cross + ne, 0.0) / nt))


def make_data2_o(seed: int = 0, sit: int = 3, proportion: float = 0.2):
    """Data2 with 20 % mixed PC / OC / PC_OC outliers (Sit-III by default)."""
    spec = build_population("data2")
    clean = sample_matrix_normal(spec, seed)
    data, groups = contaminate_mixed(clean, spec, proportion, sit, seed=seed)
    return spec, data, groups
