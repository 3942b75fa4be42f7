"""Robust factored PCA for matrix-valued data.

The main entry points are :func:`matpca.hrfpca.fit` (robust or plain
factored PCA), the MMCD estimator in :mod:`matpca.mmcd` and the outlier
diagnostics in :mod:`matpca.hrfpca`.
"""
from .errors import (
    ArgumentError,
    CapacityError,
    EstimationFailure,
    InsufficientDataError,
    MatpcaError,
    NumericalDomainError,
    ShapeError,
)
from .matnorm import MatNormalParams, MatrixDataset, flipflop_fit, mmd2, mmd2_all
from .mmcd import MmcdConfig, fit_mmcd, raw_mmcd, reweight_mmcd
from .hrfpca import HrfpcaModel, classify_soda, detect_outliers, fit, shapley_cellwise

__version__ = "0.1.0"
