"""Input checks for summary-statistic arrays."""

import numpy as np
from sklearn.utils import check_array, check_consistent_length

from .exceptions import InsufficientInstrumentsError, MRError


def check_summary_arrays(X, y, se_y, se_x=None, *, min_snps=1, method="estimator"):
    """Validate exposure/outcome association arrays.

    Returns float64 copies: ``X`` as 2-D ``(n_snps, n_exposures)``, the other
    arrays 1-D (``se_x`` matches ``X`` when given).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n = X.shape[0]
    if n < min_snps:
        raise InsufficientInstrumentsError(
            f"{method} requires at least {min_snps} instruments, got {n}"
        )
    X = check_array(X, dtype=np.float64, ensure_min_samples=min_snps)
    y = check_array(np.asarray(y, dtype=float).reshape(-1, 1), dtype=np.float64).ravel()
    se_y = check_array(np.asarray(se_y, dtype=float).reshape(-1, 1), dtype=np.float64).ravel()
    check_consistent_length(X, y, se_y)
    if np.any(se_y <= 0):
        raise MRError("outcome standard errors must be positive")
    if se_x is not None:
        se_x = np.asarray(se_x, dtype=float)
        if se_x.ndim == 1:
            se_x = se_x.reshape(-1, 1)
        se_x = check_array(se_x, dtype=np.float64)
        if se_x.shape != X.shape:
            raise MRError(f"se_x shape {se_x.shape} does not match X shape {X.shape}")
        if np.any(se_x <= 0):
            raise MRError("exposure standard errors must be positive")
    return X, y, se_y, se_x


def check_probability(value, name, *, low_open=True, high_open=True):
    value = float(value)
    lo_ok = value > 0 if low_open else value >= 0
    hi_ok = value < 1 if high_open else value <= 1
    if not (lo_ok and hi_ok and np.isfinite(value)):
        raise MRError(f"{name} out of range: {value}")
    return value
