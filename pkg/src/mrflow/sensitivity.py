"""Heterogeneity and pleiotropy diagnostics."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import chi2

from ._rng import run_blocks
from .estimators import MrEstimate, egger, ivw
from .exceptions import InsufficientInstrumentsError, MRError


@dataclass(frozen=True)
class QResult:
    q: float
    df: int
    pvalue: float

    def to_dict(self):
        return {"q": self.q, "df": self.df, "pvalue": self.pvalue}


def chi2_upper_tail(q, df):
    return float(chi2.sf(q, df))


def cochran_q(hset):
    """Cochran's Q of the per-SNP ratio estimates about the IVW estimate."""
    _, bx, _, by, sy = hset.arrays()
    k = len(bx)
    if k < 2:
        raise InsufficientInstrumentsError(f"Cochran's Q requires at least 2 instruments, got {k}")
    w = (bx / sy) ** 2
    ratios = by / bx
    beta = float(np.sum(w * ratios) / np.sum(w))
    q = float(np.sum(w * (ratios - beta) ** 2))
    q = max(q, 0.0)
    return QResult(q=q, df=k - 1, pvalue=chi2_upper_tail(q, k - 1))


def egger_intercept_test(hset):
    """Egger intercept estimate; its p-value is the directional pleiotropy test."""
    return egger(hset)[1]


def leave_one_out(hset, mode="random"):
    """IVW recomputed with each kept instrument excluded in turn."""
    kept = hset.kept
    if len(kept) < 3:
        raise InsufficientInstrumentsError(f"leave-one-out requires at least 3 instruments, "
                                           f"got {len(kept)}")
    rsids = [i.rsid for i in kept]
    return [(rsid, ivw(hset.subset(rsids[:j] + rsids[j + 1:]), mode))
            for j, rsid in enumerate(rsids)]


@dataclass
class PressoReport:
    global_rss_observed: float
    global_pvalue: float
    per_snp: list  # (rsid, uncorrected outlier p-value)
    outliers: list
    beta_before: float
    beta_after: Optional[float]
    distortion_pvalue: Optional[float]
    n_sim: int
    seed: int
    outlier_alpha: float = 0.05
    distortion_bias: Optional[float] = None
    n_distortion: int = 0
    estimate_before: Optional[MrEstimate] = None
    estimate_after: Optional[MrEstimate] = None
    notes: list = field(default_factory=list)

    @property
    def distortion_significant(self):
        return self.distortion_pvalue is not None and self.distortion_pvalue < self.outlier_alpha

    def to_dict(self):
        return {
            "global_rss_observed": self.global_rss_observed,
            "global_pvalue": self.global_pvalue,
            "per_snp": [{"rsid": r, "outlier_pvalue": p} for r, p in self.per_snp],
            "outliers": list(self.outliers),
            "beta_before": self.beta_before,
            "beta_after": self.beta_after,
            "distortion_pvalue": self.distortion_pvalue,
            "distortion_bias": self.distortion_bias,
            "n_sim": self.n_sim,
            "n_distortion": self.n_distortion,
            "seed": self.seed,
            "outlier_alpha": self.outlier_alpha,
            "estimate_before": self.estimate_before.to_dict() if self.estimate_before else None,
            "estimate_after": self.estimate_after.to_dict() if self.estimate_after else None,
            "notes": list(self.notes),
        }


def _loo_slopes(x, y, w):
    """Leave-one-out IVW slopes along the last axis."""
    sxy = np.sum(w * x * y, axis=-1, keepdims=True)
    sxx = np.sum(w * x * x, axis=-1, keepdims=True)
    return (sxy - w * x * y) / (sxx - w * x * x)


def _ivw_slope(x, y, w):
    return np.sum(w * x * y, axis=-1) / np.sum(w * x * x, axis=-1)


def _empirical_p(n_exceed, n_sim):
    return (n_exceed + 1.0) / (n_sim + 1.0)


def presso(hset, n_sim=5000, outlier_alpha=0.05, seed=0, n_distortion=1000, n_jobs=1):
    """Pleiotropy residual-sum and outlier test.

    Global test: leave-one-out IVW residuals give an observed weighted RSS,
    compared with RSS values from ``n_sim`` datasets simulated under the
    leave-one-out fits. Outlier test: each SNP's squared residual against the
    simulated squared residuals for that SNP, Bonferroni-corrected over the
    ``k`` instruments. Distortion test (only when outliers are found): the
    relative change in the IVW estimate on removing the outliers, compared
    with the change on removing equally many non-outlier instruments at
    random.

    Empirical p-values use ``(count + 1) / (n + 1)``.
    """
    rsids, bx, sx, by, sy = hset.arrays()
    k = len(rsids)
    if k < 4:
        raise InsufficientInstrumentsError(f"MR-PRESSO requires at least 4 instruments, got {k}")
    if n_sim < 1000:
        raise MRError(f"n_sim must be >= 1000, got {n_sim}")
    if 1.0 / (n_sim + 1) >= outlier_alpha / k:
        raise MRError(f"n_sim={n_sim} cannot resolve outlier p-values below "
                      f"{outlier_alpha}/{k}; increase n_sim")
    sign = np.where(bx < 0, -1.0, 1.0)
    x, y = bx * sign, by * sign
    w = 1.0 / sy**2

    loo = _loo_slopes(x, y, w)
    resid = y - loo * x
    rss_obs = float(np.sum(w * resid**2))

    def simulate(rng, n):
        xs = x + rng.standard_normal((n, k)) * sx
        ys = loo * x + rng.standard_normal((n, k)) * sy
        rss = np.sum(w * (ys - _loo_slopes(xs, ys, w) * xs) ** 2, axis=1)
        snp = (ys - loo * xs) ** 2
        return np.column_stack([rss, snp])

    sims = run_blocks(simulate, n_sim, seed, n_jobs=n_jobs, stream=2)
    rss_sim, snp_sim = sims[:, 0], sims[:, 1:]
    global_p = _empirical_p(np.sum(rss_sim >= rss_obs), n_sim)
    snp_p = _empirical_p(np.sum(snp_sim >= resid**2, axis=0), n_sim)
    outlier_mask = snp_p * k < outlier_alpha
    outliers = [r for r, m in zip(rsids, outlier_mask) if m]

    est_before = ivw(hset)
    report = PressoReport(
        global_rss_observed=rss_obs, global_pvalue=float(global_p),
        per_snp=list(zip(rsids, (float(p) for p in snp_p))), outliers=outliers,
        beta_before=est_before.beta, beta_after=None, distortion_pvalue=None,
        n_sim=int(n_sim), seed=int(seed), outlier_alpha=outlier_alpha,
        estimate_before=est_before,
    )
    if not outliers:
        return report
    n_out = len(outliers)
    if k - 2 * n_out < 1:
        report.notes.append("too few non-outlier instruments for the distortion null")
        # keep invariant: distortion p present iff outliers nonempty
        report.distortion_pvalue = 1.0
        return report

    clean = hset.subset([r for r, m in zip(rsids, outlier_mask) if not m])
    est_after = ivw(clean)
    beta_all = float(_ivw_slope(x, y, w))
    beta_clean = float(_ivw_slope(x[~outlier_mask], y[~outlier_mask], w[~outlier_mask]))
    bias_obs = (beta_all - beta_clean) / abs(beta_clean)

    valid = np.flatnonzero(~outlier_mask)

    def null_bias(rng, n):
        # drop n_out random non-outlier instruments, keeping the outliers in
        drop = valid[np.argsort(rng.random((n, len(valid))), axis=1)[:, :n_out]]
        keep = np.ones((n, k), dtype=bool)
        np.put_along_axis(keep, drop, False, axis=1)
        b = np.sum(keep * w * x * y, axis=1) / np.sum(keep * w * x * x, axis=1)
        return (beta_all - b) / np.abs(b)

    null = run_blocks(null_bias, n_distortion, seed, n_jobs=n_jobs, stream=3)
    report.beta_after = est_after.beta
    report.estimate_after = est_after
    report.distortion_bias = float(bias_obs)
    report.n_distortion = int(n_distortion)
    report.distortion_pvalue = float(_empirical_p(np.sum(np.abs(null) >= abs(bias_obs)),
                                                  n_distortion))
    return report
