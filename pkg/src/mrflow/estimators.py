"""Causal effect estimators for harmonized summary statistics.

Each method is available twice: as a scikit-learn style regressor operating
on aligned arrays (exposure associations as ``X``, outcome associations as
``y``) and as a function taking a :class:`~mrflow.harmonize.HarmonizedSet`
and returning an :class:`MrEstimate`.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._rng import run_blocks
from ._validation import check_summary_arrays
from .exceptions import CollinearExposuresError, InsufficientInstrumentsError, MRError

Z95 = 1.959964
METHODS = ("wald", "ivw_fixed", "ivw_random", "egger", "egger_intercept",
           "weighted_median", "mvmr")
_TINY = np.nextafter(0.0, 1.0)


def normal_pvalue(beta, se):
    """Two-sided normal p-value of ``beta / se``."""
    p = 2.0 * norm.sf(abs(beta / se))
    return float(max(p, _TINY))


@dataclass(frozen=True)
class MrEstimate:
    """One method's causal estimate on the log-odds (or SD) scale."""

    method: str
    beta: float
    se: float
    pvalue: float
    n_snps: int
    exposure_id: str = "exposure"
    outcome_id: str = "outcome"

    def __post_init__(self):
        if self.method not in METHODS:
            raise MRError(f"unknown method tag {self.method!r}")

    @property
    def or_point(self):
        return math.exp(self.beta)

    @property
    def or_ci_low(self):
        return math.exp(self.beta - Z95 * self.se)

    @property
    def or_ci_high(self):
        return math.exp(self.beta + Z95 * self.se)

    @property
    def ci_low(self):
        return self.beta - Z95 * self.se

    @property
    def ci_high(self):
        return self.beta + Z95 * self.se

    def to_dict(self):
        d = asdict(self)
        d.update(or_point=self.or_point, or_ci_low=self.or_ci_low, or_ci_high=self.or_ci_high)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(method=d["method"], beta=float(d["beta"]), se=float(d["se"]),
                   pvalue=float(d["pvalue"]), n_snps=int(d["n_snps"]),
                   exposure_id=d.get("exposure_id", "exposure"),
                   outcome_id=d.get("outcome_id", "outcome"))


def _wls(X, y, w):
    """Weighted least squares; returns (coef, unscaled covariance, weighted RSS)."""
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    yw = y * sw
    coef, _, rank, _ = np.linalg.lstsq(Xw, yw, rcond=None)
    if rank < X.shape[1]:
        raise CollinearExposuresError("collinear exposures")
    cov = np.linalg.inv(Xw.T @ Xw)
    resid = yw - Xw @ coef
    return coef, cov, float(resid @ resid)


class _SummaryRegressor(RegressorMixin, BaseEstimator):
    """Shared predict/metadata handling for the summary-data regressors."""

    def predict(self, X):
        """Predicted outcome associations ``X @ coef_ (+ intercept_)``."""
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        X = check_array(X)
        return X @ np.atleast_1d(self.coef_) + getattr(self, "intercept_", 0.0)

    def _ids(self, exposure_id, outcome_id):
        return dict(exposure_id=exposure_id or "exposure", outcome_id=outcome_id or "outcome")


class IVWRegressor(_SummaryRegressor):
    """Inverse-variance weighted estimate (weighted regression through the origin).

    Parameters
    ----------
    mode : {"random", "fixed"}, default="random"
        ``"random"`` inflates the standard error by ``sqrt(Q / (k - 1))``
        when that exceeds one (multiplicative random effects).

    Attributes
    ----------
    coef_ : ndarray of shape (1,)
    stderr_ : float
    pvalue_ : float
    q_ : float
        Cochran's Q about the fitted slope.
    estimate_ : MrEstimate
    """

    def __init__(self, mode="random"):
        self.mode = mode

    def fit(self, X, y, se_y, se_x=None, exposure_id=None, outcome_id=None):
        if self.mode not in ("random", "fixed"):
            raise MRError(f"mode must be 'random' or 'fixed', got {self.mode!r}")
        X, y, se_y, _ = check_summary_arrays(X, y, se_y, se_x, min_snps=1, method="IVW")
        if X.shape[1] != 1:
            raise MRError("IVW takes a single exposure; use MVMRRegressor")
        x = X[:, 0]
        w = 1.0 / se_y**2
        sxx = float(np.sum(w * x * x))
        if sxx == 0:
            raise MRError("all exposure associations are zero")
        beta = float(np.sum(w * x * y)) / sxx
        se = 1.0 / math.sqrt(sxx)
        k = len(x)
        q = float(np.sum(w * (y - beta * x) ** 2))
        if self.mode == "random" and k > 1:
            se *= max(1.0, math.sqrt(q / (k - 1)))
        self.coef_ = np.array([beta])
        self.intercept_ = 0.0
        self.stderr_ = se
        self.pvalue_ = normal_pvalue(beta, se)
        self.q_ = q
        self.n_snps_ = k
        self.estimate_ = MrEstimate(f"ivw_{self.mode}", beta, se, self.pvalue_, k,
                                    **self._ids(exposure_id, outcome_id))
        return self


class EggerRegressor(_SummaryRegressor):
    """MR-Egger regression.

    Instruments are first re-oriented so every exposure association is
    non-negative, then outcome associations are regressed on exposure
    associations with weights ``1 / se_y**2``. Standard errors are scaled by
    the residual standard error when it exceeds one.

    Parameters
    ----------
    fit_intercept : bool, default=True
        With ``False`` the fit is the through-origin (IVW) regression.
    """

    def __init__(self, fit_intercept=True):
        self.fit_intercept = fit_intercept

    def fit(self, X, y, se_y, se_x=None, exposure_id=None, outcome_id=None):
        min_k = 3 if self.fit_intercept else 1
        X, y, se_y, _ = check_summary_arrays(X, y, se_y, se_x, min_snps=min_k, method="MR-Egger")
        if X.shape[1] != 1:
            raise MRError("MR-Egger takes a single exposure")
        sign = np.where(X[:, 0] < 0, -1.0, 1.0)
        x = X[:, 0] * sign
        y = y * sign
        w = 1.0 / se_y**2
        k = len(x)
        design = np.column_stack([np.ones(k), x]) if self.fit_intercept else x[:, None]
        coef, cov, rss = _wls(design, y, w)
        df = k - design.shape[1]
        sigma = math.sqrt(rss / df) if df > 0 else 1.0
        se = np.sqrt(np.diag(cov)) * max(1.0, sigma)
        ids = self._ids(exposure_id, outcome_id)
        if self.fit_intercept:
            self.intercept_, slope = float(coef[0]), float(coef[1])
            self.intercept_stderr_, self.stderr_ = float(se[0]), float(se[1])
            self.intercept_pvalue_ = normal_pvalue(self.intercept_, self.intercept_stderr_)
            self.intercept_estimate_ = MrEstimate("egger_intercept", self.intercept_,
                                                  self.intercept_stderr_,
                                                  self.intercept_pvalue_, k, **ids)
        else:
            self.intercept_ = 0.0
            slope, self.stderr_ = float(coef[0]), float(se[0])
        self.coef_ = np.array([slope])
        self.pvalue_ = normal_pvalue(slope, self.stderr_)
        self.sigma_ = sigma
        self.n_snps_ = k
        self.estimate_ = MrEstimate("egger", slope, self.stderr_, self.pvalue_, k, **ids)
        return self

    def predict(self, X):
        # predictions are on the re-oriented scale (non-negative exposure association)
        X = np.abs(np.asarray(X, dtype=float))
        return super().predict(X)


def weighted_median_point(ratios, weights):
    """Weighted median of ratio estimates by linear interpolation.

    Ratios are sorted, weights normalized, and the estimate is interpolated at
    0.5 on the centred cumulative weights ``cumsum(w) - w / 2``.
    """
    return float(_weighted_median_rows(np.atleast_2d(ratios), np.asarray(weights, float))[0])


def _weighted_median_rows(R, w):
    order = np.argsort(R, axis=1, kind="stable")
    Rs = np.take_along_axis(R, order, axis=1)
    ws = w[order]
    ws = ws / ws.sum(axis=1, keepdims=True)
    s = np.cumsum(ws, axis=1) - ws / 2.0
    k = R.shape[1]
    idx = (s < 0.5).sum(axis=1)
    lo = np.clip(idx - 1, 0, k - 1)
    hi = np.clip(idx, 0, k - 1)
    rows = np.arange(R.shape[0])
    s_lo, s_hi = s[rows, lo], s[rows, hi]
    r_lo, r_hi = Rs[rows, lo], Rs[rows, hi]
    denom = np.where(hi > lo, s_hi - s_lo, 1.0)
    t = np.where(hi > lo, (0.5 - s_lo) / denom, 0.0)
    out = r_lo * (1.0 - t) + r_hi * t
    out = np.where(idx == 0, Rs[:, 0], out)
    out = np.where(idx == k, Rs[:, k - 1], out)
    return out


class WeightedMedianRegressor(_SummaryRegressor):
    """Weighted median of per-SNP ratio estimates.

    Weights are ``X**2 / se_y**2``. The standard error is the standard
    deviation of estimates recomputed on ``n_boot`` parametric resamples of
    both association vectors, drawn in seeded blocks so that results do not
    depend on ``n_jobs``.
    """

    def __init__(self, n_boot=1000, seed=0, n_jobs=1):
        self.n_boot = n_boot
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, X, y, se_y, se_x=None, exposure_id=None, outcome_id=None):
        if self.n_boot < 100:
            raise MRError(f"n_boot must be >= 100, got {self.n_boot}")
        X, y, se_y, se_x = check_summary_arrays(X, y, se_y, se_x, min_snps=3,
                                                method="weighted median")
        if X.shape[1] != 1:
            raise MRError("weighted median takes a single exposure")
        x = X[:, 0]
        if np.any(x == 0):
            raise MRError("zero exposure association: undefined ratio")
        sx = np.zeros_like(x) if se_x is None else se_x[:, 0]
        ratios = y / x
        w = x**2 / se_y**2
        beta = weighted_median_point(ratios, w)

        def draw(rng, n):
            bx = x + rng.standard_normal((n, len(x))) * sx
            by = y + rng.standard_normal((n, len(x))) * se_y
            return _weighted_median_rows(by / bx, w)

        boot = run_blocks(draw, self.n_boot, self.seed, n_jobs=self.n_jobs, stream=1)
        se = float(np.std(boot, ddof=1))
        self.coef_ = np.array([beta])
        self.intercept_ = 0.0
        self.stderr_ = se
        self.pvalue_ = normal_pvalue(beta, se) if se > 0 else 1.0
        self.ratios_ = ratios
        self.n_snps_ = len(x)
        self.estimate_ = MrEstimate("weighted_median", beta, se, self.pvalue_, len(x),
                                    **self._ids(exposure_id, outcome_id))
        return self


class MVMRRegressor(_SummaryRegressor):
    """Multivariable IVW: weighted regression on several exposures, no intercept.

    Parameters
    ----------
    mode : {"random", "fixed"}, default="random"
        Residual-variance scaling of standard errors, floored at one.
    """

    def __init__(self, mode="random"):
        self.mode = mode

    def fit(self, X, y, se_y, se_x=None, exposure_ids=None, outcome_id=None):
        if self.mode not in ("random", "fixed"):
            raise MRError(f"mode must be 'random' or 'fixed', got {self.mode!r}")
        X, y, se_y, _ = check_summary_arrays(X, y, se_y, None, min_snps=1, method="MVMR")
        n, k = X.shape
        if n <= k:
            raise InsufficientInstrumentsError(f"MVMR needs more instruments ({n}) than exposures ({k})")
        w = 1.0 / se_y**2
        if np.linalg.matrix_rank(X * np.sqrt(w)[:, None]) < k:
            raise CollinearExposuresError("collinear exposures")
        coef, cov, rss = _wls(X, y, w)
        se = np.sqrt(np.diag(cov))
        if self.mode == "random":
            se = se * max(1.0, math.sqrt(rss / (n - k)))
        ids = list(exposure_ids) if exposure_ids is not None else [f"exposure{j + 1}" for j in range(k)]
        self.coef_ = coef
        self.intercept_ = 0.0
        self.stderr_ = se
        self.pvalue_ = np.array([normal_pvalue(b, s) for b, s in zip(coef, se)])
        self.n_snps_ = n
        self.estimates_ = [
            MrEstimate("mvmr", float(coef[j]), float(se[j]), float(self.pvalue_[j]), n,
                       exposure_id=ids[j], outcome_id=outcome_id or "outcome")
            for j in range(k)
        ]
        return self


# functional interface over HarmonizedSet ------------------------------------

def _kept_arrays(hset, min_k, method):
    rsids, bx, sx, by, sy = hset.arrays()
    if len(rsids) < min_k:
        raise InsufficientInstrumentsError(f"{method} requires at least {min_k} kept instruments, "
                                           f"got {len(rsids)}")
    return rsids, bx, sx, by, sy


def wald_ratio(inst, second_order=False, exposure_id="exposure", outcome_id="outcome"):
    """Ratio estimate ``beta_outcome / beta_exposure`` for one instrument."""
    if not inst.kept:
        raise MRError(f"{inst.rsid} is not a kept instrument ({inst.status})")
    bx, by = inst.beta_exposure, inst.beta_outcome
    if bx == 0:
        raise MRError("undefined ratio: zero exposure beta")
    beta = by / bx
    se = inst.se_outcome / abs(bx)
    if second_order:
        # adds the exposure-uncertainty term; never below the first-order SE
        se = math.sqrt(se**2 + (by * inst.se_exposure / bx**2) ** 2)
    return MrEstimate("wald", beta, se, normal_pvalue(beta, se), 1, exposure_id, outcome_id)


def ivw(hset, mode="random"):
    _, bx, sx, by, sy = _kept_arrays(hset, 1, "IVW")
    return IVWRegressor(mode).fit(bx, by, sy, exposure_id=hset.exposure_id,
                                  outcome_id=hset.outcome_id).estimate_


def egger(hset):
    """Returns ``(slope, intercept)`` estimates."""
    _, bx, sx, by, sy = _kept_arrays(hset, 3, "MR-Egger")
    m = EggerRegressor().fit(bx, by, sy, exposure_id=hset.exposure_id, outcome_id=hset.outcome_id)
    return m.estimate_, m.intercept_estimate_


def weighted_median(hset, n_boot=1000, seed=0, n_jobs=1):
    _, bx, sx, by, sy = _kept_arrays(hset, 3, "weighted median")
    m = WeightedMedianRegressor(n_boot=n_boot, seed=seed, n_jobs=n_jobs)
    return m.fit(bx, by, sy, se_x=sx, exposure_id=hset.exposure_id,
                 outcome_id=hset.outcome_id).estimate_


def per_snp_ratios(hset):
    """Wald ratio for every kept instrument, as ``[(rsid, MrEstimate)]``."""
    return [(i.rsid, wald_ratio(i, exposure_id=hset.exposure_id, outcome_id=hset.outcome_id))
            for i in hset.kept]


def run_methods(hset, methods=("ivw", "egger", "weighted_median"), *, n_boot=1000, seed=0,
                n_jobs=1):
    """Run the named estimators; methods needing more instruments are skipped."""
    out, skipped = [], {}
    for name in methods:
        key = name.replace("-", "_").lower()
        try:
            if key in ("ivw", "ivw_random"):
                out.append(ivw(hset, "random"))
            elif key == "ivw_fixed":
                out.append(ivw(hset, "fixed"))
            elif key == "egger":
                out.extend(egger(hset))
            elif key == "weighted_median":
                out.append(weighted_median(hset, n_boot=n_boot, seed=seed, n_jobs=n_jobs))
            else:
                raise MRError(f"unknown method {name!r}")
        except InsufficientInstrumentsError as exc:
            skipped[key] = str(exc)
    return out, skipped


@dataclass
class MultivariableSet:
    """Instruments aligned across several exposures and one outcome."""

    rsids: list
    bx: np.ndarray  # (n_snps, n_exposures)
    se_x: np.ndarray
    by: np.ndarray
    se_y: np.ndarray
    exposure_ids: list
    outcome_id: str = "outcome"
    audit: list = None


def align_multivariable(exposures, outcome, rsids, exposure_ids=None, outcome_id="outcome"):
    """Align several exposure studies to the outcome's effect allele.

    Parameters
    ----------
    exposures : list of list of SummaryRecord
    outcome : list of SummaryRecord
    rsids : iterable of str
        Candidate instruments (typically the union of per-exposure selections).

    SNPs absent from any study, palindromic, or allele-incompatible in any
    exposure are dropped and listed in ``audit``.
    """
    from .harmonize import is_palindromic, match_alleles

    lookups = [{r.rsid: r for r in recs} for recs in exposures]
    out_lookup = {r.rsid: r for r in outcome}
    exposure_ids = list(exposure_ids) if exposure_ids else [f"exposure{j + 1}" for j in range(len(exposures))]
    keep, bx, sx, by, sy, audit = [], [], [], [], [], []
    for rsid in rsids:
        y = out_lookup.get(rsid)
        if y is None or any(rsid not in lk for lk in lookups):
            audit.append((rsid, "dropped_missing", "absent from at least one study"))
            continue
        if is_palindromic(y.effect_allele, y.other_allele):
            audit.append((rsid, "dropped_palindromic", "palindromic"))
            continue
        row_b, row_s, ok = [], [], True
        for j, lk in enumerate(lookups):
            x = lk[rsid]
            how = match_alleles(y.effect_allele, y.other_allele, x.effect_allele, x.other_allele)
            if how is None:
                audit.append((rsid, "dropped_incompatible", f"alleles differ in {exposure_ids[j]}"))
                ok = False
                break
            row_b.append(-x.beta if how in ("swap", "flip_swap") else x.beta)
            row_s.append(x.se)
        if not ok:
            continue
        keep.append(rsid)
        bx.append(row_b)
        sx.append(row_s)
        by.append(y.beta)
        sy.append(y.se)
    k = len(exposures)
    return MultivariableSet(keep, np.array(bx, dtype=float).reshape(-1, k),
                            np.array(sx, dtype=float).reshape(-1, k),
                            np.array(by, dtype=float), np.array(sy, dtype=float),
                            exposure_ids, outcome_id, audit)


def mvmr(mvset, mode="random"):
    """One estimate per exposure from a multivariable IVW fit."""
    if mvset.bx.shape[1] < 1:
        raise MRError("MVMR needs at least one exposure")
    m = MVMRRegressor(mode).fit(mvset.bx, mvset.by, mvset.se_y,
                                exposure_ids=mvset.exposure_ids, outcome_id=mvset.outcome_id)
    return m.estimates_
