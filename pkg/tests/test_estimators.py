import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import random_hset
from mrflow.estimators import (EggerRegressor, IVWRegressor, MrEstimate, MVMRRegressor,
                               WeightedMedianRegressor, egger, ivw, run_methods, wald_ratio,
                               weighted_median, weighted_median_point)
from mrflow.exceptions import CollinearExposuresError, InsufficientInstrumentsError, MRError
from mrflow.harmonize import HarmonizedSet, Instrument
from oracles import (egger_normal_equations, ivw_normal_equations, weighted_median_scan, wls)

FIX_BX = np.array([0.1, 0.2, 0.3, 0.15])
FIX_BY = np.array([0.05, 0.12, 0.14, 0.09])
FIX_SY = np.array([0.01, 0.02, 0.01, 0.015])


def hset(bx, by, sy, sx=None):
    sx = np.full(len(bx), 0.001) if sx is None else sx
    return HarmonizedSet.from_arrays(bx, sx, by, sy)


# Wald ratio

def test_wald_examples():
    e = wald_ratio(Instrument("rs1", "A", "G", 0.10, 0.01, 0.05, 0.01))
    assert e.beta == pytest.approx(0.5, rel=1e-15) and e.se == pytest.approx(0.1, rel=1e-15)
    assert wald_ratio(Instrument("rs1", "A", "G", 0.3, 0.01, 0.0, 0.01)).beta == 0.0
    with pytest.raises(MRError, match="undefined ratio"):
        wald_ratio(Instrument("rs1", "A", "G", 0.0, 0.01, 0.05, 0.01))


@settings(max_examples=200, deadline=None)
@given(st.floats(0.001, 1) | st.floats(-1, -0.001), st.floats(-1, 1), st.floats(1e-4, 0.5),
       st.floats(1e-4, 0.5))
def test_second_order_se_never_smaller(bx, by, sx, sy):
    inst = Instrument("rs", "A", "G", bx, sx, by, sy)
    oracle = math.sqrt(sy**2 / bx**2 + by**2 * sx**2 / bx**4)
    second = wald_ratio(inst, second_order=True).se
    assert second == pytest.approx(oracle, rel=1e-12)
    assert second >= wald_ratio(inst).se


# IVW

def test_ivw_single_equals_wald():
    inst = Instrument("rs1", "A", "G", 0.2, 0.01, 0.07, 0.02)
    e = ivw(HarmonizedSet([inst]))
    w = wald_ratio(inst)
    assert (e.beta, e.se, e.pvalue) == pytest.approx((w.beta, w.se, w.pvalue), rel=1e-14)


def test_ivw_proportional_fixture():
    m = IVWRegressor().fit([0.1, 0.2, 0.3], [0.05, 0.10, 0.15], [0.01] * 3)
    assert m.coef_[0] == pytest.approx(0.5, rel=1e-15)
    assert m.q_ == pytest.approx(0.0, abs=1e-24)


def test_ivw_frozen_oracle_value():
    # values produced by the normal-equations oracle
    e = ivw(hset(FIX_BX, FIX_BY, FIX_SY))
    assert e.beta == pytest.approx(0.49166666666666664, rel=1e-12)
    assert e.se == pytest.approx(0.02886751345948129, rel=1e-12)
    assert e.method == "ivw_random"


def test_ivw_matches_oracle_on_random_sets(rng):
    for _ in range(25):
        hs = random_hset(rng, 20)
        _, bx, _, by, sy = hs.arrays()
        for mode in ("fixed", "random"):
            b, s = ivw_normal_equations(bx, by, sy, random=(mode == "random"))
            e = ivw(hs, mode)
            assert e.beta == pytest.approx(b, rel=1e-10)
            assert e.se == pytest.approx(s, rel=1e-10)


def test_ivw_errors():
    with pytest.raises(InsufficientInstrumentsError):
        ivw(HarmonizedSet([]))
    with pytest.raises(MRError):
        IVWRegressor(mode="bogus").fit([0.1], [0.1], [0.1])


# MR-Egger

def test_egger_noiseless_recovery():
    bx = np.array([0.05, 0.1, 0.15, 0.2, 0.3])
    m = EggerRegressor().fit(bx, 0.02 + 0.5 * bx, np.full(5, 0.01))
    assert m.intercept_ == pytest.approx(0.02, abs=1e-12)
    assert m.coef_[0] == pytest.approx(0.5, abs=1e-12)


def test_egger_frozen_oracle_value():
    slope, icpt = egger(hset(np.array([0.1, -0.2, 0.3, 0.15]), np.array([0.05, -0.12, 0.14, 0.09]),
                             FIX_SY))
    assert icpt.beta == pytest.approx(0.012709359605911286, rel=1e-10)
    assert slope.beta == pytest.approx(0.436945812807882, rel=1e-10)
    assert icpt.se == pytest.approx(0.015151927824208428, rel=1e-10)
    assert slope.se == pytest.approx(0.0717979239367532, rel=1e-10)
    assert icpt.method == "egger_intercept" and 0 < icpt.pvalue <= 1


def test_egger_matches_oracle_on_random_sets(rng):
    for _ in range(25):
        hs = random_hset(rng, 15, intercept=0.01)
        _, bx, _, by, sy = hs.arrays()
        a, b, sa, sb = egger_normal_equations(bx, by, sy)
        slope, icpt = egger(hs)
        assert (icpt.beta, slope.beta) == pytest.approx((a, b), rel=1e-10)
        assert (icpt.se, slope.se) == pytest.approx((sa, sb), rel=1e-10)


def test_egger_zero_intercept_reproduces_ivw(rng):
    for _ in range(10):
        hs = random_hset(rng, 12)
        _, bx, _, by, sy = hs.arrays()
        m = EggerRegressor(fit_intercept=False).fit(bx, by, sy)
        assert m.coef_[0] == pytest.approx(ivw(hs, "fixed").beta, rel=1e-12)
        # residual scaling floored at one is the multiplicative random-effects SE
        assert m.stderr_ == pytest.approx(ivw(hs, "random").se, rel=1e-12)


def test_egger_needs_three():
    with pytest.raises(InsufficientInstrumentsError):
        egger(hset([0.1, 0.2], [0.1, 0.2], [0.01, 0.01]))


# weighted median

def test_weighted_median_examples():
    assert weighted_median_point([0.2, 0.5, 0.9], [1, 1, 1]) == pytest.approx(0.5, abs=1e-15)
    assert weighted_median_point([0.1, 0.3, 0.35, 0.6, 2.0], [1, 2, 3, 1, 4]) == \
        pytest.approx(0.475, abs=1e-12)


def test_weighted_median_robust_to_two_outliers():
    bx = np.full(5, 0.1)
    by = np.array([0.049, 0.050, 0.051, 0.5, 0.8])
    e = weighted_median(hset(bx, by, np.full(5, 0.01)), n_boot=200)
    assert 0.49 <= e.beta <= 0.51


def test_weighted_median_matches_scan_oracle(rng):
    for _ in range(200):
        k = int(rng.integers(3, 30))
        r = rng.normal(0, 1, k)
        w = rng.uniform(0.01, 5, k)
        assert weighted_median_point(r, w) == pytest.approx(weighted_median_scan(r, w), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(1e-3, 100)), min_size=1, max_size=40))
def test_weighted_median_within_ratio_range(pairs):
    r = [p[0] for p in pairs]
    w = [p[1] for p in pairs]
    est = weighted_median_point(r, w)
    assert min(r) - 1e-9 <= est <= max(r) + 1e-9


def test_weighted_median_bootstrap_deterministic_across_threads(rng):
    hs = random_hset(rng, 25)
    a = weighted_median(hs, n_boot=1000, seed=9, n_jobs=1)
    b = weighted_median(hs, n_boot=1000, seed=9, n_jobs=4)
    c = weighted_median(hs, n_boot=1000, seed=10, n_jobs=1)
    assert a == b
    assert a.se != c.se


def test_weighted_median_validation():
    with pytest.raises(MRError, match="n_boot"):
        WeightedMedianRegressor(n_boot=50).fit([0.1, 0.2, 0.3], [0.1, 0.2, 0.3], [0.1] * 3)
    with pytest.raises(InsufficientInstrumentsError):
        weighted_median(hset([0.1, 0.2], [0.1, 0.2], [0.01, 0.01]))


# MVMR

def test_mvmr_single_exposure_equals_ivw(rng):
    hs = random_hset(rng, 20)
    _, bx, _, by, sy = hs.arrays()
    m = MVMRRegressor().fit(bx[:, None], by, sy)
    e = ivw(hs)
    assert (m.coef_[0], m.stderr_[0]) == pytest.approx((e.beta, e.se), rel=1e-12)


def test_mvmr_inert_covariate(rng):
    hs = random_hset(rng, 20)
    _, bx, _, by, sy = hs.arrays()
    w = 1 / sy**2
    z = rng.normal(0, 0.1, 20)
    z -= bx * np.sum(w * bx * z) / np.sum(w * bx * bx)  # weighted-orthogonal to bx
    m = MVMRRegressor(mode="fixed").fit(np.column_stack([bx, z]), by, sy)
    assert m.coef_[0] == pytest.approx(ivw(hs, "fixed").beta, rel=1e-10)


def test_mvmr_zero_covariate_is_collinear(rng):
    hs = random_hset(rng, 20)
    _, bx, _, by, sy = hs.arrays()
    with pytest.raises(CollinearExposuresError, match="collinear exposures"):
        MVMRRegressor().fit(np.column_stack([bx, np.zeros(20)]), by, sy)
    with pytest.raises(CollinearExposuresError):
        MVMRRegressor().fit(np.column_stack([bx, 2 * bx]), by, sy)


def test_mvmr_matches_oracle(rng):
    for _ in range(20):
        n, k = 30, int(rng.integers(2, 5))
        X = rng.normal(0, 0.1, (n, k))
        sy = rng.uniform(0.01, 0.03, n)
        y = X @ rng.normal(0, 1, k) + sy * rng.standard_normal(n)
        coef, cov, rss = wls(X, y, 1 / sy**2)
        m = MVMRRegressor(mode="fixed").fit(X, y, sy)
        assert m.coef_ == pytest.approx(coef, rel=1e-9)
        assert m.stderr_ == pytest.approx(np.sqrt(np.diag(cov)), rel=1e-9)


def test_mvmr_needs_more_snps_than_exposures():
    with pytest.raises(InsufficientInstrumentsError):
        MVMRRegressor().fit(np.eye(2), [0.1, 0.2], [0.01, 0.01])


def test_mvmr_height_adjustment_keeps_conclusion():
    rng = np.random.default_rng(21)
    n = 60
    height = rng.normal(0, 0.1, n)
    lung = 0.6 * height + rng.normal(0, 0.1, n)  # height-confounded pathway
    sy = np.full(n, 0.01)
    y = 0.5 * lung + 0.1 * height + sy * rng.standard_normal(n)
    uni = IVWRegressor().fit(lung, y, sy)
    multi = MVMRRegressor().fit(np.column_stack([lung, height]), y, sy)
    assert uni.pvalue_ < 0.05 and multi.pvalue_[0] < 0.05
    assert np.sign(uni.coef_[0]) == np.sign(multi.coef_[0])


# shared invariants

ESTIMATORS = [
    lambda hs: ivw(hs).beta,
    lambda hs: egger(hs)[0].beta,
    lambda hs: weighted_median(hs, n_boot=100).beta,
]


def test_permutation_invariance(rng):
    hs = random_hset(rng, 15)
    perm = rng.permutation(15)
    shuffled = HarmonizedSet([hs.instruments[i] for i in perm])
    for f in ESTIMATORS:
        assert f(shuffled) == pytest.approx(f(hs), rel=1e-12)


def test_orientation_invariance(rng):
    hs = random_hset(rng, 15)
    flipped = []
    for j, inst in enumerate(hs.instruments):
        if j % 2:
            inst = Instrument(inst.rsid, inst.other_allele, inst.effect_allele,
                              -inst.beta_exposure, inst.se_exposure, -inst.beta_outcome,
                              inst.se_outcome)
        flipped.append(inst)
    flipped = HarmonizedSet(flipped)
    for f in ESTIMATORS:
        assert f(flipped) == pytest.approx(f(hs), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100), st.integers(0, 1000))
def test_ivw_scale_equivariance(c, seed):
    hs = random_hset(np.random.default_rng(seed), 10)
    _, bx, sx, by, sy = hs.arrays()
    base = ivw(hs)
    scaled = ivw(HarmonizedSet.from_arrays(bx, sx, c * by, c * sy))
    assert scaled.beta == pytest.approx(c * base.beta, rel=1e-10)
    assert scaled.se == pytest.approx(c * base.se, rel=1e-10)


def test_ivw_is_weighted_mean_of_ratios(rng):
    hs = random_hset(rng, 20)
    _, bx, _, by, sy = hs.arrays()
    w = bx**2 / sy**2
    assert ivw(hs).beta == pytest.approx(np.sum(w * by / bx) / np.sum(w), rel=1e-12)


# MrEstimate and estimator API

@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(1e-4, 3))
def test_mr_estimate_odds_ratio(beta, se):
    e = MrEstimate("ivw_random", beta, se, 0.5, 3)
    assert e.or_point == math.exp(beta)
    assert e.or_ci_low < e.or_point < e.or_ci_high
    assert MrEstimate.from_dict(e.to_dict()) == e


def test_unknown_method_tag():
    with pytest.raises(MRError):
        MrEstimate("mode_based", 0.1, 0.1, 0.5, 3)


def test_sklearn_api(rng):
    hs = random_hset(rng, 20)
    _, bx, sx, by, sy = hs.arrays()
    for est in (IVWRegressor(mode="fixed"), EggerRegressor(), WeightedMedianRegressor(n_boot=200),
                MVMRRegressor()):
        params = est.get_params()
        twin = clone(est)
        assert twin.get_params() == params
        with pytest.raises(NotFittedError):
            twin.predict(bx)
        X = bx if not isinstance(est, MVMRRegressor) else bx[:, None]
        fitted = est.fit(X, by, sy, se_x=sx) if isinstance(est, WeightedMedianRegressor) \
            else est.fit(X, by, sy)
        assert fitted is est
        assert est.predict(X).shape == (20,)
    m = IVWRegressor().set_params(mode="fixed")
    assert m.mode == "fixed"


def test_input_validation():
    with pytest.raises(ValueError):
        IVWRegressor().fit([0.1, np.nan], [0.1, 0.2], [0.1, 0.1])
    with pytest.raises(ValueError):
        IVWRegressor().fit([0.1, 0.2], [0.1], [0.1, 0.1])
    with pytest.raises(MRError, match="positive"):
        IVWRegressor().fit([0.1, 0.2], [0.1, 0.2], [0.1, 0.0])


def test_run_methods_skips_underpowered():
    ests, skipped = run_methods(hset([0.1, 0.2], [0.05, 0.1], [0.01, 0.01]))
    assert [e.method for e in ests] == ["ivw_random"]
    assert set(skipped) == {"egger", "weighted_median"}
    with pytest.raises(MRError, match="unknown method"):
        run_methods(hset([0.1, 0.2], [0.05, 0.1], [0.01, 0.01]), ["mode"])
