"""Synthetic three-study fixtures (exposure, mediator, outcome) with planted effects.

The generated studies share one SNP panel. Exposure instruments act on the
mediator through ``beta1`` and on the outcome through a direct effect chosen
so that the total effect equals ``total``; mediator instruments act on the
outcome through ``beta2`` only. A handful of extra exposure SNPs exercise the
harmonization and selection paths (palindromic, allele-incompatible, missing
from the outcome, clumped neighbour, confounder-annotated).
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .estimators import IVWRegressor
from .sumstats import COMPLEMENT, SummaryRecord, write_sumstats

NON_PALINDROMIC = (("A", "G"), ("A", "C"), ("C", "T"), ("G", "T"))
MEDIATOR_COLUMNS = {"rsid": "SNP", "chrom": "CHR", "pos": "BP", "effect_allele": "A1",
                    "other_allele": "A2", "eaf": "FRQ", "beta": "BETA", "se": "SE",
                    "pvalue": "P", "sample_size": "N"}


@dataclass
class FixtureParams:
    total: float = 1.06
    beta1: float = -0.2
    beta2: float = -0.27
    n_exposure_iv: int = 20
    n_mediator_iv: int = 40
    n_null: int = 30
    exposure_effect: tuple = (0.04, 0.08)
    mediator_effect: tuple = (0.04, 0.07)
    se_exposure: float = 0.006
    se_mediator: float = 0.006
    se_outcome: float = 0.01
    n_exposure: int = 50_000
    n_mediator: int = 80_000
    n_cases: int = 30_000
    n_controls: int = 30_000
    extras: bool = True

    @property
    def direct(self):
        return self.total - self.beta1 * self.beta2

    @property
    def proportion(self):
        return self.beta1 * self.beta2 / self.total


@dataclass
class Fixture:
    params: FixtureParams
    seed: int
    exposure: list
    mediator: list
    outcome: list
    confounders: list = field(default_factory=list)  # (rsid, trait, pvalue)
    roles: dict = field(default_factory=dict)  # rsid -> role label


def _p_two_sided(z):
    from scipy.stats import norm
    return float(max(2.0 * norm.sf(abs(z)), 1e-300))


def _positions():
    """Slots spaced more than 10 Mb apart, so distance clumping keeps them apart."""
    for pos_idx in range(14):
        for chrom in range(1, 23):
            yield str(chrom), 5_000_000 + 11_000_000 * pos_idx


def generate_fixture(seed=0, params=None):
    """Draw one fixture; all randomness comes from ``seed``."""
    p = params or FixtureParams()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2024]))
    slots = _positions()
    snps = []  # dicts with true effects

    def add(role, gx, gm_extra, chrom=None, pos=None, alleles=None):
        if chrom is None:
            chrom, pos = next(slots)
        ea, oa = alleles or NON_PALINDROMIC[rng.integers(len(NON_PALINDROMIC))]
        snps.append(dict(rsid=f"rs{100000 + len(snps)}", role=role, chrom=chrom, pos=pos,
                         ea=ea, oa=oa, eaf=float(rng.uniform(0.15, 0.85)),
                         gx=gx, gm=p.beta1 * gx + gm_extra))

    def signed(lo_hi):
        return float(rng.choice([-1.0, 1.0]) * rng.uniform(*lo_hi))

    for _ in range(p.n_exposure_iv):
        add("exposure_iv", signed(p.exposure_effect), 0.0)
    for _ in range(p.n_mediator_iv):
        add("mediator_iv", 0.0, signed(p.mediator_effect))
    for _ in range(p.n_null):
        add("null", 0.0, 0.0)
    if p.extras:
        lo_hi = (p.exposure_effect[1], p.exposure_effect[1] * 1.2)
        add("palindromic", signed(lo_hi), 0.0, alleles=("A", "T"))
        snps[-1]["eaf"] = 0.49
        add("incompatible", signed(lo_hi), 0.0)
        add("missing_in_outcome", signed(lo_hi), 0.0)
        add("confounder", signed(lo_hi), 0.0)
        lead = snps[0]
        # neighbour 1 Mb from the first instrument, removed by clumping
        add("clumped", float(np.sign(lead["gx"])) * 0.05, 0.0, chrom=lead["chrom"],
            pos=lead["pos"] + 1_000_000)

    exposure, mediator, outcome = [], [], []
    confounders = []
    for s in snps:
        bx = s["gx"] + p.se_exposure * rng.standard_normal()
        bm = s["gm"] + p.se_mediator * rng.standard_normal()
        by = p.direct * s["gx"] + p.beta2 * s["gm"] + p.se_outcome * rng.standard_normal()
        common = dict(rsid=s["rsid"], chrom=s["chrom"], pos=s["pos"], eaf=s["eaf"])
        exposure.append(SummaryRecord(effect_allele=s["ea"], other_allele=s["oa"], beta=bx,
                                      se=p.se_exposure, pvalue=_p_two_sided(bx / p.se_exposure),
                                      sample_size=p.n_exposure, **common))
        # mediator reported for the other allele
        mediator.append(SummaryRecord(effect_allele=s["oa"], other_allele=s["ea"], beta=-bm,
                                      se=p.se_mediator, pvalue=_p_two_sided(bm / p.se_mediator),
                                      rsid=s["rsid"], chrom=s["chrom"], pos=s["pos"],
                                      eaf=round(1.0 - s["eaf"], 6), sample_size=p.n_mediator))
        if s["role"] == "missing_in_outcome":
            continue
        ea, oa, b_out = s["ea"], s["oa"], by
        if s["role"] == "incompatible":
            oa = next(a for a in "ACGT" if a not in (ea, oa, COMPLEMENT[ea]))
        elif s["role"] != "palindromic" and rng.random() < 0.3:
            ea, oa = COMPLEMENT[ea], COMPLEMENT[oa]  # reported on the reverse strand
        eaf_out = s["eaf"]
        if s["role"] == "palindromic":
            eaf_out = 0.51
        outcome.append(SummaryRecord(effect_allele=ea, other_allele=oa, beta=b_out,
                                     se=p.se_outcome, pvalue=_p_two_sided(b_out / p.se_outcome),
                                     sample_size=p.n_cases + p.n_controls, **dict(common, eaf=eaf_out)))
        if s["role"] == "confounder":
            confounders.append((s["rsid"], "body mass index", 1e-12))
    roles = {s["rsid"]: s["role"] for s in snps}
    return Fixture(p, int(seed), exposure, mediator, outcome, confounders, roles)


def write_fixture(fixture, directory, *, seed=None, n_jobs=1, fast=True):
    """Write the three studies, confounder annotations and a pipeline config.

    Returns the path of ``config.yaml``. ``fast`` lowers simulation counts so
    the full pipeline finishes in seconds.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    p = fixture.params
    write_sumstats(fixture.exposure, d / "exposure.tsv")
    write_sumstats(fixture.outcome, d / "outcome.tsv", delimiter=",")
    _write_mediator(fixture.mediator, d / "mediator.tsv")
    with (d / "confounders.tsv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["rsid", "associated_trait", "pvalue", "source"])
        for rsid, trait, pv in fixture.confounders:
            w.writerow([rsid, trait, repr(pv), "synthetic"])
    cfg = {
        "exposure": {"path": "exposure.tsv",
                     "meta": {"study_id": "exposure", "trait_name": "synthetic exposure",
                              "sample_size": p.n_exposure}},
        "mediators": [{"path": "mediator.tsv", "columns": MEDIATOR_COLUMNS,
                       "meta": {"study_id": "mediator", "trait_name": "synthetic mediator",
                                "sample_size": p.n_mediator}}],
        "outcome": {"path": "outcome.tsv",
                    "meta": {"study_id": "outcome", "trait_name": "synthetic outcome",
                             "sample_size": p.n_cases + p.n_controls, "trait_type": "binary",
                             "n_cases": p.n_cases, "n_controls": p.n_controls}},
        "confounders": "confounders.tsv",
        "methods": ["ivw", "egger", "weighted_median"],
        "weighted_median": {"n_boot": 200 if fast else 1000},
        "presso": {"n_sim": 1000 if fast else 5000, "alpha": 0.05,
                   "n_distortion": 200 if fast else 1000},
        "mediation": {"ci_method": "bootstrap", "n_boot": 2000 if fast else 10_000},
        "seed": int(fixture.seed if seed is None else seed),
        "n_jobs": int(n_jobs),
        "output_dir": "out",
    }
    path = d / "config.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=False), encoding="utf-8")
    return path


def _write_mediator(records, path):
    cols = list(MEDIATOR_COLUMNS)
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow([MEDIATOR_COLUMNS[c] for c in cols])
        for r in records:
            w.writerow([repr(v) if isinstance(v, float) else str(v)
                        for v in (getattr(r, c) for c in cols)])


def _oracle_proportion(fx):
    """Proportion from IVW fits on the true instrument sets (no selection)."""
    p = fx.params
    out = {r.rsid: r for r in fx.outcome}
    med = {r.rsid: r for r in fx.mediator}

    def fit(xs, ys, sy):
        return IVWRegressor().fit(np.array(xs), np.array(ys), np.array(sy)).coef_[0]

    ex = [r for r in fx.exposure if fx.roles[r.rsid] == "exposure_iv"]
    total = fit([r.beta for r in ex], [out[r.rsid].beta for r in ex], [p.se_outcome] * len(ex))
    step1 = fit([r.beta for r in ex], [-med[r.rsid].beta for r in ex], [p.se_mediator] * len(ex))
    mv = [med[r.rsid] for r in fx.exposure if fx.roles[r.rsid] == "mediator_iv"]
    step2 = fit([-m.beta for m in mv], [out[m.rsid].beta for m in mv], [p.se_outcome] * len(mv))
    return step1 * step2 / total


def proportion_noise_bounds(n_rep=2000, seed=0, quantiles=(0.0005, 0.9995), params=None):
    """Monte Carlo spread of the recovered mediated proportion across fixtures.

    Returns ``(low, high, draws)`` where the bounds are the requested
    quantiles of the proportion over ``n_rep`` independently seeded fixtures.
    """
    draws = np.array([_oracle_proportion(generate_fixture(seed * 1_000_003 + i, params))
                      for i in range(n_rep)])
    lo, hi = np.quantile(draws, quantiles)
    return float(lo), float(hi), draws
