"""Two-step mediation (product of coefficients) and NCP-based power."""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from ._rng import run_blocks
from ._validation import check_probability
from .estimators import Z95
from .exceptions import MRError

logger = logging.getLogger(__name__)


@dataclass
class MediationResult:
    total_beta: float
    step1_beta: float
    step1_se: float
    step2_beta: float
    step2_se: float
    indirect: float
    indirect_se: float
    ci_low: float
    ci_high: float
    proportion: float
    ci_method: str
    n_boot: Optional[int] = None
    seed: Optional[int] = None
    warnings: list = field(default_factory=list)

    @property
    def significant(self):
        """The indirect-effect CI excludes zero."""
        return self.ci_low > 0 or self.ci_high < 0

    @property
    def proportion_ci(self):
        lo, hi = self.ci_low / self.total_beta, self.ci_high / self.total_beta
        return (min(lo, hi), max(lo, hi))

    def to_dict(self):
        return {
            "total_beta": self.total_beta,
            "step1_beta": self.step1_beta, "step1_se": self.step1_se,
            "step2_beta": self.step2_beta, "step2_se": self.step2_se,
            "indirect": self.indirect, "indirect_se": self.indirect_se,
            "ci_low": self.ci_low, "ci_high": self.ci_high,
            "proportion": self.proportion,
            "proportion_ci": list(self.proportion_ci),
            "significant": self.significant,
            "ci_method": self.ci_method, "n_boot": self.n_boot, "seed": self.seed,
            "warnings": list(self.warnings),
        }


def delta_se(b1, se1, b2, se2):
    """First-order delta-method standard error of ``b1 * b2``."""
    return math.sqrt(b1**2 * se2**2 + b2**2 * se1**2)


def bootstrap_products(b1, se1, b2, se2, n_boot, seed, n_jobs=1):
    """Products of independent normal draws around the two step estimates."""

    def draw(rng, n):
        z = rng.standard_normal((n, 2))
        return (b1 + se1 * z[:, 0]) * (b2 + se2 * z[:, 1])

    return run_blocks(draw, n_boot, seed, n_jobs=n_jobs, stream=4)


def mediate(total, step1, step2, ci_method="delta", n_boot=10_000, seed=0, n_jobs=1):
    """Indirect effect ``step1.beta * step2.beta`` and mediated proportion.

    Parameters
    ----------
    total, step1, step2 : MrEstimate
        Exposure->outcome, exposure->mediator and mediator->outcome estimates.
    ci_method : {"delta", "bootstrap"}
        ``"bootstrap"`` gives a percentile interval from ``n_boot`` seeded
        normal resamples of the two step estimates; the reported
        ``indirect_se`` is always the delta-method value.
    """
    if ci_method not in ("delta", "bootstrap"):
        raise MRError(f"ci_method must be 'delta' or 'bootstrap', got {ci_method!r}")
    b, b1, b2 = float(total.beta), float(step1.beta), float(step2.beta)
    se1, se2 = float(step1.se), float(step2.se)
    if not (se1 > 0 and se2 > 0):
        raise MRError("step estimates need positive standard errors")
    if b == 0:
        raise MRError("undefined proportion: total effect is zero")
    indirect = b1 * b2
    se = delta_se(b1, se1, b2, se2)
    if ci_method == "delta":
        lo, hi = indirect - Z95 * se, indirect + Z95 * se
        n_boot_out, seed_out = None, None
    else:
        if n_boot < 100:
            raise MRError(f"n_boot must be >= 100, got {n_boot}")
        prods = bootstrap_products(b1, se1, b2, se2, n_boot, seed, n_jobs)
        lo, hi = (float(v) for v in np.percentile(prods, [2.5, 97.5]))
        n_boot_out, seed_out = int(n_boot), int(seed)
    proportion = indirect / b
    warns = []
    if proportion < 0 or proportion > 1:
        warns.append(f"mediated proportion {proportion:.4g} outside [0, 1] "
                     "(inconsistent mediation)")
        logger.warning(warns[-1])
    return MediationResult(
        total_beta=b, step1_beta=b1, step1_se=se1, step2_beta=b2, step2_se=se2,
        indirect=indirect, indirect_se=se, ci_low=lo, ci_high=hi, proportion=proportion,
        ci_method=ci_method, n_boot=n_boot_out, seed=seed_out, warnings=warns,
    )


@dataclass(frozen=True)
class PowerInput:
    """Inputs to the NCP power approximation.

    ``case_fraction=None`` means a continuous outcome.
    """

    n_outcome: int
    r2_instruments: float
    beta_causal: float
    case_fraction: Optional[float] = None
    alpha: float = 0.05

    def __post_init__(self):
        if int(self.n_outcome) < 1:
            raise MRError("n_outcome must be a positive integer")
        check_probability(self.r2_instruments, "r2_instruments")
        check_probability(self.alpha, "alpha")
        if self.case_fraction is not None:
            check_probability(self.case_fraction, "case_fraction")
        if not math.isfinite(self.beta_causal):
            raise MRError("beta_causal must be finite")


def power_ncp(inp):
    """Non-centrality parameter and two-sided power of the causal test.

    ``ncp = n * r2 * beta**2`` times ``K(1 - K)`` for a binary outcome with
    case fraction ``K``. This is an approximation for summary-data MR.
    """
    ncp = inp.n_outcome * inp.r2_instruments * inp.beta_causal**2
    if inp.case_fraction is not None:
        ncp *= inp.case_fraction * (1.0 - inp.case_fraction)
    if ncp == 0:
        return 0.0, float(inp.alpha)
    z = norm.isf(inp.alpha / 2.0)
    root = math.sqrt(ncp)
    power = norm.sf(z - root) + norm.cdf(-z - root)
    return float(ncp), float(min(max(power, inp.alpha), 1.0))


def r2_from_instruments(records, sample_size):
    """Variance in the exposure explained by independent instruments.

    Sums the single-SNP ``F / (F + N - 2)`` values; an approximation when
    only association estimates and standard errors are available.
    """
    total = 0.0
    for r in records:
        f = (r.beta / r.se) ** 2
        n = r.sample_size or sample_size
        total += f / (f + n - 2)
    return min(total, 0.999999)
