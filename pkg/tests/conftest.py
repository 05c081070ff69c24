import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mrflow.harmonize import HarmonizedSet  # noqa: E402
from mrflow.sumstats import SummaryRecord  # noqa: E402


def rec(rsid="rs1", ea="A", oa="G", beta=0.1, se=0.02, p=1e-9, chrom="1", pos=1000,
        eaf=None, n=None):
    return SummaryRecord(rsid=rsid, effect_allele=ea, other_allele=oa, beta=beta, se=se,
                         pvalue=p, chrom=chrom, pos=pos, eaf=eaf, sample_size=n)


def random_hset(rng, k=20, beta=0.4, se_y=(0.01, 0.03), intercept=0.0, se_x=0.005):
    bx = rng.uniform(0.05, 0.2, k) * rng.choice([-1, 1], k)
    sy = rng.uniform(*se_y, k)
    by = intercept * np.sign(bx) + beta * bx + sy * rng.standard_normal(k)
    return HarmonizedSet.from_arrays(bx, np.full(k, se_x), by, sy)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
