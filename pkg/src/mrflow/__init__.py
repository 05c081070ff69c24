"""Two-sample Mendelian randomization from GWAS summary statistics."""

__version__ = "0.1.0"

from .estimators import (EggerRegressor, IVWRegressor, MrEstimate, MVMRRegressor,  # noqa: E402
                         WeightedMedianRegressor, egger, ivw, mvmr, run_methods, wald_ratio,
                         weighted_median)
from .exceptions import (CollinearExposuresError, ConfigError, InsufficientInstrumentsError,  # noqa: E402
                         MRError, ParseError, StageError)
from .harmonize import HarmonizedSet, Instrument, harmonize  # noqa: E402
from .mediation import MediationResult, PowerInput, mediate, power_ncp  # noqa: E402
from .selection import SelectionConfig, clump, select_instruments  # noqa: E402
from .sensitivity import QResult, cochran_q, leave_one_out, presso  # noqa: E402
from .sumstats import StudyMeta, SummaryRecord, parse_sumstats  # noqa: E402

__all__ = [
    "__version__", "MrEstimate", "IVWRegressor", "EggerRegressor", "WeightedMedianRegressor",
    "MVMRRegressor", "ivw", "egger", "weighted_median", "mvmr", "wald_ratio", "run_methods",
    "MRError", "ParseError", "InsufficientInstrumentsError", "CollinearExposuresError",
    "ConfigError", "StageError", "HarmonizedSet", "Instrument", "harmonize", "MediationResult",
    "PowerInput", "mediate", "power_ncp", "SelectionConfig", "clump", "select_instruments",
    "QResult", "cochran_q", "leave_one_out", "presso", "StudyMeta", "SummaryRecord",
    "parse_sumstats",
]
