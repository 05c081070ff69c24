"""Reading, validating and normalizing GWAS summary-statistic tables."""

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import SimpleNamespace
from typing import Optional

from .exceptions import MRError, ParseError

logger = logging.getLogger(__name__)

ALLELES = frozenset("ACGT")
COMPLEMENT = {"A": "T", "T": "A", "C": "G", "G": "C"}
P_FLOOR = 1e-300

REQUIRED_COLUMNS = ("rsid", "effect_allele", "other_allele", "beta", "se", "pvalue")
OPTIONAL_COLUMNS = ("chrom", "pos", "eaf", "sample_size")
CANONICAL_COLUMNS = ("rsid", "chrom", "pos", "effect_allele", "other_allele",
                     "eaf", "beta", "se", "pvalue", "sample_size")
DEFAULT_COLUMN_MAP = {name: name for name in CANONICAL_COLUMNS}


@dataclass(frozen=True)
class StudyMeta:
    """Descriptive metadata for one GWAS."""

    study_id: str
    trait_name: str
    sample_size: int
    trait_type: str = "continuous"
    n_cases: Optional[int] = None
    n_controls: Optional[int] = None
    ancestry_label: str = "unspecified"

    def __post_init__(self):
        if int(self.sample_size) < 1:
            raise MRError(f"sample_size must be >= 1, got {self.sample_size}")
        if self.trait_type not in ("binary", "continuous"):
            raise MRError(f"trait_type must be 'binary' or 'continuous', got {self.trait_type!r}")
        for name in ("n_cases", "n_controls"):
            v = getattr(self, name)
            if v is not None and int(v) < 0:
                raise MRError(f"{name} must be non-negative")
        if (self.trait_type == "binary" and self.n_cases is not None
                and self.n_controls is not None
                and int(self.n_cases) + int(self.n_controls) != int(self.sample_size)):
            raise MRError("n_cases + n_controls must equal sample_size for binary traits")

    @property
    def case_fraction(self):
        if self.trait_type != "binary" or self.n_cases is None:
            return None
        return self.n_cases / self.sample_size

    @classmethod
    def from_dict(cls, d):
        keys = {"study_id", "trait_name", "sample_size", "trait_type", "n_cases",
                "n_controls", "ancestry_label"}
        unknown = set(d) - keys
        if unknown:
            raise MRError(f"unknown study meta fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return {
            "study_id": self.study_id,
            "trait_name": self.trait_name,
            "sample_size": self.sample_size,
            "trait_type": self.trait_type,
            "n_cases": self.n_cases,
            "n_controls": self.n_controls,
            "ancestry_label": self.ancestry_label,
        }


@dataclass(frozen=True)
class SummaryRecord:
    """Association statistics of one SNP in one study."""

    rsid: str
    effect_allele: str
    other_allele: str
    beta: float
    se: float
    pvalue: float
    chrom: Optional[str] = None
    pos: Optional[int] = None
    eaf: Optional[float] = None
    sample_size: Optional[int] = None

    def __post_init__(self):
        reason = _record_problem(self)
        if reason is not None:
            raise MRError(f"{self.rsid}: {reason}")

    @property
    def z(self):
        return self.beta / self.se

    def flipped(self):
        """Same association expressed for the other allele."""
        return replace(
            self,
            effect_allele=self.other_allele,
            other_allele=self.effect_allele,
            beta=-self.beta,
            eaf=None if self.eaf is None else 1.0 - self.eaf,
        )


@dataclass
class ParseResult:
    """Records and rejected rows from one table."""

    records: list
    rejects: list = field(default_factory=list)  # (line_number, row dict, reason)
    header: list = field(default_factory=list)
    delimiter: str = "\t"
    warnings: list = field(default_factory=list)

    @property
    def n_rejected(self):
        return len(self.rejects)


def _record_problem(rec):
    ea, oa = rec.effect_allele, rec.other_allele
    if not isinstance(ea, str) or not isinstance(oa, str) or ea not in ALLELES or oa not in ALLELES:
        return "invalid allele"
    if ea == oa:
        return "identical alleles"
    if not (math.isfinite(rec.beta)):
        return "non-finite beta"
    if not (math.isfinite(rec.se) and rec.se > 0):
        return "nonpositive SE"
    if not (0 < rec.pvalue <= 1):
        return "pvalue out of range"
    if rec.eaf is not None and not (0 <= rec.eaf <= 1):
        return "eaf out of range"
    if rec.pos is not None and rec.pos < 1:
        return "invalid position"
    if rec.sample_size is not None and rec.sample_size < 1:
        return "invalid sample size"
    return None


def detect_delimiter(header_line):
    """Pick tab, comma or semicolon, whichever splits the header most."""
    counts = {d: header_line.count(d) for d in ("\t", ",", ";")}
    best = max(counts, key=lambda d: counts[d])
    if counts[best] == 0:
        # single-column or whitespace-delimited header
        return "\t"
    return best


_MISSING = {"", "na", "nan", "null", "none", "."}


def _is_missing(text):
    return text is None or text.strip().lower() in _MISSING


def _row_to_record(row, column_map):
    """Convert a raw row to a record, or return a reason string."""
    values = {}
    for key in REQUIRED_COLUMNS:
        raw = row.get(column_map[key])
        if _is_missing(raw):
            return f"missing {key}"
        values[key] = raw.strip()
    for key in OPTIONAL_COLUMNS:
        col = column_map.get(key)
        raw = row.get(col) if col else None
        values[key] = None if _is_missing(raw) else raw.strip()

    try:
        beta = float(values["beta"])
        se = float(values["se"])
        p = float(values["pvalue"])
        eaf = None if values["eaf"] is None else float(values["eaf"])
        pos = None if values["pos"] is None else int(float(values["pos"]))
        n = None if values["sample_size"] is None else int(float(values["sample_size"]))
    except ValueError:
        return "unparseable number"

    ea = values["effect_allele"].upper()
    oa = values["other_allele"].upper()
    if len(ea) != 1 or len(oa) != 1:
        return "multi-character allele"
    clamped = False
    if p == 0.0:
        p = P_FLOOR
        clamped = True
    fields = dict(rsid=values["rsid"], effect_allele=ea, other_allele=oa, beta=beta,
                  se=se, pvalue=p, chrom=values["chrom"], pos=pos, eaf=eaf, sample_size=n)
    reason = _record_problem(SimpleNamespace(**fields))
    if reason is not None:
        return reason
    rec = SummaryRecord(**fields)
    return rec, clamped


def parse_sumstats(path, column_map=None, meta=None, *, delimiter=None):
    """Parse a delimited summary-statistics table.

    Parameters
    ----------
    path : str or Path
        Table with a header row, UTF-8.
    column_map : dict, optional
        Maps canonical field names (``rsid``, ``effect_allele``, ``other_allele``,
        ``beta``, ``se``, ``pvalue`` and optionally ``chrom``, ``pos``, ``eaf``,
        ``sample_size``) to header names. Missing keys fall back to the
        canonical name when that column exists.
    meta : StudyMeta, optional
        Only used for log messages; records keep per-row sample sizes.
    delimiter : str, optional
        Overrides auto-detection.

    Returns
    -------
    ParseResult
        Valid records in file order plus rejected rows with reasons.
    """
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"no such file: {path}")
    cmap = dict(DEFAULT_COLUMN_MAP)
    if column_map:
        unknown = set(column_map) - set(CANONICAL_COLUMNS)
        if unknown:
            raise ParseError(f"unknown column_map keys: {sorted(unknown)}")
        cmap.update(column_map)

    with path.open("r", encoding="utf-8", newline="") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise ParseError(f"{path}: empty file or missing header")
        sep = delimiter or detect_delimiter(header_line)
        fh.seek(0)
        reader = csv.DictReader(fh, delimiter=sep)
        header = [h.strip() for h in reader.fieldnames or []]
        reader.fieldnames = header

        missing = [cmap[k] for k in REQUIRED_COLUMNS if cmap[k] not in header]
        if missing:
            raise ParseError(f"{path}: missing mapped column(s) {missing}")
        for key in OPTIONAL_COLUMNS:
            if cmap.get(key) not in header:
                if column_map and key in column_map:
                    raise ParseError(f"{path}: missing mapped column {column_map[key]!r}")
                cmap[key] = None

        result = ParseResult(records=[], header=header, delimiter=sep)
        seen = set()
        n_clamped = 0
        for lineno, row in enumerate(reader, start=2):
            out = _row_to_record(row, cmap)
            if isinstance(out, str):
                result.rejects.append((lineno, row, out))
                continue
            rec, clamped = out
            if rec.rsid in seen:
                result.rejects.append((lineno, row, "duplicate rsid"))
                continue
            seen.add(rec.rsid)
            n_clamped += clamped
            result.records.append(rec)

    if n_clamped:
        msg = f"{path.name}: {n_clamped} p-value(s) of 0 clamped to {P_FLOOR:g}"
        logger.warning(msg)
        result.warnings.append(msg)
    if not result.records:
        raise ParseError(f"{path}: zero valid rows ({result.n_rejected} rejected)")
    if meta is not None:
        logger.info("parsed %d records for %s (%d rejected)",
                    len(result.records), meta.study_id, result.n_rejected)
    return result


def normalize_alleles(record):
    """Return the record in canonical orientation.

    The effect allele is the alphabetically smaller allele; when the stored
    orientation is the opposite the beta is negated and the EAF complemented.
    """
    ea = record.effect_allele.upper() if isinstance(record.effect_allele, str) else record.effect_allele
    oa = record.other_allele.upper() if isinstance(record.other_allele, str) else record.other_allele
    if ea not in ALLELES or oa not in ALLELES:
        raise MRError(f"{record.rsid}: allele outside A/C/G/T ({ea}/{oa})")
    if ea != record.effect_allele or oa != record.other_allele:
        record = replace(record, effect_allele=ea, other_allele=oa)
    if ea > oa:
        return record.flipped()
    return record


def write_sumstats(records, path, delimiter="\t"):
    """Write records with canonical column names (exact float round-trip)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(CANONICAL_COLUMNS)
        for r in records:
            w.writerow([
                r.rsid, _fmt(r.chrom), _fmt(r.pos), r.effect_allele, r.other_allele,
                _fmt(r.eaf), repr(float(r.beta)), repr(float(r.se)), repr(float(r.pvalue)),
                _fmt(r.sample_size),
            ])
    return path


def write_rejects(parse_result, path, delimiter="\t"):
    """Write rejected rows with an appended ``reason`` column."""
    path = Path(path)
    cols = list(parse_result.header) + ["reason"]
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(cols)
        for _, row, reason in parse_result.rejects:
            w.writerow([row.get(c, "") or "" for c in parse_result.header] + [reason])
    return path


def _fmt(v):
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(v)
    return str(v)
