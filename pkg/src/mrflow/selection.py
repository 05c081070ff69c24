"""Instrument selection: p-value threshold, clumping, F-statistic, confounder screen."""

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

from .exceptions import MRError, ParseError
from .sumstats import detect_delimiter

logger = logging.getLogger(__name__)


class DistanceOnlyClumpingWarning(UserWarning):
    """Clumping ran without LD information."""


@dataclass(frozen=True)
class SelectionConfig:
    p_threshold: float = 5e-8
    r2_threshold: float = 0.001
    clump_window_kb: float = 10_000
    f_min: float = 10.0

    def __post_init__(self):
        if not 0 < self.p_threshold < 1:
            raise MRError(f"p_threshold must lie in (0, 1), got {self.p_threshold}")
        if not 0 <= self.r2_threshold <= 1:
            raise MRError(f"r2_threshold must lie in [0, 1], got {self.r2_threshold}")
        if not self.clump_window_kb > 0:
            raise MRError("clump_window_kb must be positive")
        if not self.f_min >= 0:
            raise MRError("f_min must be non-negative")

    def to_dict(self):
        return {"p_threshold": self.p_threshold, "r2_threshold": self.r2_threshold,
                "clump_window_kb": self.clump_window_kb, "f_min": self.f_min}


@dataclass(frozen=True)
class ConfounderAnnotation:
    rsid: str
    associated_trait: str
    pvalue: float
    source: str = "local"

    def __post_init__(self):
        if not 0 < self.pvalue <= 1:
            raise MRError(f"annotation p-value out of range for {self.rsid}: {self.pvalue}")


@dataclass(frozen=True)
class Removal:
    """One record dropped by a selection stage."""

    rsid: str
    stage: str
    reason: str


class LDTable:
    """Pairwise r² lookup; pairs absent from the table count as r² = 0."""

    def __init__(self, pairs=None):
        self._r2 = {}
        for a, b, r2 in pairs or ():
            r2 = float(r2)
            if not 0 <= r2 <= 1:
                raise MRError(f"r2 out of range for ({a}, {b}): {r2}")
            self._r2[frozenset((a, b))] = r2

    def r2(self, a, b):
        if a == b:
            return 1.0
        return self._r2.get(frozenset((a, b)), 0.0)

    def __len__(self):
        return len(self._r2)

    @classmethod
    def from_file(cls, path, delimiter=None):
        rows = _read_table(path, ("rsid_a", "rsid_b", "r2"), delimiter)
        return cls((r["rsid_a"], r["rsid_b"], r["r2"]) for r in rows)


def _read_table(path, required, delimiter=None):
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"no such file: {path}")
    with path.open("r", encoding="utf-8", newline="") as fh:
        first = fh.readline()
        sep = delimiter or detect_delimiter(first)
        fh.seek(0)
        reader = csv.DictReader(fh, delimiter=sep)
        reader.fieldnames = [h.strip() for h in reader.fieldnames or []]
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"{path}: missing column(s) {missing}")
        return [{k: (v.strip() if isinstance(v, str) else v) for k, v in row.items()}
                for row in reader]


def load_annotations(path, delimiter=None):
    """Read a confounder annotation table (rsid, associated_trait, pvalue[, source])."""
    rows = _read_table(path, ("rsid", "associated_trait", "pvalue"), delimiter)
    return [ConfounderAnnotation(r["rsid"], r["associated_trait"], float(r["pvalue"]),
                                 r.get("source") or "local") for r in rows]


def threshold_by_pvalue(records, p_threshold):
    """Records with ``pvalue < p_threshold``, input order preserved."""
    return [r for r in records if r.pvalue < p_threshold]


def f_statistic(record):
    """Single-SNP instrument strength, ``(beta / se) ** 2``.

    Approximates the R²-based F-statistic when only the association estimate
    and its standard error are available.
    """
    return (record.beta / record.se) ** 2


def is_weak(record, f_min=10.0):
    return f_statistic(record) < f_min


def filter_weak(records, f_min=10.0):
    """Split records into (strong, removals) by the F-statistic cutoff."""
    kept, removed = [], []
    for r in records:
        f = f_statistic(r)
        if f < f_min:
            removed.append(Removal(r.rsid, "f_statistic", f"weak instrument (F={f:.3g} < {f_min:g})"))
        else:
            kept.append(r)
    return kept, removed


def _clump_order(records):
    return sorted(records, key=lambda r: (r.pvalue, _chrom_key(r.chrom), r.pos, r.rsid))


def _chrom_key(chrom):
    c = str(chrom)
    stripped = c[3:] if c.lower().startswith("chr") else c
    return (0, int(stripped), "") if stripped.isdigit() else (1, 0, stripped)


def clump(records, config=None, ld=None, *, return_removed=False):
    """Greedy clumping around the most significant remaining variant.

    Each round takes the lowest-p remaining record (ties broken by chromosome
    then position) as an index variant and removes every other remaining
    record on the same chromosome within ``clump_window_kb``. With an LD
    table, removal additionally requires ``r2 >= r2_threshold`` against the
    index; without one, distance alone decides and a warning is issued.

    Returns the surviving index variants sorted by p-value. With
    ``return_removed=True`` also returns the removals.
    """
    config = config or SelectionConfig()
    records = list(records)
    for r in records:
        if r.chrom is None or r.pos is None:
            raise MRError(f"clumping requires chrom/pos; missing for {r.rsid}")
    if ld is None and records:
        warnings.warn("no LD source given: clumping by distance only",
                      DistanceOnlyClumpingWarning, stacklevel=2)
    window_bp = config.clump_window_kb * 1000.0

    by_chrom = {}
    for r in _clump_order(records):
        by_chrom.setdefault(str(r.chrom), []).append(r)

    kept, removed = [], []
    # chromosomes are independent; merge in sorted order for determinism
    for chrom in sorted(by_chrom, key=_chrom_key):
        k, rm = _clump_one_chrom(by_chrom[chrom], window_bp, config.r2_threshold, ld)
        kept.extend(k)
        removed.extend(rm)
    kept = _clump_order(kept)
    if return_removed:
        return kept, removed
    return kept


def _clump_one_chrom(ordered, window_bp, r2_threshold, ld):
    alive = list(ordered)
    kept, removed = [], []
    while alive:
        index = alive.pop(0)
        kept.append(index)
        rest = []
        for r in alive:
            near = abs(r.pos - index.pos) <= window_bp
            if near and (ld is None or ld.r2(index.rsid, r.rsid) >= r2_threshold):
                reason = f"clumped with {index.rsid}"
                if ld is not None:
                    reason += f" (r2={ld.r2(index.rsid, r.rsid):.3g})"
                removed.append(Removal(r.rsid, "clump", reason))
            else:
                rest.append(r)
        alive = rest
    return kept, removed


def exclude_confounder_hits(records, annotations, p_annot_threshold=5e-8):
    """Drop records annotated with a confounding trait below the p cutoff.

    Returns
    -------
    kept : list of SummaryRecord
    removed : list of (SummaryRecord, reason)
        ``reason`` lists the confounding trait(s).
    """
    hits = {}
    for a in annotations:
        if a.pvalue < p_annot_threshold:
            hits.setdefault(a.rsid, [])
            if a.associated_trait not in hits[a.rsid]:
                hits[a.rsid].append(a.associated_trait)
    kept, removed = [], []
    for r in records:
        if r.rsid in hits:
            removed.append((r, "; ".join(hits[r.rsid])))
        else:
            kept.append(r)
    return kept, removed


@dataclass
class SelectionResult:
    instruments: list
    removals: list
    n_input: int
    n_significant: int

    def removal_rows(self):
        return [{"rsid": r.rsid, "stage": r.stage, "reason": r.reason} for r in self.removals]


def select_instruments(records, config=None, ld=None, annotations=None,
                       p_annot_threshold=5e-8):
    """Threshold, clump, F-filter and confounder-screen one exposure study.

    Records failing the p-value threshold are not instruments and are not
    logged individually; every later removal carries a reason.
    """
    config = config or SelectionConfig()
    sig = threshold_by_pvalue(records, config.p_threshold)
    if not sig:
        logger.warning("no records below p < %g", config.p_threshold)
    removals = []
    clumped, rm = clump(sig, config, ld, return_removed=True) if sig else ([], [])
    removals.extend(rm)
    strong, rm = filter_weak(clumped, config.f_min)
    removals.extend(rm)
    kept, conf = exclude_confounder_hits(strong, annotations or [], p_annot_threshold)
    removals.extend(Removal(r.rsid, "confounder", reason) for r, reason in conf)
    return SelectionResult(instruments=kept, removals=removals,
                           n_input=len(records), n_significant=len(sig))


def write_removals(removals, path, delimiter="\t"):
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["rsid", "stage", "reason"])
        for r in removals:
            w.writerow([r.rsid, r.stage, r.reason])
    return path


__all__ = [
    "SelectionConfig", "ConfounderAnnotation", "Removal", "LDTable", "SelectionResult",
    "threshold_by_pvalue", "clump", "f_statistic", "is_weak", "filter_weak",
    "exclude_confounder_hits", "select_instruments", "load_annotations", "write_removals",
    "DistanceOnlyClumpingWarning",
]
