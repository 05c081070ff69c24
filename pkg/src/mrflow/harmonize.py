"""Aligning exposure and outcome associations to a common effect allele."""

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import MRError, ParseError
from .sumstats import COMPLEMENT, StudyMeta, detect_delimiter

KEPT = "kept"
DROPPED_PALINDROMIC = "dropped_palindromic"
DROPPED_INCOMPATIBLE = "dropped_incompatible"
DROPPED_MISSING = "dropped_missing_in_outcome"
DROPPED_CONFOUNDER = "dropped_confounder"
DROPPED_OUTLIER = "dropped_outlier"
STATUSES = (KEPT, DROPPED_PALINDROMIC, DROPPED_INCOMPATIBLE, DROPPED_MISSING,
            DROPPED_CONFOUNDER, DROPPED_OUTLIER)

DEFAULT_PALINDROME_WINDOW = 0.08


@dataclass(frozen=True)
class Instrument:
    rsid: str
    effect_allele: str
    other_allele: str
    beta_exposure: float
    se_exposure: float
    beta_outcome: float
    se_outcome: float
    eaf_exposure: Optional[float] = None
    eaf_outcome: Optional[float] = None
    status: str = KEPT
    notes: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise MRError(f"unknown instrument status {self.status!r}")

    @property
    def kept(self):
        return self.status == KEPT

    @property
    def ratio(self):
        return self.beta_outcome / self.beta_exposure


@dataclass
class HarmonizedSet:
    """Harmonized instruments for one exposure/outcome pair plus an audit log."""

    instruments: list
    exposure_meta: Optional[StudyMeta] = None
    outcome_meta: Optional[StudyMeta] = None
    audit: list = field(default_factory=list)  # (rsid, action, reason)

    @property
    def kept(self):
        return [i for i in self.instruments if i.kept]

    @property
    def dropped(self):
        return [i for i in self.instruments if not i.kept]

    @property
    def n_kept(self):
        return sum(1 for i in self.instruments if i.kept)

    @property
    def exposure_id(self):
        return self.exposure_meta.study_id if self.exposure_meta else "exposure"

    @property
    def outcome_id(self):
        return self.outcome_meta.study_id if self.outcome_meta else "outcome"

    def arrays(self):
        """Kept instruments as ``(rsids, bx, se_x, by, se_y)``."""
        kept = self.kept
        rsids = [i.rsid for i in kept]
        bx = np.array([i.beta_exposure for i in kept], dtype=float)
        sx = np.array([i.se_exposure for i in kept], dtype=float)
        by = np.array([i.beta_outcome for i in kept], dtype=float)
        sy = np.array([i.se_outcome for i in kept], dtype=float)
        return rsids, bx, sx, by, sy

    def with_status(self, rsids, status, reason):
        """Copy with the given kept instruments re-labelled as dropped."""
        rsids = set(rsids)
        new, audit = [], list(self.audit)
        for inst in self.instruments:
            if inst.rsid in rsids and inst.kept:
                inst = replace(inst, status=status, notes=reason)
                audit.append((inst.rsid, status, reason))
            new.append(inst)
        return HarmonizedSet(new, self.exposure_meta, self.outcome_meta, audit)

    def subset(self, rsids):
        """Copy restricted to the kept instruments whose rsid is listed."""
        keep = set(rsids)
        return HarmonizedSet([i for i in self.kept if i.rsid in keep],
                             self.exposure_meta, self.outcome_meta, list(self.audit))

    @classmethod
    def from_arrays(cls, bx, se_x, by, se_y, rsids=None, effect_alleles=None,
                    exposure_meta=None, outcome_meta=None):
        """Build a set of kept instruments directly from aligned arrays."""
        bx, sx, by, sy = (np.asarray(a, dtype=float).ravel() for a in (bx, se_x, by, se_y))
        n = len(bx)
        if not (len(sx) == len(by) == len(sy) == n):
            raise MRError("array lengths differ")
        rsids = rsids if rsids is not None else [f"snp{i + 1}" for i in range(n)]
        insts = [Instrument(str(rsids[i]), "A", "G", float(bx[i]), float(sx[i]),
                            float(by[i]), float(sy[i])) for i in range(n)]
        return cls(insts, exposure_meta, outcome_meta, [])


def is_palindromic(a1, a2):
    return COMPLEMENT.get(a1) == a2


def match_alleles(ea, oa, out_ea, out_oa):
    """How an outcome allele pair relates to an exposure pair.

    Returns ``"same"``, ``"swap"``, ``"flip"`` (strand complement),
    ``"flip_swap"`` or ``None`` when the pairs are incompatible. For
    palindromic pairs only ``"same"``/``"swap"`` can be returned.
    """
    if (out_ea, out_oa) == (ea, oa):
        return "same"
    if (out_ea, out_oa) == (oa, ea):
        return "swap"
    c_ea, c_oa = COMPLEMENT.get(out_ea), COMPLEMENT.get(out_oa)
    if (c_ea, c_oa) == (ea, oa):
        return "flip"
    if (c_ea, c_oa) == (oa, ea):
        return "flip_swap"
    return None


def _palindrome_eafs_informative(eaf_x, eaf_y_aligned, window):
    if eaf_x is None or eaf_y_aligned is None:
        return False, "EAF missing"
    lo, hi = 0.5 - window, 0.5 + window
    if lo <= eaf_x <= hi or lo <= eaf_y_aligned <= hi:
        return False, f"EAF within {window:g} of 0.5"
    if (eaf_x < 0.5) != (eaf_y_aligned < 0.5):
        return False, "EAFs on opposite sides of 0.5"
    return True, "EAFs resolve strand"


def harmonize(exposure, outcome, palindrome_eaf_window=DEFAULT_PALINDROME_WINDOW, *,
              exposure_meta=None, outcome_meta=None, drop_palindromic=False):
    """Harmonize exposure instruments against an outcome study.

    Parameters
    ----------
    exposure : list of SummaryRecord
        Selected instruments.
    outcome : list of SummaryRecord
        Outcome study records (any subset; looked up by rsid).
    palindrome_eaf_window : float, default=0.08
        Palindromic SNPs are kept only if both EAFs are known, lie outside
        ``[0.5 - w, 0.5 + w]`` and agree on the side of 0.5.
    drop_palindromic : bool, default=False
        Drop every palindromic SNP regardless of allele frequencies.

    Returns
    -------
    HarmonizedSet
        One Instrument per exposure record, in input order.
    """
    exposure = list(exposure)
    if not exposure:
        raise MRError("harmonize: empty exposure list")
    if not 0 <= palindrome_eaf_window < 0.5:
        raise MRError(f"palindrome_eaf_window must lie in [0, 0.5), got {palindrome_eaf_window}")
    lookup = {r.rsid: r for r in outcome}

    insts, audit = [], []
    for x in exposure:
        y = lookup.get(x.rsid)
        base = dict(rsid=x.rsid, effect_allele=x.effect_allele, other_allele=x.other_allele,
                    beta_exposure=x.beta, se_exposure=x.se, eaf_exposure=x.eaf)
        if y is None:
            inst = Instrument(beta_outcome=math.nan, se_outcome=math.nan,
                              status=DROPPED_MISSING, notes="absent from outcome", **base)
            insts.append(inst)
            audit.append((x.rsid, DROPPED_MISSING, inst.notes))
            continue

        how = match_alleles(x.effect_allele, x.other_allele, y.effect_allele, y.other_allele)
        sign = -1.0 if how in ("swap", "flip_swap") else 1.0
        eaf_y = None if y.eaf is None else (1.0 - y.eaf if sign < 0 else y.eaf)
        aligned = dict(beta_outcome=sign * y.beta, se_outcome=y.se, eaf_outcome=eaf_y)

        if how is None:
            notes = (f"alleles {x.effect_allele}/{x.other_allele} vs "
                     f"{y.effect_allele}/{y.other_allele}")
            inst = Instrument(status=DROPPED_INCOMPATIBLE, notes=notes, **base, **aligned)
            audit.append((x.rsid, DROPPED_INCOMPATIBLE, notes))
        elif is_palindromic(x.effect_allele, x.other_allele):
            if drop_palindromic:
                ok, why = False, "palindromic SNPs dropped"
            else:
                ok, why = _palindrome_eafs_informative(x.eaf, eaf_y, palindrome_eaf_window)
            if ok:
                inst = Instrument(status=KEPT, notes=f"palindromic; {why}", **base, **aligned)
                audit.append((x.rsid, KEPT, inst.notes))
            else:
                inst = Instrument(status=DROPPED_PALINDROMIC, notes=why, **base, **aligned)
                audit.append((x.rsid, DROPPED_PALINDROMIC, why))
        else:
            notes = {"same": "", "swap": "outcome alleles swapped",
                     "flip": "strand flipped", "flip_swap": "strand flipped and swapped"}[how]
            inst = Instrument(status=KEPT, notes=notes, **base, **aligned)
            if notes:
                audit.append((x.rsid, "aligned", notes))
        insts.append(inst)
    return HarmonizedSet(insts, exposure_meta, outcome_meta, audit)


HARMONIZED_COLUMNS = ("rsid", "effect_allele", "other_allele", "beta_exposure", "se_exposure",
                      "beta_outcome", "se_outcome", "eaf_exposure", "eaf_outcome", "status", "notes")


def _f(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    return repr(float(v))


def write_harmonized(hset, path, delimiter="\t"):
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(HARMONIZED_COLUMNS)
        for i in hset.instruments:
            w.writerow([i.rsid, i.effect_allele, i.other_allele, _f(i.beta_exposure),
                        _f(i.se_exposure), _f(i.beta_outcome), _f(i.se_outcome),
                        _f(i.eaf_exposure), _f(i.eaf_outcome), i.status, i.notes])
    return path


def write_audit(hset, path, delimiter="\t"):
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["rsid", "action", "reason"])
        w.writerows(hset.audit)
    return path


def read_harmonized(path, delimiter=None, exposure_meta=None, outcome_meta=None):
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"no such file: {path}")

    def num(s):
        return None if s in ("", "NA", "nan", None) else float(s)

    with path.open("r", encoding="utf-8", newline="") as fh:
        sep = delimiter or detect_delimiter(fh.readline())
        fh.seek(0)
        reader = csv.DictReader(fh, delimiter=sep)
        missing = [c for c in HARMONIZED_COLUMNS[:7] if c not in (reader.fieldnames or [])]
        if missing:
            raise ParseError(f"{path}: missing column(s) {missing}")
        insts = []
        for row in reader:
            by, sy = num(row["beta_outcome"]), num(row["se_outcome"])
            insts.append(Instrument(
                rsid=row["rsid"], effect_allele=row["effect_allele"],
                other_allele=row["other_allele"], beta_exposure=float(row["beta_exposure"]),
                se_exposure=float(row["se_exposure"]),
                beta_outcome=math.nan if by is None else by,
                se_outcome=math.nan if sy is None else sy,
                eaf_exposure=num(row.get("eaf_exposure")), eaf_outcome=num(row.get("eaf_outcome")),
                status=row.get("status") or KEPT, notes=row.get("notes") or ""))
    audit = [(i.rsid, i.status, i.notes) for i in insts if not i.kept]
    return HarmonizedSet(insts, exposure_meta, outcome_meta, audit)
