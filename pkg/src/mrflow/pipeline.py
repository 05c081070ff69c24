"""Config-driven two-step MR workflow and report emission."""

import copy
import csv
import json
import logging
import os
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import yaml

from . import __version__
from .estimators import (MrEstimate, align_multivariable, ivw, mvmr, per_snp_ratios,
                         run_methods)
from .exceptions import ConfigError, InsufficientInstrumentsError, MRError, StageError
from .harmonize import DEFAULT_PALINDROME_WINDOW, harmonize, write_audit, write_harmonized
from .mediation import PowerInput, mediate, power_ncp, r2_from_instruments
from .selection import (DistanceOnlyClumpingWarning, LDTable, SelectionConfig, load_annotations,
                        select_instruments, write_removals)
from .sensitivity import cochran_q, egger_intercept_test, leave_one_out, presso
from .sumstats import StudyMeta, normalize_alleles, parse_sumstats

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "MRFLOW_OUTPUT_DIR"
GATE_ALPHA = 0.05


@dataclass
class StudySpec:
    path: Path
    meta: StudyMeta
    columns: dict = field(default_factory=dict)
    delimiter: Optional[str] = None
    selection: Optional[SelectionConfig] = None

    @classmethod
    def from_dict(cls, d, base_dir, role):
        if "path" not in d:
            raise ConfigError(f"{role}: 'path' is required")
        path = Path(d["path"])
        if not path.is_absolute():
            path = Path(base_dir) / path
        meta_d = dict(d.get("meta") or {})
        meta_d.setdefault("study_id", path.stem)
        meta_d.setdefault("trait_name", meta_d["study_id"])
        if "sample_size" not in meta_d:
            raise ConfigError(f"{role}: meta.sample_size is required")
        try:
            meta = StudyMeta.from_dict(meta_d)
            sel = SelectionConfig(**d["selection"]) if d.get("selection") else None
        except (MRError, TypeError) as exc:
            raise ConfigError(f"{role}: {exc}") from exc
        return cls(path=path, meta=meta, columns=dict(d.get("columns") or {}),
                   delimiter=d.get("delimiter"), selection=sel)

    def to_dict(self):
        d = {"path": str(self.path), "meta": self.meta.to_dict(), "columns": dict(self.columns),
             "delimiter": self.delimiter}
        if self.selection:
            d["selection"] = self.selection.to_dict()
        return d


@dataclass
class PipelineConfig:
    exposure: StudySpec
    outcome: StudySpec
    mediators: list = field(default_factory=list)
    covariates: list = field(default_factory=list)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    ld_path: Optional[Path] = None
    confounders_path: Optional[Path] = None
    confounder_p_threshold: float = 5e-8
    palindrome_eaf_window: float = DEFAULT_PALINDROME_WINDOW
    drop_palindromic: bool = False
    methods: list = field(default_factory=lambda: ["ivw", "egger", "weighted_median"])
    wm_n_boot: int = 1000
    presso_n_sim: int = 5000
    presso_alpha: float = 0.05
    presso_n_distortion: int = 1000
    mediation_ci_method: str = "bootstrap"
    mediation_n_boot: int = 10_000
    power_r2: Optional[float] = None
    power_alpha: float = 0.05
    seed: int = 0
    n_jobs: int = 1
    output_dir: Optional[Path] = None

    @classmethod
    def from_dict(cls, d, base_dir="."):
        d = dict(d)
        base_dir = Path(base_dir)

        def _path(v):
            if v is None:
                return None
            p = Path(v)
            return p if p.is_absolute() else base_dir / p

        for key in ("exposure", "outcome"):
            if key not in d:
                raise ConfigError(f"config is missing '{key}'")
        presso_d = d.get("presso") or {}
        med_d = d.get("mediation") or {}
        wm_d = d.get("weighted_median") or {}
        power_d = d.get("power") or {}
        known = {"exposure", "outcome", "mediators", "covariates", "selection", "ld", "confounders",
                 "confounder_p_threshold", "palindrome_eaf_window", "drop_palindromic", "methods",
                 "weighted_median", "presso", "mediation", "power", "seed", "n_jobs", "output_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            selection = SelectionConfig(**(d.get("selection") or {}))
        except (MRError, TypeError) as exc:
            raise ConfigError(f"selection: {exc}") from exc
        out = d.get("output_dir")
        cfg = cls(
            exposure=StudySpec.from_dict(d["exposure"], base_dir, "exposure"),
            outcome=StudySpec.from_dict(d["outcome"], base_dir, "outcome"),
            mediators=[StudySpec.from_dict(m, base_dir, f"mediators[{i}]")
                       for i, m in enumerate(d.get("mediators") or [])],
            covariates=[StudySpec.from_dict(m, base_dir, f"covariates[{i}]")
                        for i, m in enumerate(d.get("covariates") or [])],
            selection=selection,
            ld_path=_path(d.get("ld")),
            confounders_path=_path(d.get("confounders")),
            confounder_p_threshold=float(d.get("confounder_p_threshold", 5e-8)),
            palindrome_eaf_window=float(d.get("palindrome_eaf_window", DEFAULT_PALINDROME_WINDOW)),
            drop_palindromic=bool(d.get("drop_palindromic", False)),
            methods=list(d.get("methods") or ["ivw", "egger", "weighted_median"]),
            wm_n_boot=int(wm_d.get("n_boot", 1000)),
            presso_n_sim=int(presso_d.get("n_sim", 5000)),
            presso_alpha=float(presso_d.get("alpha", 0.05)),
            presso_n_distortion=int(presso_d.get("n_distortion", 1000)),
            mediation_ci_method=med_d.get("ci_method", "bootstrap"),
            mediation_n_boot=int(med_d.get("n_boot", 10_000)),
            power_r2=power_d.get("r2"),
            power_alpha=float(power_d.get("alpha", 0.05)),
            seed=int(d.get("seed", 0)),
            n_jobs=int(d.get("n_jobs", 1)),
            output_dir=_path(out) if out else None,
        )
        return cfg

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"no such config file: {path}")
        with path.open(encoding="utf-8") as fh:
            d = yaml.safe_load(fh) or {}
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(d, base_dir=path.parent)

    def validate(self):
        studies = [self.exposure, self.outcome, *self.mediators, *self.covariates]
        for s in studies:
            if not s.path.is_file():
                raise ConfigError(f"study file not found: {s.path}")
        for p in (self.ld_path, self.confounders_path):
            if p is not None and not p.is_file():
                raise ConfigError(f"file not found: {p}")
        ids = [s.meta.study_id for s in studies]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"study ids must be unique: {ids}")
        if self.mediation_ci_method not in ("delta", "bootstrap"):
            raise ConfigError("mediation.ci_method must be 'delta' or 'bootstrap'")
        if not 0 <= self.palindrome_eaf_window < 0.5:
            raise ConfigError("palindrome_eaf_window must lie in [0, 0.5)")
        for m in self.methods:
            if m.replace("-", "_") not in ("ivw", "ivw_random", "ivw_fixed", "egger",
                                           "weighted_median"):
                raise ConfigError(f"unknown method {m!r}")
        return self

    def resolved_output_dir(self):
        if self.output_dir is not None:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_DIR_ENV, "mrflow_out"))

    def to_dict(self):
        return {
            "exposure": self.exposure.to_dict(),
            "outcome": self.outcome.to_dict(),
            "mediators": [m.to_dict() for m in self.mediators],
            "covariates": [c.to_dict() for c in self.covariates],
            "selection": self.selection.to_dict(),
            "ld": str(self.ld_path) if self.ld_path else None,
            "confounders": str(self.confounders_path) if self.confounders_path else None,
            "confounder_p_threshold": self.confounder_p_threshold,
            "palindrome_eaf_window": self.palindrome_eaf_window,
            "drop_palindromic": self.drop_palindromic,
            "methods": list(self.methods),
            "weighted_median": {"n_boot": self.wm_n_boot},
            "presso": {"n_sim": self.presso_n_sim, "alpha": self.presso_alpha,
                       "n_distortion": self.presso_n_distortion},
            "mediation": {"ci_method": self.mediation_ci_method, "n_boot": self.mediation_n_boot},
            "power": {"r2": self.power_r2, "alpha": self.power_alpha},
            "seed": self.seed,
        }


@dataclass
class AnalysisReport:
    """Everything a pipeline run produced, as plain JSON-ready data."""

    data: dict
    runtime: dict  # wall-clock timestamps, thread count, output location
    tables: dict = field(default_factory=dict)  # name -> path

    def to_dict(self, with_runtime=True):
        d = copy.deepcopy(self.data)
        if with_runtime:
            d["runtime"] = dict(self.runtime)
        return d

    def to_json(self, with_runtime=True):
        return json.dumps(self.to_dict(with_runtime), indent=2, allow_nan=True)

    @property
    def timestamps(self):
        return {k: self.runtime[k] for k in ("started", "finished")}

    @property
    def stages(self):
        return self.data["stages"]


FOREST_COLUMNS = ("label", "kind", "method", "exposure_id", "outcome_id", "beta", "se",
                  "or", "or_ci_low", "or_ci_high", "pvalue", "n_snps")


def emit_forest_data(estimates, per_snp_ratios=(), path=None, delimiter="\t"):
    """Plot-ready rows (one per method, one per SNP ratio) with OR and 95% CI.

    Returns the rows as dicts and writes them when ``path`` is given.
    """
    estimates = list(estimates)
    if not estimates:
        raise MRError("emit_forest_data needs at least one estimate")

    def row(label, kind, e):
        return {"label": label, "kind": kind, "method": e.method, "exposure_id": e.exposure_id,
                "outcome_id": e.outcome_id, "beta": e.beta, "se": e.se, "or": e.or_point,
                "or_ci_low": e.or_ci_low, "or_ci_high": e.or_ci_high, "pvalue": e.pvalue,
                "n_snps": e.n_snps}

    rows = [row(e.method, "method", e) for e in estimates]
    rows += [row(rsid, "snp", e) for rsid, e in per_snp_ratios]
    if path is not None:
        _write_rows(rows, FOREST_COLUMNS, path, delimiter)
    return rows


def _write_rows(rows, columns, path, delimiter="\t"):
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])
    return path


def _cell(v):
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _load_study(spec):
    res = parse_sumstats(spec.path, spec.columns or None, spec.meta, delimiter=spec.delimiter)
    records = [normalize_alleles(r) for r in res.records]
    info = {"study_id": spec.meta.study_id, "path": str(spec.path), "n_records": len(records),
            "n_rejected": res.n_rejected, "warnings": list(res.warnings)}
    return records, res, info


def _estimate_pair(hset, cfg, methods, *, seed):
    if hset.n_kept == 0:
        raise InsufficientInstrumentsError(
            f"no instruments left for {hset.exposure_id} -> {hset.outcome_id}")
    ests, skipped = run_methods(hset, methods, n_boot=cfg.wm_n_boot, seed=seed, n_jobs=cfg.n_jobs)
    primary = ivw(hset, "random")
    if not any(e.method == "ivw_random" for e in ests):
        ests.insert(0, primary)
    out = {"n_instruments": len(hset.instruments), "n_kept": hset.n_kept,
           "estimation_set": [i.rsid for i in hset.kept],
           "estimates": [e.to_dict() for e in ests], "skipped_methods": skipped,
           "primary": primary.to_dict()}
    return out, ests, primary


def _sensitivity_pair(hset, cfg, *, seed, with_presso=True):
    k = hset.n_kept
    out = {"heterogeneity": cochran_q(hset).to_dict() if k >= 2 else None,
           "pleiotropy": egger_intercept_test(hset).to_dict() if k >= 3 else None}
    if with_presso and k >= 4:
        try:
            out["presso"] = presso(hset, n_sim=cfg.presso_n_sim, outlier_alpha=cfg.presso_alpha,
                                   seed=seed, n_distortion=cfg.presso_n_distortion,
                                   n_jobs=cfg.n_jobs).to_dict()
        except MRError as exc:
            out["presso"] = {"skipped": str(exc)}
    else:
        out["presso"] = {"skipped": "fewer than 4 instruments" if with_presso else "disabled"}
    out["leave_one_out"] = ([{"rsid": r, **e.to_dict()} for r, e in leave_one_out(hset)]
                            if k >= 3 else [])
    return out


def _audit_entries(hset):
    """Dropped instruments only; kept ones are listed in the estimation set."""
    return [{"rsid": i.rsid, "status": i.status, "reason": i.notes} for i in hset.dropped]


def run_pipeline(config, *, write=True):
    """Run extraction, harmonization, estimation, sensitivity, mediation and power.

    Mediation is computed only for mediators whose exposure->mediator and
    mediator->outcome IVW estimates both have ``p < 0.05``. When ``write`` is
    true the JSON report and delimited tables go to the output directory.

    Raises
    ------
    ConfigError
        Invalid configuration (before any stage runs).
    StageError
        A stage failed; ``partial`` holds the report built so far.
    """
    cfg = config.validate()
    started = datetime.now(timezone.utc).isoformat()
    seed = cfg.seed
    outdir = cfg.resolved_output_dir()
    data = {
        "tool": {"name": "mrflow", "version": __version__},
        "seed": seed,
        "config": cfg.to_dict(),
        "notes": ["power uses an NCP approximation (n * r2 * beta^2 * K(1-K))"],
        "stages": {},
    }
    stages = data["stages"]
    tables = {}
    if write:
        outdir.mkdir(parents=True, exist_ok=True)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DistanceOnlyClumpingWarning)

        with _Stage("load", data):
            exp_records, _, exp_info = _load_study(cfg.exposure)
            out_records, _, out_info = _load_study(cfg.outcome)
            med_loaded = [_load_study(m) for m in cfg.mediators]
            cov_loaded = [_load_study(c) for c in cfg.covariates]
            ld = LDTable.from_file(cfg.ld_path) if cfg.ld_path else None
            annotations = load_annotations(cfg.confounders_path) if cfg.confounders_path else []
            stages["load"] = {"studies": [exp_info, out_info] + [m[2] for m in med_loaded]
                              + [c[2] for c in cov_loaded],
                              "ld_source": "table" if ld is not None else "distance-only"}

        with _Stage("extract", data):
            sel_cfg = cfg.exposure.selection or cfg.selection
            sel = select_instruments(exp_records, sel_cfg, ld, annotations,
                                     cfg.confounder_p_threshold)
            if not sel.instruments:
                raise InsufficientInstrumentsError("no exposure instruments survived selection")
            stages["extract"] = {"selection": sel_cfg.to_dict(), "n_input": sel.n_input,
                                 "n_significant": sel.n_significant,
                                 "n_selected": len(sel.instruments),
                                 "instruments": [r.rsid for r in sel.instruments],
                                 "removals": sel.removal_rows()}
            if write:
                tables["removals"] = write_removals(sel.removals, outdir / "removals.tsv")

        with _Stage("harmonize", data):
            total_set = harmonize(sel.instruments, out_records, cfg.palindrome_eaf_window,
                                  exposure_meta=cfg.exposure.meta, outcome_meta=cfg.outcome.meta,
                                  drop_palindromic=cfg.drop_palindromic)
            stages["harmonize"] = {"n_instruments": len(total_set.instruments),
                                   "n_kept": total_set.n_kept,
                                   "status_counts": _status_counts(total_set),
                                   "estimation_set": [i.rsid for i in total_set.kept],
                                   "audit_log": _audit_entries(total_set),
                                   "alignment": [list(a) for a in total_set.audit
                                                 if a[1] == "aligned"]}
            if write:
                tables["instruments"] = write_harmonized(total_set, outdir / "instruments.tsv")
                tables["audit"] = write_audit(total_set, outdir / "audit.tsv")

        with _Stage("estimate", data):
            est_out, total_ests, total_ivw = _estimate_pair(total_set, cfg, cfg.methods, seed=seed)
            forest_rows = emit_forest_data(total_ests, per_snp_ratios(total_set),
                                           outdir / "forest.tsv" if write else None)
            est_out["forest"] = forest_rows
            stages["estimate"] = est_out
            if write:
                tables["forest"] = outdir / "forest.tsv"

        with _Stage("sensitivity", data):
            stages["sensitivity"] = _sensitivity_pair(total_set, cfg, seed=seed)
            if write:
                tables["loo"] = _write_rows(stages["sensitivity"]["leave_one_out"], LOO_COLUMNS,
                                            outdir / "loo.tsv")

        with _Stage("mediate", data):
            med_rows = []
            stages["mediate"] = [
                _mediator_block(spec, m_records, sel, out_records, cov_loaded, total_ivw, cfg,
                                seed, med_rows)
                for spec, (m_records, _, _) in zip(cfg.mediators, med_loaded)]
            if write and cfg.mediators:
                tables["mediation"] = _write_rows(med_rows, MEDIATION_COLUMNS,
                                                  outdir / "mediation.tsv")

        with _Stage("power", data):
            r2 = cfg.power_r2
            r2_source = "config"
            if r2 is None:
                kept = set(stages["harmonize"]["estimation_set"])
                r2 = r2_from_instruments([r for r in sel.instruments if r.rsid in kept],
                                         cfg.exposure.meta.sample_size)
                r2_source = "instruments (sum of F/(F+N-2))"
            pin = PowerInput(n_outcome=cfg.outcome.meta.sample_size, r2_instruments=float(r2),
                             beta_causal=total_ivw.beta,
                             case_fraction=cfg.outcome.meta.case_fraction,
                             alpha=cfg.power_alpha)
            ncp, pw = power_ncp(pin)
            stages["power"] = {"n_outcome": pin.n_outcome, "r2_instruments": pin.r2_instruments,
                               "r2_source": r2_source, "beta_causal": pin.beta_causal,
                               "case_fraction": pin.case_fraction, "alpha": pin.alpha,
                               "ncp": ncp, "power": pw, "approximation": "NCP"}

    runtime = {"started": started, "finished": datetime.now(timezone.utc).isoformat(),
               "n_jobs": cfg.n_jobs, "output_dir": str(outdir)}
    report = AnalysisReport(data=data, runtime=runtime,
                            tables={k: str(v) for k, v in tables.items()})
    if write:
        data["tables"] = {k: Path(v).name for k, v in sorted(tables.items())}
        report_path = outdir / "report.json"
        report_path.write_text(report.to_json(), encoding="utf-8")
        report.tables["report"] = str(report_path)
    return report


LOO_COLUMNS = ("rsid", "method", "beta", "se", "pvalue", "n_snps")
MEDIATION_COLUMNS = ("mediator", "status", "total_beta", "step1_beta", "step1_p", "step2_beta",
                     "step2_p", "indirect", "indirect_se", "ci_low", "ci_high", "proportion")


def _status_counts(hset):
    counts = {}
    for i in hset.instruments:
        counts[i.status] = counts.get(i.status, 0) + 1
    return dict(sorted(counts.items()))


def _mediator_block(spec, m_records, sel, out_records, cov_loaded, total_ivw, cfg, seed, rows):
    mid = spec.meta.study_id
    block = {"mediator": mid}
    step1_set = harmonize(sel.instruments, m_records, cfg.palindrome_eaf_window,
                          exposure_meta=cfg.exposure.meta, outcome_meta=spec.meta,
                          drop_palindromic=cfg.drop_palindromic)
    step1_out, _, step1 = _estimate_pair(step1_set, cfg, ["ivw"], seed=seed)
    step1_out["audit_log"] = _audit_entries(step1_set)
    block["step1"] = step1_out

    m_sel = select_instruments(m_records, spec.selection or cfg.selection, None, [],
                               cfg.confounder_p_threshold)
    if not m_sel.instruments:
        raise InsufficientInstrumentsError(f"no instruments for mediator {mid}")
    step2_set = harmonize(m_sel.instruments, out_records, cfg.palindrome_eaf_window,
                          exposure_meta=spec.meta, outcome_meta=cfg.outcome.meta,
                          drop_palindromic=cfg.drop_palindromic)
    step2_out, _, step2 = _estimate_pair(step2_set, cfg, cfg.methods, seed=seed)
    step2_out["n_selected"] = len(m_sel.instruments)
    step2_out["audit_log"] = _audit_entries(step2_set)
    step2_out["sensitivity"] = _sensitivity_pair(step2_set, cfg, seed=seed, with_presso=False)
    block["step2"] = step2_out

    if cov_loaded:
        union = list(dict.fromkeys([r.rsid for r in m_sel.instruments] + [
            r.rsid for c_records, _, _ in cov_loaded for r in _quick_select(c_records, cfg)]))
        mv = align_multivariable([m_records] + [c[0] for c in cov_loaded], out_records, union,
                                 [mid] + [c[2]["study_id"] for c in cov_loaded],
                                 cfg.outcome.meta.study_id)
        try:
            block["mvmr"] = {"estimates": [e.to_dict() for e in mvmr(mv)],
                             "n_snps": len(mv.rsids)}
        except MRError as exc:
            block["mvmr"] = {"skipped": str(exc)}

    row = {"mediator": mid, "total_beta": total_ivw.beta, "step1_beta": step1.beta,
           "step1_p": step1.pvalue, "step2_beta": step2.beta, "step2_p": step2.pvalue}
    if step1.pvalue < GATE_ALPHA and step2.pvalue < GATE_ALPHA:
        res = mediate(total_ivw, step1, step2, cfg.mediation_ci_method, cfg.mediation_n_boot,
                      seed, cfg.n_jobs)
        block["mediation"] = res.to_dict()
        row.update(status="computed", indirect=res.indirect, indirect_se=res.indirect_se,
                   ci_low=res.ci_low, ci_high=res.ci_high, proportion=res.proportion)
    else:
        block["mediation"] = {"skipped": "step not significant",
                              "step1_pvalue": step1.pvalue, "step2_pvalue": step2.pvalue}
        row["status"] = "skipped: step not significant"
    rows.append(row)
    return block


def _quick_select(records, cfg):
    normalized = [normalize_alleles(r) for r in records]
    return select_instruments(normalized, cfg.selection, None, [], cfg.confounder_p_threshold).instruments


class _Stage:
    """Context manager turning stage failures into StageError with partial output."""

    def __init__(self, name, data):
        self.name = name
        self.data = data

    def __enter__(self):
        logger.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None or isinstance(exc, StageError):
            return False
        if isinstance(exc, (MRError, ValueError, OSError, ZeroDivisionError)):
            raise StageError(self.name, str(exc), partial=copy.deepcopy(self.data)) from exc
        return False


__all__ = ["PipelineConfig", "StudySpec", "AnalysisReport", "run_pipeline", "emit_forest_data",
           "MrEstimate", "OUTPUT_DIR_ENV"]
