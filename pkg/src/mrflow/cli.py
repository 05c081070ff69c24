"""Command-line interface.

Exit codes: 0 success, 2 validation failure (bad input or config), 3 stage failure.
"""

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import yaml

from . import __version__
from .estimators import (MrEstimate, align_multivariable, mvmr, normal_pvalue, per_snp_ratios,
                         run_methods)
from .exceptions import MRError, StageError
from .harmonize import (DEFAULT_PALINDROME_WINDOW, harmonize, read_harmonized, write_audit,
                        write_harmonized)
from .mediation import PowerInput, mediate, power_ncp
from .pipeline import OUTPUT_DIR_ENV, PipelineConfig, emit_forest_data, run_pipeline
from .selection import (DistanceOnlyClumpingWarning, LDTable, SelectionConfig, load_annotations,
                        select_instruments, write_removals)
from .sensitivity import cochran_q, egger_intercept_test, leave_one_out, presso
from .sumstats import (CANONICAL_COLUMNS, StudyMeta, normalize_alleles, parse_sumstats,
                       write_sumstats)

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE = 0, 2, 3
logger = logging.getLogger("mrflow")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _add_columns(p, prefix=""):
    flag = prefix.replace("_", "-")
    g = p.add_argument_group(f"{prefix or 'input '}column mapping")
    for c in CANONICAL_COLUMNS:
        g.add_argument(f"--{flag}col-{c.replace('_', '-')}", dest=f"{prefix}col_{c}",
                       metavar="NAME", help=f"header of the {c} column")
    g.add_argument(f"--{flag}sep", dest=f"{prefix}sep", default=None,
                   help="field delimiter (auto-detected by default)")


def _column_map(args, prefix=""):
    m = {c: getattr(args, f"{prefix}col_{c}") for c in CANONICAL_COLUMNS
         if getattr(args, f"{prefix}col_{c}", None)}
    return m or None


def _read(path, args, prefix=""):
    res = parse_sumstats(path, _column_map(args, prefix),
                         delimiter=_sep(getattr(args, f"{prefix}sep", None)))
    for w in res.warnings:
        logger.warning(w)
    if res.rejects:
        logger.warning("%s: %d row(s) rejected", path, res.n_rejected)
    return [normalize_alleles(r) for r in res.records]


def _sep(value):
    return {"tab": "\t", "\\t": "\t", "comma": ",", "space": " "}.get(value, value)


def _out_dir(args):
    d = Path(args.output_dir or os.environ.get(OUTPUT_DIR_ENV, "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, allow_nan=True)
    if path is None or str(path) == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")
        logger.info("wrote %s", path)


def _hset_from_args(args):
    return read_harmonized(args.harmonized, exposure_meta=_meta(args.exposure_id),
                           outcome_meta=_meta(args.outcome_id))


def _meta(study_id):
    return StudyMeta(study_id=study_id, trait_name=study_id, sample_size=1)


# subcommands ---------------------------------------------------------------

def cmd_extract(args):
    records = _read(args.input, args)
    cfg = SelectionConfig(p_threshold=args.p_threshold, r2_threshold=args.r2_threshold,
                          clump_window_kb=args.clump_kb, f_min=args.f_min)
    ld = LDTable.from_file(args.ld) if args.ld else None
    ann = load_annotations(args.confounders) if args.confounders else []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DistanceOnlyClumpingWarning)
        sel = select_instruments(records, cfg, ld, ann, args.confounder_p)
    for w in caught:
        logger.warning(str(w.message))
    out = _out_dir(args)
    write_sumstats(sel.instruments, out / "instruments.tsv")
    write_removals(sel.removals, out / "removals.tsv")
    print(f"{len(sel.instruments)} instruments from {sel.n_significant} significant of "
          f"{sel.n_input} records; {len(sel.removals)} removed")
    return EXIT_OK


def cmd_harmonize(args):
    exposure = _read(args.exposure, args)
    outcome = _read(args.outcome, args, prefix="outcome_")
    hset = harmonize(exposure, outcome, args.palindrome_window,
                     exposure_meta=_meta(args.exposure_id), outcome_meta=_meta(args.outcome_id),
                     drop_palindromic=args.drop_palindromic)
    out = _out_dir(args)
    write_harmonized(hset, out / "harmonized.tsv")
    write_audit(hset, out / "audit.tsv")
    print(f"{hset.n_kept} of {len(hset.instruments)} instruments kept")
    return EXIT_OK


def cmd_mr(args):
    hset = _hset_from_args(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    ests, skipped = run_methods(hset, methods, n_boot=args.n_boot, seed=args.seed,
                                n_jobs=args.n_jobs)
    result = {"seed": args.seed, "estimates": [e.to_dict() for e in ests], "skipped": skipped}
    if hset.n_kept >= 2:
        result["heterogeneity"] = cochran_q(hset).to_dict()
    if hset.n_kept >= 3:
        result["pleiotropy"] = egger_intercept_test(hset).to_dict()
    if args.forest:
        emit_forest_data(ests, per_snp_ratios(hset), args.forest)
    _write_json(result, args.json)
    return EXIT_OK


def cmd_presso(args):
    hset = _hset_from_args(args)
    rep = presso(hset, n_sim=args.n_sim, outlier_alpha=args.alpha, seed=args.seed,
                 n_distortion=args.n_distortion, n_jobs=args.n_jobs)
    _write_json(rep.to_dict(), args.json)
    return EXIT_OK


def cmd_loo(args):
    hset = _hset_from_args(args)
    rows = [{"rsid": r, **e.to_dict()} for r, e in leave_one_out(hset, args.mode)]
    cols = ("rsid", "method", "beta", "se", "pvalue", "n_snps")
    out = sys.stdout if args.output == "-" else open(args.output, "w", encoding="utf-8")
    try:
        out.write("\t".join(cols) + "\n")
        for r in rows:
            out.write("\t".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                                for c in cols) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_mvmr(args):
    if len(args.exposure) != len(args.exposure_id):
        raise MRError("give one --exposure-id per --exposure")
    exposures = [_read(p, args) for p in args.exposure]
    outcome = _read(args.outcome, args, prefix="outcome_")
    if args.instruments:
        rsids = [ln.split()[0] for ln in Path(args.instruments).read_text().splitlines()[1:]
                 if ln.strip()]
    else:
        cfg = SelectionConfig(p_threshold=args.p_threshold)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DistanceOnlyClumpingWarning)
            rsids = list(dict.fromkeys(r.rsid for recs in exposures
                                       for r in select_instruments(recs, cfg).instruments))
    mv = align_multivariable(exposures, outcome, rsids, args.exposure_id, args.outcome_id)
    ests = mvmr(mv, args.mode)
    _write_json({"n_snps": len(mv.rsids), "estimates": [e.to_dict() for e in ests],
                 "audit": [list(a) for a in mv.audit]}, args.json)
    return EXIT_OK


def _estimate_arg(text, label):
    """Parse an estimate from a JSON file, inline JSON, or ``beta,se[,p]``."""
    if text.lstrip().startswith("{") or Path(text).is_file():
        raw = text if text.lstrip().startswith("{") else Path(text).read_text(encoding="utf-8")
        try:
            d = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MRError(f"--{label}: invalid JSON ({exc})") from exc
        if "beta" not in d or "se" not in d:
            raise MRError(f"--{label}: JSON needs 'beta' and 'se'")
        beta, se = float(d["beta"]), float(d["se"])
        p = float(d["pvalue"]) if d.get("pvalue") is not None else normal_pvalue(beta, se)
        return MrEstimate(d.get("method", "ivw_random"), beta, se, p, int(d.get("n_snps", 1)))
    try:
        parts = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise MRError(f"--{label} expects beta,se[,p]") from exc
    if len(parts) not in (2, 3):
        raise MRError(f"--{label} expects beta,se[,p]")
    beta, se = parts[:2]
    p = parts[2] if len(parts) == 3 else normal_pvalue(beta, se)
    return MrEstimate("ivw_random", beta, se, p, 1)


def cmd_mediate(args):
    total = _estimate_arg(args.total, "total")
    s1 = _estimate_arg(args.step1, "step1")
    s2 = _estimate_arg(args.step2, "step2")
    res = mediate(total, s1, s2, args.ci_method, args.n_boot, args.seed, args.n_jobs)
    _write_json(res.to_dict(), args.json)
    return EXIT_OK


def cmd_power(args):
    k = args.case_fraction
    if k is None and args.n_cases is not None:
        k = args.n_cases / args.n_outcome
    inp = PowerInput(args.n_outcome, args.r2, args.beta, k, args.alpha)
    ncp, pw = power_ncp(inp)
    _write_json({"ncp": ncp, "power": pw, "n_outcome": inp.n_outcome,
                 "r2_instruments": inp.r2_instruments, "beta_causal": inp.beta_causal,
                 "case_fraction": inp.case_fraction, "alpha": inp.alpha,
                 "approximation": "NCP"}, args.json)
    return EXIT_OK


def cmd_pipeline(args):
    path = Path(args.config)
    cfg = PipelineConfig.from_file(path)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.n_jobs is not None:
        cfg.n_jobs = args.n_jobs
    if args.output_dir is not None:
        cfg.output_dir = Path(args.output_dir)
    if args.presso_n_sim is not None:
        cfg.presso_n_sim = args.presso_n_sim
    if args.n_boot is not None:
        cfg.mediation_n_boot = args.n_boot
    if args.ci_method is not None:
        cfg.mediation_ci_method = args.ci_method
    if args.palindrome_window is not None:
        cfg.palindrome_eaf_window = args.palindrome_window
    if args.drop_palindromic:
        cfg.drop_palindromic = True
    report = run_pipeline(cfg)
    print(report.tables.get("report", ""))
    return EXIT_OK


def cmd_simulate(args):
    from .synthetic import generate_fixture, write_fixture
    path = write_fixture(generate_fixture(args.seed), args.directory, fast=not args.full)
    print(path)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="mrflow", description="Two-sample Mendelian randomization toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=False, jobs=False, json_out=False):
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        if jobs:
            sp.add_argument("--n-jobs", type=int, default=1)
        if json_out:
            sp.add_argument("--json", default="-", help="output JSON path ('-' for stdout)")

    def hset_args(sp):
        sp.add_argument("--harmonized", required=True, help="table written by 'mrflow harmonize'")
        sp.add_argument("--exposure-id", default="exposure")
        sp.add_argument("--outcome-id", default="outcome")

    sp = sub.add_parser("extract-instruments", help="threshold, clump and screen instruments")
    sp.add_argument("--exposure", dest="input", required=True, help="exposure summary statistics")
    sp.add_argument("--p-threshold", type=float, default=5e-8)
    sp.add_argument("--r2", "--r2-threshold", dest="r2_threshold", type=float, default=0.001)
    sp.add_argument("--window-kb", "--clump-kb", dest="clump_kb", type=float, default=10_000)
    sp.add_argument("--f-min", type=float, default=10.0)
    sp.add_argument("--ld", help="LD table with rsid_a, rsid_b, r2")
    sp.add_argument("--confounders", help="annotation table with rsid, associated_trait, pvalue")
    sp.add_argument("--confounder-p", type=float, default=5e-8)
    sp.add_argument("--output-dir")
    _add_columns(sp)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("harmonize", help="align exposure instruments to an outcome study")
    sp.add_argument("--exposure", required=True, help="selected instruments")
    sp.add_argument("--outcome", required=True, help="outcome summary statistics")
    sp.add_argument("--exposure-id", default="exposure")
    sp.add_argument("--outcome-id", default="outcome")
    sp.add_argument("--palindrome-window", type=float, default=DEFAULT_PALINDROME_WINDOW)
    sp.add_argument("--drop-palindromic", action="store_true")
    sp.add_argument("--output-dir")
    _add_columns(sp)
    _add_columns(sp, prefix="outcome_")
    sp.set_defaults(func=cmd_harmonize)

    sp = sub.add_parser("mr", help="IVW, MR-Egger and weighted-median estimates")
    hset_args(sp)
    sp.add_argument("--methods", default="ivw,egger,weighted-median",
                    help="comma-separated: ivw, ivw-fixed, egger, weighted-median")
    sp.add_argument("--n-boot", type=int, default=1000)
    sp.add_argument("--forest", help="write plot-ready forest table here")
    common(sp, seed=True, jobs=True, json_out=True)
    sp.set_defaults(func=cmd_mr)

    sp = sub.add_parser("presso", help="pleiotropy residual-sum and outlier test")
    hset_args(sp)
    sp.add_argument("--n-sim", type=int, default=5000)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--n-distortion", type=int, default=1000)
    common(sp, seed=True, jobs=True, json_out=True)
    sp.set_defaults(func=cmd_presso)

    sp = sub.add_parser("loo", help="leave-one-out IVW")
    hset_args(sp)
    sp.add_argument("--mode", choices=("random", "fixed"), default="random")
    sp.add_argument("--output", default="-", help="delimited LOO table ('-' for stdout)")
    sp.set_defaults(func=cmd_loo)

    sp = sub.add_parser("mvmr", help="multivariable IVW")
    sp.add_argument("--exposure", action="append", required=True)
    sp.add_argument("--exposure-id", action="append", required=True)
    sp.add_argument("--outcome", required=True)
    sp.add_argument("--outcome-id", default="outcome")
    sp.add_argument("--instruments", help="file whose first column lists rsids (header skipped)")
    sp.add_argument("--p-threshold", type=float, default=5e-8)
    sp.add_argument("--mode", choices=("random", "fixed"), default="random")
    _add_columns(sp)
    _add_columns(sp, prefix="outcome_")
    common(sp, json_out=True)
    sp.set_defaults(func=cmd_mvmr)

    sp = sub.add_parser("mediate", help="indirect effect and mediated proportion")
    est_help = "estimate as a JSON file, inline JSON, or BETA,SE[,P]"
    sp.add_argument("--total", required=True, help=est_help)
    sp.add_argument("--step1", required=True, help=est_help)
    sp.add_argument("--step2", required=True, help=est_help)
    sp.add_argument("--ci", "--ci-method", dest="ci_method", choices=("delta", "bootstrap"),
                    default="delta")
    sp.add_argument("--n-boot", type=int, default=10_000)
    common(sp, seed=True, jobs=True, json_out=True)
    sp.set_defaults(func=cmd_mediate)

    sp = sub.add_parser("power", help="NCP-based power of the causal test")
    sp.add_argument("--n", "--n-outcome", dest="n_outcome", type=int, required=True)
    sp.add_argument("--r2", type=float, required=True)
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--case-fraction", type=float)
    sp.add_argument("--n-cases", type=int)
    sp.add_argument("--alpha", type=float, default=0.05)
    common(sp, json_out=True)
    sp.set_defaults(func=cmd_power)

    sp = sub.add_parser("pipeline", help="run the full workflow from a YAML config")
    sp.add_argument("config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-jobs", type=int)
    sp.add_argument("--output-dir")
    sp.add_argument("--presso-n-sim", type=int)
    sp.add_argument("--n-boot", type=int, help="mediation bootstrap draws")
    sp.add_argument("--ci-method", choices=("delta", "bootstrap"))
    sp.add_argument("--palindrome-window", type=float)
    sp.add_argument("--drop-palindromic", action="store_true")
    sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("simulate", help="write a synthetic three-study fixture and config")
    sp.add_argument("directory")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--full", action="store_true", help="production simulation counts")
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (MRError, yaml.YAMLError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
