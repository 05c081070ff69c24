import json
import math

import pytest
import yaml

from mrflow.cli import main
from mrflow.estimators import MrEstimate
from mrflow.exceptions import ConfigError, MRError, StageError
from mrflow.pipeline import OUTPUT_DIR_ENV, PipelineConfig, emit_forest_data, run_pipeline
from mrflow.sumstats import write_sumstats
from mrflow.synthetic import FixtureParams, generate_fixture, write_fixture


@pytest.fixture
def fixture_config(tmp_path):
    return write_fixture(generate_fixture(3), tmp_path / "fx")


def test_forest_rows():
    rows = emit_forest_data([MrEstimate("ivw_random", 0.926, 0.281, 0.001, 15)])
    (row,) = rows
    assert row["or"] == pytest.approx(2.525, abs=0.002)
    assert (row["or_ci_low"], row["or_ci_high"]) == pytest.approx((1.456, 4.379), abs=0.001)
    fvc = emit_forest_data([MrEstimate("ivw_random", -0.115, 0.09, 0.2, 10)])[0]
    assert fvc["or"] == pytest.approx(0.892, abs=0.001)
    null = emit_forest_data([MrEstimate("ivw_random", 0.0, 0.2, 1.0, 10)])[0]
    assert null["or"] == 1.0
    assert math.log(null["or_ci_low"]) == pytest.approx(-math.log(null["or_ci_high"]), rel=1e-15)


def test_forest_includes_snp_rows(tmp_path):
    e = MrEstimate("ivw_random", 0.5, 0.1, 0.001, 2)
    snp = MrEstimate("wald", 0.4, 0.2, 0.05, 1)
    path = tmp_path / "forest.tsv"
    rows = emit_forest_data([e], [("rs1", snp), ("rs2", snp)], path)
    assert [r["kind"] for r in rows] == ["method", "snp", "snp"]
    lines = path.read_text().splitlines()
    assert lines[0].split("\t")[:3] == ["label", "kind", "method"]
    assert len(lines) == 4
    with pytest.raises(MRError):
        emit_forest_data([])


def test_end_to_end_report(fixture_config):
    cfg = PipelineConfig.from_file(fixture_config)
    report = run_pipeline(cfg)
    d = json.loads((cfg.resolved_output_dir() / "report.json").read_text())
    assert d["seed"] == 3 and d["config"]["seed"] == 3
    assert d["tool"]["name"] == "mrflow"
    assert set(d["stages"]) == {"load", "extract", "harmonize", "estimate", "sensitivity",
                                "mediate", "power"}
    med = d["stages"]["mediate"][0]["mediation"]
    assert "indirect" in med and med["significant"]
    assert 0.0 < med["proportion"] < 0.15
    assert report.timestamps["started"] <= report.timestamps["finished"]
    for name in ("instruments", "audit", "removals", "forest", "loo", "mediation"):
        assert (cfg.resolved_output_dir() / d["tables"][name]).is_file()


def test_completeness(fixture_config):
    report = run_pipeline(PipelineConfig.from_file(fixture_config), write=False)
    st = report.stages
    extracted = st["extract"]["instruments"]
    kept = st["harmonize"]["estimation_set"]
    audited = [a["rsid"] for a in st["harmonize"]["audit_log"]]
    assert sorted(kept + audited) == sorted(extracted)
    assert not set(kept) & set(audited)
    statuses = {a["status"] for a in st["harmonize"]["audit_log"]}
    assert statuses == {"dropped_palindromic", "dropped_incompatible", "dropped_missing_in_outcome"}
    removed = {(r["stage"], r["reason"]) for r in st["extract"]["removals"]}
    assert ("confounder", "body mass index") in removed
    assert any(stage == "clump" for stage, _ in removed)


def test_gating_skips_nonsignificant_mediator(tmp_path):
    path = write_fixture(generate_fixture(0, FixtureParams(beta2=0.0)), tmp_path)
    report = run_pipeline(PipelineConfig.from_file(path))
    block = report.stages["mediate"][0]
    assert block["mediation"]["skipped"] == "step not significant"
    assert block["step2"]["primary"]["pvalue"] >= 0.05
    table = (tmp_path / "out" / "mediation.tsv").read_text()
    assert "skipped: step not significant" in table


def test_gating_rule_holds_whenever_mediation_is_reported(tmp_path):
    for seed in range(3):
        path = write_fixture(generate_fixture(seed), tmp_path / str(seed))
        for block in run_pipeline(PipelineConfig.from_file(path), write=False).stages["mediate"]:
            p1 = block["step1"]["primary"]["pvalue"]
            p2 = block["step2"]["primary"]["pvalue"]
            assert ("indirect" in block["mediation"]) == (p1 < 0.05 and p2 < 0.05)


def test_determinism_across_threads(fixture_config, tmp_path):
    outputs = []
    for jobs in (1, 4):
        cfg = PipelineConfig.from_file(fixture_config)
        cfg.n_jobs = jobs
        cfg.output_dir = tmp_path / f"run{jobs}"
        run_pipeline(cfg)
        files = sorted(p.name for p in cfg.output_dir.iterdir())
        data = {}
        for name in files:
            text = (cfg.output_dir / name).read_text()
            if name == "report.json":
                obj = json.loads(text)
                obj.pop("runtime")
                text = json.dumps(obj)
            data[name] = text
        outputs.append(data)
    assert outputs[0] == outputs[1]


def test_output_dir_from_environment(fixture_config, tmp_path, monkeypatch):
    raw = yaml.safe_load(fixture_config.read_text())
    raw.pop("output_dir")
    path = fixture_config.parent / "noout.yaml"
    path.write_text(yaml.safe_dump(raw))
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "envout"))
    cfg = PipelineConfig.from_file(path)
    run_pipeline(cfg)
    assert (tmp_path / "envout" / "report.json").is_file()


def test_config_validation(fixture_config):
    raw = yaml.safe_load(fixture_config.read_text())
    base = fixture_config.parent
    bad = dict(raw, exposure=dict(raw["exposure"], path="nope.tsv"))
    with pytest.raises(ConfigError, match="not found"):
        PipelineConfig.from_dict(bad, base).validate()
    with pytest.raises(ConfigError, match="unknown config keys"):
        PipelineConfig.from_dict(dict(raw, bogus=1), base)
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({k: v for k, v in raw.items() if k != "outcome"}, base)
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(dict(raw, mediation={"ci_method": "bca"}), base).validate()
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(dict(raw, methods=["mode"]), base).validate()
    cfg = PipelineConfig.from_dict(raw, base)
    assert cfg.to_dict()["presso"]["n_sim"] == raw["presso"]["n_sim"]


def test_stage_failure_keeps_partial_artifacts(tmp_path):
    fx = generate_fixture(1)
    fx.outcome = [r.__class__(**{**r.__dict__, "rsid": r.rsid + "x"}) for r in fx.outcome]
    path = write_fixture(fx, tmp_path)
    with pytest.raises(StageError) as info:
        run_pipeline(PipelineConfig.from_file(path))
    assert info.value.stage == "estimate"
    assert "stage 'estimate' failed" in str(info.value)
    assert "harmonize" in info.value.partial["stages"]
    assert info.value.partial["stages"]["harmonize"]["n_kept"] == 0


# CLI

def test_cli_pipeline_and_exit_codes(fixture_config, tmp_path, capsys):
    out = tmp_path / "cli"
    assert main(["pipeline", str(fixture_config), "--output-dir", str(out), "--seed", "5"]) == 0
    assert json.loads((out / "report.json").read_text())["seed"] == 5
    assert main(["pipeline", str(tmp_path / "missing.yaml")]) == 2
    fx = generate_fixture(1)
    fx.outcome = [r.__class__(**{**r.__dict__, "rsid": r.rsid + "x"}) for r in fx.outcome]
    broken = write_fixture(fx, tmp_path / "broken")
    assert main(["pipeline", str(broken)]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["mr"])
    assert exc.value.code == 2


def test_cli_subcommands(fixture_config, tmp_path, capsys):
    d = fixture_config.parent
    ex = tmp_path / "ex"
    assert main(["extract-instruments", "--exposure", str(d / "exposure.tsv"),
                 "--confounders", str(d / "confounders.tsv"), "--output-dir", str(ex)]) == 0
    h = tmp_path / "h"
    assert main(["harmonize", "--exposure", str(ex / "instruments.tsv"),
                 "--outcome", str(d / "outcome.tsv"), "--output-dir", str(h)]) == 0
    harmonized = str(h / "harmonized.tsv")
    capsys.readouterr()
    assert main(["mr", "--harmonized", harmonized, "--methods", "ivw,egger,weighted-median",
                 "--seed", "42", "--forest", str(tmp_path / "forest.tsv")]) == 0
    mr = json.loads(capsys.readouterr().out)
    assert [e["method"] for e in mr["estimates"]] == ["ivw_random", "egger", "egger_intercept",
                                                      "weighted_median"]
    assert (tmp_path / "forest.tsv").is_file()
    assert main(["presso", "--harmonized", harmonized, "--n-sim", "2000", "--seed", "42",
                 "--json", str(tmp_path / "presso.json")]) == 0
    assert json.loads((tmp_path / "presso.json").read_text())["n_sim"] == 2000
    assert main(["loo", "--harmonized", harmonized]) == 0
    loo = capsys.readouterr().out.splitlines()
    assert loo[0].startswith("rsid\tmethod") and len(loo) > 10
    med = tmp_path / "med.json"
    med.write_text(json.dumps({"beta": -0.2, "se": 0.02}))
    assert main(["mediate", "--total", '{"beta": 1.058, "se": 0.1}', "--step1", str(med),
                 "--step2=-0.271,0.03", "--ci", "bootstrap", "--n-boot", "1000", "--seed", "7"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["proportion"] == pytest.approx(0.0512287, abs=1e-6) and res["seed"] == 7
    assert main(["power", "--n", "85716", "--case-fraction", "0.34", "--r2", "0.01",
                 "--beta", "0.926"]) == 0
    assert json.loads(capsys.readouterr().out)["power"] > 0.99
    fx = generate_fixture(3)
    write_sumstats(fx.mediator, tmp_path / "mediator_canonical.tsv")
    assert main(["mvmr", "--exposure", str(d / "exposure.tsv"), "--exposure-id", "x",
                 "--exposure", str(tmp_path / "mediator_canonical.tsv"), "--exposure-id", "m",
                 "--outcome", str(d / "outcome.tsv")]) == 0
    mv = json.loads(capsys.readouterr().out)
    assert [e["exposure_id"] for e in mv["estimates"]] == ["x", "m"]
    assert main(["mvmr", "--exposure", str(d / "exposure.tsv"), "--exposure-id", "x",
                 "--exposure", str(d / "exposure.tsv"), "--exposure-id", "y",
                 "--outcome", str(d / "outcome.tsv")]) == 2  # collinear exposures
    assert main(["power", "--n", "0", "--r2", "0.01", "--beta", "0.5"]) == 2


def test_cli_column_mapping(fixture_config, tmp_path):
    d = fixture_config.parent
    args = ["extract-instruments", "--exposure", str(d / "mediator.tsv"), "--output-dir",
            str(tmp_path)]
    assert main(args) == 2  # mediator file uses non-canonical headers
    cols = ["--col-rsid", "SNP", "--col-chrom", "CHR", "--col-pos", "BP", "--col-effect-allele",
            "A1", "--col-other-allele", "A2", "--col-eaf", "FRQ", "--col-beta", "BETA",
            "--col-se", "SE", "--col-pvalue", "P", "--col-sample-size", "N"]
    assert main(args + cols) == 0
    assert (tmp_path / "instruments.tsv").read_text().count("\n") > 10
