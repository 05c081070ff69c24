import random
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import rec
from mrflow.exceptions import MRError
from mrflow.selection import (ConfounderAnnotation, DistanceOnlyClumpingWarning, LDTable,
                              SelectionConfig, clump, exclude_confounder_hits, f_statistic,
                              filter_weak, is_weak, load_annotations, select_instruments,
                              threshold_by_pvalue)
from oracles import greedy_clump


def random_records(rng, n, n_chrom=3, span_kb=40_000):
    return [rec(rsid=f"rs{i}", p=float(10 ** -rng.uniform(1, 20)), chrom=str(rng.integers(1, n_chrom + 1)),
                pos=int(rng.integers(1, span_kb * 1000)), beta=float(rng.normal(0, 0.1)))
            for i in range(n)]


def random_ld(rng, records, density=0.3):
    pairs = []
    for i, a in enumerate(records):
        for b in records[i + 1:]:
            if rng.random() < density:
                pairs.append((a.rsid, b.rsid, float(rng.random() * 0.01)))
    return LDTable(pairs)


def test_threshold_examples():
    rs = [rec(rsid="a", p=1e-9), rec(rsid="b", p=1e-7)]
    assert [r.rsid for r in threshold_by_pvalue(rs, 5e-8)] == ["a"]
    assert [r.rsid for r in threshold_by_pvalue(rs, 5e-6)] == ["a", "b"]


def test_threshold_matches_linear_scan_on_10000_records():
    rng = np.random.default_rng(1)
    rs = [rec(rsid=f"rs{i}", p=float(v)) for i, v in enumerate(rng.uniform(1e-12, 1, 10_000) ** 4)]
    expected = []
    for r in rs:
        if r.pvalue < 5e-8:
            expected.append(r)
    got = threshold_by_pvalue(rs, 5e-8)
    assert got == expected
    assert threshold_by_pvalue(got, 5e-8) == got


def test_clump_distance_only():
    a = rec(rsid="a", p=1e-10, pos=1_000_000)
    b = rec(rsid="b", p=1e-9, pos=6_000_000)
    with pytest.warns(DistanceOnlyClumpingWarning):
        out = clump([b, a], SelectionConfig(clump_window_kb=10_000))
    assert [r.rsid for r in out] == ["a"]


def test_clump_with_ld_keeps_independent_pair():
    a = rec(rsid="a", p=1e-10, pos=1_000_000)
    b = rec(rsid="b", p=1e-9, pos=6_000_000)
    ld = LDTable([("a", "b", 0.0)])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = clump([a, b], SelectionConfig(r2_threshold=0.001), ld)
    assert {r.rsid for r in out} == {"a", "b"}


def test_clump_requires_positions():
    with pytest.raises(MRError, match="chrom/pos"):
        clump([rec(pos=None)], ld=LDTable())


@pytest.mark.parametrize("use_ld", [False, True])
def test_clump_matches_reference_on_random_sets(use_ld):
    rng = np.random.default_rng(11 if use_ld else 10)
    cfg = SelectionConfig(r2_threshold=0.005, clump_window_kb=5_000)
    for _ in range(20):
        rs = random_records(rng, 50)
        ld = random_ld(rng, rs) if use_ld else None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DistanceOnlyClumpingWarning)
            got = clump(rs, cfg, ld)
        want = greedy_clump(rs, cfg.clump_window_kb, cfg.r2_threshold, ld.r2 if ld else None)
        assert sorted(r.rsid for r in got) == sorted(r.rsid for r in want)


def test_clump_output_is_antichain_and_order_independent():
    rng = np.random.default_rng(5)
    cfg = SelectionConfig(r2_threshold=0.005, clump_window_kb=5_000)
    rs = random_records(rng, 80)
    ld = random_ld(rng, rs)
    out = clump(rs, cfg, ld)
    for i, a in enumerate(out):
        for b in out[i + 1:]:
            linked = (a.chrom == b.chrom and abs(a.pos - b.pos) <= 5_000_000
                      and ld.r2(a.rsid, b.rsid) >= cfg.r2_threshold)
            assert not linked
    shuffled = list(rs)
    random.Random(0).shuffle(shuffled)
    assert clump(shuffled, cfg, ld) == out


def test_ld_table_from_file(tmp_path):
    p = tmp_path / "ld.tsv"
    p.write_text("rsid_a\trsid_b\tr2\nrs1\trs2\t0.4\n")
    ld = LDTable.from_file(p)
    assert ld.r2("rs2", "rs1") == 0.4
    assert ld.r2("rs1", "rs3") == 0.0


def test_f_statistic_examples():
    assert f_statistic(rec(beta=0.20, se=0.02)) == pytest.approx(100.0, rel=1e-12)
    weak = rec(beta=0.02, se=0.02)
    assert f_statistic(weak) == pytest.approx(1.0, rel=1e-12)
    assert is_weak(weak, 10)
    kept, removed = filter_weak([weak, rec(rsid="rs2", beta=0.2)], 10)
    assert [r.rsid for r in kept] == ["rs2"]
    assert removed[0].stage == "f_statistic"


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10, allow_nan=False), st.floats(1e-4, 10))
def test_f_statistic_matches_z_squared(beta, se):
    z = beta / se
    assert f_statistic(rec(beta=beta, se=se)) == pytest.approx(z * z, rel=1e-12, abs=1e-300)


def test_confounder_example():
    r = rec(rsid="rs62177307")
    ann = [ConfounderAnnotation("rs62177307", "height", 1e-12, "local")]
    kept, removed = exclude_confounder_hits([r, rec(rsid="rs2")], ann, 5e-8)
    assert [k.rsid for k in kept] == ["rs2"]
    assert removed == [(r, "height")]
    assert exclude_confounder_hits([r], [], 5e-8) == ([r], [])


def test_confounder_partition_on_random_tables():
    rng = np.random.default_rng(2)
    rs = [rec(rsid=f"rs{i}") for i in range(100)]
    for _ in range(20):
        ann = [ConfounderAnnotation(f"rs{rng.integers(0, 150)}", str(rng.choice(["bmi", "smoking"])),
                                    float(10 ** -rng.uniform(0, 15))) for _ in range(40)]
        kept, removed = exclude_confounder_hits(rs, ann, 5e-8)
        removed_ids = {r.rsid for r, _ in removed}
        assert {r.rsid for r in kept} | removed_ids == {r.rsid for r in rs}
        assert not {r.rsid for r in kept} & removed_ids
        hits = {a.rsid for a in ann if a.pvalue < 5e-8}
        assert removed_ids == hits & {r.rsid for r in rs}


def test_load_annotations(tmp_path):
    p = tmp_path / "a.tsv"
    p.write_text("rsid\tassociated_trait\tpvalue\nrs1\theight\t1e-12\n")
    (a,) = load_annotations(p)
    assert (a.rsid, a.associated_trait, a.pvalue, a.source) == ("rs1", "height", 1e-12, "local")


def test_selection_config_validation():
    for kwargs in ({"p_threshold": 0}, {"r2_threshold": 2}, {"clump_window_kb": 0}, {"f_min": -1}):
        with pytest.raises(MRError):
            SelectionConfig(**kwargs)


def test_select_instruments_logs_every_removal():
    rs = [rec(rsid="lead", p=1e-20, beta=0.2, pos=1_000_000),
          rec(rsid="near", p=1e-12, beta=0.2, pos=2_000_000),
          rec(rsid="weak", p=1e-9, beta=0.02, se=0.01, chrom="2"),
          rec(rsid="conf", p=1e-10, beta=0.2, chrom="3"),
          rec(rsid="null", p=0.3, chrom="4")]
    ann = [ConfounderAnnotation("conf", "smoking", 1e-9)]
    with pytest.warns(DistanceOnlyClumpingWarning):
        res = select_instruments(rs, SelectionConfig(), None, ann)
    assert [r.rsid for r in res.instruments] == ["lead"]
    assert {(r.rsid, r.stage) for r in res.removals} == {
        ("near", "clump"), ("weak", "f_statistic"), ("conf", "confounder")}
    assert all(r.reason for r in res.removals)
    assert (res.n_input, res.n_significant) == (5, 4)
