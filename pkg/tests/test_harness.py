from __future__ import annotations

import json
from pathlib import Path

import pytest

from numtrunc.harness import (
    AccuracyReport, CorpusError, classify, load_manifest, reproduce, run_corpus, shipped_manifest,
)

from conftest import CORPUS, corpus_program


@pytest.mark.parametrize("expect, expected, warned, verified, outcome", [
    (False, set(), [], [], "TN"),
    (False, set(), [3], [True], "FP"),
    (True, {5}, [5], [True], "TP"),
    (True, {5}, [5], [False], "FN"),                 # warned but not reproduced
    (True, {5}, [], [], "FN"),
    (True, {5}, [5, 9], [True, True], "FP"),         # extra warning elsewhere
    (True, {5, 7}, [5], [True], "FN"),               # one expected site missing
    (True, set(), [2], [True], "TP"),                # location unknown: any verified warning
])
def test_classify(expect, expected, warned, verified, outcome):
    assert classify(expect, expected, warned, verified) == outcome


def _write_manifest(tmp_path: Path, lines: list[str]) -> Path:
    for name in ("clean_concrete", "clean_width_preserving"):
        (tmp_path / f"{name}.asm").write_text((CORPUS / f"{name}.asm").read_text())
        (tmp_path / f"{name}.bin").write_bytes((CORPUS / "seeds" / f"{name}.bin").read_bytes())
    path = tmp_path / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_always_warning_stub_scores_zero(tmp_path):
    manifest = _write_manifest(tmp_path, [
        "clean_concrete.asm, clean_concrete.bin, expect=clean",
        "clean_width_preserving.asm, clean_width_preserving.bin, expect=clean",
    ])

    def always_warn(program, data, out_dir):
        rec = {"insn": 0, "line": 1, "kind": "signed", "bits": [8, 15], "verdict": "sat", "input": None}
        return [rec], None

    report = run_corpus(manifest, always_warn, tmp_path / "out")
    assert report.counts == {"TP": 0, "FP": 2, "FN": 0, "TN": 0}
    assert report.accuracy == 0.0 and report.true_negative_rate == 0.0
    assert report.true_positive_rate == 0.0          # no error cases: vacuous rate reported as 0


def test_empty_manifest_is_an_error(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("# nothing here\n\n")
    with pytest.raises(CorpusError, match="no cases"):
        load_manifest(path)


@pytest.mark.parametrize("line, fragment", [
    ("a.asm, a.bin", "expected"),
    ("clean_concrete.asm, clean_concrete.bin, expect=maybe", "expect must be"),
    ("clean_concrete.asm, clean_concrete.bin, expect", "bad option"),
    ("missing.asm, clean_concrete.bin, expect=clean", "missing file"),
])
def test_bad_manifest_lines(tmp_path, line, fragment):
    with pytest.raises(CorpusError, match=fragment):
        load_manifest(_write_manifest(tmp_path, [line]))


def test_shipped_manifest_shape():
    cases = load_manifest(shipped_manifest())
    assert len(cases) == 14
    assert sum(c.expect_error for c in cases) == 12
    fp = next(c for c in cases if c.name == "fp_trap_args")
    assert fp.expected_indices(corpus_program("fp_trap_args")) == {5, 7}


def test_zeroed_input_does_not_verify():
    prog = corpus_program("trunc_i32_i16")
    rec = {"insn": 5, "kind": "signed", "bits": [16, 31]}
    assert reproduce(prog, rec, (0x12345).to_bytes(4, "little")).verified
    rep = reproduce(prog, rec, bytes(4))
    assert not rep.verified and rep.reason == "not-truncated" and rep.cropped == [0]


def test_unreached_instruction():
    prog = corpus_program("tiff_tag_order")
    rec = {"insn": len(prog) - 1 + 100, "kind": "unsigned", "bits": [16, 31]}
    rep = reproduce(prog, rec, b"\xff\xff\x20\x00")
    assert not rep.verified and rep.reason == "unreached" and rep.visits == 0


def test_corpus_matches_golden_records(tmp_path):
    report = run_corpus(out_dir=tmp_path)
    assert report.accuracy == 1.0
    for r in report.results:
        golden = [json.loads(l) for l in
                  (CORPUS / "expected" / f"{r.case.name}.jsonl").read_text().splitlines() if l]
        got = [{**rec, "input": Path(rec["input"]).name} for rec in r.records]
        assert got == golden, r.case.name
        assert all(rep.verified for rep in r.reproductions)


def test_corpus_table_is_deterministic(tmp_path):
    a = run_corpus(out_dir=tmp_path / "a").table()
    b = run_corpus(out_dir=tmp_path / "b").table()
    assert a == b
    assert a.splitlines()[-1] == "TPR=1.00 TNR=1.00 accuracy=1.00"


def test_report_counts_sum_to_cases():
    report = AccuracyReport([])
    assert report.counts == {"TP": 0, "FP": 0, "FN": 0, "TN": 0} and report.accuracy == 0.0
