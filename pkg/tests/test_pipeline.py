from pathlib import Path

import pytest

from profgen.index import TargetDB, index_db, save_index
from profgen.pipeline import (
    REPORT_FILENAME,
    PipelineConfig,
    PipelineError,
    run_pipeline,
)
from profgen.profiler import read_ascii_scores, read_binary_pssm
from profgen.seqio import TUPLE_FILENAME, SequenceRecord, write_fasta


def tree(root: Path) -> dict[str, bytes]:
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != REPORT_FILENAME
    }


def cfg_for(world, workdir, **kw):
    return PipelineConfig(index_dir=world.index_dir, query_path=world.query_path, workdir=workdir, **kw)


def test_worker_count_does_not_change_outputs(small_world, tmp_path):
    outs = "alignments,pssm,ascii-pssm"
    r1 = run_pipeline(cfg_for(small_world, tmp_path / "w1", workers=1, outputs=outs))
    r4 = run_pipeline(cfg_for(small_world, tmp_path / "w4", workers=4, outputs=outs))
    t1, t4 = tree(tmp_path / "w1"), tree(tmp_path / "w4")
    assert t1 == t4
    assert len(r1.queries) == len(r4.queries) == 25
    assert sum(name.endswith("pssm.txt") for name in t1) == 25
    assert [q.golden_size for q in r1.queries] == [q.golden_size for q in r4.queries]


def test_outputs_and_report(small_world, tmp_path):
    report = run_pipeline(cfg_for(small_world, tmp_path, workers=2, outputs="ascii-pssm,pssm", out_alignments=tmp_path / "all.tsv"))
    for q in small_world.queries:
        qdir = tmp_path / q.identifier
        scores = read_ascii_scores((qdir / "pssm.txt").read_text())
        assert scores.shape == (len(q), 20)
        assert read_binary_pssm((qdir / "pssm.bin").read_bytes()).scores.tolist() == scores.tolist()
        assert not (qdir / "alignments.tsv").exists()
    assert (tmp_path / TUPLE_FILENAME).exists()
    rows = (tmp_path / "all.tsv").read_text().splitlines()
    assert rows[0].startswith("query\ttarget")
    assert len(rows) - 1 == sum(q.alignments for q in report.queries)
    text = (tmp_path / REPORT_FILENAME).read_text()
    kv = dict(line.split("=", 1) for line in text.splitlines())
    assert int(kv["query_count"]) == 25
    assert all(int(v) >= 0 for k, v in kv.items() if k.endswith("_ms"))
    assert all(q.profile_emitted for q in report.queries)
    # every planted homolog is a hit, so each golden set has at least query + 4
    assert all(q.golden_size >= 5 for q in report.queries)


def test_query_present_verbatim(small_world, tmp_path):
    q = small_world.records[10]
    (tmp_path / "one.fasta").write_bytes(write_fasta([q]))
    report = run_pipeline(PipelineConfig(index_dir=small_world.index_dir, query_path=tmp_path / "one.fasta", workdir=tmp_path / "out", workers=1))
    scores = read_ascii_scores((tmp_path / "out" / q.identifier / "pssm.txt").read_text())
    assert scores.shape[0] == len(q)
    assert report.queries[0].hits >= 1


def test_short_query_gets_query_only_profile(small_world, tmp_path):
    qs = [SequenceRecord.from_text("tiny", "MKW"), small_world.queries[0]]
    (tmp_path / "q.fasta").write_bytes(write_fasta(qs))
    report = run_pipeline(PipelineConfig(index_dir=small_world.index_dir, query_path=tmp_path / "q.fasta", workdir=tmp_path / "out", workers=2))
    assert any("tiny" in w and "shorter" in w for w in report.warnings)
    tiny = report.queries[0]
    assert tiny.hits == 0 and tiny.golden_size == 1 and tiny.profile_emitted
    assert read_ascii_scores((tmp_path / "out" / "tiny" / "pssm.txt").read_text()).shape == (3, 20)


def test_unknown_residues_warned(small_world, tmp_path):
    (tmp_path / "q.fasta").write_bytes(b">odd\nMKVBZLAGHWDEJ\n")
    report = run_pipeline(PipelineConfig(index_dir=small_world.index_dir, query_path=tmp_path / "q.fasta", workdir=tmp_path / "out", workers=1))
    assert report.unknown_residues == 3
    assert "unknown_residues=3" in (tmp_path / "out" / REPORT_FILENAME).read_text()


def test_empty_query_file(small_world, tmp_path):
    (tmp_path / "q.fasta").write_bytes(b"")
    with pytest.raises(PipelineError) as err:
        run_pipeline(PipelineConfig(index_dir=small_world.index_dir, query_path=tmp_path / "q.fasta", workdir=tmp_path / "out"))
    assert err.value.stage == "queries"


def test_missing_index(tmp_path):
    (tmp_path / "q.fasta").write_bytes(b">a\nMKVLA\n")
    with pytest.raises(PipelineError) as err:
        run_pipeline(PipelineConfig(index_dir=tmp_path / "nope", query_path=tmp_path / "q.fasta", workdir=tmp_path / "out"))
    assert err.value.stage == "index_load"
    assert "targetdb.bin" in str(err.value)


def test_k_mismatch(small_world, tmp_path):
    with pytest.raises(PipelineError, match="k=5"):
        run_pipeline(cfg_for(small_world, tmp_path, k=6))


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(workers=0)
    with pytest.raises(ValueError):
        PipelineConfig(outputs="")
    with pytest.raises(ValueError):
        PipelineConfig(outputs="pssm,html")
    assert PipelineConfig(outputs="pssm, ascii-pssm").outputs == ("pssm", "ascii-pssm")


def test_workers_env(monkeypatch):
    from profgen.pipeline import default_workers

    monkeypatch.setenv("PROFGEN_WORKERS", "3")
    assert default_workers() == 3
    assert PipelineConfig().workers == 3


def test_profile_failure_isolated(small_world, tmp_path):
    # an external profiler that fails for one query only
    script = tmp_path / "prof.sh"
    script.write_text('#!/bin/sh\ncase "$1" in *q0001*) exit 4;; esac\ncp "$2" "$3"\n')
    script.chmod(0o755)
    cfg = cfg_for(small_world, tmp_path / "out", workers=2, profiler="psiblast", psiblast_template=f"{script} {{query}} {{golden}} {{ascii_pssm}}")
    with pytest.raises(PipelineError) as err:
        run_pipeline(cfg)
    assert err.value.stage == "profile" and err.value.query == "q0001"
    out = tmp_path / "out"
    assert (out / "q0000" / "pssm.txt").read_bytes() == (out / "q0000" / "golden.fasta").read_bytes()
    assert not (out / "q0001" / "pssm.txt").exists()
    assert "q0001.profile_emitted=0" in (out / REPORT_FILENAME).read_text()


def test_prefilter_threshold_and_cap(small_world, tmp_path):
    report = run_pipeline(cfg_for(small_world, tmp_path, workers=2, max_seqs=3))
    assert all(q.golden_size <= 3 for q in report.queries)
    assert all(q.hits <= 3 for q in report.queries)


def test_db_built_inline(tmp_path):
    recs = [SequenceRecord.from_text(f"t{i}", "MKWVTFISLLFLFSSAYSRGVFRRDTHKSEIAHRFKDLGE"[i:] + "GG") for i in range(5)]
    db = TargetDB.from_records(recs)
    save_index(db, index_db(db, 4), tmp_path / "idx")
    (tmp_path / "q.fasta").write_bytes(write_fasta([SequenceRecord.from_text("q", "MKWVTFISLLFLFSSAYSRGVFRRDTHKSEIAHRFKDLGE")]))
    report = run_pipeline(PipelineConfig(index_dir=tmp_path / "idx", query_path=tmp_path / "q.fasta", workdir=tmp_path / "out", workers=1))
    assert report.queries[0].golden_size == 6
