import numpy as np
import pytest

from profgen.alphabet import load_matrix
from profgen.align import align_hits
from profgen.golden import GOLDEN_FASTA, QUERY_FASTA, convertalis, parsimus, query_tokens
from profgen.index import load_index
from profgen.pipeline import PipelineConfig, run_pipeline
from profgen.prefilter import PrefilterConfig, prefilter_query
from profgen.seqio import TUPLE_FILENAME, SequenceRecord, TupleRecord, read_fasta, read_tuples, write_tuples


def rec(h, s):
    return SequenceRecord.from_text(h, s)


def test_query_tokens():
    qs = [rec("sp|P1|X desc", "AC"), rec("sp_P1_X", "AC"), rec("a/b", "AC"), rec("a_b", "AC"), rec("..", "A")]
    assert query_tokens(qs) == ["sp_P1_X", "sp_P1_X_2", "a_b", "a_b_2", "__"]


def test_empty_tuples_three_queries(tmp_path):
    qs = [rec("q1", "ACDE"), rec("q2", "MKV"), rec("q3", "WW")]
    res = parsimus([], qs, tmp_path)
    assert [gs.members for gs in res.golden_sets] == [[q] for q in qs]
    for q in qs:
        assert read_fasta(tmp_path / q.identifier / QUERY_FASTA) == [q]
        assert read_fasta(tmp_path / q.identifier / GOLDEN_FASTA) == [q]


def test_duplicates_dropped(tmp_path):
    qs = [rec("q1", "ACDE")]
    tuples = [TupleRecord("q1", "t1 a", "MKV"), TupleRecord("q1", "t2", "GG"), TupleRecord("q1", "t1 a", "MKV")]
    res = parsimus(write_tuples(tuples), qs, tmp_path)
    assert res.duplicates_dropped == 1
    assert [m.header for m in res.golden_sets[0].members] == ["q1", "t1 a", "t2"]


def test_stream_input(tmp_path):
    import io

    qs = [rec("q1", "ACDE")]
    res = parsimus(io.BytesIO(b"q1\tt1\tMKV\n"), qs)
    assert [m.header for m in res.golden_sets[0].members] == ["q1", "t1"]


def test_unknown_query_header():
    with pytest.raises(KeyError):
        parsimus([TupleRecord("zz", "t1", "MKV")], [rec("q1", "AC")])


def test_query_hit_not_duplicated():
    q = rec("q1 the query", "ACDEF")
    res = parsimus([TupleRecord("q1 the query", "q1 the query", "ACDEF"), TupleRecord("q1 the query", "t", "GG")], [q])
    assert [m.header for m in res.golden_sets[0].members] == ["q1 the query", "t"]


def test_cap_counts_query():
    q = rec("q1", "ACDEF")
    tuples = [TupleRecord("q1", f"t{i}", "GG") for i in range(10)]
    res = parsimus(tuples, [q], max_seqs=4)
    assert [m.header for m in res.golden_sets[0].members] == ["q1", "t0", "t1", "t2"]


def test_per_query_directories_independent(tmp_path):
    qs = [rec("q1", "ACDE"), rec("q2", "MKV")]
    parsimus([TupleRecord("q1", "t", "GG"), TupleRecord("q2", "u", "PP")], qs, tmp_path)
    import shutil

    shutil.rmtree(tmp_path / "q1")
    assert [r.header for r in read_fasta(tmp_path / "q2" / GOLDEN_FASTA)] == ["q2", "u"]


def test_convertalis_roundtrip(small_world):
    w = small_world
    m = load_matrix("BLOSUM62")
    db, idx = load_index(w.index_dir)
    queries = w.queries[:5]
    alignments = []
    for qi, q in enumerate(queries):
        hits = prefilter_query(q.residues, db, idx, PrefilterConfig(1000, 15), m, query_id=qi)
        alignments.append(align_hits(q.residues, hits, db, m, query_id=qi))
    alignments.append([])  # a hitless query still gets registered
    queries = queries + [rec("lonely", "WWWW")]
    tuples = read_tuples(write_tuples(convertalis(alignments, db, queries)))
    pos = 0
    for q, alns in zip(queries, alignments):
        group = tuples[pos : pos + len(alns)]
        pos += len(alns)
        assert [t.query_header for t in group] == [q.header] * len(alns)
        assert [t.target_header for t in group] == [db.headers[a.target_id] for a in alns]
        assert [t.target_sequence for t in group] == [db.sequence_text(a.target_id) for a in alns]
    assert pos == len(tuples)
    res = parsimus(tuples, queries)
    assert res.golden_sets[-1].members == [queries[-1]]
    for gs, alns in zip(res.golden_sets, alignments):
        assert [m.header for m in gs.members[1:]] == [db.headers[a.target_id] for a in alns if db.headers[a.target_id] != gs.query.header]


def test_convertalis_dangling_target(small_world):
    from profgen.align import Alignment

    bad = Alignment(0, 10**6, 10, 1.0, 1.0, 0, 0, 0, 0, (("M", 1),), 1.0, 1.0, 1.0)
    with pytest.raises(IndexError):
        convertalis([[bad]], small_world.db, small_world.queries[:1])


def test_golden_members_equal_db_entries(small_world, tmp_path):
    w = small_world
    run_pipeline(PipelineConfig(index_dir=w.index_dir, query_path=w.query_path, workdir=tmp_path, workers=2))
    by_header = {h: i for i, h in enumerate(w.db.headers)}
    raw = (tmp_path / TUPLE_FILENAME).read_bytes()
    assert raw.count(b"\n") == len(read_tuples(raw))
    checked = 0
    for q in w.queries:
        members = read_fasta(tmp_path / q.identifier / GOLDEN_FASTA)
        assert members[0] == q
        assert len({m.identifier for m in members}) == len(members)
        for m in members[1:]:
            assert np.array_equal(m.residues, w.db.sequence(by_header[m.header]))
            checked += 1
    assert checked >= 4 * len(w.queries)
