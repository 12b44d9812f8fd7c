"""Double k-mer match prefilter with ungapped diagonal scoring."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .alphabet import N_CANONICAL, SubstitutionMatrix, kmer_code
from .index import KmerIndex, TargetDB, kmer_codes

DEFAULT_MAX_SEQS = 1000
DEFAULT_MIN_UNGAPPED = 15
MAX_EXPANSION = N_CANONICAL**4


class QueryTooShort(ValueError):
    pass


class ExpansionTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class PrefilterConfig:
    max_seqs: int = DEFAULT_MAX_SEQS
    min_ungapped_score: int = DEFAULT_MIN_UNGAPPED
    similar_kmer_threshold: int | None = None

    def __post_init__(self):
        if self.max_seqs < 1:
            raise ValueError("max_seqs must be >= 1")


@dataclass(frozen=True, order=True)
class PrefilterHit:
    query_id: int
    target_id: int
    diagonal: int
    ungapped_score: int


def diagonal_score(query: np.ndarray, target: np.ndarray, diagonal: int, matrix: SubstitutionMatrix) -> int:
    """Maximum-scoring ungapped segment on one diagonal (query_pos - target_pos)."""
    q = np.ascontiguousarray(query, dtype=np.uint8)
    t = np.ascontiguousarray(target, dtype=np.uint8)
    if not -t.size < diagonal < q.size:
        raise ValueError(f"diagonal {diagonal} out of bounds for lengths {q.size}, {t.size}")
    return int(_kernels.diagonal_max(q, t, matrix.scores, diagonal))


def expand_similar_kmers(kmer, matrix: SubstitutionMatrix, threshold: int) -> list[int]:
    """All k-mer codes w with sum_i s(kmer_i, w_i) >= threshold, kmer included.

    Depth-first over positions, pruning branches that cannot reach the
    threshold even with the best remaining substitutions.
    """
    kmer = [int(r) for r in kmer]
    if any(r >= N_CANONICAL for r in kmer):
        raise ValueError("k-mer contains X")
    k = len(kmer)
    s = matrix.scores[:N_CANONICAL, :N_CANONICAL].astype(int)
    rows = [s[r] for r in kmer]
    suffix_best = [0] * (k + 1)
    suffix_worst = [0] * (k + 1)
    for i in range(k - 1, -1, -1):
        suffix_best[i] = suffix_best[i + 1] + int(rows[i].max())
        suffix_worst[i] = suffix_worst[i + 1] + int(rows[i].min())
    if threshold > suffix_best[0]:
        return [kmer_code(kmer)]
    if threshold <= suffix_worst[0] and N_CANONICAL**k > MAX_EXPANSION:
        raise ExpansionTooLarge(f"expansion too large: all {N_CANONICAL}**{k} k-mers qualify")
    out: list[int] = []

    def walk(pos: int, code: int, score: int):
        if pos == k:
            out.append(code)
            if len(out) > MAX_EXPANSION:
                raise ExpansionTooLarge(f"expansion too large: more than {MAX_EXPANSION} k-mers")
            return
        row = rows[pos]
        need = threshold - score - suffix_best[pos + 1]
        for a in range(N_CANONICAL):
            if row[a] >= need:
                walk(pos + 1, code * N_CANONICAL + a, score + int(row[a]))

    walk(0, 0, 0)
    own = kmer_code(kmer)
    if own not in out:
        out.append(own)
    return sorted(out)


def _query_matches(query: np.ndarray, idx: KmerIndex, matrix, threshold):
    """(query_pos, seq_id, target_pos) for every k-mer match of the query."""
    codes, clean = kmer_codes(query, idx.k)
    qpos = np.flatnonzero(clean)
    codes = codes[clean]
    if threshold is not None:
        exp_pos, exp_codes = [], []
        for p in qpos.tolist():
            found = expand_similar_kmers(query[p : p + idx.k], matrix, threshold)
            exp_pos.extend([p] * len(found))
            exp_codes.extend(found)
        qpos = np.array(exp_pos, dtype=np.int64)
        codes = np.array(exp_codes, dtype=np.int64)
    counts = idx.counts[codes].astype(np.int64)
    total = int(counts.sum())
    if total == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    starts = idx.starts[codes].astype(np.int64)
    nz = counts > 0
    counts, starts, qpos = counts[nz], starts[nz], qpos[nz]
    rep_q = np.repeat(qpos, counts)
    # flat posting slot for each match: start of its run plus rank within the run
    run_begin = np.repeat(np.cumsum(counts) - counts, counts)
    slots = np.repeat(starts, counts) + (np.arange(total, dtype=np.int64) - run_begin)
    return rep_q, idx.seq_ids[slots].astype(np.int64), idx.positions[slots].astype(np.int64)


def prefilter_query(
    query: np.ndarray,
    db: TargetDB,
    idx: KmerIndex,
    cfg: PrefilterConfig = PrefilterConfig(),
    matrix: SubstitutionMatrix | None = None,
    *,
    query_id: int = 0,
) -> list[PrefilterHit]:
    """Best double-match diagonal per target, top ``cfg.max_seqs`` by score.

    A (target, diagonal) pair is scored only when at least two distinct query
    k-mers match on it. Per target the highest-scoring diagonal wins (ties go
    to the smaller diagonal); hits are ordered by descending score, then
    ascending target id.
    """
    if matrix is None:
        from .alphabet import load_matrix

        matrix = load_matrix("BLOSUM62")
    q = np.ascontiguousarray(query, dtype=np.uint8)
    if q.size < idx.k:
        raise QueryTooShort(f"query length {q.size} is shorter than k={idx.k}")
    qpos, tids, tpos = _query_matches(q, idx, matrix, cfg.similar_kmer_threshold)
    if qpos.size < 2:
        return []
    diags = qpos - tpos
    # one key per (target, diagonal); diagonals are shifted to be nonnegative
    shift = int(db.lengths.max())
    keys = tids * (q.size + shift + 1) + (diags + shift)
    uniq, n_match = np.unique(keys, return_counts=True)
    cand = uniq[n_match >= 2]
    if cand.size == 0:
        return []
    c_tid = cand // (q.size + shift + 1)
    c_diag = cand % (q.size + shift + 1) - shift
    scores = _kernels.diagonal_scores(q, db.residue_pool, db.offsets, db.lengths, c_tid, c_diag, matrix.scores)
    # keys are sorted by (tid, diag): keep the best diagonal of each target
    order = np.lexsort((c_diag, -scores.astype(np.int64), c_tid))
    c_tid, c_diag, scores = c_tid[order], c_diag[order], scores[order]
    first = np.ones(c_tid.size, dtype=bool)
    first[1:] = c_tid[1:] != c_tid[:-1]
    keep = first & (scores >= cfg.min_ungapped_score)
    best = zip(scores[keep].tolist(), c_tid[keep].tolist(), c_diag[keep].tolist())
    top = heapq.nsmallest(cfg.max_seqs, best, key=lambda h: (-h[0], h[1]))
    return [PrefilterHit(query_id, t, d, s) for s, t, d in top]
