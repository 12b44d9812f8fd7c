"""Gapped local alignment of prefilter survivors, with hit statistics."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .alphabet import GappedKarlinParams, SubstitutionMatrix, bit_score, evalue
from .index import TargetDB

OP_CHARS = "MID"  # M: residue pair, I: query residue vs gap, D: gap vs target residue


@dataclass(frozen=True)
class Alignment:
    query_id: int
    target_id: int
    score: int
    bit_score: float
    evalue: float
    q_start: int
    q_end: int
    t_start: int
    t_end: int
    ops: tuple[tuple[str, int], ...]
    identity: float
    q_cov: float
    t_cov: float

    @property
    def cigar(self) -> str:
        return "".join(f"{n}{op}" for op, n in self.ops)

    @property
    def columns(self) -> int:
        return sum(n for _, n in self.ops)

    def pairs(self) -> Iterable[tuple[int | None, int | None]]:
        """Yield (query_pos, target_pos) per column; None marks a gap."""
        qi, ti = self.q_start, self.t_start
        for op, n in self.ops:
            for _ in range(n):
                if op == "M":
                    yield qi, ti
                    qi += 1
                    ti += 1
                elif op == "I":
                    yield qi, None
                    qi += 1
                else:
                    yield None, ti
                    ti += 1


def _run_length(ops_rev: np.ndarray) -> tuple[tuple[str, int], ...]:
    out: list[list] = []
    for code in ops_rev[::-1].tolist():
        op = OP_CHARS[code]
        if out and out[-1][0] == op:
            out[-1][1] += 1
        else:
            out.append([op, 1])
    return tuple((op, n) for op, n in out)


def smith_waterman(
    query: np.ndarray,
    target: np.ndarray,
    matrix: SubstitutionMatrix,
    gaps: GappedKarlinParams = GappedKarlinParams(),
    *,
    db_residues: int | None = None,
    query_id: int = 0,
    target_id: int = 0,
    band: tuple[int, int] | None = None,
    profile: np.ndarray | None = None,
) -> Alignment | None:
    """Optimal affine-gap local alignment, or None when no positive score exists.

    E-values use ``db_residues`` as the search space (the target length when
    omitted). ``band=(diagonal, width)`` restricts the DP to cells within
    ``width`` of ``diagonal`` (query_pos - target_pos). ``profile`` replaces
    the matrix rows with position-specific scores (query length x 21).
    """
    q = np.ascontiguousarray(query, dtype=np.uint8)
    t = np.ascontiguousarray(target, dtype=np.uint8)
    if q.size == 0 or t.size == 0:
        raise ValueError("sequences must be nonempty")
    band_diag, band_width = band if band is not None else (0, -1)
    prof = matrix.scores[q] if profile is None else np.ascontiguousarray(profile, dtype=np.int32)
    if prof.shape != (q.size, 21):
        raise ValueError("profile must have one 21-score row per query residue")
    score, q_end, t_end, q_start, t_start, ops_rev = _kernels.sw_traceback(
        prof, t, gaps.gap_open, gaps.gap_extend, band_diag, band_width
    )
    if score <= 0:
        return None
    ops = _run_length(ops_rev)
    identical = 0
    qi, ti = q_start, t_start
    for op, n in ops:
        if op == "M":
            identical += int((q[qi : qi + n] == t[ti : ti + n]).sum())
            qi += n
            ti += n
        elif op == "I":
            qi += n
        else:
            ti += n
    n_cols = sum(n for _, n in ops)
    space = t.size if db_residues is None else db_residues
    return Alignment(
        query_id=query_id,
        target_id=target_id,
        score=int(score),
        bit_score=bit_score(int(score), gaps),
        evalue=evalue(int(score), q.size, space, gaps),
        q_start=int(q_start),
        q_end=int(q_end),
        t_start=int(t_start),
        t_end=int(t_end),
        ops=ops,
        identity=identical / n_cols,
        q_cov=(q_end - q_start + 1) / q.size,
        t_cov=(t_end - t_start + 1) / t.size,
    )


def sort_alignments(alignments: Iterable[Alignment]) -> list[Alignment]:
    return sorted(alignments, key=lambda a: (a.evalue, a.target_id))


def align_hits(
    query: np.ndarray,
    hits: Sequence,
    db: TargetDB,
    matrix: SubstitutionMatrix,
    gaps: GappedKarlinParams = GappedKarlinParams(),
    db_residues_for_evalue: int | None = None,
    *,
    query_id: int = 0,
    band_width: int | None = None,
    workers: int = 1,
) -> list[Alignment]:
    """Align ``query`` to every hit's target; sorted by (evalue, target_id)."""
    space = db.total_residues if db_residues_for_evalue is None else db_residues_for_evalue
    for h in hits:
        if not 0 <= h.target_id < db.seq_count:
            raise IndexError(f"hit references unknown target {h.target_id}")

    def one(hit):
        band = None if band_width is None else (hit.diagonal, band_width)
        return smith_waterman(
            query,
            db.sequence(hit.target_id),
            matrix,
            gaps,
            db_residues=space,
            query_id=query_id,
            target_id=hit.target_id,
            band=band,
        )

    if workers > 1 and len(hits) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, hits))
    else:
        results = [one(h) for h in hits]
    return sort_alignments(a for a in results if a is not None)


def scan_db(
    query: np.ndarray,
    db: TargetDB,
    matrix: SubstitutionMatrix,
    gaps: GappedKarlinParams = GappedKarlinParams(),
) -> np.ndarray:
    """Local alignment score of ``query`` against every target (no traceback)."""
    return _kernels.scan_scores(
        np.ascontiguousarray(query, dtype=np.uint8),
        db.residue_pool,
        db.offsets,
        db.lengths,
        matrix.scores,
        gaps.gap_open,
        gaps.gap_extend,
    )


def format_alignment_rows(alignments: Iterable[Alignment], query_label: str, target_labels) -> str:
    """TSV rows: query, target, score, bits, evalue, coords (1-based), identity, coverages."""
    rows = []
    for a in alignments:
        rows.append(
            "\t".join(
                [
                    query_label,
                    target_labels(a.target_id),
                    str(a.score),
                    f"{a.bit_score:.1f}",
                    f"{a.evalue:.3g}",
                    str(a.q_start + 1),
                    str(a.q_end + 1),
                    str(a.t_start + 1),
                    str(a.t_end + 1),
                    f"{a.identity:.3f}",
                    f"{a.q_cov:.3f}",
                    f"{a.t_cov:.3f}",
                    a.cigar,
                ]
            )
            + "\n"
        )
    return "".join(rows)


ALIGNMENT_TSV_HEADER = (
    "query\ttarget\tscore\tbits\tevalue\tq_start\tq_end\tt_start\tt_end\tidentity\tq_cov\tt_cov\tcigar\n"
)
