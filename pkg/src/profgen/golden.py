"""Flatten alignments into the tuple file and split it into per-query golden sets."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .align import Alignment
from .index import TargetDB
from .seqio import SequenceRecord, TupleRecord, format_fasta, iter_tuples, write_tuples

log = logging.getLogger(__name__)

QUERY_FASTA = "query.fasta"
GOLDEN_FASTA = "golden.fasta"

_UNSAFE = re.compile(r"[^A-Za-z0-9._-]")


@dataclass
class GoldenSet:
    query: SequenceRecord
    members: list[SequenceRecord]
    token: str = ""
    directory: Path | None = None

    @property
    def residue_count(self) -> int:
        return sum(len(m) for m in self.members)


@dataclass
class ParsimusResult:
    golden_sets: list[GoldenSet]
    duplicates_dropped: int = 0


def query_tokens(queries: Sequence[SequenceRecord]) -> list[str]:
    """Filesystem-safe per-query directory names, unique within the batch."""
    seen: dict[str, int] = {}
    taken: set[str] = set()
    out = []
    for q in queries:
        base = _UNSAFE.sub("_", q.identifier)
        if base in (".", ".."):
            base = base.replace(".", "_")
        token = base
        while token in taken:
            seen[base] = seen.get(base, 1) + 1
            token = f"{base}_{seen[base]}"
        taken.add(token)
        out.append(token)
    return out


def convertalis(
    alignments: Sequence[Sequence[Alignment]],
    db: TargetDB,
    queries: Sequence[SequenceRecord],
) -> list[TupleRecord]:
    """One tuple per alignment, grouped by query in input order."""
    if len(alignments) != len(queries):
        raise ValueError("need one alignment list per query")
    tuples = []
    for query, hits in zip(queries, alignments):
        for a in hits:
            if not 0 <= a.target_id < db.seq_count:
                raise IndexError(f"alignment references unknown target {a.target_id}")
            tuples.append(TupleRecord(query.header, db.headers[a.target_id], db.sequence_text(a.target_id)))
    return tuples


def group_tuples(
    tuples: Iterable[TupleRecord], queries: Sequence[SequenceRecord]
) -> tuple[list[list[TupleRecord]], int]:
    by_header = {q.header: i for i, q in enumerate(queries)}
    groups: list[list[TupleRecord]] = [[] for _ in queries]
    seen: list[set[str]] = [set() for _ in queries]
    dropped = 0
    for t in tuples:
        try:
            qi = by_header[t.query_header]
        except KeyError:
            raise KeyError(f"tuple query header {t.query_header!r} matches no query") from None
        if t.target_header in seen[qi]:
            dropped += 1
            continue
        seen[qi].add(t.target_header)
        groups[qi].append(t)
    return groups, dropped


def parsimus(
    tuples,
    queries: Sequence[SequenceRecord],
    workdir=None,
    max_seqs: int | None = None,
) -> ParsimusResult:
    """Build golden sets (query first, then its tuple targets in order).

    ``tuples`` may be TupleRecords, raw tuple-file bytes or a readable stream. With a
    ``workdir`` each set is written to ``<workdir>/<token>/{query,golden}.fasta``.
    Members matching the query identifier are skipped so the query appears once;
    ``max_seqs`` caps the set size with the query counted.
    """
    if isinstance(tuples, (bytes, bytearray)) or hasattr(tuples, "read"):
        tuples = iter_tuples(tuples)
    groups, dropped = group_tuples(tuples, queries)
    if dropped:
        log.warning("dropped %d duplicate (query, target) tuple(s)", dropped)
    tokens = query_tokens(queries)
    sets = []
    for query, token, group in zip(queries, tokens, groups):
        members = [query]
        for t in group:
            rec = SequenceRecord.from_text(t.target_header, t.target_sequence)
            if rec.identifier == query.identifier:
                continue
            members.append(rec)
        if max_seqs is not None:
            members = members[:max_seqs]
        gs = GoldenSet(query, members, token)
        if workdir is not None:
            gs.directory = write_golden_set(gs, workdir)
        sets.append(gs)
    return ParsimusResult(sets, dropped)


def write_golden_set(gs: GoldenSet, workdir) -> Path:
    qdir = Path(workdir) / gs.token
    qdir.mkdir(parents=True, exist_ok=True)
    (qdir / QUERY_FASTA).write_bytes(format_fasta([gs.query]))
    (qdir / GOLDEN_FASTA).write_bytes(format_fasta(gs.members))
    return qdir


def write_tuple_file(tuples: Sequence[TupleRecord], path) -> None:
    with open(path, "wb") as fh:
        write_tuples(tuples, fh)
