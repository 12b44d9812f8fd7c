"""End-to-end search: prefilter -> align -> convertalis -> parsimus -> profile."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import align as align_mod
from .alphabet import GappedKarlinParams, SubstitutionMatrix, load_matrix
from .golden import GoldenSet, convertalis, parsimus, query_tokens, write_tuple_file
from .index import KmerIndex, TargetDB, load_index
from .prefilter import PrefilterConfig, PrefilterHit, QueryTooShort, prefilter_query
from .profiler import PsiBlastAdapter, make_profile, write_ascii_pssm, write_binary_pssm
from .seqio import TUPLE_FILENAME, FastaReader, SequenceRecord, iter_tuples

log = logging.getLogger(__name__)

OUTPUT_KINDS = ("alignments", "pssm", "ascii-pssm")
REPORT_FILENAME = "report.txt"
ASCII_PSSM_FILENAME = "pssm.txt"
BINARY_PSSM_FILENAME = "pssm.bin"
ALIGNMENTS_FILENAME = "alignments.tsv"
STAGES = ("index_load", "queries", "prefilter", "align", "convertalis", "parsimus", "profile")


def default_workers() -> int:
    env = os.environ.get("PROFGEN_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


class PipelineError(RuntimeError):
    """A stage failure; ``stage`` and ``query`` name where it happened."""

    def __init__(self, stage: str, message: str, query: str | None = None):
        where = f"{stage} stage" + (f", query {query!r}" if query else "")
        super().__init__(f"{where}: {message}")
        self.stage = stage
        self.query = query


@dataclass
class PipelineConfig:
    index_dir: Path | None = None
    query_path: Path | None = None
    workdir: Path = Path("profgen_out")
    max_seqs: int = 1000
    inclusion_evalue: float = 10.0
    min_ungapped_score: int = 15
    k: int | None = None
    workers: int = field(default_factory=default_workers)
    outputs: tuple[str, ...] = ("ascii-pssm",)
    matrix: str = "BLOSUM62"
    gap_open: int = 11
    gap_extend: int = 1
    lambda_gapped: float = 0.267
    k_gapped: float = 0.041
    similar_kmer_threshold: int | None = None
    band_width: int | None = None
    beta: float = 10.0
    iterations: int = 1
    out_alignments: Path | None = None
    profiler: str = "internal"
    psiblast_template: str | None = None

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if isinstance(self.outputs, str):
            self.outputs = tuple(o.strip() for o in self.outputs.split(",") if o.strip())
        if not self.outputs:
            raise ValueError("at least one output kind is required")
        bad = [o for o in self.outputs if o not in OUTPUT_KINDS]
        if bad:
            raise ValueError(f"unknown output kind(s) {bad}; choose from {OUTPUT_KINDS}")
        if self.max_seqs < 1:
            raise ValueError("max_seqs must be >= 1")
        if self.profiler not in ("internal", "psiblast"):
            raise ValueError("profiler must be 'internal' or 'psiblast'")
        self.workdir = Path(self.workdir)

    @property
    def gaps(self) -> GappedKarlinParams:
        return GappedKarlinParams(self.lambda_gapped, self.k_gapped, self.gap_open, self.gap_extend)

    @property
    def prefilter(self) -> PrefilterConfig:
        return PrefilterConfig(self.max_seqs, self.min_ungapped_score, self.similar_kmer_threshold)


@dataclass
class QueryReport:
    token: str
    header: str
    length: int
    hits: int = 0
    alignments: int = 0
    golden_size: int = 0
    profile_emitted: bool = False


@dataclass
class RunReport:
    stage_ms: dict[str, int] = field(default_factory=lambda: {s: 0 for s in STAGES})
    queries: list[QueryReport] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    unknown_residues: int = 0
    duplicates_dropped: int = 0

    @property
    def total_ms(self) -> int:
        return sum(self.stage_ms.values())

    def to_text(self) -> str:
        """Flat ``key=value`` lines."""
        lines = [f"stage.{s}_ms={self.stage_ms.get(s, 0)}" for s in STAGES]
        lines.append(f"total_ms={self.total_ms}")
        lines.append(f"query_count={len(self.queries)}")
        lines.append(f"unknown_residues={self.unknown_residues}")
        lines.append(f"duplicates_dropped={self.duplicates_dropped}")
        for q in self.queries:
            for key in ("length", "hits", "alignments", "golden_size"):
                lines.append(f"query.{q.token}.{key}={getattr(q, key)}")
            lines.append(f"query.{q.token}.profile_emitted={int(q.profile_emitted)}")
        for i, w in enumerate(self.warnings, start=1):
            lines.append(f"warning.{i}={w}")
        return "\n".join(lines) + "\n"


@contextmanager
def _timed(report: RunReport, stage: str):
    t0 = time.monotonic()
    try:
        yield
    finally:
        report.stage_ms[stage] += int(round((time.monotonic() - t0) * 1000))


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(min(workers, len(items))) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def run_pipeline(
    cfg: PipelineConfig,
    *,
    resident: tuple[TargetDB, KmerIndex] | None = None,
    queries: Sequence[SequenceRecord] | None = None,
    matrix: SubstitutionMatrix | None = None,
) -> RunReport:
    """Run every stage for a query batch and write outputs under ``cfg.workdir``.

    ``resident`` supplies an already-loaded index (its load time is then 0);
    ``queries`` bypasses reading ``cfg.query_path``.
    """
    report = RunReport()
    workdir = Path(cfg.workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    with _timed(report, "index_load"):
        if resident is None:
            if cfg.index_dir is None:
                raise PipelineError("index_load", "no index directory given")
            try:
                db, idx = load_index(cfg.index_dir)
            except (OSError, ValueError) as exc:
                raise PipelineError("index_load", str(exc)) from exc
        else:
            db, idx = resident
    if cfg.k is not None and cfg.k != idx.k:
        raise PipelineError("index_load", f"index was built with k={idx.k}, config asks for k={cfg.k}")

    with _timed(report, "queries"):
        if queries is None:
            if cfg.query_path is None:
                raise PipelineError("queries", "no query file given")
            try:
                with open(cfg.query_path, "rb") as fh:
                    reader = FastaReader(fh)
                    queries = list(reader)
            except (OSError, ValueError) as exc:
                raise PipelineError("queries", str(exc)) from exc
            report.unknown_residues = reader.unknown_residues
            if reader.unknown_residues:
                report.warnings.append(f"{reader.unknown_residues} unknown residue(s) mapped to X in queries")
        queries = list(queries)
        if not queries:
            raise PipelineError("queries", "query file contains no sequences")
        matrix = matrix or load_matrix(cfg.matrix)
        gaps = cfg.gaps
        tokens = query_tokens(queries)
        report.queries = [QueryReport(t, q.header, len(q)) for t, q in zip(tokens, queries)]

    pf_cfg = cfg.prefilter

    def prefilter_one(qi: int) -> list[PrefilterHit]:
        try:
            return prefilter_query(queries[qi].residues, db, idx, pf_cfg, matrix, query_id=qi)
        except QueryTooShort:
            return None

    with _timed(report, "prefilter"):
        hits = _map(prefilter_one, range(len(queries)), cfg.workers)
    for qi, h in enumerate(hits):
        if h is None:
            report.warnings.append(
                f"query {queries[qi].identifier!r} is shorter than k={idx.k}; emitting a query-only profile"
            )
            hits[qi] = []
        report.queries[qi].hits = len(hits[qi])

    def align_one(qi: int):
        try:
            return align_mod.align_hits(
                queries[qi].residues,
                hits[qi],
                db,
                matrix,
                gaps,
                db.total_residues,
                query_id=qi,
                band_width=cfg.band_width,
            )
        except Exception as exc:
            raise PipelineError("align", str(exc), queries[qi].identifier) from exc

    with _timed(report, "align"):
        alignments = _map(align_one, range(len(queries)), cfg.workers)
    for qi, alns in enumerate(alignments):
        report.queries[qi].alignments = len(alns)
    if cfg.out_alignments is not None:
        with open(cfg.out_alignments, "w") as fh:
            fh.write(align_mod.ALIGNMENT_TSV_HEADER)
            for qi, alns in enumerate(alignments):
                fh.write(align_mod.format_alignment_rows(alns, queries[qi].identifier, lambda t: db.headers[t].split()[0]))

    tuple_path = workdir / TUPLE_FILENAME
    with _timed(report, "convertalis"):
        write_tuple_file(convertalis(alignments, db, queries), tuple_path)

    with _timed(report, "parsimus"):
        try:
            with open(tuple_path, "rb") as fh:
                parsed = parsimus(iter_tuples(fh), queries, workdir, max_seqs=cfg.max_seqs)
        except (OSError, ValueError, KeyError) as exc:
            raise PipelineError("parsimus", str(exc)) from exc
    report.duplicates_dropped = parsed.duplicates_dropped
    if parsed.duplicates_dropped:
        report.warnings.append(f"{parsed.duplicates_dropped} duplicate tuple(s) dropped")
    for qr, gs in zip(report.queries, parsed.golden_sets):
        qr.golden_size = len(gs.members)

    adapter = None
    if cfg.profiler == "psiblast":
        adapter = PsiBlastAdapter(cfg.psiblast_template) if cfg.psiblast_template else PsiBlastAdapter()

    def profile_one(gs: GoldenSet):
        try:
            if adapter is not None:
                adapter.run(gs.directory, cfg.inclusion_evalue)
                return None
            pssm, stack = make_profile(gs, matrix, gaps, cfg.inclusion_evalue, cfg.beta, cfg.iterations)
            write_profile_outputs(gs, pssm, stack, cfg.outputs)
            return None
        except Exception as exc:
            log.exception("profiling failed for %s", gs.query.identifier)
            return exc

    with _timed(report, "profile"):
        failures = _map(profile_one, parsed.golden_sets, cfg.workers)
    first_failure = None
    for qr, gs, exc in zip(report.queries, parsed.golden_sets, failures):
        qr.profile_emitted = exc is None
        if exc is not None:
            report.warnings.append(f"profile failed for {gs.query.identifier!r}: {exc}")
            first_failure = first_failure or (gs, exc)

    (workdir / REPORT_FILENAME).write_text(report.to_text())
    if first_failure is not None:
        gs, exc = first_failure
        raise PipelineError("profile", str(exc), gs.query.identifier) from exc
    return report


def write_profile_outputs(gs: GoldenSet, pssm, stack, outputs: Sequence[str]) -> None:
    qdir = Path(gs.directory)
    if "ascii-pssm" in outputs:
        with open(qdir / ASCII_PSSM_FILENAME, "wb") as fh:
            write_ascii_pssm(pssm, fh)
    if "pssm" in outputs:
        with open(qdir / BINARY_PSSM_FILENAME, "wb") as fh:
            write_binary_pssm(pssm, fh)
    if "alignments" in outputs:
        with open(qdir / ALIGNMENTS_FILENAME, "w") as fh:
            fh.write(align_mod.ALIGNMENT_TSV_HEADER)
            fh.write(
                align_mod.format_alignment_rows(
                    stack.alignments, gs.query.identifier, lambda mid: gs.members[mid].identifier
                )
            )
