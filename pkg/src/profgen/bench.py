"""Synthetic databases with planted homologs, and runtime-scaling measurements.

The baseline stands in for a plain PSI-BLAST run: each query is aligned
against every database sequence (no prefilter), the best ``max_seqs`` hits
form its golden set, and that set is profiled exactly as the pipeline does.
"""

from __future__ import annotations

import csv
import io
import logging
import statistics
import tempfile
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .align import Alignment, smith_waterman, scan_db, sort_alignments
from .alphabet import N_CANONICAL, GappedKarlinParams, load_matrix
from .golden import GoldenSet, query_tokens
from .index import TargetDB, load_db
from .pipeline import PipelineConfig, run_pipeline
from .profiler import make_profile, write_ascii_pssm
from .seqio import SequenceRecord, format_fasta, parse_fasta

log = logging.getLogger(__name__)

SCALING_HEADER = ["batch_size", "pipeline_ms", "baseline_ms", "pipeline_ratio", "baseline_ratio", "shape"]
LENGTH_HEADER = ["query_len", "pipeline_ms", "baseline_ms", "speedup"]

PIPELINE_RATIO_MAX = 8.0


@dataclass
class BenchScenario:
    db_size: int = 50_000
    mean_len: float = 100.0
    len_sd: float = 20.0
    batch_sizes: tuple[int, ...] = (1, 5, 10, 25, 50)
    seed: int = 7
    mutation_rate: float = 0.1
    homolog_count: int = 4
    min_len: int = 20
    lengths: tuple[int, ...] = (50, 100, 200, 400, 800, 1600)
    repeats: int = 3
    workers: int = 1
    max_seqs: int = 1000

    def __post_init__(self):
        if self.db_size < 1:
            raise ValueError("db_size must be >= 1")
        if any(b < 1 for b in self.batch_sizes):
            raise ValueError("batch sizes must be >= 1")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must be in [0, 1]")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    @property
    def n_queries(self) -> int:
        return max(self.batch_sizes)

    @classmethod
    def from_text(cls, text: str) -> BenchScenario:
        """Parse flat ``key=value`` lines; list values are comma-separated."""
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in kinds:
                raise ValueError(f"bad scenario line {raw!r}")
            kind = kinds[key]
            if "tuple" in str(kind):
                values[key] = tuple(int(v) for v in value.split(",") if v.strip())
            elif "float" in str(kind):
                values[key] = float(value)
            else:
                values[key] = int(value)
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> BenchScenario:
        return cls.from_text(Path(path).read_text())


def random_sequence(rng: np.random.Generator, length: int, background: np.ndarray) -> np.ndarray:
    return rng.choice(N_CANONICAL, size=length, p=background).astype(np.uint8)


def mutate(rng: np.random.Generator, seq: np.ndarray, rate: float, background: np.ndarray) -> np.ndarray:
    """Point-mutate each position with probability ``rate`` to a different residue."""
    out = seq.copy()
    sites = np.flatnonzero(rng.random(seq.size) < rate)
    for p in sites.tolist():
        weights = background.copy()
        weights[seq[p]] = 0.0
        out[p] = rng.choice(N_CANONICAL, p=weights / weights.sum())
    return out


def _length(rng, mean, sd, floor) -> int:
    return max(floor, int(round(rng.normal(mean, sd))))


def homolog_header(query_index: int, copy: int) -> str:
    return f"hom_q{query_index:04d}_{copy}"


def generate(scenario: BenchScenario) -> tuple[list[SequenceRecord], list[SequenceRecord]]:
    """Deterministic (queries, database) for a scenario.

    Each query gets ``homolog_count`` mutated copies planted in the database;
    the remaining entries are random background sequences. Database order is
    shuffled.
    """
    background = load_matrix("BLOSUM62").background
    rng = np.random.default_rng(scenario.seed)
    queries = [
        SequenceRecord(
            f"q{i:04d}", random_sequence(rng, _length(rng, scenario.mean_len, scenario.len_sd, scenario.min_len), background)
        )
        for i in range(scenario.n_queries)
    ]
    planted = []
    for qi, q in enumerate(queries):
        for c in range(scenario.homolog_count):
            if len(planted) == scenario.db_size:
                break
            planted.append(SequenceRecord(homolog_header(qi, c), mutate(rng, q.residues, scenario.mutation_rate, background)))
    filler = [
        SequenceRecord(
            f"bg{i:07d}", random_sequence(rng, _length(rng, scenario.mean_len, scenario.len_sd, scenario.min_len), background)
        )
        for i in range(scenario.db_size - len(planted))
    ]
    db = planted + filler
    order = rng.permutation(len(db))
    return queries, [db[i] for i in order]


def generate_db(scenario: BenchScenario) -> bytes:
    return format_fasta(generate(scenario)[1])


def generate_queries(scenario: BenchScenario) -> bytes:
    return format_fasta(generate(scenario)[0])


def length_queries(scenario: BenchScenario, lengths: Sequence[int] | None = None) -> list[SequenceRecord]:
    background = load_matrix("BLOSUM62").background
    rng = np.random.default_rng(scenario.seed + 1)
    return [SequenceRecord(f"len{L}", random_sequence(rng, L, background)) for L in (lengths or scenario.lengths)]


def baseline_search(
    queries: Sequence[SequenceRecord],
    db: TargetDB,
    workdir,
    max_seqs: int = 1000,
    inclusion_evalue: float = 10.0,
    matrix=None,
    gaps: GappedKarlinParams = GappedKarlinParams(),
) -> list[GoldenSet]:
    """Full-scan search and profiling, one query after another."""
    matrix = matrix or load_matrix("BLOSUM62")
    workdir = Path(workdir)
    out = []
    for token, query in zip(query_tokens(queries), queries):
        scores = scan_db(query.residues, db, matrix, gaps)
        positive = np.flatnonzero(scores > 0)
        # e-value order equals descending score order; ties by target id
        ranked = positive[np.lexsort((positive, -scores[positive]))][:max_seqs]
        alns: list[Alignment] = []
        for tid in ranked.tolist():
            a = smith_waterman(query.residues, db.sequence(tid), matrix, gaps, db_residues=db.total_residues, target_id=tid)
            if a is not None:
                alns.append(a)
        members = [query] + [db.record(a.target_id) for a in sort_alignments(alns) if db.headers[a.target_id].split()[0] != query.identifier]
        gs = GoldenSet(query, members[:max_seqs], token)
        pssm, _ = make_profile(gs, matrix, gaps, inclusion_evalue)
        qdir = workdir / token
        qdir.mkdir(parents=True, exist_ok=True)
        with open(qdir / "pssm.txt", "wb") as fh:
            write_ascii_pssm(pssm, fh)
        out.append(gs)
    return out


def _median_ms(fn, repeats: int) -> int:
    samples = []
    for _ in range(repeats):
        t0 = time.monotonic()
        fn()
        samples.append((time.monotonic() - t0) * 1000.0)
    return int(round(statistics.median(samples)))


def measure_pipeline(queries, index_dir, scenario: BenchScenario) -> int:
    def once():
        with tempfile.TemporaryDirectory(prefix="profgen-bench-") as tmp:
            cfg = PipelineConfig(
                index_dir=Path(index_dir), workdir=Path(tmp), max_seqs=scenario.max_seqs, workers=scenario.workers
            )
            run_pipeline(cfg, queries=queries)

    return _median_ms(once, scenario.repeats)


def measure_baseline(queries, index_dir, scenario: BenchScenario) -> int:
    def once():
        db = load_db(index_dir)
        with tempfile.TemporaryDirectory(prefix="profgen-base-") as tmp:
            baseline_search(queries, db, tmp, scenario.max_seqs)

    return _median_ms(once, scenario.repeats)


def _shape_flag(batch: int, pipeline_ratio: float, baseline_ratio: float) -> str:
    if batch == 1:
        return "-"
    ok = baseline_ratio >= 0.5 * batch and pipeline_ratio <= PIPELINE_RATIO_MAX
    return "pass" if ok else "warn"


def run_scaling(scenario: BenchScenario, index_dir, queries: Sequence[SequenceRecord] | None = None) -> list[dict]:
    """Median runtimes per batch size.

    Ratios are relative to the first batch size. ``shape`` is ``pass`` when
    the baseline grew at least half-linearly with batch size and the pipeline
    grew at most PIPELINE_RATIO_MAX-fold; ``warn`` otherwise.
    """
    if queries is None:
        queries = generate(scenario)[0]
    db = load_db(index_dir)
    if db.seq_count != scenario.db_size:
        raise ValueError(f"index holds {db.seq_count} sequences, scenario expects {scenario.db_size}")
    rows = []
    for batch in scenario.batch_sizes:
        batch_q = list(queries[:batch])
        pipe = measure_pipeline(batch_q, index_dir, scenario)
        base = measure_baseline(batch_q, index_dir, scenario)
        rows.append({"batch_size": batch, "pipeline_ms": pipe, "baseline_ms": base})
        log.info("batch %d: pipeline %d ms, baseline %d ms", batch, pipe, base)
    first = rows[0]
    for row in rows:
        row["pipeline_ratio"] = round(row["pipeline_ms"] / max(first["pipeline_ms"], 1), 3)
        row["baseline_ratio"] = round(row["baseline_ms"] / max(first["baseline_ms"], 1), 3)
        scaled = row["batch_size"] / first["batch_size"]
        row["shape"] = _shape_flag(int(scaled), row["pipeline_ratio"], row["baseline_ratio"])
    return rows


def run_length_sweep(lengths: Sequence[int], index_dir, scenario: BenchScenario | None = None) -> list[dict]:
    """Single-query runtimes for queries of each length."""
    scenario = scenario or BenchScenario()
    rows = []
    for q in length_queries(scenario, lengths):
        pipe = measure_pipeline([q], index_dir, scenario)
        base = measure_baseline([q], index_dir, scenario)
        rows.append({"query_len": len(q), "pipeline_ms": pipe, "baseline_ms": base, "speedup": round(base / max(pipe, 1), 3)})
    return rows


def rows_to_csv(rows: list[dict], header: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank correlation (average ranks for ties)."""

    def ranks(v):
        order = sorted(range(len(v)), key=lambda i: v[i])
        r = [0.0] * len(v)
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            for t in range(i, j + 1):
                r[order[t]] = (i + j) / 2.0
            i = j + 1
        return r

    rx, ry = ranks(x), ranks(y)
    mx, my = statistics.fmean(rx), statistics.fmean(ry)
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sx = sum((a - mx) ** 2 for a in rx) ** 0.5
    sy = sum((b - my) ** 2 for b in ry) ** 0.5
    return cov / (sx * sy) if sx and sy else 0.0


@dataclass
class RecallReport:
    planted: int
    recovered: int
    per_query: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def recall(self) -> float:
        return self.recovered / self.planted if self.planted else 1.0


def planted_recall(workdir, queries: Sequence[SequenceRecord], scenario: BenchScenario) -> RecallReport:
    """Fraction of planted homologs present in each query's golden.fasta."""
    planted = recovered = 0
    per_query = {}
    for qi, (token, q) in enumerate(zip(query_tokens(queries), queries)):
        golden = Path(workdir) / token / "golden.fasta"
        with open(golden, "rb") as fh:
            members = {r.identifier for r in parse_fasta(fh)}
        expected = {homolog_header(qi, c) for c in range(scenario.homolog_count)}
        found = len(expected & members)
        per_query[q.identifier] = (found, len(expected))
        planted += len(expected)
        recovered += found
    return RecallReport(planted, recovered, per_query)
