"""PSSM construction from golden sets: stacking, weighting, pseudocounts, output."""

from __future__ import annotations

import logging
import shlex
import struct
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .align import Alignment, smith_waterman
from .alphabet import (
    N_CANONICAL,
    RESIDUES,
    X_SCORE,
    GappedKarlinParams,
    SubstitutionMatrix,
    decode,
)
from .golden import GoldenSet
from .seqio import SequenceRecord

log = logging.getLogger(__name__)

DEFAULT_INCLUSION_EVALUE = 10.0
DEFAULT_BETA = 10.0
NO_RESIDUE = -1

BINARY_MAGIC = b"EPSP"
BINARY_VERSION = 1

ASCII_TITLE = (
    "Last position-specific scoring matrix computed, weighted observed percentages rounded, "
    "information per position"
)


@dataclass
class ColumnStack:
    """Query-anchored residue stack: row 0 is the query, one row per included member.

    ``rows[r, p]`` is the residue index member r places at query position p, or
    ``NO_RESIDUE`` where it is gapped or does not reach.
    """

    query: SequenceRecord
    rows: np.ndarray
    member_headers: list[str]
    alignments: list[Alignment] = field(default_factory=list)
    excluded: int = 0

    @property
    def depth(self) -> int:
        return self.rows.shape[0]


def stack_alignments(
    golden: GoldenSet,
    matrix: SubstitutionMatrix,
    gaps: GappedKarlinParams = GappedKarlinParams(),
    inclusion_evalue: float = DEFAULT_INCLUSION_EVALUE,
    profile: np.ndarray | None = None,
) -> ColumnStack:
    """Align every golden member to the query and project it onto query columns.

    E-values are computed against the golden set's total residue count; members
    above ``inclusion_evalue`` are left out. Residues a member inserts between
    query positions are discarded.
    """
    if not golden.members:
        raise ValueError("empty golden set")
    query = golden.members[0]
    q = query.residues
    space = golden.residue_count
    rows = [q.astype(np.int8)]
    headers = [query.header]
    kept: list[Alignment] = []
    excluded = 0
    for mid, member in enumerate(golden.members[1:], start=1):
        aln = smith_waterman(q, member.residues, matrix, gaps, db_residues=space, target_id=mid, profile=profile)
        if aln is None or aln.evalue > inclusion_evalue:
            excluded += 1
            continue
        row = np.full(q.size, NO_RESIDUE, dtype=np.int8)
        qi, ti = aln.q_start, aln.t_start
        t = member.residues
        for op, n in aln.ops:
            if op == "M":
                row[qi : qi + n] = t[ti : ti + n]
                qi += n
                ti += n
            elif op == "I":
                qi += n
            else:
                ti += n
        rows.append(row)
        headers.append(member.header)
        kept.append(aln)
    return ColumnStack(query, np.vstack(rows), headers, kept, excluded)


@dataclass(frozen=True)
class ProfileColumn:
    query_residue: str
    weighted_freqs: np.ndarray
    pseudo_freqs: np.ndarray
    mixed_freqs: np.ndarray
    scores: np.ndarray
    info_content: float
    n_eff: float


@dataclass(eq=False)
class PSSM:
    """Per-position profile stored as (length x 20) arrays in RESIDUES order."""

    query_header: str
    query: np.ndarray
    matrix_name: str
    lambda_u: float
    weighted_freqs: np.ndarray
    pseudo_freqs: np.ndarray
    mixed_freqs: np.ndarray
    scores: np.ndarray
    info_content: np.ndarray
    n_eff: np.ndarray
    residue_order: str = RESIDUES

    def __len__(self) -> int:
        return int(self.query.size)

    @property
    def columns(self) -> list[ProfileColumn]:
        seq = decode(self.query)
        return [
            ProfileColumn(
                seq[p],
                self.weighted_freqs[p],
                self.pseudo_freqs[p],
                self.mixed_freqs[p],
                self.scores[p],
                float(self.info_content[p]),
                float(self.n_eff[p]),
            )
            for p in range(len(self))
        ]

    def search_profile(self) -> np.ndarray:
        """Scores as a (length x 21) int32 profile usable by smith_waterman."""
        prof = np.full((len(self), 21), X_SCORE, dtype=np.int32)
        prof[:, :N_CANONICAL] = self.scores
        return prof

    def same_as(self, other: PSSM) -> bool:
        return (
            self.query_header == other.query_header
            and self.matrix_name == other.matrix_name
            and self.lambda_u == other.lambda_u
            and self.residue_order == other.residue_order
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in (
                    "query",
                    "weighted_freqs",
                    "pseudo_freqs",
                    "mixed_freqs",
                    "scores",
                    "info_content",
                    "n_eff",
                )
            )
        )


def position_weights(rows: np.ndarray) -> np.ndarray:
    """Henikoff position-based sequence weights, normalized to sum to 1.

    In each column a sequence earns 1 / (distinct residue types * copies of
    its residue); gaps and X earn nothing.
    """
    valid = (rows >= 0) & (rows < N_CANONICAL)
    n_rows, length = rows.shape
    counts = np.zeros((length, N_CANONICAL))
    for r in range(n_rows):
        cols = np.flatnonzero(valid[r])
        np.add.at(counts, (cols, rows[r, cols]), 1.0)
    distinct = (counts > 0).sum(axis=1)
    weights = np.zeros(n_rows)
    for r in range(n_rows):
        cols = np.flatnonzero(valid[r])
        if cols.size:
            weights[r] = (1.0 / (distinct[cols] * counts[cols, rows[r, cols]])).sum()
    total = weights.sum()
    return weights / total if total > 0 else weights


def build_pssm(stack: ColumnStack, matrix: SubstitutionMatrix, beta: float = DEFAULT_BETA) -> PSSM:
    rows = stack.rows
    if rows.size == 0:
        raise ValueError("empty column stack")
    # canonical member order so float sums do not depend on golden-set order
    members = rows[1:]
    rows = np.vstack([rows[:1], members[np.lexsort(members.T[::-1])]]) if members.shape[0] > 1 else rows
    length = rows.shape[1]
    valid = (rows >= 0) & (rows < N_CANONICAL)
    weights = position_weights(rows)

    f = np.zeros((length, N_CANONICAL))
    for r in range(rows.shape[0]):
        cols = np.flatnonzero(valid[r])
        np.add.at(f, (cols, rows[r, cols]), weights[r])
    observed = f.sum(axis=1)
    has_obs = observed > 0
    f[has_obs] /= observed[has_obs, None]

    covered = valid[1:].any(axis=0) if rows.shape[0] > 1 else np.zeros(length, dtype=bool)
    if covered.any():
        distinct = (f[covered] > 0).sum(axis=1)
        n_eff = float(distinct.mean())
    else:
        n_eff = 1.0
    alpha = n_eff - 1.0

    background = matrix.background
    g = (f / background) @ matrix.target_freqs
    g[has_obs] /= g[has_obs].sum(axis=1, keepdims=True)
    # a column nobody observed (query X, no members) falls back to background
    g[~has_obs] = background
    mixed = (alpha * f + beta * g) / (alpha + beta)
    mixed[~has_obs] = background

    ratio = mixed / background
    scores = np.rint(np.log(ratio) / matrix.lambda_u).astype(np.int32)
    info = (mixed * np.log2(ratio)).sum(axis=1)
    return PSSM(
        query_header=stack.query.header,
        query=np.array(stack.query.residues, dtype=np.uint8),
        matrix_name=matrix.name,
        lambda_u=float(matrix.lambda_u),
        weighted_freqs=f,
        pseudo_freqs=g,
        mixed_freqs=mixed,
        scores=scores,
        info_content=np.maximum(info, 0.0),
        n_eff=np.full(length, n_eff),
    )


def make_profile(
    golden: GoldenSet,
    matrix: SubstitutionMatrix,
    gaps: GappedKarlinParams = GappedKarlinParams(),
    inclusion_evalue: float = DEFAULT_INCLUSION_EVALUE,
    beta: float = DEFAULT_BETA,
    iterations: int = 1,
) -> tuple[PSSM, ColumnStack]:
    """Stack and profile a golden set; later iterations align with the previous PSSM."""
    profile = None
    for _ in range(max(1, iterations)):
        stack = stack_alignments(golden, matrix, gaps, inclusion_evalue, profile)
        pssm = build_pssm(stack, matrix, beta)
        profile = pssm.search_profile()
    return pssm, stack


def format_ascii_pssm(pssm: PSSM) -> str:
    letters = "".join(f"{a:>3s}" for a in pssm.residue_order)
    pct_letters = "".join(f"{a:>4s}" for a in pssm.residue_order)
    lines = [ASCII_TITLE, " " * 9 + letters + " " + pct_letters]
    seq = decode(pssm.query)
    pct = np.rint(pssm.mixed_freqs * 100).astype(int)
    for p in range(len(pssm)):
        score_txt = "".join(f"{int(v):3d}" for v in pssm.scores[p])
        pct_txt = "".join(f"{int(v):4d}" for v in pct[p])
        lines.append(f"{p + 1:5d} {seq[p]}  {score_txt} {pct_txt}  {pssm.info_content[p]:.2f}")
    return "\n".join(lines) + "\n"


def write_ascii_pssm(pssm: PSSM, stream=None) -> bytes:
    data = format_ascii_pssm(pssm).encode("ascii")
    if stream is not None:
        stream.write(data)
    return data


def read_ascii_scores(text: str) -> np.ndarray:
    """Score block (length x 20) of an ASCII PSSM."""
    rows = []
    for line in text.splitlines()[2:]:
        if line.strip():
            rows.append([int(v) for v in line.split()[2:22]])
    return np.array(rows, dtype=np.int32).reshape(-1, N_CANONICAL)


_BIN_HEAD = struct.Struct("<4sHHIdII")
_COL_DTYPE = np.dtype(
    [
        ("query_residue", "u1"),
        ("n_eff", "<f8"),
        ("info_content", "<f8"),
        ("weighted_freqs", "<f8", (20,)),
        ("pseudo_freqs", "<f8", (20,)),
        ("mixed_freqs", "<f8", (20,)),
        ("scores", "<i4", (20,)),
    ]
)


def write_binary_pssm(pssm: PSSM, stream=None) -> bytes:
    """Binary profile: header, UTF-8 query header and matrix name, packed columns."""
    header = pssm.query_header.encode("utf-8")
    name = pssm.matrix_name.encode("utf-8")
    cols = np.zeros(len(pssm), dtype=_COL_DTYPE)
    cols["query_residue"] = pssm.query
    cols["n_eff"] = pssm.n_eff
    cols["info_content"] = pssm.info_content
    cols["weighted_freqs"] = pssm.weighted_freqs
    cols["pseudo_freqs"] = pssm.pseudo_freqs
    cols["mixed_freqs"] = pssm.mixed_freqs
    cols["scores"] = pssm.scores
    data = b"".join(
        [
            _BIN_HEAD.pack(BINARY_MAGIC, BINARY_VERSION, 0, len(pssm), pssm.lambda_u, len(header), len(name)),
            header,
            name,
            pssm.residue_order.encode("ascii"),
            cols.tobytes(),
        ]
    )
    if stream is not None:
        stream.write(data)
    return data


def read_binary_pssm(data: bytes | BinaryIO) -> PSSM:
    if not isinstance(data, (bytes, bytearray, memoryview)):
        data = data.read()
    if len(data) < _BIN_HEAD.size:
        raise ValueError("truncated PSSM file")
    magic, version, _, length, lam, h_len, n_len = _BIN_HEAD.unpack_from(data)
    if magic != BINARY_MAGIC:
        raise ValueError(f"bad PSSM magic {magic!r}")
    if version != BINARY_VERSION:
        raise ValueError(f"unsupported PSSM version {version}")
    at = _BIN_HEAD.size
    expected = at + h_len + n_len + N_CANONICAL + length * _COL_DTYPE.itemsize
    if len(data) != expected:
        raise ValueError("truncated PSSM file" if len(data) < expected else "trailing bytes in PSSM file")
    header = bytes(data[at : at + h_len]).decode("utf-8")
    at += h_len
    name = bytes(data[at : at + n_len]).decode("utf-8")
    at += n_len
    order = bytes(data[at : at + N_CANONICAL]).decode("ascii")
    at += N_CANONICAL
    cols = np.frombuffer(data, dtype=_COL_DTYPE, count=length, offset=at)
    return PSSM(
        query_header=header,
        query=cols["query_residue"].copy(),
        matrix_name=name,
        lambda_u=lam,
        weighted_freqs=cols["weighted_freqs"].copy(),
        pseudo_freqs=cols["pseudo_freqs"].copy(),
        mixed_freqs=cols["mixed_freqs"].copy(),
        scores=cols["scores"].astype(np.int32),
        info_content=cols["info_content"].copy(),
        n_eff=cols["n_eff"].copy(),
        residue_order=order,
    )


class ExternalProfilerError(RuntimeError):
    def __init__(self, returncode: int, stderr: str):
        super().__init__(f"external profiler exited with status {returncode}: {stderr.strip()[:500]}")
        self.returncode = returncode


DEFAULT_PSIBLAST_TEMPLATE = (
    "psiblast -query {query} -subject {golden} -evalue {evalue} "
    "-out {alignments} -out_pssm {pssm} -out_ascii_pssm {ascii_pssm}"
)


@dataclass
class PsiBlastAdapter:
    """Hands a golden set's FASTA files to an external PSI-BLAST-like executable.

    The command template is formatted with ``query``, ``golden``, ``evalue``,
    ``alignments``, ``pssm`` and ``ascii_pssm`` paths; outputs land next to
    the golden set.
    """

    template: str = DEFAULT_PSIBLAST_TEMPLATE
    timeout: float | None = None

    def command(self, qdir: Path, evalue: float) -> list[str]:
        fields = {
            "query": qdir / "query.fasta",
            "golden": qdir / "golden.fasta",
            "evalue": evalue,
            "alignments": qdir / "alignments.txt",
            "pssm": qdir / "pssm.chk",
            "ascii_pssm": qdir / "pssm.txt",
        }
        return [part.format(**{k: str(v) for k, v in fields.items()}) for part in shlex.split(self.template)]

    def run(self, qdir, evalue: float = DEFAULT_INCLUSION_EVALUE) -> Path:
        qdir = Path(qdir)
        cmd = self.command(qdir, evalue)
        log.debug("running %s", cmd)
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=self.timeout)
        except FileNotFoundError as exc:
            raise ExternalProfilerError(127, str(exc)) from None
        if proc.returncode != 0:
            raise ExternalProfilerError(proc.returncode, proc.stderr)
        return qdir
