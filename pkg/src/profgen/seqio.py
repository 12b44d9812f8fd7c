"""FASTA and tuple-file reading and writing."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from .alphabet import decode, encode

log = logging.getLogger(__name__)

TUPLE_FILENAME = "epsapg.tuple"


class FastaError(ValueError):
    pass


class TupleFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True, eq=False)
class SequenceRecord:
    header: str
    residues: np.ndarray

    def __post_init__(self):
        if "\n" in self.header or "\r" in self.header:
            raise FastaError("header contains a newline")
        if not self.identifier:
            raise FastaError("header has no identifier token")
        if len(self.residues) == 0:
            raise FastaError(f"record {self.identifier!r} has an empty sequence")
        self.residues.setflags(write=False)

    @classmethod
    def from_text(cls, header: str, sequence: str) -> SequenceRecord:
        residues, _ = encode(sequence)
        return cls(header, residues)

    @property
    def identifier(self) -> str:
        parts = self.header.split(None, 1)
        return parts[0] if parts else ""

    @property
    def sequence(self) -> str:
        return decode(self.residues)

    def __len__(self) -> int:
        return len(self.residues)

    def __eq__(self, other):
        if not isinstance(other, SequenceRecord):
            return NotImplemented
        return self.header == other.header and np.array_equal(self.residues, other.residues)

    def __hash__(self):
        return hash((self.header, self.residues.tobytes()))

    def __repr__(self):
        seq = self.sequence
        return f"SequenceRecord({self.header!r}, {seq[:20] + '...' if len(seq) > 20 else seq!r})"


def _as_binary(stream) -> BinaryIO:
    if isinstance(stream, (bytes, bytearray)):
        return io.BytesIO(stream)
    if isinstance(stream, io.TextIOBase):
        return stream.buffer
    return stream


class FastaReader:
    """Streaming FASTA parser; holds one record in memory at a time.

    ``unknown_residues`` counts letters normalized to X so far.
    """

    def __init__(self, stream, check_duplicates: bool = True):
        self._stream = _as_binary(stream)
        self._seen: set[str] | None = set() if check_duplicates else None
        self.unknown_residues = 0

    def __iter__(self) -> Iterator[SequenceRecord]:
        header = None
        chunks: list[bytes] = []
        lineno = 0
        for raw in self._stream:
            lineno += 1
            line = raw.rstrip()
            if not line:
                continue
            if line.startswith(b">"):
                if header is not None:
                    yield self._finish(header, chunks)
                header = line[1:].decode("utf-8").strip()
                chunks = []
            elif header is None:
                raise FastaError(f"line {lineno}: expected '>' at start of FASTA data")
            else:
                chunks.append(line)
        if header is not None:
            yield self._finish(header, chunks)

    def _finish(self, header: str, chunks: list[bytes]) -> SequenceRecord:
        body = b"".join(chunks).replace(b" ", b"").replace(b"\t", b"")
        if not body:
            raise FastaError(f"record {header!r} has an empty sequence")
        try:
            residues, unknown = encode(body)
        except ValueError as exc:
            raise FastaError(f"record {header!r}: {exc}") from None
        if unknown:
            self.unknown_residues += unknown
            log.warning("%s: %d unknown residue(s) mapped to X", header.split()[0] if header else header, unknown)
        record = SequenceRecord(header, residues)
        if self._seen is not None:
            ident = record.identifier
            if ident in self._seen:
                raise FastaError(f"duplicate identifier {ident!r}")
            self._seen.add(ident)
        return record


def parse_fasta(stream, check_duplicates: bool = True) -> list[SequenceRecord]:
    return list(FastaReader(stream, check_duplicates))


def read_fasta(path, check_duplicates: bool = True) -> list[SequenceRecord]:
    with open(path, "rb") as fh:
        return parse_fasta(fh, check_duplicates)


def format_fasta(records: Iterable[SequenceRecord], wrap: int = 60) -> bytes:
    if wrap < 1:
        raise ValueError("wrap must be positive")
    out = []
    for rec in records:
        out.append(f">{rec.header}\n")
        seq = rec.sequence
        for i in range(0, len(seq), wrap):
            out.append(seq[i : i + wrap] + "\n")
    return "".join(out).encode("utf-8")


def write_fasta(records: Iterable[SequenceRecord], stream=None, wrap: int = 60) -> bytes:
    """Serialize records; also writes to ``stream`` when one is given."""
    data = format_fasta(records, wrap)
    if stream is not None:
        stream.write(data)
    return data


@dataclass(frozen=True)
class TupleRecord:
    query_header: str
    target_header: str
    target_sequence: str

    def __post_init__(self):
        for value in (self.query_header, self.target_header, self.target_sequence):
            if "\t" in value or "\n" in value or "\r" in value:
                raise ValueError("tuple fields may not contain tabs or newlines")


def read_tuples(stream) -> list[TupleRecord]:
    return list(iter_tuples(stream))


def iter_tuples(stream) -> Iterator[TupleRecord]:
    for lineno, raw in enumerate(_as_binary(stream), start=1):
        line = raw.decode("utf-8").rstrip("\n")
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise TupleFormatError(lineno, f"expected 3 tab-separated fields, found {len(fields)}")
        try:
            encode(fields[2])
        except (ValueError, UnicodeEncodeError):
            raise TupleFormatError(lineno, "invalid residue in target sequence") from None
        if not fields[2]:
            raise TupleFormatError(lineno, "empty target sequence")
        yield TupleRecord(*fields)


def write_tuples(tuples: Iterable[TupleRecord], stream=None) -> bytes:
    data = "".join(f"{t.query_header}\t{t.target_header}\t{t.target_sequence}\n" for t in tuples)
    raw = data.encode("utf-8")
    if stream is not None:
        stream.write(raw)
    return raw
