"""Target database store and exact k-mer inverted index, with on-disk format.

Both files share the same preamble::

    magic   4s   b"EPSG"
    version u16
    kind    u16  1 = targetdb.bin, 2 = targetdb.idx
    hash    u64  blake2b-64 of every byte after this field

targetdb.bin continues with ``seq_count u64, total_residues u64,
header_bytes u64``, then ``offsets u64[seq_count]``, ``lengths u32[seq_count]``,
the residue pool ``u8[total_residues]`` and the newline-joined UTF-8 headers.

targetdb.idx continues with ``k u32, reserved u32, n_postings u64,
db_hash u64``, then a directory of ``20**k`` packed ``(offset u64, count u32)``
slots and ``n_postings`` packed ``(seq_id u32, pos u32)`` pairs.

All integers are little-endian.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alphabet import N_CANONICAL, X_INDEX, decode
from .seqio import SequenceRecord, parse_fasta

MAGIC = b"EPSG"
FORMAT_VERSION = 1
KIND_DB = 1
KIND_INDEX = 2
DB_FILENAME = "targetdb.bin"
INDEX_FILENAME = "targetdb.idx"
K_MIN, K_MAX = 4, 7
DEFAULT_K = 5

_PREAMBLE = struct.Struct("<4sHHQ")
_DB_HEAD = struct.Struct("<QQQ")
_IDX_HEAD = struct.Struct("<IIQQ")
DIR_DTYPE = np.dtype([("offset", "<u8"), ("count", "<u4")])
POSTING_DTYPE = np.dtype([("seq_id", "<u4"), ("pos", "<u4")])


class IndexFormatError(ValueError):
    pass


def content_hash(data) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


@dataclass(eq=False)
class TargetDB:
    residue_pool: np.ndarray
    offsets: np.ndarray
    lengths: np.ndarray
    headers: list[str]
    content_hash: int = 0

    @property
    def seq_count(self) -> int:
        return len(self.offsets)

    @property
    def total_residues(self) -> int:
        return int(self.residue_pool.size)

    def sequence(self, i: int) -> np.ndarray:
        o = int(self.offsets[i])
        return self.residue_pool[o : o + int(self.lengths[i])]

    def record(self, i: int) -> SequenceRecord:
        return SequenceRecord(self.headers[i], self.sequence(i).copy())

    def sequence_text(self, i: int) -> str:
        return decode(self.sequence(i))

    @classmethod
    def from_records(cls, records: list[SequenceRecord]) -> TargetDB:
        lengths = np.array([len(r) for r in records], dtype=np.int64)
        offsets = np.zeros(len(records), dtype=np.int64)
        if len(records) > 1:
            np.cumsum(lengths[:-1], out=offsets[1:])
        pool = (
            np.concatenate([r.residues for r in records]).astype(np.uint8)
            if records
            else np.zeros(0, dtype=np.uint8)
        )
        db = cls(pool, offsets, lengths, [r.header for r in records])
        db.content_hash = content_hash(_db_payload(db))
        return db

    def same_content(self, other: TargetDB) -> bool:
        return (
            np.array_equal(self.residue_pool, other.residue_pool)
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.lengths, other.lengths)
            and self.headers == other.headers
        )


@dataclass(eq=False)
class KmerIndex:
    """Postings stored CSR-style: the slots of code c are
    ``seq_ids/positions[starts[c] : starts[c] + counts[c]]``."""

    k: int
    starts: np.ndarray
    counts: np.ndarray
    seq_ids: np.ndarray
    positions: np.ndarray
    built_from: int
    _directory: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_postings(self) -> int:
        return int(self.seq_ids.size)

    def postings(self, code: int) -> list[tuple[int, int]]:
        s, c = int(self.starts[code]), int(self.counts[code])
        return list(zip(self.seq_ids[s : s + c].tolist(), self.positions[s : s + c].tolist()))

    def same_content(self, other: KmerIndex) -> bool:
        return (
            self.k == other.k
            and self.built_from == other.built_from
            and np.array_equal(self.starts, other.starts)
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.seq_ids, other.seq_ids)
            and np.array_equal(self.positions, other.positions)
        )


def check_k(k: int) -> None:
    if not K_MIN <= k <= K_MAX:
        raise ValueError(f"k must be in [{K_MIN}, {K_MAX}], got {k}")


def kmer_codes(residues: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Codes for every window of ``residues`` and a mask of X-free windows."""
    n = residues.size - k + 1
    if n <= 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool)
    r = residues.astype(np.int64)
    codes = np.zeros(n, dtype=np.int64)
    for t in range(k):
        codes = codes * N_CANONICAL + r[t : t + n]
    is_x = np.concatenate([[0], np.cumsum(residues == X_INDEX)])
    clean = (is_x[k:] - is_x[:-k]) == 0
    return codes, clean


def index_db(db: TargetDB, k: int = DEFAULT_K) -> KmerIndex:
    check_k(k)
    pool = db.residue_pool
    codes, clean = kmer_codes(pool, k)
    if codes.size:
        seq_of = np.repeat(np.arange(db.seq_count, dtype=np.int64), db.lengths)[: codes.size]
        ends = (db.offsets + db.lengths)[seq_of]
        positions = np.arange(codes.size, dtype=np.int64)
        valid = clean & (positions + k <= ends)
        pos = positions[valid]
        codes = codes[valid]
        seq_of = seq_of[valid]
        order = np.argsort(codes, kind="stable")
        codes = codes[order]
        seq_ids = seq_of[order].astype(np.uint32)
        local = (pos[order] - db.offsets[seq_of[order]]).astype(np.uint32)
    else:
        seq_ids = np.zeros(0, dtype=np.uint32)
        local = np.zeros(0, dtype=np.uint32)
    counts = np.bincount(codes, minlength=N_CANONICAL**k).astype(np.uint32)
    starts = np.zeros(N_CANONICAL**k, dtype=np.uint64)
    np.cumsum(counts[:-1], out=starts[1:])
    return KmerIndex(k, starts, counts, seq_ids, local, db.content_hash)


def build_index(db_fasta, k: int = DEFAULT_K) -> tuple[TargetDB, KmerIndex]:
    """Parse a FASTA stream into a TargetDB and index its X-free k-mers."""
    check_k(k)
    db = TargetDB.from_records(parse_fasta(db_fasta))
    return db, index_db(db, k)


def _db_payload(db: TargetDB) -> bytes:
    blob = "\n".join(db.headers).encode("utf-8")
    return b"".join(
        [
            _DB_HEAD.pack(db.seq_count, db.total_residues, len(blob)),
            db.offsets.astype("<u8").tobytes(),
            db.lengths.astype("<u4").tobytes(),
            db.residue_pool.astype(np.uint8).tobytes(),
            blob,
        ]
    )


def _index_payload(idx: KmerIndex) -> bytes:
    directory = np.empty(idx.starts.size, dtype=DIR_DTYPE)
    directory["offset"] = idx.starts
    directory["count"] = idx.counts
    postings = np.empty(idx.n_postings, dtype=POSTING_DTYPE)
    postings["seq_id"] = idx.seq_ids
    postings["pos"] = idx.positions
    return b"".join(
        [
            _IDX_HEAD.pack(idx.k, 0, idx.n_postings, idx.built_from),
            directory.tobytes(),
            postings.tobytes(),
        ]
    )


def _write(path: Path, kind: int, payload: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, kind, content_hash(payload)))
        fh.write(payload)


def save_index(db: TargetDB, idx: KmerIndex, dir_path) -> None:
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / DB_FILENAME, KIND_DB, _db_payload(db))
    _write(out / INDEX_FILENAME, KIND_INDEX, _index_payload(idx))


def _read(path: Path, kind: int) -> tuple[memoryview, int]:
    if not path.is_file():
        raise FileNotFoundError(f"missing index file {path.name!r} in {path.parent}")
    data = path.read_bytes()
    if len(data) < _PREAMBLE.size:
        raise IndexFormatError(f"{path.name}: truncated file")
    magic, version, got_kind, digest = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise IndexFormatError(f"{path.name}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"{path.name}: format version {version}, expected {FORMAT_VERSION}")
    if got_kind != kind:
        raise IndexFormatError(f"{path.name}: wrong file kind {got_kind}")
    payload = memoryview(data)[_PREAMBLE.size :]
    return payload, digest


def _need(buf: memoryview, size: int, name: str) -> None:
    if len(buf) < size:
        raise IndexFormatError(f"{name}: truncated file")


def load_db(dir_path) -> TargetDB:
    path = Path(dir_path) / DB_FILENAME
    payload, digest = _read(path, KIND_DB)
    _need(payload, _DB_HEAD.size, path.name)
    n, total, blob_len = _DB_HEAD.unpack_from(payload)
    expected = _DB_HEAD.size + 8 * n + 4 * n + total + blob_len
    _need(payload, expected, path.name)
    if content_hash(payload) != digest:
        raise IndexFormatError(f"{path.name}: content hash mismatch (file corrupted)")
    at = _DB_HEAD.size
    offsets = np.frombuffer(payload, dtype="<u8", count=n, offset=at).astype(np.int64)
    at += 8 * n
    lengths = np.frombuffer(payload, dtype="<u4", count=n, offset=at).astype(np.int64)
    at += 4 * n
    pool = np.frombuffer(payload, dtype=np.uint8, count=total, offset=at)
    at += total
    blob = bytes(payload[at : at + blob_len]).decode("utf-8")
    headers = blob.split("\n") if n else []
    if len(headers) != n:
        raise IndexFormatError(f"{path.name}: header count mismatch")
    return TargetDB(pool, offsets, lengths, headers, digest)


def load_kmer_index(dir_path) -> KmerIndex:
    path = Path(dir_path) / INDEX_FILENAME
    payload, digest = _read(path, KIND_INDEX)
    _need(payload, _IDX_HEAD.size, path.name)
    k, _, n_post, db_hash = _IDX_HEAD.unpack_from(payload)
    check_k(k)
    slots = N_CANONICAL**k
    expected = _IDX_HEAD.size + slots * DIR_DTYPE.itemsize + n_post * POSTING_DTYPE.itemsize
    _need(payload, expected, path.name)
    if content_hash(payload) != digest:
        raise IndexFormatError(f"{path.name}: content hash mismatch (file corrupted)")
    at = _IDX_HEAD.size
    directory = np.frombuffer(payload, dtype=DIR_DTYPE, count=slots, offset=at)
    at += slots * DIR_DTYPE.itemsize
    postings = np.frombuffer(payload, dtype=POSTING_DTYPE, count=n_post, offset=at)
    return KmerIndex(
        k,
        np.ascontiguousarray(directory["offset"]),
        np.ascontiguousarray(directory["count"]),
        np.ascontiguousarray(postings["seq_id"]),
        np.ascontiguousarray(postings["pos"]),
        db_hash,
        directory,
    )


def load_index(dir_path) -> tuple[TargetDB, KmerIndex]:
    db = load_db(dir_path)
    idx = load_kmer_index(dir_path)
    if idx.built_from != db.content_hash:
        raise IndexFormatError("k-mer index was not built from this target database")
    return db, idx
