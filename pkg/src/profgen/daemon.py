"""Resident-index search daemon over a local stream socket.

Request frame::

    u32 length           bytes that follow (type byte included)
    u8  type             1 = search, 255 = shutdown
    config block         UTF-8 ``key=value`` lines, ended by an empty line
    FASTA payload        remaining bytes

Response frame::

    u32 length           bytes that follow
    u8  status           0 ok, 1 pipeline/input error, 2 malformed frame, 3 oversized frame
    entries              repeated (u32 name_len, name, u64 content_len, content)

Error responses carry a single ``error`` entry with the message text.
"""

from __future__ import annotations

import logging
import os
import socket
import struct
import tempfile
import time
from dataclasses import fields
from pathlib import Path

from .alphabet import load_matrix
from .index import load_index
from .pipeline import PipelineConfig, PipelineError, run_pipeline
from .seqio import parse_fasta

log = logging.getLogger(__name__)

MSG_SEARCH = 1
MSG_SHUTDOWN = 255

STATUS_OK = 0
STATUS_ERROR = 1
STATUS_MALFORMED = 2
STATUS_OVERSIZED = 3

DEFAULT_MAX_FRAME = 256 * 1024 * 1024

_LEN = struct.Struct("<I")
_NAME_LEN = struct.Struct("<I")
_CONTENT_LEN = struct.Struct("<Q")

# config keys a client may override, with their parsers
_OVERRIDES = {
    "max_seqs": int,
    "inclusion_evalue": float,
    "evalue": float,
    "min_ungapped_score": int,
    "workers": int,
    "outputs": str,
    "matrix": str,
    "gap_open": int,
    "gap_extend": int,
    "similar_kmer_threshold": int,
    "band_width": int,
    "beta": float,
    "iterations": int,
}


class DaemonError(RuntimeError):
    def __init__(self, status: int, message: str):
        super().__init__(f"daemon status {status}: {message}")
        self.status = status


class FrameError(ValueError):
    pass


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def encode_entries(files: dict[str, bytes]) -> bytes:
    parts = []
    for name in sorted(files):
        raw = name.encode("utf-8")
        parts += [_NAME_LEN.pack(len(raw)), raw, _CONTENT_LEN.pack(len(files[name])), files[name]]
    return b"".join(parts)


def decode_entries(body: bytes) -> dict[str, bytes]:
    files = {}
    at = 0
    while at < len(body):
        if at + _NAME_LEN.size > len(body):
            raise FrameError("truncated entry name length")
        (n,) = _NAME_LEN.unpack_from(body, at)
        at += _NAME_LEN.size
        name = body[at : at + n].decode("utf-8")
        at += n
        if at + _CONTENT_LEN.size > len(body):
            raise FrameError("truncated entry content length")
        (size,) = _CONTENT_LEN.unpack_from(body, at)
        at += _CONTENT_LEN.size
        if at + size > len(body):
            raise FrameError("truncated entry content")
        files[name] = body[at : at + size]
        at += size
    return files


def encode_request(msg_type: int, config: dict | None = None, fasta: bytes = b"") -> bytes:
    block = "".join(f"{k}={v}\n" for k, v in (config or {}).items()) + "\n"
    body = bytes([msg_type]) + block.encode("utf-8") + fasta
    return _LEN.pack(len(body)) + body


def parse_request_body(body: bytes) -> tuple[int, dict[str, str], bytes]:
    if not body:
        raise FrameError("empty frame")
    msg_type = body[0]
    if msg_type == MSG_SHUTDOWN:
        return msg_type, {}, b""
    if msg_type != MSG_SEARCH:
        raise FrameError(f"unknown message type {msg_type}")
    rest = body[1:]
    if rest.startswith(b"\n"):
        block, fasta = b"", rest[1:]
    else:
        end = rest.find(b"\n\n")
        if end < 0:
            raise FrameError("config block is not terminated by an empty line")
        block, fasta = rest[: end + 1], rest[end + 2 :]
    config = {}
    for line in block.decode("utf-8").splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FrameError(f"config line without '=': {line!r}")
        config[key.strip()] = value.strip()
    return msg_type, config, fasta


def _response(status: int, files: dict[str, bytes]) -> bytes:
    body = bytes([status]) + encode_entries(files)
    return _LEN.pack(len(body)) + body


def _apply_overrides(base: PipelineConfig, overrides: dict[str, str]) -> PipelineConfig:
    values = {f.name: getattr(base, f.name) for f in fields(PipelineConfig)}
    for key, raw in overrides.items():
        if key not in _OVERRIDES:
            raise ValueError(f"unknown config key {key!r}")
        target = "inclusion_evalue" if key == "evalue" else key
        values[target] = _OVERRIDES[key](raw)
    return PipelineConfig(**values)


def collect_outputs(workdir: Path) -> dict[str, bytes]:
    return {
        p.relative_to(workdir).as_posix(): p.read_bytes()
        for p in sorted(workdir.rglob("*"))
        if p.is_file()
    }


class SearchDaemon:
    """Holds one loaded index and answers search frames until shut down."""

    def __init__(self, index_dir, socket_path, max_frame: int = DEFAULT_MAX_FRAME, base_config=None):
        self.index_dir = Path(index_dir)
        self.socket_path = Path(socket_path)
        self.max_frame = max_frame
        t0 = time.monotonic()
        self.resident = load_index(self.index_dir)
        self.load_ms = int(round((time.monotonic() - t0) * 1000))
        self.base = base_config or PipelineConfig(index_dir=self.index_dir)
        self.matrix = load_matrix(self.base.matrix)
        self.requests = 0
        self._sock: socket.socket | None = None

    def bind(self) -> None:
        if self.socket_path.exists():
            self.socket_path.unlink()
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        sock.bind(str(self.socket_path))
        sock.listen(8)
        self._sock = sock
        log.info("serving %s on %s (index loaded in %d ms)", self.index_dir, self.socket_path, self.load_ms)

    def serve_forever(self) -> None:
        if self._sock is None:
            self.bind()
        try:
            while True:
                conn, _ = self._sock.accept()
                with conn:
                    if not self._handle(conn):
                        break
        finally:
            self.close()

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None
        if self.socket_path.exists():
            self.socket_path.unlink()

    def _handle(self, conn: socket.socket) -> bool:
        """Serve frames on one connection; False once a shutdown frame arrives."""
        while True:
            try:
                head = conn.recv(_LEN.size, socket.MSG_WAITALL)
            except OSError:
                return True
            if not head:
                return True
            if len(head) < _LEN.size:
                self._send(conn, STATUS_MALFORMED, {"error": b"truncated frame length"})
                return True
            (length,) = _LEN.unpack(head)
            if length > self.max_frame:
                self._send(conn, STATUS_OVERSIZED, {"error": f"frame of {length} bytes exceeds cap {self.max_frame}".encode()})
                return True
            try:
                body = _recv_exact(conn, length)
                msg_type, config, fasta = parse_request_body(body)
            except (ConnectionError, FrameError, UnicodeDecodeError) as exc:
                self._send(conn, STATUS_MALFORMED, {"error": str(exc).encode()})
                return True
            if msg_type == MSG_SHUTDOWN:
                self._send(conn, STATUS_OK, {})
                return False
            status, files = self.search(config, fasta)
            self._send(conn, status, files)

    def _send(self, conn, status, files):
        try:
            conn.sendall(_response(status, files))
        except OSError:
            log.warning("client went away before the response was sent")

    def search(self, overrides: dict[str, str], fasta: bytes) -> tuple[int, dict[str, bytes]]:
        self.requests += 1
        try:
            cfg = _apply_overrides(self.base, overrides)
            queries = parse_fasta(fasta)
            with tempfile.TemporaryDirectory(prefix="profgen-req-") as tmp:
                cfg.workdir = Path(tmp)
                run_pipeline(cfg, resident=self.resident, queries=queries, matrix=self._matrix_for(cfg))
                return STATUS_OK, collect_outputs(Path(tmp))
        except (PipelineError, ValueError, KeyError) as exc:
            return STATUS_ERROR, {"error": str(exc).encode()}

    def _matrix_for(self, cfg):
        return self.matrix if cfg.matrix == self.base.matrix else load_matrix(cfg.matrix)


def daemon_serve(index_dir, socket_path, max_frame: int = DEFAULT_MAX_FRAME, base_config=None) -> None:
    SearchDaemon(index_dir, socket_path, max_frame, base_config).serve_forever()


def send_frame(socket_path, frame: bytes, timeout: float | None = None) -> tuple[int, dict[str, bytes]]:
    with socket.socket(socket.AF_UNIX, socket.SOCK_STREAM) as sock:
        sock.settimeout(timeout)
        sock.connect(str(socket_path))
        sock.sendall(frame)
        (length,) = _LEN.unpack(_recv_exact(sock, _LEN.size))
        body = _recv_exact(sock, length)
    return body[0], decode_entries(body[1:])


def daemon_query(socket_path, fasta_payload: bytes, cfg_overrides: dict | None = None, timeout=None) -> dict[str, bytes]:
    """Send one search request; returns output files keyed by relative path."""
    status, files = send_frame(socket_path, encode_request(MSG_SEARCH, cfg_overrides, fasta_payload), timeout)
    if status != STATUS_OK:
        raise DaemonError(status, files.get("error", b"").decode("utf-8", "replace"))
    return files


def daemon_shutdown(socket_path, timeout=None) -> None:
    status, files = send_frame(socket_path, encode_request(MSG_SHUTDOWN), timeout)
    if status != STATUS_OK:
        raise DaemonError(status, files.get("error", b"").decode("utf-8", "replace"))


def wait_for_socket(socket_path, timeout: float = 30.0) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if os.path.exists(socket_path):
            try:
                with socket.socket(socket.AF_UNIX, socket.SOCK_STREAM) as s:
                    s.connect(str(socket_path))
                return
            except OSError:
                pass
        time.sleep(0.05)
    raise TimeoutError(f"daemon socket {socket_path} did not come up")
