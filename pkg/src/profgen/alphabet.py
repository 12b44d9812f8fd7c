"""Amino-acid alphabet, substitution matrices and Karlin-Altschul statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

RESIDUES = "ARNDCQEGHILKMFPSTWYV"
ALPHABET = RESIDUES + "X"
X_INDEX = 20
N_CANONICAL = 20

X_SCORE = -1
X_SELF_SCORE = 0

BUILTIN_MATRICES = (
    "BLOSUM45",
    "BLOSUM50",
    "BLOSUM62",
    "BLOSUM80",
    "BLOSUM90",
    "PAM30",
    "PAM70",
    "PAM250",
)

# Robinson & Robinson (1991) composition; used when a matrix has no
# positive implicit background.
ROBINSON_FREQS = np.array(
    [78.05, 51.29, 44.87, 53.64, 19.25, 42.64, 62.95, 73.77, 21.99, 51.42,
     90.19, 57.44, 22.43, 38.56, 52.03, 71.20, 58.41, 13.30, 32.16, 64.41]
) / 1000.0

LAMBDA_TOL = 1e-10


class MatrixError(ValueError):
    """Raised for unknown, malformed or statistically degenerate matrices."""


def _build_lookup() -> np.ndarray:
    # 255 marks bytes that are not residues at all
    table = np.full(256, 255, dtype=np.uint8)
    for c in range(ord("A"), ord("Z") + 1):
        table[c] = X_INDEX
        table[c + 32] = X_INDEX
    table[ord("*")] = X_INDEX
    for i, aa in enumerate(ALPHABET):
        table[ord(aa)] = i
        table[ord(aa.lower())] = i
    return table


_LOOKUP = _build_lookup()
_LETTERS = np.frombuffer(ALPHABET.encode(), dtype=np.uint8)
_KNOWN = np.zeros(256, dtype=bool)
_KNOWN[_LETTERS] = True
_KNOWN[np.frombuffer(ALPHABET.lower().encode(), dtype=np.uint8)] = True


def encode(seq: str | bytes) -> tuple[np.ndarray, int]:
    """Map residue letters to alphabet indices.

    Letters outside the alphabet (B, Z, J, U, O, ``*``) become X. Returns the
    index array and the number of such substitutions. Any other byte raises
    ``ValueError``.
    """
    raw = np.frombuffer(seq.encode("ascii") if isinstance(seq, str) else seq, dtype=np.uint8)
    idx = _LOOKUP[raw]
    if (idx == 255).any():
        bad = chr(raw[np.argmax(idx == 255)])
        raise ValueError(f"invalid residue character {bad!r}")
    unknown = int((~_KNOWN[raw]).sum())
    return idx, unknown


def decode(indices: np.ndarray) -> str:
    return _LETTERS[np.asarray(indices, dtype=np.intp)].tobytes().decode("ascii")


def is_valid_residue_text(text: str) -> bool:
    try:
        encode(text)
    except (ValueError, UnicodeEncodeError):
        return False
    return len(text) > 0


def kmer_code(indices) -> int:
    """Base-20 packed code of an X-free k-mer (first residue most significant)."""
    code = 0
    for r in indices:
        if r >= N_CANONICAL:
            raise ValueError("k-mer contains X")
        code = code * N_CANONICAL + int(r)
    return code


def kmer_decode(code: int, k: int) -> np.ndarray:
    out = np.empty(k, dtype=np.uint8)
    for i in range(k - 1, -1, -1):
        code, out[i] = divmod(code, N_CANONICAL)
    return out


@dataclass(frozen=True, eq=False)
class SubstitutionMatrix:
    """21x21 integer scores with the ungapped statistics derived from them.

    ``background`` and ``target_freqs`` cover the 20 canonical residues only;
    X is scored by fixed policy and carries no statistics.
    """

    name: str
    scores: np.ndarray
    lambda_u: float
    background: np.ndarray
    target_freqs: np.ndarray
    implicit_background: bool = True

    def __post_init__(self):
        for arr in (self.scores, self.background, self.target_freqs):
            arr.setflags(write=False)

    def score(self, a: str, b: str) -> int:
        return int(self.scores[ALPHABET.index(a.upper()), ALPHABET.index(b.upper())])

    @property
    def max_score(self) -> int:
        return int(self.scores.max())

    @property
    def max_diagonal(self) -> int:
        return int(np.diag(self.scores).max())

    def to_text(self) -> str:
        """Render in the whitespace-separated text format accepted by load_matrix."""
        lines = [f"# {self.name}", "   " + "  ".join(ALPHABET)]
        for i, a in enumerate(ALPHABET):
            lines.append(a + "".join(f"{int(v):3d}" for v in self.scores[i]))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class GappedKarlinParams:
    lambda_g: float = 0.267
    k_const: float = 0.041
    gap_open: int = 11
    gap_extend: int = 1

    def __post_init__(self):
        if self.lambda_g <= 0 or self.k_const <= 0:
            raise ValueError("lambda and K must be positive")
        if self.gap_open < 0 or self.gap_extend < 1:
            raise ValueError("gap_open must be >= 0 and gap_extend >= 1")

    def check_against(self, matrix: SubstitutionMatrix) -> None:
        """Raise if these parameters are inconsistent with ``matrix``."""
        if self.lambda_g > matrix.lambda_u:
            raise ValueError(
                f"gapped lambda {self.lambda_g} exceeds ungapped lambda {matrix.lambda_u:.4f}"
            )
        if self.gap_open + self.gap_extend <= matrix.max_diagonal:
            raise ValueError("gap_open + gap_extend must exceed the largest self-score")


def evalue(raw_score: int, query_len: int, db_residues: int, params: GappedKarlinParams) -> float:
    """Expected chance hits scoring >= raw_score: K*m*n*exp(-lambda*S)."""
    return params.k_const * query_len * db_residues * math.exp(-params.lambda_g * raw_score)


def bit_score(raw_score: int, params: GappedKarlinParams) -> float:
    return (params.lambda_g * raw_score - math.log(params.k_const)) / math.log(2)


def _bisect(func, lo: float, hi: float, tol: float = LAMBDA_TOL) -> float:
    f_lo = func(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = func(mid)
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_lambda(scores: np.ndarray, background: np.ndarray) -> float:
    """Unique positive root of sum_ij P_i P_j exp(lambda s_ij) = 1, by bisection."""
    s = np.asarray(scores, dtype=float)[:N_CANONICAL, :N_CANONICAL]
    p = np.asarray(background, dtype=float)
    pp = np.outer(p, p)
    expected = float((pp * s).sum())
    if expected >= 0 or s.max() <= 0:
        raise MatrixError("no positive lambda root")

    def excess(lam):
        return float((pp * np.exp(lam * s)).sum()) - 1.0

    hi = 1.0
    while excess(hi) <= 0:
        hi *= 2.0
        if hi > 1e3:
            raise MatrixError("no positive lambda root")
    # excess is negative just above zero because the expected score is negative
    lo = hi
    while excess(lo) > 0:
        lo *= 0.5
        if lo < 1e-12:
            raise MatrixError("no positive lambda root")
    return _bisect(excess, lo, hi)


def implicit_background(scores: np.ndarray) -> np.ndarray | None:
    """Background for which the matrix's target frequencies have matching marginals.

    Solves exp(lambda*S) @ P = 1 with sum(P) = 1 for lambda, scanning for a sign
    change and bisecting. Returns None when no root gives an all-positive P.
    """
    s = np.asarray(scores, dtype=float)[:N_CANONICAL, :N_CANONICAL]
    ones = np.ones(N_CANONICAL)

    def excess(lam):
        try:
            return float(np.linalg.solve(np.exp(lam * s), ones).sum()) - 1.0
        except np.linalg.LinAlgError:
            return math.nan

    grid = np.linspace(0.005, 3.0, 600)
    values = [excess(lam) for lam in grid]
    for lo, hi, v_lo, v_hi in zip(grid, grid[1:], values, values[1:]):
        if math.isnan(v_lo) or math.isnan(v_hi) or (v_lo > 0) == (v_hi > 0):
            continue
        lam = _bisect(excess, lo, hi, tol=1e-13)
        p = np.linalg.solve(np.exp(lam * s), ones)
        if (p > 0).all():
            return p / p.sum()
    return None


def parse_matrix_text(text: str, name: str = "custom") -> np.ndarray:
    """Parse a header-row matrix file into the 21x21 scores (X by fixed policy)."""
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if len(rows) < 2:
        raise MatrixError(f"{name}: malformed matrix file (no data rows)")
    header = [c.upper() for c in rows[0]]
    if len(set(header)) != len(header):
        raise MatrixError(f"{name}: duplicate column labels")
    table: dict[str, list[int]] = {}
    for row in rows[1:]:
        label = row[0].upper()
        if len(row) - 1 != len(header):
            raise MatrixError(f"{name}: row {label!r} has {len(row) - 1} values, expected {len(header)}")
        try:
            table[label] = [int(v) for v in row[1:]]
        except ValueError as exc:
            raise MatrixError(f"{name}: non-integer score in row {label!r}") from exc
    missing = [aa for aa in RESIDUES if aa not in table or aa not in header]
    if missing:
        raise MatrixError(f"{name}: missing residues {''.join(missing)}")
    scores = np.full((21, 21), X_SCORE, dtype=np.int32)
    scores[X_INDEX, X_INDEX] = X_SELF_SCORE
    col = [header.index(aa) for aa in RESIDUES]
    for i, aa in enumerate(RESIDUES):
        scores[i, :N_CANONICAL] = [table[aa][c] for c in col]
    if not np.array_equal(scores, scores.T):
        raise MatrixError(f"{name}: matrix is not symmetric")
    return scores


def matrix_from_scores(scores: np.ndarray, name: str = "custom", background=None) -> SubstitutionMatrix:
    """Derive background, lambda_u and target frequencies for a score matrix."""
    scores = np.array(scores, dtype=np.int32)
    if scores.shape == (N_CANONICAL, N_CANONICAL):
        full = np.full((21, 21), X_SCORE, dtype=np.int32)
        full[X_INDEX, X_INDEX] = X_SELF_SCORE
        full[:N_CANONICAL, :N_CANONICAL] = scores
        scores = full
    if scores.shape != (21, 21):
        raise MatrixError(f"{name}: expected a 20x20 or 21x21 matrix")
    if not np.array_equal(scores, scores.T):
        raise MatrixError(f"{name}: matrix is not symmetric")
    implicit = background is None
    if implicit:
        s = scores[:N_CANONICAL, :N_CANONICAL]
        if (s == s.flat[0]).all():
            raise MatrixError(f"{name}: no positive lambda root")
        background = implicit_background(scores)
        if background is None:
            implicit = False
            background = ROBINSON_FREQS / ROBINSON_FREQS.sum()
    background = np.asarray(background, dtype=float)
    if background.shape != (N_CANONICAL,) or (background <= 0).any():
        raise MatrixError(f"{name}: background must be 20 positive frequencies")
    background = background / background.sum()
    lam = solve_lambda(scores, background)
    q = np.outer(background, background) * np.exp(lam * scores[:N_CANONICAL, :N_CANONICAL])
    q /= q.sum()
    return SubstitutionMatrix(name, scores, lam, background, q, implicit)


@lru_cache(maxsize=None)
def _builtin(name: str) -> SubstitutionMatrix:
    text = builtin_matrix_text(name)
    return matrix_from_scores(parse_matrix_text(text, name), name)


def builtin_matrix_text(name: str) -> str:
    """Verbatim text of an embedded matrix file."""
    key = name.upper()
    if key not in BUILTIN_MATRICES:
        raise MatrixError(f"unknown matrix {name!r}")
    return resources.files("profgen").joinpath("matrices", key).read_text()


def load_matrix(name_or_path: str | Path = "BLOSUM62") -> SubstitutionMatrix:
    """Load a built-in matrix by name, or a matrix text file by path."""
    if isinstance(name_or_path, str) and name_or_path.upper() in BUILTIN_MATRICES:
        return _builtin(name_or_path.upper())
    path = Path(name_or_path)
    if not path.is_file():
        raise MatrixError(f"unknown matrix {str(name_or_path)!r}")
    return matrix_from_scores(parse_matrix_text(path.read_text(), path.name), path.name)
