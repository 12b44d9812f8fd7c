import math

import numpy as np
import pytest

from profgen.alphabet import (
    ALPHABET,
    BUILTIN_MATRICES,
    X_INDEX,
    GappedKarlinParams,
    MatrixError,
    bit_score,
    builtin_matrix_text,
    decode,
    encode,
    evalue,
    kmer_code,
    kmer_decode,
    load_matrix,
    matrix_from_scores,
    parse_matrix_text,
)

from .oracles import evalue_mp, lambda_root


@pytest.fixture(scope="module")
def b62():
    return load_matrix("BLOSUM62")


def _text_scores(text):
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    header = rows[0]
    return {(r[0], c): int(v) for r in rows[1:] for c, v in zip(header, r[1:])}


def test_encode_basics():
    idx, unknown = encode("ARNDCQEGHILKMFPSTWYV")
    assert idx.tolist() == list(range(20))
    assert unknown == 0
    assert encode("acde")[0].tolist() == encode("ACDE")[0].tolist()


def test_unknown_letters_become_x():
    idx, unknown = encode("ABZJUO*X")
    assert idx.tolist() == [0] + [X_INDEX] * 7
    assert unknown == 6  # X itself is a known letter


def test_encode_rejects_non_letters():
    with pytest.raises(ValueError):
        encode("AC-D")
    with pytest.raises(ValueError):
        encode("AC1")


def test_decode_roundtrip():
    assert decode(encode(ALPHABET)[0]) == ALPHABET


def test_kmer_code_roundtrip():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k = int(rng.integers(1, 8))
        kmer = rng.integers(0, 20, size=k).astype(np.uint8)
        assert kmer_decode(kmer_code(kmer), k).tolist() == kmer.tolist()
    with pytest.raises(ValueError):
        kmer_code([0, X_INDEX])


def test_blosum62_matches_embedded_text(b62):
    ref = _text_scores(builtin_matrix_text("BLOSUM62"))
    for i, a in enumerate(ALPHABET[:20]):
        for j, b in enumerate(ALPHABET[:20]):
            assert b62.scores[i, j] == ref[(a, b)]
    # W-W is the most conserved residue in BLOSUM62
    diag = {a: ref[(a, a)] for a in ALPHABET[:20]}
    assert max(diag, key=diag.get) == "W"
    assert b62.score("W", "W") == diag["W"] == 11


@pytest.mark.parametrize("name", BUILTIN_MATRICES)
def test_builtin_matrix_invariants(name):
    m = load_matrix(name)
    assert np.array_equal(m.scores, m.scores.T)
    assert (m.scores[X_INDEX, :20] <= 0).all()
    assert m.scores[X_INDEX, X_INDEX] == 0
    assert m.lambda_u > 0
    assert m.background.sum() == pytest.approx(1.0)
    assert (m.background > 0).all()
    assert m.target_freqs.sum() == pytest.approx(1.0)
    # target frequencies recomputed from scores agree within 2% per row
    s = m.scores[:20, :20]
    q = np.outer(m.background, m.background) * np.exp(m.lambda_u * s)
    assert np.allclose(q.sum(axis=1), m.target_freqs.sum(axis=1), rtol=0.02)
    # round trip: scores -> lambda, q -> scores
    rebuilt = np.rint(np.log(m.target_freqs / np.outer(m.background, m.background)) / m.lambda_u)
    assert np.array_equal(rebuilt.astype(int), s)


def test_lambda_matches_brentq(b62):
    assert b62.lambda_u == pytest.approx(lambda_root(b62.scores[:20, :20], b62.background), abs=1e-9)


def test_identity_matrix_lambda():
    s = np.where(np.eye(20, dtype=bool), 1, -1)
    m = matrix_from_scores(s, "identity", background=np.full(20, 0.05))
    assert m.lambda_u == pytest.approx(lambda_root(s, np.full(20, 0.05)), abs=1e-9)
    # closed form for this matrix: 0.05 e^l + 0.95 e^-l = 1
    assert m.lambda_u == pytest.approx(math.log(19), abs=1e-9)
    # implicit background of a symmetric identity matrix is uniform
    m2 = matrix_from_scores(s, "identity")
    assert np.allclose(m2.background, 0.05)


def test_zero_matrix_has_no_lambda():
    with pytest.raises(MatrixError, match="no positive lambda root"):
        matrix_from_scores(np.zeros((20, 20), dtype=int), "zeros")
    with pytest.raises(MatrixError, match="no positive lambda root"):
        matrix_from_scores(np.zeros((20, 20), dtype=int), "zeros", background=np.full(20, 0.05))


def test_all_positive_matrix_has_no_lambda():
    with pytest.raises(MatrixError, match="no positive lambda root"):
        matrix_from_scores(np.ones((20, 20), dtype=int), "ones", background=np.full(20, 0.05))


def test_unknown_matrix_name():
    with pytest.raises(MatrixError):
        load_matrix("BLOSUM63")


def test_malformed_and_asymmetric_files(tmp_path):
    text = builtin_matrix_text("BLOSUM62")
    with pytest.raises(MatrixError):
        parse_matrix_text("A R\nA 1\n")
    lines = text.splitlines()
    data = [i for i, ln in enumerate(lines) if ln.startswith("A ")][0]
    parts = lines[data].split()
    parts[2] = "3"  # A-R no longer equals R-A
    lines[data] = " ".join(parts)
    with pytest.raises(MatrixError, match="not symmetric"):
        parse_matrix_text("\n".join(lines))
    p = tmp_path / "mine.txt"
    p.write_text(text)
    m = load_matrix(p)
    assert np.array_equal(m.scores, load_matrix("BLOSUM62").scores)


def test_to_text_reparses(b62):
    assert np.array_equal(parse_matrix_text(b62.to_text()), b62.scores)


def test_gapped_params_check(b62):
    GappedKarlinParams().check_against(b62)
    with pytest.raises(ValueError):
        GappedKarlinParams(lambda_g=0.5).check_against(b62)
    with pytest.raises(ValueError):
        GappedKarlinParams(gap_open=0, gap_extend=1).check_against(b62)


def test_evalue_trivial_cases():
    p = GappedKarlinParams()
    assert evalue(0, 200, 10**6, p) == pytest.approx(p.k_const * 200 * 10**6)
    assert evalue(40, 200, 2 * 10**6, p) == pytest.approx(2 * evalue(40, 200, 10**6, p), rel=1e-15)


def test_evalue_reference_point():
    p = GappedKarlinParams()
    ref = evalue_mp(100, 200, 10**6, 0.267, 0.041)
    assert float(ref) == pytest.approx(evalue(100, 200, 10**6, p), rel=5e-7)


def test_evalue_grid_six_digits():
    p = GappedKarlinParams()
    for s in (0, 25, 60, 150, 400):
        for m in (1, 37, 200, 1500, 30000):
            for n in (1, 999, 10**6, 5 * 10**8, 10**11):
                got = evalue(s, m, n, p)
                ref = float(evalue_mp(s, m, n, 0.267, 0.041))
                assert f"{got:.6g}" == f"{ref:.6g}", (s, m, n)


def test_evalue_monotone():
    p = GappedKarlinParams()
    prev = math.inf
    for s in range(0, 300, 7):
        e = evalue(s, 100, 10**6, p)
        assert e < prev
        prev = e
    assert evalue(50, 101, 10**6, p) > evalue(50, 100, 10**6, p)


def test_bit_score_increasing():
    p = GappedKarlinParams()
    bits = [bit_score(s, p) for s in range(0, 200, 5)]
    assert all(b < c for b, c in zip(bits, bits[1:]))
    assert bit_score(0, p) == pytest.approx(-math.log(0.041) / math.log(2))
