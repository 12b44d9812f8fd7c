"""Compiled inner loops. All kernels release the GIL.

Sequences are uint8 residue-index arrays; ``S`` is the 21x21 int32 score
matrix. Gap of length g costs ``go + g * ge``.
"""

import numba
import numpy as np

NEG = -(1 << 28)

LANES = 32
PAD_SCORE = -1000
INT16_SAFE = 30000

OP_MATCH, OP_INS, OP_DEL = 0, 1, 2


@numba.njit(nogil=True, cache=True)
def diagonal_max(q, t, S, diag):
    """Best contiguous segment score on diagonal ``diag`` = i - j (Kadane)."""
    if diag >= 0:
        i, j = diag, 0
    else:
        i, j = 0, -diag
    best = 0
    run = 0
    while i < q.size and j < t.size:
        run += S[q[i], t[j]]
        if run < 0:
            run = 0
        if run > best:
            best = run
        i += 1
        j += 1
    return best


@numba.njit(nogil=True, cache=True)
def diagonal_scores(q, pool, offsets, lengths, tids, diags, S):
    out = np.empty(tids.size, np.int32)
    for c in range(tids.size):
        o = offsets[tids[c]]
        t = pool[o : o + lengths[tids[c]]]
        out[c] = diagonal_max(q, t, S, diags[c])
    return out


@numba.njit(nogil=True, cache=True)
def sw_score(q, t, S, go, ge):
    """Affine-gap local alignment score, linear memory, int32."""
    m = q.size
    oe = go + ge
    H = np.zeros(m + 1, np.int32)
    F = np.full(m + 1, NEG, np.int32)
    best = 0
    for j in range(t.size):
        row = S[t[j]]
        diag = 0
        e = NEG
        h_up = 0
        for i in range(1, m + 1):
            f = max(H[i] - oe, F[i] - ge)
            F[i] = f
            e = max(h_up - oe, e - ge)
            h = diag + row[q[i - 1]]
            if f > h:
                h = f
            if e > h:
                h = e
            if h < 0:
                h = 0
            diag = H[i]
            H[i] = h
            h_up = h
            if h > best:
                best = h
    return best


@numba.njit(nogil=True, cache=True)
def _scan_scalar(q, pool, offsets, lengths, S, go, ge, out):
    for s in range(offsets.size):
        o = offsets[s]
        out[s] = sw_score(q, pool[o : o + lengths[s]], S, go, ge)


@numba.njit(nogil=True, cache=True)
def _scan_lanes(q, pool, offsets, lengths, order, S, go, ge, out):
    # LANES targets advance in lockstep so the inner loop vectorizes; int16 is
    # safe because the caller bounds the maximum attainable score.
    n_seq = order.size
    m = q.size
    oe = np.int16(go + ge)
    ge16 = np.int16(ge)
    zero = np.int16(0)
    prof = np.full((m, 22), PAD_SCORE, np.int16)
    for i in range(m):
        for a in range(21):
            prof[i, a] = S[q[i], a]
    H = np.zeros((m + 1, LANES), np.int16)
    F = np.zeros((m + 1, LANES), np.int16)
    G = np.zeros((m, LANES), np.int16)
    diag = np.zeros(LANES, np.int16)
    e = np.zeros(LANES, np.int16)
    h_up = np.zeros(LANES, np.int16)
    best = np.zeros(LANES, np.int16)
    res = np.zeros(LANES, np.int64)
    for g0 in range(0, n_seq, LANES):
        H[:] = 0
        F[:] = -oe
        best[:] = 0
        width = min(LANES, n_seq - g0)
        longest = 0
        for lane in range(width):
            longest = max(longest, lengths[order[g0 + lane]])
        for j in range(longest):
            for lane in range(LANES):
                r = 21
                if lane < width:
                    s = order[g0 + lane]
                    if j < lengths[s]:
                        r = pool[offsets[s] + j]
                res[lane] = r
            for i in range(m):
                for lane in range(LANES):
                    G[i, lane] = prof[i, res[lane]]
            diag[:] = 0
            e[:] = -oe
            h_up[:] = 0
            for i in range(1, m + 1):
                Hi = H[i]
                Fi = F[i]
                Gi = G[i - 1]
                for lane in range(LANES):
                    f = max(np.int16(Hi[lane] - oe), np.int16(Fi[lane] - ge16))
                    Fi[lane] = f
                    ee = max(np.int16(h_up[lane] - oe), np.int16(e[lane] - ge16))
                    e[lane] = ee
                    h = np.int16(diag[lane] + Gi[lane])
                    h = max(h, f)
                    h = max(h, ee)
                    h = max(h, zero)
                    diag[lane] = Hi[lane]
                    Hi[lane] = h
                    h_up[lane] = h
                    best[lane] = max(best[lane], h)
        for lane in range(width):
            out[order[g0 + lane]] = best[lane]


def scan_scores(q, pool, offsets, lengths, S, go, ge):
    """Local alignment score of ``q`` against every sequence of a residue pool."""
    out = np.zeros(offsets.size, np.int32)
    if offsets.size == 0:
        return out
    max_pair = int(S.max()) * min(int(q.size), int(lengths.max()))
    if max_pair < INT16_SAFE and go + ge < INT16_SAFE:
        order = np.argsort(lengths, kind="stable")
        _scan_lanes(q, pool, offsets, lengths, order, S, go, ge, out)
    else:
        _scan_scalar(q, pool, offsets, lengths, S, go, ge, out)
    return out


@numba.njit(nogil=True, cache=True)
def sw_traceback(prof, t, go, ge, band_diag, band_width):
    """Full-table affine Smith-Waterman with canonical traceback.

    ``prof[i, a]`` scores query position i against residue a (a matrix row
    per query residue, or a PSSM).

    When ``band_width >= 0`` only cells with ``|(i - j) - band_diag| <= band_width``
    are filled (0-based i, j). Returns ``(score, q_end, t_end, q_start,
    t_start, ops)`` with inclusive 0-based coordinates and ``ops`` a reversed
    per-column op array; score 0 means no alignment.
    """
    m = prof.shape[0]
    n = t.size
    oe = go + ge
    H = np.zeros((m + 1, n + 1), np.int32)
    E = np.full((m + 1, n + 1), NEG, np.int32)
    F = np.full((m + 1, n + 1), NEG, np.int32)
    best = 0
    bi = 0
    bj = 0
    banded = band_width >= 0
    for i in range(1, m + 1):
        row = prof[i - 1]
        for j in range(1, n + 1):
            if banded:
                d = (i - 1) - (j - 1) - band_diag
                if d > band_width or d < -band_width:
                    continue
            e = max(H[i, j - 1] - oe, E[i, j - 1] - ge)
            f = max(H[i - 1, j] - oe, F[i - 1, j] - ge)
            E[i, j] = e
            F[i, j] = f
            h = H[i - 1, j - 1] + row[t[j - 1]]
            if f > h:
                h = f
            if e > h:
                h = e
            if h < 0:
                h = 0
            H[i, j] = h
            if h > best:
                best = h
                bi = i
                bj = j
    ops = np.empty(m + n, np.uint8)
    n_ops = 0
    if best == 0:
        return 0, -1, -1, -1, -1, ops[:0]
    i = bi
    j = bj
    state = 0  # 0 = H, 1 = F (query residue vs gap), 2 = E (gap vs target residue)
    while True:
        if state == 0:
            h = H[i, j]
            if h == H[i - 1, j - 1] + prof[i - 1, t[j - 1]]:
                ops[n_ops] = OP_MATCH
                n_ops += 1
                i -= 1
                j -= 1
                if H[i, j] == 0:
                    break
            elif h == F[i, j]:
                state = 1
            else:
                state = 2
        elif state == 1:
            ops[n_ops] = OP_INS
            n_ops += 1
            if F[i, j] == H[i - 1, j] - oe:
                state = 0
            i -= 1
        else:
            ops[n_ops] = OP_DEL
            n_ops += 1
            if E[i, j] == H[i, j - 1] - oe:
                state = 0
            j -= 1
    return best, bi - 1, bj - 1, i, j, ops[:n_ops]
