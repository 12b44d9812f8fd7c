"""Slow, obviously-correct reference implementations used as test oracles.

Everything here works on plain Python ints and lists so that it shares no
code path with the numba kernels it checks.
"""

from __future__ import annotations

import itertools
import math

NEG = -(10**9)


def gotoh_score(q, t, S, gap_open, gap_extend):
    """Full-table affine-gap local alignment score; a gap of length g costs open + g*extend."""
    m, n = len(q), len(t)
    first = gap_open + gap_extend
    H = [[0] * (n + 1) for _ in range(m + 1)]
    E = [[NEG] * (n + 1) for _ in range(m + 1)]  # gap in query (consumes target)
    F = [[NEG] * (n + 1) for _ in range(m + 1)]  # gap in target (consumes query)
    best = 0
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            E[i][j] = max(E[i][j - 1] - gap_extend, H[i][j - 1] - first)
            F[i][j] = max(F[i - 1][j] - gap_extend, H[i - 1][j] - first)
            H[i][j] = max(0, H[i - 1][j - 1] + int(S[q[i - 1]][t[j - 1]]), E[i][j], F[i][j])
            best = max(best, H[i][j])
    return best


def score_ops(q, t, S, gap_open, gap_extend, q_start, t_start, ops):
    """Re-score an alignment path given as run-length (op, n) pairs."""
    total, qi, ti = 0, q_start, t_start
    for op, n in ops:
        if op == "M":
            for _ in range(n):
                total += int(S[q[qi]][t[ti]])
                qi += 1
                ti += 1
        else:
            total -= gap_open + n * gap_extend
            if op == "I":
                qi += n
            else:
                ti += n
    return total, qi - 1, ti - 1


def best_segment(values):
    """Maximum-sum contiguous segment by enumerating every (start, end); empty segment scores 0."""
    best = 0
    for a in range(len(values)):
        run = 0
        for b in range(a, len(values)):
            run += values[b]
            best = max(best, run)
    return best


def diagonal_values(q, t, S, d):
    """Substitution scores along diagonal d = query_pos - target_pos."""
    out = []
    for i in range(len(q)):
        j = i - d
        if 0 <= j < len(t):
            out.append(int(S[q[i]][t[j]]))
    return out


def kmer_positions(seqs, kmer):
    """Brute-force posting list: (seq_id, pos) of every exact occurrence of ``kmer``."""
    k = len(kmer)
    kmer = list(kmer)
    hits = []
    for sid, s in enumerate(seqs):
        s = list(s)
        for p in range(len(s) - k + 1):
            if s[p : p + k] == kmer:
                hits.append((sid, p))
    return hits


def similar_kmers(kmer, S, threshold, alphabet_size=20):
    """Exhaustive enumeration of every k-mer scoring >= threshold against ``kmer``."""
    found = []
    for cand in itertools.product(range(alphabet_size), repeat=len(kmer)):
        if sum(int(S[a][b]) for a, b in zip(kmer, cand)) >= threshold:
            found.append(cand)
    return found


def evalue_mp(S, m, n, lam, K, dps=50):
    import mpmath

    with mpmath.workdps(dps):
        return mpmath.mpf(K) * m * n * mpmath.exp(-mpmath.mpf(lam) * S)


def lambda_root(S, P):
    """Positive root of sum P_i P_j exp(lam s_ij) = 1 via scipy's brentq."""
    from scipy.optimize import brentq

    import numpy as np

    S = np.asarray(S, dtype=float)
    P = np.asarray(P, dtype=float)

    def f(lam):
        return float(P @ np.exp(lam * S) @ P) - 1.0

    hi = 0.5
    while f(hi) <= 0:
        hi *= 2
    return brentq(f, 1e-6, hi, xtol=1e-14)


def binomial_se(n, p, samples):
    return math.sqrt(n * p * (1 - p) / samples)


def pssm_reference(rows, background, target_freqs, lambda_u, beta=10.0):
    """Column-by-column PSSM recomputation with explicit loops.

    ``rows`` are lists of residue indices (row 0 the query); None or X (20)
    means no observation. Returns per-column dicts with f, g, f', scores, info.
    """
    n_rows, length = len(rows), len(rows[0])
    obs = [[r[p] if r[p] is not None and 0 <= r[p] < 20 else None for p in range(length)] for r in rows]
    # Henikoff weights: 1 / (distinct types * copies of own residue), summed over columns
    weights = [0.0] * n_rows
    for p in range(length):
        col = [obs[r][p] for r in range(n_rows) if obs[r][p] is not None]
        distinct = len(set(col))
        for r in range(n_rows):
            a = obs[r][p]
            if a is not None:
                weights[r] += 1.0 / (distinct * col.count(a))
    total = sum(weights)
    weights = [w / total for w in weights]
    fs = []
    for p in range(length):
        f = [0.0] * 20
        for r in range(n_rows):
            if obs[r][p] is not None:
                f[obs[r][p]] += weights[r]
        s = sum(f)
        fs.append([v / s for v in f] if s > 0 else f)
    covered = [p for p in range(length) if any(obs[r][p] is not None for r in range(1, n_rows))]
    nc = sum(sum(1 for v in fs[p] if v > 0) for p in covered) / len(covered) if covered else 1.0
    alpha = nc - 1.0
    out = []
    for p in range(length):
        f = fs[p]
        if sum(f) == 0:
            g = list(background)
            fp = list(background)
        else:
            g = [sum(f[j] / background[j] * target_freqs[i][j] for j in range(20)) for i in range(20)]
            gs = sum(g)
            g = [v / gs for v in g]
            fp = [(alpha * f[i] + beta * g[i]) / (alpha + beta) for i in range(20)]
        scores = [round(math.log(fp[i] / background[i]) / lambda_u) for i in range(20)]
        info = sum(fp[i] * math.log2(fp[i] / background[i]) for i in range(20))
        out.append({"f": f, "g": g, "fp": fp, "scores": scores, "info": info, "nc": nc})
    return out
