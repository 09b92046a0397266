"""Order-m ordered-statistics decoding (OSD).

The receiver sorts positions by reliability, reduces the permuted generator to
systematic form on the most reliable basis (MRB), and re-encodes the MRB hard
decisions under a list of test error patterns (TEPs).  The candidate with the
smallest weighted Hamming distance (WHD) to the hard decisions wins.

The hot loops live in numba kernels that pack the parity part of each
candidate into uint64 words and score it with per-byte lookup tables.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numba
import numpy as np

from .gf2codes import BinaryMatrix, LinearCode, RankDeficientError, _ge_inplace


@dataclass(frozen=True)
class Tep:
    """Test error pattern over the k MRB positions."""

    pattern: np.ndarray
    weight: int

    @property
    def positions(self) -> tuple[int, ...]:
        return tuple(np.flatnonzero(self.pattern).tolist())


@dataclass(frozen=True, eq=False)
class OrderedContext:
    """Sorted and reduced view of one received word.

    Ordered position j holds original position ``perm[j]``; ``pi1`` is the
    reliability sort and ``pi2`` the column swaps made during elimination.
    """

    code: LinearCode
    pi1: np.ndarray
    pi2: np.ndarray
    Gtilde: BinaryMatrix
    ytilde: np.ndarray
    alphatilde: np.ndarray
    llr_tilde: np.ndarray

    @property
    def perm(self) -> np.ndarray:
        return self.pi1[self.pi2]

    def to_original(self, v) -> np.ndarray:
        v = np.asarray(v)
        out = np.empty_like(v)
        out[self.perm] = v
        return out


@dataclass(frozen=True)
class OsdResult:
    codeword: np.ndarray
    whd: float
    best_tep: Tep
    teps_tried: int


# ---------------------------------------------------------------- TEP tables


def tep_count(k: int, m: int) -> int:
    return sum(comb(k, j) for j in range(min(m, k) + 1))


def _iter_positions(k: int, max_weight: int):
    for w in range(max_weight + 1):
        # least reliable MRB positions (highest index) are flipped first
        yield from itertools.combinations(range(k - 1, -1, -1), w)


def enumerate_teps(k: int, m: int):
    """Yield all TEPs of weight 0..m, weight-ascending."""
    if not 0 <= m <= k:
        raise ValueError(f"order must satisfy 0 <= m <= k, got m={m}, k={k}")
    for pos in _iter_positions(k, m):
        pat = np.zeros(k, dtype=np.uint8)
        pat[list(pos)] = 1
        yield Tep(pat, len(pos))


@dataclass(frozen=True, eq=False)
class TepTable:
    """TEP list as flipped-position arrays (padded with -1)."""

    pos: np.ndarray
    wt: np.ndarray
    k: int

    def __len__(self) -> int:
        return len(self.wt)

    def tep(self, idx: int) -> Tep:
        pat = np.zeros(self.k, dtype=np.uint8)
        w = int(self.wt[idx])
        pat[self.pos[idx, :w]] = 1
        return Tep(pat, w)


@lru_cache(maxsize=32)
def tep_table(k: int, m: int | None = None, limit: int | None = None) -> TepTable:
    """First ``limit`` TEPs of order m (default: all of them).

    With ``m=None`` the stream runs up to weight k, which is how the
    dual decoder draws its prefixes.
    """
    order = k if m is None else m
    if not 0 <= order <= k:
        raise ValueError(f"order must satisfy 0 <= m <= k, got m={order}, k={k}")
    total = tep_count(k, order)
    n = total if limit is None else min(int(limit), total)
    # smallest weight that covers the prefix
    wmax, acc = 0, 1
    while acc < n:
        wmax += 1
        acc += comb(k, wmax)
    width = max(wmax, 1)
    pos = np.full((n, width), -1, dtype=np.int32)
    wt = np.zeros(n, dtype=np.int32)
    for idx, p in enumerate(itertools.islice(_iter_positions(k, wmax), n)):
        wt[idx] = len(p)
        pos[idx, : len(p)] = p
    pos.setflags(write=False)
    wt.setflags(write=False)
    return TepTable(pos, wt, k)


# ---------------------------------------------------------------- kernels


@numba.njit(cache=True)
def _pack(gs, yt, alpha):
    """Parity words of each MRB row, base difference word and byte tables."""
    k, n = gs.shape
    npar = n - k
    nw = max((npar + 63) // 64, 1)
    pw = np.zeros((k, nw), dtype=np.uint64)
    for r in range(k):
        for p in range(npar):
            if gs[r, k + p]:
                pw[r, p >> 6] |= np.uint64(1) << np.uint64(p & 63)
    base = np.zeros(nw, dtype=np.uint64)
    for r in range(k):
        if yt[r]:
            for w in range(nw):
                base[w] ^= pw[r, w]
    for p in range(npar):
        if yt[k + p]:
            base[p >> 6] ^= np.uint64(1) << np.uint64(p & 63)
    nbytes = max((npar + 7) // 8, 1)
    tab = np.zeros((nbytes, 256))
    for b in range(nbytes):
        for v in range(1, 256):
            low = 0
            while not (v >> low) & 1:
                low += 1
            p = 8 * b + low
            a = alpha[k + p] if p < npar else 0.0
            tab[b, v] = tab[b, v & (v - 1)] + a
    return pw, base, tab


@numba.njit(cache=True)
def _score(d, tab):
    s = 0.0
    for b in range(tab.shape[0]):
        s += tab[b, (d[b >> 3] >> np.uint64(8 * (b & 7))) & np.uint64(255)]
    return s


@numba.njit(cache=True)
def _candidate(pw, base, alpha, tep_pos, tep_wt, e, d):
    """Fill d with the parity difference of TEP e; return the MRB part of the WHD."""
    nw = d.shape[0]
    for w in range(nw):
        d[w] = base[w]
    s = 0.0
    for q in range(tep_wt[e]):
        j = tep_pos[e, q]
        s += alpha[j]
        for w in range(nw):
            d[w] ^= pw[j, w]
    return s


@numba.njit(cache=True)
def _best_candidate(pw, base, tab, alpha, tep_pos, tep_wt, n_teps):
    """Minimum-WHD TEP index (earliest wins ties) and its WHD."""
    d = np.empty(pw.shape[1], dtype=np.uint64)
    best = np.inf
    best_e = -1
    for e in range(n_teps):
        s = _candidate(pw, base, alpha, tep_pos, tep_wt, e, d)
        if s >= best:
            continue
        s += _score(d, tab)
        if s < best:
            best = s
            best_e = e
    return best, best_e


@numba.njit(cache=True)
def _position_minima(pw, base, tab, alpha, yt, tep_pos, tep_wt, n_teps, w0, w1):
    """Per ordered position, lowest WHD among candidates with bit 0 / bit 1.

    Candidates are visited in ascending WHD so the scan stops once every
    position has seen both bit values.
    """
    k = pw.shape[0]
    n = yt.shape[0]
    nw = pw.shape[1]
    ds = np.empty((n_teps, nw), dtype=np.uint64)
    s = np.empty(n_teps)
    for e in range(n_teps):
        s[e] = _candidate(pw, base, alpha, tep_pos, tep_wt, e, ds[e]) + _score(ds[e], tab)
    for j in range(n):
        w0[j] = np.inf
        w1[j] = np.inf
    flip = np.zeros(k, dtype=np.uint8)
    # sort only the best few; the minima stay exact whatever the visit order
    n_head = min(n_teps, 192)
    if n_head < n_teps:
        thr = np.partition(s, n_head - 1)[n_head - 1]
        head = np.flatnonzero(s <= thr)
        head = head[np.argsort(s[head])]
    else:
        head = np.argsort(s)
    visited = np.zeros(n_teps, dtype=np.uint8)
    open_slots = 2 * n
    for e in head:
        visited[e] = 1
        open_slots = _visit(e, s[e], ds[e], flip, yt, tep_pos, tep_wt, k, w0, w1, open_slots)
        if open_slots == 0:
            return
    for e in range(n_teps):
        if not visited[e]:
            open_slots = _visit(e, s[e], ds[e], flip, yt, tep_pos, tep_wt, k, w0, w1, open_slots)


@numba.njit(cache=True)
def _visit(e, v, d, flip, yt, tep_pos, tep_wt, k, w0, w1, open_slots):
    n = yt.shape[0]
    for q in range(tep_wt[e]):
        flip[tep_pos[e, q]] = 1
    for j in range(n):
        if j < k:
            bit = yt[j] ^ flip[j]
        else:
            p = j - k
            bit = yt[j] ^ np.uint8((d[p >> 6] >> np.uint64(p & 63)) & np.uint64(1))
        if bit:
            if v < w1[j]:
                if w1[j] == np.inf:
                    open_slots -= 1
                w1[j] = v
        elif v < w0[j]:
            if w0[j] == np.inf:
                open_slots -= 1
            w0[j] = v
    for q in range(tep_wt[e]):
        flip[tep_pos[e, q]] = 0
    return open_slots


@numba.njit(cache=True)
def _extrinsic_from_minima(w0, w1, llr_t, sat, delta, found):
    for j in range(w0.shape[0]):
        if np.isfinite(w0[j]) and np.isfinite(w1[j]):
            delta[j] = w1[j] - w0[j] - llr_t[j]
            found[j] = True
        else:
            delta[j] = sat if np.isfinite(w0[j]) else -sat
            found[j] = False


@numba.njit(cache=True)
def _sosd_batch(g, orders, llrs, tep_pos, tep_wt, n_teps, out_delta, out_found):
    """Soft-output OSD over a batch of received words (rows of llrs)."""
    k, n = g.shape
    w0 = np.empty(n)
    w1 = np.empty(n)
    delta_t = np.empty(n)
    found_t = np.empty(n, dtype=np.bool_)
    for b in range(llrs.shape[0]):
        perm = orders[b].copy()
        a = np.empty((k, n), dtype=np.uint8)
        for c in range(n):
            for r in range(k):
                a[r, c] = g[r, perm[c]]
        pi2 = np.arange(n)
        if _ge_inplace(a, pi2) < k:
            raise ValueError("generator is rank deficient")
        full = np.empty(n, dtype=np.int64)
        yt = np.empty(n, dtype=np.uint8)
        alpha = np.empty(n)
        lt = np.empty(n)
        sat = 0.0
        for j in range(n):
            full[j] = perm[pi2[j]]
            v = llrs[b, full[j]]
            lt[j] = v
            yt[j] = 1 if v < 0 else 0
            alpha[j] = abs(v)
            sat += abs(v)
        pw, base, tab = _pack(a, yt, alpha)
        _position_minima(pw, base, tab, alpha, yt, tep_pos, tep_wt, n_teps, w0, w1)
        _extrinsic_from_minima(w0, w1, lt, sat, delta_t, found_t)
        for j in range(n):
            out_delta[b, full[j]] = delta_t[j]
            out_found[b, full[j]] = found_t[j]


# ---------------------------------------------------------------- Python API


def _check_llr(llr, n: int) -> np.ndarray:
    llr = np.asarray(llr, dtype=np.float64)
    if llr.shape != (n,):
        raise ValueError(f"expected {n} LLRs, got shape {llr.shape}")
    if not np.all(np.isfinite(llr)):
        raise ValueError("LLRs must be finite")
    return llr


def reliability_order(llr) -> np.ndarray:
    """Positions by descending |llr|; ties keep the lower index first."""
    return np.argsort(-np.abs(llr), kind="stable")


def order_and_reduce(llr, code: LinearCode) -> OrderedContext:
    llr = _check_llr(llr, code.n)
    pi1 = reliability_order(llr)
    a = np.ascontiguousarray(code.generator.bits[:, pi1])
    pi2 = np.arange(code.n, dtype=np.int64)
    if _ge_inplace(a, pi2) < code.k:
        raise RankDeficientError("generator is rank deficient")
    perm = pi1[pi2]
    lt = llr[perm]
    return OrderedContext(
        code=code,
        pi1=pi1,
        pi2=pi2,
        Gtilde=BinaryMatrix(a),
        ytilde=(lt < 0).astype(np.uint8),
        alphatilde=np.abs(lt),
        llr_tilde=lt,
    )


def whd(c, y, alpha) -> float:
    """Weighted Hamming distance: sum of alpha where c and y differ."""
    return float(np.sum(np.asarray(alpha)[np.asarray(c) != np.asarray(y)]))


def reencode(ctx: OrderedContext, tep: Tep) -> tuple[np.ndarray, float]:
    """Ordered candidate (y_B xor e) G~ and its WHD to y~."""
    k = ctx.code.k
    pat = np.asarray(tep.pattern, dtype=np.uint8)
    if pat.shape != (k,):
        raise ValueError(f"TEP must have length k={k}")
    info = ctx.ytilde[:k] ^ pat
    c = ((info.astype(np.int64) @ ctx.Gtilde.bits.astype(np.int64)) % 2).astype(np.uint8)
    return c, whd(c, ctx.ytilde, ctx.alphatilde)


def osd_decode(llr, code: LinearCode, m: int) -> OsdResult:
    if not 0 <= m <= code.k:
        raise ValueError(f"order must satisfy 0 <= m <= k, got m={m}")
    ctx = order_and_reduce(llr, code)
    table = tep_table(code.k, m)
    pw, base, tab = _pack(ctx.Gtilde.bits, ctx.ytilde, ctx.alphatilde)
    best, idx = _best_candidate(pw, base, tab, ctx.alphatilde, table.pos, table.wt, len(table))
    tep = table.tep(idx)
    c_ord, w = reencode(ctx, tep)
    return OsdResult(codeword=ctx.to_original(c_ord), whd=w, best_tep=tep, teps_tried=len(table))
