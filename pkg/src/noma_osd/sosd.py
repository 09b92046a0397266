"""Soft-output OSD and the dual decoder used to analyse it.

Sign convention: positive LLRs favour bit 0.  In that convention the max-log
extrinsic value of position i is

    delta_i = WHD(c(i:1)) - WHD(c(i:0)) - llr_i,

where c(i:b) is the lowest-WHD candidate whose bit i equals b.  Excluding
position i from both distances removes the ``- llr_i`` term, which is how the
dual decoder computes it (``delta = v1 - v0``).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, comb

import numba
import numpy as np

from .gf2codes import BinaryMatrix, LinearCode, RankDeficientError, _ge_inplace
from .osd import (
    _best_candidate,
    _candidate,
    _check_llr,
    _extrinsic_from_minima,
    _pack,
    _position_minima,
    _sosd_batch,
    order_and_reduce,
    reliability_order,
    tep_table,
)


@dataclass(frozen=True)
class SosdResult:
    extrinsic: np.ndarray
    posterior: np.ndarray
    hard: np.ndarray
    found_pair: np.ndarray


@dataclass(frozen=True, eq=False)
class DualOsdContext:
    """Dual decoder state for target position i.

    Column 0 of the reduced matrix is position i; ``pi_prime[j]`` is the
    original position of reduced column j, so ``Gbar`` and ``z`` cover
    ``pi_prime[1:]``.
    """

    i: int
    Gbar: BinaryMatrix
    z: np.ndarray
    ybar: np.ndarray
    alphabar: np.ndarray
    pi_prime: np.ndarray
    y_i: int
    llr_i: float


@dataclass(frozen=True)
class DualSample:
    v0: float
    v1: float
    delta_i: float
    n_c: int


def sosd_extrinsic(llr, code: LinearCode, m: int) -> SosdResult:
    """Extrinsic LLRs from all order-m OSD candidates.

    If every candidate agrees on bit i, the extrinsic value saturates at
    +/- sum(|llr|) with the sign of the agreed bit and ``found_pair`` is False.
    """
    if not 0 <= m <= code.k:
        raise ValueError(f"order must satisfy 0 <= m <= k, got m={m}")
    llr = _check_llr(llr, code.n)
    ctx = order_and_reduce(llr, code)
    table = tep_table(code.k, m)
    n = code.n
    pw, base, tab = _pack(ctx.Gtilde.bits, ctx.ytilde, ctx.alphatilde)
    w0 = np.empty(n)
    w1 = np.empty(n)
    _position_minima(pw, base, tab, ctx.alphatilde, ctx.ytilde, table.pos, table.wt, len(table), w0, w1)
    delta_t = np.empty(n)
    found_t = np.empty(n, dtype=np.bool_)
    _extrinsic_from_minima(w0, w1, ctx.llr_tilde, float(np.sum(np.abs(llr))), delta_t, found_t)
    delta = ctx.to_original(delta_t)
    post = delta + llr
    return SosdResult(delta, post, (post < 0).astype(np.uint8), ctx.to_original(found_t))


def sosd_extrinsic_batch(llrs, code: LinearCode, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``sosd_extrinsic`` over rows; returns (extrinsic, found_pair)."""
    llrs = np.ascontiguousarray(np.atleast_2d(llrs), dtype=np.float64)
    if llrs.shape[1] != code.n:
        raise ValueError(f"rows must have length n={code.n}")
    if not np.all(np.isfinite(llrs)):
        raise ValueError("LLRs must be finite")
    table = tep_table(code.k, m)
    orders = np.argsort(-np.abs(llrs), axis=1, kind="stable")
    delta = np.empty_like(llrs)
    found = np.empty(llrs.shape, dtype=np.bool_)
    _sosd_batch(
        np.ascontiguousarray(code.generator.bits), orders, llrs, table.pos, table.wt, len(table), delta, found
    )
    return delta, found


# ---------------------------------------------------------------- dual decoder


def build_dual_context(llr, code: LinearCode, i: int) -> DualOsdContext:
    """Reduce G with column i pinned first and the rest ordered by reliability."""
    llr = _check_llr(llr, code.n)
    n, k = code.n, code.k
    if k < 2:
        raise ValueError("the dual decoder needs k >= 2")
    if not 0 <= i < n:
        raise IndexError(f"position {i} out of range for n={n}")
    if not code.generator.bits[:, i].any():
        raise RankDeficientError(f"position {i} is identically zero in every codeword")
    rest = np.delete(np.arange(n), i)
    rest = rest[reliability_order(llr[rest])]
    order = np.concatenate([[i], rest])
    a = np.ascontiguousarray(code.generator.bits[:, order])
    pi2 = np.arange(n, dtype=np.int64)
    if _ge_inplace(a, pi2) < k:
        raise RankDeficientError("generator is rank deficient")
    pi_prime = order[pi2]
    if pi_prime[0] != i:
        raise RankDeficientError("target position could not be kept as the first pivot")
    lt = llr[pi_prime[1:]]
    return DualOsdContext(
        i=int(i),
        Gbar=BinaryMatrix(a[1:, 1:]),
        z=a[0, 1:].copy(),
        ybar=(lt < 0).astype(np.uint8),
        alphabar=np.abs(lt),
        pi_prime=pi_prime,
        y_i=int(llr[i] < 0),
        llr_i=float(llr[i]),
    )


def dual_codeword(ctx: DualOsdContext, bit_i: int, cbar) -> np.ndarray:
    """Full-length codeword (original order) with bit i and punctured part cbar."""
    c_red = np.concatenate([[bit_i], np.asarray(cbar, dtype=np.uint8) ^ (ctx.z if bit_i else 0)])
    out = np.empty_like(c_red)
    out[ctx.pi_prime] = c_red
    return out.astype(np.uint8)


@numba.njit(cache=True)
def _popcount_and(e0, e1, pos, wt, d0, d1, kb):
    flags = np.zeros(kb, dtype=np.uint8)
    for q in range(wt[e0]):
        flags[pos[e0, q]] = 1
    cnt = 0
    for q in range(wt[e1]):
        cnt += flags[pos[e1, q]]
    for w in range(d0.shape[0]):
        x = d0[w] & d1[w]
        while x:
            x &= x - np.uint64(1)
            cnt += 1
    return cnt


def _dual_phase(gbar: np.ndarray, target: np.ndarray, alpha: np.ndarray, kb: int, count: int):
    table = tep_table(kb, None, count)
    pw, base, tab = _pack(gbar, target, alpha)
    v, e = _best_candidate(pw, base, tab, alpha, table.pos, table.wt, len(table))
    d = np.empty(pw.shape[1], dtype=np.uint64)
    _candidate(pw, base, alpha, table.pos, table.wt, e, d)
    return float(v), int(e), d, table


def dual_osd_sample(ctx: DualOsdContext, N0: int, N1: int) -> DualSample:
    """Phase-0 and phase-1 reprocessing with the first N0 / N1 TEPs.

    v0 is the lowest WHD to ybar over phase-0 candidates, v1 the lowest WHD to
    ybar xor z over phase-1 candidates.  n_c counts punctured positions where
    both winning candidates disagree with their reference word.
    """
    kb = ctx.Gbar.rows
    cap = 2**kb
    if not (1 <= N0 <= cap and 1 <= N1 <= cap):
        raise ValueError(f"TEP counts must be in [1, {cap}], got N0={N0}, N1={N1}")
    g = ctx.Gbar.bits
    v0, e0, d0, t0 = _dual_phase(g, ctx.ybar, ctx.alphabar, kb, N0)
    v1, e1, d1, t1 = _dual_phase(g, ctx.ybar ^ ctx.z, ctx.alphabar, kb, N1)
    big = t0 if len(t0) >= len(t1) else t1
    n_c = _popcount_and(e0, e1, big.pos, big.wt, d0, d1, kb)
    delta = v1 - v0
    assert delta == v1 - v0 and v0 >= 0 and v1 >= 0
    return DualSample(v0=v0, v1=v1, delta_i=delta, n_c=int(n_c))


def dual_order_params(k: int, m: int, mrb: bool) -> tuple[int, int]:
    """TEP counts that make the dual decoder mimic order-m soft-output OSD.

    For an MRB position the order-m list splits into candidates keeping and
    flipping bit i; otherwise both halves share the list evenly.
    """
    if not 0 <= m <= k:
        raise ValueError(f"order must satisfy 0 <= m <= k, got m={m}")
    if mrb:
        n0 = sum(comb(k - 1, j) for j in range(m + 1))
        n1 = sum(comb(k - 1, j - 1) for j in range(1, m + 1))
        return n0, max(n1, 1)
    half = ceil(sum(comb(k, j) for j in range(m + 1)) / 2)
    return half, half


def dual_order_counts(k: int, m0: int, m1: int) -> tuple[int, int]:
    """TEP counts of an order-(m0, m1) dual decoder, capped at 2^(k-1)."""
    cap = 2 ** (k - 1)
    n0 = min(sum(comb(k, j) for j in range(m0 + 1)), cap)
    n1 = min(sum(comb(k, j) for j in range(m1 + 1)), cap)
    return n0, n1


def is_mrb_position(llr, code: LinearCode, i: int) -> bool:
    ctx = order_and_reduce(llr, code)
    return bool(i in set(ctx.perm[: code.k].tolist()))
