"""Monte Carlo driver for the joint decoder.

Every block draws its randomness from ``SeedSequence([seed, snr_index,
block_index])`` so results do not depend on how blocks are split across
workers.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import bpsk, transmit
from .de import DeState
from .density import LLR_GRID, GridDensity, GridSpec, coarsen, total_variation
from .gf2codes import LinearCode, encode
from .jointdec import JdConfig, jd_decode
from .sosd import build_dual_context, dual_order_counts, dual_osd_sample

COLLECT_FLAGS = {"ber", "bler", "densities", "nc_stats"}
KINDS = ("L", "D", "P")


def info_positions(code: LinearCode) -> np.ndarray:
    """Columns of G that carry the information bits (unit columns, one per row)."""
    g = code.generator.bits
    pos = np.full(code.k, -1)
    weights = g.sum(axis=0)
    for j in np.flatnonzero(weights == 1):
        r = int(np.flatnonzero(g[:, j])[0])
        if pos[r] < 0:
            pos[r] = j
    if np.any(pos < 0):
        raise ValueError("generator is not systematic on any information set")
    return pos


@dataclass(frozen=True)
class ExperimentSpec:
    cfg: JdConfig
    snr_points: tuple[float, ...]
    n_blocks: int
    seed: int = 0
    collect: frozenset = frozenset({"ber", "bler"})
    all_zero: bool = False
    grid: GridSpec = LLR_GRID
    threads: int = 1
    chunk: int = 250

    def __post_init__(self):
        pts = tuple(float(s) for s in np.atleast_1d(self.snr_points))
        if not pts:
            raise ValueError("need at least one SNR point")
        if self.n_blocks < 1:
            raise ValueError("need at least one block")
        flags = frozenset(self.collect)
        unknown = flags - COLLECT_FLAGS
        if unknown:
            raise ValueError(f"unknown collect flags {sorted(unknown)}")
        object.__setattr__(self, "snr_points", pts)
        object.__setattr__(self, "collect", flags)


@dataclass
class ExperimentResult:
    records: list
    densities: dict = field(default_factory=dict)
    nc: dict = field(default_factory=dict)
    wall_time: float = 0.0
    completed_blocks: dict = field(default_factory=dict)
    interrupted: bool = False

    def lookup(self, snr_db: float, user: int, t: int) -> dict:
        for r in self.records:
            if r["snr_db"] == snr_db and r["user"] == user and r["t"] == t:
                return r
        raise KeyError((snr_db, user, t))

    def ber(self, snr_db: float, user: int, t: int) -> float:
        return self.lookup(snr_db, user, t)["ber"]

    def to_json(self, path=None) -> str:
        payload = {
            "wall_time": self.wall_time,
            "interrupted": self.interrupted,
            "completed_blocks": {str(k): v for k, v in self.completed_blocks.items()},
            "records": self.records,
            "nc": [{"snr_db": k[0], "user": k[1], "t": k[2], **v} for k, v in sorted(self.nc.items())],
        }
        text = json.dumps(payload, indent=2) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_csv(self, path) -> None:
        cols = ["snr_db", "user", "t", "ber", "ber_ci95", "bler", "bit_count", "error_count", "block_count", "block_errors"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            for r in self.records:
                w.writerow(r)


def _block_rng(seed: int, snr_index: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, snr_index, block]))


def _run_chunk(args):
    spec, snr_index, start, stop = args
    cfg = dataclasses.replace(spec.cfg, ch=spec.cfg.ch.with_snr_db(spec.snr_points[snr_index]))
    code = cfg.code
    n_u, k, n, T = cfg.ch.n_users, code.k, code.n, cfg.t_max
    info_pos = info_positions(code)
    bit_err = np.zeros((n_u, T), dtype=np.int64)
    blk_err = np.zeros((n_u, T), dtype=np.int64)
    want_d = "densities" in spec.collect
    want_nc = "nc_stats" in spec.collect
    hist = np.zeros((len(KINDS), n_u, T, spec.grid.n_bins + 2), dtype=np.int64) if want_d else None
    nc_sum = np.zeros((n_u, T))
    nc_cnt = np.zeros((n_u, T), dtype=np.int64)
    n0, n1 = dual_order_counts(k, cfg.m, cfg.m)
    done = 0
    for b in range(start, stop):
        rng = _block_rng(spec.seed, snr_index, b)
        if spec.all_zero:
            info = np.zeros((n_u, k), dtype=np.uint8)
        else:
            info = rng.integers(0, 2, size=(n_u, k), dtype=np.uint8)
        cw = encode(info, code)
        block = transmit(cw, cfg.ch, rng)
        trace = jd_decode(block, cfg)
        sign = bpsk(cw)
        for t in range(1, T + 1):
            dec = trace.decision_at(t)[:, info_pos]
            e = (dec != info).sum(axis=1)
            bit_err[:, t - 1] += e
            blk_err[:, t - 1] += e > 0
        if want_d or want_nc:
            for t in range(1, trace.n_iterations + 1):
                llr = trace.llr[t - 1]
                delta = trace.extrinsic[t - 1]
                for u in range(n_u):
                    if want_d:
                        _accumulate(hist[0, u, t - 1], llr[u] * sign[u], spec.grid)
                        if delta is not None:
                            _accumulate(hist[1, u, t - 1], delta[u] * sign[u], spec.grid)
                            _accumulate(hist[2, u, t - 1], (delta[u] + llr[u]) * sign[u], spec.grid)
                    if want_nc and delta is not None:
                        i = int(rng.integers(n))
                        ctx = build_dual_context(llr[u] * sign[u], code, i)
                        nc_sum[u, t - 1] += dual_osd_sample(ctx, n0, n1).n_c
                        nc_cnt[u, t - 1] += 1
        done += 1
    return snr_index, done, bit_err, blk_err, hist, nc_sum, nc_cnt


def _accumulate(h: np.ndarray, x: np.ndarray, grid: GridSpec) -> None:
    idx = np.floor((x - grid.lo) / grid.step).astype(np.int64) + 1
    idx = np.clip(idx, 0, grid.n_bins + 1)
    h += np.bincount(idx, minlength=grid.n_bins + 2)


def _hist_density(h: np.ndarray, grid: GridSpec) -> GridDensity | None:
    tot = h.sum()
    if tot == 0:
        return None
    return GridDensity(grid.lo, grid.hi, h[1:-1] / tot, h[0] / tot, h[-1] / tot)


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    t0 = time.time()
    cfg = spec.cfg
    n_u, T, k = cfg.ch.n_users, cfg.t_max, cfg.code.k
    jobs = []
    for si in range(len(spec.snr_points)):
        for start in range(0, spec.n_blocks, spec.chunk):
            jobs.append((spec, si, start, min(start + spec.chunk, spec.n_blocks)))
    partial = {}
    interrupted = False
    try:
        if spec.threads > 1:
            with ProcessPoolExecutor(max_workers=spec.threads) as pool:
                for j, res in zip(jobs, pool.map(_run_chunk, jobs)):
                    partial[(j[1], j[2])] = res
        else:
            for j in jobs:
                partial[(j[1], j[2])] = _run_chunk(j)
    except KeyboardInterrupt:
        interrupted = True
    records, densities, nc, completed = [], {}, {}, {}
    for si, snr in enumerate(spec.snr_points):
        parts = [partial[key] for key in sorted(partial) if key[0] == si]
        if not parts:
            continue
        blocks = sum(p[1] for p in parts)
        completed[snr] = blocks
        bit_err = sum(p[2] for p in parts)
        blk_err = sum(p[3] for p in parts)
        for u in range(n_u):
            for t in range(1, T + 1):
                bits = blocks * k
                e = int(bit_err[u, t - 1])
                p = e / bits
                records.append(
                    {
                        "snr_db": snr,
                        "user": u + 1,
                        "t": t,
                        "ber": p,
                        "ber_ci95": 1.96 * np.sqrt(max(p * (1 - p), 0.0) / bits),
                        "bler": int(blk_err[u, t - 1]) / blocks,
                        "bit_count": bits,
                        "error_count": e,
                        "block_count": blocks,
                        "block_errors": int(blk_err[u, t - 1]),
                    }
                )
        if "densities" in spec.collect:
            hist = sum(p[4] for p in parts)
            for ki, kind in enumerate(KINDS):
                for u in range(n_u):
                    for t in range(1, T + 1):
                        d = _hist_density(hist[ki, u, t - 1], spec.grid)
                        if d is not None:
                            densities[(snr, u + 1, t, kind)] = d
        if "nc_stats" in spec.collect:
            s = sum(p[5] for p in parts)
            c = sum(p[6] for p in parts)
            for u in range(n_u):
                for t in range(1, T + 1):
                    if c[u, t - 1]:
                        nc[(snr, u + 1, t)] = {"mean_nc": float(s[u, t - 1] / c[u, t - 1]), "samples": int(c[u, t - 1])}
    return ExperimentResult(records, densities, nc, time.time() - t0, completed, interrupted)


def compare_de(
    spec: ExperimentSpec,
    de_states: list[DeState],
    result: ExperimentResult | None = None,
    width: float = 0.5,
    kinds=("L",),
) -> dict:
    """Total-variation distance between simulated and DE densities per (user, t[, kind]).

    Both sides are coarsened to bins about ``width`` wide before comparing.
    """
    if len(spec.snr_points) != 1:
        raise ValueError("compare_de needs a single SNR point")
    if result is None:
        spec = dataclasses.replace(spec, collect=spec.collect | {"densities"})
        result = run_experiment(spec)
    snr = spec.snr_points[0]
    out = {}
    for st in de_states:
        for kind in kinds:
            dens = st.L if kind == "L" else st.D
            if dens is None:
                continue
            for u, d in enumerate(dens):
                sim = result.densities.get((snr, u + 1, st.t, kind))
                if sim is None:
                    continue
                tv = total_variation(coarsen(d, width), coarsen(sim, width))
                out[(u + 1, st.t) if len(kinds) == 1 else (u + 1, st.t, kind)] = tv
    return out


def nc_experiment(code: LinearCode, m0: int, m1: int, snr_db: float, n_samples: int, seed: int = 0) -> dict:
    """Mean overlap count n_c of the dual decoder on a single-user AWGN channel.

    SNR is 1/sigma^2; the all-zero codeword is sent and the target position is
    drawn uniformly per sample.
    """
    from .channel import awgn_llr

    sigma2 = 10 ** (-snr_db / 10)
    n0, n1 = dual_order_counts(code.k, m0, m1)
    vals = np.empty(n_samples, dtype=np.int64)
    for s in range(n_samples):
        rng = _block_rng(seed, 0, s)
        r = 1.0 + rng.normal(0.0, np.sqrt(sigma2), code.n)
        i = int(rng.integers(code.n))
        ctx = build_dual_context(awgn_llr(r, sigma2), code, i)
        vals[s] = dual_osd_sample(ctx, n0, n1).n_c
    return {"mean_nc": float(vals.mean()), "std_nc": float(vals.std()), "samples": n_samples, "N0": n0, "N1": n1}
