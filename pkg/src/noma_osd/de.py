"""Density evolution for the PIC + SOSD joint decoder.

All densities are "single-side": the density of a user's LLR given that the
transmitted bit is 0 (symbol +1).  The three node transforms are

* cancellation (``cn_transform``): soft-symbol densities of the other users
  to the next channel-LLR density,
* decoding (``dn_transform``): channel-LLR density to extrinsic density,
  delegated to a :class:`DeltaBackend`,
* estimation (``en_transform``): extrinsic density to soft-symbol density.

Before decoding is switched on the joint PIC recursion is a deterministic
function of the noise sample, so its densities are obtained by pushing the
noise measure through that function on a fine grid.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Protocol

import numba
import numpy as np
from scipy import special

from .channel import Channel
from .density import (
    LLR_GRID,
    MU_GRID,
    GridDensity,
    GridSpec,
    ber_of,
    convolve,
    deposit_segments,
    from_samples,
    mirror,
    mixture,
    mixture_of_gaussians,
    tanh_pushforward,
)
from .gf2codes import LinearCode
from .jointdec import pic_step
from .osd import _candidate, _pack, _score, tep_table
from .sosd import build_dual_context, dual_order_params, sosd_extrinsic_batch

OVERFLOW_LIMIT = 1e-3


class GridOverflowError(RuntimeError):
    """Too much probability mass fell outside the grid."""


class CalibrationError(RuntimeError):
    """The semianalytic backend could not estimate its parameters."""


def _check_overflow(d: GridDensity, what: str) -> GridDensity:
    if d.clipped_mass > OVERFLOW_LIMIT:
        raise GridOverflowError(f"{what}: clipped mass {d.clipped_mass:.3g} exceeds {OVERFLOW_LIMIT:g}; widen the grid")
    return d


def sample_density(d: GridDensity, size, rng: np.random.Generator) -> np.ndarray:
    """Draw from a grid density: pick a bin by mass, then uniformly inside it.

    Clipped mass is drawn at the grid edges.
    """
    size = tuple(np.atleast_1d(size))
    w = np.concatenate([[d.clipped_below], d.mass, [d.clipped_above]])
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    u = rng.random(size)
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), w.size - 1)
    jitter = rng.random(size) - 0.5
    x = d.lo + (idx - 0.5 + jitter) * d.step
    x[idx == 0] = d.lo
    x[idx == w.size - 1] = d.hi
    return x


# ---------------------------------------------------------------- backends


class DeltaBackend(Protocol):
    mode: str

    def transform(self, L: GridDensity, code: LinearCode, m: int) -> GridDensity: ...


@dataclass(frozen=True)
class EmpiricalBackend:
    """Monte Carlo decoder transform: decode i.i.d. vectors drawn from the input."""

    n_samples: int = 10_000
    seed: int = 0
    batch: int = 2_000
    mode: str = "empirical"

    def transform(self, L: GridDensity, code: LinearCode, m: int) -> GridDensity:
        if self.n_samples < 1:
            raise ValueError("need at least one sample vector")
        rng = np.random.default_rng(self.seed)
        out = []
        left = self.n_samples
        while left > 0:
            b = min(self.batch, left)
            llr = sample_density(L, (b, code.n), rng)
            delta, _ = sosd_extrinsic_batch(llr, code, m)
            out.append(delta.ravel())
            left -= b
        return from_samples(np.concatenate(out), L.grid)


@dataclass(frozen=True)
class IdentityBackend:
    """Uncoded reference: the extrinsic value equals the channel LLR."""

    mode: str = "uncoded"

    def transform(self, L: GridDensity, code: LinearCode, m: int) -> GridDensity:
        return L


@dataclass(frozen=True)
class ErrorFreeBackend:
    """Genie decoder: every extrinsic value is +infinity."""

    mode: str = "error-free"

    def transform(self, L: GridDensity, code: LinearCode, m: int) -> GridDensity:
        return GridDensity(L.lo, L.hi, np.zeros(L.n_bins), 0.0, 1.0)


# ------------------------------------------------------------ semianalytic


def tep_rank(positions, kb: int) -> int:
    """Index of a TEP (set of flipped MRB positions) in enumeration order."""
    pos = sorted((kb - 1 - p for p in positions))
    w = len(pos)
    idx = sum(comb(kb, j) for j in range(w))
    prev = -1
    for i, c in enumerate(pos):
        for v in range(prev + 1, c):
            idx += comb(kb - 1 - v, w - 1 - i)
        prev = c
    return idx


@numba.njit(cache=True)
def _whd_list(pw, base, tab, alpha, tep_pos, tep_wt, idx):
    d = np.empty(pw.shape[1], dtype=np.uint64)
    out = np.empty(idx.shape[0])
    for q in range(idx.shape[0]):
        e = idx[q]
        out[q] = _candidate(pw, base, alpha, tep_pos, tep_wt, e, d) + _score(d, tab)
    return out


@dataclass(frozen=True)
class MinFamily:
    """Minimum of b correlated Gaussians N(mu, s2) with pairwise correlation rho."""

    mu: float
    s2: float
    rho: float

    def survival(self, x, b: int, z_nodes: int = 401) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        s = np.sqrt(max(self.s2, 1e-300))
        rho = min(max(self.rho, 0.0), 0.999)
        z = np.linspace(-8.0, 8.0, z_nodes)
        wz = np.exp(-0.5 * z**2)
        wz /= wz.sum()
        arg = ((x[:, None] - self.mu) / s - np.sqrt(rho) * z[None, :]) / np.sqrt(1.0 - rho)
        # P(min > x | z) = Q(arg)^b
        logq = special.log_ndtr(-arg)
        return np.exp(b * logq) @ wz


@dataclass(frozen=True)
class DualCalibration:
    """Moment estimates for one (N0, N1) configuration."""

    N0: int
    N1: int
    p_found: float
    err_mean: float
    err_var: float
    phase0: MinFamily
    phase1: MinFamily
    error_count_pmf: np.ndarray


def _random_effects(groups: np.ndarray) -> MinFamily:
    """Mean, variance and intra-group correlation from a (samples x R) table."""
    g = np.asarray(groups, dtype=np.float64)
    mu = float(g.mean())
    r = g.shape[1]
    within = float(g.var(axis=1, ddof=1).mean()) if r > 1 else float(g.var())
    between = float(g.mean(axis=1).var(ddof=1)) - within / r
    between = max(between, 0.0)
    total = within + between
    if not total > 0:
        raise CalibrationError("degenerate wrong-candidate distances (zero variance)")
    return MinFamily(mu, total, between / total)


@dataclass(frozen=True)
class SemiAnalyticBackend:
    """Order-statistics model of the dual decoder with Monte Carlo calibration.

    The correct-bit minimum v0 is either the transmitted codeword's distance
    (when the first N0 patterns cover the basis errors) competing with N0-1
    wrong candidates, or the minimum of N0 wrong candidates; v1 is the
    minimum of N1 wrong candidates.  Wrong-candidate distances are modelled as
    equicorrelated Gaussians and v0, v1 as independent.

    ``split=True`` mixes the basis (N0, N1) and non-basis (N, N) settings that
    reproduce order-m soft-output OSD, weighted k/n and (n-k)/n.
    """

    n_calib: int = 10_000
    seed: int = 0
    tep_draws: int = 32
    split: bool = True
    mode: str = "semianalytic"

    def calibrate(self, L: GridDensity, code: LinearCode, N0: int, N1: int, mrb: bool | None) -> DualCalibration:
        rng = np.random.default_rng(self.seed)
        kb = code.k - 1
        table = tep_table(kb, None, max(N0, N1))
        max_w = int(table.wt[max(N0, N1) - 1])
        found, err_w = [], []
        g0 = np.empty((self.n_calib, self.tep_draws))
        g1 = np.empty((self.n_calib, self.tep_draws))
        counts = np.zeros(kb + 1)
        for s in range(self.n_calib):
            llr = sample_density(L, code.n, rng)
            order = np.argsort(-np.abs(llr), kind="stable")
            if mrb is None:
                i = int(rng.integers(code.n))
            else:
                pool = order[: code.k] if mrb else order[code.k :]
                i = int(pool[rng.integers(pool.size)])
            ctx = build_dual_context(llr, code, i)
            errs = np.flatnonzero(ctx.ybar[:kb])
            counts[errs.size] += 1
            hit = errs.size <= max_w and tep_rank(errs.tolist(), kb) < N0
            found.append(hit)
            if hit:
                err_w.append(float(ctx.ybar @ ctx.alphabar))
            g = ctx.Gbar.bits
            pw, base, tab = _pack(g, ctx.ybar, ctx.alphabar)
            idx = rng.integers(0, N0, size=self.tep_draws)
            if hit:
                true_idx = tep_rank(errs.tolist(), kb)
                while np.any(idx == true_idx) and N0 > 1:
                    bad = idx == true_idx
                    idx[bad] = rng.integers(0, N0, size=int(bad.sum()))
            g0[s] = _whd_list(pw, base, tab, ctx.alphabar, table.pos, table.wt, idx.astype(np.int64))
            pw1, base1, tab1 = _pack(g, ctx.ybar ^ ctx.z, ctx.alphabar)
            idx1 = rng.integers(0, N1, size=self.tep_draws).astype(np.int64)
            g1[s] = _whd_list(pw1, base1, tab1, ctx.alphabar, table.pos, table.wt, idx1)
        p_found = float(np.mean(found))
        if err_w:
            e_mean = float(np.mean(err_w))
            e_var = float(np.var(err_w)) if len(err_w) > 1 else 0.0
        else:
            e_mean, e_var = 0.0, 0.0
        return DualCalibration(
            N0=N0,
            N1=N1,
            p_found=p_found,
            err_mean=e_mean,
            err_var=e_var,
            phase0=_random_effects(g0),
            phase1=_random_effects(g1),
            error_count_pmf=counts / counts.sum(),
        )

    def v_densities(self, cal: DualCalibration, grid: GridSpec) -> tuple[GridDensity, GridDensity]:
        edges = grid.edges
        s_e = special.ndtr(-(edges - cal.err_mean) / np.sqrt(max(cal.err_var, 1e-12)))
        surv0 = cal.p_found * s_e * cal.phase0.survival(edges, max(cal.N0 - 1, 0)) + (
            1 - cal.p_found
        ) * cal.phase0.survival(edges, cal.N0)
        surv1 = cal.phase1.survival(edges, cal.N1)

        def from_survival(sv):
            sv = np.clip(sv, 0.0, 1.0)
            mass = np.maximum(-np.diff(sv), 0.0)
            return GridDensity(grid.lo, grid.hi, mass, 1.0 - sv[0], sv[-1])

        return from_survival(surv0), from_survival(surv1)

    def _one(self, L, code, N0, N1, mrb):
        cal = self.calibrate(L, code, N0, N1, mrb)
        v0, v1 = self.v_densities(cal, L.grid)
        # delta = v1 - v0 with v0, v1 independent
        return convolve(v1, mirror(v0), grid=L.grid)

    def transform(self, L: GridDensity, code: LinearCode, m: int) -> GridDensity:
        if L.mass.sum() <= 0:
            raise CalibrationError("input density has no mass on the grid")
        if not self.split:
            n0 = sum(comb(code.k, j) for j in range(m + 1))
            n0 = min(n0, 2 ** (code.k - 1))
            return self._one(L, code, n0, n0, None)
        a0, a1 = dual_order_params(code.k, m, mrb=True)
        b0, b1 = dual_order_params(code.k, m, mrb=False)
        cap = 2 ** (code.k - 1)
        d_mrb = self._one(L, code, min(a0, cap), min(a1, cap), True)
        d_rest = self._one(L, code, min(b0, cap), min(b1, cap), False)
        return mixture([d_mrb, d_rest], [code.k / code.n, 1 - code.k / code.n])


# ---------------------------------------------------------------- DS-off


def ds_off_series(ch: Channel, t_max: int, grid: GridSpec = LLR_GRID, n_w: int = 4096) -> list[list[GridDensity]]:
    """Single-side LLR densities of every user for PIC-only iterations 1..t_max."""
    if t_max < 1:
        raise ValueError("need at least one iteration")
    n_u = ch.n_users
    sigma = np.sqrt(ch.sigma2)
    w = np.linspace(-8 * sigma, 8 * sigma, n_w)
    cdf = special.ndtr(w / sigma)
    seg = np.diff(cdf)
    seg[0] += cdf[0]
    seg[-1] += 1.0 - cdf[-1]
    combos = np.array(list(itertools.product([1.0, -1.0], repeat=n_u)))
    paths = np.empty((len(combos), t_max, n_u, n_w))
    for ci, x in enumerate(combos):
        r = ch.gains @ x + w
        eps = np.zeros((n_u, n_w))
        for t in range(t_max):
            eps = pic_step(r, eps, ch)
            paths[ci, t] = eps
    out = []
    for t in range(t_max):
        row = []
        for u in range(n_u):
            sel = np.flatnonzero(combos[:, u] > 0)
            lam = paths[sel, t, u]
            wts = np.tile(seg, len(sel)) / len(sel)
            d = deposit_segments(lam[:, :-1].ravel(), lam[:, 1:].ravel(), wts, grid)
            row.append(_check_overflow(d, f"DS-off density t={t + 1} user {u + 1}"))
        out.append(row)
    return out


def ds_off_density(ch: Channel, t: int, grid: GridSpec = LLR_GRID, n_w: int = 4096) -> list[GridDensity]:
    return ds_off_series(ch, t, grid, n_w)[-1]


# ---------------------------------------------------------------- DS-on


def _atoms(j: GridDensity, max_atoms: int | None) -> tuple[np.ndarray, np.ndarray]:
    mass = np.asarray(j.mass)
    mu = j.centers
    keep = mass > 1e-15
    mass, mu = mass[keep], mu[keep]
    if mass.size == 0:
        raise ValueError("soft-symbol density has no mass")
    mass = mass / mass.sum()
    if max_atoms is None or mass.size <= max_atoms:
        return mass, mu
    # merge neighbours into groups of roughly equal mass, keeping the group mean
    grp = np.minimum((np.cumsum(mass) - 0.5 * mass) * max_atoms, max_atoms - 1).astype(np.int64)
    gm = np.bincount(grp, weights=mass, minlength=max_atoms)
    gmu = np.bincount(grp, weights=mass * mu, minlength=max_atoms)
    ok = gm > 0
    return gm[ok], gmu[ok] / gm[ok]


def _as_pair(j):
    if isinstance(j, GridDensity):
        return j, mirror(j)
    plus, minus = j
    return plus, minus


def cn_transform(
    J,
    ch: Channel,
    u: int,
    grid: GridSpec = LLR_GRID,
    max_atoms: int = 512,
    mc_samples: int = 200_000,
    seed: int = 0,
) -> GridDensity:
    """Channel-LLR density of user u given the other users' soft-symbol densities.

    ``J[j]`` is either the density of user j's soft symbol given x_j=+1 or a
    pair (given +1, given -1).  Entry ``J[u]`` is ignored.
    """
    n_u = ch.n_users
    h = ch.gains
    others = [j for j in range(n_u) if j != u]
    if not others:
        return _check_overflow(
            mixture_of_gaussians([1.0], [2 * h[u] ** 2 / ch.sigma2], [4 * h[u] ** 2 / ch.sigma2], grid),
            f"cancellation user {u + 1}",
        )
    per_user = []
    cap = None if len(others) == 1 else max_atoms
    for j in others:
        plus, minus = _as_pair(J[j])
        wp, mp = _atoms(plus, cap)
        wm, mm = _atoms(minus, cap)
        per_user.append(
            (
                np.concatenate([0.5 * wp, 0.5 * wm]),
                np.concatenate([mp, mm]),
                np.concatenate([np.ones_like(mp), -np.ones_like(mm)]),
            )
        )
    if len(others) <= 2:
        wts = np.ones(1)
        shift = np.zeros(1)
        resid = np.full(1, ch.sigma2)
        for (wj, mj, xj), j in zip(per_user, others):
            wts = np.multiply.outer(wts, wj).ravel()
            shift = np.add.outer(shift, h[j] * (xj - mj)).ravel()
            resid = np.add.outer(resid, h[j] ** 2 * (1 - mj**2)).ravel()
    else:
        rng = np.random.default_rng(seed)
        wts = np.full(mc_samples, 1.0 / mc_samples)
        shift = np.zeros(mc_samples)
        resid = np.full(mc_samples, ch.sigma2)
        for (wj, mj, xj), j in zip(per_user, others):
            pick = rng.choice(wj.size, size=mc_samples, p=wj / wj.sum())
            shift += h[j] * (xj[pick] - mj[pick])
            resid += h[j] ** 2 * (1 - mj[pick] ** 2)
    means = 2 * h[u] * (h[u] + shift) / resid
    var = 4 * h[u] ** 2 * ch.sigma2 / resid**2
    d = mixture_of_gaussians(wts, means, var, grid)
    return _check_overflow(d.normalized(), f"cancellation user {u + 1}")


def dn_transform(L_single: GridDensity, code: LinearCode, m: int, backend: DeltaBackend) -> GridDensity:
    d = backend.transform(L_single, code, m)
    return _check_overflow(d.normalized(), "decoder transform")


def posterior_density(L_single: GridDensity, D_single: GridDensity) -> GridDensity:
    return convolve(L_single, D_single, grid=L_single.grid)


def en_transform(D, grid: GridSpec = MU_GRID):
    """Soft-symbol densities from extrinsic densities.

    A single density is treated as the +1 side; a pair maps side by side.
    """
    if isinstance(D, GridDensity):
        return tanh_pushforward(D, grid)
    plus, minus = D
    return tanh_pushforward(plus, grid), tanh_pushforward(minus, grid)


# ---------------------------------------------------------------- full run


@dataclass
class DeState:
    t: int
    L: list
    D: list | None = None
    J: list | None = None

    def ber(self, u: int) -> float:
        """Bit error probability after this iteration (posterior once decoding is on)."""
        if self.D is None:
            return ber_of(self.L[u])
        return ber_of(posterior_density(self.L[u], self.D[u]))

    def extrinsic_mean(self, u: int) -> float:
        return float("nan") if self.D is None else self.D[u].mean()


def de_run(
    ch: Channel,
    code: LinearCode,
    m: int,
    t_off: int,
    t_max: int,
    backend: DeltaBackend,
    grid: GridSpec = LLR_GRID,
    mu_grid: GridSpec = MU_GRID,
    n_w: int = 4096,
) -> list[DeState]:
    if t_off < 0 or t_max < 1 or t_off > t_max:
        raise ValueError("need t_max >= 1 and 0 <= t_off <= t_max")
    n_u = ch.n_users
    off = ds_off_series(ch, min(t_off + 1, t_max), grid, n_w)
    states = []
    J_prev = None
    for t in range(1, t_max + 1):
        if t <= t_off + 1:
            L = off[t - 1]
        else:
            L = [cn_transform(J_prev, ch, u, grid) for u in range(n_u)]
        if t <= t_off:
            states.append(DeState(t, L))
            continue
        D = [dn_transform(L[u], code, m, backend) for u in range(n_u)]
        J = [en_transform(D[u], mu_grid) for u in range(n_u)]
        states.append(DeState(t, L, D, J))
        J_prev = J
    return states


def save_states(states, outdir) -> Path:
    """Write each density as CSV plus a manifest.json index."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for st in states:
        for kind in ("L", "D", "J"):
            dens = getattr(st, kind)
            if dens is None:
                continue
            for u, d in enumerate(dens):
                fname = f"{kind}_t{st.t}_u{u + 1}.csv"
                d.to_csv(out / fname)
                entries.append({"iteration": st.t, "user": u + 1, "side": "single", "density": kind, "file": fname})
        if st.D is not None:
            for u in range(len(st.L)):
                fname = f"P_t{st.t}_u{u + 1}.csv"
                posterior_density(st.L[u], st.D[u]).to_csv(out / fname)
                entries.append({"iteration": st.t, "user": u + 1, "side": "single", "density": "P", "file": fname})
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"densities": entries}, indent=2) + "\n")
    return manifest


def load_states(manifest) -> dict:
    """Read a manifest back into {(kind, t, user): GridDensity}."""
    path = Path(manifest)
    data = json.loads(path.read_text())
    return {
        (e["density"], e["iteration"], e["user"]): GridDensity.from_csv(path.parent / e["file"])
        for e in data["densities"]
    }
