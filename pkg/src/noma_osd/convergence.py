"""Fixed points of the joint decoder under a Gaussian converged-density model.

If user u's converged channel LLR is N(2/xi, 4/xi), its interference-plus-
noise power xi must reproduce itself through one cancellation step.  The
function g_d(xi) is the residual soft-symbol variance E[1 - tanh^2(delta/2)]
left by the decoder when its input has that density.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .channel import Channel
from .density import LLR_GRID, GridDensity, GridSpec, gaussian, residual_variance
from .gf2codes import LinearCode

KNOTS = np.geomspace(0.01, 16.0, 64)
TOL = 1e-3
CACHE_ENV = "NOMA_OSD_CACHE"


class NoFixedPointError(RuntimeError):
    """No intersection inside the search window."""


def g_d(xi: float, code: LinearCode, m: int, backend, grid: GridSpec = LLR_GRID) -> float:
    """Residual variance after decoding N(2/xi, 4/xi) channel LLRs."""
    if not xi > 0:
        raise ValueError("xi must be positive")
    d = backend.transform(gaussian(2.0 / xi, 4.0 / xi, grid), code, m)
    return residual_variance(d)


@dataclass(frozen=True, eq=False)
class GdTable:
    """Monotone cubic interpolant of g_d through tabulated knots."""

    xi: np.ndarray
    g: np.ndarray
    raw: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=np.float64)
        g = np.asarray(self.g, dtype=np.float64)
        if xi.ndim != 1 or xi.size < 2 or np.any(np.diff(xi) <= 0):
            raise ValueError("knots must be strictly increasing")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "_f", PchipInterpolator(np.log(xi), g, extrapolate=False))

    @property
    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.g) >= 0))

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        lx = np.log(np.clip(x, self.xi[0], self.xi[-1]))
        out = self._f(lx)
        return float(out) if out.ndim == 0 else out

    def inverse(self, y):
        """Smallest xi with g_d(xi) = y on a dense evaluation (monotone table)."""
        dense = np.geomspace(self.xi[0], self.xi[-1], 8192)
        vals = np.maximum.accumulate(self(dense))
        y = np.asarray(y, dtype=np.float64)
        idx = np.clip(np.searchsorted(vals, y, side="left"), 0, dense.size - 1)
        lo = np.clip(idx - 1, 0, dense.size - 1)
        v0, v1 = vals[lo], vals[idx]
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(v1 > v0, (y - v0) / (v1 - v0), 0.0)
        out = dense[lo] + np.clip(frac, 0, 1) * (dense[idx] - dense[lo])
        return float(out) if out.ndim == 0 else out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["xi", "g_d"])
            for x, g in zip(self.xi, self.g):
                w.writerow([repr(float(x)), repr(float(g))])

    def to_json(self) -> str:
        return json.dumps(
            {"xi": self.xi.tolist(), "g": self.g.tolist(), "raw": None if self.raw is None else self.raw.tolist(), "label": self.label}
        )

    @classmethod
    def from_json(cls, text: str) -> GdTable:
        d = json.loads(text)
        raw = None if d.get("raw") is None else np.asarray(d["raw"])
        return cls(np.asarray(d["xi"]), np.asarray(d["g"]), raw, d.get("label", ""))


def _cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "noma_osd"))


def _cache_key(code: LinearCode, m: int, backend, knots, grid: GridSpec) -> str:
    h = hashlib.sha1()
    h.update(code.generator.bits.tobytes())
    h.update(repr((code.n, code.k, m, repr(backend), np.asarray(knots).tolist(), str(grid))).encode())
    return h.hexdigest()[:16]


def tabulate_gd(
    code: LinearCode,
    m: int,
    backend,
    knots=KNOTS,
    grid: GridSpec = LLR_GRID,
    cache: bool | str | Path = True,
    resample_rounds: int = 2,
    slack: float = 1e-4,
) -> GdTable:
    """Evaluate g_d on the knots, re-evaluating non-monotone knots with more samples.

    Whatever noise survives resampling is removed with a running maximum; the
    raw values stay available on the table.  Results are cached on disk.
    """
    knots = np.asarray(knots, dtype=np.float64)
    path = None
    if cache:
        base = _cache_dir() if cache is True else Path(cache)
        path = base / f"gd_{code.n}_{code.k}_m{m}_{backend.mode}_{_cache_key(code, m, backend, knots, grid)}.json"
        if path.exists():
            return GdTable.from_json(path.read_text())
    vals = np.array([g_d(x, code, m, backend, grid) for x in knots])
    raw = vals.copy()
    bk = backend
    for _ in range(resample_rounds):
        bad = np.flatnonzero(np.diff(vals) < -slack)
        if bad.size == 0 or not hasattr(bk, "n_samples"):
            break
        bk = dataclasses.replace(bk, n_samples=2 * bk.n_samples)
        for i in sorted(set(bad.tolist()) | set((bad + 1).tolist())):
            vals[i] = g_d(knots[i], code, m, bk, grid)
    table = GdTable(knots, np.maximum.accumulate(vals), raw, label=f"{code.name or 'code'} m={m} {backend.mode}")
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(table.to_json())
    return table


def g_minus(x, y: float, z: float, sigma2: float, table: GdTable):
    """xi_2 from the user-1 condition: g_d^-1((y/z)^2 x - sigma2/z^2)."""
    return table.inverse((y / z) ** 2 * np.asarray(x) - sigma2 / z**2)


def g_plus(x, y: float, z: float, sigma2: float, table: GdTable):
    """xi_2 from the user-2 condition: (y/z)^2 g_d(x) + sigma2/z^2."""
    return (y / z) ** 2 * np.asarray(table(x)) + sigma2 / z**2


def g_equal(xi, n_u: int, snr: float):
    """Line whose intersections with g_d give the equal-power fixed points."""
    return (np.asarray(xi) - n_u / snr) / (n_u - 1)


@dataclass(frozen=True)
class ConvergencePoint:
    xi_star: tuple[float, ...]
    converged_density: list
    multiplicity: int
    roots: tuple[float, ...] = ()


def _roots(f, lo: float, hi: float, n_scan: int = 4000, tol: float = 1e-9) -> list[float]:
    xs = np.linspace(lo, hi, n_scan)
    fs = np.array([f(x) for x in xs])
    roots = []
    for i in range(n_scan - 1):
        a, b, fa, fb = xs[i], xs[i + 1], fs[i], fs[i + 1]
        if fa == 0:
            roots.append(a)
            continue
        if fa * fb > 0:
            continue
        while b - a > tol:
            mid = 0.5 * (a + b)
            fm = f(mid)
            if fa * fm <= 0:
                b, fb = mid, fm
            else:
                a, fa = mid, fm
        roots.append(0.5 * (a + b))
    if fs[-1] == 0:
        roots.append(hi)
    # merge duplicates from touching brackets
    merged = []
    for r in roots:
        if not merged or r - merged[-1] > 10 * tol:
            merged.append(r)
    return merged


def _table_for(code, m, backend, table):
    return table if table is not None else tabulate_gd(code, m, backend)


def two_user_fixed_point(ch: Channel, code: LinearCode, m: int, backend, table: GdTable | None = None, grid: GridSpec = LLR_GRID) -> ConvergencePoint:
    """Largest (xi_1, xi_2) where both users' interference powers are self-consistent.

    Uses xi_2 = g_plus(xi_1) and the user-1 condition
    xi_1 = (h2^2 g_d(xi_2) + sigma2) / h1^2, which is the intersection of the
    g_minus and g_plus curves written without the inverse.
    """
    if ch.n_users != 2:
        raise ValueError("two-user solver needs exactly two users")
    tab = _table_for(code, m, backend, table)
    h1, h2 = ch.h
    s2 = ch.sigma2

    def resid(x1):
        x2 = g_plus(x1, h1, h2, s2, tab)
        return x1 - (h2**2 * tab(x2) + s2) / h1**2

    lo, hi = s2 / h1**2, (h2**2 + s2) / h1**2
    roots = _roots(resid, lo, hi)
    if not roots:
        raise NoFixedPointError("no intersection in the search window")
    x1 = max(roots)
    x2 = float(g_plus(x1, h1, h2, s2, tab))
    dens = [gaussian(2 / x1, 4 / x1, grid), gaussian(2 / x2, 4 / x2, grid)]
    return ConvergencePoint((x1, x2), dens, len(roots), tuple(roots))


def equal_power_fixed_point(n_u: int, snr: float, code: LinearCode, m: int, backend, table: GdTable | None = None, grid: GridSpec = LLR_GRID) -> ConvergencePoint:
    """Largest xi with g_d(xi) = (xi - n_u/snr)/(n_u - 1), snr linear."""
    if n_u < 2:
        raise ValueError("an interference fixed point needs at least two users")
    tab = _table_for(code, m, backend, table)
    s2 = n_u / snr
    roots = _roots(lambda x: x - (n_u - 1) * tab(x) - s2, s2, (n_u - 1) + s2)
    if not roots:
        raise NoFixedPointError("no intersection in the search window")
    x = max(roots)
    return ConvergencePoint((x,) * n_u, [gaussian(2 / x, 4 / x, grid)] * n_u, len(roots), tuple(roots))


def damped_fixed_point(n_u: int, snr: float, g, damping: float = 0.5, iters: int = 10_000, tol: float = 1e-12) -> float:
    """Iterate xi <- (n_u-1) g(xi) + sigma2 from the no-cancellation start."""
    s2 = n_u / snr
    x = (n_u - 1) + s2
    for _ in range(iters):
        nxt = (1 - damping) * x + damping * ((n_u - 1) * g(x) + s2)
        if abs(nxt - x) < tol:
            return nxt
        x = nxt
    return x


def write_curves(table: GdTable, path, n_u: int | None = None, snr: float | None = None, n_points: int = 512) -> None:
    """CSV of xi, g_d and, for an equal-power setting, g_e."""
    xs = np.geomspace(table.xi[0], table.xi[-1], n_points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["xi", "g_d"] + (["g_e"] if n_u else [])
        w.writerow(head)
        for x in xs:
            row = [repr(float(x)), repr(float(table(x)))]
            if n_u:
                row.append(repr(float(g_equal(x, n_u, snr))))
            w.writerow(row)


def converged_gaussian(xi: float, grid: GridSpec = LLR_GRID) -> GridDensity:
    return gaussian(2 / xi, 4 / xi, grid)
