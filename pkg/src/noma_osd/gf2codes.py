"""GF(2) matrices, linear block codes and the shipped eBCH fixtures."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

DATA_ENV = "NOMA_OSD_DATA"
_PACKAGE_DATA = Path(__file__).with_name("data")

FIXTURES = {
    "ebch_32_16_8": "ebch_32_16_8.txt",
    "ebch_64_30_14": "ebch_64_30_14.txt",
    "ebch_128_64_22": "ebch_128_64_22.txt",
}


class CodeFormatError(ValueError):
    """Matrix file could not be parsed."""


class RankDeficientError(ValueError):
    """Generator matrix does not have full row rank."""


def _as_bits(a) -> np.ndarray:
    arr = np.asarray(a)
    if arr.dtype != np.uint8:
        if np.any((arr != 0) & (arr != 1)):
            raise ValueError("bit arrays must contain only 0/1")
        arr = arr.astype(np.uint8)
    return arr


@dataclass(frozen=True, eq=False)
class BinaryMatrix:
    """Immutable dense GF(2) matrix, one uint8 per entry, row-major."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.array(_as_bits(self.bits), dtype=np.uint8, order="C", copy=True)
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D bit array, got shape {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def __getitem__(self, idx):
        return self.bits[idx]

    def __eq__(self, other) -> bool:
        return isinstance(other, BinaryMatrix) and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash((self.shape, self.bits.tobytes()))

    def permute_columns(self, order) -> BinaryMatrix:
        return BinaryMatrix(self.bits[:, np.asarray(order)])

    def rank(self) -> int:
        return gf2_rank(self.bits)

    def __repr__(self) -> str:
        return f"BinaryMatrix({self.rows}x{self.cols})"


@dataclass(frozen=True, eq=False)
class LinearCode:
    """Binary linear code C(n, k) given by a k x n generator matrix."""

    generator: BinaryMatrix
    d_min: int | None = None
    name: str = ""
    _parity_check: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        g = self.generator
        if not isinstance(g, BinaryMatrix):
            g = BinaryMatrix(g)
            object.__setattr__(self, "generator", g)
        if not 1 <= g.rows < g.cols:
            raise ValueError(f"need 1 <= k < n, got k={g.rows}, n={g.cols}")
        if g.rank() != g.rows:
            raise RankDeficientError(f"generator has rank {g.rank()} < k={g.rows}")
        object.__setattr__(self, "_parity_check", parity_check_matrix(g))

    @property
    def n(self) -> int:
        return self.generator.cols

    @property
    def k(self) -> int:
        return self.generator.rows

    @property
    def parity_check(self) -> np.ndarray:
        """(n-k) x n parity-check matrix H with G H^T = 0."""
        return self._parity_check

    @property
    def is_systematic(self) -> bool:
        return bool(np.array_equal(self.generator.bits[:, : self.k], np.eye(self.k, dtype=np.uint8)))

    def is_codeword(self, c) -> bool:
        c = _as_bits(c)
        return not np.any((self._parity_check.astype(np.int64) @ c.astype(np.int64)) % 2)

    def syndrome(self, c) -> np.ndarray:
        c = _as_bits(c)
        return ((c.astype(np.int64) @ self._parity_check.T.astype(np.int64)) % 2).astype(np.uint8)

    def __repr__(self) -> str:
        label = self.name or "code"
        return f"LinearCode({label}: n={self.n}, k={self.k}, d={self.d_min})"


def encode(info, code: LinearCode) -> np.ndarray:
    """Codeword c = b G over GF(2). Accepts a single word or a batch (rows)."""
    b = _as_bits(info)
    if b.shape[-1] != code.k:
        raise ValueError(f"info length {b.shape[-1]} does not match k={code.k}")
    g = code.generator.bits
    return ((b.astype(np.int64) @ g.astype(np.int64)) % 2).astype(np.uint8)


@numba.njit(cache=True)
def _ge_inplace(a, perm):
    """Reduce a (k x n, uint8) to [I_k P] in place, swapping columns when needed.

    perm is updated with the column swaps.  Returns the rank reached, which is
    < k when no independent column is left.
    """
    k, n = a.shape
    for j in range(k):
        piv_row = -1
        piv_col = -1
        for c in range(j, n):
            for r in range(j, k):
                if a[r, c]:
                    piv_row = r
                    break
            if piv_row >= 0:
                piv_col = c
                break
        if piv_row < 0:
            return j
        if piv_col != j:
            for r in range(k):
                tmp = a[r, j]
                a[r, j] = a[r, piv_col]
                a[r, piv_col] = tmp
            tmp = perm[j]
            perm[j] = perm[piv_col]
            perm[piv_col] = tmp
        if piv_row != j:
            for c in range(n):
                tmp = a[j, c]
                a[j, c] = a[piv_row, c]
                a[piv_row, c] = tmp
        for r in range(k):
            if r != j and a[r, j]:
                for c in range(j, n):
                    a[r, c] ^= a[j, c]
    return k


def gaussian_eliminate(matrix: BinaryMatrix, column_order=None) -> tuple[BinaryMatrix, np.ndarray]:
    """Systematic form [I_k P~] of matrix under column_order.

    Returns ``(systematic, pi2)`` where ``systematic[:, j]`` corresponds to
    ``matrix[:, column_order[pi2[j]]]``.  When the ordered column j is
    dependent on the pivots already taken it is swapped with the nearest
    independent column to its right.
    """
    order = np.arange(matrix.cols) if column_order is None else np.asarray(column_order, dtype=np.int64)
    if sorted(order.tolist()) != list(range(matrix.cols)):
        raise ValueError("column_order must be a permutation of the columns")
    a = np.ascontiguousarray(matrix.bits[:, order])
    pi2 = np.arange(matrix.cols, dtype=np.int64)
    r = _ge_inplace(a, pi2)
    if r < matrix.rows:
        raise RankDeficientError(f"matrix rank {r} < {matrix.rows} rows")
    return BinaryMatrix(a), pi2


def gf2_rank(bits) -> int:
    a = np.array(_as_bits(bits), dtype=np.uint8, copy=True)
    rank = 0
    rows, cols = a.shape
    for c in range(cols):
        if rank == rows:
            break
        nz = np.nonzero(a[rank:, c])[0]
        if nz.size == 0:
            continue
        p = rank + nz[0]
        if p != rank:
            a[[rank, p]] = a[[p, rank]]
        mask = a[:, c].astype(bool)
        mask[rank] = False
        a[mask] ^= a[rank]
        rank += 1
    return rank


def parity_check_matrix(g: BinaryMatrix) -> np.ndarray:
    """H with G H^T = 0, derived from the systematic form of G."""
    k, n = g.shape
    sysm, pi2 = gaussian_eliminate(g)
    p = sysm.bits[:, k:]
    h_perm = np.concatenate([p.T, np.eye(n - k, dtype=np.uint8)], axis=1)
    h = np.empty_like(h_perm)
    h[:, pi2] = h_perm
    return h


def _resolve(path_or_name) -> Path:
    p = Path(path_or_name)
    if p.exists():
        return p
    name = str(path_or_name)
    fname = FIXTURES.get(name, name if name.endswith(".txt") else name + ".txt")
    base = Path(os.environ[DATA_ENV]) if os.environ.get(DATA_ENV) else _PACKAGE_DATA
    cand = base / fname
    if cand.exists():
        return cand
    raise FileNotFoundError(f"no code file or fixture named {path_or_name!r} (looked in {base})")


def parse_code(text: str, name: str = "") -> LinearCode:
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    if not lines:
        raise CodeFormatError("empty code file")
    head = lines[0].split()
    if len(head) not in (2, 3):
        raise CodeFormatError(f"header must be 'n k [d]', got {lines[0]!r}")
    try:
        n, k = int(head[0]), int(head[1])
        d = int(head[2]) if len(head) == 3 else None
    except ValueError as exc:
        raise CodeFormatError(f"bad header {lines[0]!r}") from exc
    rows = lines[1:]
    if len(rows) != k:
        raise CodeFormatError(f"expected {k} matrix rows, found {len(rows)}")
    bits = np.zeros((k, n), dtype=np.uint8)
    for i, row in enumerate(rows):
        row = row.replace(" ", "")
        if len(row) != n or set(row) - {"0", "1"}:
            raise CodeFormatError(f"row {i + 1} must be {n} characters from {{0,1}}")
        bits[i] = np.frombuffer(row.encode(), dtype=np.uint8) - ord("0")
    return LinearCode(BinaryMatrix(bits), d_min=d, name=name)


def load_code(path) -> LinearCode:
    """Read a code from a matrix file or a fixture name such as 'ebch_64_30_14'."""
    p = _resolve(path)
    return parse_code(p.read_text(), name=p.stem)


def write_code(code: LinearCode, path) -> None:
    head = f"{code.n} {code.k}" + (f" {code.d_min}" if code.d_min is not None else "")
    body = "\n".join("".join(map(str, row)) for row in code.generator.bits)
    Path(path).write_text(head + "\n" + body + "\n")


def random_code(n: int, k: int, rng: np.random.Generator, systematic: bool = False) -> LinearCode:
    """Uniformly random full-rank code, mostly for tests and oracles."""
    while True:
        g = rng.integers(0, 2, size=(k, n), dtype=np.uint8)
        if systematic:
            g[:, :k] = np.eye(k, dtype=np.uint8)
        if gf2_rank(g) == k:
            return LinearCode(BinaryMatrix(g), name=f"random_{n}_{k}")


def all_codewords(code: LinearCode) -> np.ndarray:
    """Whole codebook (2^k x n). Only sensible for small k."""
    if code.k > 20:
        raise ValueError("codebook too large to enumerate")
    info = ((np.arange(2**code.k)[:, None] >> np.arange(code.k)) & 1).astype(np.uint8)
    return encode(info, code)
