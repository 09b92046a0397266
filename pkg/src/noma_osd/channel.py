"""Power-domain NOMA over a real AWGN channel with BPSK and per-user interleavers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Channel:
    """Superposition y = sum_u h_u x_u + w, w ~ N(0, sigma2)."""

    h: tuple[float, ...]
    sigma2: float

    def __post_init__(self):
        h = tuple(float(v) for v in np.atleast_1d(self.h))
        if not h or any(v <= 0 for v in h):
            raise ValueError("channel gains must be positive")
        if not self.sigma2 > 0:
            raise ValueError("noise variance must be positive")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def n_users(self) -> int:
        return len(self.h)

    @property
    def gains(self) -> np.ndarray:
        return np.asarray(self.h)

    @property
    def snr(self) -> float:
        """Total received SNR, sum_u h_u^2 / sigma2 (linear)."""
        return float(np.sum(self.gains**2) / self.sigma2)

    @property
    def snr_db(self) -> float:
        return 10.0 * np.log10(self.snr)

    @classmethod
    def from_snr_db(cls, h, snr_db: float) -> Channel:
        h = np.atleast_1d(np.asarray(h, dtype=float))
        return cls(tuple(h), float(np.sum(h**2) / 10 ** (snr_db / 10)))

    @classmethod
    def equal_power(cls, n_users: int, snr_db: float) -> Channel:
        return cls.from_snr_db(np.ones(n_users), snr_db)

    def with_snr_db(self, snr_db: float) -> Channel:
        return Channel.from_snr_db(self.h, snr_db)


def bpsk(c) -> np.ndarray:
    """Bit 0 maps to +1, bit 1 to -1."""
    return 1.0 - 2.0 * np.asarray(c, dtype=np.float64)


def awgn_llr(r, sigma2: float) -> np.ndarray:
    """LLR log P(c=0|r)/P(c=1|r) for BPSK in N(0, sigma2); positive means bit 0."""
    return 2.0 * np.asarray(r, dtype=np.float64) / sigma2


def hard_decision(llr) -> np.ndarray:
    """Bit 1 iff the LLR is negative; exact zeros decide bit 0."""
    return (np.asarray(llr) < 0).astype(np.uint8)


@dataclass
class ReceivedBlock:
    """One received NOMA block.

    ``codewords`` are in code order, ``symbols`` in channel order.  Channel
    position i of user u carries code bit ``interleavers[u][i]``.
    """

    r: np.ndarray
    codewords: np.ndarray
    symbols: np.ndarray
    interleavers: np.ndarray

    @property
    def n_users(self) -> int:
        return self.codewords.shape[0]


def random_interleavers(n_users: int, n: int, rng: np.random.Generator) -> np.ndarray:
    return np.stack([rng.permutation(n) for _ in range(n_users)])


def interleave(c, perm) -> np.ndarray:
    return np.asarray(c)[..., perm]


def deinterleave(v, perm) -> np.ndarray:
    v = np.asarray(v)
    out = np.empty_like(v)
    out[..., perm] = v
    return out


def transmit(codewords, ch: Channel, rng: np.random.Generator, interleavers=None) -> ReceivedBlock:
    """Interleave, BPSK-map, superimpose and add noise.

    ``codewords`` has one row per user.  Fresh random interleavers are drawn
    unless given.
    """
    cw = np.atleast_2d(np.asarray(codewords, dtype=np.uint8))
    n_u, n = cw.shape
    if n_u != ch.n_users:
        raise ValueError(f"{n_u} codewords for {ch.n_users} users")
    if interleavers is None:
        interleavers = random_interleavers(n_u, n, rng)
    interleavers = np.asarray(interleavers)
    x = np.stack([bpsk(interleave(cw[u], interleavers[u])) for u in range(n_u)])
    r = ch.gains @ x + rng.normal(0.0, np.sqrt(ch.sigma2), size=n)
    return ReceivedBlock(r=r, codewords=cw, symbols=x, interleavers=interleavers)
