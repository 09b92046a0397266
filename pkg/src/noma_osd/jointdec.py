"""Iterative joint decoder: parallel interference cancellation (PIC) plus SOSD.

Iterations 1..t_off only cancel interference using the previous PIC output
("decoding switched off").  Later iterations deinterleave each user's LLRs,
run soft-output OSD and feed the extrinsic values back to the canceller.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import Channel, ReceivedBlock, deinterleave, hard_decision, interleave
from .gf2codes import LinearCode
from .sosd import sosd_extrinsic

TANH_CLAMP = 1.0 - 1e-12


def soft_symbols(eps) -> tuple[np.ndarray, np.ndarray]:
    """Soft symbol mean tanh(eps/2) and residual variance 1 - mean^2."""
    mu = np.tanh(0.5 * np.asarray(eps, dtype=np.float64))
    return mu, 1.0 - mu**2


def pic_step(r, eps_prev, ch: Channel) -> np.ndarray:
    """Per-user channel LLRs after cancelling the soft estimates of the others.

    ``eps_prev`` has one row per user (channel order); +/-inf gives perfect
    cancellation.
    """
    r = np.asarray(r, dtype=np.float64)
    eps = np.atleast_2d(np.asarray(eps_prev, dtype=np.float64))
    h = ch.gains[:, None]
    mu, var = soft_symbols(eps)
    interf = (h * mu).sum(axis=0) - h * mu
    resid = (h**2 * var).sum(axis=0) - h**2 * var
    return 2.0 * h * (r - interf) / (resid + ch.sigma2)


def _tanh_mix(a, b, w: float) -> np.ndarray:
    if not 0.0 <= w <= 1.0:
        raise ValueError("combining weight must lie in [0, 1]")
    a = np.asarray(a, dtype=np.float64)
    if w == 1.0:
        return a.copy()
    b = np.asarray(b, dtype=np.float64)
    if w == 0.0:
        return b.copy()
    t = np.clip(w * np.tanh(a) + (1.0 - w) * np.tanh(b), -TANH_CLAMP, TANH_CLAMP)
    return np.arctanh(t)


def dsc_combine(llr_t, llr_prev, beta: float) -> np.ndarray:
    """Damp PIC outputs across adjacent iterations in the tanh domain."""
    return _tanh_mix(llr_t, llr_prev, beta)


def dc_combine(delta, llr, gamma: float) -> np.ndarray:
    """Blend decoder extrinsic values with the channel LLRs in the tanh domain."""
    return _tanh_mix(delta, llr, gamma)


@dataclass(frozen=True)
class JdConfig:
    code: LinearCode
    ch: Channel
    m: int
    t_off: int | None = None
    t_max: int = 10
    beta: float = 1.0
    gamma: float = 1.0
    early_stop: bool = True

    def __post_init__(self):
        if self.t_off is None:
            object.__setattr__(self, "t_off", self.ch.n_users)
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if not 0 <= self.t_off <= self.t_max:
            raise ValueError("need 0 <= t_off <= t_max")
        if not 0 <= self.m <= self.code.k:
            raise ValueError("decoding order must satisfy 0 <= m <= k")
        for name in ("beta", "gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass
class JdTrace:
    """Per-iteration record, arrays shaped (t, n_u, n) in code order."""

    llr: list = field(default_factory=list)
    extrinsic: list = field(default_factory=list)
    feedback: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    converged_at: int | None = None

    @property
    def n_iterations(self) -> int:
        return len(self.decisions)

    def decision_at(self, t: int) -> np.ndarray:
        """Decisions of iteration t (1-based), carried forward after an early stop."""
        if t < 1:
            raise ValueError("iterations are numbered from 1")
        return self.decisions[min(t, len(self.decisions)) - 1]


def jd_decode(block: ReceivedBlock, cfg: JdConfig) -> JdTrace:
    ch, code = cfg.ch, cfg.code
    n_u, n = block.codewords.shape
    if n_u != ch.n_users or n != code.n or block.r.shape != (n,):
        raise ValueError("block dimensions do not match the configuration")
    perms = block.interleavers
    eps = np.zeros((n_u, n))
    prev_pic = None
    trace = JdTrace()
    for t in range(1, cfg.t_max + 1):
        pic = pic_step(block.r, eps, ch)
        if prev_pic is not None and cfg.beta < 1.0:
            pic = dsc_combine(pic, prev_pic, cfg.beta)
        prev_pic = pic
        llr_code = np.stack([deinterleave(pic[u], perms[u]) for u in range(n_u)])
        if t <= cfg.t_off:
            eps = pic
            trace.extrinsic.append(None)
            trace.feedback.append(llr_code)
            dec = hard_decision(llr_code)
        else:
            delta = np.empty_like(llr_code)
            fed = np.empty_like(llr_code)
            dec = np.empty((n_u, n), dtype=np.uint8)
            for u in range(n_u):
                res = sosd_extrinsic(llr_code[u], code, cfg.m)
                delta[u] = res.extrinsic
                dec[u] = res.hard
                fed[u] = dc_combine(res.extrinsic, llr_code[u], cfg.gamma)
            eps = np.stack([interleave(fed[u], perms[u]) for u in range(n_u)])
            trace.extrinsic.append(delta)
            trace.feedback.append(fed)
        trace.llr.append(llr_code)
        trace.decisions.append(dec)
        if (
            trace.converged_at is None
            and t >= cfg.t_off + 2
            and np.array_equal(dec, trace.decisions[-2])
        ):
            trace.converged_at = t
            if cfg.early_stop:
                break
    return trace
