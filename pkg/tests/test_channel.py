import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from noma_osd.channel import (
    Channel,
    awgn_llr,
    bpsk,
    deinterleave,
    hard_decision,
    interleave,
    random_interleavers,
    transmit,
)


def test_bpsk_mapping():
    np.testing.assert_array_equal(bpsk([0, 0, 1]), [1, 1, -1])
    np.testing.assert_array_equal(bpsk(np.zeros(5)), np.ones(5))


@given(st.lists(st.integers(0, 1), min_size=1, max_size=64))
def test_noiseless_hard_decision_roundtrip(bits):
    c = np.array(bits, dtype=np.uint8)
    np.testing.assert_array_equal(hard_decision(bpsk(c)), c)


@given(st.integers(1, 200), st.integers(0, 2**31))
def test_interleave_roundtrip(n, seed):
    r = np.random.default_rng(seed)
    perm = r.permutation(n)
    v = r.normal(size=n)
    np.testing.assert_array_equal(deinterleave(interleave(v, perm), perm), v)


def test_awgn_llr_formula():
    np.testing.assert_allclose(awgn_llr(np.array([1.0, -0.5]), 0.5), [4.0, -2.0])


def test_single_user_tiny_noise_gives_symbols(rng):
    ch = Channel((1.0,), 1e-30)
    c = rng.integers(0, 2, size=(1, 16), dtype=np.uint8)
    blk = transmit(c, ch, rng)
    np.testing.assert_allclose(blk.r, blk.symbols[0], atol=1e-12)


def test_mean_received_power(rng):
    ch = Channel.from_snr_db((1.225, 0.707), 8.0)
    c = rng.integers(0, 2, size=(2, 100_000), dtype=np.uint8)
    blk = transmit(c, ch, rng)
    expected = 1.225**2 + 0.707**2 + ch.sigma2
    assert abs(np.mean(blk.r**2) / expected - 1) < 0.01


def test_received_marginal_is_four_component_mixture(rng):
    h = (1.225, 0.707)
    ch = Channel(h, 0.1)
    c = rng.integers(0, 2, size=(1, 100_000), dtype=np.uint8)
    perms = np.stack([np.arange(c.shape[1]), np.arange(c.shape[1])[::-1]])
    blk = transmit(np.vstack([c, c]), ch, rng, interleavers=perms)
    edges = np.linspace(-3, 3, 61)
    hist, _ = np.histogram(blk.r, edges)
    centers = [s1 * h[0] + s2 * h[1] for s1 in (1, -1) for s2 in (1, -1)]
    cdf = lambda x: np.mean([stats.norm.cdf(x, m, np.sqrt(0.1)) for m in centers], axis=0)
    expected = np.diff(cdf(edges)) * c.shape[1]
    assert 0.5 * np.abs(hist - expected).sum() / c.shape[1] < 0.01


def test_snr_definition():
    ch = Channel.from_snr_db((1.225, 0.707), 8.0)
    assert abs(ch.sigma2 - 0.317) < 1e-3
    assert abs(ch.snr_db - 8.0) < 1e-12
    eq = Channel.equal_power(3, 8.0)
    assert abs(eq.sigma2 - 3 / 10**0.8) < 1e-12


def test_interleavers_are_permutations(rng):
    p = random_interleavers(3, 20, rng)
    assert p.shape == (3, 20)
    assert all(sorted(row) == list(range(20)) for row in p)
