import dataclasses

import numpy as np
import pytest
from scipy import integrate, stats

from noma_osd.channel import Channel
from noma_osd.convergence import (
    KNOTS,
    GdTable,
    NoFixedPointError,
    damped_fixed_point,
    equal_power_fixed_point,
    g_d,
    g_equal,
    tabulate_gd,
    two_user_fixed_point,
    write_curves,
)
from noma_osd.de import IdentityBackend
from noma_osd.density import gaussian


def uncoded_oracle(xi: float) -> float:
    m, s = 2 / xi, np.sqrt(4 / xi)
    f = lambda x: (1 - np.tanh(x / 2) ** 2) * stats.norm.pdf(x, m, s)
    return integrate.quad(f, m - 12 * s, m + 12 * s, limit=200)[0]


@pytest.fixture(scope="module")
def uncoded_table(ebch32):
    return tabulate_gd(ebch32, 1, IdentityBackend(), cache=False)


def test_uncoded_gd_matches_quadrature(ebch32):
    for xi in (0.05, 0.3, 0.5, 1.0, 2.0, 8.0):
        assert abs(g_d(xi, ebch32, 1, IdentityBackend()) - uncoded_oracle(xi)) < 1e-4
    assert abs(g_d(0.5, ebch32, 1, IdentityBackend()) - 0.2310) < 0.05 * 0.2310


def test_gd_vanishes_for_small_xi(ebch32):
    assert g_d(0.01, ebch32, 1, IdentityBackend()) < 1e-12
    with pytest.raises(ValueError):
        g_d(0.0, ebch32, 1, IdentityBackend())


def test_table_is_monotone_interpolant(uncoded_table):
    t = uncoded_table
    assert t.is_monotone
    xs = np.geomspace(0.02, 15, 300)
    assert np.all(np.diff(t(xs)) >= -1e-12)
    for x in (0.3, 1.0, 4.0):
        assert abs(t.inverse(t(x)) - x) < 1e-2 * x
    assert abs(t(1.0) - uncoded_oracle(1.0)) < 1e-3


def test_equal_power_uncoded_agrees_with_iteration(uncoded_table):
    for n_u, snr_db in ((2, 8.0), (3, 8.0), (2, 3.0)):
        snr = 10 ** (snr_db / 10)
        p = equal_power_fixed_point(n_u, snr, None, 1, None, table=uncoded_table)
        ref = damped_fixed_point(n_u, snr, uncoded_table)
        assert abs(p.xi_star[0] - ref) <= 1e-3
        resid = p.xi_star[0] - (n_u - 1) * uncoded_table(p.xi_star[0]) - n_u / snr
        assert abs(resid) <= 1e-3
        assert abs(p.converged_density[0].mean() - 2 / p.xi_star[0]) < 1e-3


def zero_table():
    return GdTable(KNOTS, np.zeros_like(KNOTS), label="error-free")


def test_error_free_fixed_points():
    ch = Channel.from_snr_db((1.225, 0.707), 8.0)
    p = two_user_fixed_point(ch, None, 3, None, table=zero_table())
    assert abs(p.xi_star[0] - ch.sigma2 / 1.225**2) < 1e-6
    assert abs(p.xi_star[1] - ch.sigma2 / 0.707**2) < 1e-6
    q = equal_power_fixed_point(2, 10**0.8, None, 3, None, table=zero_table())
    assert abs(q.xi_star[0] - 2 / 10**0.8) < 1e-6


def test_symmetric_gains_give_equal_powers(uncoded_table):
    ch = Channel((1.0, 1.0), 0.4)
    p = two_user_fixed_point(ch, None, 1, None, table=uncoded_table)
    assert abs(p.xi_star[0] - p.xi_star[1]) < 1e-3


def test_no_interference_fixed_point_for_single_user(uncoded_table):
    with pytest.raises(ValueError):
        equal_power_fixed_point(1, 10.0, None, 1, None, table=uncoded_table)
    with pytest.raises(ValueError):
        two_user_fixed_point(Channel((1.0,), 0.1), None, 1, None, table=uncoded_table)


def test_missing_intersection_raises():
    # g_d identically 1 puts the line below the curve across the whole window
    table = GdTable(KNOTS, np.ones_like(KNOTS))
    with pytest.raises(NoFixedPointError):
        equal_power_fixed_point(3, 10.0, None, 1, None, table=table)


def test_multiple_roots_reported():
    # a step-shaped curve crossing the line three times
    xi = KNOTS
    g = np.where(xi < 0.6, 0.0, np.where(xi < 1.5, 0.35, 0.9))
    table = GdTable(xi, g)
    p = equal_power_fixed_point(3, 10 ** 0.8, None, 1, None, table=table)
    assert p.multiplicity >= 2
    assert p.xi_star[0] == max(p.roots)


@dataclasses.dataclass(frozen=True)
class NoisyBackend:
    """Uncoded transform plus sample-size dependent noise on the mean."""

    n_samples: int = 10
    mode: str = "noisy"

    def transform(self, L, code, m):
        r = np.random.default_rng(int(1e6 * L.mean()) % 2**31)
        shift = r.normal(0, 3.0 / self.n_samples)
        return gaussian(L.mean() + shift, max(L.var(), 1e-6), L.grid)


def test_resampling_and_running_max(ebch32):
    knots = np.geomspace(0.2, 4, 16)
    t = tabulate_gd(ebch32, 1, NoisyBackend(), knots=knots, cache=False)
    assert t.is_monotone
    assert t.raw is not None and t.raw.shape == knots.shape


def test_disk_cache_roundtrip(ebch32, tmp_path):
    knots = np.geomspace(0.1, 4, 8)
    a = tabulate_gd(ebch32, 1, IdentityBackend(), knots=knots, cache=tmp_path)
    files = list(tmp_path.glob("gd_*.json"))
    assert len(files) == 1
    b = tabulate_gd(ebch32, 1, IdentityBackend(), knots=knots, cache=tmp_path)
    np.testing.assert_array_equal(a.g, b.g)


def test_curves_csv(tmp_path, uncoded_table):
    p = tmp_path / "c.csv"
    write_curves(uncoded_table, p, 2, 10**0.8, n_points=10)
    rows = p.read_text().splitlines()
    assert rows[0] == "xi,g_d,g_e" and len(rows) == 11
    x = float(rows[5].split(",")[0])
    assert abs(float(rows[5].split(",")[2]) - float(g_equal(x, 2, 10**0.8))) < 1e-12
