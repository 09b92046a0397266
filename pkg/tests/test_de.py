import numpy as np
import pytest

from noma_osd.channel import Channel
from noma_osd.de import (
    EmpiricalBackend,
    ErrorFreeBackend,
    GridOverflowError,
    IdentityBackend,
    SemiAnalyticBackend,
    cn_transform,
    de_run,
    dn_transform,
    ds_off_density,
    load_states,
    posterior_density,
    sample_density,
    save_states,
    tep_rank,
)
from noma_osd.density import (
    GridSpec,
    awgn_llr_density,
    coarsen,
    gaussian,
    mixture,
    point_mass,
    total_variation,
)
from noma_osd.density import MU_GRID
from noma_osd.osd import tep_table


def test_single_user_first_iteration_is_gaussian():
    ch = Channel((1.0,), 0.5)
    d = ds_off_density(ch, 1)[0]
    assert total_variation(d, awgn_llr_density(0.5)) <= 1e-3


def test_two_user_first_iteration_is_two_component_mixture():
    h1, h2 = 1.225, 0.707
    ch = Channel((h1, h2), 0.1)
    d = ds_off_density(ch, 1)
    for u, (hu, hj) in enumerate([(h1, h2), (h2, h1)]):
        den = hj**2 + ch.sigma2
        var = 4 * hu**2 * ch.sigma2 / den**2
        ref = mixture([gaussian(2 * hu * (hu + s * hj) / den, var) for s in (1, -1)], [0.5, 0.5])
        assert total_variation(coarsen(d[u], 0.25), coarsen(ref, 0.25)) < 5e-3


def test_perfect_soft_symbols_cancel_everything():
    ch = Channel((1.225, 0.707), 0.2)
    J = [point_mass(np.nextafter(1.0, 0.0), MU_GRID)] * 2
    for u, h in enumerate(ch.h):
        L = cn_transform(J, ch, u)
        ref = gaussian(2 * h**2 / ch.sigma2, 4 * h**2 / ch.sigma2)
        assert total_variation(coarsen(L, 0.25), coarsen(ref, 0.25)) < 5e-3


def test_zero_soft_symbols_match_first_iteration():
    ch = Channel((1.225, 0.707), 0.1)
    J = [point_mass(0.0, MU_GRID)] * 2
    first = ds_off_density(ch, 1)
    for u in range(2):
        assert total_variation(coarsen(cn_transform(J, ch, u), 0.25), coarsen(first[u], 0.25)) < 5e-3


def test_three_user_monte_carlo_branch_matches_exact_mean():
    ch = Channel((1.4411, 0.8320, 0.4804), 0.1)
    J = [point_mass(0.0, MU_GRID)] * 3
    L = cn_transform(J, ch, 0)
    first = ds_off_density(ch, 1)[0]
    assert abs(L.mean() - first.mean()) < 0.05 * abs(first.mean())


def test_single_user_decoding_state_equals_direct_transform(ebch32):
    ch = Channel((1.0,), 0.5)
    backend = EmpiricalBackend(n_samples=400, seed=3)
    states = de_run(ch, ebch32, 2, t_off=0, t_max=1, backend=backend)
    direct = dn_transform(awgn_llr_density(0.5), ebch32, 2, backend)
    assert total_variation(states[0].D[0], direct) < 1e-12


def test_identity_and_error_free_backends(ebch32):
    L = awgn_llr_density(0.8)
    assert total_variation(IdentityBackend().transform(L, ebch32, 2), L) == 0.0
    assert ErrorFreeBackend().transform(L, ebch32, 2).clipped_above == pytest.approx(1.0)


def test_posterior_of_point_mass_is_a_shift():
    D = gaussian(4.0, 6.0)
    P = posterior_density(point_mass(2.5), D)
    assert abs(P.mean() - 6.5) < 0.02
    assert abs(P.var() - D.var()) < 0.02
    Q = posterior_density(gaussian(1.0, 2.0), D)
    assert abs(Q.mean() - 5.0) < 1e-3


def test_overflow_raises():
    with pytest.raises(GridOverflowError):
        ds_off_density(Channel((1.0,), 1e-3), 1, GridSpec(-64.0, 64.0, 1025))


def test_sampling_reproduces_density(rng):
    d = gaussian(3.0, 2.0)
    x = sample_density(d, 200_000, rng)
    assert abs(x.mean() - 3.0) < 0.02 and abs(x.var() - 2.0) < 0.05


def test_tep_rank_agrees_with_table():
    t = tep_table(8, 3)
    for idx in (0, 1, 5, 9, 40, len(t) - 1):
        assert tep_rank(t.pos[idx, : t.wt[idx]], 8) == idx


def test_backend_cross_check(ebch32):
    L = awgn_llr_density(0.5)
    emp = EmpiricalBackend(n_samples=4000, seed=1).transform(L, ebch32, 2)
    semi = SemiAnalyticBackend(n_calib=4000, seed=1).transform(L, ebch32, 2)
    assert total_variation(coarsen(emp, 1.0), coarsen(semi, 1.0)) <= 0.1


def test_state_serialisation_roundtrip(tmp_path, ebch32):
    ch = Channel((1.225, 0.707), 0.3)
    grid = GridSpec(-128.0, 128.0, 4097)
    states = de_run(ch, ebch32, 1, t_off=1, t_max=2, backend=IdentityBackend(), grid=grid)
    man = save_states(states, tmp_path / "de")
    back = load_states(man)
    assert total_variation(back[("L", 2, 1)], states[1].L[0]) == 0.0
    assert ("D", 1, 1) not in back and ("P", 2, 2) in back


def test_de_run_rejects_bad_iteration_counts(ebch32):
    ch = Channel((1.0,), 0.5)
    with pytest.raises(ValueError):
        de_run(ch, ebch32, 1, t_off=0, t_max=0, backend=IdentityBackend())
