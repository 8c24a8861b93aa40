import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cvqkd import gaussian as gs
from cvqkd.keyrate import (
    LADDER,
    KeyRateParams,
    ThresholdSettings,
    asymptotic_key_rate,
    key_rate_entropic_form,
    multi_pair_rate,
    quantum_bob_rate,
    rate_from_cm,
    secret_key_rate,
    swapped_protocol,
    sweep_thresholds,
    tolerable_excess_noise,
)
from cvqkd.protocols import PROTOCOLS, ChannelParams, Direction, Protocol, channel_output_cm, swap_parties

from conftest import betas, noises, random_cm, seeds, transmittances, variances

CH_HOM = Protocol.from_name("coherent-homodyne")
CH_HET = Protocol.from_name("coherent-heterodyne")
SQ_HOM = Protocol.from_name("squeezed-homodyne")
# sign of the asymptotic rate scanned on a 1e-5 grid: positive at 0.35681, not at 0.35682
T09_COHERENT_HET_RR_BRACKET = (0.35681, 0.35682)


def rate(p, d, V, T, eps=0.0, beta=1.0):
    return secret_key_rate(KeyRateParams(p, d, V, ChannelParams(T, eps), beta))


def test_hand_fixture():
    res = rate(CH_HOM, Direction.DR, 2.0, 1.0)
    assert res.K == pytest.approx(0.5, abs=1e-9)
    assert res.chi_E == pytest.approx(0.0, abs=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        KeyRateParams(SQ_HOM, Direction.DR, 2.0, ChannelParams(0.5), beta=1.2)
    with pytest.raises(ValueError):
        KeyRateParams(SQ_HOM, Direction.DR, 0.5, ChannelParams(0.5))
    assert KeyRateParams(SQ_HOM, "rr", 2.0, ChannelParams(0.5)).direction is Direction.RR


@pytest.mark.parametrize("p", PROTOCOLS)
@pytest.mark.parametrize("d", list(Direction))
def test_beta_zero_gives_minus_chi(p, d):
    res = rate(p, d, 5.0, 0.6, 0.05, beta=0.0)
    assert res.K == -res.chi_E and res.K <= 0


def test_squeezed_homodyne_rr_closed_form():
    # lossy channel without noise: the limit is -log2(1 - T)
    for T in (0.2, 0.5, 0.8):
        assert rate(SQ_HOM, Direction.RR, 1e8, T).K == pytest.approx(-math.log2(1 - T), abs=1e-6)


@pytest.mark.parametrize("V", [1.5, 20.0, 150.0, 1e6])
@pytest.mark.parametrize("T", [0.05, 0.5, 0.93, 1.0])
@pytest.mark.parametrize("eps", [0.0, 0.02, 0.4])
def test_closed_form_matches_matrix_path(V, T, eps):
    ch = ChannelParams(T, eps)
    for p in PROTOCOLS:
        for d in Direction:
            fast = secret_key_rate(KeyRateParams(p, d, V, ch))
            slow = rate_from_cm(p, d, channel_output_cm(V, ch))
            assert fast.I_ab == pytest.approx(slow.I_ab, abs=1e-10)
            assert fast.chi_E == pytest.approx(slow.chi_E, abs=1e-10)


def test_quantum_bob_examples():
    for p in PROTOCOLS:
        lossless = quantum_bob_rate(p, 4.0, ChannelParams(1.0))
        assert lossless.chi_E == pytest.approx(0, abs=1e-9)
        assert lossless.K > 0
        assert quantum_bob_rate(p, 1.0, ChannelParams(0.7, 0.1)).K == pytest.approx(0, abs=1e-12)


def test_rate_from_cm_needs_two_modes():
    with pytest.raises(ValueError):
        rate_from_cm(SQ_HOM, Direction.DR, np.eye(6))


def test_multi_pair_restricts_to_single_pair():
    g = random_cm(2, 21)
    for p in PROTOCOLS:
        for d in Direction:
            assert multi_pair_rate(p, d, g, (0,), (1,)).K == rate_from_cm(p, d, g).K


def test_asymptotic_lossless_diverges():
    res = asymptotic_key_rate(SQ_HOM, Direction.RR, ChannelParams(1.0))
    assert not res.converged and res.V_used == LADDER[-1]


def test_asymptotic_dr_boundary():
    res = asymptotic_key_rate(CH_HOM, Direction.DR, ChannelParams(0.5))
    assert abs(res.K) < 1e-6


@pytest.mark.parametrize("p", PROTOCOLS)
def test_asymptotic_rr_positive_at_half(p):
    assert asymptotic_key_rate(p, Direction.RR, ChannelParams(0.5)).K > 0


def test_asymptotic_converges_and_reports_variance():
    res = asymptotic_key_rate(SQ_HOM, Direction.RR, ChannelParams(0.5, 0.1))
    assert res.converged and res.V_used in LADDER
    with pytest.raises(ValueError):
        asymptotic_key_rate(SQ_HOM, Direction.RR, ChannelParams(0.5), ladder=())


def test_threshold_regression_against_sign_scan():
    res = tolerable_excess_noise(0.9, CH_HET, Direction.RR)
    lo, hi = T09_COHERENT_HET_RR_BRACKET
    assert lo - 1e-5 <= res.eps_max <= hi
    assert asymptotic_key_rate(CH_HET, Direction.RR, ChannelParams(0.9, res.eps_max)).K > 0


def test_threshold_zero_when_no_key():
    res = tolerable_excess_noise(0.3, CH_HOM, Direction.DR)
    assert res.eps_max == 0.0


def test_threshold_cap_is_reported():
    res = tolerable_excess_noise(0.9, SQ_HOM, Direction.RR, config=ThresholdSettings(eps_cap=0.5))
    assert res.error is not None and res.eps_max > 0


def test_sweep_examples():
    table = sweep_thresholds([0.25, 0.75], directions=[Direction.DR])
    assert [(r.T, r.protocol, r.direction) for r in table] == [
        (T, p, Direction.DR) for T in (0.25, 0.75) for p in PROTOCOLS
    ]
    assert all(r.eps_max == 0 for r in table[:4])
    assert any(r.eps_max > 0 for r in table[4:])
    single = sweep_thresholds([0.8], [CH_HET], [Direction.RR])[0]
    assert single == tolerable_excess_noise(0.8, CH_HET, Direction.RR)


def test_sweep_parallel_matches_serial():
    grid = [0.3, 0.6, 0.9]
    assert sweep_thresholds(grid, jobs=2) == sweep_thresholds(grid)


@pytest.mark.parametrize("grid", [[], [0.5, 0.4], [0.0, 0.5], [0.5, 1.2]])
def test_sweep_rejects_bad_grid(grid):
    with pytest.raises(ValueError):
        sweep_thresholds(grid)


def test_sweep_records_cell_failures():
    table = sweep_thresholds([0.5], [SQ_HOM], [Direction.RR], config=ThresholdSettings(ladder=()))
    assert math.isnan(table[0].eps_max) and table[0].error


# -- properties ---------------------------------------------------------------


@given(st.sampled_from(PROTOCOLS), st.sampled_from(list(Direction)), variances, transmittances, noises, betas)
def test_decomposition_identity(p, d, V, T, eps, beta):
    res = rate(p, d, V, T, eps, beta)
    assert res.K == beta * res.I_ab - res.chi_E


@given(st.sampled_from(PROTOCOLS), st.sampled_from(list(Direction)), variances, transmittances, noises)
def test_beta_linearity(p, d, V, T, eps):
    k0, k1 = rate(p, d, V, T, eps, 0.0), rate(p, d, V, T, eps, 1.0)
    assert k1.K - k0.K == pytest.approx(k1.I_ab, abs=1e-12)
    assert k1.I_ab >= 0


@given(st.sampled_from(PROTOCOLS), st.sampled_from(list(Direction)), variances, transmittances, noises, noises)
def test_rate_nonincreasing_in_noise(p, d, V, T, e1, e2):
    lo, hi = sorted((e1, e2))
    assert rate(p, d, V, T, hi).K <= rate(p, d, V, T, lo).K + 1e-12


@given(seeds, st.sampled_from(PROTOCOLS), st.sampled_from(list(Direction)), betas)
def test_entropic_form_matches(seed, p, d, beta):
    g = random_cm(2, seed)
    assert key_rate_entropic_form(p, d, g, beta) == pytest.approx(rate_from_cm(p, d, g, beta).K, abs=1e-9)


@given(seeds, st.sampled_from(PROTOCOLS))
def test_reverse_equals_direct_on_swapped_model(seed, p):
    g = random_cm(2, seed)
    rr = rate_from_cm(p, Direction.RR, g).K
    dr = rate_from_cm(swapped_protocol(p), Direction.DR, swap_parties(g)).K
    assert rr == pytest.approx(dr, abs=1e-10)


def test_reverse_equals_direct_on_symmetric_fixture():
    # symmetric channel state: both parties have variance 3
    c = math.sqrt(8.0) * 0.9
    sz = np.diag([1.0, -1.0])
    g = np.block([[3 * np.eye(2), c * sz], [c * sz, 3 * np.eye(2)]])
    assert rate_from_cm(SQ_HOM, Direction.RR, g).K == pytest.approx(rate_from_cm(SQ_HOM, Direction.DR, g).K, abs=1e-12)


@given(st.sampled_from(PROTOCOLS), variances, transmittances, noises)
def test_quantum_bob_dominates(p, V, T, eps):
    ch = ChannelParams(T, eps)
    assert quantum_bob_rate(p, V, ch).K >= secret_key_rate(KeyRateParams(p, Direction.DR, V, ch)).K - 1e-9


def test_extended_precision_needed_at_large_variance():
    g = channel_output_cm(1e8, ChannelParams(0.5, 0.1))
    assert gs.is_exact(g)
    exact = rate_from_cm(SQ_HOM, Direction.RR, g).K
    assert exact == pytest.approx(rate(SQ_HOM, Direction.RR, 1e8, 0.5, 0.1).K, abs=1e-10)
