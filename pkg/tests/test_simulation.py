import math

import numpy as np
import pytest

from cvqkd.gaussian import thermal_entropy
from cvqkd.protocols import PROTOCOLS, ChannelParams, Direction, Protocol, channel_output_cm
from cvqkd.simulation import (
    cm_from_moments,
    estimate_covariance,
    key_rate_from_samples,
    outcome_moments,
    sift,
    simulate_protocol,
    write_batch_csv,
)

SQ_HOM = Protocol.from_name("squeezed-homodyne")
CH_HOM = Protocol.from_name("coherent-homodyne")
CH_HET = Protocol.from_name("coherent-heterodyne")


def test_labels_present_iff_homodyne():
    for p in PROTOCOLS:
        b = simulate_protocol(p, ChannelParams(0.5), 2.0, 100, 1)
        a_hom = p.alice_measurement.value == "homodyne"
        b_hom = p.bob_measurement.value == "homodyne"
        assert np.all(np.isin(b.alice_label, ["x", "p"])) == a_hom
        assert np.all(b.alice_label == "") == (not a_hom)
        assert np.all(np.isin(b.bob_label, ["x", "p"])) == b_hom
        # exactly one column per homodyne record, both for heterodyne
        filled = np.isfinite(b.outcomes()).sum(axis=1)
        assert np.all(filled == (1 if a_hom else 2) + (1 if b_hom else 2))


def test_input_validation():
    with pytest.raises(ValueError):
        simulate_protocol(SQ_HOM, ChannelParams(0.5), 2.0, 0, 1)
    with pytest.raises(ValueError):
        simulate_protocol(SQ_HOM, ChannelParams(0.5), 0.5, 10, 1)


def test_no_modulation_is_shot_noise():
    b = simulate_protocol(CH_HET, ChannelParams(1.0), 1.0, 200_000, 2)
    data = b.outcomes()
    cov = np.cov(data.T)
    # heterodyne outcomes of vacuum: variance (1 + 1) / 2 = 1
    assert np.allclose(np.diag(cov), 1.0, atol=0.02)
    assert np.max(np.abs(cov - np.diag(np.diag(cov)))) < 0.02


def test_bob_homodyne_variance():
    n = 10**6
    b = simulate_protocol(SQ_HOM, ChannelParams(0.5), 2.0, n, 3)
    x = b.bob_x[np.isfinite(b.bob_x)]
    var = x.var(ddof=1)
    assert abs(var - 1.5) < 5 * 1.5 * math.sqrt(2 / len(x))


def test_same_seed_same_batch():
    a = simulate_protocol(CH_HOM, ChannelParams(0.7, 0.1), 3.0, 1000, 9, chunk_size=300)
    b = simulate_protocol(CH_HOM, ChannelParams(0.7, 0.1), 3.0, 1000, 9, chunk_size=300)
    assert write_batch_csv(a) == write_batch_csv(b)


def test_first_moments_vanish():
    b = simulate_protocol(CH_HET, ChannelParams(0.8, 0.01), 10.0, 200_000, 4)
    data = b.outcomes()
    se = data.std(axis=0) / math.sqrt(len(data))
    assert np.all(np.abs(data.mean(axis=0)) < 5 * se)


def test_sift_coherent_heterodyne_unchanged():
    b = simulate_protocol(CH_HET, ChannelParams(0.5), 2.0, 500, 5)
    s = sift(b)
    assert s.sifted and np.array_equal(s.outcomes(), b.outcomes(), equal_nan=True)


def test_sift_squeezed_homodyne_keeps_half():
    n = 10**6
    s = sift(simulate_protocol(SQ_HOM, ChannelParams(0.5), 2.0, n, 6))
    assert abs(s.n / n - 0.5) < 5 * 0.5 / math.sqrt(n)
    assert np.all(s.alice_label == s.bob_label)


def test_sift_all_matching_unchanged():
    b = simulate_protocol(SQ_HOM, ChannelParams(0.5), 2.0, 1000, 7)
    matched = b.take(b.alice_label == b.bob_label)
    again = sift(matched)
    assert again.n == matched.n
    assert np.array_equal(again.outcomes(), matched.outcomes(), equal_nan=True)


def test_sift_projects_coherent_homodyne():
    b = sift(simulate_protocol(CH_HOM, ChannelParams(0.5), 2.0, 1000, 8))
    assert b.n == 1000
    on_x = b.bob_label == "x"
    assert np.all(np.isfinite(b.alice_x[on_x])) and np.all(np.isnan(b.alice_p[on_x]))
    assert np.all(np.isnan(b.alice_x[~on_x])) and np.all(np.isfinite(b.alice_p[~on_x]))


@pytest.mark.parametrize("p", PROTOCOLS)
def test_population_moments_invert_exactly(p):
    g = channel_output_cm(2.0, ChannelParams(0.5, 0.05))
    assert np.allclose(cm_from_moments(outcome_moments(g, p), p), g, atol=1e-14)


@pytest.mark.parametrize("p", PROTOCOLS)
def test_estimate_within_five_standard_errors(p):
    ch = ChannelParams(0.5, 0.05)
    est = estimate_covariance(simulate_protocol(p, ch, 2.0, 10**6, 11))
    z = np.abs(est.gamma - channel_output_cm(2.0, ch)) / est.stderr
    assert np.all(z <= 5)
    assert np.all(est.stderr > 0)
    assert np.allclose(est.gamma, est.gamma.T)


def test_sift_then_estimate_equals_matched_subset():
    b = simulate_protocol(SQ_HOM, ChannelParams(0.6, 0.02), 3.0, 20_000, 12)
    direct = estimate_covariance(sift(b))
    subset = estimate_covariance(b.take(b.alice_label == b.bob_label))
    assert np.array_equal(direct.gamma, subset.gamma)


def test_degenerate_samples_rejected():
    b = simulate_protocol(CH_HET, ChannelParams(0.5), 2.0, 100, 13)
    flat = b.__class__(**{**b.__dict__, "bob_x": np.zeros(100)})
    with pytest.raises(ValueError, match="degenerate"):
        estimate_covariance(flat)
    with pytest.raises(ValueError):
        estimate_covariance(b.take(slice(0, 1)))


def test_fraction_uses_subset():
    b = simulate_protocol(CH_HET, ChannelParams(0.5), 2.0, 1000, 14)
    assert estimate_covariance(b, fraction=0.25).n_used == 250
    with pytest.raises(ValueError):
        estimate_covariance(b, fraction=0.0)


def test_unphysical_estimate_advises_more_rounds():
    b = simulate_protocol(CH_HET, ChannelParams(0.9), 1.01, 3, 1)
    with pytest.raises(ValueError, match="larger n"):
        key_rate_from_samples(b, direction=Direction.RR)


def test_decoupled_eve_from_samples():
    # The true state is pure, so sampling noise leaves most estimates just
    # outside the physical set; those must fail loudly. For the physical ones
    # Eve's share is zero up to sampling error, which g(nu) amplifies near
    # nu = 1: allow g(1 + 5 * stderr).
    physical = 0
    for seed in range(20):
        b = simulate_protocol(CH_HET, ChannelParams(1.0), 4.0, 10**5, seed)
        try:
            res = key_rate_from_samples(b, direction=Direction.RR, beta=0.9)
        except ValueError as exc:
            assert "larger n" in str(exc)
            continue
        physical += 1
        tol = thermal_entropy(1 + 5 * estimate_covariance(b).stderr.max())
        assert 0 <= res.chi_E < tol
        assert res.K == pytest.approx(0.9 * res.I_ab, abs=tol)
    assert physical >= 1


def test_rate_from_samples_deterministic():
    args = (CH_HET, ChannelParams(0.8, 0.01), 10.0, 10_000, 16)
    r1 = key_rate_from_samples(simulate_protocol(*args), direction=Direction.RR, beta=0.95)
    r2 = key_rate_from_samples(simulate_protocol(*args), direction=Direction.RR, beta=0.95)
    assert r1 == r2 and r1.V_used == 10.0


def test_protocol_mismatch_rejected():
    b = simulate_protocol(CH_HET, ChannelParams(0.5), 2.0, 100, 17)
    with pytest.raises(ValueError):
        estimate_covariance(b, SQ_HOM)


def test_csv_layout(tmp_path):
    b = simulate_protocol(SQ_HOM, ChannelParams(0.5), 2.0, 5, 18)
    path = tmp_path / "batch.csv"
    text = write_batch_csv(b, path)
    assert path.read_text() == text
    lines = text.splitlines()
    assert lines[0].startswith("# cvqkd ") and "schema=1" in lines[0]
    assert lines[2] == "round,alice_x,alice_p,alice_label,bob_x,bob_p,bob_label"
    assert len(lines) == 3 + 5
    fields = lines[3].split(",")
    assert len(fields) == 7 and (fields[1] == "") != (fields[2] == "")
