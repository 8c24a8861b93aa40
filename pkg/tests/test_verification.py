import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cvqkd import gaussian as gs
from cvqkd.keyrate import multi_pair_rate, rate_from_cm
from cvqkd.protocols import PROTOCOLS, ChannelParams, Direction, channel_output_cm
from cvqkd.verification import (
    RandomStateSpec,
    check_gaussification_invariance,
    check_holevo_inequality,
    check_super_additivity,
    draw,
    gaussification_margin,
    gaussify,
    holevo_margin,
    random_gaussian_cm,
    super_additivity_margin,
)

from conftest import seeds


def test_spec_validation():
    with pytest.raises(ValueError):
        RandomStateSpec(2, 0.5, 1)
    with pytest.raises(ValueError):
        RandomStateSpec(0, 2.0, 1)
    with pytest.raises(ValueError):
        RandomStateSpec(2, 2.0, 1, max_squeezing=3.0)


def test_pure_draws():
    g = random_gaussian_cm(RandomStateSpec(3, 1.0, 5))
    assert np.allclose(gs.symplectic_eigenvalues(g), 1.0, atol=1e-9)


def test_draws_are_reproducible():
    spec = RandomStateSpec(2, 3.0, 42)
    assert np.array_equal(draw(spec, 4), draw(spec, 4))
    assert not np.array_equal(draw(spec, 4), draw(spec, 5))


def test_draws_are_physical():
    spec = RandomStateSpec(2, 5.0, 3)
    for trial in range(1000):
        gs.validate_cm(draw(spec, trial))


def test_spectrum_within_bounds():
    spec = RandomStateSpec(3, 2.5, 9)
    for trial in range(20):
        nus = gs.symplectic_eigenvalues(draw(spec, trial))
        assert np.all(nus >= 1 - 1e-9) and np.all(nus <= 2.5 + 1e-8)


def test_holevo_report_self_consistent():
    spec = RandomStateSpec(2, 4.0, 7)
    report = check_holevo_inequality(30, spec)
    assert report.passed and report.evaluations == 120 and report.trials == 30
    p = next(p for p in PROTOCOLS if p.name == report.worst_case)
    assert holevo_margin(p, draw(spec, report.worst_trial)) == report.worst_margin


def test_holevo_vacuum_both_sides_zero():
    for p in PROTOCOLS:
        assert holevo_margin(p, np.eye(4)) == pytest.approx(0, abs=1e-12)


def test_super_additivity_report():
    spec = RandomStateSpec(4, 4.0, 7)
    report = check_super_additivity(10, spec)
    assert report.passed and report.evaluations == 80
    name, d = report.worst_case.split("/")
    p = next(p for p in PROTOCOLS if p.name == name)
    margin = super_additivity_margin(p, Direction.parse(d), draw(spec, report.worst_trial))
    assert margin == report.worst_margin


def test_super_additivity_products():
    report = check_super_additivity(10, RandomStateSpec(4, 4.0, 7), product=True)
    assert report.passed and report.worst_margin <= 0


def test_joint_rate_on_two_copies_is_double():
    g = draw(RandomStateSpec(2, 3.0, 1), 0)
    pair = gs.tensor(g, g)
    for p in PROTOCOLS:
        for d in Direction:
            joint = multi_pair_rate(p, d, pair, (0, 2), (1, 3)).K
            assert joint == pytest.approx(2 * rate_from_cm(p, d, g).K, abs=1e-9)


def test_wrong_mode_count_rejected():
    with pytest.raises(ValueError):
        check_holevo_inequality(1, RandomStateSpec(4, 2.0, 1))
    with pytest.raises(ValueError):
        check_super_additivity(1, RandomStateSpec(2, 2.0, 1))


def test_gaussification_vacuum():
    for p in PROTOCOLS:
        for d in Direction:
            assert multi_pair_rate(p, d, gaussify(np.eye(4)), (0, 2), (1, 3)).K == pytest.approx(0, abs=1e-12)


def test_gaussification_epr_channel_fixture():
    g = channel_output_cm(2.0, ChannelParams(0.8, 0.02), exact=False)
    for p in PROTOCOLS:
        for d in Direction:
            assert gaussification_margin(p, d, g) >= -1e-8


def test_gaussification_mode_order():
    g = draw(RandomStateSpec(2, 3.0, 2), 0)
    mixed = gaussify(g, np.eye(2))
    assert np.array_equal(mixed, gs.tensor(g, g))


@given(seeds, st.floats(0, 2 * math.pi))
def test_gaussification_any_passive_network(seed, theta):
    network = np.array([[math.cos(theta), math.sin(theta)], [-math.sin(theta), math.cos(theta)]])
    report = check_gaussification_invariance(2, RandomStateSpec(2, 3.0, seed), network=network)
    assert report.passed


def test_reports_serialize():
    report = check_holevo_inequality(3, RandomStateSpec(2, 2.0, 1))
    summary = report.summary()
    assert summary["passed"] is True and summary["violations"] == 0
    assert report.text().startswith("PASS holevo")
