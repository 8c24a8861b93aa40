"""Randomized checks of the entropic inequality chain on Gaussian states.

Each check draws seeded random covariance matrices, evaluates both sides of
an inequality (or equality) for every protocol and records violations in a
:class:`CheckReport` instead of raising. Margins are signed slacks:
``lhs - rhs`` for inequalities ``lhs >= rhs`` and ``-|lhs - rhs|`` for
equalities, so a draw violates the check when its margin is below
``-tolerance``.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass

import numpy as np

from . import gaussian as gs
from .keyrate import multi_pair_rate, rate_from_cm
from .protocols import (
    PROTOCOLS,
    Direction,
    Protocol,
    bob_holevo,
    mutual_information,
)

MAX_SQUEEZING = 2.0
HOLEVO_TOL = 1e-9
ADDITIVITY_TOL = 1e-9
GAUSSIFICATION_TOL = 1e-8
BALANCED_SPLITTER = np.array([[1.0, 1.0], [-1.0, 1.0]]) / math.sqrt(2.0)


@dataclass(frozen=True)
class RandomStateSpec:
    """Recipe for random Gaussian states.

    Symplectic eigenvalues are uniform in ``[1, nu_max]``; single-mode
    squeezing parameters are uniform in ``[0, max_squeezing]``.
    """

    n_modes: int
    nu_max: float
    seed: int
    max_squeezing: float = MAX_SQUEEZING

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError(f"n_modes must be positive, got {self.n_modes}")
        if not self.nu_max >= 1.0:
            raise ValueError(f"nu_max must be >= 1, got {self.nu_max}")
        if not 0.0 <= self.max_squeezing <= MAX_SQUEEZING:
            raise ValueError(f"max_squeezing must lie in [0, {MAX_SQUEEZING}], got {self.max_squeezing}")


@dataclass(frozen=True)
class CheckReport:
    name: str
    trials: int
    evaluations: int
    violations: int
    worst_margin: float
    tolerance: float
    worst_trial: int | None = None
    worst_case: str | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def summary(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out

    def text(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = f" (trial {self.worst_trial}, {self.worst_case})" if self.worst_trial is not None else ""
        return (
            f"{status} {self.name}: {self.violations}/{self.evaluations} violations over "
            f"{self.trials} draws, worst margin {self.worst_margin:.3e}{where}, tol {self.tolerance:g}"
        )


def _rng(spec: RandomStateSpec, trial: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed, trial, stream]))


def _random_passive(rng: np.random.Generator, n: int) -> np.ndarray:
    """Phase rotations and a mesh of beam splitters with random transmittances."""
    S = np.eye(2 * n)
    for m in range(n):
        S = gs.phase_rotation(rng.uniform(0, 2 * math.pi), m, n) @ S
    for i in range(n):
        for j in range(i + 1, n):
            S = gs.beam_splitter_symplectic(rng.uniform(0, 1), i, j, n) @ S
            S = gs.phase_rotation(rng.uniform(0, 2 * math.pi), j, n) @ S
    return S


def random_gaussian_cm(spec: RandomStateSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """``S D S^T`` with a random thermal ``D`` and ``S = passive . squeezers . passive``."""
    if rng is None:
        rng = _rng(spec, 0)
    n = spec.n_modes
    nus = rng.uniform(1.0, spec.nu_max, size=n)
    S = _random_passive(rng, n)
    for m in range(n):
        S = gs.single_mode_squeezer(rng.uniform(0, spec.max_squeezing), m, n) @ S
    S = _random_passive(rng, n) @ S
    gamma = S @ gs.thermal_cm(nus) @ S.T
    return 0.5 * (gamma + gamma.T)


def draw(spec: RandomStateSpec, trial: int, stream: int = 0) -> np.ndarray:
    """The state used by a check for ``trial``; recomputes any reported draw."""
    return random_gaussian_cm(spec, _rng(spec, trial, stream))


class _Tally:
    def __init__(self, name: str, tolerance: float):
        self.name, self.tolerance = name, tolerance
        self.evaluations = self.violations = 0
        self.worst = math.inf
        self.where = (None, None)

    def add(self, margin: float, trial: int, case: str):
        self.evaluations += 1
        if not margin >= -self.tolerance:
            self.violations += 1
        if margin < self.worst or math.isnan(margin):
            self.worst, self.where = margin, (trial, case)

    def report(self, trials: int) -> CheckReport:
        return CheckReport(
            self.name, trials, self.evaluations, self.violations, self.worst, self.tolerance, *self.where
        )


def _case(protocol: Protocol, direction: Direction | None = None) -> str:
    return protocol.name if direction is None else f"{protocol.name}/{direction.value}"


def _require_modes(spec: RandomStateSpec, n: int):
    if spec.n_modes != n:
        raise ValueError(f"this check needs {n}-mode draws, got n_modes={spec.n_modes}")


def holevo_margin(protocol: Protocol, gamma: np.ndarray) -> float:
    """``chi_aB - I_ab``; non-negative by the Holevo bound."""
    return bob_holevo(protocol, gamma) - mutual_information(protocol, gamma, Direction.DR)


def check_holevo_inequality(
    trials: int, spec: RandomStateSpec, protocols: Sequence[Protocol] = PROTOCOLS
) -> CheckReport:
    """``I_ab <= chi_aB`` on random two-mode states (Bob holds the second mode)."""
    _require_modes(spec, 2)
    tally = _Tally("holevo", HOLEVO_TOL)
    for trial in range(trials):
        gamma = draw(spec, trial)
        for p in protocols:
            tally.add(holevo_margin(p, gamma), trial, _case(p))
    return tally.report(trials)


def super_additivity_margin(
    protocol: Protocol, direction: Direction, gamma: np.ndarray, product: bool = False
) -> float:
    """Slack of ``K(A1A2:B1B2) >= K(A1B1) + K(A2B2)`` for modes ordered (A1, B1, A2, B2).

    With ``product=True`` the equality case is scored (``-|difference|``).
    """
    joint = multi_pair_rate(protocol, direction, gamma, (0, 2), (1, 3)).K
    k1 = rate_from_cm(protocol, direction, gs.partial_trace(gamma, [0, 1])).K
    k2 = rate_from_cm(protocol, direction, gs.partial_trace(gamma, [2, 3])).K
    diff = joint - (k1 + k2)
    return -abs(diff) if product else diff


def check_super_additivity(
    trials: int,
    spec: RandomStateSpec,
    product: bool = False,
    protocols: Sequence[Protocol] = PROTOCOLS,
    directions: Sequence[Direction] = (Direction.DR, Direction.RR),
) -> CheckReport:
    """Joint multi-pair rate against the sum of single-pair rates.

    Correlated draws are 4-mode states from ``spec``; product draws are
    ``tensor(g1, g2)`` of two independent 2-mode draws with the same bounds.
    """
    _require_modes(spec, 4)
    pair_spec = RandomStateSpec(2, spec.nu_max, spec.seed, spec.max_squeezing)
    tally = _Tally("super-additivity (product)" if product else "super-additivity", ADDITIVITY_TOL)
    for trial in range(trials):
        if product:
            gamma = gs.tensor(draw(pair_spec, trial, 1), draw(pair_spec, trial, 2))
        else:
            gamma = draw(spec, trial)
        for p in protocols:
            for d in directions:
                tally.add(super_additivity_margin(p, d, gamma, product), trial, _case(p, d))
    return tally.report(trials)


def gaussify(gamma: np.ndarray, network: np.ndarray = BALANCED_SPLITTER) -> np.ndarray:
    """Two copies of a 2-mode state with the same passive network on each side.

    Output modes are (A1, B1, A2, B2); ``network`` mixes (A1, A2) and (B1, B2).
    """
    pair = gs.tensor(gamma, gamma)
    for modes in ((0, 2), (1, 3)):
        pair = gs.apply_symplectic(gs.passive_network_symplectic(network, modes, 4), pair)
    return pair


def gaussification_margin(
    protocol: Protocol, direction: Direction, gamma: np.ndarray, network: np.ndarray = BALANCED_SPLITTER
) -> float:
    joint = multi_pair_rate(protocol, direction, gaussify(gamma, network), (0, 2), (1, 3)).K
    return -abs(joint - 2 * rate_from_cm(protocol, direction, gamma).K)


def check_gaussification_invariance(
    trials: int,
    spec: RandomStateSpec,
    network: np.ndarray = BALANCED_SPLITTER,
    protocols: Sequence[Protocol] = PROTOCOLS,
    directions: Sequence[Direction] = (Direction.DR, Direction.RR),
) -> CheckReport:
    """``K`` of two copies mixed by ``network`` on both sides equals ``2 K``."""
    _require_modes(spec, 2)
    tally = _Tally("gaussification", GAUSSIFICATION_TOL)
    for trial in range(trials):
        gamma = draw(spec, trial)
        for p in protocols:
            for d in directions:
                tally.add(gaussification_margin(p, d, gamma, network), trial, _case(p, d))
    return tally.report(trials)


CHECKS: dict[str, Callable] = {
    "holevo": check_holevo_inequality,
    "super-additivity": check_super_additivity,
    "gaussification": check_gaussification_invariance,
}
