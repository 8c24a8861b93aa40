"""Secret key rates under Gaussian collective attacks and tolerable excess noise.

``K = beta * I_ab - chi_E`` (``beta = 1`` is the ideal-reconciliation rate).
Rates are per retained symbol: sifting losses are not included. ``K`` is
reported as-is and may be negative; only threshold logic treats ``K <= 0`` as
"no key".
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import gmpy2
import numpy as np

from . import gaussian as gs
from .protocols import (
    PROTOCOLS,
    ChannelParams,
    Detection,
    Direction,
    Protocol,
    Source,
    channel_output_cm,
    check_variance,
    condition_on_record,
    information_budget,
    outcome_covariance,
    settings,
    _components,
    _parties,
)

# Variances for the infinite-modulation limit, evaluated in order.
LADDER = tuple(10.0**k for k in range(2, 9))
RATE_TOL = 1e-6
EPS_TOL = 1e-5


def check_beta(beta: float) -> float:
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"reconciliation efficiency beta must lie in [0, 1], got {beta}")
    return beta


@dataclass(frozen=True)
class KeyRateParams:
    protocol: Protocol
    direction: Direction
    V: float
    channel: ChannelParams
    beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction.parse(self.direction))
        check_variance(self.V)
        check_beta(self.beta)


@dataclass(frozen=True)
class KeyRateResult:
    """Rate and its components in bits per channel use.

    ``K == beta * I_ab - chi_E`` holds exactly for the stored fields.
    """

    I_ab: float
    chi_E: float
    K: float
    beta: float = 1.0
    converged: bool = True
    V_used: float | None = None


def _result(info: float, chi: float, beta: float, V_used=None) -> KeyRateResult:
    return KeyRateResult(I_ab=info, chi_E=chi, K=beta * info - chi, beta=beta, V_used=V_used)


def multi_pair_rate(
    protocol: Protocol,
    direction: Direction,
    gamma: np.ndarray,
    alice_modes: Sequence[int],
    bob_modes: Sequence[int],
    beta: float = 1.0,
) -> KeyRateResult:
    """Key rate when Alice (Bob) measure all of their modes the same way."""
    check_beta(beta)
    budget = information_budget(protocol, gamma, direction, alice_modes, bob_modes)
    return _result(budget.mutual_information, budget.eve_holevo, beta)


def rate_from_cm(
    protocol: Protocol, direction: Direction, gamma: np.ndarray, beta: float = 1.0, V_used=None
) -> KeyRateResult:
    """Key rate for a two-mode (A, B) covariance matrix."""
    if gs.n_modes_of(gamma) != 2:
        raise ValueError("rate_from_cm expects a two-mode covariance matrix (A, B)")
    res = multi_pair_rate(protocol, direction, gamma, (0,), (1,), beta)
    return replace(res, V_used=V_used)


def _nu_pair(trace, det):
    """Square roots of the two roots of ``l^2 - trace l + det``, larger first."""
    disc = max(trace * trace - 4 * det, gmpy2.mpfr(0))
    big = (trace + gmpy2.sqrt(disc)) / 2
    return gmpy2.sqrt(big), gmpy2.sqrt(det / big)


def _channel_budget(protocol: Protocol, direction: Direction, V: float, channel: ChannelParams):
    """``(I_ab, chi_E)`` for the channel output state in scalar extended precision.

    The state ``[[a I, c Z], [c Z, b I]]`` has no x-p correlations and neither
    do its conditional states, so every symplectic eigenvalue is the square
    root of an eigenvalue of ``X P`` (x block times p block). Both settings
    give the same budget, so only the x setting is evaluated.
    """
    with gs.extended_precision():
        a = gmpy2.mpfr(V)
        t, e = gmpy2.mpfr(channel.transmittance), gmpy2.mpfr(channel.excess_noise)
        c2 = t * (a - 1) * (a + 1)
        b = t * (a - 1 + e) + 1
        s_ab = sum(gs.thermal_entropy(nu) for nu in _nu_pair(a * a + b * b - 2 * c2, (a * b - c2) ** 2))
        if direction is Direction.DR:
            r, o = a, b
            r_het, o_het = protocol.alice_measurement, protocol.bob_measurement
        else:
            r, o = b, a
            r_het, o_het = protocol.bob_measurement, protocol.alice_measurement
        r_het, o_het = r_het is Detection.HETERODYNE, o_het is Detection.HETERODYNE
        both = r_het and o_het
        # outcome variances along the key quadrature
        sr = (r + 1) / 2 if r_het else r
        so = (o + 1) / 2 if o_het else o
        cov2 = c2 / (2 if r_het else 1) / (2 if o_het else 1)
        info = float(gmpy2.log2(sr * so / (sr * so - cov2))) / 2 * (2 if both else 1)
        if not r_het:
            s_cond = gs.thermal_entropy(gmpy2.sqrt(o * (o - c2 / r)))
        elif both:
            s_cond = gs.thermal_entropy(o - c2 / (r + 1))
        else:
            # one heterodyne component read: the unread output port stays with Eve's side
            det_x = (o - c2 / (r + 1)) * 2 * r / (r + 1) - 2 * c2 / (r + 1) ** 2
            det_p = o * (r + 1) / 2 - c2 / 2
            trace = (o - c2 / (r + 1)) * o - 2 * c2 / (r + 1) + r
            s_cond = sum(gs.thermal_entropy(nu) for nu in _nu_pair(trace, det_x * det_p))
    return info, s_ab - s_cond


def secret_key_rate(params: KeyRateParams) -> KeyRateResult:
    """Key rate for the channel output state at modulation variance ``V``.

    Evaluated in closed form; equal to :func:`rate_from_cm` applied to
    :func:`channel_output_cm`.
    """
    info, chi = _channel_budget(params.protocol, params.direction, params.V, params.channel)
    return _result(info, chi, params.beta, V_used=params.V)


def quantum_bob_rate(protocol: Protocol, V: float, channel: ChannelParams) -> KeyRateResult:
    """Direct-reconciliation rate when Bob reaches the Holevo bound on Alice's record.

    The returned ``I_ab`` field holds Bob's Holevo information (``beta = 1``).
    """
    gamma = channel_output_cm(V, channel)
    budget = information_budget(protocol, gamma, Direction.DR, partner=True)
    return replace(_result(budget.partner_holevo, budget.eve_holevo, 1.0), V_used=V)


def _differential_entropy(sigma: np.ndarray) -> float:
    k = sigma.shape[0]
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0:
        raise gs.PhysicalityError("outcome covariance is not positive definite")
    return 0.5 * (k * math.log2(2 * math.pi * math.e) + logdet / math.log(2))


def key_rate_entropic_form(
    protocol: Protocol, direction: Direction, gamma: np.ndarray, beta: float = 1.0
) -> float:
    """``S(a|E) - beta S(a|b) - (1 - beta) S(a)`` with Eve's modes built explicitly.

    An independent route to :func:`rate_from_cm`: the state is purified through
    its Williamson decomposition, Eve's conditional entropy is read off the
    purifying modes, and the classical terms are differential entropies of the
    Gaussian outcomes (their scale dependence cancels). Float input only.
    """
    check_beta(beta)
    direction = Direction.parse(direction)
    gamma = np.asarray(gamma, dtype=float)
    n = gs.n_modes_of(gamma)
    n_pairs = n // 2
    alice_modes, bob_modes = range(n_pairs), range(n_pairs, n)
    (ref_modes, ref_det), (oth_modes, oth_det) = _parties(protocol, direction, alice_modes, bob_modes)
    pure = gs.purify(gamma)
    eve = list(range(n, 2 * n))
    s_eve = gs.von_neumann_entropy(gs.partial_trace(pure, eve))
    total = 0.0
    quads = settings(protocol)
    for q in quads:
        ref_comp = _components(ref_det, q, key=True)
        oth_comp = _components(oth_det, q, key=False)
        sigma = outcome_covariance(gamma, [(ref_modes, ref_det, ref_comp), (oth_modes, oth_det, oth_comp)])
        k = len(ref_modes) * len(ref_comp)
        s_a = sigma[:k, :k]
        s_ab = sigma[:k, k:]
        s_a_given_b = s_a - s_ab @ np.linalg.solve(sigma[k:, k:], s_ab.T)
        h_a = _differential_entropy(s_a)
        h_a_given_b = _differential_entropy(s_a_given_b)
        cond, labels = condition_on_record(pure, ref_modes, ref_det, ref_comp)
        eve_pos = [i for i, lab in enumerate(labels) if lab[0] == "mode" and lab[1] >= n]
        s_eve_given_a = gs.von_neumann_entropy(gs.partial_trace(cond, eve_pos))
        s_a_given_eve = h_a + s_eve_given_a - s_eve
        total += s_a_given_eve - beta * h_a_given_b - (1 - beta) * h_a
    return total / len(quads)


def swapped_protocol(protocol: Protocol) -> Protocol:
    """Protocol with Alice's and Bob's measurements interchanged."""
    source = Source.SQUEEZED if protocol.bob_measurement is Detection.HOMODYNE else Source.COHERENT
    return Protocol(source, protocol.alice_measurement)


# ---------------------------------------------------------------------------
# infinite modulation and thresholds


def asymptotic_key_rate(
    protocol: Protocol,
    direction: Direction,
    channel: ChannelParams,
    beta: float = 1.0,
    ladder: Iterable[float] = LADDER,
    tol: float = RATE_TOL,
) -> KeyRateResult:
    """Key rate in the limit of infinite modulation.

    Evaluates the rate on an increasing variance ladder and stops once two
    consecutive values differ by less than ``tol``. If the ladder runs out the
    last value is returned with ``converged=False`` (e.g. a lossless channel,
    whose rate grows without bound).
    """
    prev = None
    for V in ladder:
        res = secret_key_rate(KeyRateParams(protocol, direction, V, channel, beta))
        if prev is not None and abs(res.K - prev.K) < tol:
            return res
        prev = res
    if prev is None:
        raise ValueError("variance ladder is empty")
    return replace(prev, converged=False)


@dataclass(frozen=True)
class ThresholdResult:
    T: float
    protocol: Protocol
    direction: Direction
    beta: float
    eps_max: float
    converged: bool = True
    error: str | None = None


@dataclass(frozen=True)
class ThresholdSettings:
    eps_tol: float = EPS_TOL
    rate_tol: float = RATE_TOL
    ladder: tuple = LADDER
    eps_start: float = 0.1
    eps_cap: float = 1e3


def tolerable_excess_noise(
    T: float,
    protocol: Protocol,
    direction: Direction,
    beta: float = 1.0,
    config: ThresholdSettings = ThresholdSettings(),
) -> ThresholdResult:
    """Largest excess noise with a strictly positive asymptotic key rate.

    Bisection on ``eps`` over ``[0, eps_hi]`` where ``eps_hi`` doubles from
    ``config.eps_start`` until the rate is no longer positive. Returns the
    lower end of the final bracket (a point where the rate is still positive),
    or 0 if there is no key even without excess noise.
    """
    direction = Direction.parse(direction)
    check_beta(beta)
    flags = []

    def positive(eps: float) -> bool:
        res = asymptotic_key_rate(
            protocol, direction, ChannelParams(T, eps), beta, config.ladder, config.rate_tol
        )
        flags.append(res.converged)
        return res.K > 0

    def done(eps_max: float, error: str | None = None) -> ThresholdResult:
        return ThresholdResult(T, protocol, direction, beta, eps_max, all(flags), error)

    if not positive(0.0):
        return done(0.0)
    lo, hi = 0.0, config.eps_start
    while positive(hi):
        lo, hi = hi, 2.0 * hi
        if hi > config.eps_cap:
            return done(lo, f"rate still positive at excess noise {lo}")
    while hi - lo > config.eps_tol:
        mid = 0.5 * (lo + hi)
        if positive(mid):
            lo = mid
        else:
            hi = mid
    return done(lo)


def _cell(args) -> ThresholdResult:
    T, protocol, direction, beta, config = args
    try:
        return tolerable_excess_noise(T, protocol, direction, beta, config)
    except (ValueError, ArithmeticError) as exc:
        return ThresholdResult(T, protocol, direction, beta, float("nan"), False, str(exc))


def sweep_thresholds(
    T_grid: Sequence[float],
    protocols: Sequence[Protocol] = PROTOCOLS,
    directions: Sequence[Direction] = (Direction.DR, Direction.RR),
    beta: float = 1.0,
    config: ThresholdSettings = ThresholdSettings(),
    jobs: int = 1,
) -> list[ThresholdResult]:
    """Tolerable excess noise on a grid, ordered by T, then protocol, then direction.

    Cells are independent; with ``jobs > 1`` they run in worker processes and
    the output order is unchanged.
    """
    grid = [float(t) for t in T_grid]
    if not grid:
        raise ValueError("transmittance grid is empty")
    if any(not 0.0 < t <= 1.0 for t in grid):
        raise ValueError("transmittance grid must lie within (0, 1]")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("transmittance grid must be strictly increasing")
    check_beta(beta)
    directions = [Direction.parse(d) for d in directions]
    cells = [(T, p, d, beta, config) for T in grid for p in protocols for d in directions]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_cell, cells, chunksize=max(1, len(cells) // (4 * jobs))))
    return [_cell(c) for c in cells]
