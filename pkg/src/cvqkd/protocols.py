"""Entanglement-based model of the four Gaussian CV-QKD protocols.

Alice holds mode A of an EPR pair and sends mode B through a lossy, noisy
Gaussian channel. Her measurement of A (homodyne for a squeezed-state source,
heterodyne for a coherent-state source) is equivalent to her state preparation.
Bob measures the received mode by homodyne or heterodyne detection.

Information quantities are computed for one *reference* party (Alice in direct
reconciliation, Bob in reverse reconciliation). The reference's key record is
the part of its outcome that is used for the key: a homodyne outcome, the full
heterodyne record when both parties heterodyne, or only the heterodyne
component matching the partner's homodyne quadrature otherwise. The partner
uses its full record to guess the key.

Eve holds the purification of the shared state, so her Holevo information on
the key record is ``S(AB) - S(rest | key)`` where *rest* is every mode that the
reference measurement leaves unmeasured: after a rank-one measurement on a pure
state the unmeasured parties (rest and Eve) are again in a joint pure state.
When the key record is only half of a heterodyne outcome, heterodyne detection
is dilated into a 50:50 beam splitter with a vacuum ancilla followed by two
homodynes; the unread output port then belongs to *rest*.

Homodyne settings are averaged over the two quadrature choices (x and p) with
equal weight; for phase-insensitive states both give the same value.
"""

from __future__ import annotations

import enum
import itertools
import math
from collections.abc import Sequence
from dataclasses import dataclass

import gmpy2
import numpy as np

from . import gaussian as gs


class Source(enum.Enum):
    SQUEEZED = "squeezed"
    COHERENT = "coherent"


class Detection(enum.Enum):
    HOMODYNE = "homodyne"
    HETERODYNE = "heterodyne"


class Direction(enum.Enum):
    DR = "dr"
    RR = "rr"

    @classmethod
    def parse(cls, value) -> "Direction":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


@dataclass(frozen=True)
class Protocol:
    source: Source
    bob_measurement: Detection

    @property
    def alice_measurement(self) -> Detection:
        if self.source is Source.SQUEEZED:
            return Detection.HOMODYNE
        return Detection.HETERODYNE

    @property
    def name(self) -> str:
        return f"{self.source.value}-{self.bob_measurement.value}"

    @property
    def needs_sifting(self) -> bool:
        return not (self.source is Source.COHERENT and self.bob_measurement is Detection.HETERODYNE)

    @classmethod
    def from_name(cls, name: str) -> "Protocol":
        try:
            src, det = name.strip().lower().split("-")
            return cls(Source(src), Detection(det))
        except ValueError:
            names = ", ".join(p.name for p in PROTOCOLS)
            raise ValueError(f"unknown protocol {name!r}; expected one of {names}") from None

    def __str__(self) -> str:
        return self.name


# Canonical protocol order used by sweeps and CSV columns.
PROTOCOLS = (
    Protocol(Source.SQUEEZED, Detection.HOMODYNE),
    Protocol(Source.SQUEEZED, Detection.HETERODYNE),
    Protocol(Source.COHERENT, Detection.HOMODYNE),
    Protocol(Source.COHERENT, Detection.HETERODYNE),
)


@dataclass(frozen=True)
class ChannelParams:
    """Gaussian channel with transmittance ``T`` and input-referred excess noise."""

    transmittance: float
    excess_noise: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.transmittance <= 1.0:
            raise ValueError(f"transmittance must lie in (0, 1], got {self.transmittance}")
        if not (math.isfinite(self.excess_noise) and self.excess_noise >= 0.0):
            raise ValueError(f"excess noise must be finite and >= 0, got {self.excess_noise}")


def check_variance(V: float) -> float:
    if not (math.isfinite(V) and V >= 1.0):
        raise ValueError(f"modulation variance must satisfy V >= 1, got {V}")
    return V


@dataclass(frozen=True)
class InformationBudget:
    """Averaged information quantities (bits per channel use) for one direction."""

    mutual_information: float
    eve_holevo: float
    partner_holevo: float | None = None


def channel_output_cm(V: float, channel: ChannelParams, exact: bool | None = None) -> np.ndarray:
    """Covariance of (A, B) after Alice's EPR half B crosses the channel.

    Bob's variance is ``T (V - 1 + eps) + 1`` and the correlation is
    ``sqrt(T (V^2 - 1))`` with opposite signs on x and p.
    """
    check_variance(V)
    T, eps = channel.transmittance, channel.excess_noise
    if gs._want_exact(V, exact):
        with gs.extended_precision():
            v, t, e = gmpy2.mpfr(V), gmpy2.mpfr(T), gmpy2.mpfr(eps)
            c = gmpy2.sqrt(t * (v - 1) * (v + 1))
            b = t * (v - 1 + e) + 1
            z = gmpy2.mpfr(0)
            return np.array([[v, z, c, z], [z, v, z, -c], [c, z, b, z], [z, -c, z, b]], dtype=object)
    c = math.sqrt(T * (V - 1.0) * (V + 1.0))
    b = T * (V - 1.0 + eps) + 1.0
    sz = np.diag([1.0, -1.0])
    return np.block([[V * np.eye(2), c * sz], [c * sz, b * np.eye(2)]])


def swap_parties(gamma: np.ndarray, n_pairs: int = 1) -> np.ndarray:
    """Reorder an (A..., B...) covariance matrix as (B..., A...)."""
    n = gs.n_modes_of(gamma)
    if n != 2 * n_pairs:
        raise ValueError(f"expected {2 * n_pairs} modes, got {n}")
    order = list(range(n_pairs, n)) + list(range(n_pairs))
    return gs.partial_trace(gamma, order)


# ---------------------------------------------------------------------------
# measurement records

_QUAD = {"x": 0, "p": 1}


def settings(protocol: Protocol) -> tuple:
    """Matched quadratures that are averaged over (``None`` = no basis choice)."""
    if Detection.HOMODYNE in (protocol.alice_measurement, protocol.bob_measurement):
        return ("x", "p")
    return (None,)


def _quadrature_symmetric(gamma: np.ndarray) -> bool:
    """True if the p block mirrors the x block up to per-mode sign flips.

    Requires no x-p correlations and ``gamma_pp = D gamma_xx D`` for a diagonal
    sign matrix ``D``. Such states are mapped onto themselves, with x and p
    swapped, by a local phase-space reflection, so both settings give the
    same budget. Comparison is exact.
    """
    xs, ps = gamma[0::2, 0::2], gamma[1::2, 1::2]
    if any(v != 0 for v in gamma[0::2, 1::2].ravel()):
        return False
    n = xs.shape[0]
    for signs in itertools.product((1, -1), repeat=n - 1):
        d = np.array((1,) + signs)
        if all(a == b for a, b in zip(ps.ravel(), (xs * np.outer(d, d)).ravel())):
            return True
    return False


def _components(detection: Detection, quad: str | None, key: bool) -> tuple:
    if detection is Detection.HOMODYNE:
        return (quad,)
    if key and quad is not None:
        return (quad,)
    return ("x", "p")


def outcome_covariance(gamma: np.ndarray, parts: Sequence[tuple]) -> np.ndarray:
    """Classical covariance of measurement outcomes.

    ``parts`` is a sequence of ``(modes, detection, components)``. A homodyne
    outcome is the quadrature itself. A heterodyne outcome pair is
    ``((x + x_v) / sqrt2, (p - p_v) / sqrt2)`` with vacuum noise ``x_v, p_v``,
    so each component has variance ``(gamma_qq + 1) / 2``.
    """
    n = gs.n_modes_of(gamma)
    exact = gs.is_exact(gamma)
    with gs._precision_scope(gamma):
        if exact:
            one, zero, half = gmpy2.mpfr(1), gmpy2.mpfr(0), gmpy2.mpfr(1) / 2
            root_half = gmpy2.sqrt(half)
        else:
            one, zero, half, root_half = 1.0, 0.0, 0.5, math.sqrt(0.5)
        idx, scale, noise = [], [], []
        for modes, detection, components in parts:
            het = Detection(detection) is Detection.HETERODYNE
            for m in modes:
                if not 0 <= m < n:
                    raise ValueError(f"mode {m} out of range for a {n}-mode state")
                for comp in components:
                    idx.append(2 * m + _QUAD[comp])
                    scale.append(root_half if het else one)
                    noise.append(half if het else zero)
        # C gamma C^T for a scaled selection matrix C
        scale = np.array(scale, dtype=object if exact else float)
        sigma = gamma[idx][:, idx] * np.outer(scale, scale)
        for i, v in enumerate(noise):
            sigma[i, i] = sigma[i, i] + v
        return sigma


def _log2_ratio(num, den) -> float:
    if isinstance(num, gs._MPFR) or isinstance(den, gs._MPFR):
        with gs.extended_precision():
            return float(gmpy2.log2(num / den))
    return float(math.log2(num / den))


def gaussian_mutual_information(sigma: np.ndarray, k: int) -> float:
    """Shannon information (bits) between the first ``k`` and remaining outcomes."""
    a = sigma[:k, :k]
    b = sigma[k:, k:]
    with gs._precision_scope(sigma):
        num = gs.det(a) * gs.det(b)
        den = gs.det(sigma)
    if not den > 0:
        raise gs.PhysicalityError("outcome covariance is singular or indefinite")
    return 0.5 * _log2_ratio(num, den)


def condition_on_record(
    gamma: np.ndarray, modes: Sequence[int], detection: Detection, components: Sequence[str]
) -> tuple[np.ndarray, list]:
    """Condition on a party's measurement record.

    Returns the conditional CM of every unmeasured mode and a list of labels
    for its modes: ``("mode", m)`` for surviving original modes (in original
    order) followed by ``("ancilla", m)`` for unread heterodyne output ports.
    """
    n = gs.n_modes_of(gamma)
    modes = list(modes)
    detection = Detection(detection)
    components = tuple(components)
    if detection is Detection.HOMODYNE:
        (comp,) = components
        quads = [2 * m + _QUAD[comp] for m in modes]
        cond = gs.condition_on_quadratures(gamma, quads, modes)
        return cond, [("mode", m) for m in range(n) if m not in modes]
    if components == ("x", "p"):
        cond = gs.condition_on_measurement(gamma, modes, gs.MeasurementKind.HETERODYNE)
        return cond, [("mode", m) for m in range(n) if m not in modes]
    # one heterodyne component: split each mode with a vacuum ancilla and read
    # x on the transmitted port or p on the reflected port
    (comp,) = components
    k = len(modes)
    exact = gs.is_exact(gamma)
    vac = gs.to_exact(np.eye(2 * k)) if exact else np.eye(2 * k)
    big = gs.tensor(gamma, vac)
    for j, m in enumerate(modes):
        big = gs.mix_modes(big, 0.5, m, n + j)
    if comp == "x":
        measured = list(modes)
        quads = [2 * m for m in modes]
    else:
        measured = [n + j for j in range(k)]
        quads = [2 * a + 1 for a in measured]
    cond = gs.condition_on_quadratures(big, quads, measured)
    labels = [("mode", m) for m in range(n) if m not in measured]
    labels += [("ancilla", modes[j]) for j in range(k) if n + j not in measured]
    return cond, labels


# ---------------------------------------------------------------------------
# information quantities


def _parties(protocol: Protocol, direction: Direction, alice_modes, bob_modes):
    alice = (list(alice_modes), protocol.alice_measurement)
    bob = (list(bob_modes), protocol.bob_measurement)
    return (alice, bob) if direction is Direction.DR else (bob, alice)


def information_budget(
    protocol: Protocol,
    gamma: np.ndarray,
    direction: Direction = Direction.DR,
    alice_modes: Sequence[int] = (0,),
    bob_modes: Sequence[int] = (1,),
    partner: bool = False,
) -> InformationBudget:
    """Mutual information, Eve's Holevo bound and (optionally) the partner's
    Holevo information on the reference key record, averaged over settings.

    With several modes per party every mode is measured the same way, which
    gives the multi-pair quantities used for super-additivity checks.
    """
    direction = Direction.parse(direction)
    (ref_modes, ref_det), (oth_modes, oth_det) = _parties(protocol, direction, alice_modes, bob_modes)
    s_total = gs.von_neumann_entropy(gamma)
    info = eve = part = 0.0
    quads = settings(protocol)
    if len(quads) > 1 and gs.n_modes_of(gamma) <= 8 and _quadrature_symmetric(gamma):
        quads = quads[:1]
    for q in quads:
        ref_comp = _components(ref_det, q, key=True)
        oth_comp = _components(oth_det, q, key=False)
        sigma = outcome_covariance(gamma, [(ref_modes, ref_det, ref_comp), (oth_modes, oth_det, oth_comp)])
        info += gaussian_mutual_information(sigma, len(ref_modes) * len(ref_comp))
        cond, labels = condition_on_record(gamma, ref_modes, ref_det, ref_comp)
        eve += s_total - gs.von_neumann_entropy(cond)
        if partner:
            keep = [i for i, lab in enumerate(labels) if lab[0] == "mode" and lab[1] in oth_modes]
            s_partner = gs.von_neumann_entropy(gs.partial_trace(gamma, oth_modes))
            part += s_partner - gs.von_neumann_entropy(gs.partial_trace(cond, keep))
    w = len(quads)
    return InformationBudget(info / w, eve / w, part / w if partner else None)


def _check_two_mode(gamma):
    if gs.n_modes_of(gamma) != 2:
        raise ValueError("expected a two-mode covariance matrix (A, B)")
    gs.validate_cm(gamma)


def mutual_information(protocol: Protocol, gamma: np.ndarray, direction: Direction = Direction.DR) -> float:
    """Shannon information between Alice's and Bob's outcomes, bits per use."""
    _check_two_mode(gamma)
    return information_budget(protocol, gamma, direction).mutual_information


def holevo_bound(protocol: Protocol, gamma: np.ndarray, conditioner: str = "alice") -> float:
    """Eve's Holevo information on the conditioner's key record.

    ``conditioner="alice"`` is the direct-reconciliation bound, ``"bob"`` the
    reverse-reconciliation one.
    """
    _check_two_mode(gamma)
    direction = {"alice": Direction.DR, "bob": Direction.RR}.get(conditioner)
    if direction is None:
        raise ValueError(f"conditioner must be 'alice' or 'bob', got {conditioner!r}")
    return information_budget(protocol, gamma, direction).eve_holevo


def bob_holevo(protocol: Protocol, gamma: np.ndarray) -> float:
    """Holevo information of Bob's received mode on Alice's key record."""
    _check_two_mode(gamma)
    return information_budget(protocol, gamma, Direction.DR, partner=True).partner_holevo
