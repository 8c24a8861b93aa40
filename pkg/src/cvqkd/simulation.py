"""Monte-Carlo prepare-and-measure data and covariance estimation.

Rounds are drawn in the entanglement-based picture: for each round's
quadrature choices the measured outcomes are jointly Gaussian with the
covariance implied by the channel output state and the detector model (see
:func:`cvqkd.protocols.outcome_covariance`). Only second moments matter for
the rate, so no mode-level model of Eve is simulated.

Outcome columns are ``alice_x, alice_p, bob_x, bob_p``; a homodyne party fills
only the column of its measured quadrature (the other is NaN) and carries a
label, a heterodyne party fills both and carries no label.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import gaussian as gs
from .keyrate import KeyRateResult, check_beta, rate_from_cm
from .protocols import (
    ChannelParams,
    Detection,
    Direction,
    Protocol,
    channel_output_cm,
    check_variance,
    outcome_covariance,
)

DEFAULT_CHUNK = 100_000
LABELS = ("x", "p")
COLUMNS = ("alice_x", "alice_p", "bob_x", "bob_p")


@dataclass(frozen=True)
class SampleBatch:
    """Per-round records. Labels are ``"x"``/``"p"`` or ``""`` when not applicable."""

    protocol: Protocol
    channel: ChannelParams
    V: float
    seed: int
    alice_x: np.ndarray
    alice_p: np.ndarray
    alice_label: np.ndarray
    bob_x: np.ndarray
    bob_p: np.ndarray
    bob_label: np.ndarray
    sifted: bool = False

    @property
    def n(self) -> int:
        return len(self.alice_x)

    def outcomes(self) -> np.ndarray:
        """``(n, 4)`` array in :data:`COLUMNS` order, NaN where not measured."""
        return np.column_stack([self.alice_x, self.alice_p, self.bob_x, self.bob_p])

    def take(self, rows) -> "SampleBatch":
        return replace(
            self,
            alice_x=self.alice_x[rows],
            alice_p=self.alice_p[rows],
            alice_label=self.alice_label[rows],
            bob_x=self.bob_x[rows],
            bob_p=self.bob_p[rows],
            bob_label=self.bob_label[rows],
        )


@dataclass(frozen=True)
class EstimatedCovariance:
    """``gamma`` in shot-noise units with entrywise standard errors.

    Entries whose outcomes are never observed together are 0 with an
    infinite standard error.
    """

    gamma: np.ndarray
    stderr: np.ndarray
    n_used: int
    physical: bool


def _record(detection: Detection, label: str | None) -> tuple:
    return ("x", "p") if detection is Detection.HETERODYNE else (label,)


def _label_choices(detection: Detection) -> tuple:
    return LABELS if detection is Detection.HOMODYNE else (None,)


def _chunk(protocol: Protocol, gamma: np.ndarray, rng: np.random.Generator, m: int) -> dict:
    a_det, b_det = protocol.alice_measurement, protocol.bob_measurement
    a_hom, b_hom = a_det is Detection.HOMODYNE, b_det is Detection.HOMODYNE
    # choices first, then outcomes, so the stream layout is fixed per chunk
    a_idx = rng.integers(0, 2, size=m) if a_hom else np.zeros(m, dtype=int)
    b_idx = rng.integers(0, 2, size=m) if b_hom else np.zeros(m, dtype=int)
    dim = (1 if a_hom else 2) + (1 if b_hom else 2)
    z = rng.standard_normal((m, dim))
    out = np.full((m, 4), np.nan)
    for i, a_lab in enumerate(_label_choices(a_det)):
        for j, b_lab in enumerate(_label_choices(b_det)):
            rows = (a_idx == i) & (b_idx == j)
            a_rec, b_rec = _record(a_det, a_lab), _record(b_det, b_lab)
            sigma = outcome_covariance(gamma, [((0,), a_det, a_rec), ((1,), b_det, b_rec)])
            values = z[rows] @ np.linalg.cholesky(sigma).T
            cols = [LABELS.index(q) for q in a_rec] + [2 + LABELS.index(q) for q in b_rec]
            out[np.ix_(rows, cols)] = values
    labels = np.array(LABELS)
    return {
        "out": out,
        "alice_label": labels[a_idx] if a_hom else np.full(m, ""),
        "bob_label": labels[b_idx] if b_hom else np.full(m, ""),
    }


def simulate_protocol(
    protocol: Protocol,
    channel: ChannelParams,
    V: float,
    n: int,
    seed: int,
    chunk_size: int = DEFAULT_CHUNK,
) -> SampleBatch:
    """Draw ``n`` rounds of the protocol over ``channel`` at modulation ``V``.

    Chunk ``k`` uses the ``k``-th child of ``SeedSequence(seed)``, so a batch
    is a pure function of ``(seed, n, chunk_size)`` however chunks are produced.
    """
    check_variance(V)
    if n < 1:
        raise ValueError(f"number of rounds must be >= 1, got {n}")
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    gamma = gs.to_float(channel_output_cm(V, channel))
    sizes = [min(chunk_size, n - start) for start in range(0, n, chunk_size)]
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    parts = [_chunk(protocol, gamma, np.random.default_rng(c), m) for c, m in zip(children, sizes)]
    out = np.concatenate([p["out"] for p in parts])
    return SampleBatch(
        protocol=protocol,
        channel=channel,
        V=float(V),
        seed=seed,
        alice_x=out[:, 0],
        alice_p=out[:, 1],
        alice_label=np.concatenate([p["alice_label"] for p in parts]),
        bob_x=out[:, 2],
        bob_p=out[:, 3],
        bob_label=np.concatenate([p["bob_label"] for p in parts]),
    )


def sift(batch: SampleBatch) -> SampleBatch:
    """Keep rounds whose quadratures match.

    Squeezed+homodyne drops rounds with different labels (about half).
    Coherent+homodyne keeps every round but reduces Alice's record to Bob's
    quadrature. Other protocols are returned unchanged (apart from the flag).
    """
    p = batch.protocol
    if batch.sifted or not p.needs_sifting:
        return replace(batch, sifted=True)
    a_hom = p.alice_measurement is Detection.HOMODYNE
    b_hom = p.bob_measurement is Detection.HOMODYNE
    if a_hom and b_hom:
        return replace(batch.take(batch.alice_label == batch.bob_label), sifted=True)
    if b_hom:
        on_x = batch.bob_label == "x"
        return replace(
            batch,
            alice_x=np.where(on_x, batch.alice_x, np.nan),
            alice_p=np.where(on_x, np.nan, batch.alice_p),
            alice_label=batch.bob_label.copy(),
            sifted=True,
        )
    return replace(batch, sifted=True)


def _model(protocol: Protocol) -> tuple[np.ndarray, np.ndarray]:
    """Per-column scale and additive noise of the detector model."""
    het = [protocol.alice_measurement is Detection.HETERODYNE] * 2
    het += [protocol.bob_measurement is Detection.HETERODYNE] * 2
    scale = np.array([math.sqrt(0.5) if h else 1.0 for h in het])
    noise = np.array([0.5 if h else 0.0 for h in het])
    return scale, noise


def outcome_moments(gamma: np.ndarray, protocol: Protocol) -> np.ndarray:
    """Population covariance of the four outcome columns (NaN if never jointly observed).

    Homodyne x and p of one party are never measured in the same round, and
    after sifting a homodyne party's quadrature only meets the matching one.
    """
    gamma = gs.to_float(gamma)
    scale, noise = _model(protocol)
    sigma = np.outer(scale, scale) * gamma + np.diag(noise)
    seen = _jointly_observed(protocol)
    return np.where(seen, sigma, np.nan)


def _jointly_observed(protocol: Protocol) -> np.ndarray:
    """Outcome pairs that share rounds in sifted data."""
    b_hom = protocol.bob_measurement is Detection.HOMODYNE
    # with Bob on homodyne, sifting leaves Alice one quadrature per round too
    a_single = protocol.alice_measurement is Detection.HOMODYNE or b_hom
    seen = np.ones((4, 4), dtype=bool)
    for single, block in ((a_single, slice(0, 2)), (b_hom, slice(2, 4))):
        if single:
            seen[block, block] = np.eye(2, dtype=bool)
    if b_hom:
        seen[0, 3] = seen[3, 0] = seen[1, 2] = seen[2, 1] = False
    return seen


def cm_from_moments(sigma: np.ndarray, protocol: Protocol) -> np.ndarray:
    """Invert the detector model: ``gamma_ij = (sigma_ij - delta_ij N_i) / (s_i s_j)``.

    Heterodyne columns have ``s = 1/sqrt2`` and ``N = 1/2``, so a heterodyne
    variance maps as ``2 sigma - 1``, a heterodyne-heterodyne covariance as
    ``2 sigma`` and a heterodyne-homodyne covariance as ``sqrt2 sigma``;
    homodyne entries are unchanged. NaN (unobserved) entries become 0.
    """
    scale, noise = _model(protocol)
    gamma = (np.asarray(sigma, dtype=float) - np.diag(noise)) / np.outer(scale, scale)
    return np.where(np.isnan(gamma), 0.0, gamma)


def _pairwise_cov(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = data.shape[1]
    cov = np.full((k, k), np.nan)
    count = np.zeros((k, k), dtype=int)
    finite = np.isfinite(data)
    for i in range(k):
        for j in range(i, k):
            rows = finite[:, i] & finite[:, j]
            m = int(rows.sum())
            count[i, j] = count[j, i] = m
            if m >= 2:
                xi, xj = data[rows, i], data[rows, j]
                c = np.dot(xi - xi.mean(), xj - xj.mean()) / (m - 1)
                cov[i, j] = cov[j, i] = c
    return cov, count


def estimate_covariance(
    batch: SampleBatch, protocol: Protocol | None = None, fraction: float = 1.0
) -> EstimatedCovariance:
    """Estimate ``gamma_AB`` from (sifted) outcomes.

    Uses pairwise-complete sample covariances and :func:`cm_from_moments`.
    Standard errors follow normal theory, ``var(s_ij) = (s_ii s_jj + s_ij^2) / m``,
    scaled by the same affine map. ``fraction < 1`` estimates from a random
    subset of rounds chosen reproducibly from the batch seed.
    """
    protocol = batch.protocol if protocol is None else protocol
    if protocol != batch.protocol:
        raise ValueError("protocol does not match the batch")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if not batch.sifted:
        batch = sift(batch)
    if fraction < 1.0:
        rng = np.random.default_rng(np.random.SeedSequence([batch.seed, 1]))
        m = max(1, int(round(fraction * batch.n)))
        batch = batch.take(np.sort(rng.choice(batch.n, size=m, replace=False)))
    if batch.n < 2:
        raise ValueError(f"need at least 2 rounds to estimate a covariance, got {batch.n}")
    cov, count = _pairwise_cov(batch.outcomes())
    cov = np.where(_jointly_observed(protocol), cov, np.nan)
    diag = np.diag(cov)
    observed = np.isfinite(diag)
    if np.any(diag[observed] <= 0):
        raise ValueError("degenerate sample: an outcome column has zero variance")
    gamma = cm_from_moments(cov, protocol)
    scale, _ = _model(protocol)
    var = (np.outer(diag, diag) + cov**2) / np.maximum(count, 1)
    stderr = np.sqrt(var) / np.outer(scale, scale)
    stderr = np.where(np.isnan(stderr), np.inf, stderr)
    try:
        gs.validate_cm(gamma)
        physical = True
    except gs.PhysicalityError:
        physical = False
    return EstimatedCovariance(gamma, stderr, batch.n, physical)


def key_rate_from_samples(
    batch: SampleBatch,
    protocol: Protocol | None = None,
    direction: Direction = Direction.RR,
    beta: float = 1.0,
    fraction: float = 1.0,
) -> KeyRateResult:
    """Key rate of the estimated state, reported at the batch's ``V``."""
    check_beta(beta)
    est = estimate_covariance(batch, protocol, fraction)
    if not est.physical:
        raise ValueError(
            f"estimated covariance from {est.n_used} rounds is unphysical; "
            "rerun with more rounds (larger n)"
        )
    return rate_from_cm(batch.protocol, Direction.parse(direction), est.gamma, beta, V_used=batch.V)


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_batch_csv(batch: SampleBatch, path: str | Path | None = None) -> str:
    """Write the batch as CSV (empty fields where absent); returns the text."""
    buf = io.StringIO()
    ch = batch.channel
    buf.write(f"# cvqkd {__version__} batch schema=1\n")
    buf.write(
        f"# protocol={batch.protocol.name} T={ch.transmittance!r} eps={ch.excess_noise!r} "
        f"V={batch.V!r} n={batch.n} seed={batch.seed} sifted={batch.sifted}\n"
    )
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["round", "alice_x", "alice_p", "alice_label", "bob_x", "bob_p", "bob_label"])
    for k in range(batch.n):
        writer.writerow([
            k,
            _fmt(batch.alice_x[k]),
            _fmt(batch.alice_p[k]),
            batch.alice_label[k],
            _fmt(batch.bob_x[k]),
            _fmt(batch.bob_p[k]),
            batch.bob_label[k],
        ])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
