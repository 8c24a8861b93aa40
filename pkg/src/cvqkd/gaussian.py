"""Gaussian-state calculus on covariance matrices.

Covariance matrices are plain ``(2N, 2N)`` numpy arrays in shot-noise units
(vacuum = identity) with interleaved quadrature ordering ``(x1, p1, ..., xN, pN)``.

Two numeric representations are supported. Ordinary ``float64`` arrays cover
random states and moderate modulation. Arrays of ``dtype=object`` holding
``gmpy2.mpfr`` values carry extended precision: the smallest symplectic
eigenvalue of a state with variance ``V`` is only known to roughly ``V**2 * eps``
in float64, which is useless once ``V`` reaches ``1e5`` or so. Constructors
for strongly modulated states switch to extended precision automatically; all
operations below accept either representation.
"""

from __future__ import annotations

import contextlib
import enum
import math
from collections.abc import Iterable, Sequence

import gmpy2
import numpy as np

PHYSICAL_TOL = 1e-9
SYMMETRY_TOL = 1e-12
SYMPLECTIC_TOL = 1e-10
# Variances at or above this are built in extended precision by default.
EXACT_VARIANCE_THRESHOLD = 100.0
EXTENDED_PRECISION_BITS = 160

_MPFR = type(gmpy2.mpfr(0))


class PhysicalityError(ValueError):
    """A covariance matrix violates the uncertainty principle (or is not a CM at all)."""

    def __init__(self, message: str, value: float | None = None):
        super().__init__(message)
        self.value = value


class MeasurementKind(enum.Enum):
    HOMODYNE_X = "homodyne_x"
    HOMODYNE_P = "homodyne_p"
    HETERODYNE = "heterodyne"


# ---------------------------------------------------------------------------
# precision helpers


def extended_precision():
    """Context in which gmpy2 arithmetic runs at ``EXTENDED_PRECISION_BITS``."""
    return gmpy2.context(gmpy2.get_context(), precision=EXTENDED_PRECISION_BITS)


def is_exact(a) -> bool:
    return isinstance(a, np.ndarray) and a.dtype == object


def to_exact(a) -> np.ndarray:
    """Convert an array (or scalar) to an extended-precision object array."""
    arr = np.asarray(a)
    with extended_precision():
        flat = [gmpy2.mpfr(v) for v in arr.ravel().tolist()]
    out = np.empty(len(flat), dtype=object)
    out[:] = flat
    return out.reshape(arr.shape)


def to_float(a) -> np.ndarray:
    return np.asarray(a, dtype=float)


def _precision_scope(*arrays):
    if any(is_exact(a) for a in arrays):
        return extended_precision()
    return contextlib.nullcontext()


# ---------------------------------------------------------------------------
# symplectic structure


def symplectic_form(n_modes: int) -> np.ndarray:
    """Block-diagonal symplectic form with 2x2 blocks [[0, 1], [-1, 0]]."""
    if n_modes < 1:
        raise ValueError(f"n_modes must be positive, got {n_modes}")
    return np.kron(np.eye(n_modes), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def n_modes_of(gamma: np.ndarray) -> int:
    dim = gamma.shape[0]
    if gamma.ndim != 2 or gamma.shape[1] != dim or dim % 2:
        raise ValueError(f"covariance matrix must be square with even dimension, got shape {gamma.shape}")
    return dim // 2


def quadrature_indices(modes: Iterable[int]) -> list[int]:
    """Row/column indices of the x and p quadratures of ``modes``, in mode order."""
    out = []
    for m in modes:
        out.extend((2 * m, 2 * m + 1))
    return out


def is_symplectic(S: np.ndarray, tol: float = SYMPLECTIC_TOL) -> bool:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] % 2:
        return False
    omega = symplectic_form(S.shape[0] // 2)
    return bool(np.max(np.abs(S @ omega @ S.T - omega)) <= tol)


# ---------------------------------------------------------------------------
# spectra and entropies


def _symplectic_eigenvalues_float(gamma: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(gamma)
    except np.linalg.LinAlgError:
        raise PhysicalityError("covariance matrix is not positive definite") from None
    n = gamma.shape[0] // 2
    # i L^T Omega L is Hermitian and has eigenvalues +-nu_k
    h = 1j * (L.T @ symplectic_form(n) @ L)
    ev = np.linalg.eigvalsh(h)
    return np.sort(ev[n:])[::-1]


def _positive_definite_exact(m: np.ndarray) -> bool:
    """All pivots of an unpivoted LDL^T elimination are positive."""
    a = [list(row) for row in m]
    n = len(a)
    for k in range(n):
        if not a[k][k] > 0:
            return False
        for r in range(k + 1, n):
            f = a[r][k] / a[k][k]
            if f:
                for c in range(k, n):
                    a[r][c] -= f * a[k][c]
    return True


def _symplectic_eigenvalues_exact(gamma: np.ndarray) -> list:
    n = gamma.shape[0] // 2
    if not _positive_definite_exact(gamma):
        raise PhysicalityError("covariance matrix is not positive definite")
    if n == 1:
        return [gmpy2.sqrt(gamma[0, 0] * gamma[1, 1] - gamma[0, 1] * gamma[1, 0])]
    if n == 2:
        a, b, c = gamma[:2, :2], gamma[2:, 2:], gamma[:2, 2:]

        def det2(m):
            return m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]

        delta = det2(a) + det2(b) + 2 * det2(c)
        det = _det_exact(gamma)
        # disc = (nu1^2 - nu2^2)^2 can round slightly negative for equal nus
        disc = max(delta * delta - 4 * det, gmpy2.mpfr(0))
        root = gmpy2.sqrt(disc)
        big = (delta + root) / 2
        small = det / big  # avoids cancellation in (delta - root) / 2
        return [gmpy2.sqrt(big), gmpy2.sqrt(small)]
    # larger systems: eigenvalues of Omega gamma (+-i nu) through mpmath
    from mpmath.ctx_mp import MPContext

    ctx = MPContext()
    ctx.prec = EXTENDED_PRECISION_BITS
    m = ctx.matrix([[ctx.mpf(str(v)) for v in row] for row in (symplectic_form(n) @ gamma)])
    ev = ctx.eig(m, left=False, right=False)
    mags = sorted((abs(ctx.im(e)) for e in ev), reverse=True)
    return [gmpy2.mpfr(str(v)) for v in mags[::2]]


def _det_exact(m: np.ndarray):
    """Determinant of a small object array by partially pivoted elimination."""
    a = [list(row) for row in m]
    n = len(a)
    det = gmpy2.mpfr(1)
    for k in range(n):
        piv = max(range(k, n), key=lambda r: abs(a[r][k]))
        if a[piv][k] == 0:
            return gmpy2.mpfr(0)
        if piv != k:
            a[k], a[piv] = a[piv], a[k]
            det = -det
        det *= a[k][k]
        for r in range(k + 1, n):
            f = a[r][k] / a[k][k]
            if f:
                for c in range(k, n):
                    a[r][c] -= f * a[k][c]
    return det


def _inv_exact(m: np.ndarray) -> np.ndarray:
    """Gauss-Jordan inverse of a small object array."""
    n = m.shape[0]
    if n == 1:
        out = np.empty((1, 1), dtype=object)
        out[0, 0] = 1 / m[0, 0]
        return out
    if n == 2:
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        out = np.empty((2, 2), dtype=object)
        out[0, 0], out[0, 1] = m[1, 1] / det, -m[0, 1] / det
        out[1, 0], out[1, 1] = -m[1, 0] / det, m[0, 0] / det
        return out
    a = [list(row) + [gmpy2.mpfr(1 if i == j else 0) for j in range(n)] for i, row in enumerate(m)]
    for k in range(n):
        piv = max(range(k, n), key=lambda r: abs(a[r][k]))
        a[k], a[piv] = a[piv], a[k]
        p = a[k][k]
        a[k] = [v / p for v in a[k]]
        for r in range(n):
            if r != k and a[r][k]:
                f = a[r][k]
                a[r] = [vr - f * vk for vr, vk in zip(a[r], a[k])]
    return np.array([row[n:] for row in a], dtype=object)


def _inv(m: np.ndarray) -> np.ndarray:
    if is_exact(m):
        return _inv_exact(m)
    return np.linalg.inv(m)


def det(m: np.ndarray):
    """Determinant that respects the array's precision."""
    if is_exact(m):
        with extended_precision():
            return _det_exact(m)
    return np.linalg.det(m)


def symplectic_eigenvalues(gamma: np.ndarray, tol: float = PHYSICAL_TOL) -> np.ndarray:
    """Symplectic spectrum of ``gamma``, one value per mode, descending.

    Raises :class:`PhysicalityError` if any eigenvalue lies below ``1 - tol``;
    the offending value is attached as ``err.value``.
    """
    gamma = np.asarray(gamma)
    n_modes_of(gamma)
    if is_exact(gamma):
        with extended_precision():
            nus = _symplectic_eigenvalues_exact(gamma)
        nus = np.array(sorted(nus, reverse=True), dtype=object)
    else:
        nus = _symplectic_eigenvalues_float(np.asarray(gamma, dtype=float))
    smallest = float(nus[-1])
    if smallest < 1.0 - tol:
        raise PhysicalityError(
            f"unphysical covariance matrix: symplectic eigenvalue {smallest!r} < 1", value=smallest
        )
    return nus


def thermal_entropy(nu):
    """Entropy in bits of a thermal mode with symplectic eigenvalue ``nu``.

    ``g(nu) = (nu+1)/2 log2((nu+1)/2) - (nu-1)/2 log2((nu-1)/2)`` with ``g(1) = 0``.
    Values in ``[1 - tol, 1]`` are treated as exactly 1.
    """
    if isinstance(nu, _MPFR):
        with extended_precision():
            if nu <= 1:
                return 0.0
            a, b = (nu + 1) / 2, (nu - 1) / 2
            return float(a * gmpy2.log2(a) - b * gmpy2.log2(b))
    nu = np.maximum(np.asarray(nu, dtype=float), 1.0)
    a, b = (nu + 1) / 2, (nu - 1) / 2
    safe_b = np.where(b > 0, b, 1.0)
    out = a * np.log2(a) - np.where(b > 0, b * np.log2(safe_b), 0.0)
    return float(out) if out.ndim == 0 else out


def von_neumann_entropy(gamma: np.ndarray) -> float:
    """Von Neumann entropy (bits) of the Gaussian state with covariance ``gamma``."""
    nus = symplectic_eigenvalues(gamma)
    return float(sum(thermal_entropy(v) for v in nus))


# ---------------------------------------------------------------------------
# validation and construction


def validate_cm(gamma, tol: float = PHYSICAL_TOL) -> np.ndarray:
    """Check symmetry and physicality; return ``gamma`` as an array."""
    gamma = np.asarray(gamma)
    n_modes_of(gamma)
    with _precision_scope(gamma):
        asym = np.max(np.abs(gamma - gamma.T))
    if float(asym) > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(gamma)))):
        raise PhysicalityError(f"covariance matrix is not symmetric (max asymmetry {float(asym):.3g})")
    symplectic_eigenvalues(gamma, tol=tol)
    return gamma


def _want_exact(V: float, exact: bool | None) -> bool:
    return V >= EXACT_VARIANCE_THRESHOLD if exact is None else exact


def two_mode_squeezed_cm(V: float, exact: bool | None = None) -> np.ndarray:
    """EPR state with reduced quadrature variance ``V`` on both modes."""
    if not V >= 1:
        raise ValueError(f"EPR variance must satisfy V >= 1, got {V}")
    if _want_exact(V, exact):
        with extended_precision():
            v = gmpy2.mpfr(V)
            c = gmpy2.sqrt((v - 1) * (v + 1))
            z = gmpy2.mpfr(0)
            return np.array(
                [[v, z, c, z], [z, v, z, -c], [c, z, v, z], [z, -c, z, v]], dtype=object
            )
    c = math.sqrt((V - 1.0) * (V + 1.0))
    sz = np.diag([1.0, -1.0])
    return np.block([[V * np.eye(2), c * sz], [c * sz, V * np.eye(2)]])


def thermal_cm(nus: Sequence[float]) -> np.ndarray:
    """Product of thermal modes (Williamson normal form)."""
    return np.diag(np.repeat(np.asarray(nus, dtype=float), 2))


def partial_trace(gamma: np.ndarray, keep: Iterable[int]) -> np.ndarray:
    """Reduced covariance matrix on the modes in ``keep`` (in the given order)."""
    keep = list(keep)
    n = n_modes_of(gamma)
    if not keep:
        raise ValueError("partial_trace needs at least one mode to keep")
    if len(set(keep)) != len(keep) or any(m < 0 or m >= n for m in keep):
        raise ValueError(f"invalid mode indices {keep} for a {n}-mode state")
    idx = quadrature_indices(keep)
    return gamma[np.ix_(idx, idx)]


def tensor(*cms: np.ndarray) -> np.ndarray:
    """Direct sum of covariance matrices (tensor product of states)."""
    if not cms:
        raise ValueError("tensor needs at least one covariance matrix")
    dims = [c.shape[0] for c in cms]
    for c in cms:
        n_modes_of(c)
    dtype = object if any(is_exact(c) for c in cms) else float
    out = np.zeros((sum(dims), sum(dims)), dtype=dtype)
    if dtype is object:
        out = to_exact(out)
    k = 0
    for c, d in zip(cms, dims):
        out[k:k + d, k:k + d] = c
        k += d
    return out


def apply_symplectic(S: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Transform ``gamma -> S gamma S^T``."""
    S = np.asarray(S)
    if S.shape != gamma.shape:
        raise ValueError(f"dimension mismatch: S {S.shape} vs gamma {gamma.shape}")
    if not is_symplectic(S):
        raise ValueError("transform is not symplectic")
    with _precision_scope(gamma):
        return S @ gamma @ S.T


def beam_splitter_symplectic(
    transmittance: float, i: int, j: int, n_modes: int, exact: bool = False
) -> np.ndarray:
    """Beam splitter between modes ``i`` and ``j``.

    Acts as ``[[sqrt(t), sqrt(1-t)], [-sqrt(1-t), sqrt(t)]]`` on (x_i, x_j) and on
    (p_i, p_j) alike, so x and p are never mixed. ``exact=True`` returns an
    extended-precision object array.
    """
    if not 0.0 <= transmittance <= 1.0:
        raise ValueError(f"transmittance must lie in [0, 1], got {transmittance}")
    if i == j or not (0 <= i < n_modes and 0 <= j < n_modes):
        raise ValueError(f"invalid mode pair ({i}, {j}) for {n_modes} modes")
    if exact:
        S = to_exact(np.eye(2 * n_modes))
        with extended_precision():
            tau = gmpy2.mpfr(transmittance)
            t, r = gmpy2.sqrt(tau), gmpy2.sqrt(1 - tau)
    else:
        t, r = math.sqrt(transmittance), math.sqrt(1.0 - transmittance)
        S = np.eye(2 * n_modes)
    for q in (0, 1):
        a, b = 2 * i + q, 2 * j + q
        S[a, a], S[a, b] = t, r
        S[b, a], S[b, b] = -r, t
    return S


def mix_modes(gamma: np.ndarray, transmittance: float, i: int, j: int) -> np.ndarray:
    """``S gamma S^T`` for the beam splitter on modes ``i``, ``j`` via row/column mixing.

    Same result as :func:`beam_splitter_symplectic` plus :func:`apply_symplectic`
    but linear in the matrix size; keeps extended precision.
    """
    n = n_modes_of(gamma)
    if i == j or not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"invalid mode pair ({i}, {j}) for {n} modes")
    out = gamma.copy()
    with _precision_scope(gamma):
        if is_exact(gamma):
            tau = gmpy2.mpfr(transmittance)
            t, r = gmpy2.sqrt(tau), gmpy2.sqrt(1 - tau)
        else:
            t, r = math.sqrt(transmittance), math.sqrt(1.0 - transmittance)
        for q in (0, 1):
            a, b = 2 * i + q, 2 * j + q
            ra, rb = out[a, :].copy(), out[b, :].copy()
            out[a, :], out[b, :] = t * ra + r * rb, -r * ra + t * rb
        for q in (0, 1):
            a, b = 2 * i + q, 2 * j + q
            ca, cb = out[:, a].copy(), out[:, b].copy()
            out[:, a], out[:, b] = t * ca + r * cb, -r * ca + t * cb
    return out


def passive_network_symplectic(O: np.ndarray, modes: Sequence[int], n_modes: int) -> np.ndarray:
    """Real orthogonal mode mixing ``O`` applied identically to x and p of ``modes``."""
    O = np.asarray(O, dtype=float)
    k = len(modes)
    if O.shape != (k, k) or np.max(np.abs(O @ O.T - np.eye(k))) > SYMPLECTIC_TOL:
        raise ValueError("network must be a real orthogonal matrix matching the mode list")
    S = np.eye(2 * n_modes)
    for q in (0, 1):
        idx = [2 * m + q for m in modes]
        S[np.ix_(idx, idx)] = O
    return S


def phase_rotation(theta: float, mode: int, n_modes: int) -> np.ndarray:
    S = np.eye(2 * n_modes)
    c, s = math.cos(theta), math.sin(theta)
    S[2 * mode:2 * mode + 2, 2 * mode:2 * mode + 2] = [[c, s], [-s, c]]
    return S


def single_mode_squeezer(r: float, mode: int, n_modes: int) -> np.ndarray:
    S = np.eye(2 * n_modes)
    S[2 * mode, 2 * mode] = math.exp(-r)
    S[2 * mode + 1, 2 * mode + 1] = math.exp(r)
    return S


# ---------------------------------------------------------------------------
# measurement conditioning


def condition_on_quadratures(
    gamma: np.ndarray,
    quadratures: Sequence[int],
    removed_modes: Iterable[int],
    noise=None,
) -> np.ndarray:
    """Conditional CM of the surviving modes after measuring ``quadratures``.

    ``quadratures`` are row indices of ``gamma``; ``removed_modes`` are the modes
    destroyed by the measurement (every measured quadrature must belong to
    one). ``noise`` is added to the measured block before inversion, e.g. the
    identity for heterodyne detection. Surviving modes keep their order.
    """
    n = n_modes_of(gamma)
    removed = set(removed_modes)
    quadratures = list(quadratures)
    if not quadratures:
        raise ValueError("no quadratures to condition on")
    if any(q // 2 not in removed for q in quadratures):
        raise ValueError("measured quadratures must belong to removed modes")
    kept = [m for m in range(n) if m not in removed]
    if not kept:
        raise ValueError("conditioning would leave no modes")
    k = quadrature_indices(kept)
    with _precision_scope(gamma):
        sigma_qq = gamma[quadratures][:, quadratures]
        if noise is not None:
            sigma_qq = sigma_qq + noise
        cross = gamma[k][:, quadratures]
        return gamma[k][:, k] - cross @ _inv(sigma_qq) @ cross.T


def condition_on_measurement(gamma: np.ndarray, measured: Iterable[int], kind: MeasurementKind) -> np.ndarray:
    """Conditional CM of the unmeasured modes after measuring ``measured`` with ``kind``.

    Homodyne uses the rank-one generalized inverse of the measured block
    (inverse on the measured quadrature, zero elsewhere); heterodyne uses
    ``(gamma_meas + I)^-1``. For Gaussian states the result does not depend on
    the measurement outcome.
    """
    measured = sorted(set(measured))
    n = n_modes_of(gamma)
    if not measured or any(m < 0 or m >= n for m in measured):
        raise ValueError(f"invalid measured modes {measured} for a {n}-mode state")
    kind = MeasurementKind(kind)
    if kind is MeasurementKind.HETERODYNE:
        quads = quadrature_indices(measured)
        eye = np.eye(len(quads))
        return condition_on_quadratures(gamma, quads, measured, noise=eye)
    offset = 0 if kind is MeasurementKind.HOMODYNE_X else 1
    return condition_on_quadratures(gamma, [2 * m + offset for m in measured], measured)


# ---------------------------------------------------------------------------
# Williamson decomposition and purification (float only)


def williamson(gamma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(S, nus)`` with ``gamma = S diag(nu1, nu1, ..., nuN, nuN) S^T``."""
    from scipy.linalg import schur, sqrtm

    gamma = np.asarray(gamma, dtype=float)
    n = n_modes_of(gamma)
    root = np.real(sqrtm(gamma))
    inv_root = np.linalg.inv(root)
    M = inv_root @ symplectic_form(n) @ inv_root
    M = (M - M.T) / 2
    T, O = schur(M, output="real")
    nus = np.empty(n)
    for k in range(n):
        a, b = 2 * k, 2 * k + 1
        if T[a, b] < 0:
            O[:, [a, b]] = O[:, [b, a]]
            T[[a, b], :] = T[[b, a], :]
            T[:, [a, b]] = T[:, [b, a]]
        nus[k] = 1.0 / T[a, b]
    D_half_inv = np.diag(np.repeat(1.0 / np.sqrt(nus), 2))
    S = root @ O @ D_half_inv
    return S, nus


def purify(gamma: np.ndarray) -> np.ndarray:
    """Pure CM on ``2N`` modes whose first ``N`` modes reduce to ``gamma``.

    Each thermal mode of the Williamson form is purified by an EPR partner; the
    partners occupy modes ``N..2N-1``.
    """
    S, nus = williamson(gamma)
    n = len(nus)
    big = np.zeros((4 * n, 4 * n))
    for k, nu in enumerate(nus):
        epr = two_mode_squeezed_cm(max(float(nu), 1.0), exact=False)
        idx = quadrature_indices([k, n + k])
        big[np.ix_(idx, idx)] = epr
    S_full = np.eye(4 * n)
    S_full[: 2 * n, : 2 * n] = S
    return S_full @ big @ S_full.T
