"""Emission observables: rates, far-field patterns, photon correlations, fits.

Far-field detection along polar angle ``theta`` (measured from the chain
axis) uses the operator ``D(theta) = sum_j c_j s_ge^j`` with
``c_j = sqrt(pref) exp(-i k0 z_j cos theta)`` and
``pref = 3/(8 pi) (1 - sin^2(theta)/2) dOmega``, the angular factor of a
circular dipole. ``<D^dag D>`` per unit solid angle is the photon detection
probability rate ``P(theta)``.

Every function taking a ``state`` accepts a :class:`ManyBodyState`, a
:class:`DensityMatrix`, or precomputed :class:`Moments` (as recorded along
master-equation runs).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, factorial
from typing import Optional, Sequence

import numpy as np
from scipy.signal import find_peaks

from ._moments import Moments, moments_of
from .couplings import K0, CouplingMatrices, JumpBasis, build_matrices, diagonalize
from .errors import (
    FitDomainError,
    InvalidArgumentError,
    UndefinedCorrelationError,
    UndefinedPatternError,
)
from .geometry import AtomArray, build_chain
from .states import ManyBodyState, SpinBasis, fully_inverted, full_basis, pair_index

__all__ = [
    "Moments",
    "moments_of",
    "DetectionOperator",
    "detection_operator",
    "emission_rate",
    "point_pattern",
    "intensity",
    "intensity_profile",
    "total_detected_rate",
    "theta_max_prediction",
    "g2_directional",
    "operator_correlator",
    "jump_correlator_numeric",
    "g2_inverted_closed_form",
    "GMReport",
    "gM_inverted",
    "BurstReport",
    "detect_burst",
    "initial_rate_slope",
    "FitResult",
    "fit_decay_windows",
    "PatternResult",
    "jump_emission_pattern",
    "DEFAULT_DELTA_THETA",
    "default_theta_grid",
]

DEFAULT_DELTA_THETA = 0.01 * np.pi
QUAD_ORDER = 8
BURST_TIME = 1e-4  # in units of 1/(N Gamma0)


def _z(array_or_z) -> np.ndarray:
    if isinstance(array_or_z, AtomArray):
        return array_or_z.z
    return np.asarray(array_or_z, dtype=float)


def _angular(theta):
    s = np.sin(theta)
    return 3.0 / (8.0 * np.pi) * (1.0 - 0.5 * s * s)


def default_theta_grid(n: int = 512) -> np.ndarray:
    """``n`` uniform angles on (0, pi), endpoints excluded."""
    return (np.arange(n) + 0.5) * np.pi / n


@dataclass(frozen=True)
class DetectionOperator:
    theta: float
    delta_theta: float
    solid_angle: float
    coefficients: np.ndarray

    @property
    def prefactor(self) -> float:
        return float(_angular(self.theta) * self.solid_angle)


def detection_operator(array_or_z, theta: float, delta_theta: float = DEFAULT_DELTA_THETA,
                       solid_angle: Optional[float] = None) -> DetectionOperator:
    """Detector of width ``delta_theta``; a square aperture by default."""
    dOmega = delta_theta**2 if solid_angle is None else float(solid_angle)
    if dOmega < 0:
        raise InvalidArgumentError("solid angle must be >= 0")
    z = _z(array_or_z)
    c = np.sqrt(_angular(theta) * dOmega) * np.exp(-1j * K0 * z * np.cos(theta))
    return DetectionOperator(float(theta), float(delta_theta), dOmega, c)


def _gamma_of(source) -> np.ndarray:
    if isinstance(source, JumpBasis):
        return source.gamma_matrix()
    if isinstance(source, CouplingMatrices):
        return np.asarray(source.Gamma)
    return np.asarray(source, dtype=float)


def emission_rate(state, gamma_source) -> float:
    """Total photon emission rate ``sum_nu Gamma_nu <O_nu^dag O_nu>``.

    ``gamma_source`` is a JumpBasis, CouplingMatrices or the Gamma matrix.
    """
    m = moments_of(state)
    return float(np.real(np.sum(_gamma_of(gamma_source) * m.c1)))


def point_pattern(state, array_or_z, thetas) -> np.ndarray:
    """Detection probability per unit solid angle, ``P(theta)``."""
    m = moments_of(state)
    z = _z(array_or_z)
    th = np.atleast_1d(np.asarray(thetas, dtype=float))
    A = np.exp(-1j * K0 * np.outer(np.cos(th), z))
    quad = np.einsum("ti,ij,tj->t", A.conj(), m.c1, A).real
    out = _angular(th) * quad
    return out if np.ndim(thetas) else out[0]


def _bin_nodes(theta, delta_theta, order):
    lo = max(theta - 0.5 * delta_theta, 0.0)
    hi = min(theta + 0.5 * delta_theta, np.pi)
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


def intensity_profile(state, array_or_z, thetas, delta_theta: float = DEFAULT_DELTA_THETA,
                      solid_angle: Optional[float] = None, order: int = QUAD_ORDER) -> np.ndarray:
    """Detector signal ``(dOmega / dtheta) * integral of P over the bin``.

    Bins are clipped to [0, pi] at the poles. The default aperture is square,
    ``dOmega = dtheta**2``.
    """
    if not delta_theta > 0:
        raise InvalidArgumentError("delta_theta must be positive")
    dOmega = delta_theta**2 if solid_angle is None else float(solid_angle)
    th = np.atleast_1d(np.asarray(thetas, dtype=float))
    nodes, weights = zip(*(_bin_nodes(t, delta_theta, order) for t in th))
    nodes = np.concatenate(nodes)
    P = point_pattern(state, array_or_z, nodes).reshape(len(th), order)
    return (dOmega / delta_theta) * np.sum(P * np.array(weights), axis=1)


def intensity(state, array_or_z, theta: float, delta_theta: float = DEFAULT_DELTA_THETA,
              solid_angle: Optional[float] = None, order: int = QUAD_ORDER) -> float:
    return float(intensity_profile(state, array_or_z, [theta], delta_theta, solid_angle, order)[0])


def total_detected_rate(state, array: AtomArray, n_u: Optional[int] = None,
                        n_phi: Optional[int] = None) -> float:
    """Far-field detection rate integrated over the full sphere.

    Uses the full emission direction (not only its polar angle), so the
    result equals the emission rate for any geometry; chains need no
    azimuthal quadrature.
    """
    m = moments_of(state)
    pos = array.positions
    extent = float(np.max(np.linalg.norm(pos - pos.mean(0), axis=1))) if len(pos) > 1 else 0.0
    n_u = n_u or int(2 * K0 * extent) + 64
    u, wu = np.polynomial.legendre.leggauss(n_u)
    flat = bool(np.all(pos[:, :2] == 0.0))
    if flat:
        phis, wphi = np.array([0.0]), np.array([2 * np.pi])
    else:
        n_phi = n_phi or int(2 * K0 * extent) + 32
        phis = 2 * np.pi * np.arange(n_phi) / n_phi
        wphi = np.full(n_phi, 2 * np.pi / n_phi)
    total = 0.0
    s = np.sqrt(1.0 - u * u)
    ang = 3.0 / (8.0 * np.pi) * (1.0 - 0.5 * s * s)
    for phi, wp in zip(phis, wphi):
        nhat = np.column_stack([s * np.cos(phi), s * np.sin(phi), u])
        A = np.exp(-1j * K0 * nhat @ pos.T)
        quad = np.einsum("ti,ij,tj->t", A.conj(), m.c1, A).real
        total += wp * np.sum(wu * ang * quad)
    return float(total)


def theta_max_prediction(k_nu: float, d: float, tol: float = 1e-12) -> np.ndarray:
    """Lobe angles ``arccos(n / d +- k_nu)`` (``k_nu`` in k0 units, ``d`` in lambda0)."""
    if not d > 0:
        raise InvalidArgumentError("d must be positive")
    k = abs(float(k_nu))
    nmax = int(np.ceil((1.0 + k) * d)) + 1
    args = []
    for n in range(-nmax, nmax + 1):
        for sgn in (1.0, -1.0):
            a = n / d + sgn * k
            if -1.0 - tol <= a <= 1.0 + tol:
                args.append(min(1.0, max(-1.0, a)))
    angles = np.sort(np.arccos(np.array(args))) if args else np.array([])
    if angles.size:
        keep = np.concatenate([[True], np.diff(angles) > tol])
        angles = angles[keep]
    return angles


def _pair_weights(alpha, beta):
    l, m = pair_index(len(alpha))
    return beta[l] * alpha[m] + beta[m] * alpha[l]


def operator_correlator(state, alpha, beta, floor: float = 0.0) -> float:
    """``<A^dag B^dag B A> / (<A^dag A><B^dag B>)`` for ``A = sum alpha_j s_ge^j`` etc."""
    m = moments_of(state, order=2)
    alpha = np.asarray(alpha, dtype=complex)
    beta = np.asarray(beta, dtype=complex)
    na = float(np.real(alpha.conj() @ m.c1 @ alpha))
    nb = float(np.real(beta.conj() @ m.c1 @ beta))
    if na * nb <= floor:
        raise UndefinedCorrelationError("an operator has no weight on this state")
    w = _pair_weights(alpha, beta)
    num = float(np.real(w.conj() @ m.c2 @ w))
    return num / (na * nb)


def g2_directional(state, array_or_z, theta1: float, theta2: float) -> float:
    """Equal-time second-order correlation of point detectors at ``theta1``, ``theta2``."""
    m = moments_of(state, order=2)
    z = _z(array_or_z)
    a1 = np.exp(-1j * K0 * z * np.cos(theta1))
    a2 = np.exp(-1j * K0 * z * np.cos(theta2))
    p1 = _angular(theta1) * np.real(a1.conj() @ m.c1 @ a1)
    p2 = _angular(theta2) * np.real(a2.conj() @ m.c1 @ a2)
    if p1 * p2 < 1e-30:
        raise UndefinedCorrelationError(
            f"detection probability vanishes at theta=({theta1:.6g}, {theta2:.6g})"
        )
    return operator_correlator(m, a1, a2)


def jump_correlator_numeric(state, jump_basis: JumpBasis, nu: int, mu: int) -> float:
    """Equal-time cross-correlation of the collective operators ``nu`` and ``mu``."""
    V = jump_basis.coefficients
    try:
        return operator_correlator(state, V[:, nu], V[:, mu], floor=1e-300)
    except UndefinedCorrelationError:
        raise UndefinedCorrelationError(f"operator {nu} or {mu} annihilates the state") from None


def _inverted_closed_form(a, b) -> float:
    """Correlator of two linear operators on the fully excited state."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    sa = np.sum(np.abs(a) ** 2)
    sb = np.sum(np.abs(b) ** 2)
    cross = np.abs(np.sum(a.conj() * b)) ** 2
    four = np.sum(np.abs(a) ** 2 * np.abs(b) ** 2)
    return float(1.0 + (cross - 2.0 * four) / (sa * sb))


def g2_inverted_closed_form(
    n: int,
    nu: int,
    mu: int,
    ansatz: str = "bloch",
    coefficients: Optional[np.ndarray] = None,
    d: Optional[float] = None,
    k_nu: Optional[float] = None,
    k_mu: Optional[float] = None,
) -> float:
    """Closed-form jump correlator on the fully inverted state.

    ``bloch``: plane-wave operators ``exp(i k z_j)/sqrt(N)`` with
    ``k = 2 pi nu / (N d)`` unless ``k_nu``/``k_mu`` (k0 units) are given;
    gives ``1 - 2/N + |sum_j exp(i (k_nu - k_mu) z_j)|^2 / N^2``.

    ``finite-chain``: real standing-wave operators, namely the columns
    ``nu``, ``mu`` of ``coefficients`` or, when only ``d`` is given, of the
    diagonalized chain; gives
    ``1 + (sum a b)^2 / (sum a^2 sum b^2) - 2 sum a^2 b^2 / (sum a^2 sum b^2)``.
    """
    if n < 1:
        raise InvalidArgumentError("n must be positive")
    if ansatz == "bloch":
        dd = 1.0 if d is None else float(d)
        z = np.arange(n) * dd
        kn = 2 * np.pi * nu / (n * dd) if k_nu is None else K0 * k_nu
        km = 2 * np.pi * mu / (n * dd) if k_mu is None else K0 * k_mu
        s = np.sum(np.exp(1j * (kn - km) * z))
        return float(1.0 - 2.0 / n + np.abs(s) ** 2 / n**2)
    if ansatz == "finite-chain":
        if coefficients is None:
            if d is None:
                raise InvalidArgumentError("finite-chain ansatz needs coefficients or d")
            coefficients = diagonalize(build_matrices(build_chain(n, d))).coefficients
        V = np.asarray(coefficients)
        return _inverted_closed_form(V[:, nu], V[:, mu])
    raise InvalidArgumentError(f"unknown ansatz {ansatz!r}")


@dataclass(frozen=True)
class GMReport:
    n: int
    m: int
    formula: float
    brute_force: Optional[float]
    falling_factorial: float

    @property
    def discrepancy(self) -> Optional[float]:
        return None if self.brute_force is None else self.formula - self.brute_force

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "formula": self.formula,
            "brute_force": self.brute_force,
            "falling_factorial": self.falling_factorial,
            "discrepancy": self.discrepancy,
        }


def _apply_uniform_lowering(basis: SpinBasis, psi: np.ndarray, phases: np.ndarray) -> np.ndarray:
    """``sum_j phases_j s_ge^j psi`` on the full basis."""
    out = np.zeros_like(psi)
    cfg = basis.configs
    for j in range(basis.n_atoms):
        bit = np.int64(1) << j
        src = np.nonzero(cfg & bit)[0]
        out[basis.index_of[cfg[src] ^ bit]] += phases[j] * psi[src]
    return out


def gM_inverted(n: int, m_actions: int, brute_force_cap: int = 12, k: float = 0.0) -> GMReport:
    """M-fold self-correlation of a plane-wave operator on the fully excited state.

    Reports the combinatorial counting formula, an explicit operator-algebra
    evaluation (``n <= brute_force_cap``) and the exact falling-factorial
    value ``M! prod_{s<M} (1 - s/N)``.
    """
    if m_actions < 2:
        raise InvalidArgumentError("m_actions must be >= 2")
    if n < 1:
        raise InvalidArgumentError("n must be positive")
    M = int(m_actions)
    formula = factorial(M) - sum(comb(M, S) * n * (n - 1) ** (M - S) for S in range(2, M + 1)) / n**M
    falling = float(factorial(M) * np.prod([1.0 - s / n for s in range(M)]))
    brute = None
    if n <= brute_force_cap:
        basis = full_basis(n)
        psi = fully_inverted(basis).amplitudes
        phases = np.exp(1j * K0 * k * np.arange(n)) / np.sqrt(n)
        single = _apply_uniform_lowering(basis, psi, phases)
        denom = float(np.vdot(single, single).real) ** M
        phi = psi
        for _ in range(M):
            phi = _apply_uniform_lowering(basis, phi, phases)
        brute = float(np.vdot(phi, phi).real) / denom
    return GMReport(n, M, float(formula), brute, falling)


def initial_rate_slope(gamma_source) -> float:
    """``dR/dt`` at t=0 for the fully inverted state: ``-N + sum_{i != j} Gamma_ij^2``."""
    G = _gamma_of(gamma_source)
    off = G - np.diag(np.diag(G))
    return float(-np.trace(G) + np.sum(off * off))


@dataclass
class BurstReport:
    burst: bool
    r0: float
    r_star: float
    t_star: float
    slope: Optional[float]
    slope_burst: Optional[bool]
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "burst": self.burst,
            "r0": self.r0,
            "r_star": self.r_star,
            "t_star": self.t_star,
            "slope": self.slope,
            "slope_burst": self.slope_burst,
            **self.diagnostics,
        }


def detect_burst(times, rates, n_atoms: int, slope: Optional[float] = None,
                 t_star_scaled: float = BURST_TIME) -> BurstReport:
    """Burst test: does ``R`` at ``N t = t_star_scaled`` exceed ``R(0)``?

    ``rates`` may be normalized (R/N) or not; only the comparison matters.
    The t=0 slope is reported as a secondary diagnostic, either as given or
    from the first two samples.
    """
    t = np.asarray(times, dtype=float)
    r = np.asarray(rates, dtype=float)
    if t.ndim != 1 or t.shape != r.shape or t.size < 2:
        raise InvalidArgumentError("need matching 1-d time and rate series with >= 2 points")
    t_star = t_star_scaled / n_atoms
    if abs(t[0]) > 1e-15 or t[-1] < t_star * (1 - 1e-12):
        raise InvalidArgumentError(
            f"series must cover [0, {t_star:.3g}]; got [{t[0]:.3g}, {t[-1]:.3g}]"
        )
    r_star = float(np.interp(t_star, t, r))
    fd_slope = float((r[1] - r[0]) / (t[1] - t[0]))
    s = fd_slope if slope is None else float(slope)
    return BurstReport(
        bool(r_star > r[0]),
        float(r[0]),
        r_star,
        t_star,
        s,
        bool(s > 0),
        {"finite_difference_slope": fd_slope, "slope_source": "given" if slope is not None else "samples"},
    )


@dataclass(frozen=True)
class FitResult:
    gamma: float
    window: tuple
    rms_residual: float
    n_points: int = 0

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "window": list(self.window),
                "rms_residual": self.rms_residual, "n_points": self.n_points}


def _fit_window(t, y, window) -> FitResult:
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise InvalidArgumentError(f"window {window} must satisfy t_lo < t_hi")
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    if sel.sum() < 2:
        raise FitDomainError(f"fewer than two samples in window {window}")
    ys = y[sel]
    if np.any(~(ys > 0)):
        raise FitDomainError(f"non-positive values in window {window}")
    ts = t[sel]
    coef = np.polyfit(ts, np.log(ys), 1)
    resid = np.log(ys) - np.polyval(coef, ts)
    return FitResult(float(-coef[0]), (lo, hi), float(np.sqrt(np.mean(resid**2))), int(sel.sum()))


def fit_decay_windows(times, values, window_early=(0.0, 4.0), window_late=(10.0, 20.0)):
    """Straight-line fits of ``log(values)`` on two windows; returns (early, late, ratio)."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    early = _fit_window(t, y, window_early)
    late = _fit_window(t, y, window_late)
    ratio = early.gamma / late.gamma if late.gamma != 0 else np.inf
    return early, late, float(ratio)


@dataclass
class PatternResult:
    thetas: np.ndarray
    intensity: np.ndarray
    predicted: np.ndarray
    peaks: np.ndarray
    k_label: Optional[float] = None


def jump_emission_pattern(
    nu: int,
    array: AtomArray,
    base_state,
    jump_basis: Optional[JumpBasis] = None,
    thetas=None,
    delta_theta: float = DEFAULT_DELTA_THETA,
    order: int = QUAD_ORDER,
) -> PatternResult:
    """Angular signature of the collective operator ``nu`` acting on ``base_state``.

    The profile is ``|<D^dag(theta) O_nu>|^2`` integrated over the detector
    bin: the interference between photon detection along ``theta`` and a
    jump through ``O_nu``. On the fully inverted state this is the classical
    array factor of the operator's coefficients. Peaks are the local maxima
    of the sampled profile; the predicted lobes use the operator's k label.
    """
    if jump_basis is None:
        jump_basis = diagonalize(build_matrices(array))
    m = moments_of(base_state)
    v = jump_basis.coefficients[:, nu]
    weight = float(np.real(v @ m.c1 @ v))
    if weight <= 1e-14 * max(1.0, m.trace):
        raise UndefinedPatternError(f"operator {nu} annihilates the base state")
    th = default_theta_grid() if thetas is None else np.asarray(thetas, dtype=float)
    z = array.z
    x, w = np.polynomial.legendre.leggauss(order)
    prof = np.empty(len(th))
    dOmega = delta_theta**2
    for i, t in enumerate(th):
        nodes, wts = _bin_nodes(t, delta_theta, order)
        A = np.exp(-1j * K0 * np.outer(np.cos(nodes), z))
        amp = A.conj() @ (m.c1 @ v)
        prof[i] = (dOmega / delta_theta) * np.sum(wts * _angular(nodes) * np.abs(amp) ** 2) / weight
    k_label = None if jump_basis.k_labels is None else float(jump_basis.k_labels[nu])
    d = float(np.min(np.diff(z))) if array.is_chain and array.n_atoms > 1 else None
    predicted = theta_max_prediction(k_label, d) if (k_label is not None and d) else np.array([])
    idx, _ = find_peaks(np.concatenate([[-np.inf], prof, [-np.inf]]))
    peaks = th[idx - 1]
    return PatternResult(th, prof, predicted, peaks, k_label)
