"""Output quadrature covariances and continuous-variable entanglement measures.

Quadratures follow ``X^theta = a e^{-i theta} + a^dag e^{i theta}`` with
``Y^theta = X^{theta + pi/2}``, so the vacuum variance is 1 and
``V(X) V(Y) >= 1``.  Covariance matrices are ordered (X1, Y1, X2, Y2).

The extracavity spectra are built from the normally ordered intracavity
spectrum through the single-ended cavity input-output relation::

    C(omega) = 1 + 2 gamma Re[T S(omega) T^T]

All measure functions accept either a ``QuadratureCovariance`` or a bare
array of shape (..., 4, 4), so whole frequency sweeps go through at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .fluct import FluctuationModel, spectral_matrices
from .model import CouplerParams

IMAG_RESIDUE_TOL = 1e-9
PAIRINGS = ("-+", "+-")


class CovarianceError(ValueError):
    """Covariance matrix is degenerate for the requested measure."""


@dataclass(frozen=True)
class QuadratureCovariance:
    theta: float
    omega: float
    C: np.ndarray
    imag_residue: float = 0.0


class LogNegativity(NamedTuple):
    xi: float
    logneg: float
    nu_tilde: float


@dataclass(frozen=True)
class EntanglementReport:
    theta: float
    omega: float
    b: float
    duan_sum: float
    duan_bound: float
    epr_product_1: float
    epr_product_2: float
    xi: float
    logneg: float
    nu_tilde: float

    @property
    def duan_violated(self) -> bool:
        return self.duan_sum < self.duan_bound

    @property
    def epr_paradox(self) -> bool:
        return min(self.epr_product_1, self.epr_product_2) < 1.0


class AngleScan(NamedTuple):
    theta: float  # radians, in [0, pi)
    omega: float
    duan_sum: float

    @property
    def theta_deg(self) -> float:
        return math.degrees(self.theta)

    @property
    def violated(self) -> bool:
        return self.duan_sum < 4.0


def _mat(C):
    return C.C if isinstance(C, QuadratureCovariance) else np.asarray(C, dtype=float)


def quadrature_transform(theta: float) -> np.ndarray:
    """Rows map (da1, da1+, da2, da2+) onto (X1, Y1, X2, Y2) at angle ``theta``."""
    e = np.exp(-1j * theta)
    f = -1j * e  # e^{-i(theta + pi/2)}
    T = np.zeros((4, 4), dtype=complex)
    T[0, :2] = e, np.conj(e)
    T[1, :2] = f, np.conj(f)
    T[2, 2:] = e, np.conj(e)
    T[3, 2:] = f, np.conj(f)
    return T


def _gain(params: CouplerParams) -> np.ndarray:
    return np.sqrt(2 * np.array([params.gamma1, params.gamma1, params.gamma2, params.gamma2]))


def covariance_from_spectra(S: np.ndarray, params: CouplerParams, theta: float):
    """Output covariances from stacked intracavity spectra ``S`` (n, 4, 4).

    Returns ``(C, imag_residue)``; ``C`` has shape (n, 4, 4).
    """
    T = quadrature_transform(theta)
    M = np.einsum("ij,njk,lk->nil", T, S, T)
    M = 0.5 * (M + np.swapaxes(M, 1, 2))
    scale = np.max(np.abs(M), axis=(1, 2))
    scale = np.where(scale > 0, scale, 1.0)
    residue = np.max(np.abs(M.imag), axis=(1, 2)) / scale
    g = _gain(params)
    C = np.eye(4) + g[:, None] * M.real * g[None, :]
    return C, residue


def output_covariances(model: FluctuationModel, params: CouplerParams, theta: float, omegas):
    """Batched ``output_covariance`` over a frequency grid; returns (C, residue)."""
    S = spectral_matrices(model, omegas)
    C, residue = covariance_from_spectra(S, params, theta)
    worst = float(np.max(residue))
    if worst > IMAG_RESIDUE_TOL:
        raise CovarianceError(f"quadrature spectra not real: imaginary residue {worst:.2e}")
    return C, residue


def output_covariance(model: FluctuationModel, params: CouplerParams, theta: float, omega: float):
    C, residue = output_covariances(model, params, theta, [omega])
    return QuadratureCovariance(float(theta), float(omega), C[0], float(residue[0]))


def duan_sum(C, b: float = 1.0, pairing: str = "-+"):
    """``V(X_-) + V(Y_+)`` for the weighted combinations, and the separable bound.

    ``pairing="+-"`` gives ``V(X_+) + V(Y_-)`` instead; both are valid
    inseparability witnesses with the same bound ``2(b^2 + 1/b^2)``.
    """
    if b == 0:
        raise ValueError("b must be non-zero")
    if pairing not in PAIRINGS:
        raise ValueError(f"pairing must be one of {PAIRINGS}")
    M = _mat(C)
    b2 = b * b
    sx = -2.0 if pairing == "-+" else 2.0
    value = (
        b2 * M[..., 0, 0] + M[..., 2, 2] / b2 + sx * M[..., 0, 2]
        + b2 * M[..., 1, 1] + M[..., 3, 3] / b2 - sx * M[..., 1, 3]
    )
    return value, 2 * (b2 + 1 / b2)


def epr_products(C):
    """Products of inferred variances, inferring mode 1 from mode 2 and vice versa."""
    M = _mat(C)
    v = [M[..., i, i] for i in range(4)]
    if any(np.any(x <= 0) for x in v):
        raise CovarianceError("inferring variance is not positive")
    x12, y12 = M[..., 0, 2], M[..., 1, 3]
    p1 = (v[0] - x12**2 / v[2]) * (v[1] - y12**2 / v[3])
    p2 = (v[2] - x12**2 / v[0]) * (v[3] - y12**2 / v[1])
    return p1, p2


def _radicand_check(r, scale, what, strict=True):
    tol = 1e-12 * np.maximum(scale, 1.0)
    bad = r < -tol
    if np.any(bad):
        if strict:
            raise CovarianceError(f"negative radicand in {what}: {np.min(r):.3e}")
        return np.where(bad, np.nan, np.maximum(r, 0.0))
    return np.maximum(r, 0.0)


def log_negativity(C, strict: bool = True) -> LogNegativity:
    """Logarithmic negativity and its smallest partially transposed eigenvalue.

    ``xi`` uses::

        xi = sqrt((det C1 - det C12) - sqrt((det C2 - det C12)^2 - det C))

    ``nu_tilde`` is the standard two-mode expression
    ``2 nu^2 = Dt - sqrt(Dt^2 - 4 det C)`` with ``Dt = det C1 + det C2 - 2 det C12``.
    The two coincide when ``det C1 == det C2``.  A negative radicand means
    ``C`` is not a physical covariance; that raises ``CovarianceError``, or
    yields NaN entries with ``strict=False`` (for noisy estimates).
    """
    M = _mat(C)
    d1 = np.linalg.det(M[..., :2, :2])
    d2 = np.linalg.det(M[..., 2:, 2:])
    d12 = np.linalg.det(M[..., :2, 2:])
    dC = np.linalg.det(M)

    inner = _radicand_check((d2 - d12) ** 2 - dC, np.abs(dC), "xi (inner)", strict)
    outer = _radicand_check((d1 - d12) - np.sqrt(inner), np.abs(d1), "xi (outer)", strict)
    xi = np.sqrt(outer)

    dt = d1 + d2 - 2 * d12
    s_inner = _radicand_check(dt**2 - 4 * dC, np.abs(dC), "symplectic eigenvalue (inner)", strict)
    s_outer = _radicand_check(dt - np.sqrt(s_inner), np.abs(dt), "symplectic eigenvalue (outer)", strict)
    nu = np.sqrt(s_outer / 2)

    with np.errstate(divide="ignore", invalid="ignore"):
        logneg = np.where(xi < 1, -np.log2(np.where(xi > 0, xi, np.nan)), np.where(np.isnan(xi), np.nan, 0.0))
    if np.ndim(xi) == 0:
        return LogNegativity(float(xi), float(logneg), float(nu))
    return LogNegativity(xi, logneg, nu)


def report(C: QuadratureCovariance, b: float = 1.0, pairing: str = "-+") -> EntanglementReport:
    d, bound = duan_sum(C, b, pairing)
    p1, p2 = epr_products(C)
    ln = log_negativity(C)
    return EntanglementReport(
        C.theta, C.omega, b, float(d), bound, float(p1), float(p2), ln.xi, ln.logneg, ln.nu_tilde
    )


def entanglement_spectra(model, params, theta, omegas, b=1.0, pairing="-+"):
    """Every measure on a frequency grid at fixed ``theta``; returns a dict of arrays."""
    C, residue = output_covariances(model, params, theta, omegas)
    d, bound = duan_sum(C, b, pairing)
    p1, p2 = epr_products(C)
    ln = log_negativity(C)
    return {
        "omega": np.asarray(omegas, dtype=float),
        "duan_sum": d,
        "duan_bound": np.full_like(d, bound),
        "epr_product_1": p1,
        "epr_product_2": p2,
        "xi": ln.xi,
        "logneg": ln.logneg,
        "nu_tilde": ln.nu_tilde,
        "C": C,
        "imag_residue": residue,
    }


def duan_landscape(model, params, omegas, thetas, b=1.0, pairing="-+"):
    """Duan sum on a (theta, omega) grid; spectra are solved once."""
    S = spectral_matrices(model, omegas)
    out = np.empty((len(thetas), len(S)))
    for i, th in enumerate(thetas):
        C, _ = covariance_from_spectra(S, params, th)
        out[i] = duan_sum(C, b, pairing)[0]
    return out


def _golden(f, lo, hi, tol):
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def angle_scan(model, params, omega_grid, theta_grid=None, b=1.0, pairing="-+", refine=True):
    """Global minimiser of the Duan sum over quadrature angle and frequency.

    ``theta_grid`` defaults to 0..179 degrees in 1 degree steps (radians in,
    radians out).  The best grid angle is refined by golden section to 0.01
    degree against the minimum over ``omega_grid``.
    """
    omegas = np.asarray(omega_grid, dtype=float)
    if theta_grid is None:
        theta_grid = np.radians(np.arange(180.0))
    thetas = np.asarray(theta_grid, dtype=float)
    S = spectral_matrices(model, omegas)

    def per_omega(th):
        C, _ = covariance_from_spectra(S, params, th)
        return duan_sum(C, b, pairing)[0]

    land = np.array([per_omega(th) for th in thetas])
    i, k = np.unravel_index(np.argmin(land), land.shape)
    best = AngleScan(float(thetas[i]), float(omegas[k]), float(land[i, k]))
    if refine and len(thetas) > 1:
        step = float(np.min(np.abs(np.diff(thetas))))
        th, val = _golden(lambda t: float(np.min(per_omega(t))), best.theta - step,
                          best.theta + step, math.radians(0.01))
        if val < best.duan_sum:
            vals = per_omega(th)
            k = int(np.argmin(vals))
            best = AngleScan(float(th), float(omegas[k]), float(vals[k]))
    return AngleScan(best.theta % math.pi, best.omega, best.duan_sum)


def optimal_duan(model, params, omegas, b=1.0, pairing="-+"):
    """Duan sum minimised over quadrature angle separately at each frequency.

    Every covariance entry is a second harmonic in theta, so the sum is
    ``a + p cos 2theta + q sin 2theta`` and its minimum is exact:
    ``a - sqrt(p^2 + q^2)``.  Returns ``(values, thetas)``.
    """
    S = spectral_matrices(model, omegas)

    def at(th):
        return duan_sum(covariance_from_spectra(S, params, th)[0], b, pairing)[0]

    f0, f45, f90 = at(0.0), at(math.pi / 4), at(math.pi / 2)
    a = 0.5 * (f0 + f90)
    p = 0.5 * (f0 - f90)
    q = f45 - a
    values = a - np.hypot(p, q)
    thetas = (0.5 * np.arctan2(-q, -p)) % math.pi
    return values, thetas
