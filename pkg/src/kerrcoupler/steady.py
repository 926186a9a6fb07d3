"""Classical steady states of the coupler.

The symmetric problem reduces to a cubic in the intracavity intensity
``I = |alpha|^2``::

    4 chi^2 I^3 + 4 (delta - J) chi I^2 + [gamma^2 + (delta - J)^2] I - |eps|^2 = 0

which is solved here with a scaled companion matrix.  Asymmetric parameter sets
go through a damped Newton iteration on the four real unknowns, with long-time
integration of the classical equations as a fallback.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .model import CouplerParams, ParameterError, symmetric, validate

DISCRIMINANT_TOL = 1e-8


class SteadyStateError(RuntimeError):
    """Fixed-point search failed; ``best`` holds the lowest-residual state seen."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class SteadyState:
    alpha1: complex
    alpha2: complex
    intensity1: float
    intensity2: float
    residual: float

    @classmethod
    def from_amplitudes(cls, alpha1, alpha2, residual=0.0):
        a1, a2 = complex(alpha1), complex(alpha2)
        return cls(a1, a2, abs(a1) ** 2, abs(a2) ** 2, float(residual))


def _require_symmetric(params):
    if not symmetric(params):
        raise ParameterError(["parameters are not symmetric between the two modes"])


# -- cubic machinery --------------------------------------------------------

def cubic_coefficients(params: CouplerParams):
    """Coefficients (highest power first) of the symmetric intensity cubic."""
    g, d, J, chi = params.gamma, params.delta, params.J, params.chi
    e2 = abs(params.eps) ** 2
    return (4 * chi**2, 4 * (d - J) * chi, g**2 + (d - J) ** 2, -e2)


def cubic_residual(params: CouplerParams, I: float) -> float:
    """Residual of the cubic at ``I``, relative to the pump term ``|eps|^2``."""
    c3, c2, c1, c0 = cubic_coefficients(params)
    val = ((c3 * I + c2) * I + c1) * I + c0
    scale = max(abs(c0), abs(c1 * I), abs(c3 * I**3), abs(c2 * I**2), np.finfo(float).tiny)
    return abs(val) / scale


def _scaled_monic(coeffs):
    c3, c2, c1, c0 = coeffs
    b, c, d = c2 / c3, c1 / c3, c0 / c3
    s = max(abs(b), math.sqrt(abs(c)), abs(d) ** (1.0 / 3.0))
    if s == 0.0:
        s = 1.0
    return s, (b / s, c / s**2, d / s**3)


def _companion_roots(b, c, d):
    comp = np.array([[-b, -c, -d], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    return np.linalg.eigvals(comp)


def real_cubic_roots(coeffs):
    """Real roots of a cubic with real coefficients, ascending, with multiplicity.

    The variable is rescaled so the monic coefficients are O(1) before the
    companion-matrix eigenvalues are taken; each simple root then gets one
    Newton step.  A vanishing discriminant marks a double root, which is then
    located as the matching critical point of the cubic.
    """
    c3, c2, c1, c0 = (float(x) for x in coeffs)
    if c3 == 0.0:
        if c2 != 0.0:
            disc = c1 * c1 - 4 * c2 * c0
            if disc < 0:
                return []
            sq = math.sqrt(disc)
            q = -0.5 * (c1 + math.copysign(sq, c1))
            roots = [q / c2, c0 / q if q != 0 else 0.0]
            return sorted(roots)
        if c1 != 0.0:
            return [-c0 / c1]
        return []
    s, (b, c, d) = _scaled_monic((c3, c2, c1, c0))
    disc = 18 * b * c * d - 4 * b**3 * d + b * b * c * c - 4 * c**3 - 27 * d * d

    def p(u):
        return ((u + b) * u + c) * u + d

    def dp(u):
        return (3 * u + 2 * b) * u + c

    eig = _companion_roots(b, c, d)
    if abs(disc) <= DISCRIMINANT_TOL:
        # double (or triple) root: it is also a root of the derivative
        crit_disc = b * b - 3 * c
        if crit_disc < 0:
            crit_disc = 0.0
        crits = [(-b - math.sqrt(crit_disc)) / 3, (-b + math.sqrt(crit_disc)) / 3]
        dbl = min(crits, key=lambda u: abs(p(u)))
        single = -b - 2 * dbl
        roots = sorted([dbl, dbl, single])
    else:
        order = np.argsort(np.abs(eig.imag))
        n_real = 3 if disc > 0 else 1
        roots = []
        # the discriminant sign fixes how many roots are real; eigenvalue
        # imaginary parts only pick which ones
        for z in eig[order[:n_real]]:
            u = float(z.real)
            der = dp(u)
            if der != 0.0:
                u -= p(u) / der
            roots.append(u)
        roots.sort()
    return [r * s for r in roots]


# -- public operations -----------------------------------------------------

def symmetric_intensities(params: CouplerParams):
    """All real non-negative steady-state intensities, ascending.

    A double root at a fold is reported twice, so the result always has one
    or three entries for a driven cavity.
    """
    validate(params)
    _require_symmetric(params)
    g, d, J, chi = params.gamma, params.delta, params.J, params.chi
    e2 = abs(params.eps) ** 2
    if e2 == 0.0:
        return [0.0]
    if chi == 0.0:
        return [e2 / (g**2 + (d - J) ** 2)]
    roots = real_cubic_roots(cubic_coefficients(params))
    tol = 1e-12 * max(abs(r) for r in roots) if roots else 0.0
    return [max(r, 0.0) for r in roots if r >= -tol]


def _closed_form_verbatim(eps, gamma, chi):
    """Textbook radical form for delta == J; loses precision as chi -> 0."""
    e2 = abs(eps) ** 2
    Q = 9 * chi * e2 + math.sqrt(3 * (gamma**6 + 27 * e2**2 * chi**2))
    num = -(3 ** (2 / 3)) * gamma**2 + 3 ** (1 / 3) * Q ** (2 / 3)
    return num / (6 * chi * Q ** (1 / 3))


def closed_form_intensity(params: CouplerParams) -> float:
    """Single real intensity root for ``delta == J`` in closed form.

    The textbook expression subtracts two nearly equal terms when
    ``chi |eps|^2 << gamma^3``.  Multiplying through by the conjugate
    factor gives the equivalent cancellation-free form used here::

        I = 3^(4/3) |eps|^2 q^2 / (q^4 + q^2 c^2 + c^4),
        q^3 = 9 chi |eps|^2 + sqrt(3 (gamma^6 + 27 |eps|^4 chi^2)),  c^2 = 3^(1/3) gamma^2

    which also covers ``chi = 0``.
    """
    validate(params)
    _require_symmetric(params)
    if params.delta != params.J:
        raise ParameterError(["closed-form intensity requires delta == J"])
    g, chi = params.gamma, params.chi
    e2 = abs(params.eps) ** 2
    if e2 == 0.0:
        return 0.0
    Q = 9 * chi * e2 + math.sqrt(3 * (g**6 + 27 * e2**2 * chi**2))
    q2 = Q ** (2 / 3)
    c2 = 3 ** (1 / 3) * g**2
    return 3 ** (4 / 3) * e2 * q2 / (q2 * q2 + q2 * c2 + c2 * c2)


def steady_amplitude(params: CouplerParams, I: float) -> complex:
    """Intracavity amplitude ``eps / (gamma + i(delta - J + 2 chi I))``.

    The pump keeps its own phase, so a complex ``eps`` rotates ``alpha``.
    """
    g, d, J, chi = params.gamma, params.delta, params.J, params.chi
    return complex(params.eps) / complex(g, d - J + 2 * chi * I)


def symmetric_steady_state(params: CouplerParams, root_index: int = 0) -> SteadyState:
    """Convenience: pick one root of the symmetric cubic (lowest by default)."""
    roots = symmetric_intensities(params)
    distinct = sorted(set(roots))
    I = distinct[root_index]
    a = steady_amplitude(params, I)
    return SteadyState(a, a, abs(a) ** 2, abs(a) ** 2, float(np.max(np.abs(classical_rhs(params, a, a)))))


@dataclass(frozen=True)
class BistabilityAnalysis:
    possible: bool
    lower_turning: Optional[float]
    upper_turning: Optional[float]
    params: CouplerParams

    @property
    def fold_pumps(self):
        """Pump powers |eps|^2 at the two folds as (low, high), or None."""
        if not self.possible:
            return None
        c3, c2, c1, _ = cubic_coefficients(self.params)

        def g(I):
            return ((c3 * I + c2) * I + c1) * I

        return (g(self.upper_turning), g(self.lower_turning))

    def root_count_at(self, eps2: float) -> int:
        """Number of steady intensities (1 or 3) at pump power ``eps2``."""
        p = CouplerParams.symmetric_set(
            math.sqrt(eps2), self.params.gamma, self.params.delta, self.params.chi, self.params.J
        )
        return len(symmetric_intensities(p))


def bistability(params: CouplerParams) -> BistabilityAnalysis:
    """Whether the intensity response can fold, and the two turning intensities."""
    validate(params)
    _require_symmetric(params)
    g, d, J, chi = params.gamma, params.delta, params.J, params.chi
    if chi == 0.0:
        return BistabilityAnalysis(False, None, None, params)
    disc = (J - d) ** 2 - 3 * g**2
    if disc <= 0:
        return BistabilityAnalysis(False, None, None, params)
    sq = math.sqrt(disc)
    r = sorted([(2 * (J - d) - sq) / (6 * chi), (2 * (J - d) + sq) / (6 * chi)])
    if r[0] <= 0:
        return BistabilityAnalysis(False, None, None, params)
    return BistabilityAnalysis(True, r[0], r[1], params)


# -- general (asymmetric) solver ------------------------------------------

def classical_rhs(params: CouplerParams, a1, a2):
    """Right-hand side of the noiseless amplitude equations."""
    p = params
    f1 = p.eps1 - complex(p.gamma1, p.delta1) * a1 - 2j * p.chi1 * abs(a1) ** 2 * a1 + 1j * p.J * a2
    f2 = p.eps2 - complex(p.gamma2, p.delta2) * a2 - 2j * p.chi2 * abs(a2) ** 2 * a2 + 1j * p.J * a1
    return np.array([f1, f2])


def _rhs_real(params, x):
    f = classical_rhs(params, complex(x[0], x[1]), complex(x[2], x[3]))
    return np.array([f[0].real, f[0].imag, f[1].real, f[1].imag])


def _jac_real(params, x):
    p = params
    a = [complex(x[0], x[1]), complex(x[2], x[3])]
    gam = [p.gamma1, p.gamma2]
    dlt = [p.delta1, p.delta2]
    chi = [p.chi1, p.chi2]
    Jr = np.zeros((4, 4))
    for j in range(2):
        fz = -complex(gam[j], dlt[j]) - 4j * chi[j] * abs(a[j]) ** 2
        fzc = -2j * chi[j] * a[j] ** 2
        dx, dy = fz + fzc, 1j * (fz - fzc)
        Jr[2 * j:2 * j + 2, 2 * j] = dx.real, dx.imag
        Jr[2 * j:2 * j + 2, 2 * j + 1] = dy.real, dy.imag
        k = 1 - j
        # d f_j / d alpha_k = iJ (holomorphic)
        Jr[2 * j:2 * j + 2, 2 * k] = 0.0, p.J
        Jr[2 * j:2 * j + 2, 2 * k + 1] = -p.J, 0.0
    return Jr


def _tolerance(params, x):
    a1, a2 = abs(complex(x[0], x[1])), abs(complex(x[2], x[3]))
    scale = max(abs(params.eps1), abs(params.eps2), params.gamma1 * a1, params.gamma2 * a2)
    return 1e-10 * scale


def _newton(params, x, max_iter):
    best_x, best_r = x.copy(), float(np.max(np.abs(_rhs_real(params, x))))
    for _ in range(max_iter):
        f = _rhs_real(params, x)
        r = float(np.max(np.abs(f)))
        if r < best_r:
            best_x, best_r = x.copy(), r
        if r <= _tolerance(params, x):
            return x, r, True
        try:
            step = np.linalg.solve(_jac_real(params, x), -f)
        except np.linalg.LinAlgError:
            return best_x, best_r, False
        lam = 1.0
        for _ in range(40):
            trial = x + lam * step
            if float(np.max(np.abs(_rhs_real(params, trial)))) < r:
                break
            lam *= 0.5
        else:
            return best_x, best_r, False
        x = trial
    r = float(np.max(np.abs(_rhs_real(params, x))))
    if r < best_r:
        best_x, best_r = x, r
    return best_x, best_r, best_r <= _tolerance(params, best_x)


def integrate_classical(params: CouplerParams, a1, a2, t_end, rtol=1e-10, atol=1e-12):
    """Integrate the noiseless amplitude equations from (a1, a2) to ``t_end``."""
    sol = solve_ivp(
        lambda t, x: _rhs_real(params, x),
        (0.0, t_end),
        [complex(a1).real, complex(a1).imag, complex(a2).real, complex(a2).imag],
        method="DOP853",
        rtol=rtol,
        atol=atol,
    )
    x = sol.y[:, -1]
    return complex(x[0], x[1]), complex(x[2], x[3])


def general_steady_state(params: CouplerParams, guess=(0j, 0j), max_iter: int = 100) -> SteadyState:
    """Fixed point of the classical equations for any (possibly asymmetric) params.

    Damped Newton from ``guess``; if that stalls, integrate the classical
    equations for ``50/gamma`` and restart Newton from where they end up.
    """
    validate(params)
    x0 = np.array([complex(guess[0]).real, complex(guess[0]).imag,
                   complex(guess[1]).real, complex(guess[1]).imag])
    x, r, ok = _newton(params, x0, max_iter)
    if not ok:
        t_end = 50.0 / min(params.gamma1, params.gamma2)
        b1, b2 = integrate_classical(params, complex(x0[0], x0[1]), complex(x0[2], x0[3]), t_end)
        x2, r2, ok = _newton(params, np.array([b1.real, b1.imag, b2.real, b2.imag]), max_iter)
        if r2 < r:
            x, r = x2, r2
    state = SteadyState.from_amplitudes(complex(x[0], x[1]), complex(x[2], x[3]), r)
    if not ok:
        raise SteadyStateError(f"steady state did not converge (best residual {r:.3e})", best=state)
    return state


def sum_difference(ss: SteadyState):
    """(alpha_1 + alpha_2, alpha_1 - alpha_2)."""
    return ss.alpha1 + ss.alpha2, ss.alpha1 - ss.alpha2
