"""Linearised fluctuations around the symmetric steady state.

Fluctuations ``x = (da1, da1+, da2, da2+)`` obey the Ornstein-Uhlenbeck
equation ``dx/dt = -A x + B eta`` and only the diffusion ``D = B B^T`` ever
enters the stationary spectrum

    S(omega) = (A + i omega)^-1 D (A^T - i omega)^-1.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import CouplerParams, ParameterError, symmetric, validate
from .steady import SteadyState

SPECTRAL_RESIDUAL_TOL = 1e-10


class LinearizationError(RuntimeError):
    """Spectrum requested where the linearised process has no stationary state."""


@dataclass(frozen=True)
class FluctuationModel:
    A: np.ndarray
    D: np.ndarray
    alpha: complex
    eigenvalues: np.ndarray
    valid: bool
    marginal: bool = False

    @property
    def stability_margin(self) -> float:
        return float(np.min(self.eigenvalues.real))


@dataclass(frozen=True)
class SpectralMatrix:
    omega: float
    S: np.ndarray
    residual: float

    def to_json(self) -> str:
        entries = [[float(z.real), float(z.imag)] for z in self.S.ravel()]
        return json.dumps({"omega": self.omega, "S": entries, "residual": self.residual})

    @classmethod
    def from_json(cls, text: str) -> "SpectralMatrix":
        d = json.loads(text)
        S = np.array([complex(re, im) for re, im in d["S"]]).reshape(4, 4)
        return cls(d["omega"], S, d["residual"])


def drift_matrix(params: CouplerParams, alpha: complex) -> np.ndarray:
    g, d, J, chi = params.gamma, params.delta, params.J, params.chi
    I = abs(alpha) ** 2
    k = d + 4 * chi * I
    s = 2j * chi * alpha**2
    sc = -2j * chi * np.conj(alpha) ** 2
    return np.array(
        [
            [g + 1j * k, s, -1j * J, 0],
            [sc, g - 1j * k, 0, 1j * J],
            [-1j * J, 0, g + 1j * k, s],
            [0, 1j * J, sc, g - 1j * k],
        ],
        dtype=complex,
    )


def diffusion_matrix(params: CouplerParams, alpha: complex) -> np.ndarray:
    chi = params.chi
    u = -2j * chi * alpha**2
    return np.diag([u, np.conj(u), u, np.conj(u)]).astype(complex)


def _classify(eigs, gamma):
    margin = float(np.min(eigs.real))
    marginal = abs(margin) <= 1e-12 * max(gamma, 1.0)
    return margin > 0 and not marginal, marginal


def from_alpha(params: CouplerParams, alpha: complex) -> FluctuationModel:
    A = drift_matrix(params, alpha)
    eigs = np.linalg.eigvals(A)
    valid, marginal = _classify(eigs, params.gamma)
    return FluctuationModel(A, diffusion_matrix(params, alpha), complex(alpha), eigs, valid, marginal)


def build(params: CouplerParams, ss: SteadyState) -> FluctuationModel:
    """Drift and diffusion about a symmetric steady state."""
    validate(params)
    if not symmetric(params):
        raise ParameterError(["linearisation is only defined for symmetric parameters"])
    if ss.alpha1 != ss.alpha2:
        raise ParameterError(["linearisation needs the symmetric steady state (alpha1 == alpha2)"])
    return from_alpha(params, ss.alpha1)


def eigenvalues_analytic(params: CouplerParams, I: float) -> np.ndarray:
    """Closed-form drift eigenvalues at intensity ``I`` (principal square roots).

    ``A`` splits into symmetric and antisymmetric 2x2 blocks, giving
    ``gamma +- sqrt(4 chi^2 I^2 - (delta + 4 chi I +- J)^2)``, i.e.::

        r12^2 = -4 chi I [3 chi I + 2 (delta + J)] - (J + delta)^2
        r34^2 =  4 chi I [2 (J - delta) - 3 chi I] - (J - delta)^2
    """
    if not symmetric(params):
        raise ParameterError(["analytic eigenvalues need symmetric parameters"])
    g, d, J, chi = params.gamma, params.delta, params.J, params.chi
    r12 = np.sqrt(complex(-4 * chi * I * (3 * chi * I + 2 * (d + J)) - (J + d) ** 2))
    r34 = np.sqrt(complex(4 * chi * I * (2 * (J - d) - 3 * chi * I) - (J - d) ** 2))
    return np.array([g + r12, g - r12, g + r34, g - r34])


def eigenvalues_quoted(params: CouplerParams, I: float) -> np.ndarray:
    """The closed form as usually quoted for this model, kept for comparison.

    Its second pair agrees with ``eigenvalues_analytic``.  The first pair uses
    ``4 chi I [3 chi I + 2 (delta - J)] - (J + delta)^2`` under the root, which
    is not an eigenvalue of the drift matrix unless ``chi I (3 chi I + 2 delta) = 0``.
    """
    if not symmetric(params):
        raise ParameterError(["analytic eigenvalues need symmetric parameters"])
    g, d, J, chi = params.gamma, params.delta, params.J, params.chi
    r12 = np.sqrt(complex(4 * chi * I * (3 * chi * I + 2 * (d - J)) - (J + d) ** 2))
    r34 = np.sqrt(complex(4 * chi * I * (2 * (J - d) - 3 * chi * I) - (J - d) ** 2))
    return np.array([g + r12, g - r12, g + r34, g - r34])


def linearization_valid(params: CouplerParams, I: float) -> bool:
    """All drift eigenvalues strictly in the right half plane."""
    eigs = eigenvalues_analytic(params, I)
    return _classify(eigs, params.gamma)[0]


def quoted_validity_bound(params: CouplerParams) -> float:
    """Intensity where the quoted first pair loses stability when ``delta == J``.

    That is ``sqrt((gamma^2 + 4 J^2) / (12 chi^2))``.  The true drift matrix
    has ``Re(lambda) = gamma`` for every ``I`` when ``delta == J``, so this is
    a property of the quoted formula only.
    """
    if params.delta != params.J or params.chi == 0:
        return np.inf
    return float(np.sqrt((params.gamma**2 + 4 * params.J**2) / (12 * params.chi**2)))


def _check_valid(model):
    if not model.valid:
        raise LinearizationError(
            f"linearisation invalid: min Re(eigenvalue) = {model.stability_margin:.3e}"
        )


def spectral_matrices(model: FluctuationModel, omegas) -> np.ndarray:
    """Stacked ``S(omega)`` for every omega, shape (n, 4, 4).

    Two batched linear solves per frequency; no explicit inverse.
    """
    _check_valid(model)
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    eye = np.eye(4)
    L = model.A[None, :, :] + 1j * w[:, None, None] * eye
    R = model.A.T[None, :, :] - 1j * w[:, None, None] * eye
    X = np.linalg.solve(L, np.broadcast_to(model.D, L.shape))
    # S R = X  <=>  R^T S^T = X^T
    St = np.linalg.solve(np.swapaxes(R, 1, 2), np.swapaxes(X, 1, 2))
    return np.swapaxes(St, 1, 2)


def spectral_residual(model: FluctuationModel, omega: float, S: np.ndarray) -> float:
    """Relative residual of ``(A + i w) S (A^T - i w) = D``."""
    eye = np.eye(4)
    lhs = (model.A + 1j * omega * eye) @ S @ (model.A.T - 1j * omega * eye)
    nd = np.linalg.norm(model.D)
    if nd == 0:
        return float(np.linalg.norm(lhs))
    return float(np.linalg.norm(lhs - model.D) / nd)


def spectral_matrix(model: FluctuationModel, omega: float) -> SpectralMatrix:
    S = spectral_matrices(model, [omega])[0]
    res = spectral_residual(model, omega, S)
    if res > SPECTRAL_RESIDUAL_TOL:
        raise LinearizationError(f"spectral solve inaccurate at omega={omega}: residual {res:.2e}")
    return SpectralMatrix(float(omega), S, res)


def stationary_covariance(model: FluctuationModel) -> np.ndarray:
    """Equal-time covariance: solves ``A Sigma + Sigma A^T = D``."""
    _check_valid(model)
    n = model.A.shape[0]
    K = np.kron(np.eye(n), model.A) + np.kron(model.A, np.eye(n))
    vec = np.linalg.solve(K, model.D.reshape(-1, order="F"))
    return vec.reshape(n, n, order="F")
