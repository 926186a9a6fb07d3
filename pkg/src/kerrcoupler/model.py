"""Parameter container for the two-mode intracavity Kerr coupler.

All rates are dimensionless, measured in units of ``gamma1``.  Canonical runs
therefore use ``gamma1 = 1`` and analysis frequencies are quoted in the same
unit.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from numbers import Number, Real

import numpy as np

PARAM_KEYS = ("eps1", "eps2", "gamma1", "gamma2", "delta1", "delta2", "chi1", "chi2", "J")


class ParameterError(ValueError):
    """Raised when a parameter set violates one or more invariants.

    ``problems`` holds one message per violated invariant.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class CouplerParams:
    """Pump amplitudes, damping, detunings, Kerr strengths and coupling.

    ``eps1``/``eps2`` are complex pump amplitudes; everything else is real.
    """

    eps1: complex
    eps2: complex
    gamma1: float
    gamma2: float
    delta1: float
    delta2: float
    chi1: float
    chi2: float
    J: float

    @classmethod
    def symmetric_set(cls, eps, gamma=1.0, delta=0.0, chi=0.0, J=0.0):
        """Both modes driven and damped identically."""
        return cls(eps, eps, gamma, gamma, delta, delta, chi, chi, J)

    def swapped(self) -> "CouplerParams":
        """Same device with the mode labels 1 and 2 exchanged."""
        return replace(
            self,
            eps1=self.eps2, eps2=self.eps1,
            gamma1=self.gamma2, gamma2=self.gamma1,
            delta1=self.delta2, delta2=self.delta1,
            chi1=self.chi2, chi2=self.chi1,
        )

    def as_dict(self) -> dict:
        d = asdict(self)
        for k in ("eps1", "eps2"):
            z = complex(d[k])
            d[k] = z.real if z.imag == 0 else [z.real, z.imag]
        return d

    # short aliases used throughout the symmetric formulas
    @property
    def eps(self) -> complex:
        return self.eps1

    @property
    def gamma(self) -> float:
        return self.gamma1

    @property
    def delta(self) -> float:
        return self.delta1

    @property
    def chi(self) -> float:
        return self.chi1


def _is_real(x) -> bool:
    if isinstance(x, (bool, np.bool_)):
        return False
    if isinstance(x, Real):
        return True
    if isinstance(x, Number):
        return complex(x).imag == 0
    return False


def validate(params: CouplerParams) -> CouplerParams:
    """Check every invariant and return ``params`` unchanged.

    All violations are collected before raising, so the error names each
    offending field.
    """
    problems = []
    for name in ("eps1", "eps2"):
        v = getattr(params, name)
        if not isinstance(v, Number) or isinstance(v, bool) or not np.isfinite(complex(v)):
            problems.append(f"{name} must be a finite complex number")
    for name in ("gamma1", "gamma2"):
        v = getattr(params, name)
        if not _is_real(v) or not math.isfinite(float(np.real(v))):
            problems.append(f"{name} must be a finite real number")
        elif float(np.real(v)) <= 0:
            problems.append(f"{name} must be positive")
    for name in ("delta1", "delta2", "chi1", "chi2", "J"):
        v = getattr(params, name)
        if not _is_real(v) or not math.isfinite(float(np.real(v))):
            problems.append(f"{name} must be a finite real number")
    if problems:
        raise ParameterError(problems)
    return params


def symmetric(params: CouplerParams) -> bool:
    """True iff the two modes share pump, damping, detuning and Kerr strength.

    Comparison is exact on purpose.
    """
    return (
        params.eps1 == params.eps2
        and params.gamma1 == params.gamma2
        and params.delta1 == params.delta2
        and params.chi1 == params.chi2
    )


def params_from_mapping(values: dict) -> CouplerParams:
    """Build params from a flat mapping keyed by ``PARAM_KEYS``."""
    missing = [k for k in PARAM_KEYS if k not in values]
    if missing:
        raise ParameterError([f"missing parameter {k}" for k in missing])
    kw = {}
    for k in PARAM_KEYS:
        v = values[k]
        if isinstance(v, (list, tuple)) and len(v) == 2:
            v = complex(v[0], v[1])
        kw[k] = complex(v) if k.startswith("eps") else v
    return CouplerParams(**kw)


@dataclass(frozen=True)
class FrequencyGrid:
    """Strictly increasing, finite analysis frequencies in units of ``gamma1``."""

    omega: tuple

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("frequency grid must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(w)):
            raise ValueError("frequency grid must contain finite values only")
        if w.size > 1 and not np.all(np.diff(w) > 0):
            raise ValueError("frequency grid must be strictly increasing")
        object.__setattr__(self, "omega", tuple(float(x) for x in w))

    @classmethod
    def linspace(cls, omega_max=30.0, points=600, omega_min=0.0):
        return cls(tuple(np.linspace(omega_min, omega_max, points)))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.omega, dtype=dtype)

    def __len__(self):
        return len(self.omega)

    @property
    def step(self) -> float:
        return float(np.max(np.diff(self.omega))) if len(self.omega) > 1 else 0.0
