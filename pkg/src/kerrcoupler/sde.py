"""Positive-P stochastic integration of the full nonlinear coupler equations.

The state per trajectory is ``(a1, a1+, a2, a2+)``; ``a_j+`` is an independent
variable, not the conjugate of ``a_j``.  In Ito form::

    da_j  = [eps_j  - (g_j + i d_j) a_j  - 2i chi_j a_j+ a_j^2  + iJ a_k ] dt + sqrt(-2i chi_j a_j^2)  dW
    da_j+ = [eps_j* - (g_j - i d_j) a_j+ + 2i chi_j a_j+^2 a_j  - iJ a_k+] dt + sqrt(+2i chi_j a_j+^2) dW'

Two schemes are available.  ``euler`` is explicit Euler-Maruyama on the Ito
equations.  ``semi_implicit`` is the iterated midpoint method, which converges
to the Stratonovich solution; it therefore integrates the Stratonovich drift,
i.e. the Ito drift plus ``+i chi_j a_j`` (and ``-i chi_j a_j+``).

Noise comes from :mod:`kerrcoupler.rng`, keyed by (seed, trajectory, step).
With ``noise_substeps = k`` each step uses the summed increments of ``k``
steps of size ``dt / k``, so a run at ``dt`` and a run at ``dt / k`` follow
the same Brownian path.

Trajectories run in fixed-size chunks; the chunk size, not the thread count,
fixes every floating-point reduction, so output is bit-identical for any
number of worker threads.
"""
from __future__ import annotations

import cmath
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from . import criteria, fluct, steady
from .model import CouplerParams, symmetric, validate
from .rng import normals4

THREADS_ENV = "KERRCOUPLER_THREADS"
SCHEMES = ("semi_implicit", "euler")
STAT_FIELDS = 6  # a1, a1+, a2, a2+, a1+ a1, a2+ a2


class SdeError(RuntimeError):
    pass


class InsufficientRecordError(SdeError):
    pass


@dataclass(frozen=True)
class SdeConfig:
    dt: float = 1e-3
    t_end: float = 60.0
    n_traj: int = 10_000
    seed: int = 0
    burn_in: float = 20.0
    scheme: str = "semi_implicit"
    chunk_size: int = 250
    sample_every: int = 10
    midpoint_iterations: int = 3
    noise_substeps: int = 1
    divergence_bound: Optional[float] = None
    initial: tuple = (0j, 0j)

    def __post_init__(self):
        problems = []
        if not self.dt > 0:
            problems.append("dt must be positive")
        if not self.burn_in >= 0:
            problems.append("burn_in must be non-negative")
        if not self.t_end > self.burn_in:
            problems.append("t_end must exceed burn_in")
        if self.n_traj < 2:
            problems.append("n_traj must be at least 2")
        if self.scheme not in SCHEMES:
            problems.append(f"scheme must be one of {SCHEMES}")
        if self.chunk_size < 1 or self.sample_every < 1 or self.noise_substeps < 1:
            problems.append("chunk_size, sample_every and noise_substeps must be positive")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must fit in 64 bits")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def burn_steps(self) -> int:
        return int(round(self.burn_in / self.dt))

    def bound(self, params: CouplerParams) -> float:
        if self.divergence_bound is not None:
            return float(self.divergence_bound)
        drive = max(abs(params.eps1), abs(params.eps2), 1.0)
        return 1e6 * drive / min(params.gamma1, params.gamma2)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["initial"] = [[complex(z).real, complex(z).imag] for z in self.initial]
        return d


@dataclass(frozen=True)
class EnsembleStats:
    mean_alpha1: complex
    mean_alpha2: complex
    mean_alpha1_plus: complex
    mean_alpha2_plus: complex
    mean_intensity1: float
    mean_intensity2: float
    se_alpha1: complex  # re/im standard errors packed as a complex number
    se_alpha2: complex
    se_alpha1_plus: complex
    se_alpha2_plus: complex
    se_intensity1: float
    se_intensity2: float
    n_effective: int
    n_diverged: int
    diverged: tuple = field(default=())  # (trajectory, time) pairs
    partitions: int = 1

    def as_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, complex):
                out[k] = [v.real, v.imag]
            elif k == "diverged":
                out[k] = [[int(i), float(t)] for i, t in v]
            else:
                out[k] = v
        return out


# -- numba kernel ---------------------------------------------------------------

@njit(cache=True, nogil=True)
def _drift(p, a1, b1, a2, b2, strat):
    e1 = complex(p[0], p[1])
    e2 = complex(p[2], p[3])
    g1, g2, d1, d2, c1, c2, J = p[4], p[5], p[6], p[7], p[8], p[9], p[10]
    f1 = e1 - complex(g1, d1) * a1 - 2j * c1 * b1 * a1 * a1 + 1j * J * a2
    f1p = e1.conjugate() - complex(g1, -d1) * b1 + 2j * c1 * b1 * b1 * a1 - 1j * J * b2
    f2 = e2 - complex(g2, d2) * a2 - 2j * c2 * b2 * a2 * a2 + 1j * J * a1
    f2p = e2.conjugate() - complex(g2, -d2) * b2 + 2j * c2 * b2 * b2 * a2 - 1j * J * b1
    if strat:
        f1 += 1j * c1 * a1
        f1p -= 1j * c1 * b1
        f2 += 1j * c2 * a2
        f2p -= 1j * c2 * b2
    return f1, f1p, f2, f2p


@njit(cache=True, nogil=True)
def _principal(v):
    # sqrt(c a^2) = +-sqrt(c) a; the principal root has Re >= 0 (Im >= 0 on the cut)
    if v.real < 0.0 or (v.real == 0.0 and v.imag < 0.0):
        return -v
    return v


@njit(cache=True, nogil=True)
def _run_chunk(p, x0, seed, traj0, n_steps, burn_steps, dt, semi_implicit, n_iter,
               bound, sample_every, substeps, sums, records, div_step):
    n = sums.shape[0]
    sq = math.sqrt(dt / substeps)
    c1 = p[8]
    c2 = p[9]
    # noise amplitude sqrt(-+2i chi a^2) == principal(sqrt(-+2i chi) a)
    r1m = cmath.sqrt(-2j * c1)
    r1p = cmath.sqrt(2j * c1)
    r2m = cmath.sqrt(-2j * c2)
    r2p = cmath.sqrt(2j * c2)
    record = records.shape[2] > 0
    for t in range(n):
        traj = traj0 + np.uint64(t)
        a1, b1, a2, b2 = x0[0], x0[1], x0[2], x0[3]
        s0 = 0j
        s1 = 0j
        s2 = 0j
        s3 = 0j
        s4 = 0j
        s5 = 0j
        div_step[t] = -1
        k = 0
        for step in range(n_steps):
            if substeps == 1:
                z0, z1, z2, z3 = normals4(seed, traj, np.uint64(step), np.uint64(0))
            else:
                # sum of the increments a run with dt / substeps would draw
                z0 = z1 = z2 = z3 = 0.0
                for j in range(substeps):
                    y0, y1, y2, y3 = normals4(seed, traj, np.uint64(step * substeps + j), np.uint64(0))
                    z0 += y0
                    z1 += y1
                    z2 += y2
                    z3 += y3
            w0 = z0 * sq
            w1 = z1 * sq
            w2 = z2 * sq
            w3 = z3 * sq
            if semi_implicit:
                m1, n1, m2, n2 = a1, b1, a2, b2
                for _ in range(n_iter):
                    f1, f1p, f2, f2p = _drift(p, m1, n1, m2, n2, True)
                    m1 = a1 + 0.5 * (f1 * dt + _principal(r1m * m1) * w0)
                    n1 = b1 + 0.5 * (f1p * dt + _principal(r1p * n1) * w1)
                    m2 = a2 + 0.5 * (f2 * dt + _principal(r2m * m2) * w2)
                    n2 = b2 + 0.5 * (f2p * dt + _principal(r2p * n2) * w3)
                a1 = 2.0 * m1 - a1
                b1 = 2.0 * n1 - b1
                a2 = 2.0 * m2 - a2
                b2 = 2.0 * n2 - b2
            else:
                f1, f1p, f2, f2p = _drift(p, a1, b1, a2, b2, False)
                na1 = a1 + f1 * dt + _principal(r1m * a1) * w0
                nb1 = b1 + f1p * dt + _principal(r1p * b1) * w1
                na2 = a2 + f2 * dt + _principal(r2m * a2) * w2
                nb2 = b2 + f2p * dt + _principal(r2p * b2) * w3
                a1, b1, a2, b2 = na1, nb1, na2, nb2
            if not (abs(a1) <= bound and abs(b1) <= bound and abs(a2) <= bound and abs(b2) <= bound):
                div_step[t] = step
                break
            if step >= burn_steps:
                s0 += a1
                s1 += b1
                s2 += a2
                s3 += b2
                s4 += b1 * a1
                s5 += b2 * a2
                if record and (step - burn_steps) % sample_every == 0:
                    records[t, 0, k] = a1
                    records[t, 1, k] = b1
                    records[t, 2, k] = a2
                    records[t, 3, k] = b2
                    k += 1
        m = n_steps - burn_steps
        sums[t, 0] = s0 / m
        sums[t, 1] = s1 / m
        sums[t, 2] = s2 / m
        sums[t, 3] = s3 / m
        sums[t, 4] = s4 / m
        sums[t, 5] = s5 / m


def _param_vector(params: CouplerParams) -> np.ndarray:
    e1, e2 = complex(params.eps1), complex(params.eps2)
    return np.array([e1.real, e1.imag, e2.real, e2.imag, params.gamma1, params.gamma2,
                     params.delta1, params.delta2, params.chi1, params.chi2, params.J], dtype=float)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _chunks(config: SdeConfig):
    return [(s, min(config.chunk_size, config.n_traj - s)) for s in range(0, config.n_traj, config.chunk_size)]


def n_samples(config: SdeConfig) -> int:
    m = config.n_steps - config.burn_steps
    return (m + config.sample_every - 1) // config.sample_every


def _run(params, config, record, on_chunk=None, threads=None):
    """Run every chunk; ``on_chunk(index, sums, records, div)`` reduces recordings."""
    validate(params)
    p = _param_vector(params)
    a1, a2 = (complex(z) for z in config.initial)
    x0 = np.array([a1, a1.conjugate(), a2, a2.conjugate()])
    ns = n_samples(config) if record else 0
    chunks = _chunks(config)
    sums = np.zeros((config.n_traj, STAT_FIELDS), dtype=complex)
    div = np.full(config.n_traj, -1, dtype=np.int64)
    results = [None] * len(chunks)

    def work(i):
        start, n = chunks[i]
        rec = np.zeros((n, 4, ns), dtype=complex)
        _run_chunk(p, x0, np.uint64(config.seed), np.uint64(start), config.n_steps,
                   config.burn_steps, config.dt, config.scheme == "semi_implicit",
                   config.midpoint_iterations, config.bound(params), config.sample_every,
                   config.noise_substeps,
                   sums[start:start + n], rec, div[start:start + n])
        results[i] = on_chunk(i, sums[start:start + n], rec, div[start:start + n]) if on_chunk else None

    nthreads = threads or thread_count()
    if nthreads == 1:
        for i in range(len(chunks)):
            work(i)
    else:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            list(pool.map(work, range(len(chunks))))
    return sums, div, results, nthreads


def _fsum_mean(x):
    return math.fsum(x) / len(x)


def _mean_se(z):
    """Mean and standard error from trajectory-to-trajectory scatter (real array)."""
    n = len(z)
    m = _fsum_mean(z)
    var = math.fsum((z - m) ** 2) / (n - 1) if n > 1 else 0.0
    return m, math.sqrt(var / n)


def _complex_mean_se(z):
    mr, sr = _mean_se(z.real)
    mi, si = _mean_se(z.imag)
    return complex(mr, mi), complex(sr, si)


def _stats(sums, div, config, partitions):
    ok = div < 0
    good = sums[ok]
    if good.shape[0] < 2:
        raise SdeError("fewer than two trajectories survived")
    m = [_complex_mean_se(good[:, j]) for j in range(STAT_FIELDS)]
    i1 = _mean_se(good[:, 4].real)
    i2 = _mean_se(good[:, 5].real)
    diverged = tuple((int(i), float(div[i] * config.dt)) for i in np.flatnonzero(~ok))
    return EnsembleStats(
        mean_alpha1=m[0][0], mean_alpha2=m[2][0],
        mean_alpha1_plus=m[1][0], mean_alpha2_plus=m[3][0],
        mean_intensity1=i1[0], mean_intensity2=i2[0],
        se_alpha1=m[0][1], se_alpha2=m[2][1],
        se_alpha1_plus=m[1][1], se_alpha2_plus=m[3][1],
        se_intensity1=i1[1], se_intensity2=i2[1],
        n_effective=int(ok.sum()), n_diverged=int((~ok).sum()),
        diverged=diverged, partitions=partitions,
    )


def integrate(params: CouplerParams, config: SdeConfig, threads: Optional[int] = None) -> EnsembleStats:
    """Ensemble means of amplitudes and normally ordered intensities.

    Each trajectory is time-averaged after ``burn_in``; means and standard
    errors are then taken over trajectories.  Diverged trajectories are
    excluded and listed in ``EnsembleStats.diverged``.
    """
    sums, div, _, nthreads = _run(params, config, record=False, threads=threads)
    return _stats(sums, div, config, nthreads)


# -- spectra ------------------------------------------------------------------

@dataclass(frozen=True)
class SdeSpectrum:
    """Ensemble-averaged intracavity spectra estimated from stationary records.

    ``S`` has shape (n_omega, 4, 4) in the basis (a1, a1+, a2, a2+) and is the
    stochastic counterpart of the linearised spectral matrix.  ``chunk_S`` and
    ``chunk_counts`` keep per-chunk sums for jackknife errors.
    """

    omega: np.ndarray
    S: np.ndarray
    chunk_S: np.ndarray
    chunk_counts: np.ndarray
    params: CouplerParams
    stats: EnsembleStats

    def _jackknife(self, fn):
        total = self.chunk_S.sum(axis=0)
        n = self.chunk_counts.sum()
        value = fn(total / n)
        keep = self.chunk_counts > 0
        g = int(keep.sum())
        if g < 2:
            return value, np.full_like(np.asarray(value, dtype=float), np.nan)
        reps = np.array([fn((total - cs) / (n - c))
                         for cs, c in zip(self.chunk_S[keep], self.chunk_counts[keep])])
        se = np.sqrt((g - 1) / g * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))
        return value, se

    def covariance(self, theta: float) -> np.ndarray:
        return criteria.covariance_from_spectra(self.S, self.params, theta)[0]

    def duan(self, theta: float, b: float = 1.0, pairing: str = "-+"):
        """Duan sum per frequency with jackknife standard errors."""
        return self._jackknife(
            lambda S: criteria.duan_sum(criteria.covariance_from_spectra(S, self.params, theta)[0], b, pairing)[0]
        )

    def epr(self, theta: float):
        def fn(S):
            C = criteria.covariance_from_spectra(S, self.params, theta)[0]
            return np.stack(criteria.epr_products(C))
        return self._jackknife(fn)

    def logneg(self, theta: float):
        def fn(S):
            C = criteria.covariance_from_spectra(S, self.params, theta)[0]
            ln = criteria.log_negativity(C, strict=False)
            return np.stack([ln.xi, ln.logneg])
        return self._jackknife(fn)

    def quadrature_spectra(self, theta: float):
        """Output variances of (X1, Y1, X2, Y2) per frequency with errors."""
        return self._jackknife(
            lambda S: np.diagonal(criteria.covariance_from_spectra(S, self.params, theta)[0], axis1=1, axis2=2)
        )


def correlation_time(params: CouplerParams) -> float:
    """Slowest linear relaxation time, 1 / min Re(lambda), of the steady state."""
    if symmetric(params):
        try:
            ss = steady.symmetric_steady_state(params)
            model = fluct.build(params, ss)
            if model.valid:
                return 1.0 / model.stability_margin
        except (fluct.LinearizationError, steady.SteadyStateError):
            pass
    return 1.0 / min(params.gamma1, params.gamma2)


def stationary_spectrum(params: CouplerParams, config: SdeConfig, omega_max: Optional[float] = None,
                        threads: Optional[int] = None, keep_records: int = 0):
    """Spectral matrix estimated from Hann-windowed stationary records.

    Each trajectory contributes ``X(w) X(-w)^T * dt_s / sum(w_k^2)`` where
    ``X`` is the windowed DFT of its mean-subtracted record and ``dt_s`` the
    sampling interval.  Frequencies below a few ``2 pi / T`` carry window
    leakage from the subtracted mean.

    Returns ``(SdeSpectrum, records)``; ``records`` holds the first
    ``keep_records`` raw trajectories (for debugging dumps).
    """
    record_time = config.t_end - config.burn_in
    tc = correlation_time(params)
    if record_time < 20 * tc:
        raise InsufficientRecordError(
            f"record length {record_time:g} is shorter than 20 correlation times ({20 * tc:g})"
        )
    ns = n_samples(config)
    dts = config.dt * config.sample_every
    window = np.hanning(ns + 2)[1:-1] if ns > 2 else np.ones(ns)
    norm = dts / float(np.sum(window**2))
    omega_all = 2 * np.pi * np.fft.fftfreq(ns, d=dts)
    upper = np.pi / dts if omega_max is None else omega_max
    kk = np.flatnonzero((omega_all >= 0) & (omega_all <= upper))
    neg = (-kk) % ns
    chunks = _chunks(config)
    chunk_S = np.zeros((len(chunks), kk.size, 4, 4), dtype=complex)
    counts = np.zeros(len(chunks), dtype=np.int64)
    kept = []

    def reduce(i, sums, rec, div):
        ok = div < 0
        counts[i] = int(ok.sum())
        if keep_records and chunks[i][0] < keep_records:
            kept.append((chunks[i][0], rec[: keep_records - chunks[i][0]].copy()))
        if not counts[i]:
            return
        r = rec[ok]
        wsum = float(np.sum(window))
        r = r - (np.sum(r * window, axis=-1) / wsum)[..., None]
        F = np.fft.fft(r * window, axis=-1)
        Fp, Fm = F[:, :, kk], F[:, :, neg]
        chunk_S[i] = norm * np.einsum("tak,tbk->kab", Fp, Fm)

    sums, div, _, nthreads = _run(params, config, record=True, on_chunk=reduce, threads=threads)
    stats = _stats(sums, div, config, nthreads)
    S = chunk_S.sum(axis=0) / counts.sum()
    kept.sort(key=lambda x: x[0])
    records = np.concatenate([r for _, r in kept]) if kept else np.zeros((0, 4, ns), dtype=complex)
    spectrum = SdeSpectrum(omega_all[kk], S, chunk_S, counts, params, stats)
    return spectrum, records
