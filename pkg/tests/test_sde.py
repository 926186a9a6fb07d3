import math

import numpy as np
import pytest

from kerrcoupler import sde, steady
from kerrcoupler.model import CouplerParams

from conftest import canonical

SMALL = dict(dt=1e-3, t_end=30.0, burn_in=10.0, n_traj=200, seed=11, chunk_size=50)


@pytest.fixture(scope="module")
def kerr_run():
    p = canonical(1e-7)
    return p, sde.integrate(p, sde.SdeConfig(**SMALL))


def _close(a, b, se, k=3.0):
    return abs(a - b) <= k * se


def test_config_validation():
    for bad in (dict(dt=0), dict(burn_in=-1), dict(t_end=5, burn_in=5), dict(n_traj=1),
                dict(scheme="rk4"), dict(seed=-1), dict(noise_substeps=0)):
        with pytest.raises(ValueError):
            sde.SdeConfig(**bad)


def test_linear_cavity_is_deterministic():
    p = CouplerParams.symmetric_set(1000.0, 1.0, 10.0, 0.0, 4.0)
    st = sde.integrate(p, sde.SdeConfig(dt=1e-3, t_end=45.0, burn_in=35.0, n_traj=4))
    M = np.array([[1 + 10j, -4j], [-4j, 1 + 10j]])
    a1, a2 = np.linalg.solve(M, [1000.0, 1000.0])
    assert abs(st.mean_alpha1 - a1) < 1e-9 * abs(a1)
    assert abs(st.mean_alpha2 - a2) < 1e-9 * abs(a2)
    assert abs(st.mean_alpha1_plus - np.conj(a1)) < 1e-9 * abs(a1)
    assert st.se_intensity1 == 0.0 and st.se_alpha1 == 0j


def test_mean_intensity_matches_steady_state(kerr_run):
    p, st = kerr_run
    I = steady.symmetric_intensities(p)[0]
    assert st.n_effective == SMALL["n_traj"] and st.n_diverged == 0
    assert _close(st.mean_intensity1, I, st.se_intensity1)
    assert _close(st.mean_intensity2, I, st.se_intensity2)


def test_plus_mean_is_conjugate_of_mean(kerr_run):
    _, st = kerr_run
    for a, b, sa, sb in ((st.mean_alpha1, st.mean_alpha1_plus, st.se_alpha1, st.se_alpha1_plus),
                         (st.mean_alpha2, st.mean_alpha2_plus, st.se_alpha2, st.se_alpha2_plus)):
        assert _close(a.real, b.real, math.hypot(sa.real, sb.real))
        assert _close(a.imag, -b.imag, math.hypot(sa.imag, sb.imag))


def test_mode_exchange_symmetry(kerr_run):
    _, st = kerr_run
    assert _close(st.mean_intensity1, st.mean_intensity2, math.hypot(st.se_intensity1, st.se_intensity2))
    assert _close(st.mean_alpha1.real, st.mean_alpha2.real, math.hypot(st.se_alpha1.real, st.se_alpha2.real))


def test_halving_dt_on_the_same_brownian_path(kerr_run):
    p, fine = kerr_run
    coarse = sde.integrate(p, sde.SdeConfig(**{**SMALL, "dt": 2e-3, "noise_substeps": 2}))
    assert abs(coarse.mean_intensity1 - fine.mean_intensity1) < fine.se_intensity1


def test_euler_agrees_with_midpoint(kerr_run):
    p, mid = kerr_run
    eul = sde.integrate(p, sde.SdeConfig(**{**SMALL, "scheme": "euler"}))
    assert abs(eul.mean_intensity1 - mid.mean_intensity1) < mid.se_intensity1


def test_thread_count_does_not_change_results():
    p = canonical(1e-7)
    cfg = sde.SdeConfig(dt=1e-3, t_end=3.0, burn_in=1.0, n_traj=60, seed=5, chunk_size=7)
    a = sde.integrate(p, cfg, threads=1).as_dict()
    b = sde.integrate(p, cfg, threads=3).as_dict()
    assert a.pop("partitions") == 1 and b.pop("partitions") == 3
    assert a == b


def test_seed_changes_results():
    p = canonical(1e-7)
    cfg = dict(dt=1e-3, t_end=3.0, burn_in=1.0, n_traj=20)
    a = sde.integrate(p, sde.SdeConfig(seed=1, **cfg))
    b = sde.integrate(p, sde.SdeConfig(seed=2, **cfg))
    assert a.mean_intensity1 != b.mean_intensity1


def test_diverged_trajectories_are_excluded_and_reported():
    p = canonical(1e-7)
    a = steady.symmetric_steady_state(p).alpha1
    cfg = sde.SdeConfig(dt=1e-3, t_end=5.0, burn_in=1.0, n_traj=50, seed=3, initial=(a, a),
                        divergence_bound=abs(a) + 0.5)
    st = sde.integrate(p, cfg)
    assert 0 < st.n_diverged < 50
    assert st.n_effective + st.n_diverged == 50
    assert len(st.diverged) == st.n_diverged
    assert all(0 <= i < 50 and 0 < t <= 5.0 for i, t in st.diverged)


def test_everything_diverged_is_an_error():
    cfg = sde.SdeConfig(dt=1e-3, t_end=2.0, burn_in=1.0, n_traj=4, divergence_bound=1.0)
    with pytest.raises(sde.SdeError):
        sde.integrate(canonical(1e-7), cfg)


def test_default_divergence_bound():
    assert sde.SdeConfig().bound(canonical()) == 1e9


def test_linear_spectrum_is_shot_noise():
    p = canonical(0.0)
    # no noise at chi = 0: once the transient has decayed the record is constant
    cfg = sde.SdeConfig(dt=1e-3, t_end=60.0, burn_in=40.0, n_traj=4, chunk_size=2)
    spec, _ = sde.stationary_spectrum(p, cfg, omega_max=10.0)
    d, se = spec.duan(0.3)
    assert np.allclose(d, 4.0, rtol=0, atol=1e-9) and np.all(se < 1e-9)
    v, _ = spec.quadrature_spectra(1.0)
    assert np.allclose(v, 1.0, rtol=0, atol=1e-9)


def test_record_length_guard():
    cfg = sde.SdeConfig(dt=1e-3, t_end=15.0, burn_in=5.0, n_traj=2)
    with pytest.raises(sde.InsufficientRecordError):
        sde.stationary_spectrum(canonical(1e-7), cfg)


def test_spectrum_records_and_bins():
    p = canonical(1e-7)
    cfg = sde.SdeConfig(dt=1e-3, t_end=25.0, burn_in=3.0, n_traj=6, chunk_size=4)
    spec, rec = sde.stationary_spectrum(p, cfg, omega_max=5.0, keep_records=3)
    assert rec.shape == (3, 4, sde.n_samples(cfg))
    assert spec.omega[0] == 0 and spec.omega[-1] <= 5.0
    assert np.allclose(np.diff(spec.omega), 2 * np.pi / (sde.n_samples(cfg) * cfg.dt * cfg.sample_every))
    assert spec.chunk_counts.tolist() == [4, 2]
    d, se = spec.duan(0.2)
    assert d.shape == se.shape == spec.omega.shape and np.all(np.isfinite(se))


def test_single_chunk_has_no_error_bar():
    p = canonical(1e-7)
    cfg = sde.SdeConfig(dt=1e-3, t_end=25.0, burn_in=3.0, n_traj=3)
    spec, _ = sde.stationary_spectrum(p, cfg, omega_max=2.0)
    _, se = spec.duan(0.2)
    assert np.all(np.isnan(se))
