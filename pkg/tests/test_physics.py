import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lossy_pdc.physics import (
    C_LIGHT,
    DispersionBranch,
    DomainError,
    FrequencyGrid,
    PumpPulse,
    assemble_K_and_M,
    coupling_matrix_J,
    loss_db_per_cm_to_si,
    pump_spectrum,
    refractive_index,
    reference_setup,
    wavevector,
)


def test_db_conversion_value():
    # 10 dB/cm is a factor 10 in power per cm
    assert np.exp(-loss_db_per_cm_to_si(10.0) * 0.01) == pytest.approx(0.1, rel=1e-14)
    assert loss_db_per_cm_to_si(1.0) == pytest.approx(23.02585092994046, rel=1e-14)
    assert loss_db_per_cm_to_si(0.0) == 0.0


def test_negative_loss_rejected():
    with pytest.raises(DomainError):
        loss_db_per_cm_to_si(-0.1)


@given(st.floats(0, 100))
def test_db_conversion_linear(a):
    assert loss_db_per_cm_to_si(a) == pytest.approx(a * loss_db_per_cm_to_si(1.0), rel=1e-12, abs=1e-300)


def test_grid_centered_endpoints():
    g = FrequencyGrid.centered(1e15, 2e13, 11)
    assert g.omega[0] == pytest.approx(1e15 - 2e13, rel=1e-15)
    assert g.omega[-1] == pytest.approx(1e15 + 2e13, rel=1e-15)
    assert g.omega_center == pytest.approx(1e15, rel=1e-15)
    np.testing.assert_allclose(g.detuning, g.omega - 1e15, atol=1e-2)
    assert g.quantization_time == pytest.approx(2 * np.pi / 4e12)


@pytest.mark.parametrize("kw", [dict(omega_0=1.0, delta_omega=1.0, n_points=1),
                                dict(omega_0=1.0, delta_omega=0.0, n_points=4),
                                dict(omega_0=-1.0, delta_omega=1.0, n_points=4)])
def test_grid_rejects_bad_input(kw):
    with pytest.raises(DomainError):
        FrequencyGrid(**kw)


def test_reference_grid_antidiagonal_hits_pump_center():
    s = reference_setup()
    w = s.grid.omega
    np.testing.assert_allclose(w + w[::-1], s.pulse.omega_p, rtol=1e-14)


@given(n_ref=st.floats(1.2, 3.0), vg_frac=st.floats(0.2, 0.9), x=st.floats(-0.05, 0.05))
def test_linear_dispersion_group_velocity(n_ref, vg_frac, x):
    w0 = 2.5e15
    b = DispersionBranch(n_ref, vg_frac * C_LIGHT, w0)
    w = w0 * (1 + x)
    h = 1e-6 * w0
    dk = (wavevector(b, w + h) - wavevector(b, w - h)) / (2 * h)
    # k(w) = n(w) w / c is quadratic in w; its slope at w0 is 1/v_g
    expected = 1.0 / b.v_g + 2 * (b.group_index - n_ref) / (C_LIGHT * w0) * (w - w0)
    assert dk == pytest.approx(expected, rel=1e-6)
    assert refractive_index(b, w0) == pytest.approx(n_ref, rel=1e-15)


def test_dispersion_domain_checks():
    with pytest.raises(DomainError):
        DispersionBranch(1.5, 1.2 * C_LIGHT, 1e15)
    b = DispersionBranch(1.5, 0.5 * C_LIGHT, 1e15)
    with pytest.raises(DomainError):
        refractive_index(b, -1.0)


def test_qpm_phase_matches_degenerate_point():
    s = reference_setup()
    wg = s.waveguide
    w = s.pulse.omega_p
    mismatch = (wavevector(wg.pump, w) - wavevector(wg.signal, w / 2) - wavevector(wg.idler, w / 2)
                - wg.k_qpm)
    assert abs(mismatch) < 1e-9 * wg.k_qpm


def test_pump_spectrum_time_bandwidth():
    p = PumpPulse(755e-9, 0.5e-12)
    # transform-limited Gaussian: dnu * dtau = 2 ln2 / pi
    assert p.spectral_fwhm_hz * p.fwhm_duration == pytest.approx(2 * np.log(2) / np.pi, rel=1e-14)
    half = np.pi * p.spectral_fwhm_hz  # half width in angular frequency
    s = pump_spectrum(p, np.array([p.omega_p, p.omega_p + half, p.omega_p - half]))
    assert abs(s[0]) == pytest.approx(1.0)
    np.testing.assert_allclose(np.abs(s[1:]) ** 2, 0.5, rtol=1e-12)


def test_pump_temporal_fwhm():
    p = PumpPulse(755e-9, 0.5e-12)
    assert p.temporal_intensity(0.25e-12) == pytest.approx(0.5, rel=1e-12)


def test_reference_walkoff_is_3p7_ps():
    wg = reference_setup().waveguide
    walk = wg.length * (1 / wg.signal.v_g - 1 / wg.idler.v_g)
    assert walk == pytest.approx(0.01 / 0.9 * 1.9 * (1 / 0.95 - 1) / C_LIGHT * 1.0, rel=1e-12)
    assert walk == pytest.approx(3.7e-12, abs=0.05e-12)


def test_coupling_matrix_symmetry_and_domain():
    s = reference_setup(gamma=0.1, n_points=16)
    J = coupling_matrix_J(s, 0.004)
    np.testing.assert_allclose(J, J.T, rtol=0, atol=1e-15)
    with pytest.raises(DomainError):
        coupling_matrix_J(s, 0.02)
    K, M = assemble_K_and_M(s, 0.0)
    np.testing.assert_allclose(M, M.T, atol=0)
    np.testing.assert_allclose(M[:16, :16], 0)
    assert np.allclose(np.diag(np.diagonal(K)), K)


def test_kappa_carries_half_loss():
    s = reference_setup(alpha_s_db_cm=2.0, alpha_i_db_cm=1.0, n_points=8)
    ka, kb = s.kappa()
    np.testing.assert_allclose(ka.imag, 0.5 * loss_db_per_cm_to_si(2.0))
    np.testing.assert_allclose(kb.imag, 0.5 * loss_db_per_cm_to_si(1.0))
