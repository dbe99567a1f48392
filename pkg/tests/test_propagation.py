import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lossy_pdc.gaussian import covariance_from_correlations, state_from_bytes, symplectic_eigenvalues
from lossy_pdc.physics import loss_db_per_cm_to_si
from lossy_pdc.propagation import (
    IntegratorConfig,
    correlation_rhs,
    frame_phases,
    master_rhs,
    propagate,
    propagate_matrices,
    propagate_with_diagnostics,
    two_mode_analytic_oracle,
)
from lossy_pdc.gaussian import CorrelationState


def pair_coupling(g=1.0):
    return np.array([[0, g], [g, 0]], dtype=complex)


@pytest.mark.parametrize("alpha_s,alpha_i", [(0.0, 0.0), (30.0, 10.0), (200.0, 0.0)])
def test_single_pair_matches_analytic_oracle(alpha_s, alpha_i):
    gamma, length = 40.0, 0.01
    k = np.array([0.5j * alpha_s, 0.5j * alpha_i])
    s = propagate_matrices(k, pair_coupling(), gamma, length, IntegratorConfig(2000))
    n_a, n_b, ab = two_mode_analytic_oracle(gamma, alpha_s, alpha_i, length)
    assert s.d_matrix[0, 0].real == pytest.approx(n_a, rel=1e-8)
    assert s.d_matrix[1, 1].real == pytest.approx(n_b, rel=1e-8)
    assert s.c_matrix[0, 1] == pytest.approx(ab, rel=1e-8)


def test_lossless_pair_is_squeezed_vacuum():
    gamma, length = 60.0, 0.01
    n_a, n_b, ab = two_mode_analytic_oracle(gamma, 0.0, 0.0, length)
    r = gamma * length
    assert n_a == pytest.approx(np.sinh(r) ** 2, rel=1e-12)
    assert abs(ab) == pytest.approx(np.sinh(r) * np.cosh(r), rel=1e-12)


def test_lab_frame_pair_with_carrier_phases():
    # a lab-frame coupling that tracks the carriers gives the same photon numbers
    gamma, length, ks, ki = 40.0, 0.01, 3e3, 2e3
    k = np.array([ks + 5j, ki + 1j])
    m = lambda z: pair_coupling(np.exp(1j * (ks + ki) * z))
    s = propagate_matrices(k, m, gamma, length, IntegratorConfig(4000))
    n_a, n_b, _ = two_mode_analytic_oracle(gamma, 10.0, 2.0, length)
    assert s.d_matrix[0, 0].real == pytest.approx(n_a, rel=1e-7)
    assert s.d_matrix[1, 1].real == pytest.approx(n_b, rel=1e-7)


def test_population_decays_without_coupling():
    d = np.diag([1.0, 2.0]).astype(complex)
    k = np.array([1.0 + 0.5j * 3.0, 2.0 + 0.5j * 5.0])
    dd, dc = correlation_rhs(d, np.zeros((2, 2), complex), k, np.zeros((2, 2)), 0.0)
    np.testing.assert_allclose(np.diagonal(dd).real, [-3.0, -10.0])
    np.testing.assert_allclose(dc, 0)


def test_block_integrator_matches_dense_equations(make_small_setup):
    setup = make_small_setup(4.0, 1.0, n_points=10)
    integ = IntegratorConfig(200)
    block = propagate(setup, integ, frame="interaction")
    n = setup.grid.n_points
    ka, kb = setup.kappa()
    k = 1j * np.concatenate([ka.imag, kb.imag])

    def m(z):
        mm = np.zeros((2 * n, 2 * n), complex)
        j = setup.pump_matrix * np.exp(1j * setup.phase_mismatch * z)
        mm[:n, n:] = j
        mm[n:, :n] = j.T
        return mm

    dense = propagate_matrices(k, m, setup.waveguide.gamma, setup.waveguide.length, integ)
    scale = np.abs(block.d_matrix).max()
    np.testing.assert_allclose(dense.d_matrix, block.d_matrix, atol=1e-10 * scale)
    np.testing.assert_allclose(dense.c_matrix, block.c_matrix, atol=1e-10 * np.abs(block.c_matrix).max())


def test_master_rhs_matches_generic_rhs(make_small_setup):
    setup = make_small_setup(1.0, 2.0, n_points=6)
    rng = np.random.default_rng(1)
    a = rng.normal(size=(12, 12)) + 1j * rng.normal(size=(12, 12))
    s = CorrelationState(a @ a.conj().T, a + a.T)
    dd, dc = master_rhs(s, 0.003, setup)
    assert np.allclose(dd, dd.conj().T)
    assert np.allclose(dc, dc.T)


def test_zero_gamma_gives_vacuum(make_small_setup):
    s = propagate(make_small_setup(5.0, 5.0, gamma=0.0))
    assert np.all(s.d_matrix == 0) and np.all(s.c_matrix == 0)


def test_off_blocks_stay_zero(make_small_setup):
    s = propagate(make_small_setup(5.0, 1.0))
    assert np.all(s.block("d_ab") == 0)
    assert np.all(s.block("c_aa") == 0) and np.all(s.block("c_bb") == 0)


def test_lossless_output_is_pure(make_small_setup):
    s = propagate(make_small_setup())
    nu = symplectic_eigenvalues(covariance_from_correlations(s))
    np.testing.assert_allclose(nu, 1.0, atol=1e-8)


def test_lossy_output_is_mixed(make_small_setup):
    s = propagate(make_small_setup(10.0, 10.0))
    assert symplectic_eigenvalues(covariance_from_correlations(s)).max() > 1 + 1e-7


@given(st.floats(0.0, 30.0))
def test_equal_losses_give_equal_photon_numbers(make_small_setup, alpha):
    s = propagate(make_small_setup(alpha, alpha, n_points=8), IntegratorConfig(32))
    n_a, n_b = np.trace(s.block("d_aa")).real, np.trace(s.block("d_bb")).real
    assert n_a == pytest.approx(n_b, rel=1e-10)


def test_photon_number_falls_with_loss(make_small_setup):
    totals = [propagate(make_small_setup(a, a)).total_photons() for a in (0.0, 1.0, 5.0, 10.0, 30.0)]
    assert all(x > y for x, y in zip(totals, totals[1:]))


def test_low_gain_quadratic_scaling(make_small_setup, small_gamma):
    n1 = propagate(make_small_setup(gamma=small_gamma)).total_photons()
    n2 = propagate(make_small_setup(gamma=2 * small_gamma)).total_photons()
    assert n2 / n1 == pytest.approx(4.0, rel=1e-3)


def test_frames_share_photon_statistics(make_small_setup):
    setup = make_small_setup(2.0, 1.0)
    states = {f: propagate(setup, frame=f) for f in ("interaction", "retarded", "lab")}
    ref = states["interaction"]
    for f, s in states.items():
        assert s.frame == f
        np.testing.assert_allclose(s.photon_numbers(), ref.photon_numbers(), rtol=1e-12)
        np.testing.assert_allclose(np.abs(s.c_matrix), np.abs(ref.c_matrix), rtol=1e-12, atol=1e-30)


def test_retarded_frame_phases_vanish_at_input(make_small_setup):
    pa, pb = frame_phases(make_small_setup(), 0.0, "retarded")
    assert np.all(pa == 0) and np.all(pb == 0)
    with pytest.raises(ValueError):
        frame_phases(make_small_setup(), 0.0, "rotating")


def test_rk45_agrees_with_rk4(make_small_setup):
    setup = make_small_setup(3.0, 1.0, n_points=12)
    a = propagate(setup, IntegratorConfig(1024), frame="interaction")
    b = propagate(setup, IntegratorConfig(16, "rk45", 1e-10), frame="interaction")
    assert b.total_photons() == pytest.approx(a.total_photons(), rel=1e-7)


def test_step_doubling_converges(make_small_setup):
    setup = make_small_setup(5.0, 5.0)
    a = propagate(setup, IntegratorConfig(512)).total_photons()
    b = propagate(setup, IntegratorConfig(1024)).total_photons()
    assert abs(b / a - 1) < 1e-6


@pytest.mark.parametrize("kw", [dict(step_count=8), dict(method="euler"), dict(tolerance=0.1)])
def test_integrator_config_validation(kw):
    with pytest.raises(ValueError):
        IntegratorConfig(**kw)


def test_diagnostics_and_checkpoints(make_small_setup, tmp_path):
    setup = make_small_setup(1.0, 1.0)
    state, diag = propagate_with_diagnostics(setup, IntegratorConfig(32), checkpoint_every=16,
                                             checkpoint_dir=tmp_path)
    z, n_a, n_b, drift = map(np.array, zip(*diag.rows()))
    assert z[0] == 0 and z[-1] == pytest.approx(setup.waveguide.length)
    assert np.all(np.diff(z) > 0) and np.all(drift < 1e-15)
    assert n_a[-1] == pytest.approx(np.trace(state.block("d_aa")).real, rel=1e-12)
    files = sorted(tmp_path.glob("state_step*.bin"))
    assert [f.name for f in files] == ["state_step000016.bin", "state_step000032.bin"]
    last = state_from_bytes(files[-1].read_bytes())
    np.testing.assert_allclose(last.d_matrix, state.d_matrix, rtol=0, atol=1e-20)
    assert not list(tmp_path.glob("*.tmp"))


def test_loss_attenuation_of_free_population():
    # with no coupling the populations decay as exp(-alpha z)
    alpha = loss_db_per_cm_to_si(3.0)
    d = np.eye(1, dtype=complex)
    h, z = 1e-5, 0.0
    for _ in range(1000):
        dd, _ = correlation_rhs(d, np.zeros((1, 1), complex), np.array([0.5j * alpha]), np.zeros((1, 1)), 0.0)
        d = d + h * dd
    assert d[0, 0].real == pytest.approx(np.exp(-alpha * 0.01), rel=1e-3)
