"""Spatial integration of the second-order moment equations for lossy type-II PDC.

The lab-frame equations for D = <c^dag c> and C = <c c> read

    dD/dz = i (D K - K^* D) + i Gamma (C^* M^T - M^* C)
    dC/dz = i (C K + K C)   + i Gamma ((M D + M)^T + M D)

with K = diag(k + i alpha / 2). The carrier phases exp(i k z) are far too fast
for a fixed-step integrator, so propagation runs in the interaction picture of
Re K where only the losses and the phase mismatch remain. Starting from vacuum
only D_aa, D_bb and C_ab are ever non-zero, and the production path evolves
just those three blocks.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .gaussian import ContractViolation, CorrelationState, state_to_bytes
from .physics import Setup, assemble_K_and_M

FRAMES = ("retarded", "interaction", "lab")


class IntegrationError(ArithmeticError):
    """The integrator produced non-finite moments."""


@dataclass(frozen=True)
class IntegratorConfig:
    step_count: int = 512
    method: str = "rk4"
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.step_count < 16:
            raise ValueError(f"step_count must be >= 16, got {self.step_count}")
        if self.method not in ("rk4", "rk45"):
            raise ValueError(f"unknown integrator method {self.method!r}")
        if not 0 < self.tolerance <= 1e-3:
            raise ValueError("tolerance must lie in (0, 1e-3]")


@dataclass
class Diagnostics:
    z: list = field(default_factory=list)
    n_a: list = field(default_factory=list)
    n_b: list = field(default_factory=list)
    drift: list = field(default_factory=list)

    def append(self, z, n_a, n_b, drift):
        self.z.append(float(z))
        self.n_a.append(float(n_a))
        self.n_b.append(float(n_b))
        self.drift.append(float(drift))

    def rows(self):
        return list(zip(self.z, self.n_a, self.n_b, self.drift))


# --- generic dense right-hand side ------------------------------------------

def correlation_rhs(d: np.ndarray, c: np.ndarray, k_diag: np.ndarray, m: np.ndarray,
                    gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of (D, C) for a diagonal K given by ``k_diag``.

    K enters the D equation as ``D K - K^* D``; for lossless K this is the plain
    commutator, and the conjugate is what makes populations decay as exp(-alpha z).
    """
    k_diag = np.asarray(k_diag)
    if k_diag.ndim == 2:
        k_diag = np.diagonal(k_diag)
    n = d.shape[0]
    if d.shape != (n, n) or c.shape != (n, n) or m.shape != (n, n) or k_diag.shape != (n,):
        raise ContractViolation("dimension mismatch in master equation inputs")
    dd = 1j * (d * k_diag[None, :] - k_diag.conj()[:, None] * d)
    dd += 1j * gamma * (c.conj() @ m.T - m.conj() @ c)
    md = m @ d
    dc = 1j * (c * k_diag[None, :] + k_diag[:, None] * c)
    dc += 1j * gamma * ((md + m).T + md)
    return dd, dc


def master_rhs(state: CorrelationState, z: float, setup: Setup) -> tuple[np.ndarray, np.ndarray]:
    """Lab-frame right-hand side at position ``z``."""
    K, M = assemble_K_and_M(setup, z)
    if state.n_modes != K.shape[0]:
        raise ContractViolation("state size does not match the setup grid")
    return correlation_rhs(state.d_matrix, state.c_matrix, np.diagonal(K), M, setup.waveguide.gamma)


def _rk4_step(f, z, y, h):
    k1 = f(z, y)
    k2 = f(z + 0.5 * h, tuple(a + 0.5 * h * b for a, b in zip(y, k1)))
    k3 = f(z + 0.5 * h, tuple(a + 0.5 * h * b for a, b in zip(y, k2)))
    k4 = f(z + h, tuple(a + h * b for a, b in zip(y, k3)))
    return tuple(a + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))


def propagate_matrices(k_diag: np.ndarray, coupling: Callable[[float], np.ndarray] | np.ndarray,
                       gamma: float, length: float,
                       integrator: IntegratorConfig = IntegratorConfig()) -> CorrelationState:
    """Integrate the full dense equations from vacuum; ``coupling`` is M(z) or a constant M.

    Meant for small systems (oracle checks, block-structure tests).
    """
    k_diag = np.asarray(k_diag, dtype=complex)
    n = k_diag.size
    m_of_z = coupling if callable(coupling) else (lambda z, _m=np.asarray(coupling, dtype=complex): _m)

    def f(z, y):
        return correlation_rhs(y[0], y[1], k_diag, m_of_z(z), gamma)

    y = (np.zeros((n, n), complex), np.zeros((n, n), complex))
    h = length / integrator.step_count
    for step in range(integrator.step_count):
        d, c = _rk4_step(f, step * h, y, h)
        y = (0.5 * (d + d.conj().T), 0.5 * (c + c.T))
    return CorrelationState(y[0], y[1], length, None, "interaction")


# --- type-II block integrator -------------------------------------------------

def _block_rhs(setup: Setup):
    """RHS of (D_aa, D_bb, C_ab) taking the interaction-picture J(z) as an argument."""
    wg = setup.waveguide
    gamma, a_s, a_i = wg.gamma, wg.alpha_s, wg.alpha_i

    def f(J, y):
        d_aa, d_bb, c_ab = y
        x = c_ab.conj() @ J.T
        w = c_ab.conj().T @ J
        dd_aa = -a_s * d_aa + 1j * gamma * (x - x.conj().T)
        dd_bb = -a_i * d_bb + 1j * gamma * (w - w.conj().T)
        dc_ab = -0.5 * (a_s + a_i) * c_ab + 1j * gamma * (J @ d_bb + J + d_aa.T @ J)
        return dd_aa, dd_bb, dc_ab

    return f


def _block_rk4(setup: Setup, y, steps: int, on_step=None):
    f = _block_rhs(setup)
    pump = setup.pump_matrix
    mismatch = setup.phase_mismatch
    h = setup.waveguide.length / steps
    half_turn = np.exp(0.5j * h * mismatch)
    for step in range(steps):
        # one exact exponential per step; midpoint and end phases by multiplication
        j0 = pump * np.exp(1j * mismatch * (step * h))
        j_mid = j0 * half_turn
        j1 = j_mid * half_turn
        k1 = f(j0, y)
        k2 = f(j_mid, tuple(a + 0.5 * h * b for a, b in zip(y, k1)))
        k3 = f(j_mid, tuple(a + 0.5 * h * b for a, b in zip(y, k2)))
        k4 = f(j1, tuple(a + h * b for a, b in zip(y, k3)))
        y = tuple(a + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))
        if on_step is not None:
            y = on_step(step + 1, (step + 1) * h, y)
    return y


def frame_phases(setup: Setup, z: float, frame: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode phases mapping interaction-picture operators to ``frame`` at ``z``.

    ``retarded`` expresses both bands in the pump's retarded time t - z / v_p with
    the constant carrier phase of each band dropped; ``lab`` keeps the full exp(i k z).
    """
    if frame not in FRAMES:
        raise ValueError(f"unknown frame {frame!r}; choose from {FRAMES}")
    if frame == "interaction":
        zero = np.zeros(setup.grid.n_points)
        return zero, zero
    if frame == "lab":
        return setup.k_signal * z, setup.k_idler * z
    n = setup.grid.n_points
    det = setup.grid.detuning
    inv_vp = 1.0 / setup.waveguide.pump.v_g
    out = []
    for k in (setup.k_signal, setup.k_idler):
        # k at the grid center is midway between the two middle points for even n
        k_c = 0.5 * (k[(n - 1) // 2] + k[n // 2])
        out.append(((k - k_c) - det * inv_vp) * z)
    return out[0], out[1]


def to_frame(d_aa, d_bb, c_ab, setup: Setup, z: float, frame: str, grid=None) -> CorrelationState:
    pa, pb = frame_phases(setup, z, frame)
    ea, eb = np.exp(1j * pa), np.exp(1j * pb)
    # a_n -> a_n e^{i p_n}:  D_nm -> D_nm e^{i(p_m - p_n)},  C_nm -> C_nm e^{i(p_n + p_m)}
    d_aa = ea.conj()[:, None] * d_aa * ea[None, :]
    d_bb = eb.conj()[:, None] * d_bb * eb[None, :]
    c_ab = ea[:, None] * c_ab * eb[None, :]
    return CorrelationState.from_blocks(d_aa, d_bb, c_ab, z_position=z,
                                        grid=grid if grid is not None else setup.grid, frame=frame)


def _check_finite(y, step, z):
    for name, arr in zip(("D_aa", "D_bb", "C_ab"), y):
        if not np.all(np.isfinite(arr)):
            raise IntegrationError(f"non-finite {name} at step {step} (z = {z:.6e} m)")


def propagate_with_diagnostics(setup: Setup, integrator: IntegratorConfig = IntegratorConfig(),
                               frame: str = "retarded", checkpoint_every: int = 0,
                               checkpoint_dir: Optional[os.PathLike] = None,
                               ) -> tuple[CorrelationState, Diagnostics]:
    n = setup.grid.n_points
    length = setup.waveguide.length
    diag = Diagnostics()
    y = tuple(np.zeros((n, n), complex) for _ in range(3))
    diag.append(0.0, 0.0, 0.0, 0.0)
    if setup.waveguide.gamma == 0.0:
        return to_frame(*y, setup, length, frame), diag

    if integrator.method == "rk45":
        y = _integrate_adaptive(setup, y, integrator.tolerance)
        _check_finite(y, integrator.step_count, length)
        diag.append(length, np.trace(y[0]).real, np.trace(y[1]).real, 0.0)
        return to_frame(*y, setup, length, frame), diag

    def on_step(step, z, y):
        d_aa, d_bb, c_ab = y
        drift = max(np.abs(d_aa - d_aa.conj().T).max(), np.abs(d_bb - d_bb.conj().T).max())
        y = (0.5 * (d_aa + d_aa.conj().T), 0.5 * (d_bb + d_bb.conj().T), c_ab)
        _check_finite(y, step, z)
        diag.append(z, np.trace(y[0]).real, np.trace(y[1]).real, drift)
        if checkpoint_every and checkpoint_dir is not None and step % checkpoint_every == 0:
            _write_checkpoint(to_frame(*y, setup, z, frame), Path(checkpoint_dir), step)
        return y

    y = _block_rk4(setup, y, integrator.step_count, on_step)
    return to_frame(*y, setup, length, frame), diag


def propagate(setup: Setup, integrator: IntegratorConfig = IntegratorConfig(),
              frame: str = "retarded") -> CorrelationState:
    """Output moments at z = L, starting from vacuum at z = 0."""
    return propagate_with_diagnostics(setup, integrator, frame)[0]


def _integrate_adaptive(setup: Setup, y0, tol):
    f = _block_rhs(setup)
    n = setup.grid.n_points
    pump, mismatch = setup.pump_matrix, setup.phase_mismatch

    def fun(z, flat):
        parts = np.split(flat, 3)
        out = f(pump * np.exp(1j * mismatch * z), tuple(p.reshape(n, n) for p in parts))
        return np.concatenate([o.ravel() for o in out])

    flat0 = np.concatenate([a.ravel() for a in y0])
    sol = solve_ivp(fun, (0.0, setup.waveguide.length), flat0, method="RK45", rtol=tol, atol=tol * 1e-12)
    if not sol.success:
        raise IntegrationError(f"adaptive integration failed: {sol.message}")
    d_aa, d_bb, c_ab = (p.reshape(n, n) for p in np.split(sol.y[:, -1], 3))
    return 0.5 * (d_aa + d_aa.conj().T), 0.5 * (d_bb + d_bb.conj().T), c_ab


def _write_checkpoint(state: CorrelationState, directory: Path, step: int):
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / f"state_step{step:06d}.bin"
    tmp = target.with_suffix(".tmp")
    tmp.write_bytes(state_to_bytes(state))
    os.replace(tmp, target)


def two_mode_analytic_oracle(gamma_eff: float, alpha_s: float, alpha_i: float,
                             length: float) -> tuple[float, float, complex]:
    """Closed-form moments of one phase-matched signal/idler mode pair.

    With <ab> = i s the moments obey the real linear system

        n_a' = -alpha_s n_a + 2 g s
        n_b' = -alpha_i n_b + 2 g s
        s'   = -(alpha_s + alpha_i)/2 s + g (1 + n_a + n_b)

    which is solved exactly through an augmented matrix exponential.
    Returns (n_a, n_b, <ab>) at z = length.
    """
    g = gamma_eff
    aug = np.zeros((4, 4))
    aug[:3, :3] = [[-alpha_s, 0.0, 2 * g], [0.0, -alpha_i, 2 * g], [g, g, -0.5 * (alpha_s + alpha_i)]]
    aug[2, 3] = g
    x = expm(aug * length)[:3, 3]
    return float(x[0]), float(x[1]), 1j * float(x[2])
