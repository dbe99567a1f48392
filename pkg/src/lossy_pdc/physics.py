"""Frequency grid, dispersion and coupling matrices for type-II PDC in a waveguide.

Units are SI throughout (rad/s, m, 1/m, s). Conversion from the config units
(nm, ps, mm, dB/cm) happens once in :mod:`lossy_pdc.config`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

C_LIGHT = 299_792_458.0
DB_PER_CM_TO_PER_M = 100.0 * np.log(10.0) / 10.0


class DomainError(ValueError):
    """Argument outside the physical domain of an operation."""


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform grid ``omega_m = omega_0 + m * delta_omega`` shared by signal and idler."""

    omega_0: float
    delta_omega: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 2:
            raise DomainError(f"n_points must be >= 2, got {self.n_points}")
        if not self.delta_omega > 0:
            raise DomainError("delta_omega must be positive")
        if not self.omega_0 > 0:
            raise DomainError("omega_0 must be positive")

    @classmethod
    def centered(cls, omega_center: float, half_width: float, n_points: int) -> "FrequencyGrid":
        """Grid spanning ``omega_center +- half_width`` (both ends included)."""
        delta = 2.0 * half_width / (n_points - 1)
        return cls(omega_center - half_width, delta, n_points)

    @property
    def omega(self) -> np.ndarray:
        return self.omega_0 + np.arange(self.n_points) * self.delta_omega

    @property
    def omega_center(self) -> float:
        return self.omega_0 + 0.5 * (self.n_points - 1) * self.delta_omega

    @property
    def detuning(self) -> np.ndarray:
        """Angular detuning from the grid center (rad/s)."""
        return (np.arange(self.n_points) - 0.5 * (self.n_points - 1)) * self.delta_omega

    @property
    def quantization_time(self) -> float:
        return 2.0 * np.pi / self.delta_omega

    def describe(self) -> dict:
        return {"omega_0": self.omega_0, "delta_omega": self.delta_omega, "n_points": self.n_points}


@dataclass(frozen=True)
class DispersionBranch:
    """First-order expansion of the refractive index around ``omega_ref``."""

    n_ref: float
    v_g: float
    omega_ref: float

    def __post_init__(self):
        if not self.n_ref > 0:
            raise DomainError("n_ref must be positive")
        if not 0 < self.v_g < C_LIGHT:
            raise DomainError("group velocity must lie in (0, c)")
        if not self.omega_ref > 0:
            raise DomainError("omega_ref must be positive")

    @property
    def group_index(self) -> float:
        return C_LIGHT / self.v_g


def refractive_index(branch: DispersionBranch, omega):
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise DomainError("angular frequency must be positive")
    detune = (omega - branch.omega_ref) / branch.omega_ref
    return branch.n_ref + detune * (branch.group_index - branch.n_ref)


def wavevector(branch: DispersionBranch, omega):
    omega = np.asarray(omega, dtype=float)
    return refractive_index(branch, omega) * omega / C_LIGHT


def qpm_wavevector(pump: DispersionBranch, signal: DispersionBranch, idler: DispersionBranch,
                   omega_p: float) -> float:
    """Poling wavevector that phase-matches degenerate conversion at ``omega_p / 2``."""
    n_p = float(refractive_index(pump, omega_p))
    n_s = float(refractive_index(signal, omega_p / 2))
    n_i = float(refractive_index(idler, omega_p / 2))
    return omega_p / (2.0 * C_LIGHT) * (2.0 * n_p - n_s - n_i)


def loss_db_per_cm_to_si(alpha_db_cm: float) -> float:
    """Intensity loss in dB/cm to a power attenuation rate in 1/m."""
    if alpha_db_cm < 0:
        raise DomainError(f"loss must be non-negative, got {alpha_db_cm}")
    return alpha_db_cm * DB_PER_CM_TO_PER_M


@dataclass(frozen=True)
class PumpPulse:
    """Transform-limited Gaussian pump; ``fwhm_duration`` is the intensity FWHM."""

    center_wavelength: float
    fwhm_duration: float
    spectrum_normalization: str = "max-abs-one"

    def __post_init__(self):
        if not self.fwhm_duration > 0:
            raise DomainError("fwhm_duration must be positive")
        if not self.center_wavelength > 0:
            raise DomainError("center_wavelength must be positive")
        if self.spectrum_normalization != "max-abs-one":
            raise DomainError(f"unsupported normalization {self.spectrum_normalization!r}")

    @property
    def omega_p(self) -> float:
        return 2.0 * np.pi * C_LIGHT / self.center_wavelength

    @property
    def spectral_fwhm_hz(self) -> float:
        """FWHM of |S|^2 in ordinary frequency."""
        return 2.0 * np.log(2.0) / (np.pi * self.fwhm_duration)

    def temporal_intensity(self, t):
        """Normalized pump intensity envelope, peak 1 at t = 0."""
        t = np.asarray(t, dtype=float)
        return np.exp(-4.0 * np.log(2.0) * (t / self.fwhm_duration) ** 2)


def pump_spectrum(pulse: PumpPulse, omega):
    # field envelope exp(-2 ln2 t^2 / dt^2) <-> exp(-w^2 dt^2 / (8 ln2))
    x = (np.asarray(omega, dtype=float) - pulse.omega_p) * pulse.fwhm_duration
    return np.exp(-x * x / (8.0 * np.log(2.0))).astype(complex)


@dataclass(frozen=True)
class WaveguideSpec:
    length: float
    pump: DispersionBranch
    signal: DispersionBranch
    idler: DispersionBranch
    alpha_s: float
    alpha_i: float
    k_qpm: float
    gamma: float

    def __post_init__(self):
        if not self.length > 0:
            raise DomainError("length must be positive")
        if self.alpha_s < 0 or self.alpha_i < 0:
            raise DomainError("loss coefficients must be non-negative")
        if self.gamma < 0:
            raise DomainError("gamma must be non-negative")


@dataclass(frozen=True)
class Setup:
    """Everything the master equation needs: waveguide, pump and grid.

    Cached arrays are derived lazily and never mutated.
    """

    waveguide: WaveguideSpec
    pulse: PumpPulse
    grid: FrequencyGrid

    @cached_property
    def k_signal(self) -> np.ndarray:
        return wavevector(self.waveguide.signal, self.grid.omega)

    @cached_property
    def k_idler(self) -> np.ndarray:
        return wavevector(self.waveguide.idler, self.grid.omega)

    @cached_property
    def pump_matrix(self) -> np.ndarray:
        w = self.grid.omega
        return pump_spectrum(self.pulse, w[:, None] + w[None, :])

    @cached_property
    def pump_phase_rate(self) -> np.ndarray:
        """``k_p(w_i + w_j) - k_QPM`` on the grid (1/m)."""
        w = self.grid.omega
        return wavevector(self.waveguide.pump, w[:, None] + w[None, :]) - self.waveguide.k_qpm

    @cached_property
    def phase_mismatch(self) -> np.ndarray:
        """``k_p(w_i + w_j) - k_QPM - k_s(w_i) - k_i(w_j)``; the coupling phase rate
        once the free evolution is removed."""
        w = self.grid.omega
        wp = self.waveguide.pump
        k_sum = wavevector(wp, w[:, None] + w[None, :])
        # subtract the large terms before combining to limit cancellation
        k_sum = k_sum - (self.k_signal[:, None] + self.k_idler[None, :])
        return k_sum - self.waveguide.k_qpm

    def check_z(self, z: float):
        if not (0.0 <= z <= self.waveguide.length * (1 + 1e-12)):
            raise DomainError(f"z={z} outside [0, L={self.waveguide.length}]")

    def kappa(self) -> tuple[np.ndarray, np.ndarray]:
        """``k + i alpha / 2`` for the signal and idler branches."""
        wg = self.waveguide
        return self.k_signal + 0.5j * wg.alpha_s, self.k_idler + 0.5j * wg.alpha_i


def coupling_matrix_J(setup: Setup, z: float) -> np.ndarray:
    setup.check_z(z)
    return setup.pump_matrix * np.exp(1j * setup.pump_phase_rate * z)


def assemble_K_and_M(setup: Setup, z: float) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal propagation matrix K and coupling matrix M(z) in the lab frame."""
    J = coupling_matrix_J(setup, z)
    ka, kb = setup.kappa()
    n = setup.grid.n_points
    K = np.diag(np.concatenate([ka, kb]))
    M = np.zeros((2 * n, 2 * n), dtype=complex)
    M[:n, n:] = J
    M[n:, :n] = J.T
    return K, M


def reference_setup(gamma: float = 0.0, alpha_s_db_cm: float = 0.0, alpha_i_db_cm: float = 0.0,
                   n_points: int = 192, half_window_thz: float = 4.0,
                   length: float = 0.01) -> Setup:
    """The group-velocity-matched reference waveguide used throughout the examples."""
    pulse = PumpPulse(center_wavelength=755e-9, fwhm_duration=0.5e-12)
    omega_p = pulse.omega_p
    n_p = 1.9
    v_p = 0.9 * C_LIGHT / n_p
    pump = DispersionBranch(n_p, v_p, omega_p)
    signal = DispersionBranch(1.9, 0.95 * v_p, omega_p / 2)
    idler = DispersionBranch(1.8, v_p, omega_p / 2)
    wg = WaveguideSpec(
        length=length, pump=pump, signal=signal, idler=idler,
        alpha_s=loss_db_per_cm_to_si(alpha_s_db_cm), alpha_i=loss_db_per_cm_to_si(alpha_i_db_cm),
        k_qpm=qpm_wavevector(pump, signal, idler, omega_p), gamma=gamma,
    )
    grid = FrequencyGrid.centered(omega_p / 2, 2 * np.pi * half_window_thz * 1e12, n_points)
    return Setup(wg, pulse, grid)
