"""Observables of the output state: spectra, temporal profiles, JSI, HOM scans and g2."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .gaussian import (
    CorrelationState,
    apply_unitary,
    covariance_from_correlations,
    log_vacuum_fidelity,
    mode_numbers,
    vacuum_substituted,
)
from .physics import DomainError, FrequencyGrid, Setup, refractive_index

P_FLOOR = 1e-300


class GainTooLowError(ArithmeticError):
    """Click probabilities underflow; g2 from clicks is undefined."""


def _require_grid(state: CorrelationState) -> FrequencyGrid:
    if state.grid is None:
        raise DomainError("state carries no frequency grid")
    return state.grid


# --- spectra and temporal profiles ------------------------------------------

@dataclass(frozen=True)
class SpectralResult:
    detuning_thz: np.ndarray
    signal_occupation: np.ndarray
    idler_occupation: np.ndarray

    @property
    def n_a(self) -> float:
        return float(self.signal_occupation.sum())

    @property
    def n_b(self) -> float:
        return float(self.idler_occupation.sum())


def spectrum(state: CorrelationState) -> SpectralResult:
    grid = _require_grid(state)
    return SpectralResult(
        detuning_thz=grid.detuning / (2 * np.pi) / 1e12,
        signal_occupation=np.diagonal(state.block("d_aa")).real.copy(),
        idler_occupation=np.diagonal(state.block("d_bb")).real.copy(),
    )


def field_amplitudes(setup: Setup) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode field amplitudes sqrt(w / n(w)); constant prefactors are dropped."""
    w = setup.grid.omega
    xi_a = np.sqrt(w / refractive_index(setup.waveguide.signal, w))
    xi_b = np.sqrt(w / refractive_index(setup.waveguide.idler, w))
    return xi_a, xi_b


@dataclass(frozen=True)
class TemporalProfile:
    times: np.ndarray
    signal: np.ndarray
    idler: np.ndarray

    def normalized(self) -> "TemporalProfile":
        """Both profiles divided by the idler peak."""
        peak = self.idler.max()
        if not peak > 0:
            return self
        return TemporalProfile(self.times, self.signal / peak, self.idler / peak)


def temporal_intensity(state: CorrelationState, times, amplitudes=None) -> TemporalProfile:
    """``I(t) = sum_nm xi_n xi_m <a_n^dag a_m> exp(i (w_n - w_m) t)`` for both bands.

    Times are in seconds in the frame the state is expressed in (pump-retarded
    for :func:`lossy_pdc.propagation.propagate` output).
    """
    grid = _require_grid(state)
    times = np.asarray(times, dtype=float)
    n = grid.n_points
    if amplitudes is None:
        amplitudes = (np.ones(n), np.ones(n))
    phase = np.exp(-1j * np.outer(times, grid.detuning))
    out = []
    for xi, blk in zip(amplitudes, ("d_aa", "d_bb")):
        v = phase * xi[None, :]
        out.append(np.einsum("tn,nm,tm->t", v.conj(), state.block(blk), v).real)
    return TemporalProfile(times, out[0], out[1])


def jsi(state: CorrelationState) -> np.ndarray:
    """Gaussian factorization of <n_a(w_n) n_b(w_m)>."""
    c_ab = state.block("c_ab")
    d_ab = state.block("d_ab")
    n_a = np.diagonal(state.block("d_aa")).real
    n_b = np.diagonal(state.block("d_bb")).real
    return np.abs(c_ab) ** 2 + np.outer(n_a, n_b) + np.abs(d_ab) ** 2


# --- click detection ---------------------------------------------------------

def hom_unitary(grid: FrequencyGrid, tau: float) -> np.ndarray:
    """Delay the idler by ``tau`` then mix on a 50:50 beamsplitter; rows (c, d)."""
    n = grid.n_points
    v = np.exp(1j * grid.omega * tau)
    u = np.empty((2 * n, 2 * n), dtype=complex)
    eye = np.eye(n)
    u[:n, :n] = eye
    u[n:, :n] = eye
    u[:n, n:] = np.diag(v)
    u[n:, n:] = -np.diag(v)
    return u / np.sqrt(2.0)


@dataclass(frozen=True)
class ClickProbabilities:
    p_c: float
    p_d: float
    p_cd: float


def click_probabilities(state: CorrelationState) -> ClickProbabilities:
    """Single and coincidence click probabilities for arms c (first half) and d."""
    n = state.n_band
    l_c = log_vacuum_fidelity(covariance_from_correlations(state, np.arange(n)))
    l_d = log_vacuum_fidelity(covariance_from_correlations(state, np.arange(n, 2 * n)))
    l_cd = log_vacuum_fidelity(covariance_from_correlations(state))
    p_c = -np.expm1(l_c)
    p_d = -np.expm1(l_d)
    # 1 + q_cd - q_c - q_d rearranged to avoid cancelling O(1) terms
    p_cd = p_c + p_d + np.expm1(l_cd)
    return ClickProbabilities(float(p_c), float(p_d), float(max(p_cd, 0.0)))


@dataclass(frozen=True)
class HomScanResult:
    tau_ps: np.ndarray
    p_cd: np.ndarray
    p_c: np.ndarray
    p_d: np.ndarray
    plateau_fraction: float = 0.1

    @property
    def plateau(self) -> float:
        """Mean coincidence probability over the outermost delays."""
        t = self.tau_ps
        if t.size < 3:
            return float(self.p_cd.max())
        mid = 0.5 * (t.max() + t.min())
        half = 0.5 * (t.max() - t.min())
        outer = np.abs(t - mid) >= (1.0 - self.plateau_fraction) * half
        return float(self.p_cd[outer].mean())

    @property
    def peak(self) -> float:
        return float(self.p_cd.max())

    @property
    def visibility(self) -> float:
        p_inf = self.plateau
        if not p_inf > 0:
            return 0.0
        return float(np.clip((p_inf - self.p_cd.min()) / p_inf, 0.0, 1.0))

    @property
    def dip_center_ps(self) -> float:
        return float(self.tau_ps[np.argmin(self.p_cd)])

    @property
    def dip_fwhm_ps(self) -> float:
        """Full width of the dip at half depth between plateau and minimum."""
        p, t = self.p_cd, self.tau_ps
        i0 = int(np.argmin(p))
        level = 0.5 * (self.plateau + p[i0])
        edges = []
        for direction in (-1, 1):
            i = i0
            while 0 <= i + direction < p.size and p[i + direction] < level:
                i += direction
            j = i + direction
            if not 0 <= j < p.size:
                return float("nan")
            # linear interpolation between i (below level) and j (above)
            frac = (level - p[i]) / (p[j] - p[i])
            edges.append(t[i] + frac * (t[j] - t[i]))
        return float(abs(edges[1] - edges[0]))

    def normalized(self) -> np.ndarray:
        return self.p_cd / self.plateau


def hom_scan(state: CorrelationState, taus: Sequence[float], delay_offset: float = 0.0) -> HomScanResult:
    """Coincidences versus idler delay; ``taus`` and ``delay_offset`` in seconds.

    The physical delay applied to the idler is ``tau + delay_offset``. The
    discrete grid makes the scan periodic in ``2 pi / delta_omega``, so the
    delay window must be shorter than that period.
    """
    grid = _require_grid(state)
    taus = np.asarray(taus, dtype=float)
    if taus.size == 0:
        raise DomainError("empty delay list")
    if np.ptp(taus) >= grid.quantization_time:
        raise DomainError(f"delay window {np.ptp(taus):.3e} s exceeds the grid period "
                          f"{grid.quantization_time:.3e} s")
    rows = []
    for tau in taus:
        out = apply_unitary(state, hom_unitary(grid, tau + delay_offset))
        pr = click_probabilities(out)
        rows.append((pr.p_cd, pr.p_c, pr.p_d))
    p_cd, p_c, p_d = (np.array(col) for col in zip(*rows))
    return HomScanResult(taus * 1e12, p_cd, p_c, p_d)


def walkoff_delay(setup: Setup) -> float:
    """Group delay of the signal relative to the idler accumulated over the waveguide."""
    wg = setup.waveguide
    return wg.length * (1.0 / wg.signal.v_g - 1.0 / wg.idler.v_g)


# --- g2 ------------------------------------------------------------------------

_BAND = {"signal": "a", "idler": "b", "a": "a", "b": "b", "s": "a", "i": "b"}


@dataclass(frozen=True)
class G2Result:
    g2_click: Optional[float]
    g2_moment: float
    subsystem: str


def _band(subsystem: str) -> str:
    try:
        return _BAND[subsystem]
    except KeyError:
        raise DomainError(f"unknown subsystem {subsystem!r}") from None


def g2_click_value(state: CorrelationState, subsystem: str) -> float:
    """Split one band on a 50:50 beamsplitter with vacuum in the other port."""
    grid = _require_grid(state)
    band = _band(subsystem)
    blocked = vacuum_substituted(state, band)
    pr = click_probabilities(apply_unitary(blocked, hom_unitary(grid, 0.0)))
    denom = pr.p_c * pr.p_d
    if denom < P_FLOOR:
        raise GainTooLowError(f"P_c * P_d = {denom:.3e} below floor; no light in {subsystem}")
    return pr.p_cd / denom


def g2_moment_value(state: CorrelationState, subsystem: str) -> float:
    """``1 + Tr(D^2) / (Tr D)^2`` of one band, equal to 1 + 1/mu of that band."""
    d = state.block("d_aa" if _band(subsystem) == "a" else "d_bb")
    tr = np.trace(d).real
    if not tr > 0:
        raise DomainError(f"{subsystem} band is in vacuum; g2 undefined")
    return float(1.0 + np.sum(np.abs(d) ** 2) / tr ** 2)


def g2_click(state: CorrelationState, subsystem: str) -> G2Result:
    return G2Result(g2_click_value(state, subsystem), g2_moment_value(state, subsystem), subsystem)


def g2_moment(state: CorrelationState, subsystem: str) -> G2Result:
    return G2Result(None, g2_moment_value(state, subsystem), subsystem)


# --- summary -------------------------------------------------------------------

def summary(state: CorrelationState, hom: Optional[HomScanResult] = None) -> dict:
    """Headline numbers in a fixed key order."""
    spec = spectrum(state)
    out = {"N_a": spec.n_a, "N_b": spec.n_b}
    if spec.n_a + spec.n_b > 0:
        mu = mode_numbers(state)
        out.update(mu_a=mu.mu_a, mu_b=mu.mu_b, mu_ab=mu.mu_ab)
        out.update(
            g2_s_click=g2_click_value(state, "signal"),
            g2_i_click=g2_click_value(state, "idler"),
            g2_s_moment=g2_moment_value(state, "signal"),
            g2_i_moment=g2_moment_value(state, "idler"),
        )
    else:
        out.update(mu_a=None, mu_b=None, mu_ab=None, g2_s_click=None, g2_i_click=None,
                   g2_s_moment=None, g2_i_moment=None)
    out["visibility"] = hom.visibility if hom is not None else None
    return out
