"""Undisplaced multimode Gaussian states described by second-order moments.

A state over ``M`` bosonic modes ``c_1..c_M`` is the pair

    D[i, j] = <c_i^dag c_j>      (Hermitian, PSD)
    C[i, j] = <c_i c_j>          (complex symmetric)

For PDC states the first ``N`` modes are the signal (a) and the last ``N`` the
idler (b). Covariance matrices use hbar = 2 and the ordering (q_1..q_M, p_1..p_M).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .physics import DomainError, FrequencyGrid

PHYSICALITY_TOL = 1e-8


class ContractViolation(ValueError):
    """Input breaks a documented precondition (shape, unitarity, ...)."""


class NumericalDomainError(ArithmeticError):
    """A quantity that must be positive definite is not."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CorrelationState:
    d_matrix: np.ndarray
    c_matrix: np.ndarray
    z_position: float = 0.0
    grid: Optional[FrequencyGrid] = None
    frame: str = "lab"

    def __post_init__(self):
        d = _frozen(self.d_matrix)
        c = _frozen(self.c_matrix)
        if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape != c.shape:
            raise ContractViolation(f"moment matrices must be square and equal-sized, got {d.shape}, {c.shape}")
        object.__setattr__(self, "d_matrix", d)
        object.__setattr__(self, "c_matrix", c)

    @classmethod
    def vacuum(cls, n_modes: int, **kw) -> "CorrelationState":
        z = np.zeros((n_modes, n_modes), dtype=complex)
        return cls(z, z, **kw)

    @classmethod
    def thermal(cls, nbars: Sequence[float]) -> "CorrelationState":
        nbars = np.asarray(nbars, dtype=float)
        return cls(np.diag(nbars), np.zeros((len(nbars), len(nbars))))

    @classmethod
    def two_mode_squeezed(cls, r: float, phase: float = 0.0) -> "CorrelationState":
        """``|TMSV>`` on modes (a, b); <ab> = e^{i phase} sinh r cosh r."""
        s2 = np.sinh(r) ** 2
        cab = np.exp(1j * phase) * np.sinh(r) * np.cosh(r)
        return cls(np.diag([s2, s2]), np.array([[0, cab], [cab, 0]]))

    @classmethod
    def from_blocks(cls, d_aa, d_bb, c_ab, **kw) -> "CorrelationState":
        """Assemble a type-II PDC state from its three non-vanishing blocks."""
        n = d_aa.shape[0]
        d = np.zeros((2 * n, 2 * n), dtype=complex)
        c = np.zeros((2 * n, 2 * n), dtype=complex)
        d[:n, :n] = d_aa
        d[n:, n:] = d_bb
        c[:n, n:] = c_ab
        c[n:, :n] = c_ab.T
        return cls(d, c, **kw)

    @property
    def n_modes(self) -> int:
        return self.d_matrix.shape[0]

    @property
    def n_band(self) -> int:
        """Modes per band when the state is a signal/idler pair."""
        return self.n_modes // 2

    def block(self, which: str) -> np.ndarray:
        """Named N x N block, e.g. ``"d_aa"``, ``"c_ab"``, ``"d_ba"``."""
        kind, sub = which.split("_")
        mat = {"d": self.d_matrix, "c": self.c_matrix}[kind]
        n = self.n_band
        sl = {"a": slice(0, n), "b": slice(n, 2 * n)}
        return mat[sl[sub[0]], sl[sub[1]]]

    def select(self, modes) -> "CorrelationState":
        """Reduced state on ``modes`` (Gaussian partial trace = row/column deletion)."""
        idx = np.asarray(modes, dtype=int).ravel()
        if idx.size == 0:
            raise DomainError("empty mode selection")
        sub = np.ix_(idx, idx)
        return CorrelationState(self.d_matrix[sub], self.c_matrix[sub], self.z_position, None, self.frame)

    def signal(self) -> "CorrelationState":
        return self.select(np.arange(self.n_band))

    def idler(self) -> "CorrelationState":
        return self.select(np.arange(self.n_band, 2 * self.n_band))

    def photon_numbers(self) -> np.ndarray:
        return self.d_matrix.diagonal().real.copy()

    def total_photons(self) -> float:
        return float(np.trace(self.d_matrix).real)

    def hermiticity_drift(self) -> float:
        d, c = self.d_matrix, self.c_matrix
        return float(max(np.abs(d - d.conj().T).max(), np.abs(c - c.T).max()))


def vacuum_substituted(state: CorrelationState, keep: str) -> CorrelationState:
    """Replace one band by fresh vacuum, keeping ``"a"`` (signal) or ``"b"`` (idler)."""
    if keep not in ("a", "b"):
        raise DomainError(f"keep must be 'a' or 'b', got {keep!r}")
    n = state.n_band
    mask = np.zeros(2 * n, dtype=bool)
    mask[:n] = keep == "a"
    mask[n:] = keep == "b"
    both = np.outer(mask, mask)
    return CorrelationState(np.where(both, state.d_matrix, 0), np.where(both, state.c_matrix, 0),
                            state.z_position, state.grid, state.frame)


def _check_unitary(u: np.ndarray, tol: float):
    err = np.abs(u.conj().T @ u - np.eye(u.shape[0])).max()
    if err > tol:
        raise ContractViolation(f"matrix is not unitary: max|u^dag u - 1| = {err:.3e}")


def apply_unitary(state: CorrelationState, u: np.ndarray, tol: float = 1e-10) -> CorrelationState:
    """Moments after the passive mode transformation ``c -> u c``."""
    u = np.asarray(u, dtype=complex)
    if u.shape != (state.n_modes, state.n_modes):
        raise ContractViolation(f"unitary shape {u.shape} does not match {state.n_modes} modes")
    _check_unitary(u, tol)
    f = u.conj() @ state.d_matrix @ u.T
    e = u @ state.c_matrix @ u.T
    f = 0.5 * (f + f.conj().T)
    e = 0.5 * (e + e.T)
    return CorrelationState(f, e, state.z_position, state.grid, state.frame)


@dataclass(frozen=True)
class CovarianceMatrix:
    """Real symmetric quadrature covariance, hbar = 2, ordering (q..., p...).

    ``half_excess`` is ``(sigma - 1) / 2`` computed directly from the moments; it
    keeps full relative precision for nearly-vacuum states.
    """

    sigma: np.ndarray
    half_excess: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def n_modes(self) -> int:
        return self.sigma.shape[0] // 2


def _half_excess(d: np.ndarray, c: np.ndarray) -> np.ndarray:
    m = d.shape[0]
    out = np.empty((2 * m, 2 * m))
    qp = (c.imag - d.imag).T
    out[:m, :m] = d.real + c.real
    out[m:, m:] = d.real - c.real
    out[:m, m:] = qp
    out[m:, :m] = qp.T
    return 0.5 * (out + out.T)


def covariance_from_correlations(state: CorrelationState, modes=None) -> CovarianceMatrix:
    if modes is not None:
        state = state.select(modes)
    if state.n_modes == 0:
        raise DomainError("empty mode selection")
    ex = _half_excess(state.d_matrix, state.c_matrix)
    sigma = np.eye(ex.shape[0]) + 2.0 * ex
    return CovarianceMatrix(sigma, ex)


def correlations_from_covariance(cov: CovarianceMatrix) -> CorrelationState:
    """Invert :func:`covariance_from_correlations`."""
    ex = cov.half_excess if cov.half_excess is not None else 0.5 * (cov.sigma - np.eye(cov.sigma.shape[0]))
    m = ex.shape[0] // 2
    qq, pp, pq = ex[:m, :m], ex[m:, m:], ex[m:, :m]
    re_d = 0.5 * (qq + pp)
    re_c = 0.5 * (qq - pp)
    # pq = Im C - Im D with Im C symmetric and Im D antisymmetric
    im_c = 0.5 * (pq + pq.T)
    im_d = -0.5 * (pq - pq.T)
    return CorrelationState(re_d + 1j * im_d, re_c + 1j * im_c)


def symplectic_eigenvalues(cov: CovarianceMatrix) -> np.ndarray:
    """Sorted symplectic spectrum (each value once)."""
    sigma = 0.5 * (cov.sigma + cov.sigma.T)
    m = sigma.shape[0] // 2
    w, v = np.linalg.eigh(sigma)
    if w.min() <= 0:
        raise NumericalDomainError("covariance matrix is not positive definite")
    root = (v * np.sqrt(w)) @ v.T
    omega = np.block([[np.zeros((m, m)), np.eye(m)], [-np.eye(m), np.zeros((m, m))]])
    h = 1j * root @ omega @ root
    nu = np.linalg.eigvalsh(0.5 * (h + h.conj().T))
    return np.sort(nu[m:])


def log_vacuum_fidelity(cov: CovarianceMatrix) -> float:
    """``log F(sigma)`` with ``F = 2^M / sqrt(det(sigma + 1))``.

    Evaluated as ``-1/2 sum log1p(eig((sigma - 1) / 2))`` so that states close to
    vacuum keep full relative precision in ``1 - F``.
    """
    ex = cov.half_excess
    if ex is None:
        ex = 0.5 * (cov.sigma - np.eye(cov.sigma.shape[0]))
    lam = np.linalg.eigvalsh(0.5 * (ex + ex.T))
    if lam.min() <= -1.0:
        raise NumericalDomainError("sigma + 1 is not positive definite")
    return -0.5 * float(np.sum(np.log1p(lam)))


def vacuum_fidelity(cov: CovarianceMatrix) -> float:
    return float(np.exp(log_vacuum_fidelity(cov)))


@dataclass(frozen=True)
class MercerWolfDecomposition:
    v_a: np.ndarray
    v_b: np.ndarray
    eigenvalues_a: np.ndarray
    eigenvalues_b: np.ndarray
    cross_block: np.ndarray

    def cross_offdiag_ratio(self) -> float:
        """``||offdiag(<AB>)|| / ||diag(<AB>)||`` (Frobenius)."""
        x = self.cross_block
        diag = np.linalg.norm(np.diag(x))
        off = np.linalg.norm(x - np.diag(np.diag(x)))
        return float(off / diag) if diag > 0 else float("inf")


def _sorted_eigh(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    # fix the gauge: dominant component of every eigenvector real positive
    dom = np.abs(v).argmax(axis=0)
    ph = v[dom, np.arange(v.shape[1])]
    v = v * (np.abs(ph) / ph)[None, :]
    return w, v


def mercer_wolf(state: CorrelationState) -> MercerWolfDecomposition:
    w_a, v_a = _sorted_eigh(state.block("d_aa"))
    w_b, v_b = _sorted_eigh(state.block("d_bb"))
    cross = v_a.T @ state.block("c_ab") @ v_b
    return MercerWolfDecomposition(v_a, v_b, w_a, w_b, cross)


def mode_number(occupations) -> float:
    """Participation ratio ``(sum n)^2 / sum n^2`` of mode occupations."""
    n = np.asarray(occupations, dtype=float).ravel()
    total = n.sum()
    if not total > 0:
        raise DomainError("mode number is undefined for vacuum (all occupations zero)")
    p = n / total
    return float(1.0 / np.dot(p, p))


@dataclass(frozen=True)
class ModeNumbers:
    mu_ab: float
    mu_a: float
    mu_b: float


def mode_numbers(state: CorrelationState) -> ModeNumbers:
    mw = mercer_wolf(state)
    return ModeNumbers(
        mu_ab=mode_number(np.concatenate([mw.eigenvalues_a, mw.eigenvalues_b])),
        mu_a=mode_number(mw.eigenvalues_a),
        mu_b=mode_number(mw.eigenvalues_b),
    )


# --- serialization -------------------------------------------------------

_MAGIC = b"LPDCSTATE1\n"


def _header(state: CorrelationState) -> dict:
    return {
        "dims": [state.n_modes, state.n_modes],
        "z": state.z_position,
        "grid": state.grid.describe() if state.grid is not None else None,
        "frame": state.frame,
        "dtype": "complex128-le",
        "order": "row-major",
    }


def _grid_from(desc) -> Optional[FrequencyGrid]:
    return FrequencyGrid(**desc) if desc else None


def state_to_bytes(state: CorrelationState) -> bytes:
    head = json.dumps(_header(state), sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", len(head)))
    buf.write(head)
    for mat in (state.d_matrix, state.c_matrix):
        buf.write(np.ascontiguousarray(mat, dtype="<c16").tobytes())
    return buf.getvalue()


def state_from_bytes(blob: bytes) -> CorrelationState:
    if not blob.startswith(_MAGIC):
        raise ValueError("not a correlation-state container")
    pos = len(_MAGIC)
    (hlen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    head = json.loads(blob[pos:pos + hlen])
    pos += hlen
    n = head["dims"][0]
    size = n * n * 16
    d = np.frombuffer(blob, dtype="<c16", count=n * n, offset=pos).reshape(n, n)
    c = np.frombuffer(blob, dtype="<c16", count=n * n, offset=pos + size).reshape(n, n)
    return CorrelationState(d, c, head["z"], _grid_from(head["grid"]), head["frame"])


def state_to_json(state: CorrelationState) -> dict:
    out = _header(state)
    for name, mat in (("d", state.d_matrix), ("c", state.c_matrix)):
        out[f"{name}_real"] = mat.real.tolist()
        out[f"{name}_imag"] = mat.imag.tolist()
    return out


def state_from_json(obj: dict) -> CorrelationState:
    d = np.array(obj["d_real"]) + 1j * np.array(obj["d_imag"])
    c = np.array(obj["c_real"]) + 1j * np.array(obj["c_imag"])
    return CorrelationState(d, c, obj["z"], _grid_from(obj["grid"]), obj["frame"])
