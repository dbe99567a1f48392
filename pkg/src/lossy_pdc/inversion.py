"""Loss estimation from measured g2 of signal and idler.

The forward model maps ``(alpha_bar, r)`` to ``(g2_s, g2_i, R_N)``; the inverse
is found by scanning a sampled grid, then Newton iterations on the model itself.
"""

from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import minimize

from .config import PhysicsConfig, config_hash
from .measurement import g2_click_value, g2_moment_value, spectrum
from .physics import DomainError
from .propagation import IntegratorConfig, propagate


class CalibrationError(ArithmeticError):
    pass


class InversionError(ArithmeticError):
    pass


class NoIntersectionError(InversionError):
    """The measured g2 pair is not reproduced anywhere on the grid."""


class AmbiguityError(InversionError):
    """Several well-separated loss values reproduce the measurement."""

    def __init__(self, message, candidates):
        super().__init__(message)
        self.candidates = candidates


@dataclass(frozen=True)
class LossParams:
    alpha_bar: float
    r: float

    def __post_init__(self):
        if not np.isfinite(self.alpha_bar) or self.alpha_bar < 0:
            raise DomainError(f"alpha_bar must be >= 0, got {self.alpha_bar}")
        if not abs(self.r) < 1:
            raise DomainError(f"|r| must be < 1, got {self.r}")

    @property
    def alpha_s(self) -> float:
        return self.alpha_bar * (1.0 + self.r)

    @property
    def alpha_i(self) -> float:
        return self.alpha_bar * (1.0 - self.r)

    @classmethod
    def from_alphas(cls, alpha_s: float, alpha_i: float) -> "LossParams":
        bar = 0.5 * (alpha_s + alpha_i)
        return cls(bar, 0.0 if bar == 0 else (alpha_s - alpha_i) / (2 * bar))


def relative_photon_imbalance(n_s: float, n_i: float) -> float:
    total = n_s + n_i
    if not total > 0:
        raise DomainError("no photons; R_N undefined")
    return (n_i - n_s) / total


@dataclass(frozen=True)
class ForwardValues:
    g2_s: float
    g2_i: float
    r_n: float

    def as_array(self) -> np.ndarray:
        return np.array([self.g2_s, self.g2_i, self.r_n])


@dataclass(frozen=True)
class ForwardModel:
    """Physics (losses ignored), resolution and calibrated gamma for one forward map."""

    physics: PhysicsConfig
    integrator: IntegratorConfig
    gamma: float
    g2_definition: str = "click"

    def __post_init__(self):
        if self.g2_definition not in ("click", "moment"):
            raise DomainError(f"unknown g2 definition {self.g2_definition!r}")
        if not self.gamma > 0:
            raise DomainError("forward map needs gamma > 0")

    def fingerprint(self) -> str:
        phys = asdict(self.physics)
        phys["waveguide"].pop("alpha_s_db_cm")
        phys["waveguide"].pop("alpha_i_db_cm")
        phys["waveguide"].pop("gamma_per_m")
        return config_hash({"physics": phys, "integrator": asdict(self.integrator),
                            "gamma": self.gamma, "g2": self.g2_definition})

    def __call__(self, params: LossParams) -> ForwardValues:
        return forward_map(self, params)


def forward_map(model: ForwardModel, params: LossParams) -> ForwardValues:
    setup = model.physics.with_losses(params.alpha_s, params.alpha_i).build_setup(model.gamma)
    state = propagate(setup, model.integrator, frame="interaction")
    g2 = g2_click_value if model.g2_definition == "click" else g2_moment_value
    spec = spectrum(state)
    return ForwardValues(g2(state, "signal"), g2(state, "idler"),
                         relative_photon_imbalance(spec.n_a, spec.n_b))


# --- calibration ---------------------------------------------------------------

def lossless_photons(physics: PhysicsConfig, integrator: IntegratorConfig, gamma: float) -> float:
    setup = physics.with_losses(0.0, 0.0).build_setup(gamma)
    return propagate(setup, integrator, frame="interaction").total_photons()


def calibrate_gamma(physics: PhysicsConfig, integrator: IntegratorConfig, target: float,
                    rel_tol: float = 1e-4, max_refinements: int = 4) -> float:
    """Gamma giving ``target`` photons in the lossless waveguide.

    Uses ``N ~ gamma^2`` at low gain: one trial run, a rescale, then verification
    runs until the relative error drops below ``rel_tol``.
    """
    if target < 0:
        raise CalibrationError("target photon number must be non-negative")
    if target == 0:
        return 0.0
    gamma = 1e-3 / (physics.waveguide.length_mm * 1e-3)
    n = lossless_photons(physics, integrator, gamma)
    while n > 1e-2:
        gamma *= 0.1
        n = lossless_photons(physics, integrator, gamma)
    if not n > 0:
        raise CalibrationError("trial run produced no photons")
    for _ in range(max_refinements + 1):
        gamma *= np.sqrt(target / n)
        n = lossless_photons(physics, integrator, gamma)
        if abs(n / target - 1.0) < rel_tol:
            return float(gamma)
    raise CalibrationError(f"calibration did not converge: N = {n:.6e} for target {target:.6e}")


# --- grid ------------------------------------------------------------------------

def _cell(args):
    model, a, r = args
    try:
        return forward_map(model, LossParams(a, r)).as_array(), None
    except (ArithmeticError, ValueError) as exc:
        return np.full(3, np.nan), f"{type(exc).__name__}: {exc}"


@dataclass(frozen=True)
class ForwardMapGrid:
    alpha_bar: np.ndarray
    r: np.ndarray
    g2_s: np.ndarray
    g2_i: np.ndarray
    r_n: np.ndarray
    metadata: dict
    errors: dict = field(default_factory=dict)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.g2_s) & np.isfinite(self.g2_i) & np.isfinite(self.r_n)

    @property
    def shape(self) -> tuple[int, int]:
        return self.alpha_bar.size, self.r.size

    def interpolator(self, which: str) -> RegularGridInterpolator:
        if self.alpha_bar.size < 2 or self.r.size < 2:
            raise InversionError("interpolation needs at least 2 points per axis")
        return RegularGridInterpolator((self.alpha_bar, self.r), getattr(self, which),
                                       method="linear", bounds_error=False, fill_value=None)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = json.dumps({"metadata": self.metadata, "errors": self.errors}, sort_keys=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz.tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                np.savez(fh, alpha_bar=self.alpha_bar, r=self.r, g2_s=self.g2_s, g2_i=self.g2_i,
                         r_n=self.r_n, meta=np.array(meta))
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    @classmethod
    def load(cls, path) -> "ForwardMapGrid":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            return cls(z["alpha_bar"], z["r"], z["g2_s"], z["g2_i"], z["r_n"],
                       meta["metadata"], {k: v for k, v in meta["errors"].items()})


def grid_key(model: ForwardModel, alpha_axis, r_axis) -> str:
    return config_hash({"model": model.fingerprint(),
                        "alpha_bar": [float(a) for a in alpha_axis],
                        "r": [float(x) for x in r_axis]})


def build_forward_grid(model: ForwardModel, alpha_range=(0.0, 30.0), r_range=(-0.9, 0.9),
                       resolution=(61, 61), jobs: int = 1, cache_dir=None) -> ForwardMapGrid:
    """Sample the forward map on a regular ``(alpha_bar, r)`` grid.

    A 1-point axis uses the lower end of its range. Failed cells hold NaN and
    their error message is kept in ``errors`` under ``"i,j"``.
    """
    n_a, n_r = resolution
    if n_a < 1 or n_r < 1:
        raise DomainError("resolution must be positive")
    if alpha_range[0] < 0 or alpha_range[1] < alpha_range[0]:
        raise DomainError("bad alpha_bar range")
    if not (-1 < r_range[0] <= r_range[1] < 1):
        raise DomainError("bad r range")
    alpha_axis = np.linspace(*alpha_range, n_a) if n_a > 1 else np.array([float(alpha_range[0])])
    r_axis = np.linspace(*r_range, n_r) if n_r > 1 else np.array([float(r_range[0])])
    key = grid_key(model, alpha_axis, r_axis)
    cache_path = Path(cache_dir) / f"forward_grid_{key[:16]}.npz" if cache_dir else None
    if cache_path is not None and cache_path.exists():
        cached = ForwardMapGrid.load(cache_path)
        if cached.metadata.get("key") == key:
            return cached

    tasks = [(model, float(a), float(r)) for a in alpha_axis for r in r_axis]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_cell(t) for t in tasks]
    values = np.array([v for v, _ in results]).reshape(n_a, n_r, 3)
    errors = {f"{k // n_r},{k % n_r}": msg for k, (_, msg) in enumerate(results) if msg}
    metadata = {
        "key": key,
        "model": model.fingerprint(),
        "gamma": model.gamma,
        "n_points": model.physics.grid.n_points,
        "steps": model.integrator.step_count,
        "g2_definition": model.g2_definition,
    }
    grid = ForwardMapGrid(alpha_axis, r_axis, values[..., 0].copy(), values[..., 1].copy(),
                          values[..., 2].copy(), metadata, errors)
    if cache_path is not None:
        grid.save(cache_path)
    return grid


def isolines(grid: ForwardMapGrid, levels: dict) -> dict:
    """Contour polylines ``{name: [[[alpha_bar, r], ...], ...]}`` for each surface level."""
    import contourpy

    out = {}
    for name, level in levels.items():
        if level is None:
            continue
        z = np.where(grid.valid, getattr(grid, name), np.nan)
        gen = contourpy.contour_generator(grid.r, grid.alpha_bar, z)
        out[name] = {"level": float(level),
                     "lines": [np.asarray(line)[:, ::-1].tolist() for line in gen.lines(level)]}
    return out


# --- inversion -------------------------------------------------------------------

@dataclass(frozen=True)
class InversionSettings:
    tol: float = 1e-4
    measurement_error: float = 0.02
    r_n_tolerance: float = 0.05
    max_iterations: int = 30
    fd_step: float = 1e-3
    separation: float = 0.1
    r_bound: float = 0.99


@dataclass(frozen=True)
class LossEstimate:
    params: LossParams
    residual_g2: tuple
    r_n_predicted: float
    r_n_consistency: dict
    status: str
    iterations: int
    seed: LossParams

    def to_json(self) -> dict:
        return {
            "alpha_bar_db_cm": self.params.alpha_bar,
            "r": self.params.r,
            "alpha_s_db_cm": self.params.alpha_s,
            "alpha_i_db_cm": self.params.alpha_i,
            "residual_g2": list(self.residual_g2),
            "r_n_predicted": self.r_n_predicted,
            "r_n_consistency": self.r_n_consistency,
            "status": self.status,
            "iterations": self.iterations,
            "seed": {"alpha_bar_db_cm": self.seed.alpha_bar, "r": self.seed.r},
        }


def _local_minima(res: np.ndarray) -> list[tuple[int, int]]:
    padded = np.pad(res, 1, constant_values=np.inf)
    out = []
    for i in range(res.shape[0]):
        for j in range(res.shape[1]):
            v = res[i, j]
            if np.isfinite(v) and v <= padded[i:i + 3, j:j + 3].min():
                out.append((i, j))
    return out


def seed_candidates(grid: ForwardMapGrid, target: np.ndarray, settings: InversionSettings):
    """Minima of the interpolated g2 residual that lie within the measurement error.

    Returns ``(alpha_bar, r, residual)`` tuples, well-separated, best first.
    """
    res = np.hypot(grid.g2_s - target[0], grid.g2_i - target[1])
    res = np.where(grid.valid, res, np.inf)
    if not np.isfinite(res).any():
        raise InversionError("grid has no valid cells")
    if grid.alpha_bar.size < 2 or grid.r.size < 2:
        i, j = np.unravel_index(np.argmin(res), res.shape)
        cands = [(float(grid.alpha_bar[i]), float(grid.r[j]), float(res[i, j]))]
        return [c for c in cands if c[2] <= settings.measurement_error]

    f_s, f_i = grid.interpolator("g2_s"), grid.interpolator("g2_i")
    a_lo, a_hi = grid.alpha_bar[0], grid.alpha_bar[-1]
    r_lo, r_hi = grid.r[0], grid.r[-1]
    scale = np.array([a_hi - a_lo, r_hi - r_lo])

    def objective(x):
        p = np.array([[x[0] * scale[0] + a_lo, x[1] * scale[1] + r_lo]])
        return float((f_s(p)[0] - target[0]) ** 2 + (f_i(p)[0] - target[1]) ** 2)

    polished = []
    for i, j in _local_minima(res):
        x0 = np.array([(grid.alpha_bar[i] - a_lo) / scale[0], (grid.r[j] - r_lo) / scale[1]])
        opt = minimize(objective, x0, method="L-BFGS-B", bounds=[(0, 1), (0, 1)],
                       options={"ftol": 1e-14, "gtol": 1e-12})
        x = opt.x if opt.fun <= objective(x0) else x0
        polished.append((x, np.sqrt(min(opt.fun, objective(x0)))))
    polished.sort(key=lambda t: (t[1], t[0][0], t[0][1]))
    kept: list = []
    for x, r in polished:
        if r > settings.measurement_error:
            continue
        if all(np.linalg.norm(x - y) > settings.separation for y, _ in kept):
            kept.append((x, r))
    return [(float(x[0] * scale[0] + a_lo), float(x[1] * scale[1] + r_lo), float(r)) for x, r in kept]


def _clip(x, settings):
    return np.array([max(x[0], 0.0), float(np.clip(x[1], -settings.r_bound, settings.r_bound))])


def newton_solve(model: ForwardModel, target: np.ndarray, x0, settings: InversionSettings):
    """Damped Newton on ``(g2_s, g2_i)(alpha_bar, r) = target`` with a forward-difference Jacobian."""

    def evaluate(x):
        v = forward_map(model, LossParams(x[0], x[1]))
        return v, np.array([v.g2_s, v.g2_i]) - target

    x = _clip(np.asarray(x0, dtype=float), settings)
    val, f = evaluate(x)
    it = 0
    while np.max(np.abs(f)) >= settings.tol and it < settings.max_iterations:
        it += 1
        jac = np.empty((2, 2))
        for k, floor in enumerate((1.0, 1.0)):
            h = settings.fd_step * max(abs(x[k]), floor)
            xp = x.copy()
            xp[k] += h
            if k == 1 and xp[1] > settings.r_bound:
                h = -h
                xp[1] = x[1] + h
            jac[:, k] = (evaluate(xp)[1] - f) / h
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            raise InversionError(f"singular Jacobian at alpha_bar={x[0]:.6g}, r={x[1]:.6g}") from None
        lam = 1.0
        norm0 = np.linalg.norm(f)
        while True:
            xn = _clip(x + lam * dx, settings)
            vn, fn = evaluate(xn)
            if np.linalg.norm(fn) < norm0 or lam < 1.0 / 64:
                break
            lam *= 0.5
        x, val, f = xn, vn, fn
    status = "converged" if np.max(np.abs(f)) < settings.tol else "not-converged"
    return x, val, f, it, status


def invert_losses(model: ForwardModel, grid: ForwardMapGrid, g2_s: float, g2_i: float,
                  r_n: Optional[float] = None,
                  settings: InversionSettings = InversionSettings()) -> LossEstimate:
    target = np.array([g2_s, g2_i], dtype=float)
    cands = seed_candidates(grid, target, settings)
    if not cands:
        raise NoIntersectionError(
            f"no grid point reproduces g2 = ({g2_s}, {g2_i}) within {settings.measurement_error}")
    if len(cands) > 1:
        listing = "; ".join(f"(alpha_bar={a:.4g}, r={r:.4g}, residual={e:.2e})" for a, r, e in cands)
        raise AmbiguityError(f"{len(cands)} separated solutions: {listing}",
                             [LossParams(a, r) for a, r, _ in cands])
    a0, r0, _ = cands[0]
    x, val, f, it, status = newton_solve(model, target, (a0, r0), settings)
    if r_n is None:
        verdict = {"verdict": "not-checked", "tolerance": settings.r_n_tolerance, "measured": None}
    else:
        ok = abs(val.r_n - r_n) <= settings.r_n_tolerance
        verdict = {"verdict": "pass" if ok else "fail", "tolerance": settings.r_n_tolerance,
                   "measured": float(r_n)}
        if not ok:
            verdict["note"] = "predicted R_N disagrees; prior knowledge about the waveguide is not correct"
    return LossEstimate(LossParams(float(x[0]), float(x[1])), (float(f[0]), float(f[1])),
                        float(val.r_n), verdict, status, it, LossParams(a0, r0))
