"""Parameter sweeps and interrogation-time optimization.

Every sweep returns a :class:`SweepResult`: an ordered list of rows (dicts)
with a fixed column order plus metadata. Grid cells are evaluated
independently and may be spread over threads; row order always follows the
grid index.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import __version__
from .errors import NumericalError
from .metrology import (
    DERIV_GUARD,
    GAUSS_TO_TESLA,
    PHASE_STEP,
    PRESETS,
    US_TO_S,
    TimingBudget,
    fisher_report,
    ramsey_sensitivity,
    sensitivity,
)
from .protocol import ProtocolParams, ramsey_signal, signal_arrays, success_probability

LOSSLESS_T2 = math.inf


@dataclass(frozen=True)
class OptimizerSettings:
    n_grid: int = 400
    resolution: float = 0.005      # us; the grid is refined to at least this spacing
    refinement_passes: int = 2
    ps_floor: float = 1e-3

    def __post_init__(self):
        if self.n_grid < 2:
            raise ValueError("n_grid must be >= 2")
        if self.refinement_passes < 0:
            raise ValueError("refinement_passes must be >= 0")


@dataclass(frozen=True)
class SweepSpec:
    """Inputs of a sweep. Unused fields are ignored by a given sweep."""

    base: ProtocolParams = field(default_factory=lambda: ProtocolParams(tau=1.0, B=1e-2))
    timing: TimingBudget = PRESETS["c13-cryo"]
    ramsey_timing: TimingBudget = PRESETS["ramsey"]
    species_timing: tuple[tuple[str, str], ...] = (("C13", "c13-cryo"), ("N15", "n15-cryo"))
    T2_values: tuple[float, ...] = tuple(np.geomspace(0.5, 20.0, 40))
    B_values: tuple[float, ...] = tuple(np.geomspace(1e-3, 1e-1, 40))
    tau_values: tuple[float, ...] = tuple(np.linspace(0.01, 5.0, 500))
    tau_range: tuple[float, float] | None = None
    optimizer: OptimizerSettings = OptimizerSettings()
    threads: int = 1

    def __post_init__(self):
        for name in ("T2_values", "B_values", "tau_values"):
            if len(getattr(self, name)) < 1:
                raise ValueError(f"{name} must not be empty")
        if self.tau_range is not None and not 0 <= self.tau_range[0] < self.tau_range[1]:
            raise ValueError("tau_range must be an increasing pair")


@dataclass
class SweepResult:
    columns: list[str]
    rows: list[dict]
    metadata: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)


def _metadata(kind: str, spec: SweepSpec, **extra) -> dict:
    meta = {"sweep": kind, "version": __version__, "threads_independent": True}
    meta.update(extra)
    return meta


def _parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# vectorized sensitivity on a tau grid

def _five_point(f, B, h):
    return (-f(B + 2 * h) + 8 * f(B + h) - 8 * f(B - h) + f(B - 2 * h)) / (12 * h)


def eta_post_grid(params: ProtocolParams, timing: TimingBudget, taus,
                  ps_floor: float = 0.0) -> np.ndarray:
    """Post-selection sensitivity (T Hz^-1/2) over an array of tau.

    Points that are insensitive or below the P_s floor are +inf.
    """
    taus = np.asarray(taus, dtype=float)
    ge = params.constants.gamma_e
    with np.errstate(divide="ignore", invalid="ignore"):
        h = PHASE_STEP / (ge * taus)
        iz, ps = signal_arrays(params, taus, params.B)
        slope = _five_point(lambda b: signal_arrays(params, taus, b)[0], params.B, h)
        spread = np.sqrt(np.clip(0.25 - iz ** 2, 0.0, None))
        t_m = (timing.t_i + taus + timing.t_p) / ps + timing.t_r
        eta = spread / np.abs(slope) * GAUSS_TO_TESLA * np.sqrt(t_m * US_TO_S)
    bad = ~(ps > max(ps_floor, 1e-15)) | ~(np.abs(slope) > DERIV_GUARD) | ~np.isfinite(eta)
    bad |= taus <= 0
    return np.where(bad, np.inf, eta)


def eta_ramsey_grid(tau_values, B: float, T2_star: float, timing: TimingBudget,
                    constants=None) -> np.ndarray:
    from .spin_core import NV_C13
    constants = constants or NV_C13
    taus = np.asarray(tau_values, dtype=float)
    ge = constants.gamma_e
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.exp(-taus / T2_star)

        def p_of(b):
            return 0.5 - d * np.cos(ge * b * taus) / 2

        h = PHASE_STEP / (ge * taus)
        p = p_of(B)
        slope = _five_point(p_of, B, h)
        t_m = timing.t_i + taus + timing.t_p
        eta = np.sqrt(np.clip(p * (1 - p), 0.0, None)) / np.abs(slope) \
            * GAUSS_TO_TESLA * np.sqrt(t_m * US_TO_S)
    bad = ~(np.abs(slope) > DERIV_GUARD) | ~np.isfinite(eta) | (taus <= 0)
    return np.where(bad, np.inf, eta)


# ---------------------------------------------------------------------------
# optimizer

def _default_range(T2_star: float) -> tuple[float, float]:
    hi = 5 * T2_star if math.isfinite(T2_star) else 10.0
    return (0.0, hi)


def _tau_grid(lo: float, hi: float, opt: OptimizerSettings) -> np.ndarray:
    n = max(opt.n_grid, math.ceil((hi - lo) / opt.resolution) + 1)
    grid = np.linspace(lo, hi, n)
    return grid[grid > 0]


def _refine(f: Callable[[float], float], grid: np.ndarray, values: np.ndarray,
            passes: int) -> tuple[float, float]:
    i = int(np.argmin(values))
    best_x, best_f = float(grid[i]), float(values[i])
    if passes == 0 or i == 0 or i == len(grid) - 1:
        return best_x, best_f
    lo, hi = float(grid[i - 1]), float(grid[i + 1])
    for _ in range(passes):
        if not (f(lo) > best_f and f(hi) > best_f):
            break
        res = minimize_scalar(f, bracket=(lo, best_x, hi), method="golden",
                              options={"xtol": 1e-10})
        if lo <= res.x <= hi and res.fun < best_f:
            best_x, best_f = float(res.x), float(res.fun)
        width = (hi - lo) / 20
        lo, hi = max(lo, best_x - width), min(hi, best_x + width)
    return best_x, best_f


def optimize_tau(params: ProtocolParams, timing: TimingBudget,
                 tau_range: tuple[float, float] | None = None,
                 settings: OptimizerSettings = OptimizerSettings(),
                 protocol: str = "post") -> tuple[float, float]:
    """Interrogation time minimizing eta, and that eta (T Hz^-1/2).

    A coarse grid (>= n_grid points) locates the best cell, then golden-section
    passes refine inside the neighbouring cells. Cells with P_s below the floor
    are excluded for the post-selection protocol.
    """
    lo, hi = tau_range or _default_range(params.T2_star)
    if math.isfinite(params.T2_star) and hi > 5 * params.T2_star * (1 + 1e-12):
        raise ValueError("tau range must lie within (0, 5 T2*]")
    grid = _tau_grid(lo, hi, settings)
    if protocol == "post":
        values = eta_post_grid(params, timing, grid, settings.ps_floor)

        def f(t):
            if not lo < t <= hi:
                return math.inf
            q = replace(params, tau=t)
            if success_probability(q) < settings.ps_floor:
                return math.inf
            try:
                return sensitivity(q, timing).eta
            except NumericalError:
                return math.inf
    elif protocol == "ramsey":
        values = eta_ramsey_grid(grid, params.B, params.T2_star, timing, params.constants)

        def f(t):
            if not lo < t <= hi:
                return math.inf
            try:
                return ramsey_sensitivity(t, params.B, params.T2_star, timing).eta
            except NumericalError:
                return math.inf
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    if not np.any(np.isfinite(values)):
        raise NumericalError("insensitive working point at every tau in the search range")
    return _refine(f, grid, values, settings.refinement_passes)


# ---------------------------------------------------------------------------
# sweeps

def _species_params(spec: SweepSpec, species: str, **changes) -> ProtocolParams:
    return replace(spec.base, species=species, A_zz=None, **changes)


def sweep_T2star(spec: SweepSpec) -> SweepResult:
    """Optimized sensitivity vs T2* for Ramsey and each species (nT Hz^-1/2)."""
    species = [s for s, _ in spec.species_timing]

    def cell(T2):
        row = {"T2_star": float(T2)}
        base = replace(spec.base, T2_star=float(T2))
        t, e = optimize_tau(base, spec.ramsey_timing, spec.tau_range, spec.optimizer, "ramsey")
        row["eta_ramsey"], row["tau_ramsey"] = e * 1e9, t
        for sp, preset in spec.species_timing:
            p = _species_params(spec, sp, T2_star=float(T2))
            t, e = optimize_tau(p, PRESETS[preset], spec.tau_range, spec.optimizer)
            row[f"eta_{sp.lower()}"], row[f"tau_{sp.lower()}"] = e * 1e9, t
        return row

    rows = _parallel_map(cell, spec.T2_values, spec.threads)
    cols = (["T2_star", "eta_ramsey"] + [f"eta_{s.lower()}" for s in species]
            + ["tau_ramsey"] + [f"tau_{s.lower()}" for s in species])
    return SweepResult(cols, rows, _metadata("T2_star", spec, B=spec.base.B,
                                             presets=dict(spec.species_timing)))


def ratio_map(spec: SweepSpec, species: str = "N15",
              timing: TimingBudget | None = None) -> SweepResult:
    """eta_post / eta_Ramsey over the (T2*, B) grid, each with its own optimal tau.

    ``timing`` is the post-selection budget (n15-cryo preset by default).
    """
    timing = timing or PRESETS["n15-cryo"]
    cells = [(float(T2), float(B)) for T2 in spec.T2_values for B in spec.B_values]

    def cell(tb):
        T2, B = tb
        p = _species_params(spec, species, T2_star=T2, B=B)
        tp, ep = optimize_tau(p, timing, spec.tau_range, spec.optimizer)
        tr, er = optimize_tau(p, spec.ramsey_timing, spec.tau_range, spec.optimizer, "ramsey")
        return {"T2_star": T2, "B": B, "ratio": ep / er,
                "tau_star_post": tp, "tau_star_ramsey": tr}

    rows = _parallel_map(cell, cells, spec.threads)
    return SweepResult(["T2_star", "B", "ratio", "tau_star_post", "tau_star_ramsey"], rows,
                       _metadata("ratio_map", spec, species=species))


def sweep_B_fixed_tau(spec: SweepSpec) -> SweepResult:
    """Sensitivity vs field at fixed interrogation times (no losses)."""
    cells = [(float(t), float(B)) for t in spec.tau_values for B in spec.B_values]

    def cell(tb):
        tau, B = tb
        p = replace(spec.base, tau=tau, B=B, T2_star=LOSSLESS_T2)
        r = sensitivity(p, spec.timing)
        return {"tau": tau, "B": B, "eta": r.eta_nT, "eta_C": r.eta_C_nT,
                "P_s": r.P_s, "delta_B": r.delta_B}

    rows = _parallel_map(cell, cells, spec.threads)
    return SweepResult(["tau", "B", "eta", "eta_C", "P_s", "delta_B"], rows,
                       _metadata("B_fixed_tau", spec))


def fisher_vs_time(spec: SweepSpec, T2_values: Sequence[float] = (LOSSLESS_T2, 2.0)) -> SweepResult:
    """Fisher information curves over the tau grid, for each T2* given."""
    cells = [(float(T2), float(t)) for T2 in T2_values for t in spec.tau_values]

    def cell(tt):
        T2, tau = tt
        r = fisher_report(replace(spec.base, tau=tau, T2_star=T2))
        return {"T2_star": T2, "tau": tau, "F_ramsey": r.F_ramsey, "F_Q_probe": r.F_Q_probe,
                "F_ps": r.F_ps, "F_Q_post": r.F_Q_post, "F_classical": r.F_classical}

    rows = _parallel_map(cell, cells, spec.threads)
    return SweepResult(["T2_star", "tau", "F_ramsey", "F_Q_probe", "F_ps", "F_Q_post",
                        "F_classical"], rows, _metadata("fisher", spec))


def signal_vs_time(params: ProtocolParams, taus: Sequence[float]) -> SweepResult:
    """Post-selected signal, P_s and references on a tau grid."""
    from .protocol import PostSelectionImpossible, signal_Iz_symmetric, signal_numeric

    rows = []
    for tau in taus:
        p = replace(params, tau=float(tau))
        try:
            iz, ps = signal_numeric(p)
        except PostSelectionImpossible:
            iz, ps = math.nan, 0.0
        try:
            sym = signal_Iz_symmetric(p.tau, p.B, p)
        except NumericalError:
            sym = math.nan
        rows.append({"tau": p.tau, "Iz_postselected": iz, "Ps": ps,
                     "Iz_symmetric_closed_form": sym,
                     "ramsey_signal": ramsey_signal(p.tau, p.B, p.T2_star, p.constants)})
    return SweepResult(["tau", "Iz_postselected", "Ps", "Iz_symmetric_closed_form",
                        "ramsey_signal"], rows, {"sweep": "signal", "version": __version__})
