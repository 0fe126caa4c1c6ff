"""Field uncertainty, sensitivity, and (quantum) Fisher information.

Fields are in Gauss internally; sensitivities are reported in T Hz^-1/2
(nT Hz^-1/2 helpers are provided for tables).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import InsensitiveWorkingPoint, NumericalError
from .protocol import (
    ProtocolParams,
    dephased_density,
    post_select,
    post_select_density,
    probe_state,
    ramsey_signal,
    signal_Iz,
    signal_Iz_symmetric,
    success_probability,
)

GAUSS_TO_TESLA = 1e-4
US_TO_S = 1e-6
DERIV_GUARD = 1e-15
# finite-difference steps are chosen so gamma_e * h * tau ~ PHASE_STEP
PHASE_STEP = 1e-6


@dataclass(frozen=True)
class TimingBudget:
    """Per-run overheads in us; C is the readout efficiency factor."""

    t_i: float
    t_p: float
    t_r: float
    C: float = 1.0

    def __post_init__(self):
        for name in ("t_i", "t_p", "t_r"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 < self.C <= 1:
            raise ValueError("C must be in (0, 1]")

    def with_(self, **changes) -> TimingBudget:
        return replace(self, **changes)

    def total_time(self, tau: float, P_s: float | None = None) -> float:
        """Post-selection time N (t_i + tau + t_p) + t_r, or Ramsey time if P_s is None."""
        if P_s is None:
            return self.t_i + tau + self.t_p
        return (self.t_i + tau + self.t_p) / P_s + self.t_r


PRESETS = {
    "c13-cryo": TimingBudget(t_i=6.0, t_p=3.7, t_r=5.7),
    "n15-cryo": TimingBudget(t_i=1.0, t_p=3.7, t_r=4.2),
    "room-temp": TimingBudget(t_i=1.0, t_p=5000.0, t_r=8000.0, C=0.707),
    "ramsey": TimingBudget(t_i=1.0, t_p=3.7, t_r=0.0),
}

PRESET_SPECIES = {"c13-cryo": "C13", "n15-cryo": "N15", "room-temp": "N15"}


@dataclass(frozen=True)
class SensitivityResult:
    delta_B: float          # G
    eta: float              # T Hz^-1/2
    eta_C: float
    t_m: float              # us
    N: float
    P_s: float
    tau: float

    @property
    def delta_B_tesla(self) -> float:
        return self.delta_B * GAUSS_TO_TESLA

    @property
    def eta_nT(self) -> float:
        return self.eta * 1e9

    @property
    def eta_C_nT(self) -> float:
        return self.eta_C * 1e9


def field_step(params: ProtocolParams, tau: float | None = None) -> float:
    tau = params.tau if tau is None else tau
    if tau <= 0:
        return 1e-9
    return PHASE_STEP / (params.constants.gamma_e * tau)


def derivative(f: Callable[[float], float], x: float, h: float) -> float:
    """Five-point central difference."""
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


# ---------------------------------------------------------------------------
# uncertainty and sensitivity

def delta_Iz(mean_Iz: float) -> float:
    if abs(mean_Iz) > 0.5 + 1e-12:
        raise ValueError(f"|<I_z>| = {abs(mean_Iz)!r} exceeds 1/2")
    return math.sqrt(max(0.25 - mean_Iz ** 2, 0.0))


def _signal_at(params: ProtocolParams) -> Callable[[float], float]:
    return lambda b: signal_Iz(replace(params, B=b))


def dIz_dB_symmetric(params: ProtocolParams) -> float:
    """Analytic field derivative of the lossless symmetric-angle signal."""
    a = params.A_zz * params.tau / 2
    ge = params.constants.gamma_e
    b = ge * params.B * params.tau
    den = math.cos(a) * math.cos(b) + 1
    # d/db of -sin a sin b / (2 (cos a cos b + 1)) = -sin a (cos b + cos a) / (2 den^2)
    return -math.sin(a) * (math.cos(b) + math.cos(a)) / (2 * den ** 2) * ge * params.tau


def is_symmetric_lossless(params: ProtocolParams) -> bool:
    h = math.pi / 2
    return (params.alpha == h and params.theta_i == h and params.theta_f == h
            and math.isinf(params.T2_star))


def delta_B(params: ProtocolParams, method: str = "finite-difference") -> float:
    """Field standard deviation Delta I_z / |d<I_z>/dB| in G."""
    if method == "analytic":
        if not is_symmetric_lossless(params):
            raise ValueError("analytic derivative only for the lossless symmetric configuration")
        mean = signal_Iz_symmetric(params.tau, params.B, params)
        slope = dIz_dB_symmetric(params)
    elif method == "finite-difference":
        mean = signal_Iz(params)
        slope = derivative(_signal_at(params), params.B, field_step(params))
    else:
        raise ValueError(f"unknown method {method!r}")
    if abs(slope) < DERIV_GUARD:
        raise InsensitiveWorkingPoint(f"insensitive working point (d<I_z>/dB = {slope:.3g})")
    return delta_Iz(mean) / abs(slope)


def ramsey_delta_B(tau: float, B: float, T2_star: float = math.inf,
                   constants=None) -> float:
    """Field standard deviation of a Ramsey readout with two projective outcomes."""
    from .spin_core import NV_C13
    constants = constants or NV_C13
    if tau <= 0:
        raise InsensitiveWorkingPoint("insensitive working point (tau = 0)")
    p = ramsey_signal(tau, B, T2_star, constants)
    h = PHASE_STEP / (constants.gamma_e * tau)
    slope = derivative(lambda b: ramsey_signal(tau, b, T2_star, constants), B, h)
    if abs(slope) < DERIV_GUARD:
        raise InsensitiveWorkingPoint(f"insensitive working point (dp/dB = {slope:.3g})")
    return math.sqrt(max(p * (1 - p), 0.0)) / abs(slope)


def _eta_tesla(dB_gauss: float, t_m_us: float) -> float:
    return dB_gauss * GAUSS_TO_TESLA * math.sqrt(t_m_us * US_TO_S)


def sensitivity(params: ProtocolParams, timing: TimingBudget) -> SensitivityResult:
    ps = success_probability(params)
    if ps <= 0:
        raise NumericalError("post-selection impossible (P_s <= 0)")
    dB = delta_B(params)
    t_m = timing.total_time(params.tau, ps)
    eta = _eta_tesla(dB, t_m)
    return SensitivityResult(dB, eta, eta / timing.C, t_m, 1 / ps, ps, params.tau)


def ramsey_sensitivity(tau: float, B: float, T2_star: float = math.inf,
                       timing: TimingBudget = PRESETS["ramsey"]) -> SensitivityResult:
    dB = ramsey_delta_B(tau, B, T2_star)
    t_m = timing.total_time(tau)
    eta = _eta_tesla(dB, t_m)
    return SensitivityResult(dB, eta, eta / timing.C, t_m, 1.0, 1.0, tau)


# ---------------------------------------------------------------------------
# Fisher information

def classical_fisher(prob_fn: Callable[[float], np.ndarray], B: float, h: float) -> float:
    """sum_i (dP_i/dB)^2 / P_i with central differences; P_i < 1e-12 skipped."""
    p0 = np.asarray(prob_fn(B), dtype=float)
    pts = {s: np.asarray(prob_fn(B + s * h), dtype=float) for s in (-2, -1, 1, 2)}
    for p in (p0, *pts.values()):
        if abs(p.sum() - 1) > 1e-10:
            raise ValueError("outcome probabilities do not sum to 1")
    dp = (-pts[2] + 8 * pts[1] - 8 * pts[-1] + pts[-2]) / (12 * h)
    keep = p0 >= 1e-12
    return float(np.sum(dp[keep] ** 2 / p0[keep]))


def ramsey_probabilities(tau: float, B: float, T2_star: float = math.inf) -> np.ndarray:
    p = ramsey_signal(tau, B, T2_star)
    return np.array([p, 1 - p])


def ramsey_fisher(tau: float, B: float, T2_star: float = math.inf, constants=None) -> float:
    from .spin_core import NV_C13
    constants = constants or NV_C13
    if tau == 0:
        return 0.0
    h = PHASE_STEP / (constants.gamma_e * tau)
    return classical_fisher(lambda b: ramsey_probabilities(tau, b, T2_star), B, h)


def iz_probabilities(params: ProtocolParams) -> np.ndarray:
    """Outcome probabilities of a projective I_z readout of the post-selected spin."""
    m = signal_Iz(params)
    return np.array([0.5 + m, 0.5 - m])


def fisher_postselected_Iz(params: ProtocolParams) -> float:
    """P_s-weighted classical FI of the I_z readout after successful post-selection."""
    if params.tau == 0:
        return 0.0
    f = classical_fisher(lambda b: iz_probabilities(replace(params, B=b)),
                         params.B, field_step(params))
    return success_probability(params) * f


def fisher_postselection_statistics(params: ProtocolParams) -> float:
    """FI of the binary success/fail record, (dP_s/dB)^2 / (P_s (1 - P_s)).

    At P_s = 1 the derivative vanishes as well and the limit 0 is returned.
    """
    ps = success_probability(params)
    if params.tau == 0:
        return 0.0
    d = derivative(lambda b: success_probability(replace(params, B=b)),
                   params.B, field_step(params))
    if ps >= 1 - 1e-15:
        if abs(d) < 1e-9:
            return 0.0
        raise NumericalError("degenerate post-selection statistics (P_s = 1)")
    if ps <= 1e-15:
        raise NumericalError("degenerate post-selection statistics (P_s = 0)")
    return d ** 2 / (ps * (1 - ps))


def qfi_pure(state_fn: Callable[[float], np.ndarray], B: float, h: float) -> float:
    """4 <d psi|d psi> - 4 |<d psi|psi>|^2 with a five-point derivative."""
    psi = np.asarray(state_fn(B), dtype=complex)
    pts = {s: np.asarray(state_fn(B + s * h), dtype=complex) for s in (-2, -1, 1, 2)}
    for v in (psi, *pts.values()):
        if abs(np.linalg.norm(v) - 1) > 1e-10:
            raise ValueError("state_fn returned an unnormalized state")
    dpsi = (-pts[2] + 8 * pts[1] - 8 * pts[-1] + pts[-2]) / (12 * h)
    return float(4 * np.vdot(dpsi, dpsi).real - 4 * abs(np.vdot(dpsi, psi)) ** 2)


def qfi_mixed_sld(rho_fn: Callable[[float], np.ndarray], B: float, h: float) -> float:
    """Tr(rho L^2) with the symmetric logarithmic derivative built in rho's eigenbasis."""
    rho = np.asarray(rho_fn(B), dtype=complex)
    pts = {s: np.asarray(rho_fn(B + s * h), dtype=complex) for s in (-2, -1, 1, 2)}
    for r in (rho, *pts.values()):
        if abs(np.trace(r).real - 1) > 1e-10 or np.max(np.abs(r - r.conj().T)) > 1e-10:
            raise ValueError("rho_fn returned an invalid density matrix")
    drho = (-pts[2] + 8 * pts[1] - 8 * pts[-1] + pts[-2]) / (12 * h)
    p, V = np.linalg.eigh(rho)
    p = np.clip(p, 0.0, None)
    d = V.conj().T @ drho @ V
    psum = p[:, None] + p[None, :]
    L = np.where(psum > 1e-12, 2 * d / np.where(psum > 1e-12, psum, 1.0), 0.0)
    # Tr(rho L^2) in the eigenbasis of rho
    return float(np.real(np.sum(p[:, None] * L * L.T)))


def _probe_density(params: ProtocolParams) -> Callable[[float], np.ndarray]:
    return lambda b: dephased_density(replace(params, B=b))


def qfi_probe(params: ProtocolParams) -> float:
    """QFI of the probe state after free evolution (mixed when T2* is finite)."""
    if params.tau == 0:
        return 0.0
    h = field_step(params)
    if math.isinf(params.T2_star):
        return qfi_pure(lambda b: probe_state(replace(params, B=b)), params.B, h)
    return qfi_mixed_sld(_probe_density(params), params.B, h)


def postselected_density(params: ProtocolParams) -> np.ndarray:
    return post_select_density(dephased_density(params), params.theta_f)[0]


def postselection_weighted_fisher(params: ProtocolParams) -> float:
    """P_s times the QFI of the post-selected nuclear state.

    The nuclear state is not decohered after selection; with finite T2* it
    is mixed by the dephasing accumulated during free evolution and its QFI
    comes from the SLD.
    """
    ps = success_probability(params)
    if params.tau == 0:
        return 0.0
    h = field_step(params)
    if math.isinf(params.T2_star):
        f = qfi_pure(lambda b: post_select(probe_state(replace(params, B=b)),
                                           params.theta_f).nuclear_state, params.B, h)
    else:
        f = qfi_mixed_sld(lambda b: postselected_density(replace(params, B=b)), params.B, h)
    return ps * f


@dataclass(frozen=True)
class FisherReport:
    F_classical: float
    F_ps: float
    F_Q_probe: float
    F_Q_post: float
    F_ramsey: float

    def __post_init__(self):
        for name in ("F_classical", "F_ps", "F_Q_probe", "F_Q_post", "F_ramsey"):
            if getattr(self, name) < -1e-8:
                raise NumericalError(f"{name} is negative")
        if self.F_classical > self.F_Q_post * (1 + 1e-6) + 1e-8:
            raise NumericalError("classical FI exceeds the post-selected QFI")


def fisher_report(params: ProtocolParams) -> FisherReport:
    return FisherReport(
        F_classical=fisher_postselected_Iz(params),
        F_ps=fisher_postselection_statistics(params),
        F_Q_probe=qfi_probe(params),
        F_Q_post=postselection_weighted_fisher(params),
        F_ramsey=ramsey_fisher(params.tau, params.B, params.T2_star, params.constants),
    )
