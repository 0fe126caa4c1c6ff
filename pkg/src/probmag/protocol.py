"""Pre-selection, free evolution and post-selection of the electron-nuclear pair.

States are plain complex numpy vectors in the 4-dim basis
(|0 up>, |0 down>, |1 up>, |1 down>); nuclear states are 2-vectors (up, down).

Closed forms take ``exact``. With ``exact=True`` (default) the nuclear Zeeman
phases picked up on the m_s=0 branch are kept, which makes the closed forms
identical to the explicit projection. ``exact=False`` drops them, as is
customary in the weak-field regime gamma_c B tau << 1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import PostSelectionImpossible, SingularSignal, WeakFieldWarning
from .spin_core import NV_C13, OPS, PhysConstants, detunings, to_angular

PS_GUARD = 1e-15
NORM_TOL = 1e-12
WEAK_FIELD_LIMIT = 1e-2

# hyperfine couplings A_zz / 2pi in MHz
SPECIES_AZZ_MHZ = {"C13": 0.5, "N15": 3.03}

HALF_PI = math.pi / 2


@dataclass(frozen=True)
class ProtocolParams:
    """Physical and control parameters of one protocol run.

    Angles in rad, tau and T2_star in us, fields in G. ``A_zz`` is angular
    (rad/us); leave it ``None`` to take the value of ``species``.
    ``T2_star=inf`` means no dephasing.
    """

    tau: float
    B: float
    species: str = "C13"
    alpha: float = HALF_PI
    theta_i: float = HALF_PI
    theta_f: float = HALF_PI
    B_z: float = 0.0
    A_zz: float | None = None
    T2_star: float = math.inf
    constants: PhysConstants = field(default=NV_C13, repr=False)

    def __post_init__(self):
        if self.A_zz is None:
            if self.species not in SPECIES_AZZ_MHZ:
                raise ValueError(f"species {self.species!r} needs an explicit A_zz")
            object.__setattr__(self, "A_zz", to_angular(SPECIES_AZZ_MHZ[self.species]))
        if not self.tau >= 0:
            raise ValueError(f"tau must be >= 0, got {self.tau!r}")
        if not self.T2_star > 0:
            raise ValueError(f"T2_star must be > 0, got {self.T2_star!r}")
        for name in ("alpha", "theta_i", "theta_f", "B", "B_z", "A_zz"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.weak_field_parameter > WEAK_FIELD_LIMIT:
            warnings.warn(
                f"gamma_c*B*tau = {self.weak_field_parameter:.3g} exceeds "
                f"{WEAK_FIELD_LIMIT:g}; dropped-phase closed forms are inaccurate",
                WeakFieldWarning, stacklevel=3)

    @property
    def weak_field_parameter(self) -> float:
        return abs(self.constants.gamma_c * self.B * self.tau)

    @property
    def coherence(self) -> float:
        """Electron coherence factor exp(-tau/T2*) at the end of free evolution."""
        return math.exp(-self.tau / self.T2_star)

    def with_(self, **changes) -> ProtocolParams:
        return replace(self, **changes)


@dataclass(frozen=True)
class PostSelectionOutcome:
    nuclear_state: np.ndarray
    success_probability: float


# ---------------------------------------------------------------------------
# state preparation and evolution

def electron_target(theta: float) -> np.ndarray:
    """cos(theta/2)|1> + sin(theta/2)|0> as a (|0>, |1>) vector."""
    return np.array([math.sin(theta / 2), math.cos(theta / 2)], dtype=complex)


def nuclear_superposition(alpha: float) -> np.ndarray:
    return np.array([math.cos(alpha / 2), math.sin(alpha / 2)], dtype=complex)


def pre_selected_state(alpha: float, theta_i: float) -> np.ndarray:
    return np.kron(electron_target(theta_i), nuclear_superposition(alpha))


def free_phases(params: ProtocolParams) -> np.ndarray:
    """Diagonal of the drive-free truncated Hamiltonian, in the 4-dim basis."""
    up, down = detunings(params)
    hc = params.constants.gamma_c * params.B / 2
    return np.array([hc, -hc, up, down])


def evolve_free(state: np.ndarray, tau: float, params: ProtocolParams) -> np.ndarray:
    state = _check_state(state)
    return np.exp(-1j * free_phases(params) * tau) * state


def probe_state(params: ProtocolParams) -> np.ndarray:
    """|Psi_1>: the pre-selected state after lossless free evolution."""
    psi = pre_selected_state(params.alpha, params.theta_i)
    return evolve_free(psi, params.tau, params)


def dephased_density(params: ProtocolParams) -> np.ndarray:
    """Density matrix after free evolution with electron pure dephasing.

    The free Hamiltonian is diagonal, so the dephasing master equation is solved
    exactly by damping the electron coherences by exp(-tau/T2*).
    """
    psi = probe_state(params)
    rho = np.outer(psi, psi.conj())
    d = params.coherence
    rho[:2, 2:] *= d
    rho[2:, :2] *= d
    return rho


# ---------------------------------------------------------------------------
# post-selection

def _check_state(state: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    if abs(np.linalg.norm(state) - 1.0) > NORM_TOL:
        raise ValueError("state is not normalized")
    return state


def post_select(state: np.ndarray, theta_f: float) -> PostSelectionOutcome:
    """Project the electron onto cos(theta_f/2)|1> + sin(theta_f/2)|0>."""
    state = _check_state(state).reshape(2, 2)
    phi = electron_target(theta_f).conj() @ state
    ps = float(np.vdot(phi, phi).real)
    if ps < PS_GUARD:
        raise PostSelectionImpossible(f"post-selection impossible (P_s={ps:.3g})")
    return PostSelectionOutcome(phi / math.sqrt(ps), min(ps, 1.0))


def post_select_density(rho: np.ndarray, theta_f: float) -> tuple[np.ndarray, float]:
    """Nuclear density matrix after post-selection (normalized) and P_s."""
    rho = np.asarray(rho, dtype=complex).reshape(2, 2, 2, 2)
    f = electron_target(theta_f)
    rho_post = np.einsum("e,eafb,f->ab", f.conj(), rho, f)
    ps = float(np.trace(rho_post).real)
    if ps < PS_GUARD:
        raise PostSelectionImpossible(f"post-selection impossible (P_s={ps:.3g})")
    return rho_post / ps, min(ps, 1.0)


def nuclear_expectation(rho_n: np.ndarray, op: np.ndarray) -> float:
    return float(np.trace(rho_n @ op).real)


# ---------------------------------------------------------------------------
# closed forms

def _relative_phases(params: ProtocolParams, exact: bool) -> tuple[float, float]:
    up, down = detunings(params)
    if exact:
        hc = params.constants.gamma_c * params.B / 2
        up, down = up - hc, down + hc
    return up * params.tau, down * params.tau


def success_probability(params: ProtocolParams, exact: bool = True) -> float:
    p = params
    pu, pd = _relative_phases(p, exact)
    ca2, sa2 = math.cos(p.alpha / 2) ** 2, math.sin(p.alpha / 2) ** 2
    interference = ca2 * math.cos(pu) + sa2 * math.cos(pd)
    return (0.5 * (1 + math.cos(p.theta_f) * math.cos(p.theta_i))
            + 0.5 * math.sin(p.theta_f) * math.sin(p.theta_i) * p.coherence * interference)


def signal_Iz(params: ProtocolParams, exact: bool = True) -> float:
    """Post-selected nuclear <I_z>."""
    p = params
    ps = success_probability(p, exact)
    if ps < PS_GUARD:
        raise PostSelectionImpossible(f"post-selection impossible (P_s={ps:.3g})")
    pu, pd = _relative_phases(p, exact)
    ca2, sa2 = math.cos(p.alpha / 2) ** 2, math.sin(p.alpha / 2) ** 2
    num = (0.25 * (1 + math.cos(p.theta_f) * math.cos(p.theta_i)) * math.cos(p.alpha)
           + 0.25 * math.sin(p.theta_f) * math.sin(p.theta_i) * p.coherence
           * (ca2 * math.cos(pu) - sa2 * math.cos(pd)))
    return num / ps


def signal_Iz_symmetric(tau: float, B: float, params: ProtocolParams) -> float:
    """Lossless <I_z> for alpha = theta_i = theta_f = pi/2."""
    a = params.A_zz * tau / 2
    b = params.constants.gamma_e * B * tau
    den = math.cos(a) * math.cos(b) + 1
    if abs(den) < PS_GUARD:
        raise SingularSignal(f"signal singular at tau={tau!r}, B={B!r}")
    return -math.sin(a) * math.sin(b) / (2 * den)


def signal_Ix_no_postselection(params: ProtocolParams, exact: bool = True) -> float:
    """Tr[rho_n 2 I_x] of the nuclear spin without post-selection.

    Electron dephasing leaves the reduced nuclear state untouched, so T2_star
    does not enter.
    """
    p = params
    gc_b_tau = p.constants.gamma_c * p.B * p.tau
    zero_branch = math.cos(gc_b_tau) if exact else 1.0
    return math.sin(p.alpha) * (
        math.cos(p.theta_i / 2) ** 2 * math.cos((p.A_zz - p.constants.gamma_c * p.B) * p.tau)
        + math.sin(p.theta_i / 2) ** 2 * zero_branch)


def signal_Iz_no_postselection(params: ProtocolParams) -> float:
    return math.cos(params.alpha) / 2


def nuclear_zeeman_discrepancy(params: ProtocolParams) -> dict[str, float]:
    """Differences between the exact and dropped-phase closed forms."""
    return {
        "P_s": success_probability(params, True) - success_probability(params, False),
        "Iz": signal_Iz(params, True) - signal_Iz(params, False),
        "gamma_c_B_tau": params.weak_field_parameter,
    }


def ramsey_signal(tau: float, B: float, T2_star: float = math.inf,
                  constants: PhysConstants = NV_C13) -> float:
    """<S_z>_R of a pi/2 - tau - pi/2 sequence with exponential dephasing."""
    d = math.exp(-tau / T2_star)
    return 0.5 - d * math.cos(constants.gamma_e * B * tau) / 2


# ---------------------------------------------------------------------------
# numeric projection path

def signal_numeric(params: ProtocolParams) -> tuple[float, float]:
    """(<I_z>, P_s) from the dephased density matrix by explicit projection."""
    rho_n, ps = post_select_density(dephased_density(params), params.theta_f)
    return nuclear_expectation(rho_n, OPS.Iz), ps


def signal_arrays(params: ProtocolParams, tau, B, exact: bool = True):
    """Vectorized (<I_z>, P_s) over broadcastable arrays of tau and B.

    Same closed forms as :func:`signal_Iz` and :func:`success_probability`;
    no post-selection guard is applied (P_s may be 0 in the output).
    """
    p = params
    c = p.constants
    tau = np.asarray(tau, dtype=float)
    B = np.asarray(B, dtype=float)
    up = -c.gamma_e * B - p.A_zz / 2
    down = -c.gamma_e * B + p.A_zz / 2
    if not exact:
        up = up + c.gamma_c * B / 2
        down = down - c.gamma_c * B / 2
    d = np.exp(-tau / p.T2_star)
    ca2, sa2 = math.cos(p.alpha / 2) ** 2, math.sin(p.alpha / 2) ** 2
    ss = math.sin(p.theta_f) * math.sin(p.theta_i)
    cc = 1 + math.cos(p.theta_f) * math.cos(p.theta_i)
    cu, cd = np.cos(up * tau), np.cos(down * tau)
    ps = 0.5 * cc + 0.5 * ss * d * (ca2 * cu + sa2 * cd)
    num = 0.25 * cc * math.cos(p.alpha) + 0.25 * ss * d * (ca2 * cu - sa2 * cd)
    with np.errstate(divide="ignore", invalid="ignore"):
        iz = num / ps
    return iz, ps
