"""Spin operators, physical constants and Hamiltonians of the NV-nuclear pair.

Unit conventions: user-facing frequencies are ordinary frequencies in MHz
(GHz for the zero-field splitting); everything stored here is angular, in
rad/us. Time is in microseconds and magnetic field in Gauss.

Basis orderings:

* 6-dim: m_s in (+1, 0, -1) outer, nuclear (up, down) inner.
* 4-dim truncated: (|0 up>, |0 down>, |1 up>, |1 down>) with |1> == m_s=-1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import FrameError, PowerBroadeningWarning

if TYPE_CHECKING:
    from .protocol import ProtocolParams

TWO_PI = 2.0 * math.pi

# Hermiticity tolerance for matrices handed to the propagator.
HERMITIAN_TOL = 1e-10


def to_angular(freq: float) -> float:
    """Ordinary frequency -> angular frequency (multiply by 2 pi)."""
    return TWO_PI * freq


def from_angular(omega: float) -> float:
    return omega / TWO_PI


@dataclass(frozen=True)
class PhysConstants:
    """NV and nuclear constants, stored as angular frequencies.

    ``D`` is in rad/us, the gyromagnetic ratios in rad/(us G).
    Build from the usual ordinary-frequency values with :meth:`from_ordinary`.
    """

    D: float
    gamma_e: float
    gamma_c: float

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError("zero-field splitting must be positive")
        if not self.gamma_e > self.gamma_c > 0:
            raise ValueError("need gamma_e > gamma_c > 0")

    @classmethod
    def from_ordinary(cls, D_GHz: float = 2.87, gamma_e_MHz_per_G: float = 2.8,
                      gamma_c_kHz_per_G: float = 1.07) -> PhysConstants:
        return cls(D=to_angular(D_GHz * 1e3),
                   gamma_e=to_angular(gamma_e_MHz_per_G),
                   gamma_c=to_angular(gamma_c_kHz_per_G * 1e-3))


NV_C13 = PhysConstants.from_ordinary()


# ---------------------------------------------------------------------------
# spin operators

class SpinOperators:
    """Spin-1 and spin-1/2 matrices in the bases described in the module doc."""

    _s = 1.0 / math.sqrt(2.0)

    Sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    Sx = np.array([[0, _s, 0], [_s, 0, _s], [0, _s, 0]], dtype=complex)
    Sy = np.array([[0, -1j * _s, 0], [1j * _s, 0, -1j * _s], [0, 1j * _s, 0]])
    Splus = Sx + 1j * Sy

    Iz = np.diag([0.5, -0.5]).astype(complex)
    Ix = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
    Iy = np.array([[0, -0.5j], [0.5j, 0]])
    Iplus = Ix + 1j * Iy

    # electron S_z on the {|0>, |1> = m_s=-1} submanifold
    Sz2 = np.diag([0.0, -1.0]).astype(complex)

    I3 = np.eye(3, dtype=complex)
    I2 = np.eye(2, dtype=complex)


OPS = SpinOperators


def electron_sz4() -> np.ndarray:
    """Truncated electron S_z tensored with the nuclear identity (4x4)."""
    return np.kron(OPS.Sz2, OPS.I2)


def nuclear_op4(op: np.ndarray) -> np.ndarray:
    return np.kron(OPS.I2, op)


def hermiticity_error(H: np.ndarray) -> float:
    return float(np.max(np.abs(H - H.conj().T)))


# ---------------------------------------------------------------------------
# drives and Hamiltonians

@dataclass(frozen=True)
class DriveParams:
    """Microwave (electron) and RF (nuclear) drives, angular units.

    The drive frequencies default to ``None``, meaning the frame used by
    :func:`build_rotating_frame_hamiltonian` (omega_e = -D + gamma_e B_z,
    omega_c = gamma_c B_z).
    """

    Omega_e: float = 0.0
    Omega_c0: float = 0.0
    omega_e: float | None = None
    omega_c: float | None = None

    def __post_init__(self):
        if self.Omega_e < 0 or self.Omega_c0 < 0:
            raise ValueError("Rabi frequencies must be non-negative")

    def resolved(self, params: ProtocolParams) -> DriveParams:
        """Fill unset drive frequencies with the standard frame choice."""
        c = params.constants
        oe = -c.D + c.gamma_e * params.B_z if self.omega_e is None else self.omega_e
        oc = c.gamma_c * params.B_z if self.omega_c is None else self.omega_c
        return DriveParams(self.Omega_e, self.Omega_c0, oe, oc)

    def check_power_broadening(self, A_zz: float) -> None:
        if self.Omega_c0 > 0 and self.Omega_c0 >= abs(A_zz):
            warnings.warn(
                f"nuclear Rabi frequency {self.Omega_c0:g} rad/us >= A_zz "
                f"{abs(A_zz):g} rad/us; selective nuclear control breaks down",
                PowerBroadeningWarning, stacklevel=3)


def _static_lab_terms(params: ProtocolParams) -> np.ndarray:
    c = params.constants
    Sz, Iz = OPS.Sz, OPS.Iz
    Btot = params.B_z + params.B
    return (c.D * np.kron(Sz @ Sz, OPS.I2)
            + c.gamma_e * Btot * np.kron(Sz, OPS.I2)
            + c.gamma_c * Btot * np.kron(OPS.I3, Iz)
            + params.A_zz * np.kron(Sz, Iz))


def build_lab_hamiltonian(params: ProtocolParams, drive: DriveParams,
                          t: float) -> np.ndarray:
    """Time-dependent 6x6 lab-frame Hamiltonian with cosine drives."""
    if t < 0:
        raise ValueError("t must be non-negative")
    drive = drive.resolved(params)
    drive.check_power_broadening(params.A_zz)
    H = _static_lab_terms(params)
    H = H + math.sqrt(2.0) * drive.Omega_e * math.cos(drive.omega_e * t) * np.kron(OPS.Sx, OPS.I2)
    H = H + 2.0 * drive.Omega_c0 * math.cos(drive.omega_c * t) * np.kron(OPS.I3, OPS.Ix)
    return H


def build_rotating_frame_hamiltonian(params: ProtocolParams,
                                     drive: DriveParams) -> np.ndarray:
    """Static 6x6 Hamiltonian in the multi-rotating frame after the RWA.

    Only the frame omega_e = -D + gamma_e B_z, omega_c = gamma_c B_z is
    supported. The off-resonant m_s=+1 <-> 0 microwave coupling is dropped
    together with the counter-rotating terms.
    """
    c = params.constants
    want = DriveParams(drive.Omega_e, drive.Omega_c0).resolved(params)
    got = drive.resolved(params)
    for name in ("omega_e", "omega_c"):
        a, b = getattr(got, name), getattr(want, name)
        if not math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12):
            raise FrameError(f"{name}={a!r} differs from the supported frame value {b!r}")
    drive.check_power_broadening(params.A_zz)

    A, B, D = params.A_zz, params.B, c.D
    ge, gc = c.gamma_e, c.gamma_c
    Oe, Oc = drive.Omega_e, drive.Omega_c0
    H = np.zeros((6, 6), dtype=complex)
    H[0, 0] = A + 4 * D + (2 * ge + gc) * B
    H[1, 1] = -A + 4 * D + (2 * ge - gc) * B
    H[2, 2] = gc * B
    H[3, 3] = -gc * B
    H[4, 4] = -A + (gc - 2 * ge) * B
    H[5, 5] = A - (gc + 2 * ge) * B
    H[2, 3] = H[3, 2] = Oc
    H[2, 4] = H[4, 2] = Oe
    H[3, 5] = H[5, 3] = Oe
    return H / 2


def truncate_to_submanifold(H6: np.ndarray) -> np.ndarray:
    """Project a 6x6 operator onto the m_s in {0, -1} block (4x4)."""
    H6 = np.asarray(H6)
    if H6.shape != (6, 6):
        raise ValueError(f"expected a 6x6 matrix, got {H6.shape}")
    return H6[2:, 2:].copy()


def detunings(params: ProtocolParams) -> tuple[float, float]:
    """(delta_up, delta_down) of the m_s=-1 levels in the rotating frame."""
    c = params.constants
    B, A = params.B, params.A_zz
    up = -c.gamma_e * B - A / 2 + c.gamma_c * B / 2
    down = -c.gamma_e * B + A / 2 - c.gamma_c * B / 2
    return up, down


def free_hamiltonian(params: ProtocolParams) -> np.ndarray:
    """Truncated rotating-frame Hamiltonian with the drives switched off."""
    return truncate_to_submanifold(build_rotating_frame_hamiltonian(params, DriveParams()))


def propagator(H: np.ndarray, t: float) -> np.ndarray:
    """exp(-i H t) for Hermitian H via eigendecomposition."""
    H = np.asarray(H, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(H))) if H.size else 1.0)
    if hermiticity_error(H) > HERMITIAN_TOL * scale:
        raise ValueError("propagator requires a Hermitian matrix")
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * w * t)) @ V.conj().T
