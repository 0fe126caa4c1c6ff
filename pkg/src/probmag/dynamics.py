"""Open-system evolution of the electron-nuclear pair.

Two noise descriptions are provided:

* Markovian pure dephasing, d rho/dt = -i[H, rho] + Gamma (2 S rho S - S^2 rho - rho S^2),
  integrated with fixed-step RK4. In this form an electron coherence decays as
  exp(-Gamma t). The textbook Lindblad form gamma (S rho S - {S^2, rho}/2) is the
  same equation with Gamma = gamma / 2.
* Ornstein-Uhlenbeck frequency noise delta_omega(t) = gamma_e B(t) coupling through
  the electron S_z, sampled by the exact AR(1) discretization and averaged over
  seeded Monte Carlo trajectories.

OU paths are carried in angular units (rad/us), i.e. gamma_e is absorbed into
the noise amplitude. With c = 4 / (T2*^2 tau_c) the stationary variance is
c tau_c / 2 = 2 / T2*^2, the quasi-static limit decays as exp(-(t/T2*)^2) and the
motional-narrowing limit decays at rate 2 tau_c / T2*^2.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.signal import lfilter

from .errors import IntegrationUnstable
from .protocol import (
    ProtocolParams,
    electron_target,
    evolve_free,
    free_phases,
    pre_selected_state,
)
from .spin_core import OPS, electron_sz4

DENSITY_TOL = 1e-10
POSITIVITY_TOL = 1e-6
TRACE_DRIFT_TOL = 1e-8
CHUNK = 256


# ---------------------------------------------------------------------------
# density matrices

def check_density_matrix(rho: np.ndarray, tol: float = DENSITY_TOL) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise ValueError("density matrix trace differs from 1")
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise ValueError("density matrix has negative eigenvalues")
    return rho


def electron_sz(dim: int) -> np.ndarray:
    if dim == 2:
        return OPS.Sz2.copy()
    if dim == 4:
        return electron_sz4()
    raise ValueError(f"no electron S_z for dimension {dim}")


# ---------------------------------------------------------------------------
# master equation

def dephasing_dissipator(rho: np.ndarray, L: np.ndarray, Gamma: float) -> np.ndarray:
    L2 = L @ L
    return Gamma * (2 * L @ rho @ L - L2 @ rho - rho @ L2)


def lindblad_rhs(rho: np.ndarray, H: np.ndarray, Gamma: float,
                 L: np.ndarray | None = None) -> np.ndarray:
    """-i[H, rho] + Gamma (2 L rho L - L^2 rho - rho L^2), L = electron S_z."""
    if L is None:
        L = electron_sz(rho.shape[0])
    return -1j * (H @ rho - rho @ H) + dephasing_dissipator(rho, L, Gamma)


def markov_rhs(rho: np.ndarray, H: np.ndarray, gamma: float,
               L: np.ndarray | None = None) -> np.ndarray:
    """-i[H, rho] + gamma (L rho L^dag - {L L^dag, rho} / 2)."""
    return lindblad_rhs(rho, H, gamma / 2, L)


def default_step(H: np.ndarray, Gamma: float) -> float:
    scale = max(float(np.max(np.abs(np.linalg.eigvalsh(H)))), abs(Gamma))
    return math.inf if scale == 0 else 0.01 / scale


def evolve_master_equation(rho0: np.ndarray, H: np.ndarray, Gamma: float,
                           times, dt: float | None = None,
                           L: np.ndarray | None = None) -> np.ndarray:
    """Density matrices at each of ``times`` (sorted, >= 0) by fixed-step RK4.

    Each interval between requested times is split into equal steps no longer
    than ``dt``. Hermiticity is restored after every step; trace and positivity
    are checked at each requested time.
    """
    rho = check_density_matrix(rho0).copy()
    H = np.asarray(H, dtype=complex)
    if L is None:
        L = electron_sz(rho.shape[0])
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be a sorted 1-d array of non-negative values")
    if dt is None:
        dt = default_step(H, Gamma)
    scale = max(float(np.max(np.abs(np.linalg.eigvalsh(H)))), abs(Gamma))
    if dt <= 0 or (math.isfinite(dt) and dt * scale >= 0.1):
        raise ValueError(f"step dt={dt!r} too large for the generator scale {scale:.3g}")

    def f(r):
        return -1j * (H @ r - r @ H) + dephasing_dissipator(r, L, Gamma)

    out = np.empty((len(times),) + rho.shape, dtype=complex)
    t = 0.0
    for k, t_next in enumerate(times):
        span = t_next - t
        if span > 0:
            n = max(1, math.ceil(span / dt - 1e-9)) if math.isfinite(dt) else 1
            h = span / n
            for _ in range(n):
                k1 = f(rho)
                k2 = f(rho + 0.5 * h * k1)
                k3 = f(rho + 0.5 * h * k2)
                k4 = f(rho + h * k3)
                rho = rho + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
                rho = 0.5 * (rho + rho.conj().T)
            t = t_next
        _check_integrated(rho)
        out[k] = rho
    return out


def _check_integrated(rho: np.ndarray) -> None:
    drift = abs(np.trace(rho).real - 1.0)
    if drift > TRACE_DRIFT_TOL:
        raise IntegrationUnstable(f"integration unstable, reduce dt (trace drift {drift:.2g})")
    lo = np.linalg.eigvalsh(rho).min()
    if lo < -POSITIVITY_TOL:
        raise IntegrationUnstable(f"integration unstable, reduce dt (eigenvalue {lo:.2g})")


def integrate_master_equation(rho0: np.ndarray, H: np.ndarray, Gamma: float,
                              t_end: float, dt: float | None = None) -> np.ndarray:
    """rho(t_end) under pure electron dephasing at rate Gamma."""
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    return evolve_master_equation(rho0, H, Gamma, [t_end], dt)[0]


def protocol_density_lindblad(params: ProtocolParams, Gamma: float | None = None,
                              dt: float | None = None) -> np.ndarray:
    """Protocol state after free evolution, integrated from the master equation."""
    from .spin_core import free_hamiltonian

    if Gamma is None:
        Gamma = 1.0 / params.T2_star
    psi = pre_selected_state(params.alpha, params.theta_i)
    rho0 = np.outer(psi, psi.conj())
    return integrate_master_equation(rho0, free_hamiltonian(params), Gamma, params.tau, dt)


# ---------------------------------------------------------------------------
# noise models

@dataclass(frozen=True)
class Markovian:
    Gamma: float

    def __post_init__(self):
        if self.Gamma < 0:
            raise ValueError("Gamma must be >= 0")


@dataclass(frozen=True)
class OrnsteinUhlenbeck:
    """OU frequency noise; ``c`` in rad^2/us^3, ``tau_c`` and ``dt`` in us."""

    tau_c: float
    c: float
    dt: float
    seed: int = 0

    def __post_init__(self):
        if not self.tau_c > 0:
            raise ValueError("tau_c must be > 0")
        if self.c < 0:
            raise ValueError("c must be >= 0")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.dt > self.tau_c / 10 * (1 + 1e-12):
            raise ValueError(f"dt={self.dt!r} exceeds tau_c/10; the noise is under-resolved")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_T2star(cls, T2_star: float, tau_c: float, dt: float | None = None,
                    seed: int = 0) -> OrnsteinUhlenbeck:
        if dt is None:
            dt = tau_c / 20
        return cls(tau_c, ou_c_from_T2star(T2_star, tau_c), dt, seed)

    @property
    def stationary_variance(self) -> float:
        return self.c * self.tau_c / 2


NoiseModel = Markovian | OrnsteinUhlenbeck


def ou_c_from_T2star(T2_star: float, tau_c: float) -> float:
    if not (T2_star > 0 and tau_c > 0):
        raise ValueError("T2_star and tau_c must be positive")
    return 4.0 / (T2_star ** 2 * tau_c)


def ou_markov_rate(T2_star: float, tau_c: float) -> float:
    """Lindblad rate gamma = 4 tau_c / T2*^2 of the motional-narrowing limit."""
    return 4.0 * tau_c / T2_star ** 2


def ou_coherence_exact(t, model: OrnsteinUhlenbeck):
    """Ensemble coherence <exp(i phi(t))> for Gaussian OU noise (exact)."""
    t = np.asarray(t, dtype=float)
    tc = model.tau_c
    return np.exp(-model.stationary_variance * (tc * t - tc ** 2 * (1 - np.exp(-t / tc))))


def markov_coherence(t, gamma: float):
    return np.exp(-gamma * np.asarray(t, dtype=float) / 2)


@dataclass(frozen=True)
class Trajectory:
    """Sampled noise path. ``values`` are angular frequency offsets (rad/us)."""

    times: np.ndarray
    values: np.ndarray
    seed: int

    def __post_init__(self):
        if self.times.ndim != 1 or len(self.times) != self.values.shape[-1]:
            raise ValueError("times and values disagree")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def field_gauss(self, gamma_e: float) -> np.ndarray:
        return self.values / gamma_e

    def phase(self) -> np.ndarray:
        """Accumulated phase integral of the path (trapezoidal)."""
        return cumulative_trapezoid(self.values, self.times, axis=-1, initial=0.0)


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng([seed, chunk])


def _ou_chunk(model: OrnsteinUhlenbeck, n_steps: int, chunk: int, size: int) -> np.ndarray:
    rng = _chunk_rng(model.seed, chunk)
    draws = rng.standard_normal((size, n_steps + 1))
    sd0 = math.sqrt(model.stationary_variance)
    rho = math.exp(-model.dt / model.tau_c)
    kick = math.sqrt(model.stationary_variance * (1 - rho ** 2))
    x0 = sd0 * draws[:, 0]
    path = np.empty_like(draws)
    path[:, 0] = x0
    if n_steps:
        path[:, 1:], _ = lfilter([kick], [1.0, -rho], draws[:, 1:], axis=1,
                                 zi=(rho * x0)[:, None])
    return path


def _chunks(n_traj: int):
    for k, start in enumerate(range(0, n_traj, CHUNK)):
        yield k, min(CHUNK, n_traj - start)


def ou_sample_paths(model: OrnsteinUhlenbeck, n_steps: int, n_traj: int,
                    threads: int = 1) -> np.ndarray:
    """Array (n_traj, n_steps + 1) of OU paths; row i is trajectory i.

    Trajectories are generated in fixed blocks of CHUNK rows, block k drawing
    from the stream seeded by (seed, k), so the result does not depend on
    ``threads``.
    """
    if n_steps < 1 or n_traj < 1:
        raise ValueError("n_steps and n_traj must be >= 1")
    jobs = list(_chunks(n_traj))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        parts = list(ex.map(lambda j: _ou_chunk(model, n_steps, *j), jobs))
    return np.concatenate(parts, axis=0)


def ou_sample_path(model: OrnsteinUhlenbeck, n_steps: int, index: int = 0) -> Trajectory:
    """Trajectory ``index`` of the ensemble defined by the model's seed."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    chunk, row = divmod(index, CHUNK)
    values = _ou_chunk(model, n_steps, chunk, row + 1)[row]
    times = model.dt * np.arange(n_steps + 1)
    return Trajectory(times, values, model.seed)


# ---------------------------------------------------------------------------
# stochastic evolution

def stochastic_evolve(state0: np.ndarray, params: ProtocolParams,
                      path: Trajectory) -> np.ndarray:
    """Free evolution for params.tau with the noise phase of ``path`` added.

    The noise term commutes with the free Hamiltonian, so the propagator is the
    product of exp(-i phi S_z) and the deterministic free evolution.
    """
    tau = params.tau
    if path.times[0] > 0 or path.times[-1] < tau * (1 - 1e-12):
        raise ValueError(f"noise path covers [{path.times[0]}, {path.times[-1]}], need [0, {tau}]")
    phi = float(np.interp(tau, path.times, path.phase()))
    sz = np.diag(electron_sz4()).real
    return evolve_free(np.exp(-1j * phi * sz) * np.asarray(state0, dtype=complex), tau, params)


Observable = Literal["Iz", "Ps", "coherence"]


@dataclass(frozen=True)
class MonteCarloResult:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_traj: int
    seed: int


def _protocol_moments(params: ProtocolParams, times: np.ndarray,
                      phases: np.ndarray) -> dict[str, np.ndarray]:
    """Per-trajectory sums needed for the ensemble estimators of one chunk."""
    psi0 = pre_selected_state(params.alpha, params.theta_i)
    lam = free_phases(params)
    sz = np.diag(electron_sz4()).real
    amp = psi0 * np.exp(-1j * (times[None, :, None] * lam + phases[..., None] * sz))
    amp = amp.reshape(amp.shape[:2] + (2, 2))
    phi = np.einsum("e,tsen->tsn", electron_target(params.theta_f).conj(), amp)
    pop = np.abs(phi) ** 2
    ps = pop.sum(axis=-1)
    num = 0.5 * (pop[..., 0] - pop[..., 1])
    coh = np.cos(phases)
    return {
        "ps": ps.sum(0), "ps2": (ps ** 2).sum(0),
        "num": num.sum(0), "num2": (num ** 2).sum(0), "numps": (num * ps).sum(0),
        "coh": coh.sum(0), "coh2": (coh ** 2).sum(0),
    }


def monte_carlo_signal(params: ProtocolParams, model: OrnsteinUhlenbeck, n_traj: int,
                       observable: Observable = "Iz", times=None,
                       threads: int = 1) -> MonteCarloResult:
    """Ensemble average of a protocol observable over OU noise trajectories.

    ``times`` are interrogation times (defaults to ``params.tau`` only).
    ``Iz`` is the post-selected signal of the ensemble, i.e. the ratio of the
    averaged unnormalized nuclear polarisation to the averaged P_s; its
    standard error follows from the delta method. ``coherence`` is the
    real part of the electron coherence factor <exp(i phi)>.
    """
    if n_traj < 100:
        raise ValueError("n_traj must be >= 100")
    if observable not in ("Iz", "Ps", "coherence"):
        raise ValueError(f"unknown observable {observable!r}")
    times = np.atleast_1d(np.asarray(params.tau if times is None else times, dtype=float))
    if np.any(times < 0):
        raise ValueError("times must be non-negative")
    n_steps = max(1, math.ceil(times.max() / model.dt - 1e-9))
    grid = model.dt * np.arange(n_steps + 1)

    def run(job):
        k, size = job
        path = _ou_chunk(model, n_steps, k, size)
        cum = cumulative_trapezoid(path, grid, axis=1, initial=0.0)
        phases = np.stack([np.interp(times, grid, row) for row in cum])
        return _protocol_moments(params, times, phases)

    jobs = list(_chunks(n_traj))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        parts = list(ex.map(run, jobs))
    tot = {key: np.sum([p[key] for p in parts], axis=0) for key in parts[0]}
    n = n_traj

    def mean_and_se(s, s2):
        m = s / n
        var = np.maximum(s2 / n - m ** 2, 0.0) * n / (n - 1)
        return m, np.sqrt(var / n)

    if observable == "coherence":
        mean, se = mean_and_se(tot["coh"], tot["coh2"])
    elif observable == "Ps":
        mean, se = mean_and_se(tot["ps"], tot["ps2"])
    else:
        mp, mn = tot["ps"] / n, tot["num"] / n
        mean = mn / mp
        # var(num - mean * ps) from raw moments
        v = (tot["num2"] / n - 2 * mean * tot["numps"] / n + mean ** 2 * tot["ps2"] / n
             - (mn - mean * mp) ** 2)
        se = np.sqrt(np.maximum(v, 0.0) * n / (n - 1) / n) / mp
    return MonteCarloResult(times, mean, se, n_traj, model.seed)


def markov_signal(params: ProtocolParams, gamma: float, times) -> tuple[np.ndarray, np.ndarray]:
    """(<I_z>, P_s) over ``times`` from the RK4 master equation with Lindblad rate gamma."""
    from .protocol import post_select_density
    from .spin_core import free_hamiltonian

    times = np.asarray(times, dtype=float)
    psi = pre_selected_state(params.alpha, params.theta_i)
    rho0 = np.outer(psi, psi.conj())
    rhos = evolve_master_equation(rho0, free_hamiltonian(params), gamma / 2, times)
    iz, ps = np.empty(len(times)), np.empty(len(times))
    for k, rho in enumerate(rhos):
        rho_n, ps[k] = post_select_density(rho, params.theta_f)
        iz[k] = float(np.trace(rho_n @ OPS.Iz).real)
    return iz, ps
