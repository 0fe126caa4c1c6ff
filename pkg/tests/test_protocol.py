import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from probmag.dynamics import evolve_master_equation, integrate_master_equation
from probmag.errors import PostSelectionImpossible, SingularSignal, WeakFieldWarning
from probmag.protocol import (
    ProtocolParams,
    dephased_density,
    electron_target,
    evolve_free,
    nuclear_expectation,
    nuclear_zeeman_discrepancy,
    post_select,
    post_select_density,
    pre_selected_state,
    probe_state,
    ramsey_signal,
    signal_arrays,
    signal_Iz,
    signal_Iz_no_postselection,
    signal_Iz_symmetric,
    signal_Ix_no_postselection,
    signal_numeric,
    success_probability,
)
from probmag.spin_core import NV_C13, OPS, detunings, free_hamiltonian, propagator

HALF = math.pi / 2
GE = NV_C13.gamma_e

angles = st.floats(0, 2 * math.pi, allow_nan=False)


def projection(p):
    out = post_select(probe_state(p), p.theta_f)
    iz = float(np.vdot(out.nuclear_state, OPS.Iz @ out.nuclear_state).real)
    return iz, out.success_probability


# ---------------------------------------------------------------------------
# parameters

def test_params_validation_and_species():
    assert ProtocolParams(tau=1, B=0).A_zz == pytest.approx(2 * math.pi * 0.5)
    assert ProtocolParams(tau=1, B=0, species="N15").A_zz == pytest.approx(2 * math.pi * 3.03)
    assert ProtocolParams(tau=1, B=0, species="custom", A_zz=1.0).A_zz == 1.0
    with pytest.raises(ValueError):
        ProtocolParams(tau=1, B=0, species="custom")
    with pytest.raises(ValueError):
        ProtocolParams(tau=-1, B=0)
    with pytest.raises(ValueError):
        ProtocolParams(tau=1, B=0, T2_star=0)
    with pytest.raises(ValueError):
        ProtocolParams(tau=1, B=math.nan)


def test_weak_field_warning():
    with pytest.warns(WeakFieldWarning):
        ProtocolParams(tau=5.0, B=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ProtocolParams(tau=2.2, B=1e-2)


# ---------------------------------------------------------------------------
# states

def test_pre_selected_state_special_cases():
    psi = pre_selected_state(0.0, 0.0)
    assert np.array_equal(psi, [0, 0, 1, 0])       # |1 up>
    assert np.allclose(pre_selected_state(HALF, HALF), 0.5, atol=1e-15)


def _ry(theta):
    return expm(-1j * theta * np.array([[0, -1j], [1j, 0]]) / 2)


@given(angles, angles)
def test_pre_selected_state_rotation_oracle(alpha, theta_i):
    # electron basis (|0>, |1>): R_y(pi - theta) |0> = sin(theta/2)|0> + cos(theta/2)|1>
    # nuclear basis (up, down): R_y(alpha - pi) |down> = cos(alpha/2)|up> + sin(alpha/2)|down>
    e = _ry(math.pi - theta_i) @ np.array([1, 0])
    n = _ry(alpha - math.pi) @ np.array([0, 1])
    want = np.kron(e, n)
    assert np.max(np.abs(pre_selected_state(alpha, theta_i) - want)) < 1e-12
    assert abs(np.linalg.norm(pre_selected_state(alpha, theta_i)) - 1) < 1e-12


def test_evolve_free_cases():
    p = ProtocolParams(tau=2.0, B=0.02, species="C13")
    psi = pre_selected_state(0.7, 1.1)
    assert np.array_equal(evolve_free(psi, 0.0, p), psi)
    p0 = p.with_(B=0.0)
    out = evolve_free(psi, 2.0, p0)
    assert np.allclose(out[:2], psi[:2], atol=1e-15)
    a = p0.A_zz * 2.0 / 2
    assert np.allclose(out[2:], psi[2:] * np.exp([1j * a, -1j * a]), atol=1e-15)
    oracle = propagator(free_hamiltonian(p), 2.0) @ psi
    assert np.max(np.abs(evolve_free(psi, 2.0, p) - oracle)) < 1e-12
    with pytest.raises(ValueError):
        evolve_free(2 * psi, 1.0, p)


# ---------------------------------------------------------------------------
# post-selection

def test_post_select_six_percent_and_trivial():
    p = ProtocolParams(tau=2.2, B=1e-2)
    assert post_select(probe_state(p), HALF).success_probability == pytest.approx(0.06, abs=5e-3)
    assert post_select(probe_state(p.with_(tau=0.0)), HALF).success_probability \
        == pytest.approx(1.0, abs=1e-15)


def test_post_select_impossible():
    # electron in |0>, target |1>
    psi = pre_selected_state(HALF, math.pi)
    with pytest.raises(PostSelectionImpossible):
        post_select(psi, 0.0)


@given(angles, angles, angles, st.floats(0, 5), st.floats(-0.1, 0.1))
@settings(max_examples=200)
def test_post_select_matches_inner_products(alpha, ti, tf, tau, B):
    p = ProtocolParams(tau=tau, B=B, alpha=alpha, theta_i=ti, theta_f=tf)
    psi = probe_state(p)
    f = electron_target(tf)
    bra = np.kron(f[:, None], np.eye(2)).conj().T            # <psi_f| (x) 1
    phi = bra @ psi
    ps = float(np.vdot(phi, phi).real)
    if ps < 1e-9:
        return
    out = post_select(psi, tf)
    assert out.success_probability == pytest.approx(ps, abs=1e-12)
    assert np.linalg.norm(out.nuclear_state) == pytest.approx(1, abs=1e-12)
    assert 0 <= out.success_probability <= 1


def test_post_select_density_cases():
    p = ProtocolParams(tau=1.7, B=0.03, alpha=1.0, theta_i=0.4, theta_f=2.0)
    psi = probe_state(p)
    rho_n, ps = post_select_density(np.outer(psi, psi.conj()), p.theta_f)
    out = post_select(psi, p.theta_f)
    assert ps == pytest.approx(out.success_probability, abs=1e-14)
    assert np.max(np.abs(rho_n - np.outer(out.nuclear_state, out.nuclear_state.conj()))) < 1e-14
    for tf in (0.0, 0.3, HALF, math.pi):
        rho_n, ps = post_select_density(np.eye(4) / 4, tf)
        assert ps == pytest.approx(0.5)
        assert np.allclose(rho_n, np.eye(2) / 2)
    # Lindblad path at Gamma = 0 equals the unitary path
    rho = integrate_master_equation(np.outer(pre_selected_state(p.alpha, p.theta_i),
                                             pre_selected_state(p.alpha, p.theta_i).conj()),
                                    free_hamiltonian(p), 0.0, p.tau, dt=1e-3)
    assert np.max(np.abs(rho - np.outer(psi, psi.conj()))) < 1e-10


# ---------------------------------------------------------------------------
# closed forms

def test_success_probability_special_cases():
    assert success_probability(ProtocolParams(tau=3.1, B=0.02, theta_i=0, theta_f=0)) == 1.0
    p = ProtocolParams(tau=2.2, B=1e-2)
    up, down = detunings(p)
    hc = NV_C13.gamma_c * p.B / 2
    want = 0.5 + 0.25 * (math.cos((up - hc) * p.tau) + math.cos((down + hc) * p.tau))
    assert success_probability(p) == pytest.approx(want, abs=1e-15)
    want_dropped = 0.5 + 0.25 * (math.cos(up * p.tau) + math.cos(down * p.tau))
    assert success_probability(p, exact=False) == pytest.approx(want_dropped, abs=1e-15)
    assert success_probability(p) == pytest.approx(0.06, abs=5e-3)


def test_signal_Iz_special_cases():
    assert signal_Iz(ProtocolParams(tau=0.0, B=0.01)) == pytest.approx(0.0, abs=1e-16)
    for tau in (0.3, 1.0, 2.9):
        assert signal_Iz(ProtocolParams(tau=tau, B=0.02, alpha=0.0)) == pytest.approx(0.5)
    p = ProtocolParams(tau=2.2, B=1e-2)
    assert signal_Iz(p) == pytest.approx(signal_Iz_symmetric(p.tau, p.B, p), abs=1e-12)


@given(angles, angles, angles, st.floats(0, 5), st.floats(-0.1, 0.1),
       st.sampled_from(["C13", "N15"]), st.floats(0.3, 1e3))
@settings(max_examples=300)
def test_closed_forms_match_projection(alpha, ti, tf, tau, B, species, T2):
    p = ProtocolParams(tau=tau, B=B, species=species, alpha=alpha, theta_i=ti,
                       theta_f=tf, T2_star=T2)
    iz_num, ps_num = signal_numeric(p)
    assert success_probability(p) == pytest.approx(ps_num, abs=1e-10)
    assert 0 <= ps_num <= 1
    if ps_num > 1e-6:
        assert signal_Iz(p) == pytest.approx(iz_num, abs=1e-10)
        assert abs(signal_Iz(p)) <= 0.5 + 1e-12


def test_dropped_phase_discrepancy_is_bounded():
    p = ProtocolParams(tau=2.2, B=1e-2)
    d = nuclear_zeeman_discrepancy(p)
    assert abs(d["P_s"]) <= d["gamma_c_B_tau"]
    # the dropped-phase form converges to the exact one as gamma_c B tau -> 0
    errs = [abs(nuclear_zeeman_discrepancy(p.with_(B=b))["P_s"]) for b in (1e-2, 1e-3, 1e-4)]
    assert errs[1] < errs[0] / 5 and errs[2] < errs[1] / 5


def test_symmetric_signal():
    p = ProtocolParams(tau=1.0, B=0.0)
    for tau in np.linspace(0.0, 5.0, 51):
        if abs(math.cos(p.A_zz * tau / 2) + 1) > 1e-6:
            assert signal_Iz_symmetric(tau, 0.0, p) == 0.0
    # A_zz tau / 2 = 3 pi / 2 at tau = 3 us: <I_z> = sin(gamma_e B tau) / 2
    for B in (0.003, 0.01, 0.2):
        assert signal_Iz_symmetric(3.0, B, p) == pytest.approx(math.sin(GE * B * 3.0) / 2,
                                                               abs=1e-12)
    with pytest.raises(SingularSignal):
        signal_Iz_symmetric(2.0, 0.0, p)       # cos(A tau/2) = -1, B = 0
    for tau in np.linspace(0.0, 5.0, 201):
        q = p.with_(tau=float(tau), B=0.01)
        if success_probability(q) > 1e-9:
            assert signal_Iz_symmetric(q.tau, q.B, q) == pytest.approx(signal_Iz(q), abs=1e-12)


def test_signal_Ix_partial_trace_oracle():
    rng = np.random.default_rng(5)
    for _ in range(200):
        alpha, ti = rng.uniform(0, 2 * math.pi, 2)
        p = ProtocolParams(tau=rng.uniform(0, 5), B=rng.uniform(-0.1, 0.1),
                           species=str(rng.choice(["C13", "N15"])), alpha=alpha, theta_i=ti)
        psi = probe_state(p).reshape(2, 2)
        rho_n = psi.T @ psi.conj()                 # trace over the electron
        assert signal_Ix_no_postselection(p) == pytest.approx(
            nuclear_expectation(rho_n, 2 * OPS.Ix), abs=1e-12)
        assert signal_Iz_no_postselection(p) == pytest.approx(
            nuclear_expectation(rho_n, OPS.Iz), abs=1e-12)
    assert signal_Ix_no_postselection(ProtocolParams(tau=1.0, B=0.01, alpha=0.0)) == 0.0
    for tau in (0.0, 1.3, 4.0):
        p = ProtocolParams(tau=tau, B=0.0, alpha=0.8, theta_i=math.pi)
        assert signal_Ix_no_postselection(p) == pytest.approx(math.sin(0.8), abs=1e-15)


def test_ramsey_signal():
    assert ramsey_signal(0.0, 0.01) == 0.0
    tau = 2.0
    B = math.pi / (GE * tau)
    assert ramsey_signal(tau, B) == pytest.approx(1.0)
    assert ramsey_signal(tau, B, T2_star=tau) == pytest.approx(0.5 + math.exp(-1) / 2)
    # Lindblad oracle on the two-level electron after a pi/2 pulse
    rho0 = np.full((2, 2), 0.5, dtype=complex)
    H = np.diag([0.0, -GE * B])
    rho = integrate_master_equation(rho0, H, 1 / tau, tau, dt=1e-3)
    # second pi/2 about y; the zero-phase state maps to |1>, so the signal is |0>
    ry = _ry(HALF)
    p0 = (ry @ rho @ ry.conj().T)[0, 0].real
    assert p0 == pytest.approx(ramsey_signal(tau, B, tau), abs=1e-10)


def test_ramsey_reduction():
    # alpha = 0 leaves the nuclear spin in |up>; the electron alone sees the
    # Ramsey interference shifted by the up-branch hyperfine phase
    for tau in (0.4, 1.3, 2.2):
        for B in (0.0, 0.01, 0.05):
            p = ProtocolParams(tau=tau, B=B, species="custom", A_zz=0.0, alpha=0.0)
            ps = success_probability(p)
            # projecting onto the orthogonal target gives the Ramsey population
            q = p.with_(theta_f=-HALF)
            assert 1 - ps == pytest.approx(ramsey_signal(tau, B), abs=1e-12)
            assert success_probability(q) == pytest.approx(ramsey_signal(tau, B), abs=1e-12)


def test_dephased_density_is_lindblad_solution():
    p = ProtocolParams(tau=1.6, B=0.02, species="N15", alpha=0.9, theta_i=1.2, T2_star=2.0)
    psi0 = pre_selected_state(p.alpha, p.theta_i)
    rho = evolve_master_equation(np.outer(psi0, psi0.conj()), free_hamiltonian(p), 1 / p.T2_star,
                                 [p.tau], dt=2.5e-4)[0]
    assert np.max(np.abs(rho - dephased_density(p))) < 1e-10


def test_signal_arrays_match_scalar_forms():
    p = ProtocolParams(tau=1.0, B=0.01, species="N15", T2_star=3.0)
    taus = np.linspace(0.1, 5, 17)
    iz, ps = signal_arrays(p, taus, 0.02)
    for k, t in enumerate(taus):
        q = p.with_(tau=float(t), B=0.02)
        assert ps[k] == pytest.approx(success_probability(q), abs=1e-14)
        assert iz[k] == pytest.approx(signal_Iz(q), abs=1e-12)
