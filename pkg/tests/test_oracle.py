import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from satebd.errors import BoundaryContaminationError
from satebd.model import LatticeGeometry, ModelParams, fano_transmission
from satebd.observables import fit_steady_current
from satebd.oracle import (
    CorrelationState,
    QuadraticModel,
    SectorED,
    evolve_correlations,
    exact_diag_dynamics,
    fermion_box_ground,
    fermion_current_series,
    kick_correlations,
    wavepacket_transmission,
)


def test_box_ground_examples():
    g = LatticeGeometry(10, 10)
    full = fermion_box_ground(4, 4, g)
    assert np.allclose(full.C[:4, :4], np.eye(4))
    one = fermion_box_ground(1, 2, g)
    assert np.allclose(one.C[:2, :2], 0.5)
    assert fermion_box_ground(5, 10, g).number == pytest.approx(5.0)
    with pytest.raises(ValueError):
        fermion_box_ground(3, 2, g)


def test_two_site_rabi():
    # sites -1, 0 with the molecule decoupled: n_0(t) = sin^2(J t)
    g = LatticeGeometry(1, 0)
    model = QuadraticModel(ModelParams(), g)
    C = np.zeros((3, 3), dtype=complex)
    C[0, 0] = 1.0
    for t in (0.0, 0.3, 1.1):
        Ct = evolve_correlations(CorrelationState(C), model, t).C
        assert Ct[1, 1].real == pytest.approx(np.sin(t) ** 2, abs=1e-14)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 16), t=st.floats(0, 20))
def test_correlation_evolution_invariants(seed, t):
    rng = np.random.default_rng(seed)
    p = ModelParams(Omega=rng.uniform(0, 3), Delta=rng.uniform(-1, 1), U_qb=rng.uniform(-1, 1))
    g = LatticeGeometry(4, 3)
    model = QuadraticModel(p, g)
    a = rng.normal(size=(9, 9)) + 1j * rng.normal(size=(9, 9))
    C = a @ a.conj().T
    C /= np.linalg.eigvalsh(C).max()
    Ct = evolve_correlations(CorrelationState(C), model, t).C
    assert abs(np.trace(Ct) - np.trace(C)) < 1e-12
    assert np.allclose(Ct, Ct.conj().T, atol=1e-12)


def test_evolution_sign_convention():
    # A kicked packet moves to the right: <c_i^dag c_j> convention
    g = LatticeGeometry(20, 20)
    p = ModelParams()
    s = kick_correlations(fermion_box_ground(1, 20, g), g, np.pi / 2)
    model = QuadraticModel(p, g)
    x = np.append(g.positions, 0)
    d0 = np.real(np.diag(s.C)) @ x
    d1 = np.real(np.diag(evolve_correlations(s, model, 3.0).C)) @ x
    assert d1 > d0 + 3.0


def test_fermion_current_examples():
    g = LatticeGeometry(30, 30)
    ts = np.arange(0, 4.01, 0.1)
    blocked = fermion_current_series(ModelParams(Omega=1e3), g, 15, 0.0, ts)
    assert blocked.N_R[-1] < 0.05
    a = fermion_current_series(ModelParams(), LatticeGeometry(10, 10), 10, 0.0, ts)
    b = fermion_current_series(ModelParams(), LatticeGeometry(10, 10), 10, np.pi / 2, ts)
    assert np.allclose(a.array("N_R"), b.array("N_R"), atol=1e-10)
    assert np.allclose(a.array("charge"), 10.0, atol=1e-10)
    ts = np.arange(0, 8.01, 0.1)
    fast = fermion_current_series(ModelParams(), g, 6, np.pi / 2, ts)
    slow = fermion_current_series(ModelParams(), g, 6, np.pi / 4, ts)
    assert fit_steady_current(fast).I_SS > fit_steady_current(slow).I_SS
    with pytest.raises(ValueError):
        fermion_current_series(ModelParams(U_qb=1.0), g, 6, 0.0, ts)


def test_sector_ed_small_cases():
    ed = SectorED(ModelParams(U_bb=4.0), LatticeGeometry.box(2, 3), 2)
    H = ed.hamiltonian()
    assert ed.dim == 3
    assert np.allclose(H, H.T)
    assert np.linalg.eigvalsh(H)[0] == pytest.approx((4 - np.sqrt(32)) / 2, abs=1e-12)
    ed = SectorED(ModelParams(Omega=0.7, U_bb=2.0), LatticeGeometry(2, 1, cutoff=3), 2)
    H = ed.hamiltonian()
    assert np.allclose(H, H.T)
    with pytest.raises(ValueError):
        SectorED(ModelParams(U_bb=1.0), LatticeGeometry(6, 6, cutoff=4), 4, max_dim=100)


def test_ed_dynamics_conserves_charge():
    p = ModelParams(U_bb=4.0, Omega=1.0)
    g = LatticeGeometry(3, 2, cutoff=3)
    ed = SectorED(p, g, 2)
    psi0 = np.zeros(ed.dim, dtype=complex)
    psi0[0] = 1.0
    out = exact_diag_dynamics(p, g, 2, psi0, np.linspace(0, 3, 7))
    assert np.allclose(out["charge"], 2.0, atol=1e-12)
    assert np.allclose([np.linalg.norm(v) for v in out["states"]], 1.0, atol=1e-12)
    assert np.allclose(out["density"].sum(axis=1) + out["mol_occ"], 2.0, atol=1e-12)
    with pytest.raises(ValueError):
        exact_diag_dynamics(p, g, 2, psi0, [0.05], trotter_dt=0.1)


def test_wavepacket_examples():
    free = wavepacket_transmission(np.pi / 2, 10, ModelParams())
    assert free.T >= 0.999 and not free.flagged
    blocked = wavepacket_transmission(np.pi / 2, 10, ModelParams(Omega=4.0))
    assert blocked.T < 0.01
    open_ = wavepacket_transmission(np.pi / 3, 10, ModelParams(Omega=1.0, U_qb=1.0))
    assert open_.T > 0.95
    assert fano_transmission(np.pi / 3, ModelParams(Omega=1.0, U_qb=1.0)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        wavepacket_transmission(0.0, 10, ModelParams())


def test_wavepacket_contamination_flagged():
    small = LatticeGeometry(40, 40)
    res = wavepacket_transmission(np.pi / 2, 10, ModelParams(), geometry=small, center=-20)
    assert res.flagged
    with pytest.raises(BoundaryContaminationError):
        wavepacket_transmission(np.pi / 2, 10, ModelParams(), geometry=small, center=-20,
                                strict=True)
