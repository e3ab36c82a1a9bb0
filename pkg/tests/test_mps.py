import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from satebd import mps
from satebd.errors import ChargeViolationError
from satebd.model import LatticeGeometry, annihilation_op, exponentiate, local_charges, number_op


def random_sector_state(dims, N, rng):
    charges = np.meshgrid(*[np.arange(d) for d in dims], indexing="ij")
    total = sum(charges).ravel()
    psi = (rng.normal(size=total.size) + 1j * rng.normal(size=total.size)) * (total == N)
    return psi / np.linalg.norm(psi)


def random_pair_gate(d1, d2, rng, q1=None, q2=None, dt=0.7):
    q1 = np.arange(d1) if q1 is None else q1
    q2 = np.arange(d2) if q2 is None else q2
    q = (q1[:, None] + q2[None, :]).ravel()
    a = rng.normal(size=(d1 * d2,) * 2) + 1j * rng.normal(size=(d1 * d2,) * 2)
    h = (a + a.conj().T) * (q[:, None] == q[None, :])
    return exponentiate(h, dt, charges=q)


def apply_dense(psi, dims, gate, bond):
    L = len(dims)
    t = psi.reshape(dims)
    d1, d2 = dims[bond], dims[bond + 1]
    t = np.moveaxis(t, (bond, bond + 1), (0, 1)).reshape(d1 * d2, -1)
    t = (gate @ t).reshape((d1, d2) + tuple(d for k, d in enumerate(dims) if k not in (bond, bond + 1)))
    return np.moveaxis(t, (0, 1), (bond, bond + 1)).reshape(-1)


def dense_schmidt(psi, dims, bond):
    left = int(np.prod(dims[: bond + 1]))
    return np.linalg.svd(psi.reshape(left, -1), compute_uv=False)


def test_product_state():
    g = LatticeGeometry(left_sites=2, right_sites=1, cutoff=2)
    s = mps.from_product_state([1, 0, g.basis_index(2, 0, True), 1], g)
    assert s.norm() == pytest.approx(1.0)
    assert s.max_chi == 1
    psi = s.to_dense()
    assert np.count_nonzero(psi) == 1
    assert mps.total_charge(s) == pytest.approx((3.0, 0.0))
    with pytest.raises(ValueError):
        mps.from_product_state([2, 0, 0, 0], g)


@pytest.mark.parametrize("conserving", [True, False])
def test_from_dense_gauge(conserving):
    rng = np.random.default_rng(3)
    dims = [3, 2, 4, 2, 3]
    psi = random_sector_state(dims, 4, rng)
    s = mps.from_dense(psi, dims, conserving=conserving)
    assert np.allclose(s.to_dense(), psi, atol=1e-12)
    for b in range(len(dims) - 1):
        ref = dense_schmidt(psi, dims, b)
        lam = s.lams[b + 1]
        assert np.allclose(np.sort(lam)[::-1], ref[: len(lam)], atol=1e-10)
        assert np.sum(lam ** 2) == pytest.approx(1.0, abs=1e-12)


def test_from_dense_rejects_mixed_charge():
    psi = np.zeros(4)
    psi[0] = psi[3] = 2 ** -0.5
    with pytest.raises(ChargeViolationError):
        mps.from_dense(psi, [2, 2])
    s = mps.from_dense(psi, [2, 2], conserving=False)
    mean, var = mps.total_charge(s)
    assert mean == pytest.approx(1.0) and var == pytest.approx(1.0)


@pytest.mark.parametrize("conserving", [True, False])
def test_gate_sequence_matches_dense(conserving):
    rng = np.random.default_rng(7)
    dims = [2, 3, 3, 2, 3, 2]
    psi = random_sector_state(dims, 4, rng)
    s = mps.from_dense(psi, dims, conserving=conserving)
    policy = mps.TruncationPolicy(chi_max=None, conserving=conserving)
    for _ in range(3):
        for b in list(range(len(dims) - 1)) + list(range(len(dims) - 2, -1, -1)):
            G = random_pair_gate(dims[b], dims[b + 1], rng)
            rep = mps.apply_two_site_gate(s, G, b, policy)
            assert rep.discarded < 1e-20
            psi = apply_dense(psi, dims, G, b)
    assert np.allclose(s.to_dense(), psi, atol=1e-10)
    for b in range(len(dims) - 1):
        lam = np.sort(s.lams[b + 1])[::-1]
        assert np.allclose(lam, dense_schmidt(psi, dims, b)[: len(lam)], atol=1e-10)


def test_truncation_reports_discarded_weight():
    rng = np.random.default_rng(1)
    dims = [2] * 6
    psi = random_sector_state(dims, 3, rng)
    s = mps.from_dense(psi, dims)
    G = random_pair_gate(2, 2, rng)
    psi2 = apply_dense(psi, dims, G, 2)
    ref = dense_schmidt(psi2, dims, 2)
    rep = mps.apply_two_site_gate(s, G, 2, mps.TruncationPolicy(chi_max=2))
    assert rep.chi == 2
    assert rep.discarded == pytest.approx(np.sum(ref[2:] ** 2), rel=1e-8)
    assert np.sum(s.lams[3] ** 2) == pytest.approx(1.0)
    assert s.discarded_total == pytest.approx(rep.discarded)


def test_schmidt_spectrum_charges():
    # (|10> + |01>)/sqrt2: bond labels 1 and 0
    psi = np.array([0, 1, 1, 0]) / np.sqrt(2)
    s = mps.from_dense(psi, [2, 2])
    spec = mps.schmidt_spectrum(s, 0)
    assert sorted(q for _, q in spec.pairs()) == [0, 1]
    assert spec.entropy == pytest.approx(np.log(2))
    assert spec.norm == pytest.approx(1.0)


def test_gate_leaking_charge_raises():
    s = mps.from_product_state([1, 0], [2, 2])
    X = np.kron(np.array([[0, 1], [1, 0]]), np.eye(2))
    with pytest.raises(ChargeViolationError):
        mps.apply_two_site_gate(s, X, 0)


def test_expectations_match_dense():
    rng = np.random.default_rng(11)
    g = LatticeGeometry(left_sites=2, right_sites=1, cutoff=3)
    dims = list(g.dims)
    charges = [local_charges(g, l) for l in range(g.n_sites)]
    grids = np.meshgrid(*charges, indexing="ij")
    total = sum(grids).ravel()
    psi = (rng.normal(size=total.size) + 1j * rng.normal(size=total.size)) * (total == 3)
    psi /= np.linalg.norm(psi)
    s = mps.from_dense(psi, g)
    # single-site and pair operators
    for l in range(g.n_sites):
        n = number_op(g, l)
        ref = np.vdot(psi, apply_single(psi, dims, n, l)).real
        assert mps.expect_site(s, l, n) == pytest.approx(ref, abs=1e-12)
        assert mps.expect_site(s, l, np.diag(n)) == pytest.approx(ref, abs=1e-12)
    C = mps.correlation_matrix(s, g)
    for i in range(g.n_sites):
        for j in range(g.n_sites):
            bi, bj = annihilation_op(g, i), annihilation_op(g, j)
            ref = np.vdot(apply_single(psi, dims, bi, i), apply_single(psi, dims, bj, j))
            assert C[i, j] == pytest.approx(ref, abs=1e-12)
    op = np.kron(annihilation_op(g, 1).T, annihilation_op(g, 2))
    ref = np.vdot(psi, apply_dense(psi, dims, op, 1))
    assert mps.expect_bond(s, 1, op) == pytest.approx(ref, abs=1e-12)
    assert mps.total_charge(s) == pytest.approx((3.0, 0.0), abs=1e-12)


def apply_single(psi, dims, op, site):
    t = np.moveaxis(psi.reshape(dims), site, 0)
    t = np.tensordot(op, t, axes=(1, 0))
    return np.moveaxis(t, 0, site).reshape(-1)


def test_canonicalize_after_nonunitary_gate():
    rng = np.random.default_rng(5)
    dims = [2, 3, 2, 2]
    psi = random_sector_state(dims, 3, rng)
    s = mps.from_dense(psi, dims)
    a = rng.normal(size=(6, 6))
    q = (np.arange(2)[:, None] + np.arange(3)[None, :]).ravel()
    G = exponentiate(a + a.T, 0.3, imaginary=True, charges=q)
    mps.apply_two_site_gate(s, G, 0)
    psi2 = apply_dense(psi, dims, G, 0)
    psi2 /= np.linalg.norm(psi2)
    norm = mps.canonicalize(s)
    assert norm > 0
    assert np.allclose(s.to_dense(), psi2, atol=1e-10)
    for b in range(3):
        lam = np.sort(s.lams[b + 1])[::-1]
        assert np.allclose(lam, dense_schmidt(psi2, dims, b)[: len(lam)], atol=1e-10)


def test_snapshot_roundtrip_and_determinism(tmp_path):
    rng = np.random.default_rng(2)
    dims = [2, 3, 2]
    s = mps.from_dense(random_sector_state(dims, 2, rng), dims)
    p1, p2 = tmp_path / "a.zip", tmp_path / "b.zip"
    mps.save_snapshot(s, p1, meta={"x": 1}, arrays={"t": np.arange(3.0)})
    mps.save_snapshot(s, p2, meta={"x": 1}, arrays={"t": np.arange(3.0)})
    assert p1.read_bytes() == p2.read_bytes()
    r, meta, arrays = mps.load_snapshot(p1)
    assert meta == {"x": 1}
    assert np.array_equal(arrays["t"], np.arange(3.0))
    for a, b in zip(r.tensors, s.tensors):
        assert np.array_equal(a, b)
    for a, b in zip(r.qs, s.qs):
        assert np.array_equal(a, b)
    assert np.allclose(r.to_dense(), s.to_dense())
    with pytest.raises(Exception):
        mps.load_snapshot(tmp_path / "missing.zip")


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 16), L=st.integers(2, 5), N=st.integers(0, 4))
def test_dense_roundtrip_property(seed, L, N):
    rng = np.random.default_rng(seed)
    dims = list(rng.integers(2, 4, size=L))
    if N > sum(d - 1 for d in dims):
        return
    psi = random_sector_state(dims, N, rng)
    s = mps.from_dense(psi, dims)
    assert np.allclose(s.to_dense(), psi, atol=1e-11)
    assert s.norm() == pytest.approx(1.0, abs=1e-12)
    for p in range(1, L):
        assert np.sum(s.lams[p] ** 2) == pytest.approx(1.0, abs=1e-12)
        assert np.all(s.qs[p] >= 0) and np.all(s.qs[p] <= N)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 16))
def test_unitary_gates_preserve_norm_and_charge(seed):
    rng = np.random.default_rng(seed)
    dims = [3, 2, 3, 2]
    s = mps.from_dense(random_sector_state(dims, 3, rng), dims)
    for b in (0, 2, 1):
        mps.apply_two_site_gate(s, random_pair_gate(dims[b], dims[b + 1], rng), b)
    assert s.norm() == pytest.approx(1.0, abs=1e-12)
    mean, var = mps.total_charge(s)
    assert mean == pytest.approx(3.0, abs=1e-10) and var == pytest.approx(0.0, abs=1e-10)


def test_update_cost_scales_as_chi_cubed():
    rng = np.random.default_rng(0)
    L = 16
    dims = [2] * L
    psi = rng.normal(size=2 ** L) + 1j * rng.normal(size=2 ** L)
    full = mps.from_dense(psi / np.linalg.norm(psi), dims, conserving=False)
    G = random_pair_gate(2, 2, rng)
    times = {}
    for chi in (20, 40, 80):
        policy = mps.TruncationPolicy(chi_max=chi, conserving=False)
        s = full.copy()
        mps.canonicalize(s, policy)
        best = np.inf
        for _ in range(5):
            t0 = time.perf_counter()
            for _ in range(4):
                mps.apply_two_site_gate(s, G, L // 2 - 1, policy)
            best = min(best, time.perf_counter() - t0)
        times[chi] = best
    # doubling chi costs at most 8x, with a factor-2 slack for timing noise
    assert times[40] / times[20] < 16
    assert times[80] / times[40] < 16
