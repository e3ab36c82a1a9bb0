"""Exact references for the TEBD engine.

Three independent routes:

- free fermions (or hard-core bosons at ``Omega = 0``) through the
  single-particle correlation matrix, with the molecule as an extra mode;
- dense exact diagonalization of the full bosonic model in a fixed
  particle-number sector, built from occupation-number configurations;
- single-particle wavepacket scattering for the transmission profile.

For fermions the pair ``d = q^dag m`` is itself a fermionic mode, so the
impurity coupling ``Omega (m^dag q f_0 + h.c.)`` is quadratic. The background
terms stay quadratic only if ``U_qb == U_bm``; then they reduce to a potential
``U_qb`` on site 0.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundaryContaminationError
from .model import LatticeGeometry, ModelParams, fano_transmission
from .observables import TimeSeries

__all__ = [
    "QuadraticModel",
    "CorrelationState",
    "fermion_box_ground",
    "evolve_correlations",
    "kick_correlations",
    "fermion_current_series",
    "SectorED",
    "exact_diag_dynamics",
    "TransmissionResult",
    "wavepacket_transmission",
]


# ---------------------------------------------------------------------------
# free fermions
# ---------------------------------------------------------------------------

@dataclass
class QuadraticModel:
    """Single-particle Hamiltonian over the lattice sites plus the molecule mode.

    Mode ``geometry.n_sites`` is the molecule. ``U_qb`` enters as a potential
    on the impurity site.
    """

    params: ModelParams
    geometry: LatticeGeometry

    def __post_init__(self):
        if not self.geometry.impurity:
            raise ValueError("the quadratic model needs an impurity site")
        L = self.geometry.n_sites
        p = self.params
        h = np.zeros((L + 1, L + 1))
        idx = np.arange(L - 1)
        h[idx, idx + 1] = h[idx + 1, idx] = -p.J
        imp = self.geometry.impurity_index
        h[imp, imp] = p.U_qb
        h[L, imp] = h[imp, L] = p.Omega
        h[L, L] = -p.Delta
        self.h = h
        self._eig = None

    @property
    def molecule(self) -> int:
        return self.geometry.n_sites

    def propagator(self, t: float) -> np.ndarray:
        """``exp(-i h t)``."""
        if self._eig is None:
            self._eig = np.linalg.eigh(self.h)
        w, v = self._eig
        return (v * np.exp(-1j * w * t)) @ v.conj().T


@dataclass
class CorrelationState:
    """``C[i, j] = <c_i^dag c_j>`` over sites and the molecule mode."""

    C: np.ndarray
    t: float = 0.0

    @property
    def number(self) -> float:
        return float(np.trace(self.C).real)


def fermion_box_ground(N: int, M_left: int, geometry: LatticeGeometry) -> CorrelationState:
    """Open-chain Fermi sea of ``N`` particles on the leftmost ``M_left`` sites."""
    if not 0 <= N <= M_left <= geometry.left_sites:
        raise ValueError("need 0 <= N <= M_left <= left_sites")
    L = geometry.n_sites
    C = np.zeros((L + 1, L + 1), dtype=complex)
    j = np.arange(1, M_left + 1)
    orbitals = np.array([math.sqrt(2.0 / (M_left + 1)) * np.sin(math.pi * n * j / (M_left + 1))
                         for n in range(1, N + 1)]).reshape(N, M_left)
    # Fermi sea: <c_i^dag c_j> = sum_n phi_n(i)^* phi_n(j)
    C[:M_left, :M_left] = orbitals.T @ orbitals
    return CorrelationState(C, 0.0)


def evolve_correlations(state: CorrelationState, model: QuadraticModel, t: float) -> CorrelationState:
    """Exact Heisenberg evolution by ``t``.

    With ``c_j(t) = sum_k U_jk c_k`` and ``U = exp(-i h t)``, the matrix
    ``<c_i^dag c_j>`` evolves as ``conj(U) C U^T``.
    """
    if state.C.shape != model.h.shape:
        raise ValueError("correlation matrix and model dimensions differ")
    U = model.propagator(t)
    return CorrelationState(U.conj() @ state.C @ U.T, state.t + t)


def kick_correlations(state: CorrelationState, geometry: LatticeGeometry, p_k: float) -> CorrelationState:
    """Apply ``exp(i p_k j n_j)``: ``C_ij -> exp(i p_k (j - i)) C_ij``; molecule untouched."""
    x = np.append(geometry.positions, 0).astype(float)
    phase = np.exp(1j * p_k * x)
    phase[-1] = 1.0
    return CorrelationState(phase.conj()[:, None] * state.C * phase[None, :], state.t)


def fermion_current_series(params: ModelParams, geometry: LatticeGeometry, N: int,
                           p_k: float, t_grid) -> TimeSeries:
    """``N_R(t)`` of a kicked Fermi sea released from the left box.

    The whole left region is the box. Requires ``U_qb == U_bm``.
    """
    if params.U_qb != params.U_bm:
        raise ValueError("fermion dynamics are quadratic only for U_qb == U_bm")
    model = QuadraticModel(params, geometry)
    state = fermion_box_ground(N, geometry.left_sites, geometry)
    state = kick_correlations(state, geometry, p_k)
    right = geometry.right_indices()
    imp = geometry.impurity_index
    w, v = np.linalg.eigh(model.h)
    # conj(U) C U^T = conj(v) diag(e^{iwt}) [v^T C conj(v)] diag(e^{-iwt}) v^T
    C_eig = v.T @ state.C @ v.conj()
    series = TimeSeries()
    for t in t_grid:
        ph = np.exp(1j * w * t)
        Ct = v.conj() @ (ph[:, None] * C_eig * ph.conj()[None, :]) @ v.T
        d = np.real(np.diag(Ct))
        series.append(t, N_R=float(d[right].sum()), norm=1.0, charge=float(d.sum()),
                      eps_lambda=0.0, mol_occ=float(d[model.molecule]), imp_occ=float(d[imp]))
    return series


# ---------------------------------------------------------------------------
# exact diagonalization
# ---------------------------------------------------------------------------

class SectorED:
    """Dense Hamiltonian of the bosonic model in a fixed particle-number sector.

    Configurations are tuples of per-site ``(n_b, m)`` pairs, ``m`` the
    molecule flag on the impurity site. ``full_index`` maps a configuration to
    the product-basis index used by the MPS code (site 0 slowest; the
    impurity's local index is ``m * imp_cutoff + n_b``).
    """

    def __init__(self, params: ModelParams, geometry: LatticeGeometry, N: int,
                 max_dim: int = 20_000):
        self.params, self.geometry, self.N = params, geometry, N
        L = geometry.n_sites
        imp = geometry.impurity_index
        locals_ = []
        for l in range(L):
            if l == imp:
                s = geometry.imp_cutoff
                locals_.append([(n, m) for m in (0, 1) for n in range(s)])
            else:
                locals_.append([(n, 0) for n in range(geometry.cutoff)])
        self.locals = locals_
        if math.prod(geometry.dims) > 50 * max_dim ** 2:
            raise ValueError("Hilbert space too large to enumerate")
        configs = [c for c in itertools.product(*locals_) if sum(n + m for n, m in c) == N]
        if len(configs) > max_dim:
            raise ValueError(f"sector dimension {len(configs)} exceeds budget {max_dim}")
        self.configs = configs
        self.index = {c: k for k, c in enumerate(configs)}
        self.dim = len(configs)

    # -- operator construction ------------------------------------------------
    def _hopping(self, bonds):
        J = self.params.J
        H = np.zeros((self.dim, self.dim))
        for k, c in enumerate(self.configs):
            for i in bonds:
                for src, dst in ((i, i + 1), (i + 1, i)):
                    n_src, m_src = c[src]
                    n_dst, m_dst = c[dst]
                    if n_src == 0:
                        continue
                    new = list(c)
                    new[src] = (n_src - 1, m_src)
                    new[dst] = (n_dst + 1, m_dst)
                    kk = self.index.get(tuple(new))
                    if kk is None:
                        continue
                    H[kk, k] += -J * math.sqrt(n_src * (n_dst + 1))
        return H

    def _onsite(self):
        p = self.params
        imp = self.geometry.impurity_index
        H = np.zeros((self.dim, self.dim))
        for k, c in enumerate(self.configs):
            diag = 0.0
            for l, (n, m) in enumerate(c):
                if not p.hard_core:
                    diag += 0.5 * p.U_bb * n * (n - 1)
                elif n > 1:
                    raise ValueError("hard-core model with double occupancy")
                if l == imp:
                    diag += (p.U_bm * n - p.Delta) if m else p.U_qb * n
            H[k, k] += diag
            if imp is not None:
                n, m = c[imp]
                if m == 0 and n > 0:
                    new = list(c)
                    new[imp] = (n - 1, 1)
                    kk = self.index.get(tuple(new))
                    if kk is not None:
                        amp = p.Omega * math.sqrt(n)
                        H[kk, k] += amp
                        H[k, kk] += amp
        return H

    def terms(self) -> dict:
        """``{"A": bonds 0,2,..., "B": bonds 1,3,..., "S": single-site}``."""
        L = self.geometry.n_sites
        return {
            "A": self._hopping(range(0, L - 1, 2)),
            "B": self._hopping(range(1, L - 1, 2)),
            "S": self._onsite(),
        }

    def hamiltonian(self) -> np.ndarray:
        t = self.terms()
        return t["A"] + t["B"] + t["S"]

    # -- basis maps -------------------------------------------------------------
    def _local_index(self, l, n, m):
        if l == self.geometry.impurity_index:
            return m * self.geometry.imp_cutoff + n
        return n

    def full_index(self) -> np.ndarray:
        dims = self.geometry.dims
        strides = np.cumprod((list(dims[1:]) + [1])[::-1])[::-1]
        out = np.empty(self.dim, dtype=np.int64)
        for k, c in enumerate(self.configs):
            out[k] = sum(self._local_index(l, n, m) * strides[l] for l, (n, m) in enumerate(c))
        return out

    def from_full(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec)
        sub = vec[self.full_index()]
        leak = np.linalg.norm(vec) ** 2 - np.linalg.norm(sub) ** 2
        if leak > 1e-10:
            raise ValueError("vector has weight outside the particle-number sector")
        return sub

    def to_full(self, sub: np.ndarray) -> np.ndarray:
        out = np.zeros(int(np.prod(self.geometry.dims)), dtype=complex)
        out[self.full_index()] = sub
        return out

    def occupation_table(self) -> dict:
        """Per-configuration probe counts, molecule flag and right-region count."""
        n = np.array([[nb for nb, _ in c] for c in self.configs], dtype=float)
        m = np.array([sum(mm for _, mm in c) for c in self.configs], dtype=float)
        right = self.geometry.right_indices()
        return {"n": n, "m": m, "N_R": n[:, right].sum(axis=1)}


def _expm_herm(H, dt):
    w, v = np.linalg.eigh(H)
    return (v * np.exp(-1j * w * dt)) @ v.conj().T


def exact_diag_dynamics(params: ModelParams, geometry: LatticeGeometry, N: int,
                        initial, t_grid, trotter_dt: float | None = None,
                        max_dim: int = 20_000) -> dict:
    """Dense evolution of the full model from ``initial``.

    ``initial`` is a sector vector or a product-basis vector (as returned by
    :meth:`satebd.mps.VidalState.to_dense`). With ``trotter_dt`` the
    propagator is the symmetric product ``A/2 B/2 S B/2 A/2`` of exact
    exponentials of the sector Hamiltonian pieces (every ``t`` must be a
    multiple of ``trotter_dt``); otherwise ``exp(-i H t)``.

    Returns a dict with ``states`` (sector vectors), ``N_R``, ``mol_occ``,
    ``imp_occ``, ``density``, ``charge`` and the ``ed`` object.
    """
    ed = SectorED(params, geometry, N, max_dim=max_dim)
    psi0 = np.asarray(initial, dtype=complex)
    if psi0.size != ed.dim:
        psi0 = ed.from_full(psi0)
    table = ed.occupation_table()
    imp = geometry.impurity_index
    t_grid = np.asarray(t_grid, dtype=float)
    states = []
    if trotter_dt is None:
        w, v = np.linalg.eigh(ed.hamiltonian())
        c0 = v.conj().T @ psi0
        for t in t_grid:
            states.append(v @ (np.exp(-1j * w * t) * c0))
    else:
        T = ed.terms()
        a = _expm_herm(T["A"], trotter_dt / 2)
        b = _expm_herm(T["B"], trotter_dt / 2)
        s = _expm_herm(T["S"], trotter_dt)
        step = a @ b @ s @ b @ a
        psi, done = psi0.copy(), 0
        for t in t_grid:
            target = int(round(t / trotter_dt))
            if abs(target * trotter_dt - t) > 1e-9 * max(1.0, t):
                raise ValueError(f"t={t} is not a multiple of trotter_dt")
            while done < target:
                psi = step @ psi
                done += 1
            states.append(psi.copy())
    probs = np.array([np.abs(p) ** 2 for p in states])
    density = probs @ table["n"]
    out = {
        "t": t_grid,
        "states": states,
        "N_R": probs @ table["N_R"],
        "mol_occ": probs @ table["m"],
        "imp_occ": density[:, imp] if imp is not None else np.zeros(len(t_grid)),
        "density": density,
        "charge": probs @ (table["n"].sum(axis=1) + table["m"]),
        "ed": ed,
    }
    return out


# ---------------------------------------------------------------------------
# wavepacket scattering
# ---------------------------------------------------------------------------

@dataclass
class TransmissionResult:
    T: float
    t_final: float
    edge_weight: float
    momentum_spread: float
    width_correction: float
    flagged: bool

    def __float__(self):
        return self.T


def wavepacket_transmission(k0: float, width: float = 10.0, params: ModelParams | None = None,
                            geometry: LatticeGeometry | None = None, center: float = -60.0,
                            edge_sites: int = 10, edge_tol: float = 1e-4,
                            rate_tol: float = 1e-5, strict: bool = False) -> TransmissionResult:
    """Transmitted probability of a Gaussian packet launched at ``k0``.

    The packet ``exp(-(x - x0)^2 / (4 width^2) + i k0 x)`` (position spread
    ``width``, momentum spread ``1 / (2 width)``) starts at ``center`` on the
    left (default: 201 sites, launch at -60) and evolves exactly under the single-particle Hamiltonian, molecule
    mode included. ``T`` is the weight on sites ``x > 0`` once it has stopped
    changing (rate below ``rate_tol``). If more than ``edge_tol`` reaches the
    outer ``edge_sites`` the result is flagged (or raises with ``strict``).

    ``width_correction`` estimates the finite-width bias,
    ``0.5 |T''(k0)| sigma_k**2``, from the closed-form profile.
    """
    if not 0 < k0 < math.pi:
        raise ValueError("k0 must lie in (0, pi)")
    params = params or ModelParams()
    if geometry is None:
        geometry = LatticeGeometry(left_sites=100, right_sites=100, cutoff=2)
    if not -geometry.left_sites < center < 0:
        raise ValueError("the packet must start on the left of the impurity")
    model = QuadraticModel(params, geometry)
    x = np.append(geometry.positions, 0).astype(float)
    psi = np.exp(-((x - center) ** 2) / (4 * width ** 2) + 1j * k0 * x)
    psi[-1] = 0.0
    psi /= np.linalg.norm(psi)
    w, v = np.linalg.eigh(model.h)
    c0 = v.conj().T @ psi
    right = geometry.right_indices()
    edges = np.r_[np.arange(edge_sites), np.arange(geometry.n_sites - edge_sites, geometry.n_sites)]
    velocity = 2 * params.J * math.sin(k0)

    def at(t):
        p = np.abs(v @ (np.exp(-1j * w * t) * c0)) ** 2
        return float(p[right].sum()), float(p[edges].sum())

    t = (abs(center) + 3 * width) / velocity
    dt_check = 2.0
    t_limit = (geometry.right_sites + abs(center)) / velocity
    T, edge = at(t)
    while True:
        T_next, edge_next = at(t + dt_check)
        rate = abs(T_next - T) / dt_check
        t, T, edge = t + dt_check, T_next, max(edge, edge_next)
        if rate < rate_tol or t > t_limit:
            break
    flagged = edge > edge_tol or rate >= rate_tol
    if flagged and strict:
        raise BoundaryContaminationError(f"edge weight {edge:.2e}, rate {rate:.2e} at t={t:.1f}")
    sigma_k = 1.0 / (2 * width)
    h = min(0.01, k0 / 4, (math.pi - k0) / 4)
    try:
        f = fano_transmission(np.array([k0 - h, k0, k0 + h]), params)
        corr = 0.5 * abs(f[0] - 2 * f[1] + f[2]) / h ** 2 * sigma_k ** 2
    except ValueError:
        corr = math.nan
    return TransmissionResult(T, t, edge, sigma_k, float(corr), bool(flagged))
