r"""Physical model of probe atoms scattering off a single impurity.

Probe atoms ``b`` hop on a 1D lattice with amplitude ``J`` and interact on site
with ``U_bb``. Site 0 holds an impurity ``q`` that can bind one probe atom into
a molecule ``m`` with Rabi frequency ``Omega`` and detuning ``Delta``:

.. math::

    H = -J \sum_{\langle ij\rangle} b_i^\dagger b_j
        + \tfrac{U_{bb}}{2} \sum_j n_j (n_j - 1)
        + \Omega (m^\dagger q b_0 + h.c.) - \Delta\, m^\dagger m
        + U_{qb} n_0 q^\dagger q + U_{bm} n_0 m^\dagger m

Units: :math:`\hbar = 1`, lattice spacing 1, energies in units of ``J``.

Local basis conventions
-----------------------
An ordinary site with cutoff ``S`` has basis ``|n_b>`` for ``n_b = 0..S-1``.
The impurity site with probe cutoff ``s`` has ``S_0 = 2 s`` states; basis
index ``c * s + n_b`` where ``c = 0`` means the impurity is unbound (``q``)
and ``c = 1`` means a molecule is present. A molecule carries one unit of
particle number, so the conserved charge of ``(n_b, c)`` is ``n_b + c``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularityError

__all__ = [
    "ModelParams",
    "LatticeGeometry",
    "dispersion",
    "dressed_energies",
    "effective_tunneling",
    "fano_transmission",
    "local_charges",
    "annihilation_op",
    "number_op",
    "molecule_number_op",
    "bond_hamiltonian",
    "impurity_site_hamiltonian",
    "site_hamiltonian",
    "pair_charges",
    "exponentiate",
    "bond_gate",
    "site_gate",
]


@dataclass(frozen=True)
class ModelParams:
    """Couplings of the impurity model.

    ``U_bb = math.inf`` selects the hard-core (Tonks) limit, in which the
    on-site interaction is enforced by a local cutoff of 2 rather than by an
    energy term.
    """

    J: float = 1.0
    U_bb: float = math.inf
    Omega: float = 0.0
    Delta: float = 0.0
    U_qb: float = 0.0
    U_bm: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.J) and self.J > 0):
            raise ValueError(f"J must be finite and positive, got {self.J}")
        for name in ("Omega", "Delta", "U_qb", "U_bm"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if math.isnan(self.U_bb) or self.U_bb == -math.inf:
            raise ValueError("U_bb must be a real number or +inf")

    @property
    def hard_core(self) -> bool:
        return math.isinf(self.U_bb)

    def replace(self, **changes) -> "ModelParams":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return ModelParams(**values)


@dataclass(frozen=True)
class LatticeGeometry:
    """Sites ``-left_sites..-1``, the impurity at 0, then ``1..right_sites``.

    ``cutoff`` is the local dimension ``S_l`` of ordinary sites (one more than
    the maximum occupation); ``impurity_cutoff`` is the probe cutoff on the
    impurity site, so ``S_0 = 2 * impurity_cutoff``. A geometry with
    ``impurity=False`` is a plain box of ``left_sites`` sites (used for
    ground-state preparation).
    """

    left_sites: int = 30
    right_sites: int = 30
    cutoff: int = 2
    impurity: bool = True
    impurity_cutoff: int | None = None
    _dims: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.left_sites < 0 or self.right_sites < 0:
            raise ValueError("site counts must be non-negative")
        if self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        if self.impurity_cutoff is not None and self.impurity_cutoff < 1:
            raise ValueError("impurity_cutoff must be >= 1")
        if not self.impurity and self.right_sites:
            raise ValueError("a box geometry has no right region")
        if self.n_sites < 1:
            raise ValueError("geometry has no sites")
        dims = [self.cutoff] * self.n_sites
        if self.impurity:
            dims[self.left_sites] = 2 * self.imp_cutoff
        object.__setattr__(self, "_dims", tuple(dims))

    @classmethod
    def box(cls, sites: int, cutoff: int = 2) -> "LatticeGeometry":
        return cls(left_sites=sites, right_sites=0, cutoff=cutoff, impurity=False)

    @property
    def imp_cutoff(self) -> int:
        return self.cutoff if self.impurity_cutoff is None else self.impurity_cutoff

    @property
    def n_sites(self) -> int:
        return self.left_sites + self.right_sites + (1 if self.impurity else 0)

    @property
    def impurity_index(self) -> int | None:
        """Array index of the impurity site, or None for a box."""
        return self.left_sites if self.impurity else None

    @property
    def dims(self) -> tuple:
        return self._dims

    @property
    def positions(self) -> np.ndarray:
        """Lattice coordinate of every array index (impurity at 0)."""
        return np.arange(self.n_sites) - self.left_sites

    def is_impurity(self, l: int) -> bool:
        return self.impurity and l == self.left_sites

    def right_indices(self) -> np.ndarray:
        """Array indices of sites with coordinate > 0."""
        return np.nonzero(self.positions > 0)[0]

    def check_site(self, l: int) -> None:
        if not 0 <= l < self.n_sites:
            raise IndexError(f"site {l} outside lattice of {self.n_sites} sites")

    def check_bond(self, l: int) -> None:
        if not 0 <= l < self.n_sites - 1:
            raise IndexError(f"bond {l} outside lattice of {self.n_sites} sites")

    def basis_index(self, l: int, n_b: int, molecule: bool = False) -> int:
        """Local basis index of occupation ``n_b`` (and molecule flag) on site ``l``."""
        self.check_site(l)
        if self.is_impurity(l):
            s = self.imp_cutoff
            if not 0 <= n_b < s:
                raise ValueError(f"occupation {n_b} exceeds impurity cutoff {s}")
            return int(molecule) * s + n_b
        if molecule:
            raise ValueError(f"site {l} cannot hold a molecule")
        if not 0 <= n_b < self.cutoff:
            raise ValueError(f"occupation {n_b} exceeds cutoff {self.cutoff}")
        return n_b


# ---------------------------------------------------------------------------
# single-particle formulas
# ---------------------------------------------------------------------------

def dispersion(k, J: float = 1.0):
    """Lowest-band energy ``-2 J cos(k)``."""
    return -2.0 * J * np.cos(k)


def dressed_energies(params: ModelParams) -> tuple[float, float]:
    """Energies of the two dressed impurity states ``(eps_plus, eps_minus)``."""
    half = 0.5 * params.U_qb
    root = math.sqrt(half * half + params.Omega ** 2)
    return half + root, half - root


def effective_tunneling(eps: float, params: ModelParams, tol: float = 1e-12) -> float:
    """Second-order tunnelling amplitude past the impurity (``U_qb = 0``)."""
    J2 = params.J ** 2
    a = eps + params.Omega
    b = eps - params.Omega
    if abs(a) < tol or abs(b) < tol:
        raise SingularityError(f"eps={eps} sits on a dressed-state pole +/-{params.Omega}")
    return -J2 / a - J2 / b


def fano_transmission(k, params: ModelParams, tol: float = 1e-12):
    """Transmission probability of a single atom with quasimomentum ``k``.

    Eliminating the molecule amplitude leaves an energy-dependent point
    potential ``V(eps) = U_qb + Omega**2 / (eps + Delta)`` on site 0; a point
    potential on a tight-binding chain transmits ``v**2 / (v**2 + V**2)`` with
    ``v = 2 J sin(k)``. ``V`` diverges at ``eps = -Delta`` (complete
    reflection) and vanishes at ``eps = -Delta - Omega**2 / U_qb``.
    """
    k = np.asarray(k, dtype=float)
    if np.any((k <= 0) | (k >= np.pi)):
        raise ValueError("k must lie in (0, pi)")
    eps = dispersion(k, params.J)
    v2 = (2.0 * params.J * np.sin(k)) ** 2
    detuned = eps + params.Delta
    if params.Omega == 0.0:
        V = np.full_like(eps, params.U_qb)
        T = v2 / (v2 + V * V)
    else:
        pole = np.abs(detuned) < tol * params.J
        safe = np.where(pole, 1.0, detuned)
        V = params.U_qb + params.Omega ** 2 / safe
        T = np.where(pole, 0.0, v2 / (v2 + V * V))
    return T if T.ndim else float(T)


# ---------------------------------------------------------------------------
# local operators
# ---------------------------------------------------------------------------

def local_charges(geometry: LatticeGeometry, l: int) -> np.ndarray:
    """Particle number carried by each local basis state of site ``l``."""
    geometry.check_site(l)
    if geometry.is_impurity(l):
        s = geometry.imp_cutoff
        return np.concatenate([np.arange(s), np.arange(s) + 1])
    return np.arange(geometry.cutoff)


def _boson_annihilation(s: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, s, dtype=float)), 1)


def annihilation_op(geometry: LatticeGeometry, l: int) -> np.ndarray:
    """Probe annihilation ``b_l``; on the impurity it leaves ``c`` unchanged."""
    geometry.check_site(l)
    if geometry.is_impurity(l):
        return np.kron(np.eye(2), _boson_annihilation(geometry.imp_cutoff))
    return _boson_annihilation(geometry.cutoff)


def number_op(geometry: LatticeGeometry, l: int) -> np.ndarray:
    """Probe occupation ``b_l^dag b_l`` (molecules not counted)."""
    b = annihilation_op(geometry, l)
    return b.T @ b


def molecule_number_op(geometry: LatticeGeometry, l: int | None = None) -> np.ndarray:
    """``m^dag m`` on the impurity site."""
    l = geometry.impurity_index if l is None else l
    if l is None or not geometry.is_impurity(l):
        raise ValueError("molecule number is only defined on the impurity site")
    s = geometry.imp_cutoff
    return np.kron(np.diag([0.0, 1.0]), np.eye(s))


def _onsite_interaction(params: ModelParams, s: int) -> np.ndarray:
    if params.hard_core:
        if s > 2:
            raise ValueError("hard-core bosons need a local cutoff of 2")
        return np.zeros((s, s))
    n = np.arange(s, dtype=float)
    return np.diag(0.5 * params.U_bb * n * (n - 1))


def impurity_site_hamiltonian(params: ModelParams, geometry: LatticeGeometry) -> np.ndarray:
    """Single-site Hamiltonian of the impurity site on its ``S_0`` states."""
    if not geometry.impurity:
        raise ValueError("geometry has no impurity")
    s = geometry.imp_cutoff
    n = np.arange(s, dtype=float)
    H = np.zeros((2 * s, 2 * s))
    # q block then m block
    H[:s, :s] = np.diag(params.U_qb * n)
    H[s:, s:] = np.diag(params.U_bm * n - params.Delta)
    U = _onsite_interaction(params, s)
    H[:s, :s] += U
    H[s:, s:] += U
    # Omega m^dag q b_0: (n_b, q) -> (n_b - 1, m) with amplitude sqrt(n_b)
    for nb in range(1, s):
        amp = params.Omega * math.sqrt(nb)
        H[s + nb - 1, nb] = amp
        H[nb, s + nb - 1] = amp
    return H


def site_hamiltonian(params: ModelParams, geometry: LatticeGeometry, l: int) -> np.ndarray:
    """All single-site terms of site ``l``."""
    geometry.check_site(l)
    if geometry.is_impurity(l):
        return impurity_site_hamiltonian(params, geometry)
    return _onsite_interaction(params, geometry.cutoff)


def bond_hamiltonian(params: ModelParams, geometry: LatticeGeometry, i: int) -> np.ndarray:
    """Hopping ``-J (b_i^dag b_{i+1} + h.c.)`` on the pair space of bond ``i``.

    Rows and columns are indexed ``a * S_{i+1} + b`` for local states ``a`` of
    site ``i`` and ``b`` of site ``i + 1``. Single-site terms are not included;
    they live in :func:`site_hamiltonian`.
    """
    geometry.check_bond(i)
    bi = annihilation_op(geometry, i)
    bj = annihilation_op(geometry, i + 1)
    hop = np.kron(bi.T, bj)
    return -params.J * (hop + hop.T)


def pair_charges(geometry: LatticeGeometry, i: int) -> np.ndarray:
    """Charges of the pair basis of bond ``i`` (ordering of :func:`bond_hamiltonian`)."""
    return (local_charges(geometry, i)[:, None] + local_charges(geometry, i + 1)[None, :]).ravel()


def exponentiate(h: np.ndarray, dt: float, imaginary: bool = False,
                 charges: np.ndarray | None = None) -> np.ndarray:
    """``exp(-i h dt)`` or, for imaginary time, ``exp(-h dt)``, for Hermitian ``h``.

    With ``charges`` the exponential is built sector by sector, so entries
    between different charge sectors are exactly zero.
    """
    dtype = float if imaginary and np.isrealobj(h) else complex
    out = np.zeros(h.shape, dtype=dtype)
    if charges is None:
        sectors = [np.arange(h.shape[0])]
    else:
        sectors = [np.nonzero(charges == q)[0] for q in np.unique(charges)]
    for idx in sectors:
        w, v = np.linalg.eigh(h[np.ix_(idx, idx)])
        phases = np.exp(-dt * w) if imaginary else np.exp(-1j * dt * w)
        out[np.ix_(idx, idx)] = (v * phases) @ v.conj().T
    return out


def bond_gate(params: ModelParams, geometry: LatticeGeometry, i: int, dt: float,
              imaginary: bool = False) -> np.ndarray:
    """Exponentiated hopping on bond ``i``."""
    return exponentiate(bond_hamiltonian(params, geometry, i), dt, imaginary,
                        pair_charges(geometry, i))


def site_gate(params: ModelParams, geometry: LatticeGeometry, l: int, dt: float,
              imaginary: bool = False) -> np.ndarray:
    """Exponentiated single-site terms of site ``l``."""
    return exponentiate(site_hamiltonian(params, geometry, l), dt, imaginary,
                        local_charges(geometry, l))
