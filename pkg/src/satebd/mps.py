r"""Matrix product states in Vidal's :math:`\Gamma`-:math:`\lambda` form.

A state on ``L`` sites is stored as Schmidt vectors ``lams[p]`` on the
``L + 1`` bond positions ``p = 0..L`` (position ``p`` sits between sites
``p - 1`` and ``p``; the two boundary positions hold ``[1.0]``) together with
the right-normalized site tensors

.. math::

    B^{[l]\, i}_{\alpha\beta} = \Gamma^{[l]\, i}_{\alpha\beta}\, \lambda^{[l+1]}_\beta ,

so that the amplitudes are ``B[0] B[1] ... B[L-1]`` and ``Gamma[l]`` is
recovered as ``B[l] / lams[l + 1]``. Updating through ``B`` instead of
``Gamma`` never divides by small Schmidt values, which keeps long truncated
evolutions stable.

Number conservation
-------------------
Every Schmidt index carries an integer label ``qs[p][alpha]``: the number of
particles in sites ``0..p-1``. A nonzero ``B[l][a, i, b]`` requires
``qs[l][a] + charge(i) == qs[l + 1][b]``. Two-site updates then split the
wavefunction matrix into charge blocks and decompose each one separately.
The plain (charge-agnostic) path decomposes the full matrix and drops the
labels of the bond it touches.

Tensor index order is ``(left bond, physical, right bond)``, row-major, in
memory and in snapshots.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ChargeViolationError, DecompositionError

__all__ = [
    "TruncationPolicy",
    "StepReport",
    "SchmidtSpectrum",
    "VidalState",
    "from_product_state",
    "from_dense",
    "apply_two_site_gate",
    "apply_single_site_gate",
    "expect_site",
    "expect_bond",
    "correlation_matrix",
    "total_charge",
    "schmidt_spectrum",
    "canonicalize",
    "save_snapshot",
    "load_snapshot",
    "SNAPSHOT_VERSION",
]

SNAPSHOT_VERSION = 1


@dataclass
class TruncationPolicy:
    """How Schmidt spectra are cut after each update.

    ``chi_max=None`` keeps every coefficient above ``lambda_floor``.
    ``conserving`` selects the charge-block update; ``False`` runs the plain
    dense decomposition.
    """

    chi_max: int | None = None
    lambda_floor: float = 1e-12
    conserving: bool = True

    def __post_init__(self):
        if self.chi_max is not None and self.chi_max < 1:
            raise ValueError("chi_max must be positive")
        if self.lambda_floor < 0:
            raise ValueError("lambda_floor must be non-negative")


@dataclass
class StepReport:
    bond: int
    discarded: float
    chi: int


@dataclass(frozen=True)
class SchmidtSpectrum:
    bond: int
    values: np.ndarray
    charges: np.ndarray | None = None

    @property
    def norm(self) -> float:
        return float(np.sum(self.values ** 2))

    @property
    def entropy(self) -> float:
        p = self.values ** 2
        p = p[p > 0]
        return float(-np.sum(p * np.log(p)))

    def pairs(self) -> list[tuple[float, int | None]]:
        qs = self.charges if self.charges is not None else [None] * len(self.values)
        return [(float(v), None if q is None else int(q)) for v, q in zip(self.values, qs)]


@dataclass
class VidalState:
    tensors: list            # B[l], shape (chi_l, S_l, chi_{l+1})
    lams: list               # L + 1 Schmidt vectors, boundaries [1.0]
    site_charges: list       # per site, charge of each local basis state
    qs: list | None = None   # L + 1 label arrays, or None entries on plain bonds
    discarded_total: float = field(default=0.0)

    def __post_init__(self):
        L = len(self.tensors)
        if len(self.lams) != L + 1 or len(self.site_charges) != L:
            raise ValueError("inconsistent number of sites")
        if self.qs is None:
            self.qs = [None] * (L + 1)

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def dims(self) -> tuple:
        return tuple(t.shape[1] for t in self.tensors)

    @property
    def bond_dims(self) -> list[int]:
        return [len(l) for l in self.lams[1:-1]]

    @property
    def max_chi(self) -> int:
        return max(self.bond_dims, default=1)

    @property
    def conserving(self) -> bool:
        return all(q is not None for q in self.qs)

    def gamma(self, l: int) -> np.ndarray:
        """Vidal tensor ``Gamma[l]`` (left bond, physical, right bond)."""
        return self.tensors[l] / self.lams[l + 1][None, None, :]

    def copy(self) -> "VidalState":
        return VidalState(
            tensors=[t.copy() for t in self.tensors],
            lams=[l.copy() for l in self.lams],
            site_charges=[c.copy() for c in self.site_charges],
            qs=[None if q is None else q.copy() for q in self.qs],
            discarded_total=self.discarded_total,
        )

    def norm(self) -> float:
        """``<psi|psi>`` by exact contraction, independent of the gauge."""
        E = np.ones((1, 1))
        for B in self.tensors:
            E = _transfer(E, B, B)
        return float(E[0, 0].real)

    def to_dense(self, max_dim: int = 2 ** 22) -> np.ndarray:
        """Expand into a full state vector (site 0 is the slowest index)."""
        if int(np.prod(self.dims, dtype=float)) > max_dim:
            raise ValueError("state too large to expand")
        psi = np.ones((1, 1), dtype=complex)
        for B in self.tensors:
            psi = np.tensordot(psi, B, axes=(1, 0))
            psi = psi.reshape(-1, B.shape[2])
        return psi[:, 0]


def _transfer(E, Bbra, Bket):
    # E[a, b] -> sum conj(Bbra[a, i, c]) E[a, b] Bket[b, i, d]
    tmp = np.tensordot(E, Bket, axes=(1, 0))                      # (a, i, d)
    return np.tensordot(Bbra.conj(), tmp, axes=([0, 1], [0, 1]))   # (c, d)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _dims_and_charges(dims, site_charges):
    if hasattr(dims, "dims") and hasattr(dims, "n_sites"):
        from .model import local_charges

        geometry = dims
        return list(geometry.dims), [local_charges(geometry, l) for l in range(geometry.n_sites)]
    dims = [int(d) for d in dims]
    if site_charges is None:
        site_charges = [np.arange(d) for d in dims]
    return dims, [np.asarray(c, dtype=np.int64) for c in site_charges]


def from_product_state(occupations, dims, site_charges=None) -> VidalState:
    """Product state from one local basis index per site.

    ``dims`` is either a sequence of local dimensions (charges default to the
    basis index) or a :class:`~satebd.model.LatticeGeometry`.
    """
    dims, charges = _dims_and_charges(dims, site_charges)
    if len(occupations) != len(dims):
        raise ValueError("need one occupation per site")
    tensors, lams, qs = [], [np.ones(1)], [np.zeros(1, dtype=np.int64)]
    total = 0
    for occ, d, c in zip(occupations, dims, charges):
        if not 0 <= occ < d:
            raise ValueError(f"occupation index {occ} outside local dimension {d}")
        B = np.zeros((1, d, 1), dtype=complex)
        B[0, occ, 0] = 1.0
        tensors.append(B)
        total += int(c[occ])
        lams.append(np.ones(1))
        qs.append(np.array([total], dtype=np.int64))
    return VidalState(tensors, lams, charges, qs)


def from_dense(psi, dims, site_charges=None, conserving: bool = True,
               policy: TruncationPolicy | None = None) -> VidalState:
    """Exact Vidal form of a dense state vector (site 0 slowest)."""
    dims, charges = _dims_and_charges(dims, site_charges)
    psi = np.asarray(psi, dtype=complex)
    if psi.size != int(np.prod(dims)):
        raise ValueError("vector size does not match dims")
    grids = np.meshgrid(*charges, indexing="ij")
    config_charge = sum(g for g in grids).ravel()
    support = np.abs(psi) > 0
    if conserving:
        totals = np.unique(config_charge[support])
        if len(totals) != 1:
            raise ChargeViolationError("vector is not an eigenstate of total charge")
        total = int(totals[0])
    L = len(dims)
    tensors = []
    q_left = np.zeros(1, dtype=np.int64) if conserving else None
    rest = psi.reshape(1, -1)
    qs = [q_left]
    for l in range(L - 1):
        chi = rest.shape[0]
        d = dims[l]
        mat = rest.reshape(chi * d, -1)
        if conserving:
            rq = (q_left[:, None] + charges[l][None, :]).ravel()
            tail = np.meshgrid(*charges[l + 1:], indexing="ij")
            cq = total - sum(t for t in tail).ravel()
        else:
            rq = cq = None
        U, s, V, labels, _ = _decompose(mat, rq, cq, None, 0.0)
        tensors.append(U.reshape(chi, d, -1))
        rest = s[:, None] * V
        q_left = labels
        qs.append(labels)
    tensors.append(rest.reshape(rest.shape[0], dims[-1], 1))
    qs.append(np.array([total], dtype=np.int64) if conserving else None)
    lams = [np.ones(1)] + [np.ones(t.shape[2]) for t in tensors]
    state = VidalState(tensors, lams, charges, qs)
    canonicalize(state, policy)
    return state


# ---------------------------------------------------------------------------
# decompositions
# ---------------------------------------------------------------------------

def _svd(mat):
    try:
        return np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        pass
    try:
        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise DecompositionError(f"SVD failed on a {mat.shape} block") from exc


def _decompose(mat, row_q, col_q, chi_max, floor):
    """Truncated SVD ``mat ~ U diag(s) V``, charge-blocked when labels are given.

    Values are ordered globally by decreasing magnitude, ties broken by
    smaller charge label and then by position inside the block. Values below
    ``floor`` (relative to the full norm) are dropped silently; values beyond
    ``chi_max`` are counted as discarded weight.

    Returns ``(U, s, V, labels, discarded)`` with ``s`` unnormalized.
    """
    if row_q is None:
        blocks = [(0, np.arange(mat.shape[0]), np.arange(mat.shape[1]))]
    else:
        common = np.intersect1d(row_q, col_q)
        blocks = []
        for q in common:
            r = np.nonzero(row_q == q)[0]
            c = np.nonzero(col_q == q)[0]
            blocks.append((int(q), r, c))
    svds = []
    for q, r, c in blocks:
        sub = mat[np.ix_(r, c)] if row_q is not None else mat
        u, s, v = _svd(sub)
        svds.append((u, s, v))
    if not svds:
        raise DecompositionError("no charge sector is shared across the cut")
    s_all = np.concatenate([s for _, s, _ in svds])
    q_all = np.concatenate([np.full(len(s), q) for (q, _, _), (_, s, _) in zip(blocks, svds)])
    i_all = np.concatenate([np.arange(len(s)) for _, s, _ in svds])
    b_all = np.concatenate([np.full(len(s), k) for k, (_, s, _) in enumerate(svds)])
    total = np.sqrt(np.sum(s_all ** 2))
    if total == 0.0:
        raise DecompositionError("cannot decompose a zero tensor")
    order = np.lexsort((i_all, q_all, -s_all))
    rel = s_all[order] / total
    above = order[rel >= floor]
    if len(above) == 0:
        above = order[:1]
    keep = above if chi_max is None else above[:chi_max]
    dropped = above[len(keep):]
    discarded = float(np.sum((s_all[dropped] / total) ** 2))

    k = len(keep)
    U = np.zeros((mat.shape[0], k), dtype=mat.dtype)
    V = np.zeros((k, mat.shape[1]), dtype=mat.dtype)
    kb, ki = b_all[keep], i_all[keep]
    for bid, ((q, r, c), (u, s, v)) in enumerate(zip(blocks, svds)):
        pos = np.nonzero(kb == bid)[0]
        if len(pos) == 0:
            continue
        U[np.ix_(r, pos)] = u[:, ki[pos]]
        V[np.ix_(pos, c)] = v[ki[pos], :]
    labels = q_all[keep].astype(np.int64) if row_q is not None else None
    return U, s_all[keep], V, labels, discarded


_CHARGE_MASKS: dict = {}


def _check_gate_charges(gate, charges):
    key = charges.tobytes()
    mask = _CHARGE_MASKS.get(key)
    if mask is None:
        mask = charges[:, None] != charges[None, :]
        _CHARGE_MASKS[key] = mask
    if gate.shape != mask.shape:
        raise ValueError("gate does not match the local dimensions")
    leak = np.abs(gate[mask])
    if leak.size and leak.max() > 1e-12:
        raise ChargeViolationError(f"gate changes particle number (max leak {leak.max():.2e})")
    if leak.size and leak.max() > 0:
        gate = np.where(mask, 0.0, gate)
    return gate


# ---------------------------------------------------------------------------
# gates
# ---------------------------------------------------------------------------

def apply_two_site_gate(state: VidalState, gate: np.ndarray, bond: int,
                        policy: TruncationPolicy | None = None) -> StepReport:
    """Apply ``gate`` to sites ``bond, bond + 1`` in place and re-truncate.

    ``gate`` acts on the pair basis ``i * S_{bond+1} + j``. The new Schmidt
    vector is renormalized to unit norm; the discarded weight (relative to
    the full post-gate norm) is returned in the report and accumulated on the
    state.
    """
    policy = policy or TruncationPolicy()
    L = state.n_sites
    if not 0 <= bond < L - 1:
        raise IndexError(f"bond {bond} outside chain of {L} sites")
    B1, B2 = state.tensors[bond], state.tensors[bond + 1]
    d1, d2 = B1.shape[1], B2.shape[1]
    c1, c2 = state.site_charges[bond], state.site_charges[bond + 1]
    pair_q = (c1[:, None] + c2[None, :]).ravel()
    gate = _check_gate_charges(np.asarray(gate), pair_q)

    chiL, chiR = B1.shape[0], B2.shape[2]
    psi = np.tensordot(B1, B2, axes=(2, 0))                          # (a, i, j, c)
    psi = np.tensordot(gate.reshape(d1, d2, d1, d2), psi, axes=([2, 3], [1, 2]))
    psi = psi.transpose(2, 0, 1, 3).reshape(chiL * d1, d2 * chiR)
    lamL = state.lams[bond]
    theta = np.repeat(lamL, d1)[:, None] * psi

    if policy.conserving:
        qL, qR = state.qs[bond], state.qs[bond + 2]
        if qL is None or qR is None:
            raise ChargeViolationError("charge labels missing; use the plain path")
        row_q = (qL[:, None] + c1[None, :]).ravel()
        col_q = (qR[None, :] - c2[:, None]).ravel()
    else:
        row_q = col_q = None
    _, s, V, labels, discarded = _decompose(theta, row_q, col_q, policy.chi_max,
                                            policy.lambda_floor)
    kept = np.sqrt(np.sum(s ** 2))
    k = len(s)
    state.tensors[bond + 1] = V.reshape(k, d2, chiR)
    state.tensors[bond] = (psi @ V.conj().T / kept).reshape(chiL, d1, k)
    state.lams[bond + 1] = s / kept
    state.qs[bond + 1] = labels
    state.discarded_total += discarded
    return StepReport(bond=bond, discarded=discarded, chi=k)


def apply_single_site_gate(state: VidalState, gate: np.ndarray, site: int) -> None:
    """Apply a charge-diagonal ``gate`` to ``site`` in place (no truncation)."""
    if not 0 <= site < state.n_sites:
        raise IndexError(f"site {site} outside chain")
    gate = np.asarray(gate)
    d = state.tensors[site].shape[1]
    if gate.shape != (d, d):
        raise ValueError(f"gate shape {gate.shape} does not match local dimension {d}")
    gate = _check_gate_charges(gate, state.site_charges[site])
    state.tensors[site] = np.tensordot(gate, state.tensors[site], axes=(1, 1)).transpose(1, 0, 2)


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------

def expect_site(state: VidalState, site: int, op: np.ndarray) -> complex | float:
    """``<O_site>`` from the canonical form (exact for a normalized Vidal state)."""
    op = np.asarray(op)
    B = state.tensors[site]
    d = B.shape[1]
    if op.ndim == 1:
        op = np.diag(op)
    if op.shape != (d, d):
        raise ValueError(f"operator shape {op.shape} does not match local dimension {d}")
    K = state.lams[site][:, None, None] * B
    val = np.einsum("aib,ij,ajb->", K.conj(), op, K)
    if np.allclose(op, op.conj().T):
        return float(val.real)
    return complex(val)


def expect_bond(state: VidalState, bond: int, op: np.ndarray) -> complex | float:
    """``<O>`` for an operator on the pair space of ``bond, bond + 1``."""
    B1, B2 = state.tensors[bond], state.tensors[bond + 1]
    d1, d2 = B1.shape[1], B2.shape[1]
    K = state.lams[bond][:, None, None, None] * np.tensordot(B1, B2, axes=(2, 0))
    Kop = np.tensordot(np.asarray(op).reshape(d1, d2, d1, d2), K, axes=([2, 3], [1, 2]))
    val = np.tensordot(K.conj(), Kop.transpose(2, 0, 1, 3), axes=4)
    if np.allclose(op, np.asarray(op).conj().T):
        return float(val.real)
    return complex(val)


def correlation_matrix(state: VidalState, annihilators) -> np.ndarray:
    """Single-particle density matrix ``C[i, j] = <b_i^dag b_j>``.

    ``annihilators`` is either a list of per-site matrices or a
    :class:`~satebd.model.LatticeGeometry`. Bosonic: no string operators.
    """
    if hasattr(annihilators, "n_sites"):
        from .model import annihilation_op

        annihilators = [annihilation_op(annihilators, l) for l in range(annihilators.n_sites)]
    L = state.n_sites
    C = np.zeros((L, L), dtype=complex)
    for i in range(L):
        b = annihilators[i]
        K = state.lams[i][:, None, None] * state.tensors[i]
        nK = np.tensordot(b.T.conj() @ b, K, axes=(1, 1)).transpose(1, 0, 2)
        C[i, i] = np.tensordot(K.conj(), nK, axes=3)
        # E carries b_i^dag on the bra side: <..| b_i^dag
        bK = np.tensordot(b, K, axes=(1, 1)).transpose(1, 0, 2)     # b acting on bra => (b K)^*
        E = np.tensordot(bK.conj(), K, axes=([0, 1], [0, 1]))
        for j in range(i + 1, L):
            B = state.tensors[j]
            bj = annihilators[j]
            bB = np.tensordot(bj, B, axes=(1, 1)).transpose(1, 0, 2)
            tmp = np.tensordot(E, bB, axes=(1, 0))
            C[i, j] = np.tensordot(B.conj(), tmp, axes=3)
            E = _transfer(E, B, B)
        C[i + 1:, i] = C[i, i + 1:].conj()
    return C


def total_charge(state: VidalState) -> tuple[float, float]:
    """Mean and variance of the total particle number (molecules count as one)."""
    E0 = np.ones((1, 1), dtype=complex)
    E1 = np.zeros((1, 1), dtype=complex)
    E2 = np.zeros((1, 1), dtype=complex)
    for B, c in zip(state.tensors, state.site_charges):
        c = c.astype(float)
        Bc = B * c[None, :, None]
        Bc2 = B * (c * c)[None, :, None]
        E2 = _transfer(E2, B, B) + 2 * _transfer(E1, B, Bc) + _transfer(E0, B, Bc2)
        E1 = _transfer(E1, B, B) + _transfer(E0, B, Bc)
        E0 = _transfer(E0, B, B)
    norm = E0[0, 0].real
    mean = E1[0, 0].real / norm
    var = E2[0, 0].real / norm - mean ** 2
    return float(mean), float(max(var, 0.0))


def schmidt_spectrum(state: VidalState, bond: int) -> SchmidtSpectrum:
    """Schmidt coefficients (and charge labels) across ``bond, bond + 1``."""
    if not 0 <= bond < state.n_sites - 1:
        raise IndexError(f"bond {bond} outside chain")
    q = state.qs[bond + 1]
    return SchmidtSpectrum(bond, state.lams[bond + 1].copy(), None if q is None else q.copy())


# ---------------------------------------------------------------------------
# gauge restoration
# ---------------------------------------------------------------------------

def canonicalize(state: VidalState, policy: TruncationPolicy | None = None) -> float:
    """Restore the Vidal form of an arbitrary (e.g. non-unitarily evolved) MPS.

    Treats ``B[0] ... B[L-1]`` as a generic MPS, right-orthonormalizes it,
    then sweeps left to right extracting the Schmidt values. Returns the norm
    of the state before normalization. Truncates with ``policy`` if given.
    """
    policy = policy or TruncationPolicy(chi_max=None)
    conserving = policy.conserving and state.conserving
    L = state.n_sites
    M = [t.copy() for t in state.tensors]
    qs = list(state.qs) if conserving else [None] * (L + 1)
    chg = state.site_charges
    # right-to-left: M[l] = U s V, keep V (right-orthonormal), push U s left
    for l in range(L - 1, 0, -1):
        chiL, d, chiR = M[l].shape
        mat = M[l].reshape(chiL, d * chiR)
        if conserving:
            col_q = (qs[l + 1][None, :] - chg[l][:, None]).ravel()
            row_q = qs[l]
        else:
            row_q = col_q = None
        U, s, V, labels, _ = _decompose(mat, row_q, col_q, None, 1e-15)
        M[l] = V.reshape(-1, d, chiR)
        M[l - 1] = np.tensordot(M[l - 1], U * s[None, :], axes=(2, 0))
        qs[l] = labels
    norm = float(np.sqrt(np.sum(np.abs(M[0]) ** 2)))
    if norm == 0.0:
        raise DecompositionError("cannot canonicalize a zero state")
    W = M[0] / norm
    lams = [np.ones(1)]
    tensors = []
    discarded = 0.0
    for l in range(L - 1):
        chiL, d, chiR = W.shape
        C = (lams[l][:, None, None] * W).reshape(chiL * d, chiR)
        if conserving:
            row_q = (qs[l][:, None] + chg[l][None, :]).ravel()
            col_q = qs[l + 1]
        else:
            row_q = col_q = None
        _, s, V, labels, disc = _decompose(C, row_q, col_q, policy.chi_max, policy.lambda_floor)
        discarded += disc
        kept = np.sqrt(np.sum(s ** 2))
        tensors.append(np.tensordot(W, V.conj().T, axes=(2, 0)) / kept)
        lams.append(s / kept)
        qs[l + 1] = labels
        W = np.tensordot(V, M[l + 1], axes=(1, 0))
    tensors.append(W / np.sqrt(np.sum(np.abs(lams[-1][:, None, None] * W) ** 2)))
    lams.append(np.ones(1))
    state.tensors = tensors
    state.lams = lams
    state.qs = qs
    state.discarded_total += discarded
    return norm


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(arr) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _write_entry(zf, name, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_snapshot(state: VidalState, path, meta: dict | None = None,
                  arrays: dict | None = None) -> None:
    """Write a byte-deterministic snapshot (zip of ``.npy`` members + JSON header).

    Members: ``header.json``; ``gamma/<l>.npy`` (Vidal tensors); ``b/<l>.npy``
    (right-normalized tensors, used for bit-exact reload); ``lambda/<p>.npy``;
    ``charges/<p>.npy`` (absent on plain bonds); ``site_charges/<l>.npy``;
    plus ``extra/<name>.npy`` for caller arrays.
    """
    header = {
        "format": "satebd-vidal",
        "version": SNAPSHOT_VERSION,
        "n_sites": state.n_sites,
        "dims": list(state.dims),
        "index_order": "gamma[l][left_bond, physical, right_bond], row-major",
        "bond_positions": "lambda[p] sits between sites p-1 and p; p=0 and p=L are boundaries",
        "discarded_total": state.discarded_total,
        "labelled_bonds": [q is not None for q in state.qs],
        "meta": meta or {},
        "extra": sorted((arrays or {}).keys()),
    }
    with zipfile.ZipFile(path, "w") as zf:
        _write_entry(zf, "header.json", json.dumps(header, sort_keys=True, indent=1).encode())
        for l in range(state.n_sites):
            _write_entry(zf, f"gamma/{l}.npy", _npy_bytes(state.gamma(l)))
            _write_entry(zf, f"b/{l}.npy", _npy_bytes(state.tensors[l]))
            _write_entry(zf, f"site_charges/{l}.npy", _npy_bytes(state.site_charges[l]))
        for p in range(state.n_sites + 1):
            _write_entry(zf, f"lambda/{p}.npy", _npy_bytes(state.lams[p]))
            if state.qs[p] is not None:
                _write_entry(zf, f"charges/{p}.npy", _npy_bytes(state.qs[p]))
        for name in sorted((arrays or {}).keys()):
            _write_entry(zf, f"extra/{name}.npy", _npy_bytes(np.asarray(arrays[name])))


def _read_npy(zf, name):
    return np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)


def load_snapshot(path) -> tuple[VidalState, dict, dict]:
    """Inverse of :func:`save_snapshot`; returns ``(state, meta, arrays)``."""
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("format") != "satebd-vidal":
            raise ValueError(f"{path} is not a state snapshot")
        if header["version"] > SNAPSHOT_VERSION:
            raise ValueError(f"snapshot version {header['version']} is newer than supported")
        L = header["n_sites"]
        names = set(zf.namelist())
        lams = [_read_npy(zf, f"lambda/{p}.npy") for p in range(L + 1)]
        qs = [_read_npy(zf, f"charges/{p}.npy") if f"charges/{p}.npy" in names else None
              for p in range(L + 1)]
        tensors = []
        for l in range(L):
            if f"b/{l}.npy" in names:
                tensors.append(_read_npy(zf, f"b/{l}.npy"))
            else:
                tensors.append(_read_npy(zf, f"gamma/{l}.npy") * lams[l + 1][None, None, :])
        charges = [_read_npy(zf, f"site_charges/{l}.npy") for l in range(L)]
        arrays = {name: _read_npy(zf, f"extra/{name}.npy") for name in header.get("extra", [])}
    state = VidalState(tensors, lams, charges, qs, discarded_total=header["discarded_total"])
    return state, header["meta"], arrays
