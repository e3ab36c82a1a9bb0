"""Trotterized real- and imaginary-time evolution of Vidal states.

One second-order step is the symmetric product

    A(dt/2) B(dt/2) S(dt) B(dt/2) A(dt/2)

where ``A`` holds the hopping gates on bonds ``(0,1), (2,3), ...``, ``B`` those
on ``(1,2), (3,4), ...`` and ``S`` every single-site term (impurity block and
on-site interactions). Consecutive steps without a measurement in between
merge the trailing and leading ``A(dt/2)`` layers into one ``A(dt)`` layer.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import mps
from .errors import ConvergenceError
from .model import (
    LatticeGeometry,
    ModelParams,
    bond_gate,
    bond_hamiltonian,
    number_op,
    site_gate,
    site_hamiltonian,
)
from .observables import TimeSeries, occupations

logger = logging.getLogger(__name__)

__all__ = [
    "TrotterPlan",
    "EvolutionConfig",
    "KickSpec",
    "GroundSchedule",
    "make_plan",
    "run",
    "resume",
    "measure",
    "energy",
    "ground_state",
    "seed_occupations",
    "embed",
    "apply_kick",
]


@dataclass
class TrotterPlan:
    params: ModelParams
    geometry: LatticeGeometry
    dt: float
    imaginary: bool
    layer_a_half: list        # [(bond, gate)] for bonds 0, 2, 4, ...
    layer_a_full: list
    layer_b_half: list        # bonds 1, 3, 5, ...
    layer_site: list          # [(site, gate)], identity gates omitted

    def step_layers(self) -> list:
        """Layers of one isolated step as ``(kind, gates)`` pairs."""
        return [("bond", self.layer_a_half), ("bond", self.layer_b_half),
                ("site", self.layer_site), ("bond", self.layer_b_half),
                ("bond", self.layer_a_half)]

    def segment_layers(self, n_steps: int) -> list:
        """Layers of ``n_steps`` consecutive steps, inner ``A`` layers merged.

        Each entry is ``(step, kind, gates)``; a merged layer is attributed to
        the later step.
        """
        out = [(0, "bond", self.layer_a_half)]
        for s in range(n_steps):
            out += [(s, "bond", self.layer_b_half), (s, "site", self.layer_site),
                    (s, "bond", self.layer_b_half)]
            if s < n_steps - 1:
                out.append((s + 1, "bond", self.layer_a_full))
        out.append((n_steps - 1, "bond", self.layer_a_half))
        return out

    def all_gates(self):
        for _, gates in self.step_layers():
            for idx, gate in gates:
                yield idx, gate


@dataclass
class EvolutionConfig:
    dt: float
    n_steps: int
    sample_every: int = 10
    policy: mps.TruncationPolicy = field(default_factory=mps.TruncationPolicy)
    imaginary: bool = False
    abort_eps: float | None = None
    checkpoint_path: str | None = None
    checkpoint_every: int | None = None
    record_profiles: bool = False
    checkpoint_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        if self.sample_every < 1:
            raise ValueError("sample interval must be at least one step")
        if self.checkpoint_every is not None and self.checkpoint_every % self.sample_every:
            raise ValueError("checkpoint interval must be a multiple of the sample interval")


@dataclass(frozen=True)
class KickSpec:
    p_k: float = 0.0


@dataclass
class GroundSchedule:
    dts: tuple = (0.1, 0.03, 0.01)
    tol: float = 1e-8
    max_sweeps: int = 50_000
    chi_max: int | None = None
    conserving: bool = True


def make_plan(params: ModelParams, geometry: LatticeGeometry, dt: float,
              imaginary: bool = False) -> TrotterPlan:
    """Second-order Trotter gates for one step of size ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    L = geometry.n_sites
    a_half = [(b, bond_gate(params, geometry, b, dt / 2, imaginary)) for b in range(0, L - 1, 2)]
    a_full = [(b, bond_gate(params, geometry, b, dt, imaginary)) for b in range(0, L - 1, 2)]
    b_half = [(b, bond_gate(params, geometry, b, dt / 2, imaginary)) for b in range(1, L - 1, 2)]
    sites = []
    for l in range(L):
        if np.any(site_hamiltonian(params, geometry, l)):
            sites.append((l, site_gate(params, geometry, l, dt, imaginary)))
    return TrotterPlan(params, geometry, dt, imaginary, a_half, a_full, b_half, sites)


def _apply_layer(state, kind, gates, policy):
    eps = 0.0
    if kind == "site":
        for l, g in gates:
            mps.apply_single_site_gate(state, g, l)
        return eps
    for b, g in gates:
        eps += mps.apply_two_site_gate(state, g, b, policy).discarded
    return eps


def measure(state: mps.VidalState, geometry: LatticeGeometry, profile: bool = False) -> dict:
    """Sampled channels of a :class:`~satebd.observables.TimeSeries`."""
    mol, imp, dens = occupations(state, geometry)
    right = geometry.right_indices()
    charge, _ = mps.total_charge(state)
    out = {
        "N_R": float(np.sum(dens[right])),
        "norm": state.norm(),
        "charge": charge,
        "mol_occ": mol,
        "imp_occ": imp,
    }
    if profile:
        out["profile"] = dens
    return out


def energy(state: mps.VidalState, params: ModelParams, geometry: LatticeGeometry) -> float:
    """``<H>`` of a normalized state in Vidal form."""
    E = 0.0
    for b in range(geometry.n_sites - 1):
        E += mps.expect_bond(state, b, bond_hamiltonian(params, geometry, b))
    for l in range(geometry.n_sites):
        h = site_hamiltonian(params, geometry, l)
        if np.any(h):
            E += mps.expect_site(state, l, h)
    return float(E)


def _save_checkpoint(path, state, series, step, config, plan):
    meta = dict(config.checkpoint_meta) | {
        "kind": "checkpoint",
        "step": step,
        "dt": config.dt,
        "n_steps": config.n_steps,
        "sample_every": config.sample_every,
        "status": series.status,
    }
    mps.save_snapshot(state, path, meta=meta, arrays=series.to_arrays())


def run(state: mps.VidalState, plan: TrotterPlan, config: EvolutionConfig,
        observer: Callable | None = None, *, start_step: int = 0,
        series: TimeSeries | None = None) -> TimeSeries:
    """Advance ``state`` in place, sampling every ``config.sample_every`` steps.

    Returns the :class:`TimeSeries` (including the ``t = start`` sample).
    ``eps_lambda`` holds the largest per-step discarded weight since the
    previous sample. If it exceeds ``config.abort_eps`` the run stops at that
    sample with ``status = "truncation-dominated"``. ``observer(t, state)`` is
    called at every sample.
    """
    if state.dims != plan.geometry.dims:
        raise ValueError("state dimensions do not match the plan geometry")
    if plan.dt != config.dt:
        raise ValueError("plan and config disagree on dt")
    if plan.imaginary != config.imaginary:
        raise ValueError("plan and config disagree on the evolution mode")
    geometry = plan.geometry
    if series is None:
        series = TimeSeries()
    if config.n_steps == 0:
        return series
    if start_step == 0 and not series.t:
        series.append(0.0, eps_lambda=0.0, **measure(state, geometry, config.record_profiles))
        if observer is not None:
            observer(0.0, state)
    step = start_step
    while step < config.n_steps:
        seg = min(config.sample_every - step % config.sample_every, config.n_steps - step)
        step_eps = np.zeros(seg)
        if plan.imaginary:
            for s in range(seg):
                for kind, gates in plan.step_layers():
                    step_eps[s] += _apply_layer(state, kind, gates, config.policy)
                mps.canonicalize(state, config.policy)
        else:
            for s, kind, gates in plan.segment_layers(seg):
                step_eps[s] += _apply_layer(state, kind, gates, config.policy)
        step += seg
        t = step * config.dt
        eps = float(step_eps.max())
        series.append(t, eps_lambda=eps, **measure(state, geometry, config.record_profiles))
        if observer is not None:
            observer(t, state)
        if config.abort_eps is not None and eps > config.abort_eps:
            logger.warning("discarded weight %.3e exceeds %.3e at t=%.3f", eps, config.abort_eps, t)
            series.status = "truncation-dominated"
            break
        if (config.checkpoint_path and config.checkpoint_every
                and step % config.checkpoint_every == 0):
            _save_checkpoint(config.checkpoint_path, state, series, step, config, plan)
    return series


def resume(path, plan: TrotterPlan, config: EvolutionConfig,
           observer: Callable | None = None) -> tuple[mps.VidalState, TimeSeries]:
    """Continue a run from a checkpoint written by :func:`run`."""
    state, meta, arrays = mps.load_snapshot(path)
    if meta.get("kind") != "checkpoint":
        raise ValueError(f"{path} is not a checkpoint")
    series = TimeSeries.from_arrays(arrays, status=meta.get("status", "ok"))
    if series.status != "ok":
        return state, series
    series = run(state, plan, config, observer, start_step=int(meta["step"]), series=series)
    return state, series


# ---------------------------------------------------------------------------
# ground states, embedding, kicks
# ---------------------------------------------------------------------------

def seed_occupations(N: int, M: int, cutoff: int) -> list[int]:
    """Charge-definite seed with atoms spread as evenly as possible.

    Up to one atom per site the atoms sit on sites ``floor(k M / N)`` (unit
    filling fills every site, half filling every other site from the left);
    beyond that every site gets ``N // M`` and the remainder is spread the
    same way.
    """
    if N < 0 or N > (cutoff - 1) * M:
        raise ValueError(f"cannot place {N} atoms on {M} sites with cutoff {cutoff}")
    base, extra = divmod(N, M)
    occ = [base] * M
    for k in range(extra):
        occ[(k * M) // extra] += 1
    return occ


def ground_state(params: ModelParams, N: int, M: int, schedule: GroundSchedule | None = None,
                 cutoff: int | None = None,
                 history: list | None = None) -> tuple[mps.VidalState, float]:
    """Imaginary-time ground state of ``N`` atoms in a box of ``M`` sites.

    Each stage of ``schedule.dts`` runs until the energy changes by less than
    ``schedule.tol`` between sweeps (one sweep = one Trotter step followed by
    re-canonicalization). Raises :class:`ConvergenceError` if the total sweep
    budget is exhausted. Per-sweep energies are appended to ``history``.
    """
    schedule = schedule or GroundSchedule()
    if cutoff is None:
        cutoff = 2 if params.hard_core else 6
    geometry = LatticeGeometry.box(M, cutoff)
    if N > (cutoff - 1) * M:
        raise ValueError(f"N={N} exceeds capacity {(cutoff - 1) * M}")
    state = mps.from_product_state(seed_occupations(N, M, cutoff), geometry)
    policy = mps.TruncationPolicy(chi_max=schedule.chi_max, conserving=schedule.conserving)
    E = energy(state, params, geometry)
    sweeps = 0
    history = [] if history is None else history
    history.append(E)
    for dt in schedule.dts:
        plan = make_plan(params, geometry, dt, imaginary=True)
        while True:
            if sweeps >= schedule.max_sweeps:
                raise ConvergenceError(f"no convergence within {schedule.max_sweeps} sweeps "
                                       f"(last change {abs(history[-1] - history[-2]):.2e})")
            for kind, gates in plan.step_layers():
                _apply_layer(state, kind, gates, policy)
            mps.canonicalize(state, policy)
            sweeps += 1
            E_new = energy(state, params, geometry)
            history.append(E_new)
            change = abs(E_new - E)
            E = E_new
            if change < schedule.tol:
                break
        logger.debug("stage dt=%g converged after %d sweeps, E=%.12f", dt, sweeps, E)
    state.discarded_total = 0.0
    return state, E


def embed(ground: mps.VidalState, geometry: LatticeGeometry) -> mps.VidalState:
    """Place a box state on the left region of ``geometry``; everything else empty."""
    M = geometry.left_sites
    if ground.n_sites != M:
        raise ValueError(f"ground state has {ground.n_sites} sites, left region has {M}")
    if tuple(ground.dims) != tuple(geometry.dims[:M]):
        raise ValueError("local dimensions of the ground state and geometry differ")
    vacuum = [0] * (geometry.n_sites - M)
    tail = mps.from_product_state([0] * M + vacuum, geometry)
    N = int(ground.qs[-1][0]) if ground.qs[-1] is not None else None
    state = ground.copy()
    state.tensors += [t.copy() for t in tail.tensors[M:]]
    state.lams += [np.ones(1) for _ in range(len(vacuum))]
    state.site_charges = list(state.site_charges) + tail.site_charges[M:]
    state.qs += [None if N is None else np.array([N], dtype=np.int64) for _ in vacuum]
    state.discarded_total = 0.0
    return state


def apply_kick(state: mps.VidalState, kick: KickSpec, geometry: LatticeGeometry) -> mps.VidalState:
    """Apply ``exp(i p_k j n_j)`` on every site in place (``j`` = lattice coordinate)."""
    if kick.p_k == 0.0:
        return state
    for l, x in enumerate(geometry.positions):
        if x == 0:
            continue
        n = np.diag(number_op(geometry, l))
        mps.apply_single_site_gate(state, np.diag(np.exp(1j * kick.p_k * x * n)), l)
    return state
