"""TEBD simulation of atomic currents through a single-atom transistor.

Modules map onto the layers of a calculation:

- :mod:`satebd.model`: couplings, lattice geometry, local bases, analytic
  single-particle formulas and local Hamiltonian blocks.
- :mod:`satebd.mps`: number-conserving matrix product states in Vidal form.
- :mod:`satebd.evolve`: Trotter plans, real/imaginary-time runs, ground states,
  embedding and kicks.
- :mod:`satebd.oracle`: free-fermion, exact-diagonalization and wavepacket
  references.
- :mod:`satebd.observables`: currents, steady-state fits, knees and momentum
  distributions.
- :mod:`satebd.cli`: experiment driver (``satebd ground|evolve|sweep|oracle|resume``).
"""

__version__ = "0.1.0"
