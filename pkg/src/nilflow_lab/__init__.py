"""Numerical laboratory for the Heisenberg nilflow renormalised by a hyperbolic automorphism.

Modules: heis (group, lattice, flow), observables, orbit and ergodic (orbit integrals,
renormalisation, deviations), spectral (resonances), norms (Bargmann transform), cohomology
(coboundary solver), cli (the ``nilflow-lab`` command).
"""
from .config import ExperimentConfig, load
from .heis import Automorphism, LatticeSpec, stable_generator
from .observables import Observable, ThetaAtom

__version__ = "0.1.0"

__all__ = ["Automorphism", "ExperimentConfig", "LatticeSpec", "Observable", "ThetaAtom", "load",
           "stable_generator", "__version__"]
