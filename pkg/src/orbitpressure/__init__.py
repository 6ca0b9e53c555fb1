"""Horseshoes with variable return times and topological pressure estimation.

The package builds finite symbolic models of invariant sets from orbit data
of planar model systems and estimates topological pressure three ways:
separated-set sums, spanning free-energy covers, and periodic-orbit sums
with an exact scalar root as oracle.
"""

from . import dynamics, errors

__all__ = [
    "dynamics",
    "errors",
]
