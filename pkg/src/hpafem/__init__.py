"""hp-adaptive finite elements for 1D self-adjoint elliptic problems.

The package solves -(nu u')' + sigma u = f1 + f2' on (0, 1) with homogeneous
Dirichlet conditions, alternating near-best hp coarsening on a binary master
tree with a p-enriching SOLVE/ESTIMATE/MARK/REFINE loop.
"""

from hpafem.mesh1d import (
    ElementId,
    HPartition,
    HpElement,
    HpPartition,
    RootPartition,
    refines,
    total_dof,
)
from hpafem.polyspace import Function1D, LegendrePoly, PiecewisePoly

__all__ = [
    "ElementId",
    "Function1D",
    "HPartition",
    "HpElement",
    "HpPartition",
    "LegendrePoly",
    "PiecewisePoly",
    "RootPartition",
    "refines",
    "total_dof",
]

__version__ = "0.1.0"
