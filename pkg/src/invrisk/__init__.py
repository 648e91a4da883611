"""Learn risk tolerance from observed portfolios by online inverse optimization."""

__version__ = "0.1.0"

from .forward import (  # noqa: E402
    ConstraintSet,
    ForwardSolution,
    efficient_frontier,
    solve_po,
    solve_po_target,
)
from .inverse import InverseInstance, InverseSolution, enumerate_active_sets, solve_ipo  # noqa: E402

__all__ = [
    "ConstraintSet",
    "ForwardSolution",
    "InverseInstance",
    "InverseSolution",
    "efficient_frontier",
    "enumerate_active_sets",
    "solve_ipo",
    "solve_po",
    "solve_po_target",
]
