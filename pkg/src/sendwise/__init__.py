"""Slot-wise notification send-time optimization.

Predicts per-slot click-through rates from interaction history with a
two-stage attention network, allocates a daily notification quota across
slots by solving a regularized quadratic program, and paces deliveries in
real time against the cumulative expected-send curve. A discrete-event
simulator with synthetic user populations drives offline strategy
comparisons.
"""

__version__ = "0.1.0"

from .allocation import AllocationProblem, AllocationResult, allocate_proportional, brute_force_qp, solve_kkt
from .autodiff import ComputationTape, Tensor
from .errors import SendwiseError
from .pacing import PacerSchedule, PacerState, decide, expected_sends, new_day

__all__ = [
    "AllocationProblem",
    "AllocationResult",
    "ComputationTape",
    "PacerSchedule",
    "PacerState",
    "SendwiseError",
    "Tensor",
    "allocate_proportional",
    "brute_force_qp",
    "decide",
    "expected_sends",
    "new_day",
    "solve_kkt",
    "__version__",
]
