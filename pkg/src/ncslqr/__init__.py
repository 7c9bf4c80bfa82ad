"""Optimal decentralized control of two switched linear plants linked by a
lossy acknowledged channel: offline gain solver, closed-loop simulator, and
exact/Monte Carlo verification tools."""

from .model import ProblemSpec, load_problem
from .solver import SolutionBundle, solve_backward

__all__ = ["ProblemSpec", "SolutionBundle", "load_problem", "solve_backward"]
__version__ = "0.1.0"
