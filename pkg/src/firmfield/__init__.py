"""Stationary mean-field equilibria for a population of firms with capital accumulation."""
from .density import DensitySolution, integrate_against, singular_exponent, solve_density
from .economy import (CES, CobbDouglas, Economy, EconomyParams, EntrySpec, LogUtility, PowerCurve, PowerUtility,
                      SeparableSupply, SoftmaxSupply, break_even_capital, kappa_star, net_output)
from .equilibrium import (EquilibriumConfig, EquilibriumResult, HomotopyTrace, aggregate_demand,
                          clearing_residual, solve_equilibrium, t_map)
from .errors import BoxViolationError, ConvergenceError, DomainError, InternalSolverError, ValidationError
from .hjb import (Branch, GridSpec, ValueSolution, drift, hamiltonian, hamiltonian_dq, invert_hamiltonian,
                  solve_value)
from .scenario import Scenario, load_scenario
from .simulate import Trajectory, discounted_payoff, population_histogram, simulate_firm

__version__ = "0.1.0"
