"""Scale-free regulated state synchronization of linear agents with input delays."""
from ._jit import backend
from .dde import HistoryBuffer, Trajectory, history_eval, integrate
from .errors import (DesignFailure, IntegrationError, InvalidInput, SolverFailure, SyncError,
                     Unsolvable)
from .harness import (ResultSet, Scenario, export_csv, load_scenario, run_scenario,
                      scenario_from_dict, sweep)
from .lin_model import AgentModel, ValidationReport, omega_max, validate
from .protocol import (ClosedLoopSystem, CouplingMode, DesignReport, ProtocolParams,
                       build_closed_loop, design_observer_gain, design_protocol, design_rho,
                       select_epsilon, verify_frequency_condition)
from .riccati import CareSolution, residual, solve_care
from .topology import (ExpandedLaplacian, Topology, check_membership, expanded_laplacian,
                       laplacian, representative_graph)

__version__ = "0.1.0"
