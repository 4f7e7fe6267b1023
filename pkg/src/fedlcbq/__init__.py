"""Federated offline Q-learning with pessimism on tabular episodic MDPs."""

from .errors import (ContractViolation, FedLCBQError, InvariantFailure, TraceParseError,
                     ValidationError)
from .mdp import (INFINITE_CONCENTRABILITY, DeterministicPolicy, OccupancyTables,
                  StochasticPolicy, TabularMdp, ValueTables, average_concentrability,
                  average_occupancy, clipped_concentrability, evaluate_policy, is_covered,
                  occupancy_distributions, value_iteration)
from .data import (OfflineDataset, derive_seed, empirical_occupancy, make_behavior_policy,
                   sample_agent_datasets, sample_dataset)
from .schedules import (SyncSchedule, build_schedule, exponential_round_bound, tau1_bound,
                        validate_schedule)
from .engine import (HyperParams, LearnerState, compute_alpha, compute_eta, compute_penalty,
                     global_aggregate, local_update_episode, run_fedlcbq)
from .trace import RunTrace

__version__ = "0.1.0"
