"""Simulation harness: seeded environments and multi-seed experiment runs."""
from ..trace import TRACE_COLUMNS, RegretTrace, TraceRecorder
from .environments import Environment, EnvironmentSpec, experiment_spec, make_environment, oracle_best
from .experiments import (AggregateTable, SeedFailure, aggregate, experiment_preset, run_experiment, run_single,
                          successful)
