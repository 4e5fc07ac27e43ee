"""Multi-seed execution and aggregation of regret traces."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from ..core import ContractError
from ..policies import AlgorithmConfig, RunFailure, baseline_per_round_run, bmnl_run, rsmnl_run
from .environments import EnvironmentSpec, make_environment
from ..trace import RegretTrace

log = logging.getLogger(__name__)

ALGORITHMS = ("bmnl", "rsmnl", "baseline")

# Constants found by simulation at desk scale (d=3, K<=3, 10 arms, S=2, T<=5000).
# The theory constants (c_gamma=1, kappa from the arm pool) keep B(x) at its cap
# and never switch / never eliminate; these are the smallest departures that learn.
RS_PRESET = AlgorithmConfig(c_gamma=0.01, lam=1.0, kappa=1.0)
BMNL_PRESET = AlgorithmConfig(c_gamma=0.0005, lam=1.0, kappa=1.0)


def experiment_preset(algorithm: str) -> AlgorithmConfig:
    return replace(BMNL_PRESET if algorithm == "bmnl" else RS_PRESET)


@dataclass
class SeedFailure:
    seed: int
    error: str
    round_index: Optional[int] = None


def run_seed_rng(master_seed: int, i: int) -> np.random.Generator:
    """Stream for run ``i``: a counter-based child of the master seed, independent of ``n_seeds``."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(i,)))


def run_single(algorithm: str, spec: EnvironmentSpec, T: int, config: AlgorithmConfig, master_seed: int,
               i: int, M: Optional[int] = None) -> RegretTrace:
    env = make_environment(spec)
    rng = run_seed_rng(master_seed, i)
    if algorithm == "bmnl":
        tr = bmnl_run(env, T, M, env.rho, env.S, config, rng)
    elif algorithm == "rsmnl":
        tr = rsmnl_run(env, T, env.rho, env.S, config.delta, config, rng)
    elif algorithm == "baseline":
        tr = baseline_per_round_run(env, T, env.rho, env.S, config.delta, config, rng)
    else:
        raise ContractError(f"algorithm must be one of {ALGORITHMS}")
    tr.seed = i
    tr.provenance.update(seed=i, master_seed=master_seed)
    return tr


def _guarded(args):
    try:
        return run_single(*args)
    except (RunFailure, ArithmeticError, np.linalg.LinAlgError) as err:
        log.error("seed %d failed: %s", args[5], err)
        return SeedFailure(args[5], str(err), getattr(err, "round_index", None))


def run_experiment(algorithm: str, spec: EnvironmentSpec, T: int, config: AlgorithmConfig, n_seeds: int,
                   master_seed: int = 0, M: Optional[int] = None, jobs: int = 1) -> list:
    """Run ``n_seeds`` independent seeds; failures come back as :class:`SeedFailure` in place."""
    if n_seeds < 1:
        raise ContractError("n_seeds must be >= 1")
    if algorithm not in ALGORITHMS:
        raise ContractError(f"algorithm must be one of {ALGORITHMS}")
    if algorithm == "bmnl" and not spec.kind.startswith("stochastic"):
        raise ContractError("bmnl requires a stochastic environment")
    spec.validate()
    config.validate()
    tasks = [(algorithm, spec, T, config, master_seed, i, M) for i in range(n_seeds)]
    if jobs > 1 and n_seeds > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_guarded, tasks))
    return [_guarded(t) for t in tasks]


def successful(results: Sequence) -> list[RegretTrace]:
    return [r for r in results if isinstance(r, RegretTrace)]


@dataclass
class AggregateTable:
    """Per-checkpoint mean and population std of cumulative regret and switch counts."""

    rounds: np.ndarray
    regret_mean: np.ndarray
    regret_std: np.ndarray
    switches_mean: np.ndarray
    switches_std: np.ndarray
    n_traces: int

    @property
    def regret_band(self):
        return self.regret_mean - 2 * self.regret_std, self.regret_mean + 2 * self.regret_std

    @property
    def switches_band(self):
        return self.switches_mean - 2 * self.switches_std, self.switches_mean + 2 * self.switches_std

    COLUMNS = ("round", "n", "regret_mean", "regret_std", "regret_lo", "regret_hi",
               "switches_mean", "switches_std", "switches_lo", "switches_hi")

    def rows(self):
        rlo, rhi = self.regret_band
        slo, shi = self.switches_band
        for i, t in enumerate(self.rounds):
            yield (int(t), self.n_traces, self.regret_mean[i], self.regret_std[i], rlo[i], rhi[i],
                   self.switches_mean[i], self.switches_std[i], slo[i], shi[i])


def _stats(cols: Sequence[np.ndarray], idx: np.ndarray):
    m = np.vstack([c[idx] for c in cols])
    return m.mean(axis=0), m.std(axis=0)


def aggregate(traces: Sequence, checkpoints: Optional[Sequence[int]] = None) -> AggregateTable:
    """Reduce traces over their common horizon; ``checkpoints`` defaults to every round."""
    traces = successful(traces)
    if not traces:
        raise ContractError("aggregate needs at least one trace")
    T = min(tr.T for tr in traces)
    rounds = np.arange(1, T + 1) if checkpoints is None else np.asarray(checkpoints, dtype=int)
    if rounds.size == 0 or rounds.min() < 1 or rounds.max() > T:
        raise ContractError(f"checkpoints must lie in 1..{T}")
    idx = rounds - 1
    rm, rs = _stats([tr.cum_regret for tr in traces], idx)
    sm, ss = _stats([tr.cum_switches.astype(float) for tr in traces], idx)
    return AggregateTable(rounds, rm, rs, sm, ss, len(traces))
