"""Seeded problem instances and the arm sets they present each round."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..core import ContractError, ModelParams, RewardVector, as_arm_set, batch_expected_reward

KINDS = ("stochastic-fixed-pool", "stochastic-resampled", "adversarial-fresh")


def _unit_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(n == 0, 1.0, n)


@dataclass
class EnvironmentSpec:
    kind: str = "stochastic-fixed-pool"
    d: int = 3
    K: int = 3
    n_arms: int = 10
    S: float = 2.0
    R: float = 2.0
    seed: int = 0
    theta_star: Optional[np.ndarray] = None
    rho: Optional[np.ndarray] = None
    arm_pool: Optional[np.ndarray] = None
    script: Optional[Callable[[int], np.ndarray]] = field(default=None, repr=False)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ContractError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.d < 1 or self.K < 1 or self.n_arms < 1:
            raise ContractError("d, K and n_arms must be >= 1")
        if self.S <= 0 or self.R <= 0:
            raise ContractError("S and R must be positive")


class Environment:
    """Presents an arm set each round; outcomes are drawn by the algorithm runner from ``theta_star``."""

    def __init__(self, spec: EnvironmentSpec):
        spec.validate()
        self.spec = spec
        self.kind = spec.kind
        self.K, self.d, self.S, self.R = spec.K, spec.d, spec.S, spec.R
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
        pool = rng.uniform(-1, 1, (spec.n_arms, spec.d))
        theta = rng.uniform(-1, 1, spec.K * spec.d)
        rho = rng.uniform(0, 1, spec.K)
        while not np.any(rho > 0):
            rho = rng.uniform(0, 1, spec.K)
        if spec.arm_pool is not None:
            pool = np.asarray(spec.arm_pool, dtype=float)
        if spec.theta_star is not None:
            theta = np.asarray(spec.theta_star, dtype=float)
        if spec.rho is not None:
            rho = np.asarray(spec.rho, dtype=float)
        self.pool = as_arm_set(_unit_rows(pool), spec.d)
        self.theta_star = ModelParams.bounded(spec.S * theta / np.linalg.norm(theta), spec.K, spec.d, spec.S)
        self.rho = RewardVector(spec.R * rho / np.linalg.norm(rho), spec.R)

    @property
    def stochastic(self) -> bool:
        return self.kind.startswith("stochastic")

    def contexts(self, t: int) -> np.ndarray:
        """Arm set presented at round ``t`` (1-based); a pure function of ``self.spec`` and ``t``."""
        if self.kind == "stochastic-fixed-pool":
            return self.pool
        if self.kind == "adversarial-fresh" and self.spec.script is not None:
            return as_arm_set(self.spec.script(t), self.d)
        rng = np.random.default_rng(np.random.SeedSequence(self.spec.seed, spawn_key=(1, t)))
        n = self.spec.n_arms
        if self.kind == "stochastic-resampled":
            return _unit_rows(rng.uniform(-1, 1, (n, self.d)))
        # drifting cone: the favoured direction rotates slowly, so sets are not i.i.d.
        centre = np.zeros(self.d)
        centre[0] = np.cos(0.01 * t)
        if self.d > 1:
            centre[1] = np.sin(0.01 * t)
        return _unit_rows(centre + 0.6 * rng.uniform(-1, 1, (n, self.d)))

    def kappa_arms(self, rounds: int = 20) -> np.ndarray:
        if self.kind == "stochastic-fixed-pool":
            return self.pool
        return np.vstack([self.contexts(t) for t in range(1, rounds + 1)])


def make_environment(spec: EnvironmentSpec) -> Environment:
    return Environment(spec)


def oracle_best(context, theta_star, rho) -> tuple[int, float]:
    """Exhaustive argmax of the expected reward; lowest index wins ties."""
    arms = np.atleast_2d(context)
    if arms.shape[0] == 0:
        raise ContractError("arm set is empty")
    values = batch_expected_reward(arms, theta_star, rho)
    i = int(np.argmax(values))
    return i, float(values[i])


def experiment_spec(number: int, seed: int = 0, kind: str = "stochastic-fixed-pool") -> EnvironmentSpec:
    """Desk-scale instances: 1 is the logistic case (K=1), 2 and 3 the three-outcome case."""
    if number == 1:
        return EnvironmentSpec(kind=kind, d=3, K=1, n_arms=10, S=2.0, R=1.0, seed=seed, rho=np.ones(1))
    if number in (2, 3):
        return EnvironmentSpec(kind=kind, d=3, K=3, n_arms=10, S=2.0, R=2.0, seed=seed)
    raise ContractError(f"unknown experiment {number}")
