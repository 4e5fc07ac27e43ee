from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TRACE_COLUMNS = ("seed", "round", "arm_index", "outcome", "inst_regret", "cum_regret", "is_switch", "logdet_h")


@dataclass
class RegretTrace:
    """Per-round log of one algorithm run."""

    algorithm: str
    seed: int
    arm_index: np.ndarray
    outcome: np.ndarray
    inst_regret: np.ndarray
    is_switch: np.ndarray
    logdet_h: np.ndarray
    arms_played: np.ndarray
    wall_time: float = 0.0
    provenance: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.arm_index.size

    @property
    def rounds(self) -> np.ndarray:
        return np.arange(1, self.T + 1)

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.inst_regret)

    @property
    def cum_switches(self) -> np.ndarray:
        return np.cumsum(self.is_switch.astype(int))

    @property
    def total_regret(self) -> float:
        return float(self.inst_regret.sum())

    @property
    def switch_count(self) -> int:
        return int(self.is_switch.sum())

    def summary(self) -> dict:
        return dict(total_regret=self.total_regret, switch_count=self.switch_count, wall_time=self.wall_time)

    def rows(self):
        cum = self.cum_regret
        for t in range(self.T):
            yield (self.seed, t + 1, int(self.arm_index[t]), int(self.outcome[t]),
                   float(self.inst_regret[t]), float(cum[t]), int(self.is_switch[t]), float(self.logdet_h[t]))


class TraceRecorder:
    """Preallocated per-round buffers filled by the algorithm loops."""

    def __init__(self, T: int, d: int):
        self.arm_index = np.zeros(T, dtype=int)
        self.outcome = np.zeros(T, dtype=int)
        self.inst_regret = np.zeros(T)
        self.is_switch = np.zeros(T, dtype=bool)
        self.logdet_h = np.zeros(T)
        self.arms_played = np.zeros((T, d))

    def record(self, t: int, arm_index: int, arm, outcome: int, regret: float, logdet_h: float,
               switch: bool = False) -> None:
        i = t - 1
        self.arm_index[i] = arm_index
        self.arms_played[i] = arm
        self.outcome[i] = outcome
        self.inst_regret[i] = max(regret, 0.0)
        self.logdet_h[i] = logdet_h
        self.is_switch[i] = switch

    def finish(self, algorithm: str, seed: int, wall_time: float, provenance: dict, diagnostics: dict) -> RegretTrace:
        return RegretTrace(algorithm, seed, self.arm_index, self.outcome, self.inst_regret, self.is_switch,
                           self.logdet_h, self.arms_played, wall_time, provenance, diagnostics)
