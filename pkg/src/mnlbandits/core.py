"""Multinomial-logit outcome model and the Kronecker helpers built on it.

Parameters are stored stacked, ``theta = (theta_1, ..., theta_K)`` with each
block of length ``d``; ``theta.reshape(K, d)`` recovers the per-outcome rows so
that ``(I_K kron x^T) theta == theta.reshape(K, d) @ x``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ARM_NORM_TOL = 1e-9


class ContractError(ValueError):
    """Raised when an input violates a documented precondition."""


@dataclass(frozen=True)
class ModelParams:
    """Stacked MNL parameter vector together with its shape and norm bound."""

    theta: np.ndarray
    K: int
    d: int
    S: float = np.inf

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if self.K < 1 or self.d < 1:
            raise ContractError(f"need K >= 1 and d >= 1, got K={self.K}, d={self.d}")
        if not self.S > 0:
            raise ContractError(f"norm bound S must be positive, got {self.S}")
        if theta.size != self.K * self.d:
            raise ContractError(f"theta has length {theta.size}, expected K*d={self.K * self.d}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def bounded(cls, theta, K: int, d: int, S: float) -> "ModelParams":
        """Construct a true parameter, enforcing ``||theta|| <= S``."""
        p = cls(theta, K, d, S)
        if np.linalg.norm(p.theta) > S * (1 + 1e-12):
            raise ContractError(f"||theta|| = {np.linalg.norm(p.theta):.6g} exceeds S = {S}")
        return p

    @property
    def matrix(self) -> np.ndarray:
        return self.theta.reshape(self.K, self.d)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.theta))


@dataclass(frozen=True)
class RewardVector:
    """Nonnegative per-outcome rewards (the no-outcome reward is fixed at 0)."""

    rho: np.ndarray
    R: float = np.inf

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float).reshape(-1)
        if np.any(rho < 0):
            raise ContractError("reward entries must be nonnegative")
        if np.linalg.norm(rho) > self.R * (1 + 1e-12):
            raise ContractError(f"||rho|| = {np.linalg.norm(rho):.6g} exceeds R = {self.R}")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @property
    def K(self) -> int:
        return self.rho.size


@dataclass(frozen=True)
class OutcomeProbabilities:
    z: np.ndarray
    z0: float

    @property
    def full(self) -> np.ndarray:
        """Probabilities of outcomes ``0..K`` in order."""
        return np.concatenate(([self.z0], self.z))


def as_arm(x, d: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size == 0:
        raise ContractError("arm must have dimension >= 1")
    if d is not None and x.size != d:
        raise ContractError(f"arm has dimension {x.size}, expected {d}")
    if np.linalg.norm(x) > 1 + ARM_NORM_TOL:
        raise ContractError(f"arm norm {np.linalg.norm(x):.6g} exceeds 1")
    return x


def as_arm_set(arms, d: int | None = None) -> np.ndarray:
    """Validate a finite arm set given as an ``(n, d)`` array."""
    arms = np.atleast_2d(np.asarray(arms, dtype=float))
    if arms.shape[0] == 0:
        raise ContractError("arm set is empty")
    if d is not None and arms.shape[1] != d:
        raise ContractError(f"arm set has dimension {arms.shape[1]}, expected {d}")
    if np.any(np.linalg.norm(arms, axis=1) > 1 + ARM_NORM_TOL):
        raise ContractError("arm set contains a vector with norm > 1")
    return arms


def _theta_matrix(params, d: int) -> np.ndarray:
    theta = params.theta if isinstance(params, ModelParams) else np.asarray(params, dtype=float).reshape(-1)
    if isinstance(params, ModelParams) and params.d != d:
        raise ContractError(f"arm dimension {d} does not match params.d = {params.d}")
    if theta.size % d:
        raise ContractError(f"theta of length {theta.size} is not a multiple of d = {d}")
    return theta.reshape(-1, d)


def logits(arms: np.ndarray, theta_mat: np.ndarray) -> np.ndarray:
    """Linear predictors ``x^T theta_i`` for every row of ``arms``: shape ``(n, K)``."""
    return arms @ theta_mat.T


def probs_from_logits(eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Softmax with an implicit zero logit for outcome 0, max-shifted for overflow safety."""
    eta = np.atleast_2d(eta)
    shift = np.maximum(eta.max(axis=1, keepdims=True), 0.0)
    e = np.exp(eta - shift)
    e0 = np.exp(-shift)
    denom = e0 + e.sum(axis=1, keepdims=True)
    return e / denom, (e0 / denom)[:, 0]


def batch_probabilities(arms: np.ndarray, params) -> tuple[np.ndarray, np.ndarray]:
    """Outcome probabilities for every arm: ``z`` of shape ``(n, K)`` and ``z0`` of shape ``(n,)``."""
    arms = np.atleast_2d(np.asarray(arms, dtype=float))
    return probs_from_logits(logits(arms, _theta_matrix(params, arms.shape[1])))


def batch_link_gradient(z: np.ndarray) -> np.ndarray:
    """``diag(z) - z z^T`` for each row of ``z``: shape ``(n, K, K)``."""
    z = np.atleast_2d(z)
    a = -z[:, :, None] * z[:, None, :]
    idx = np.arange(z.shape[1])
    a[:, idx, idx] += z
    return a


def probabilities(arm, params) -> OutcomeProbabilities:
    x = as_arm(arm)
    z, z0 = batch_probabilities(x[None, :], params)
    return OutcomeProbabilities(z[0], float(z0[0]))


def link_gradient(arm, params) -> np.ndarray:
    """Jacobian of ``z`` with respect to the K linear predictors."""
    return batch_link_gradient(probabilities(arm, params).z[None, :])[0]


def expected_reward(arm, params, rho) -> float:
    r = rho.rho if isinstance(rho, RewardVector) else np.asarray(rho, dtype=float).reshape(-1)
    z = probabilities(arm, params).z
    if r.size != z.size:
        raise ContractError(f"reward vector has length {r.size}, model has K = {z.size}")
    return float(r @ z)


def batch_expected_reward(arms: np.ndarray, params, rho) -> np.ndarray:
    r = rho.rho if isinstance(rho, RewardVector) else np.asarray(rho, dtype=float).reshape(-1)
    z, _ = batch_probabilities(arms, params)
    if r.size != z.shape[1]:
        raise ContractError(f"reward vector has length {r.size}, model has K = {z.shape[1]}")
    return z @ r


def sample_outcome(arm, params, rng: np.random.Generator) -> int:
    """Draw an outcome in ``{0, ..., K}``; consumes exactly one uniform from ``rng``."""
    p = probabilities(arm, params).full
    u = rng.random()
    k = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return min(k, p.size - 1)


def kron(a, b) -> np.ndarray:
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


def response_indicator(outcome: int, K: int) -> np.ndarray:
    if not 0 <= outcome <= K:
        raise ContractError(f"outcome {outcome} outside 0..{K}")
    m = np.zeros(K)
    if outcome:
        m[outcome - 1] = 1.0
    return m


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix; round-off negatives clamp to zero."""
    w, v = np.linalg.eigh(a)
    w = np.where(w < 1e-12, 0.0, w)
    return (v * np.sqrt(w)) @ v.T
