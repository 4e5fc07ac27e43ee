"""Regularized MLE for the MNL model, and the Hessians and radii built around it.

All routines accept interaction data either as an :class:`Interactions` log
(one row per round) or as :class:`GroupedInteractions`, where repeated arms are
collapsed into outcome count tables. The two are interchangeable: the loss,
gradient and Hessian are sums over rounds and the grouping only changes the
order of summation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import ndtri

from .core import (
    ContractError,
    ModelParams,
    batch_link_gradient,
    logits,
    probs_from_logits,
)

SQRT6 = math.sqrt(6.0)


class ConvergenceError(RuntimeError):
    """Newton solver did not reach the gradient tolerance."""

    def __init__(self, message, theta, grad_norm, iterations):
        super().__init__(message)
        self.theta = theta
        self.grad_norm = grad_norm
        self.iterations = iterations


@dataclass(frozen=True)
class InteractionRecord:
    arm: np.ndarray
    outcome: int
    round: int


@dataclass
class Interactions:
    """Per-round log of played arms and observed outcomes."""

    arms: np.ndarray
    outcomes: np.ndarray
    K: int

    def __post_init__(self):
        self.arms = np.atleast_2d(np.asarray(self.arms, dtype=float))
        self.outcomes = np.asarray(self.outcomes, dtype=int).reshape(-1)
        if self.outcomes.size and self.arms.shape[0] != self.outcomes.size:
            raise ContractError("arms and outcomes have different lengths")
        if np.any((self.outcomes < 0) | (self.outcomes > self.K)):
            raise ContractError(f"outcomes must lie in 0..{self.K}")

    @classmethod
    def from_records(cls, records, K: int, d: int | None = None) -> "Interactions":
        rounds = [r.round for r in records]
        if any(b <= a for a, b in zip(rounds, rounds[1:])):
            raise ContractError("record rounds must be strictly increasing")
        if not records:
            return cls.empty(K, d or 1)
        return cls(np.array([r.arm for r in records]), np.array([r.outcome for r in records]), K)

    @classmethod
    def empty(cls, K: int, d: int) -> "Interactions":
        return cls(np.zeros((0, d)), np.zeros(0, dtype=int), K)

    def __len__(self):
        return self.outcomes.size

    @property
    def d(self) -> int:
        return self.arms.shape[1]

    def grouped(self) -> "GroupedInteractions":
        counts = np.zeros((len(self), self.K + 1))
        counts[np.arange(len(self)), self.outcomes] = 1.0
        return GroupedInteractions(self.arms, counts)

    def subset(self, idx) -> "Interactions":
        idx = np.asarray(idx, dtype=int)
        return Interactions(self.arms[idx], self.outcomes[idx], self.K)


@dataclass
class GroupedInteractions:
    """Distinct arms with outcome counts; ``counts[u, k]`` = times arm ``u`` gave outcome ``k``."""

    arms: np.ndarray
    counts: np.ndarray

    @property
    def K(self) -> int:
        return self.counts.shape[1] - 1

    @property
    def d(self) -> int:
        return self.arms.shape[1]

    @property
    def n(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def grouped(self) -> "GroupedInteractions":
        return self


@dataclass
class GroupedLog:
    """Incrementally grouped history, keyed on the exact bytes of each arm vector."""

    K: int
    d: int
    _index: dict = field(default_factory=dict)
    _arms: list = field(default_factory=list)
    _counts: list = field(default_factory=list)

    def add(self, arm: np.ndarray, outcome: int) -> int:
        key = np.ascontiguousarray(arm, dtype=float).tobytes()
        u = self._index.get(key)
        if u is None:
            u = len(self._arms)
            self._index[key] = u
            self._arms.append(np.array(arm, dtype=float))
            self._counts.append(np.zeros(self.K + 1))
        self._counts[u][outcome] += 1.0
        return u

    def __len__(self):
        return len(self._arms)

    def data(self) -> GroupedInteractions:
        if not self._arms:
            return GroupedInteractions(np.zeros((0, self.d)), np.zeros((0, self.K + 1)))
        return GroupedInteractions(np.array(self._arms), np.array(self._counts))


def _theta_vec(params) -> np.ndarray:
    if isinstance(params, ModelParams):
        return params.theta
    return np.asarray(params, dtype=float).reshape(-1)


def _grouped(data, K: int | None = None) -> GroupedInteractions:
    if isinstance(data, (Interactions, GroupedInteractions)):
        return data.grouped()
    if isinstance(data, (list, tuple)):
        if K is None:
            raise ContractError("K is required when data is a list of records")
        return Interactions.from_records(list(data), K).grouped()
    raise TypeError(f"unsupported data type {type(data).__name__}")


def _eval(theta, g: GroupedInteractions):
    """Per-group probabilities ``(z, z0)`` at ``theta``."""
    return probs_from_logits(logits(g.arms, theta.reshape(g.K, g.d)))


def nll_loss(params, data, lam: float, K: int | None = None) -> float:
    """Regularized negative log-likelihood ``sum_s -log z_{y_s}(x_s) + lam/2 ||theta||^2``."""
    if lam <= 0:
        raise ContractError("lambda must be positive")
    theta = _theta_vec(params)
    g = _grouped(data, K)
    reg = 0.5 * lam * float(theta @ theta)
    if g.arms.shape[0] == 0:
        return reg
    eta = logits(g.arms, theta.reshape(g.K, g.d))
    # log-sum-exp with the implicit zero logit of outcome 0
    shift = np.maximum(eta.max(axis=1), 0.0)
    lse = shift + np.log(np.exp(-shift) + np.exp(eta - shift[:, None]).sum(axis=1))
    full = np.column_stack([np.zeros(len(eta)), eta])
    return float(np.sum(g.counts * (lse[:, None] - full)) + reg)


def nll_gradient(params, data, lam: float, K: int | None = None) -> np.ndarray:
    """``sum_s (z(x_s, theta) - m_s) kron x_s + lam * theta``."""
    theta = _theta_vec(params)
    g = _grouped(data, K)
    if g.arms.shape[0] == 0:
        return lam * theta
    z, _ = _eval(theta, g)
    resid = g.n[:, None] * z - g.counts[:, 1:]
    return (resid.T @ g.arms).reshape(-1) + lam * theta


def weighted_kron_sum(a: np.ndarray, arms: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``sum_u w_u * A_u kron x_u x_u^T`` as a dense ``(K d, K d)`` matrix."""
    K = a.shape[1]
    d = arms.shape[1]
    t = np.einsum("u,uij,uk,ul->ikjl", w, a, arms, arms, optimize=True)
    return t.reshape(K * d, K * d)


def nll_hessian(params, data, lam: float, K: int | None = None) -> np.ndarray:
    """``sum_s A(x_s, theta) kron x_s x_s^T + lam I``."""
    theta = _theta_vec(params)
    g = _grouped(data, K)
    p = g.K * g.d
    h = lam * np.eye(p)
    if g.arms.shape[0] == 0:
        return h
    z, _ = _eval(theta, g)
    return h + weighted_kron_sum(batch_link_gradient(z), g.arms, g.n)


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    grad_norm: float
    iterations: int


def fit_mle(data, lam: float, tolerance: float = 1e-10, max_iters: int = 100,
            K: int | None = None, d: int | None = None, theta0=None,
            return_info: bool = False):
    """Minimize the regularized NLL by damped Newton with Armijo backtracking.

    Returns the fitted :class:`ModelParams` (``S`` left unbounded: the estimate
    is not projected). Raises :class:`ConvergenceError` carrying the last
    iterate when the gradient norm stays above ``tolerance``.
    """
    if lam <= 0:
        raise ContractError("lambda must be positive")
    g = _grouped(data, K)
    K, d = g.K, g.d
    theta = np.zeros(K * d) if theta0 is None else np.array(_theta_vec(theta0), dtype=float)
    f = nll_loss(theta, g, lam)
    grad = nll_gradient(theta, g, lam)
    gnorm = float(np.linalg.norm(grad))
    it = 0
    while gnorm > tolerance:
        if it >= max_iters:
            raise ConvergenceError(
                f"Newton did not converge in {max_iters} iterations (|grad| = {gnorm:.3e})",
                theta, gnorm, it)
        it += 1
        c = cho_factor(nll_hessian(theta, g, lam), lower=True)
        step = -cho_solve(c, grad)
        slope = float(grad @ step)
        t = 1.0
        while True:
            cand = theta + t * step
            fc = nll_loss(cand, g, lam)
            if fc <= f + 1e-4 * t * slope:
                break
            # inside the quadratic region loss differences drop below round-off
            if -slope < 1e-12 * max(1.0, abs(f)):
                cand = theta + step
                fc = nll_loss(cand, g, lam)
                break
            t *= 0.5
            if t < 1e-12:
                raise ConvergenceError("line search failed", theta, gnorm, it)
        theta, f = cand, fc
        grad = nll_gradient(theta, g, lam)
        gnorm = float(np.linalg.norm(grad))
    params = ModelParams(theta, K, d)
    if return_info:
        return FitResult(params, gnorm, it)
    return params


def mle_residual(params, data, lam: float, K: int | None = None) -> float:
    """First-order condition residual ``||sum z kron x + lam theta - sum m kron x||``."""
    return float(np.linalg.norm(nll_gradient(params, data, lam, K)))


# ---------------------------------------------------------------------------
# design matrices, radii, scaling


@dataclass
class DesignMatrixV:
    """``lam I + sum x x^T`` over the rounds accumulated so far."""

    v: np.ndarray
    lam: float
    count: int = 0

    @classmethod
    def initial(cls, d: int, lam: float) -> "DesignMatrixV":
        if lam <= 0:
            raise ContractError("lambda must be positive")
        return cls(lam * np.eye(d), lam, 0)

    @classmethod
    def from_arms(cls, arms: np.ndarray, lam: float) -> "DesignMatrixV":
        arms = np.atleast_2d(arms)
        m = cls.initial(arms.shape[1], lam)
        m.v = m.v + arms.T @ arms
        m.count = arms.shape[0]
        return m

    def add(self, x: np.ndarray) -> None:
        self.v = self.v + np.outer(x, x)
        self.count += 1

    def copy(self) -> "DesignMatrixV":
        return DesignMatrixV(self.v.copy(), self.lam, self.count)

    def inv_norms(self, arms: np.ndarray) -> np.ndarray:
        """``||x||_{V^{-1}}`` for each row, via a triangular solve."""
        L = np.linalg.cholesky(self.v)
        w = solve_triangular(L, np.atleast_2d(arms).T, lower=True)
        return np.sqrt(np.sum(w * w, axis=0))

    def lifted(self, K: int) -> np.ndarray:
        """``I_K kron V``."""
        return np.kron(np.eye(K), self.v)


@dataclass(frozen=True)
class ScaledHessian:
    h: np.ndarray
    lam: float
    kind: str  # "optimal" | "proxy" | "direction"

    def logdet(self) -> float:
        return logdet(self.h)


@dataclass(frozen=True)
class ConfidenceRadius:
    gamma: float
    flavor: str  # "batched" | "rs"
    inputs: dict

    def __float__(self):
        return self.gamma


@dataclass(frozen=True)
class KappaEstimate:
    kappa: float
    method: str  # "configured" | "sampled"

    def __post_init__(self):
        if self.kappa < 1:
            raise ContractError("kappa must be >= 1")

    def __float__(self):
        return self.kappa


def logdet(m: np.ndarray) -> float:
    L = np.linalg.cholesky(m)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def confidence_radius_batched(S, K, d, T, lam, c_gamma: float = 1.0) -> ConfidenceRadius:
    if min(S, K, d, T, lam) <= 0:
        raise ContractError("radius inputs must be positive")
    lt = math.log(T) + K * d
    g = 12 * S * math.sqrt(lt) + 8 * S * lt / math.sqrt(lam) + 2 * S ** 1.5 * math.sqrt(lam)
    return ConfidenceRadius(c_gamma * g, "batched",
                            dict(S=S, K=K, d=d, T=T, lam=lam, c_gamma=c_gamma))


def confidence_radius_rs(S, K, d, T, delta, C: float = 1.0, c_gamma: float = 1.0) -> ConfidenceRadius:
    if not 0 < delta < 1:
        raise ContractError("delta must lie in (0, 1)")
    if min(S, K, d, T, C) <= 0:
        raise ContractError("radius inputs must be positive")
    g = C * S ** 1.25 * math.sqrt(K * d * math.log(T / delta))
    return ConfidenceRadius(c_gamma * g, "rs",
                            dict(S=S, K=K, d=d, T=T, delta=delta, C=C, c_gamma=c_gamma))


def scaling_exponent(inv_norm, gamma, kappa, S, variant: str = "batched"):
    """Argument of the exponential in the self-concordance scaling."""
    factor = {"batched": 1.0, "rs": 2.0}[variant]
    return SQRT6 * np.minimum(factor * float(gamma) * math.sqrt(float(kappa)) * inv_norm, 2.0 * S)


def scaling_factor(arm, gamma, kappa, v: DesignMatrixV, S: float, variant: str = "batched"):
    """``B(x) = exp(sqrt6 * min(c * gamma * sqrt(kappa) * ||x||_{V^{-1}}, 2S))``; ``c`` is 2 for ``rs``.

    ``arm`` may be a single vector (returns a float) or an ``(n, d)`` array.
    """
    x = np.asarray(arm, dtype=float)
    out = np.exp(scaling_exponent(v.inv_norms(np.atleast_2d(x)), gamma, kappa, S, variant))
    return float(out[0]) if x.ndim == 1 else out


def build_scaled_hessian(data, theta_hat, lam: float, b_values, K: int | None = None) -> ScaledHessian:
    """``lam I + sum_s A(x_s, theta_hat) / B(x_s) kron x_s x_s^T`` (one B per record or group)."""
    g = _grouped(data, K)
    b = np.asarray(b_values, dtype=float).reshape(-1)
    if b.size != g.arms.shape[0]:
        raise ContractError("need one scaling value per record")
    if np.any(b < 1):
        raise ContractError("scaling values must be >= 1")
    return ScaledHessian(weighted_hessian(theta_hat, g.arms, g.n / b, lam), lam, "proxy")


def weighted_hessian(theta, arms: np.ndarray, w: np.ndarray, lam: float) -> np.ndarray:
    """``lam I + sum_u w_u A(x_u, theta) kron x_u x_u^T``."""
    theta = _theta_vec(theta)
    d = arms.shape[1]
    K = theta.size // d
    h = lam * np.eye(K * d)
    if arms.shape[0] == 0:
        return h
    z, _ = probs_from_logits(logits(arms, theta.reshape(K, d)))
    return h + weighted_kron_sum(batch_link_gradient(z), arms, w)


def optimal_hessian(data, theta_star, lam: float, K: int | None = None) -> ScaledHessian:
    g = _grouped(data, K)
    return ScaledHessian(weighted_hessian(theta_star, g.arms, g.n, lam), lam, "optimal")


def lambda_preset(name, K: int, d: int, T: int, S: float, delta: float = 0.01) -> float:
    """Regularizer presets: ``algorithm`` (sqrt(Kd log T)), ``theory`` (Kd log T / sqrt S),
    ``rs`` (Kd log(T/delta) / sqrt S) or a literal positive number."""
    if isinstance(name, (int, float)) and not isinstance(name, bool):
        if name <= 0:
            raise ContractError("lambda must be positive")
        return float(name)
    if name == "algorithm":
        return math.sqrt(K * d * math.log(T))
    if name == "theory":
        return K * d * math.log(T) / math.sqrt(S)
    if name == "rs":
        return K * d * math.log(T / delta) / math.sqrt(S)
    raise ContractError(f"unknown lambda preset {name!r}")


def sample_ball(n: int, dim: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform points in a ball; row ``i`` only depends on the first ``(i+1)(dim+1)`` draws."""
    u = rng.random((n, dim + 1))
    g = ndtri(np.clip(u[:, :dim], 1e-300, 1 - 1e-16))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return radius * g * u[:, dim:] ** (1.0 / dim)


def estimate_kappa(arm_sets, S: float, K: int, d: int, n_samples: int,
                   rng: np.random.Generator | None = None, thetas=None) -> KappaEstimate:
    """Sampled lower bound on ``sup 1/lambda_min(A(x, theta))`` over the given arms and the S-ball.

    ``thetas`` overrides the random parameter sample.
    """
    if thetas is None:
        if n_samples < 1:
            raise ContractError("n_samples must be >= 1")
        thetas = sample_ball(n_samples, K * d, S, rng)
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    arms = np.vstack([np.atleast_2d(a) for a in arm_sets])
    best = 1.0
    for th in thetas:
        z, _ = probs_from_logits(logits(arms, th.reshape(K, d)))
        lmin = np.linalg.eigvalsh(batch_link_gradient(z))[:, 0]
        best = max(best, float(np.max(1.0 / lmin)))
    return KappaEstimate(best, "sampled")
