"""Optimal designs over arm sets, plus the exploration policies built from them.

A *policy* here is anything with a ``weights(arms) -> ndarray`` method returning a
probability vector over the rows of the presented arm set.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from .core import ContractError, batch_link_gradient, batch_probabilities, psd_sqrt

log = logging.getLogger(__name__)

RANK_TOL = 1e-10
ZERO_TOL = 1e-12


class DesignError(RuntimeError):
    """Frank-Wolfe stopped before certifying the requested accuracy."""

    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class DesignWeights:
    """Probability weights over the rows of an arm set plus the G-criterion certificate."""

    weights: np.ndarray
    certificate: float
    rank: int
    iterations: int = 0

    @property
    def support(self) -> list[tuple[int, float]]:
        return [(int(i), float(self.weights[i])) for i in np.flatnonzero(self.weights > 0)]


def span_coordinates(arms: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Coordinates of the arms in an orthonormal basis of their span (column-pivoted QR)."""
    arms = np.atleast_2d(arms)
    q, r, _ = qr(arms.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] <= ZERO_TOL:
        return np.zeros((arms.shape[0], 0))
    rank = int(np.sum(diag > tol * max(1.0, diag[0])))
    return arms @ q[:, :rank]


def design_matrix(arms: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``V(pi) = sum_x pi(x) x x^T``."""
    return (arms * weights[:, None]).T @ arms


def variances(arms: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``||x||^2_{V(pi)^{-1}}`` for every row (``V`` must be nonsingular on the rows' span)."""
    m = design_matrix(arms, weights)
    sol = np.linalg.solve(m, arms.T)
    return np.einsum("ij,ji->i", arms, sol)


def _initial_support(y: np.ndarray) -> np.ndarray:
    """Greedy volumetric start: for each residual direction keep its two extreme arms."""
    n, r = y.shape
    chosen: list[int] = []
    resid = y.copy()
    for _ in range(r):
        j = int(np.argmax(np.einsum("ij,ij->i", resid, resid)))
        direction = resid[j] / np.linalg.norm(resid[j])
        proj = y @ direction
        for k in (int(np.argmax(proj)), int(np.argmin(proj))):
            if k not in chosen:
                chosen.append(k)
        resid = resid - np.outer(resid @ direction, direction)
    return np.array(chosen[: min(2 * r, n)])


def g_optimal(arms, epsilon: float = 0.01, max_iters: int = 1000) -> DesignWeights:
    """G-optimal design by Frank-Wolfe with away steps and exact line search.

    Stops once ``max_x ||x||^2_{V(pi)^{-1}} <= (1 + epsilon) * rank``; rank-deficient
    arm sets are handled in the coordinates of their span.
    """
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    arms = np.atleast_2d(np.asarray(arms, dtype=float))
    n = arms.shape[0]
    if n == 0:
        raise ContractError("arm set is empty")
    y = span_coordinates(arms)
    r = y.shape[1]
    if r == 0:
        raise ContractError("arm set spans only the zero vector")
    w = np.zeros(n)
    w[_initial_support(y)] = 1.0
    w /= w.sum()
    bound = (1 + epsilon) * r
    g = variances(y, w)
    for it in range(max_iters + 1):
        j = int(np.argmax(g))
        if g[j] <= bound:
            return DesignWeights(w, float(g[j]), r, it)
        if it == max_iters:
            break
        supp = np.flatnonzero(w > 0)
        k = int(supp[np.argmin(g[supp])])
        if g[j] - r >= r - g[k] or w[k] >= 1.0:
            alpha = (g[j] / r - 1.0) / (g[j] - 1.0)
            w *= 1 - alpha
            w[j] += alpha
        else:
            lower = -w[k] / (1.0 - w[k])
            alpha = lower if g[k] <= 1.0 else max((g[k] / r - 1.0) / (g[k] - 1.0), lower)
            w *= 1 - alpha
            w[k] += alpha
            if alpha == lower:
                w[k] = 0.0
        w = np.clip(w, 0.0, None)
        w /= w.sum()
        g = variances(y, w)
    best = DesignWeights(w, float(np.max(g)), r, max_iters)
    raise DesignError(
        f"no (1+{epsilon}) certificate after {max_iters} iterations (value {best.certificate:.4f}, rank {r})",
        best)


def build_scaled_sets(arms, theta_hat, b_values, K: int) -> np.ndarray:
    """Directionally scaled copies of ``arms``: ``out[i, j] = A(x_j)^{1/2} e_i / sqrt(B(x_j)) kron x_j``.

    Returns an array of shape ``(K, n, K * d)``; row ``j`` of set ``i`` has source arm ``j``.
    """
    arms = np.atleast_2d(np.asarray(arms, dtype=float))
    n, d = arms.shape
    b = np.broadcast_to(np.asarray(b_values, dtype=float), (n,))
    z, _ = batch_probabilities(arms, theta_hat)
    if z.shape[1] != K:
        raise ContractError(f"theta_hat implies K = {z.shape[1]}, expected {K}")
    roots = np.array([psd_sqrt(a) for a in batch_link_gradient(z)]) / np.sqrt(b)[:, None, None]
    # roots[j, :, i] is the i-th column of the scaled root for arm j
    return np.einsum("jki,jl->ijkl", roots, arms).reshape(K, n, K * d)


# ---------------------------------------------------------------------------
# policies


class UniformPolicy:
    def weights(self, arms):
        n = np.atleast_2d(arms).shape[0]
        return np.full(n, 1.0 / n)


class _Cached:
    """Memoizes ``weights`` on the exact bytes of the presented arm set."""

    cache_size = 4096

    def __init__(self):
        self._cache: dict = {}

    def weights(self, arms):
        arms = np.ascontiguousarray(np.atleast_2d(arms), dtype=float)
        key = (arms.shape, arms.tobytes())
        w = self._cache.get(key)
        if w is None:
            w = self._compute(arms)
            if len(self._cache) >= self.cache_size:
                self._cache.clear()
            self._cache[key] = w
        return w

    def _compute(self, arms):
        raise NotImplementedError


class GOptimalPolicy(_Cached):
    """Plays the G-optimal design of whatever set is presented."""

    def __init__(self, epsilon: float = 0.01, max_iters: int = 1000, transform=None):
        super().__init__()
        self.epsilon = epsilon
        self.max_iters = max_iters
        self.transform = transform

    def _compute(self, arms):
        vecs = arms if self.transform is None else self.transform(arms)
        if np.max(np.linalg.norm(vecs, axis=1)) <= ZERO_TOL:
            log.warning("degenerate (all-zero) design set; falling back to uniform weights")
            return UniformPolicy().weights(arms)
        return _solve(vecs, self.epsilon, self.max_iters).weights


def _solve(vecs, epsilon, max_iters) -> DesignWeights:
    try:
        return g_optimal(vecs, epsilon, max_iters)
    except DesignError as err:
        log.warning("%s; using best iterate", err)
        return err.best


def _unique_rows(x: np.ndarray) -> np.ndarray:
    return np.unique(x, axis=0) if x.shape[0] else x


class DistributionalDesign(_Cached):
    """Design policy learned from sampled context sets.

    With probability 1/2 it plays the G-optimal design of the presented set; with
    probability 1/2 it plays a design learned once from a bootstrap resample of the
    context samples: the G-optimal design of their pooled arms, with each support
    point's mass moved to the nearest (up to sign) arm of the presented set. The
    first half guarantees ``pi >= pi_G / 2``.

    ``transform`` maps a presented arm set to the vectors the design acts on (for
    example a directionally scaled set); the returned weights always refer to the
    rows of the presented set.
    """

    def __init__(self, context_samples, epsilon: float = 0.01, rng: np.random.Generator | None = None,
                 transform=None, max_iters: int = 1000):
        super().__init__()
        samples = [np.atleast_2d(np.asarray(s, dtype=float)) for s in context_samples]
        if not samples:
            raise ContractError("need at least one context sample")
        self.epsilon = epsilon
        self.max_iters = max_iters
        self.transform = transform
        self._g = GOptimalPolicy(epsilon, max_iters, transform)
        if rng is not None and len(samples) > 1:
            picks = rng.integers(0, len(samples), size=len(samples))
            samples = [samples[i] for i in picks]
        vecs = [s if transform is None else transform(s) for s in samples]
        pooled = _unique_rows(np.vstack(vecs))
        keep = np.linalg.norm(pooled, axis=1) > ZERO_TOL
        pooled = pooled[keep]
        if pooled.shape[0] == 0:
            log.warning("pooled design set is all-zero; resampled branch disabled")
            self.support = np.zeros((0, vecs[0].shape[1]))
            self.support_mass = np.zeros(0)
        else:
            design = _solve(pooled, epsilon, max_iters)
            on = design.weights > 0
            self.support = pooled[on]
            self.support_mass = design.weights[on]

    def _compute(self, arms):
        w_g = self._g.weights(arms)
        if self.support_mass.size == 0:
            return w_g
        vecs = arms if self.transform is None else self.transform(arms)
        if np.max(np.linalg.norm(vecs, axis=1)) <= ZERO_TOL:
            return w_g
        diff = np.minimum(
            np.linalg.norm(vecs[:, None, :] - self.support[None, :, :], axis=2),
            np.linalg.norm(vecs[:, None, :] + self.support[None, :, :], axis=2),
        )
        w_r = np.bincount(np.argmin(diff, axis=0), weights=self.support_mass, minlength=arms.shape[0])
        w_r /= w_r.sum()
        return 0.5 * w_g + 0.5 * w_r

    def expected_information(self, context_samples) -> np.ndarray:
        """Average over the samples of ``sum_x pi(x) v v^T`` on the transformed vectors."""
        mats = []
        for s in context_samples:
            s = np.atleast_2d(s)
            vecs = s if self.transform is None else self.transform(s)
            mats.append(design_matrix(vecs, self.weights(s)))
        return np.mean(mats, axis=0)


def distributional_design(context_samples, epsilon: float = 0.01, rng=None, transform=None) -> DistributionalDesign:
    return DistributionalDesign(context_samples, epsilon, rng, transform)


@dataclass
class MixturePolicy:
    """Convex combination of policies; sampling picks a component, then an arm."""

    components: list

    def __post_init__(self):
        w = np.array([c[1] for c in self.components], dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ContractError("mixing weights must be nonnegative and sum to 1")

    @property
    def mixing_weights(self) -> np.ndarray:
        return np.array([c[1] for c in self.components])

    def weights(self, arms):
        return sum(w * p.weights(arms) for p, w in self.components)


def mnl_design_policy(batch: int, context_sets, theta_hat, b_values, epsilon: float = 0.01,
                      rng: np.random.Generator | None = None) -> MixturePolicy:
    """Uniform mixture of K designs on the scaled sets and one on the raw sets.

    ``b_values`` maps an ``(n, d)`` arm array to its scaling factors ``B(x)``;
    it is evaluated lazily on every presented set.
    """
    sets = [np.atleast_2d(s) for s in context_sets]
    if not sets:
        raise ContractError(f"batch {batch}: no context sets to learn a design from")
    theta = np.asarray(getattr(theta_hat, "theta", theta_hat), dtype=float).reshape(-1)
    d = sets[0].shape[1]
    K = theta.size // d

    def scaled(i):
        return lambda arms: build_scaled_sets(arms, theta, b_values(arms), K)[i]

    comps = [DistributionalDesign(sets, epsilon, rng, None)]
    comps += [DistributionalDesign(sets, epsilon, rng, scaled(i)) for i in range(K)]
    return MixturePolicy([(c, 1.0 / (K + 1)) for c in comps])


def _draw(p: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(p)
    return min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), p.size - 1)


def sample_arm(policy, arms, rng: np.random.Generator) -> int:
    """Index of an arm drawn from ``policy`` on the presented set."""
    arms = np.atleast_2d(arms)
    if arms.shape[0] == 0:
        raise ContractError("arm set is empty")
    if isinstance(policy, MixturePolicy):
        comp = policy.components[_draw(policy.mixing_weights, rng)][0]
        return sample_arm(comp, arms, rng)
    return _draw(np.asarray(policy.weights(arms), dtype=float), rng)
