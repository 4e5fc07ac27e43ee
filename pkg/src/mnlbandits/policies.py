"""Limited-adaptivity MNL bandit algorithms.

``bmnl_run`` fixes its policy-update rounds in advance (a batch schedule) and
explores with design-based policies while pruning arms with every past batch's
confidence bounds. ``rsmnl_run`` plays optimistically and refits only when the
log-determinant of its scaled Hessian has grown by ``log 2`` since the last
refit. ``baseline_per_round_run`` is the same optimistic rule refitting every
round, used as a comparator.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.linalg import solve_triangular

from .core import (ContractError, ModelParams, RewardVector, as_arm, batch_expected_reward,
                   batch_link_gradient, batch_probabilities, sample_outcome)
from .design import GOptimalPolicy, mnl_design_policy, sample_arm
from .estimation import (ConfidenceRadius, ConvergenceError, DesignMatrixV, GroupedLog, Interactions,
                         KappaEstimate, ScaledHessian, build_scaled_hessian, confidence_radius_batched,
                         confidence_radius_rs, estimate_kappa, fit_mle, lambda_preset, logdet,
                         scaling_factor, weighted_hessian)
from .trace import RegretTrace, TraceRecorder

log = logging.getLogger(__name__)

LOG2 = math.log(2.0)
RESCALE_MODES = ("at_switch", "per_round")


class RunFailure(RuntimeError):
    """An algorithm run aborted; ``diagnostics`` holds the state at the failing round."""

    def __init__(self, message, round_index, diagnostics):
        super().__init__(message)
        self.round_index = round_index
        self.diagnostics = diagnostics


@dataclass
class AlgorithmConfig:
    """Hyperparameters shared by the algorithm runners.

    ``lam`` is a preset name (``algorithm``, ``theory``, ``rs``), a positive
    number, or ``"default"``, which resolves to ``algorithm`` for the batched
    runner and ``rs`` for the rarely switching ones. ``kappa=None`` estimates
    kappa from the environment's arms with ``kappa_samples`` parameter draws.
    """

    lam: Union[str, float] = "default"
    delta: float = 0.01
    C: float = 1.0
    c_gamma: float = 1.0
    kappa: Optional[float] = None
    kappa_samples: int = 1000
    M: Optional[int] = None
    eps_design: float = 0.01
    rescale_mode: str = "at_switch"
    mle_tol: float = 1e-10
    mle_max_iters: int = 100
    record_hessians: bool = False
    switch_threshold: float = LOG2  # fault injection only; the algorithm uses log 2

    def validate(self) -> None:
        if not 0 < self.delta < 1:
            raise ContractError("delta must lie in (0, 1)")
        if self.C <= 0 or self.c_gamma <= 0:
            raise ContractError("C and c_gamma must be positive")
        if self.kappa is not None and self.kappa < 1:
            raise ContractError("kappa must be >= 1")
        if self.kappa_samples < 1:
            raise ContractError("kappa_samples must be >= 1")
        if self.M is not None and self.M < 1:
            raise ContractError("M must be >= 1")
        if not 0 < self.eps_design:
            raise ContractError("eps_design must be positive")
        if self.rescale_mode not in RESCALE_MODES:
            raise ContractError(f"rescale_mode must be one of {RESCALE_MODES}")

    def resolve_lambda(self, default: str, K, d, T, S) -> float:
        name = default if self.lam == "default" else self.lam
        return lambda_preset(name, K, d, T, S, self.delta)

    def resolve_kappa(self, env, S) -> KappaEstimate:
        if self.kappa is not None:
            return KappaEstimate(float(self.kappa), "configured")
        rng = np.random.default_rng(np.random.SeedSequence(env.spec.seed, spawn_key=(7,)))
        return estimate_kappa([env.kappa_arms()], S, env.K, env.d, self.kappa_samples, rng)


def _rho_vec(rho) -> np.ndarray:
    return rho.rho if isinstance(rho, RewardVector) else np.asarray(rho, dtype=float).reshape(-1)


def _rho_bound(rho) -> float:
    if isinstance(rho, RewardVector) and np.isfinite(rho.R):
        return float(rho.R)
    return float(np.linalg.norm(_rho_vec(rho)))


# ---------------------------------------------------------------- schedule

@dataclass(frozen=True)
class BatchSchedule:
    boundaries: tuple
    M: int
    T: int
    lengths: tuple

    def batches(self):
        """``(batch index, first round, last round)`` for every nonempty batch, 1-based."""
        start = 1
        for b, end in enumerate(self.boundaries, 1):
            yield b, start, end
            start = end + 1


def default_batches(T: int) -> int:
    return math.ceil(math.log2(math.log2(T))) + 1


def batch_schedule(T: int, M: int) -> BatchSchedule:
    if T < 2 or M < 1:
        raise ContractError("need T >= 2 and M >= 1")
    lengths, total = [], 0
    for b in range(1, M + 1):
        tau = min(math.floor(T ** (1 - 2.0 ** (-b))), T - total)
        lengths.append(tau)
        total += tau
    lengths[-1] += T - total
    bounds = tuple(int(c) for c, n in zip(np.cumsum(lengths), lengths) if n > 0)
    return BatchSchedule(bounds, M, T, tuple(lengths))


# ---------------------------------------------------------------- bonuses

def _bonus_arrays(arms, theta, chol, rho, gamma, c1, c2):
    """Mean ``rho^T z(x, theta)``, eps1 and eps2 for every row of ``arms``."""
    arms = np.atleast_2d(arms)
    n, d = arms.shape
    z, _ = batch_probabilities(arms, theta)
    K = z.shape[1]
    arho = batch_link_gradient(z) @ rho
    v = (arho[:, :, None] * arms[:, None, :]).reshape(n, K * d)
    w = solve_triangular(chol, v.T, lower=True)
    eps1 = c1 * gamma * np.sqrt(np.sum(w * w, axis=0))
    e = np.zeros((K, d, n, K))
    for k in range(K):
        e[k, :, :, k] = arms.T
    ws = solve_triangular(chol, e.reshape(K * d, n * K), lower=True).reshape(K * d, n, K)
    gram = np.einsum("pnk,pnj->nkj", ws, ws)
    eps2 = c2 * gamma ** 2 * np.linalg.eigvalsh(gram)[:, -1]
    return z @ rho, eps1, np.maximum(eps2, 0.0)


@dataclass
class BatchCheckpoint:
    theta_hat: ModelParams
    h: ScaledHessian
    v: DesignMatrixV
    gamma: ConfidenceRadius
    batch: int
    _chol: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def chol(self) -> np.ndarray:
        if self._chol is None:
            self._chol = np.linalg.cholesky(self.h.h)
        return self._chol

    def bounds(self, arms, rho):
        r = _rho_vec(rho)
        return _bonus_arrays(arms, self.theta_hat.theta, self.chol, r, float(self.gamma),
                             1.0, 3.0 * np.linalg.norm(r))


def bonus_terms(arm, checkpoint: BatchCheckpoint, rho) -> tuple[float, float]:
    _, e1, e2 = checkpoint.bounds(as_arm(arm)[None, :], rho)
    return float(e1[0]), float(e2[0])


def ucb_lcb(arm, checkpoint: BatchCheckpoint, rho) -> tuple[float, float]:
    mean, e1, e2 = checkpoint.bounds(as_arm(arm)[None, :], rho)
    w = e1[0] + e2[0]
    return float(mean[0] + w), float(mean[0] - w)


def eliminate(arms, checkpoint: BatchCheckpoint, rho) -> np.ndarray:
    """Indices (into ``arms``) of the arms whose UCB exceeds the best LCB."""
    arms = np.atleast_2d(arms)
    if arms.shape[0] == 0:
        raise ContractError("arm set is empty")
    mean, e1, e2 = checkpoint.bounds(arms, rho)
    ucb, lcb = mean + e1 + e2, mean - e1 - e2
    keep = ucb > lcb.max()
    # the max-LCB arm survives its own test even when its bonuses vanish
    keep[int(np.argmax(lcb))] = True
    return np.flatnonzero(keep)


# ---------------------------------------------------------------- batched

def _provenance(name, env, T, config, seed, **derived):
    return dict(algorithm=name, T=T, seed=seed, config=asdict(config),
                environment=dict(kind=env.kind, d=env.d, K=env.K, S=env.S, R=env.R, seed=env.spec.seed,
                                 n_arms=env.spec.n_arms),
                derived=derived)


def _seed_of(rng) -> int:
    ss = getattr(rng.bit_generator, "seed_seq", None)
    key = getattr(ss, "spawn_key", ())
    return int(key[-1]) if key else 0


def _fit(data, lam, config, theta0, K, d, t, name):
    try:
        return fit_mle(data, lam, config.mle_tol, config.mle_max_iters, K=K, d=d, theta0=theta0)
    except ConvergenceError as err:
        raise RunFailure(f"{name}: MLE did not converge at round {t}: {err}", t,
                         dict(theta=err.theta, grad_norm=err.grad_norm, iterations=err.iterations)) from err


def bmnl_run(env, T: int, M: Optional[int], rho, S: float, config: AlgorithmConfig,
             rng: np.random.Generator) -> RegretTrace:
    """Batched elimination with design-driven exploration over a fixed schedule."""
    config.validate()
    if not env.stochastic:
        raise ContractError("the batched algorithm requires a stochastic environment")
    start = time.perf_counter()
    K, d = env.K, env.d
    r = _rho_vec(rho)
    M = M or config.M or default_batches(T)
    schedule = batch_schedule(T, M)
    lam = config.resolve_lambda("algorithm", K, d, T, S)
    gamma = confidence_radius_batched(S, K, d, T, lam, config.c_gamma)
    kappa = config.resolve_kappa(env, S)

    rec = TraceRecorder(T, d)
    survived = np.ones(T, dtype=bool)
    policy = GOptimalPolicy(config.eps_design)
    checkpoints: list[BatchCheckpoint] = []
    fit_rounds, theta_norms, n_designs = [], [], 0
    current_logdet = K * d * math.log(lam)

    for b, first, last in schedule.batches():
        rounds, pruned, played, outcomes = [], [], [], []
        for t in range(first, last + 1):
            X = env.contexts(t)
            values = batch_expected_reward(X, env.theta_star, r)
            best = int(np.argmax(values))
            idx = np.arange(X.shape[0])
            for cp in checkpoints:
                idx = idx[eliminate(X[idx], cp, r)]
            survived[t - 1] = best in idx
            j = idx[sample_arm(policy, X[idx], rng)]
            y = sample_outcome(X[j], env.theta_star, rng)
            rec.record(t, j, X[j], y, values[best] - values[j], current_logdet, switch=(t == last))
            rounds.append(t)
            pruned.append(X[idx])
            played.append(X[j])
            outcomes.append(y)

        perm = rng.permutation(len(rounds))
        n_c = (len(rounds) + 1) // 2
        c_idx, d_idx = np.sort(perm[:n_c]), np.sort(perm[n_c:])
        arms_c = np.array([played[i] for i in c_idx])
        data = Interactions(arms_c, np.array([outcomes[i] for i in c_idx]), K)
        theta0 = checkpoints[-1].theta_hat.theta if checkpoints else None
        theta_hat = _fit(data, lam, config, theta0, K, d, last, "bmnl")
        v = DesignMatrixV.from_arms(arms_c, lam)
        b_c = scaling_factor(arms_c, gamma, kappa, v, S, "batched")
        h = build_scaled_hessian(data, theta_hat, lam, b_c)
        cp = BatchCheckpoint(theta_hat, h, v, gamma, b)
        checkpoints.append(cp)
        fit_rounds.append(last)
        theta_norms.append(theta_hat.norm)
        current_logdet = h.logdet()

        design_sets = [pruned[i] for i in d_idx] or [pruned[i] for i in c_idx]
        policy = mnl_design_policy(b, design_sets, theta_hat,
                                   lambda arms, v=v: scaling_factor(arms, gamma, kappa, v, S, "batched"),
                                   config.eps_design, rng)
        n_designs += 1

    diagnostics = dict(lam=lam, gamma=float(gamma), kappa=float(kappa), schedule=schedule.boundaries,
                       fit_rounds=fit_rounds, n_fits=len(fit_rounds), n_designs=n_designs,
                       theta_norms=theta_norms, optimal_survived=survived,
                       final_theta=checkpoints[-1].theta_hat.theta if checkpoints else None)
    prov = _provenance("bmnl", env, T, config, _seed_of(rng), lam=lam, gamma=float(gamma),
                       kappa=float(kappa), M=M)
    return rec.finish("bmnl", _seed_of(rng), time.perf_counter() - start, prov, diagnostics)


# ---------------------------------------------------------------- rarely switching

@dataclass
class RsState:
    h_current: ScaledHessian
    h_at_switch: ScaledHessian
    theta_hat: ModelParams
    tau: int
    history: GroupedLog
    v: DesignMatrixV
    switch_count: int = 0
    logdet_at_switch: Optional[float] = None
    threshold: float = LOG2

    def __post_init__(self):
        if self.logdet_at_switch is None:
            self.logdet_at_switch = self.h_at_switch.logdet()


def rs_bonus(arm, state: RsState, gamma, rho) -> tuple[float, float]:
    r = _rho_vec(rho)
    L = np.linalg.cholesky(state.h_current.h)
    _, e1, e2 = _bonus_arrays(as_arm(arm)[None, :], state.theta_hat.theta, L, r, float(gamma),
                              math.sqrt(2.0), 6.0 * _rho_bound(rho))
    return float(e1[0]), float(e2[0])


SWITCH_TIE_TOL = 1e-10  # log-det round-off; an exact doubling must not fire


def rs_should_switch(state: RsState) -> bool:
    return state.h_current.logdet() - state.logdet_at_switch > state.threshold + SWITCH_TIE_TOL


def switch_bound(d, K, lam, t) -> float:
    if min(d, K, lam) <= 0 or t < 0:
        raise ContractError("switch_bound needs positive d, K, lambda and t >= 0")
    return K * d * math.log2(1 + t / (lam * d))


def _rs_loop(name, env, T, rho, S, delta, config: AlgorithmConfig, rng, force_switch: bool) -> RegretTrace:
    config.validate()
    start = time.perf_counter()
    K, d = env.K, env.d
    r = _rho_vec(rho)
    R = _rho_bound(rho)
    cfg_delta = delta if delta is not None else config.delta
    lam = config.resolve_lambda("rs", K, d, T, S)
    gamma = confidence_radius_rs(S, K, d, T, cfg_delta, config.C, config.c_gamma)
    g = float(gamma)
    kappa = config.resolve_kappa(env, S)
    per_round = config.rescale_mode == "per_round"

    h0 = ScaledHessian(lam * np.eye(K * d), lam, "proxy")
    state = RsState(h0, h0, ModelParams(np.zeros(K * d), K, d), 1, GroupedLog(K, d),
                    DesignMatrixV.initial(d, lam), threshold=config.switch_threshold)
    inv_b = np.zeros(0)  # per unique arm: sum of 1/B_s (per_round mode)
    v_tau = state.v.copy()
    h = h0.h.copy()
    rec = TraceRecorder(T, d)
    switch_rounds, theta_norms, hessians = [], [], {}
    c1, c2 = math.sqrt(2.0), 6.0 * R

    for t in range(1, T + 1):
        state.h_current = ScaledHessian(h, lam, "proxy")
        switch = force_switch or rs_should_switch(state)
        if switch:
            data = state.history.data()
            theta = state.theta_hat.theta
            if data.arms.shape[0]:
                theta = _fit(data, lam, config, theta, K, d, t, name).theta
            state.theta_hat = ModelParams(theta, K, d)
            v_tau = state.v.copy()
            if per_round:
                w = inv_b
            elif data.arms.shape[0]:
                w = data.n / scaling_factor(data.arms, gamma, kappa, v_tau, S, "rs")
            else:
                w = np.zeros(0)
            h = weighted_hessian(theta, data.arms, w, lam)
            state.h_current = state.h_at_switch = ScaledHessian(h, lam, "proxy")
            state.logdet_at_switch = state.h_at_switch.logdet()
            state.tau = t
            state.switch_count += 1
            switch_rounds.append(t)
            theta_norms.append(state.theta_hat.norm)
            if config.record_hessians:
                hessians[t] = h.copy()

        X = env.contexts(t)
        L = np.linalg.cholesky(h)
        mean, e1, e2 = _bonus_arrays(X, state.theta_hat.theta, L, r, g, c1, c2)
        j = int(np.argmax(mean + e1 + e2))
        x = X[j]
        values = batch_expected_reward(X, env.theta_star, r)
        y = sample_outcome(x, env.theta_star, rng)
        rec.record(t, j, x, y, values.max() - values[j], 2.0 * float(np.sum(np.log(np.diag(L)))), switch)

        b_t = scaling_factor(x, gamma, kappa, state.v if per_round else v_tau, S, "rs")
        state.v.add(x)
        u = state.history.add(x, y)
        if u >= inv_b.size:
            inv_b = np.append(inv_b, 0.0)
        inv_b[u] += 1.0 / b_t
        z, _ = batch_probabilities(x[None, :], state.theta_hat.theta)
        h = h + np.kron(batch_link_gradient(z)[0] / b_t, np.outer(x, x))

    diagnostics = dict(lam=lam, gamma=g, kappa=float(kappa), switch_rounds=switch_rounds,
                       theta_norms=theta_norms, final_theta=state.theta_hat.theta.copy(), final_h=h,
                       switch_hessians=hessians)
    prov = _provenance(name, env, T, config, _seed_of(rng), lam=lam, gamma=g, kappa=float(kappa),
                       delta=cfg_delta)
    return rec.finish(name, _seed_of(rng), time.perf_counter() - start, prov, diagnostics)


def rsmnl_run(env, T: int, rho, S: float, delta: Optional[float], config: AlgorithmConfig,
              rng: np.random.Generator) -> RegretTrace:
    """Optimistic arm choice with refits only when ``det H`` has doubled since the last refit."""
    return _rs_loop("rsmnl", env, T, rho, S, delta, config, rng, force_switch=False)


def baseline_per_round_run(env, T: int, rho, S: float, delta: Optional[float], config: AlgorithmConfig,
                           rng: np.random.Generator) -> RegretTrace:
    return _rs_loop("baseline", env, T, rho, S, delta, config, rng, force_switch=True)
