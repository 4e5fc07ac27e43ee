"""Desk-scale invariant checks, grouped by module, for the ``verify`` subcommand."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .core import (ModelParams, batch_link_gradient, batch_probabilities, expected_reward, kron,
                   link_gradient, probabilities)
from .design import DistributionalDesign, GOptimalPolicy, build_scaled_sets, g_optimal
from .estimation import (ConfidenceRadius, DesignMatrixV, Interactions, ScaledHessian, estimate_kappa,
                         fit_mle, mle_residual, nll_gradient, nll_hessian, nll_loss, scaling_factor)
from .harness.environments import EnvironmentSpec, make_environment
from .policies import (LOG2, AlgorithmConfig, BatchCheckpoint, batch_schedule, bmnl_run, eliminate,
                       rsmnl_run, switch_bound)

SUITES = ("core", "estimation", "design", "policies", "all")


@dataclass
class Check:
    suite: str
    name: str
    tolerance: float
    observed: float
    passed: bool


def _unit(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True) * rng.uniform(0.2, 1.0, (n, 1))


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def _instance(rng, K=None, d=None, n=None):
    K = K or int(rng.integers(1, 4))
    d = d or int(rng.integers(1, 6))
    n = n or int(rng.integers(5, 60))
    arms = _unit(rng, n, d)
    theta = rng.normal(size=K * d)
    theta *= rng.uniform(0.5, 2.0) / np.linalg.norm(theta)
    z, z0 = batch_probabilities(arms, theta)
    p = np.hstack([z0[:, None], z])
    y = np.array([rng.choice(K + 1, p=row) for row in p])
    return K, d, arms, theta, Interactions(arms, y, K)


def core_checks(rng) -> list[Check]:
    out = []
    worst_sum, worst_jac, worst_kron = 0.0, 0.0, 0.0
    for _ in range(30):
        K, d, arms, theta, _ = _instance(rng)
        z, z0 = batch_probabilities(arms, theta)
        worst_sum = max(worst_sum, float(np.max(np.abs(z.sum(1) + z0 - 1))))
        x = arms[0]
        h = 1e-6
        num = np.zeros((K, K))
        for k in range(K):
            tp = theta.reshape(K, d).copy()
            tm = tp.copy()
            # perturb the k-th linear predictor along x / |x|^2
            tp[k] += h * x / (x @ x)
            tm[k] -= h * x / (x @ x)
            num[:, k] = (probabilities(x, tp.ravel()).z - probabilities(x, tm.ravel()).z) / (2 * h)
        worst_jac = max(worst_jac, _rel(num, link_gradient(x, theta)))
        a, b, c, dd = (rng.normal(size=(2, 3)), rng.normal(size=(2, 2)), rng.normal(size=(3, 2)),
                       rng.normal(size=(2, 3)))
        worst_kron = max(worst_kron, float(np.max(np.abs(kron(a, b) @ kron(c, dd) - kron(a @ c, b @ dd)))))
    out.append(Check("core", "probabilities sum to one", 1e-12, worst_sum, worst_sum <= 1e-12))
    out.append(Check("core", "link gradient vs finite differences", 1e-5, worst_jac, worst_jac <= 1e-5))
    out.append(Check("core", "Kronecker mixed-product identity", 1e-12, worst_kron, worst_kron <= 1e-12))
    rho = np.abs(rng.normal(size=3))
    x = _unit(rng, 1, 4)[0]
    val = expected_reward(x, rng.normal(size=12), rho)
    slack = float(np.linalg.norm(rho) - val)
    out.append(Check("core", "expected reward bounded by ||rho||", 0.0, slack, 0 <= val and slack >= 0))
    return out


def estimation_checks(rng) -> list[Check]:
    g_err = h_err = res = 0.0
    for _ in range(20):
        K, d, arms, theta, data = _instance(rng)
        lam = float(rng.uniform(0.1, 5))
        eps = 1e-5
        num = np.array([(nll_loss(theta + eps * e, data, lam) - nll_loss(theta - eps * e, data, lam)) / (2 * eps)
                        for e in np.eye(K * d)])
        g_err = max(g_err, _rel(num, nll_gradient(theta, data, lam)))
        numh = np.array([(nll_gradient(theta + eps * e, data, lam) - nll_gradient(theta - eps * e, data, lam))
                         / (2 * eps) for e in np.eye(K * d)])
        h_err = max(h_err, _rel(numh, nll_hessian(theta, data, lam)))
        fit = fit_mle(data, lam)
        res = max(res, mle_residual(fit, data, lam))
    v = DesignMatrixV.from_arms(_unit(rng, 30, 3), 1.0)
    b = scaling_factor(_unit(rng, 50, 3), 3.0, 10.0, v, 2.0)
    cap = math.exp(math.sqrt(6) * 4.0)
    b_ok = float(np.min(b)) >= 1 and float(np.max(b)) <= cap * (1 + 1e-12)
    kap = float(estimate_kappa([_unit(rng, 10, 3)], 2.0, 3, 3, 50, rng))
    return [
        Check("estimation", "gradient vs finite differences", 1e-5, g_err, g_err <= 1e-5),
        Check("estimation", "Hessian vs finite differences", 1e-4, h_err, h_err <= 1e-4),
        Check("estimation", "MLE first-order residual", 1e-8, res, res <= 1e-8),
        Check("estimation", "scaling factor within [1, exp(2 sqrt6 S)]", 0.0, float(np.max(b)), b_ok),
        Check("estimation", "kappa estimate >= 1", 1.0, kap, kap >= 1.0),
    ]


def design_checks(rng) -> list[Check]:
    worst = 0.0
    for _ in range(20):
        worst = max(worst, g_optimal(_unit(rng, 10, 3), 0.01, 1000).certificate)
    dec = 0.0
    for _ in range(20):
        K = int(rng.integers(1, 4))
        d = int(rng.integers(1, 5))
        x = _unit(rng, 1, d)
        theta = rng.normal(size=K * d)
        bval = float(rng.uniform(1, 20))
        sets = build_scaled_sets(x, theta, np.array([bval]), K)
        lhs = sum(np.outer(sets[i, 0], sets[i, 0]) for i in range(K))
        z, _ = batch_probabilities(x, theta)
        rhs = kron(batch_link_gradient(z)[0] / bval, np.outer(x[0], x[0]))
        dec = max(dec, float(np.max(np.abs(lhs - rhs))))
    samples = [_unit(rng, 8, 3) for _ in range(5)]
    dd = DistributionalDesign(samples, 0.01, rng)
    g = GOptimalPolicy(0.01)
    ratio = min(float(np.min(dd.weights(s)[g.weights(s) > 0] / g.weights(s)[g.weights(s) > 0])) for s in samples)
    return [
        Check("design", "G-optimal certificate (d=3, eps=0.01)", 3.03, worst, worst <= 3.03),
        Check("design", "scaled-set decomposition", 1e-12, dec, dec <= 1e-12),
        Check("design", "distributional design >= half G-optimal", 0.5, ratio, ratio >= 0.5 - 1e-12),
    ]


def policy_checks(rng, switch_threshold: float = LOG2) -> list[Check]:
    out = []
    bad = 0
    for T in (2, 3, 10, 100, 1000, 4500, 10 ** 5):
        for M in range(1, 7):
            s = batch_schedule(T, M)
            b = np.array(s.boundaries)
            bad += int(b[-1] != T or np.any(np.diff(b) <= 0))
    out.append(Check("policies", "batch schedule ends at T, strictly increasing", 0, bad, bad == 0))

    spec = EnvironmentSpec(d=3, K=3, n_arms=10, S=2.0, R=2.0, seed=int(rng.integers(1000)))
    env = make_environment(spec)
    cfg = AlgorithmConfig(c_gamma=0.01, lam=1.0, kappa=1.0, switch_threshold=switch_threshold)
    seed = int(rng.integers(2 ** 31))
    tr = rsmnl_run(env, 600, env.rho, env.S, None, cfg, np.random.default_rng(seed))
    lam = tr.diagnostics["lam"]
    t = np.arange(1, tr.T + 1)
    margin = float(np.min(np.array([switch_bound(3, 3, lam, k) for k in t]) - tr.cum_switches))
    out.append(Check("policies", "switch count <= Kd log2(1 + t/(lam d))", 0.0, margin, margin >= 0))
    last = np.maximum.accumulate(np.where(tr.is_switch, np.arange(tr.T), 0))
    drift = float(np.max(tr.logdet_h - tr.logdet_h[last]))
    out.append(Check("policies", "logdet drift between switches <= log 2", LOG2, drift, drift <= LOG2 + 1e-9))
    lam_v = max(1.0, lam)
    v = lam_v * np.eye(3)
    pot = 0.0
    worst = np.inf
    for k, x in enumerate(tr.arms_played, 1):
        pot += float(x @ np.linalg.solve(v, x))
        v += np.outer(x, x)
        worst = min(worst, 2 * 3 * math.log(1 + k / (lam_v * 3)) - pot)
    out.append(Check("policies", "elliptical potential bound", 0.0, worst, worst >= 0))
    tr2 = rsmnl_run(env, 600, env.rho, env.S, None, cfg, np.random.default_rng(seed))
    same = np.array_equal(tr.arm_index, tr2.arm_index) and np.array_equal(tr.inst_regret, tr2.inst_regret)
    out.append(Check("policies", "determinism under a fixed seed", 0, 0 if same else 1, same))

    btr = bmnl_run(env, 300, 3, env.rho, env.S, AlgorithmConfig(), np.random.default_rng(seed))
    fits = btr.diagnostics["n_fits"]
    want = len(batch_schedule(300, 3).boundaries)
    ok = fits == want and list(btr.diagnostics["fit_rounds"]) == list(batch_schedule(300, 3).boundaries)
    out.append(Check("policies", "batched fits at schedule boundaries", want, fits, ok))
    cp = BatchCheckpoint(ModelParams(rng.normal(size=9), 3, 3),
                         *_checkpoint_parts(rng), batch=1)
    empty = min(eliminate(_unit(rng, int(rng.integers(1, 12)), 3), cp, env.rho).size for _ in range(20))
    out.append(Check("policies", "elimination never empty", 1, empty, empty >= 1))
    return out


def _checkpoint_parts(rng):
    h = rng.normal(size=(9, 9))
    return (ScaledHessian(h @ h.T + np.eye(9), 1.0, "proxy"), DesignMatrixV.initial(3, 1.0),
            ConfidenceRadius(0.5, "batched", {}))


SUITE_FUNCS: dict[str, Callable] = dict(core=core_checks, estimation=estimation_checks,
                                        design=design_checks, policies=policy_checks)


def run_suite(name: str, seed: int = 0, switch_threshold: float = LOG2) -> list[Check]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
    names = list(SUITE_FUNCS) if name == "all" else [name]
    checks = []
    for n in names:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(SUITES.index(n),)))
        if n == "policies":
            checks += policy_checks(rng, switch_threshold)
        else:
            checks += SUITE_FUNCS[n](rng)
    return checks


def report(checks: list[Check]) -> dict:
    return dict(passed=all(c.passed for c in checks),
                checks=[{k: (float(v) if isinstance(v, (np.floating, np.integer)) else v)
                         for k, v in asdict(c).items()} for c in checks])
