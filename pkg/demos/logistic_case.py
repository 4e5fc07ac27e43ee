"""With one outcome the MNL model is a sigmoid; this checks that and runs a short bandit."""
import numpy as np

from mnlbandits import probabilities
from mnlbandits.harness import experiment_spec, make_environment, run_experiment
from mnlbandits.harness.experiments import RS_PRESET

env = make_environment(experiment_spec(1, seed=0))
gap = max(abs(probabilities(x, env.theta_star).z[0] - 1 / (1 + np.exp(-x @ env.theta_star.theta)))
          for x in env.pool)
print(f"max |softmax - sigmoid| over the pool: {gap:.1e}")

for T in (500, 2000):
    traces = run_experiment("rsmnl", experiment_spec(1, seed=0), T, RS_PRESET, 3)
    per_round = np.mean([t.total_regret for t in traces]) / T
    print(f"T={T}: average regret per round {per_round:.4f}")
