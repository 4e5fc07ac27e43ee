"""Limited-adaptivity contextual bandits under the multinomial logit model."""
from .core import (ContractError, ModelParams, OutcomeProbabilities, RewardVector, expected_reward,
                   kron, link_gradient, probabilities, response_indicator, sample_outcome)

__version__ = "0.1.0"
