from .bound import BoundResult, bound_resamples, generalization_bound
from .capacity import (CapacityResult, alternating_capacity, capacity_problem, grid_capacity,
                       information, semantic_capacity)
from .elbo import ELBOResult, InferenceTable, elbo_inference, elbo_training, position_posterior
from .embedding import Encoder, EncoderFamily, EmbeddingResult, embedding_bruteforce, embedding_objective
from .fisher import (ContextDistribution, FisherResult, fisher_from_cross_entropy, fisher_matrix,
                     parameter_subset, score_outer_product)
from .sweeps import (RewardFunction, SweepConfig, SweepPoint, SweepResult, constant_reward,
                     mean_kl, no_token_reward, pareto_front, rd_sweep, reward_monotone_in_lambda,
                     rr_sweep, verify_theorem1)

__all__ = [
    "BoundResult", "bound_resamples", "generalization_bound",
    "CapacityResult", "alternating_capacity", "capacity_problem", "grid_capacity", "information",
    "semantic_capacity",
    "ELBOResult", "InferenceTable", "elbo_inference", "elbo_training", "position_posterior",
    "Encoder", "EncoderFamily", "EmbeddingResult", "embedding_bruteforce", "embedding_objective",
    "ContextDistribution", "FisherResult", "fisher_from_cross_entropy", "fisher_matrix",
    "parameter_subset", "score_outer_product",
    "RewardFunction", "SweepConfig", "SweepPoint", "SweepResult", "constant_reward", "mean_kl",
    "no_token_reward", "pareto_front", "rd_sweep", "reward_monotone_in_lambda", "rr_sweep",
    "verify_theorem1",
]
