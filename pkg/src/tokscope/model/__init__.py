from .estimator import TransformerLM
from .ssm import SSMParams, ssm_generate, ssm_next_distribution, ssm_provider, ssm_states
from .training import (ExactProblem, TrainResult, cross_entropy_loss, exact_objective,
                       project_tangent, train)
from .transformer import (Generation, TransformerParams, attention_provider, attention_weights,
                          generate, next_token_distribution, next_token_distribution_batch,
                          next_token_logits, tvvar_next)

__all__ = [
    "TransformerLM", "SSMParams", "ssm_generate", "ssm_next_distribution", "ssm_provider", "ssm_states",
    "ExactProblem", "TrainResult", "cross_entropy_loss", "exact_objective", "project_tangent",
    "train", "Generation", "TransformerParams", "attention_provider", "attention_weights",
    "generate", "next_token_distribution", "next_token_distribution_batch", "next_token_logits",
    "tvvar_next",
]
