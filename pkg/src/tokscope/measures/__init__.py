from .directed import (backward_directed_information, backward_directed_information_joint,
                       conditional_mutual_information, directed_information,
                       directed_information_terms, expected_information_density,
                       information_density, mutual_information, step_densities)
from .dv import DVEstimator, dv_estimate
from .ensemble import SequenceEnsemble, build_ensemble, ensemble_from_conditional
from .flow import (FlowTrace, freedman_bound, freedman_check, optional_stopping_check,
                   semantic_flow, submartingale_check)

__all__ = [
    "backward_directed_information", "backward_directed_information_joint",
    "conditional_mutual_information", "directed_information", "directed_information_terms",
    "expected_information_density", "information_density", "mutual_information",
    "step_densities", "DVEstimator", "dv_estimate", "SequenceEnsemble", "build_ensemble",
    "ensemble_from_conditional", "FlowTrace", "freedman_bound", "freedman_check",
    "optional_stopping_check", "semantic_flow", "submartingale_check",
]
