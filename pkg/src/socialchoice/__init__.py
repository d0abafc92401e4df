"""Graph-regularized discrete choice models on social graphs."""

from .admm import ADMMResult, ADMMState, SolverConfig, admm_fit, weighted_objective
from .baselines import LatentClassModel, LogisticModel, fit_latent_class, fit_logistic, predict_baseline
from .graph_model import (
    Dataset,
    Hyperparams,
    LCGRParams,
    LLGRParams,
    SocialGraph,
    choice_probability,
    load_dataset,
    load_graph,
)
from .mcem import MCEMConfig, MCEMResult, PosteriorEstimates, e_step, expected_nll, m_step, mcem_fit, predict
from .mrf_gibbs import MRFSpec, partition_blocks, sample_prior, sample_prior_blocked

__version__ = "0.1.0"
