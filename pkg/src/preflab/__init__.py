"""Preference learning from triplets: Bradley-Terry fitting, representability and connectivity tools."""
from .connectivity import ConnEstimate, GDAConfig, TestDistributionQ, VariationalConfig, linear_connectivity, \
    optimize_negative_for_connectivity, paired_variance, tabular_connectivity, variational_connectivity
from .core import Cprd, ComparisonDistribution, ItemSet, TabularTripletDistribution, Triplet, TripletDataset, \
    comparison_distribution, cprd_from_counts, cprd_from_distribution, empirical_distribution
from .design import alpha_negative, bt_consistent_pair, rank_normalize, sample_triplets, scale_score, \
    uniform_negative
from .errors import *  # noqa: F401,F403
from .evaluation import accuracy, accuracy_lower_bound, bottom_fraction_accuracy, estimation_error, \
    margin_histogram, misspecification_error
from .experiments import ExperimentConfig, RunRecord, gen_ground_truth, run_alpha_sweep, run_conn_optimize, \
    run_experiment, run_margin_experiment
from .representability import ConditionalPair, RepresentabilityVerdict, check_bt_representable, ci_factorize, \
    implied_score, product_distribution
from .scorers import ScoreModel, init_model, pairwise_margin, score, score_gradient
from .training import TrainConfig, TrainResult, bt_empirical_loss, bt_population_loss, generative_recovered_cprd, \
    kl_decomposition, train_bt

__version__ = "0.1.0"
