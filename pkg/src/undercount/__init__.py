"""Bayesian inference for underreported count data.

Reported counts are modeled as Binomial thinnings of latent Poisson
totals; the thinned likelihood collapses to Poisson(lambda * p), which
is what the sampler targets. Latent totals are recovered exactly after
the fact, one Poisson draw per record per posterior draw.
"""

from .data import Dataset, IngestError, IngestReport, SchoolYearRecord, load_csv, write_csv
from .diagnostics import batch_ess, ess, max_rhat, split_rhat, summarize
from .hmc import (ChainState, DualAveraging, HmcConfig, SampleBatch, SamplingError,
                  find_initial_step, hmc_transition, leapfrog, run_chains, sample)
from .inference import (AugmentedBatch, YearlyAggregate, augment_batch,
                        coefficient_summary, percapita_scaling, record_medians,
                        sample_unreported, yearly_aggregates, yearly_frame)
from .model import CountModel, marginal_log_pmf, predictor_matrix
from .params import ParameterLayout, Pooling
from .predictive import (ConstantZReport, HeldoutLogLik, HeldoutSplit, PpcReport,
                         PpcStat, constant_z_predictive, heldout_log_likelihood,
                         ppc_run, ppc_statistics, predictive_sample, split_heldout)
from .priors import (PriorSpec, ScenarioPreset, apply_scenario,
                     prior_incidence_quantiles, prior_reporting_quantiles)
from .synthetic import (Exchangeable, Independent, Pairwise, SimCoeffs, SimOutput,
                        SimSpec, ToyCovariateTarget, ToyData, ToyIidTarget, ToyPrior,
                        conditional_report_sd, correlated_bernoulli_sum,
                        default_benchmark, pairwise_report, recovery_regression,
                        reporting_study_from_truth, simulate_full,
                        simulate_reporting_study, toy_covariate, toy_iid)

__version__ = "0.1.0"

__all__ = [
    "AugmentedBatch", "ChainState", "ConstantZReport", "CountModel", "Dataset",
    "DualAveraging", "Exchangeable", "HeldoutLogLik", "HeldoutSplit", "HmcConfig",
    "Independent", "IngestError", "IngestReport", "Pairwise", "ParameterLayout",
    "Pooling", "PpcReport", "PpcStat", "PriorSpec", "SampleBatch", "SamplingError",
    "ScenarioPreset", "SchoolYearRecord", "SimCoeffs", "SimOutput", "SimSpec",
    "ToyCovariateTarget", "ToyData", "ToyIidTarget", "ToyPrior", "YearlyAggregate",
    "apply_scenario", "augment_batch", "batch_ess", "coefficient_summary",
    "conditional_report_sd", "constant_z_predictive", "correlated_bernoulli_sum",
    "default_benchmark", "ess", "find_initial_step", "heldout_log_likelihood",
    "hmc_transition", "leapfrog", "load_csv", "marginal_log_pmf", "max_rhat",
    "pairwise_report", "percapita_scaling", "ppc_run", "ppc_statistics",
    "predictive_sample", "predictor_matrix", "prior_incidence_quantiles",
    "prior_reporting_quantiles", "record_medians", "recovery_regression",
    "reporting_study_from_truth", "run_chains", "sample", "sample_unreported",
    "simulate_full", "simulate_reporting_study", "split_heldout", "split_rhat",
    "summarize",
    "toy_covariate", "toy_iid", "write_csv", "yearly_aggregates", "yearly_frame",
]
