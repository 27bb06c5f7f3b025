"""Bayesian softmax-gated mixtures of Gaussian experts."""

__version__ = "0.1.0"

from .experts import CONSTANT, LINEAR, SIGMOID, ExpertFamily, expert_mean, get_family
from .model import (DEFAULT_BOUNDS, BoundsWarning, DimensionError, ExpertComponent, MixingMeasure, ParamBounds,
                    conditional_density, gate_weights, joint_density, log_conditional_density, log_likelihood,
                    normalize_gating, pack, translate_gating, unpack)
from .data import ConfigurationError, Dataset, DgpSpec, empty_dataset, sample_dgp, sample_smoge
from .divergences import DivergenceEstimate, hellinger_sq_mc, kl_mc, l1_norm_mc
from .voronoi import VoronoiAssignment, VoronoiLossReport, loss_l1, loss_l2, voronoi_cells
from .identifiability import (Assumption4Report, RankTestReport, UnsupportedOrderError, check_assumption4,
                              strong_identifiability_test)
from .vi import (FitAborted, FitConfig, FitResult, PriorConfig, VariationalState, elbo_estimate, elbo_gradient,
                 fit, log_joint)
from .selection import SelectionConfig, SelectionResult, emit_table, run_figure1_sweep, run_selection
from .contraction import (EstimatorConfig, MHResult, RateResult, RateSchedule, align_gating,
                          hellinger_voronoi_ratio_scan, mh_sample, point_estimate, rate_experiment)
from .files import RunManifest, read_measure, write_measure
