"""Judge-aware ranking from multi-judge pairwise comparisons."""

from .data import (AggregatedCounts, ComparisonRecord, DropStats, GraphReport, IdMap, aggregate,
                   check_connectivity, kfold_records, parse_records, split_records, write_records)
from .decomposition import (HjaParams, check_constraints, compose, decompose, max_rank, reanchor,
                            random_canonical)
from .exceptions import (AmbiguousRank, ChartError, ConnectivityError, DegenerateConsensus,
                         FormatError, HjaError, InsufficientNearTiePairs, RankTooLarge,
                         ReanchorFailed, SelectionError, SingularInformation, SolverStalled,
                         ValidationError)
from .inference import (FisherInfo, Interval, TangentBasis, TargetSpec, WaldInference,
                        fisher_info, leverage_diagnostics, tangent_basis, target_ci)
from .kernels import BACKEND
from .likelihood import linear_predictor, linear_predictor_gradient, nll, nll_gradient, predict_prob
from .selection import RankSelection, bic, effective_dof, select_rank, spectral_scree
from .solver import FitResult, SolverConfig, fit, fit_baseline, fit_pooled_btl, initialize

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
