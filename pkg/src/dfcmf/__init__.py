"""Divide-Factor-Combine parallel matrix factorization."""

from .dfc import DfcConfig, DfcReport, dfc_nys, dfc_proj, dfc_rp, median_rank, part_mf, recommend_sampling, run_dfc
from .diagnostics import CoherenceProfile, coherence_profile, mu0, mu1, spikiness
from .matio import LowRankEstimate, ObservedMatrix, SvdFactors, densify, load_triplets, materialize, save_triplets
from .sampling import PartitionPlan, SeededRng, extract_columns, extract_rows, partition_columns, sample_without_replacement
from .sketch import RankTolerance, RpParams, average_estimates, column_project, gen_nystrom, pinv, random_project, truncated_svd
from .solvers import ApgConfig, OutlierEstimate, SolveReport, apg_mc, apg_rmf, soft_threshold, svt

__version__ = "0.1.0"
