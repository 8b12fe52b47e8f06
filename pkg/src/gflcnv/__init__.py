"""Joint segmentation of multiple SNP-array signals with the generalized
fused lasso, and copy-number calling on the resulting segments."""

__version__ = "0.1.0"

from .caller import CallerConfig, CnvCall, baf_likelihood, call_segment, call_segments, lrr_loglik
from .gfl import GflSolution, PenaltyConfig, gfl_objective, snap, solve_gfl
from .oracle import OracleResult, oracle_minimize, oracle_objective
from .pipeline import PipelineConfig, run_chromosome, run_pipeline
from .segment import SegmentRow, Segmentation, ThresholdRule, merge_changepoints, segment_solution
from .signal import LocusGrid, NoiseScale, SignalMatrix, compute_mbaf, load_signals, normalize, write_signals
from .simulate import CnvSpec, evaluate_het, evaluate_per_snp, mix_contamination, simulate_normal
from .stationarity import StationarityReport, check_stationarity
from .tridiag import TridiagonalSystem, solve_tridiagonal
from .tuning import TuningInputs, compute_lambdas, estimate_sigma, predict_bias
