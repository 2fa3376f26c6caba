"""cpa-parallab: how parallel MAC arrays degrade correlation power analysis.

A simulation and analysis laboratory for PE (multiply-accumulate) arrays:
HW/HD register leakage models, reproducible trace campaigns with a binary
trace format, CPA weight-recovery attacks, SNR and cross-PE dependence
metrics, and exponential decay-law fitting of the correct-hypothesis
correlation as array width grows.
"""

from .constants import DECAY_REFERENCE, SNR_SUCCESS_MEAN, SNR_SUCCESS_WORST
from .cpa import (CorrelationResult, HypothesisSpace, SuccessCurves, attack,
                  candidate_index, candidate_weights, hypothesize_leakage, pearson,
                  success_curve, trace_count_progression)
from .errors import (DimensionError, FitConvergenceError, FitDegenerateError,
                     HypothesisCapacityError, OperandRangeError, ParallabError,
                     TraceFormatError, TraceTruncationError,
                     UndefinedCorrelationError, UnusableForCpaError)
from .experiments import SweepResult, parallelism_sweep
from .fitting import DecayFit, evaluate_decay, fit_all_taus, fit_decay
from .leakage import (ArrayConfig, PEState, array_power, chain_leakage,
                      hamming_distance, hamming_weight, mac_chain_patterns, pe_step)
from .metrics import (CrossingPoint, CrossPeDependence, SnrCorrelation, SnrPoint,
                      correlation_vs_snr, cross_pe_dependence, crossing_point,
                      snr_curve)
from .repro import FigureReport, reproduce
from .tracegen import (SimulationRun, TraceCampaign, WeightDistribution,
                       derive_run_seed, generate_campaign, generate_run,
                       import_external_traces, load_campaign, sample_weights,
                       save_campaign)

__version__ = "0.1.0"

__all__ = [
    "ArrayConfig", "PEState", "hamming_weight", "hamming_distance", "pe_step",
    "array_power", "mac_chain_patterns", "chain_leakage",
    "WeightDistribution", "SimulationRun", "TraceCampaign", "sample_weights",
    "generate_run", "generate_campaign", "save_campaign", "load_campaign",
    "import_external_traces", "derive_run_seed",
    "HypothesisSpace", "CorrelationResult", "SuccessCurves", "hypothesize_leakage",
    "pearson", "attack", "success_curve", "trace_count_progression",
    "candidate_index", "candidate_weights",
    "SnrPoint", "CrossingPoint", "CrossPeDependence", "SnrCorrelation",
    "snr_curve", "cross_pe_dependence", "crossing_point", "correlation_vs_snr",
    "DecayFit", "fit_decay", "evaluate_decay", "fit_all_taus",
    "SweepResult", "parallelism_sweep",
    "FigureReport", "reproduce",
    "DECAY_REFERENCE", "SNR_SUCCESS_MEAN", "SNR_SUCCESS_WORST",
    "ParallabError", "OperandRangeError", "UndefinedCorrelationError",
    "HypothesisCapacityError", "TraceFormatError", "TraceTruncationError",
    "DimensionError", "UnusableForCpaError", "FitDegenerateError",
    "FitConvergenceError",
]
