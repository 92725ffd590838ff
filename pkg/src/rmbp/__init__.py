"""Reflected and randomly stopped growth processes with power-law tails.

The package simulates modulated branching and multiplicative recursions with
reflecting, absorbing, or truncating barriers, computes their tail exponents
and asymptotic constants analytically, and cross-checks both against Monte
Carlo tail estimates.
"""

from .analytics import (AlphaStar, ConstantEstimate, HeavyTrafficLaw, LadderStats,
                        PsiFunction, cycle_max_constant, estimate_ladder_stats,
                        goldie_constant_rmp, heavy_traffic_prediction,
                        mbp_implicit_constant, mg1_alpha_star, mg1_stop_constant,
                        psi_eval, psi_for, psi_iid, psi_markov, psi_model,
                        solve_alpha_star)
from .config import ExperimentConfig, parse_config
from .engine import (AbsorbingSystemSpec, CycleMaxSamples, PathConfig, TailSampleSet,
                     TrajectorySample, backward_sup, estimate_absorption_time,
                     run_absorbing_aggregate, run_cycle_max, run_mbp, run_queue,
                     run_rmbp, run_rmbp_coupled, run_rmp, run_stopped_branching,
                     run_stopped_product, sample_absorbing_aggregate,
                     sample_absorption_times, sample_backward_sup, sample_cycle_max,
                     sample_queue, sample_rmbp, sample_rmbp_shared_env_pair,
                     sample_rmp, sample_rmp_harvest, sample_stopped_branching,
                     sample_stopped_product, sample_truncated)
from .errors import (AnalysisError, ConfigError, DomainError, DriftError, EngineError,
                     NoPositiveRootError, RmbpError, SaturationError, SpecError)
from .harness import (CheckOutcome, Estimate, ExperimentResult, PresetReport,
                      RunSummary, reproduce, run_experiment)
from .rng import RngStream
from .sampling import sample_offspring_sum, sample_state_path
from .specs import (Deterministic, ExpDifference, ExponentialTail, GeneralDiscrete,
                    GeometricStop, MG1Increment, ModulatorSpec, NormalIncrement,
                    OffspringSpec, Poisson, StopSpec, TableStop, TableTail,
                    TailEquilibrium, TwoPoint, shifted_poisson)
from .taillab import (CcdfCurve, HillEstimate, LightTailProbe, PiecewiseFit, SlopeFit,
                      curve_from_csv, curve_to_csv, double_pareto_fit, empirical_ccdf,
                      hill_estimator, lighter_than_power_probe, loglog_slope,
                      plateau_median)

__version__ = "0.1.0"
