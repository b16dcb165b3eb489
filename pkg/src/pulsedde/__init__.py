"""Exact solver and analysis tools for a pulse-forced relay delay equation."""
from ._accel import backend
from .bifurcation import (ExtremaRecord, SectionSpec, SweepSpec, delay_embedding,
                          poincare_section, sweep, window_structure)
from .engine import (ForcingSchedule, HistoryFunction, Trajectory, residual_check,
                     solve, zeros_between)
from .errors import (BelowThreshold, EventStall, Infeasible, InfiniteResetting,
                     NoConvergence, NonOscillatoryRegime, OutOfRange, PulseDDEError,
                     Undefined, ValidationError)
from .model import (LimitCycle, ModelParams, RawParams, denormalize_params, eval_cycle,
                    eval_unperturbed, limit_cycle, normalize_params)
from .periodic import (ForcedCycle, a1_threshold, detect_locking, forced_cycle,
                       iterate_pulse_map)
from .single_pulse import (CaseLabel, DeltaConstants, PulseResponse, case_intervals,
                           classify, delta_constants, pulse_response, response_curve,
                           unstable_cycle)
from .treatment import (BandSpec, PhysioParams, ScanResult, chemo_scan, fit_band,
                        gcsf_simulation, map_neutrophil_model, min_rest_interval)

__version__ = "0.1.0"
