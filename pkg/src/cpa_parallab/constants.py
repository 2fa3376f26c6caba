"""Published reference values the reproduction pipelines check against.

These are the externally reported decay-law coefficients, SNR success
thresholds and CPA failure widths for the 8-bit / 32-bit PE array studied
here, together with the comparison tolerances at the two experiment
scales. They are the single source of truth for the reproduce command and
the acceptance suite.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class DecayReference:
    a: float
    b: float
    c: float
    sigma: float        # reported max standard deviation of the fit


# coefficients of rho(x) = a*exp(-b*x) + c per targeted step
DECAY_REFERENCE: dict[int, DecayReference] = {
    0: DecayReference(0.369, 0.637, 0.534, 0.011762),
    1: DecayReference(0.392, 0.450, 0.465, 0.029043),
    2: DecayReference(0.441, 0.532, 0.449, 0.022669),
    3: DecayReference(0.439, 0.456, 0.431, 0.024154),
    4: DecayReference(0.468, 0.473, 0.419, 0.022269),
    5: DecayReference(0.494, 0.511, 0.413, 0.019673),
    6: DecayReference(0.457, 0.470, 0.407, 0.026922),
    7: DecayReference(0.482, 0.507, 0.393, 0.026230),
}

# reported residual bound for the three headline fits (steps 0, 3, 7)
DECAY_SIGMA_BOUND = 0.0263

# SNR needed for a successful attack: average case and worst case over steps
SNR_SUCCESS_MEAN = 0.045
SNR_SUCCESS_WORST = 0.1

# width at which the best incorrect hypothesis first wins
CROSSING_FIRST_STEP = 10       # attacking the first multiplication
CROSSING_LATER_STEPS = 15      # attacking later MAC steps

# correlation stops decreasing beyond this many parallel PEs
SATURATION_PE_COUNT = 30

# experiment scales: runs per campaign (traces per run stays at the
# campaign default)
SCALE_RUNS = {"desk": 1000, "full": 10000}

# comparison tolerances per scale
COEFF_TOL = {"desk": 0.05, "full": 0.03}
RESIDUAL_TOL = {"desk": 0.035, "full": DECAY_SIGMA_BOUND + 0.005}
APPENDIX_COEFF_TOL = {"desk": 0.05, "full": 0.05}
APPENDIX_RESIDUAL_TOL = {"desk": DECAY_SIGMA_BOUND + 0.01, "full": DECAY_SIGMA_BOUND + 0.01}
CROSSING_TOL_FIRST = 2
CROSSING_TOL_LATER = 3
SNR_MEAN_TOL = 0.015
SNR_WORST_RANGE = (0.07, 0.15)
SATURATION_MAX_DIFF = 0.02
APPENDIX_A_POINTWISE_TOL = 0.05
SNR_VANISHING_WIDTH = 17       # total PEs past the reported vanishing point
SNR_VANISHING_BOUND = 0.05
