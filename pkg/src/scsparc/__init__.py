"""Spatially coupled sparse regression codes: base matrices, state evolution,
V-power allocation, rate/power functions and an AMP simulator."""

from .base_matrix import (
    BaseMatrix,
    ColumnProfile,
    CouplingContext,
    average_power,
    from_profile,
    make_upa,
    to_profile,
    validate,
)
from .codec import (
    DesignKind,
    Message,
    SparcDims,
    amp_decode,
    awgn,
    encode,
    make_operator,
    sample_message,
)
from .exceptions import (
    AsymmetricProfile,
    AsymmetricTrajectory,
    BandViolation,
    ConfigError,
    DimensionMismatch,
    IndexOutOfRange,
    NumericalDivergence,
    PowerMismatch,
    RateInfeasible,
    ScSparcError,
)
from .metrics import (
    Policy,
    PrfResult,
    capacity_and_bound,
    oracle_prf,
    prf_upa,
    prf_vpa,
    rate_ceilings,
    rpf_upa,
    rpf_vpa,
)
from .state_evolution import SeTrajectory, se_run, se_step, wave_summary
from .vpa import FailureKind, VpaInput, VpaOutcome, ft_derivative, ft_value, run_vpa

__version__ = "0.1.0"
