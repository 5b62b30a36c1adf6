"""Locally private randomizers compressed with minimal random coding."""

from .errors import InfeasibleError, LdpcError, NumericalDegeneracyError, StateSpaceTooLargeError
from .mechanisms import (
    CapMechanism,
    EstimatorScales,
    PrivUnitParams,
    SubsetParams,
    as_cap_mechanism,
    calibrate_privunit,
    calibrate_ss,
    privunit_scale,
    ss_scales,
)

__version__ = "0.1.0"

__all__ = [
    "CapMechanism",
    "EstimatorScales",
    "InfeasibleError",
    "LdpcError",
    "NumericalDegeneracyError",
    "PrivUnitParams",
    "StateSpaceTooLargeError",
    "SubsetParams",
    "as_cap_mechanism",
    "calibrate_privunit",
    "calibrate_ss",
    "privunit_scale",
    "ss_scales",
]
