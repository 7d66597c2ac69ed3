"""Renyi-DP accounting for Propose-Test-Release and a trimmed-mean DP-SGD simulator."""

__version__ = "0.1.0"

from .errors import (
    BoundNotApplicableError,
    ConfigurationError,
    DomainError,
    ParameterError,
    PtrAccountantError,
    QuadratureError,
    UnsupportedAuditError,
)
from .ptr import AdjacentPair, Branch, PtrConfig, empirical_renyi_moment, run_ptr
from .rdp import (
    DEFAULT_ALPHAS,
    DpGuarantee,
    RdpCurve,
    compose,
    optimal_delta0,
    ptr_direct_dp,
    ptr_rdp,
    rdp_to_dp,
    strong_composition,
)
from .subsampling import (
    SubsampleParams,
    blackbox_subsampled_rdp,
    check_conditions,
    subsampled_ptr_rdp,
    subsampled_rdp_lower_bound,
)
from .trimmed_sum import GradientBatch, SensitivityProfile, clip, safety_margin, tsum
