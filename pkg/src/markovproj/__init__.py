"""Particle simulation and marginal-law verification for McKean-Vlasov
jump-diffusions built by inverting Markovian projections."""

__version__ = "0.1.0"

from .characteristics import (  # noqa: E402
    DifferentialCharacteristics,
    JumpKernelSpec,
    ProjectedCharacteristics,
    TestFunction,
    TruncationConfig,
    apply_generator,
    bump,
    change_truncation,
    check_growth,
    check_integrability,
)
from .estimators import (  # noqa: E402
    BinSpec,
    EstimatorConfig,
    SnapshotSlice,
    fit_binned,
    fit_jump_kernel,
    fit_kernel_regression,
    projected_characteristics,
)
from .models import LSI, LSV, LI, LV, FakeHawkes, Hawkes, StochasticFactorSpec  # noqa: E402
from .processes import simulate  # noqa: E402

__all__ = [
    "BinSpec", "DifferentialCharacteristics", "EstimatorConfig", "FakeHawkes", "Hawkes",
    "JumpKernelSpec", "LI", "LSI", "LSV", "LV", "ProjectedCharacteristics", "SnapshotSlice",
    "StochasticFactorSpec", "TestFunction", "TruncationConfig", "apply_generator", "bump",
    "change_truncation", "check_growth", "check_integrability", "fit_binned", "fit_jump_kernel",
    "fit_kernel_regression", "projected_characteristics", "simulate",
]
