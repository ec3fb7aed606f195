"""Model primitives: birth rates b(t) and lifetime kernels K(t, dy)."""

from .kernels import (
    Dirac,
    Exponential,
    LifetimeKernel,
    Pareto,
    TabulatedCdf,
    TwoPointDeath,
    kernel_expect,
    kernel_from_config,
    kernel_moment,
)
from .rates import (
    AsymptoticallyCritical,
    Constant,
    Periodic,
    PiecewiseConstant,
    RateFunction,
    Tabulated,
    cumulative_rate,
    rate_from_config,
)

__all__ = [
    "AsymptoticallyCritical",
    "Constant",
    "Dirac",
    "Exponential",
    "LifetimeKernel",
    "Pareto",
    "Periodic",
    "PiecewiseConstant",
    "RateFunction",
    "Tabulated",
    "TabulatedCdf",
    "TwoPointDeath",
    "cumulative_rate",
    "kernel_expect",
    "kernel_from_config",
    "kernel_moment",
    "rate_from_config",
]
