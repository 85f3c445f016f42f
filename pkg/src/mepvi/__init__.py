"""MaxEnt pursuit variational inference: greedy Gaussian-mixture posteriors."""

from .pursuit import PursuitConfig, PursuitTrace, fit_component, run_pursuit
from .targets import TargetModel, build_target
from .variational import GaussianComponent, MixtureApprox

__all__ = [
    "GaussianComponent",
    "MixtureApprox",
    "PursuitConfig",
    "PursuitTrace",
    "TargetModel",
    "build_target",
    "fit_component",
    "run_pursuit",
]
