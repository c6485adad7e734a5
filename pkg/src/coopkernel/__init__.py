"""Collaborative pure exploration in kernel bandits."""

from .algorithms import (
    CoopKernelFB,
    CoopKernelFC,
    FBConfig,
    FCConfig,
    ablation_individual_allocation,
    baseline_independent_fb,
    baseline_independent_fc,
    baseline_uniform_fb,
    coop_kernel_fb,
    coop_kernel_fc,
)
from .design import SolverOptions, solve_min_max
from .kernel import KernelSpec, TaskedArm, make_arms
from .protocol import InstanceConfig, ProblemInstance, RunReport, generate_instance

__version__ = "0.1.0"

__all__ = [
    "CoopKernelFB", "CoopKernelFC", "FBConfig", "FCConfig", "InstanceConfig", "KernelSpec",
    "ProblemInstance", "RunReport", "SolverOptions", "TaskedArm", "ablation_individual_allocation",
    "baseline_independent_fb", "baseline_independent_fc", "baseline_uniform_fb",
    "coop_kernel_fb", "coop_kernel_fc", "generate_instance", "make_arms", "solve_min_max",
]
