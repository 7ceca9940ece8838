"""Weighted compression of empirical measures into M atoms by MMD minimization."""

from .baselines import (
    BaselineConfig,
    dmgd_step,
    lloyd_step,
    mean_shift_step,
    mmdgf_step,
    run_baseline,
)
from .dynamics import (
    FlowState,
    NonFiniteState,
    StepUnderflow,
    Trace,
    TraceRecord,
    euler_step,
    simulate,
    wfr_rhs,
)
from .embedding import (
    EmpiricalTarget,
    MomentCache,
    SingularKernelMatrix,
    WeightedQuantization,
    build_moment_cache,
    fm,
    grad_fm,
    grad_v0,
    load_target_csv,
    mmd,
    optimal_weights,
    v0,
    v1,
    vbar0,
    vbar1,
    vhat1,
)
from .harness import ExperimentConfig, InitSpec, run_experiment
from .kernels import (
    KernelSpec,
    companion_eval,
    companion_ratio,
    kbar_matrix,
    kernel_eval,
    kernel_grad2,
    kernel_matrix,
)
from .msip import DegenerateWeight, MsipConfig, msip_map, msip_step, run_msip
from .plots import emit_plot
from .presets import PRESET_NAMES, preset
from .targets import TargetSpec, sample, spectral_benchmark

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig",
    "DegenerateWeight",
    "EmpiricalTarget",
    "ExperimentConfig",
    "FlowState",
    "InitSpec",
    "KernelSpec",
    "MomentCache",
    "MsipConfig",
    "NonFiniteState",
    "PRESET_NAMES",
    "SingularKernelMatrix",
    "StepUnderflow",
    "TargetSpec",
    "Trace",
    "TraceRecord",
    "WeightedQuantization",
    "build_moment_cache",
    "companion_eval",
    "companion_ratio",
    "dmgd_step",
    "emit_plot",
    "euler_step",
    "fm",
    "grad_fm",
    "grad_v0",
    "kbar_matrix",
    "kernel_eval",
    "kernel_grad2",
    "kernel_matrix",
    "lloyd_step",
    "load_target_csv",
    "mean_shift_step",
    "mmd",
    "mmdgf_step",
    "msip_map",
    "msip_step",
    "optimal_weights",
    "preset",
    "run_baseline",
    "run_experiment",
    "run_msip",
    "sample",
    "simulate",
    "spectral_benchmark",
    "v0",
    "v1",
    "vbar0",
    "vbar1",
    "vhat1",
    "wfr_rhs",
]
