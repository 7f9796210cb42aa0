"""hrvit: a dependency-light multi-branch high-resolution vision transformer.

The package provides, on top of a small dense-tensor reverse-mode autodiff
engine, every building block of a four-stage multi-branch ViT backbone
(cross-shaped window attention with key-value sharing, Kronecker-decomposed
diversity shortcuts, mixed-scale convolutional FFNs, efficient patch embeds,
cross-resolution fusion, a classification head), a topology builder for the
b1/b2/b3 model family, an exact parameter/MAC cost model with asymptotic
cross-checks, and verification suites (naive oracles, finite-difference
gradient checks, structural invariants).
"""

from .tensor import (
    ConfigError,
    GradCheckError,
    GradCheckResult,
    OpCounter,
    ShapeError,
    Tensor,
    add,
    batch_norm_inference,
    concat,
    conv2d,
    conv_output_size,
    count_ops,
    gelu,
    global_avg_pool,
    grad_check,
    hardswish,
    layer_norm,
    matmul,
    mean_,
    mul,
    narrow,
    nearest_upsample,
    no_grad,
    pad_zeros,
    relu,
    reshape,
    softmax,
    sum_,
    transpose,
)
from .init import WeightInit, checksum, splitmix64
from .blocks import (
    AttentionBlock,
    AttnConfig,
    ClassifierHead,
    DiversityShortcut,
    FusionLayer,
    FusionSpec,
    LayerCost,
    MixCfn,
    MixCfnConfig,
    PatchEmbed,
    Stem,
    balanced_factor_pair,
    des_forward,
    window_merge,
    window_partition,
    windowed_mhsa,
)
from .topology import (
    ArchConfig,
    GraphNode,
    LayerGraph,
    TOGGLES,
    VARIANT_NAMES,
    build_graph,
    build_variant,
    config_text,
    drop_path_schedule,
    load_config,
    parse_config,
    summarize,
    validate_assignment,
    variant_config_path,
)
from .cost import (
    AblationRow,
    AsymptoticCost,
    CostReport,
    CostRow,
    WindowSweep,
    ablation_report,
    ablation_table,
    asymptotic_cost,
    count_flops,
    count_params,
    count_params_traversal,
    exact_block_cost,
    flip_toggles,
    window_sweep,
)
from .checks import (
    CheckReport,
    grad_suite,
    invariant_suite,
    oracle_conv2d,
    oracle_des,
    oracle_matmul,
    oracle_suite,
    oracle_window_attention,
    run_suite,
)

__version__ = "0.1.0"

__all__ = [
    "AblationRow", "ArchConfig", "AsymptoticCost", "AttentionBlock", "AttnConfig",
    "CheckReport", "ClassifierHead", "ConfigError", "CostReport", "CostRow",
    "DiversityShortcut", "FusionLayer", "FusionSpec", "GradCheckError",
    "GradCheckResult", "GraphNode", "LayerCost", "LayerGraph", "MixCfn",
    "MixCfnConfig", "OpCounter", "PatchEmbed", "ShapeError", "Stem", "TOGGLES",
    "Tensor", "VARIANT_NAMES", "WeightInit", "WindowSweep",
    "ablation_report", "ablation_table", "add", "asymptotic_cost",
    "balanced_factor_pair", "batch_norm_inference", "build_graph",
    "build_variant", "checksum", "concat", "config_text", "conv2d",
    "conv_output_size", "count_flops", "count_ops", "count_params",
    "count_params_traversal", "des_forward", "drop_path_schedule",
    "exact_block_cost", "flip_toggles", "gelu", "global_avg_pool",
    "grad_check", "grad_suite", "hardswish", "invariant_suite", "layer_norm",
    "load_config", "matmul", "mean_", "mul", "narrow", "nearest_upsample",
    "no_grad", "oracle_conv2d", "oracle_des", "oracle_matmul", "oracle_suite",
    "oracle_window_attention", "pad_zeros", "parse_config", "relu", "reshape",
    "run_suite", "softmax", "splitmix64", "sum_", "summarize", "transpose",
    "validate_assignment", "variant_config_path", "window_merge",
    "window_partition", "window_sweep", "windowed_mhsa",
]
