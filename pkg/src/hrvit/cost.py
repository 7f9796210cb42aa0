"""Cost model: exact per-node parameter / MAC accounting plus the
asymptotic per-branch formulas, ablation deltas, and window sweeps.

Headline "flops" figures throughout count multiply-accumulate operations
(one MAC = one multiply + one add); elementwise work is tallied separately
and reported for context only.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .tensor import ConfigError
from .topology import ArchConfig, GraphNode, LayerGraph, TOGGLES, build_graph

CONVENTION = "macs"


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class CostRow:
    node_id: str
    kind: str
    stage: int | None
    module: int | None
    branch: int | None
    params: int
    macs: int
    eltwise: int


@dataclass
class CostReport:
    rows: list[CostRow]
    convention: str = CONVENTION
    input_resolution: tuple[int, int] | None = None

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total_eltwise(self) -> int:
        return sum(r.eltwise for r in self.rows)

    def rows_by_kind(self, kind: str) -> list[CostRow]:
        return [r for r in self.rows if r.kind == kind]

    def to_tsv(self) -> str:
        def cell(v) -> str:
            return "-" if v is None else str(v)

        lines = ["node_id\tkind\tbranch\tstage\tmodule\tparams\tflops"]
        for r in self.rows:
            lines.append("\t".join([
                r.node_id, r.kind, cell(r.branch), cell(r.stage), cell(r.module),
                str(r.params), str(r.macs),
            ]))
        lines.append("\t".join([
            "TOTAL", "-", "-", "-", "-", str(self.total_params), str(self.total_macs),
        ]))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "convention": self.convention,
            "input_resolution": list(self.input_resolution) if self.input_resolution else None,
            "rows": [
                {
                    "node_id": r.node_id,
                    "kind": r.kind,
                    "branch": r.branch,
                    "stage": r.stage,
                    "module": r.module,
                    "params": r.params,
                    "flops": r.macs,
                    "eltwise": r.eltwise,
                }
                for r in self.rows
            ],
            "totals": {
                "params": self.total_params,
                "flops": self.total_macs,
                "eltwise": self.total_eltwise,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


# ---------------------------------------------------------------------------
# exact counting
# ---------------------------------------------------------------------------


def _traversal_count(node: GraphNode) -> int:
    return sum(t.data.size for _, t in node.layer.named_weights())


def _check_node_params(node: GraphNode) -> int:
    formula = node.layer.param_count()
    traversal = _traversal_count(node)
    if formula != traversal:
        raise RuntimeError(
            f"parameter accounting mismatch at {node.node_id}: "
            f"formula {formula} != stored scalars {traversal}"
        )
    return formula


def count_params(graph: LayerGraph) -> CostReport:
    """Closed-form parameter report, cross-checked against stored arrays.

    Raises ``RuntimeError`` if any node's closed-form count disagrees with
    the number of scalars actually allocated for it.
    """
    rows = [
        CostRow(n.node_id, n.kind, n.stage, n.module, n.branch,
                params=_check_node_params(n), macs=0, eltwise=0)
        for n in graph.nodes
    ]
    return CostReport(rows=rows)


def count_params_traversal(graph: LayerGraph) -> int:
    """Independent parameter total: sum of stored weight array sizes."""
    return graph.weight_scalars()


def _node_cost(graph: LayerGraph, node: GraphNode, h: int, w: int):
    cfg = graph.cfg
    if node.kind == "stem":
        return node.layer.cost(h, w)
    if node.kind == "fusion":
        n_in = len(node.layer.spec.in_channels)
        sizes = [cfg.branch_resolution(i, h, w) for i in range(1, n_in + 1)]
        return node.layer.cost(sizes)
    if node.kind == "head":
        sizes = [cfg.branch_resolution(i, h, w) for i in range(1, cfg.num_stages + 1)]
        return node.layer.cost(sizes)
    bh, bw = cfg.branch_resolution(node.branch, h, w)
    return node.layer.cost(bh, bw)


def count_flops(graph: LayerGraph, h: int, w: int) -> CostReport:
    """Exact MAC / eltwise report for an (h, w) input, one row per node."""
    d = graph.min_divisor()
    if h < d or w < d or h % d or w % d:
        raise ConfigError(f"cost: resolution {h}x{w} must be a positive multiple of {d}")
    rows = []
    for node in graph.nodes:
        c = _node_cost(graph, node, h, w)
        rows.append(CostRow(
            node.node_id, node.kind, node.stage, node.module, node.branch,
            params=_check_node_params(node), macs=c.macs, eltwise=c.eltwise,
        ))
    return CostReport(rows=rows, input_resolution=(h, w))


# ---------------------------------------------------------------------------
# asymptotic per-branch block costs
# ---------------------------------------------------------------------------


@dataclass
class AsymptoticCost:
    """Leading-order per-block costs for branch i, written in terms of the
    stage-1 width ``c`` and the stage-1 feature resolution (h, w)."""

    branch: int
    params_attention: float
    params_mixcfn: float
    flops_attention: float
    flops_mixcfn: float


def asymptotic_cost(branch: int, base_channels: float, h: int, w: int,
                    window: int, ratio: int) -> AsymptoticCost:
    """Unit-coefficient leading terms for one branch.

    ``base_channels`` is the stage-1 width; branch i uses 2**(i-1) times that
    width at 1/2**(i-1) of the stage-1 resolution (h, w).  Attention cost
    splits into a projection term h*w*c^2 (resolution-independent across
    branches) and a window term c*h*w*(h+w)*s / 4**(i-1) that decays with
    branch depth; MixCFN scales both of its terms by the expansion ratio.

    The model assumes the width-doubling family.  To evaluate a branch whose
    configured width deviates from it (e.g. a 240-wide third branch over a
    48-wide base), pass that branch's effective base ``channels / 2**(i-1)``.
    """
    if branch < 1:
        raise ConfigError(f"asymptotic_cost: branch must be >= 1, got {branch}")
    c = float(base_channels)
    four = 4.0 ** (branch - 1)
    two = 2.0 ** (branch - 1)
    return AsymptoticCost(
        branch=branch,
        params_attention=four * c * c + two * c,
        params_mixcfn=ratio * four * c * c + ratio * two * c,
        flops_attention=h * w * c * c + c * h * w * (h + w) * window / four,
        flops_mixcfn=ratio * h * w * c * c + ratio * c * h * w / two,
    )


def exact_block_cost(cfg: ArchConfig, branch: int, h: int, w: int, seed: int = 0):
    """Exact (params, macs) of one attention block and one MixCFN block on
    ``branch`` for an (h, w) input; used to check the asymptotic band."""
    from .blocks import AttentionBlock, AttnConfig, MixCfn, MixCfnConfig
    from .init import WeightInit

    winit = WeightInit(seed)
    c = cfg.channels[branch - 1]
    attn = AttentionBlock(AttnConfig(
        channels=c, window=cfg.window[branch - 1], head_dim=cfg.head_dim[branch - 1],
        share_kv=cfg.share_kv, use_parallel_conv=cfg.parallel_conv,
        use_des=cfg.des, use_extra_nonlinearity_bn=cfg.extra_nl_bn,
    ), winit)
    mix = MixCfn(MixCfnConfig(channels=c, ratio=cfg.mixcfn_ratio[branch - 1],
                              use_mixcfn=cfg.mixcfn), winit)
    bh, bw = cfg.branch_resolution(branch, h, w)
    return {
        "params_attention": attn.param_count(),
        "params_mixcfn": mix.param_count(),
        "flops_attention": attn.cost(bh, bw).macs,
        "flops_mixcfn": mix.cost(bh, bw).macs,
    }


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------


@dataclass
class AblationRow:
    toggle: str
    params_base: int
    params_variant: int
    flops_base: int
    flops_variant: int

    @property
    def delta_params(self) -> int:
        return self.params_variant - self.params_base

    @property
    def delta_flops(self) -> int:
        return self.flops_variant - self.flops_base


def flip_toggles(cfg: ArchConfig, toggle: str) -> ArchConfig:
    """Return a copy of ``cfg`` with one named toggle (or ``all``) flipped."""
    targets = TOGGLES if toggle == "all" else (toggle,)
    for t in targets:
        if t not in TOGGLES:
            raise ConfigError(
                f"unknown toggle {t!r}; expected one of {TOGGLES + ('all',)}"
            )
    flips = {t: not getattr(cfg, t) for t in targets}
    return dataclasses.replace(cfg, name=f"{cfg.name}~{toggle}", **flips)


def ablation_report(cfg: ArchConfig, toggle: str, h: int, w: int,
                    num_classes: int | None = None, seed: int = 0) -> AblationRow:
    """Rebuild the graph with ``toggle`` flipped and report both cost totals."""
    base = build_graph(cfg, num_classes=num_classes, seed=seed)
    base_report = count_flops(base, h, w)
    variant_cfg = flip_toggles(cfg, toggle)
    variant = build_graph(variant_cfg, num_classes=num_classes, seed=seed)
    variant_report = count_flops(variant, h, w)
    return AblationRow(
        toggle=toggle,
        params_base=base_report.total_params,
        params_variant=variant_report.total_params,
        flops_base=base_report.total_macs,
        flops_variant=variant_report.total_macs,
    )


def ablation_table(cfg: ArchConfig, h: int, w: int,
                   num_classes: int | None = None, seed: int = 0) -> list[AblationRow]:
    """One :func:`ablation_report` row per toggle, plus the all-off row."""
    return [ablation_report(cfg, t, h, w, num_classes=num_classes, seed=seed)
            for t in TOGGLES + ("all",)]


# ---------------------------------------------------------------------------
# window sweep
# ---------------------------------------------------------------------------


@dataclass
class WindowPoint:
    window: int
    macs: int


@dataclass
class WindowSweep:
    input_resolution: tuple[int, int]
    points: list[WindowPoint]

    @property
    def strictly_increasing(self) -> bool:
        return all(b.macs > a.macs for a, b in zip(self.points, self.points[1:]))


def window_sweep(cfg: ArchConfig, sizes, h: int, w: int, seed: int = 0) -> WindowSweep:
    """Backbone MAC totals as the MR/LR window size varies.

    Every branch from the third on gets the swept window size; branches 1-2
    keep their configured (small) windows.
    """
    points = []
    for s in sizes:
        s = int(s)
        if s < 1:
            raise ConfigError(f"window sweep: window sizes must be >= 1, got {s}")
        window = tuple(
            s if i >= 2 else cfg.window[i] for i in range(cfg.num_stages)
        )
        swept = dataclasses.replace(cfg, name=f"{cfg.name}~window{s}", window=window)
        graph = build_graph(swept, num_classes=None, seed=seed)
        points.append(WindowPoint(window=s, macs=count_flops(graph, h, w).total_macs))
    return WindowSweep(input_resolution=(h, w), points=points)
