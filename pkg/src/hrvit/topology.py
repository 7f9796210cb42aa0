"""Network topology: architecture configs, variants, and the layer graph.

A built graph is a flat, ordered list of nodes (stem, fusion, patch-embed,
attention, mixcfn, head) tagged with stage / module / branch coordinates.
Stage n runs n parallel branches; branch i lives at 1/(4 * 2**(i-1)) of the
input resolution with its own channel width.  Every module is
fusion -> per-branch patch embed -> per-branch transformer blocks.
"""
from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass
from typing import Callable, Iterator

from .blocks import (
    AttentionBlock,
    AttnConfig,
    ClassifierHead,
    FusionLayer,
    FusionSpec,
    MixCfn,
    MixCfnConfig,
    PatchEmbed,
    Stem,
)
from .init import WeightInit
from .tensor import ConfigError, ShapeError, Tensor

TOGGLES = (
    "share_kv",
    "eff_patch_embed",
    "mixcfn",
    "parallel_conv",
    "extra_nl_bn",
    "dense_fusion",
    "des",
)


# ---------------------------------------------------------------------------
# assignment validator
# ---------------------------------------------------------------------------


def validate_assignment(total: int, per_module: tuple[int, ...] | list[int],
                        relaxed: bool = False) -> bool:
    """Check a per-module block assignment for near-uniformity.

    The strict rule accepts a split iff max - min <= ceil(total / modules).
    ``relaxed`` accepts any split (used to represent alternative assignment
    strategies).  Raises :class:`ConfigError` if the split does not sum to
    ``total``.
    """
    per_module = tuple(int(x) for x in per_module)
    if not per_module:
        raise ConfigError("validate_assignment: empty assignment")
    if sum(per_module) != total:
        raise ConfigError(
            f"validate_assignment: split {per_module} sums to {sum(per_module)}, expected {total}"
        )
    if relaxed:
        return True
    return max(per_module) - min(per_module) <= math.ceil(total / len(per_module))


# ---------------------------------------------------------------------------
# architecture config
# ---------------------------------------------------------------------------


@dataclass
class ArchConfig:
    """Complete description of one backbone topology.

    ``blocks`` maps (stage, module, branch) -> transformer block count, with
    stages, modules, and branches indexed from 1.  Branch i uses
    ``channels[i-1]``, ``head_dim[i-1]``, ``window[i-1]`` and
    ``mixcfn_ratio[i-1]``.
    """

    name: str
    channels: tuple[int, ...]
    head_dim: tuple[int, ...]
    window: tuple[int, ...]
    mixcfn_ratio: tuple[int, ...]
    modules_per_stage: tuple[int, ...]
    blocks: dict[tuple[int, int, int], int]
    num_stages: int = 4
    share_kv: bool = True
    eff_patch_embed: bool = True
    mixcfn: bool = True
    parallel_conv: bool = True
    extra_nl_bn: bool = True
    dense_fusion: bool = True
    des: bool = True
    max_drop_path: float = 0.1
    relaxed_assignment: bool = False

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.head_dim = tuple(int(d) for d in self.head_dim)
        self.window = tuple(int(s) for s in self.window)
        self.mixcfn_ratio = tuple(int(r) for r in self.mixcfn_ratio)
        self.modules_per_stage = tuple(int(m) for m in self.modules_per_stage)
        self.blocks = {tuple(int(v) for v in k): int(n) for k, n in self.blocks.items()}

    # -- validation ----------------------------------------------------------
    def validate(self) -> None:
        ns = self.num_stages
        if not 1 <= ns <= 4:
            raise ConfigError(f"config: num_stages must be in 1..4, got {ns}")
        for label, seq in (("channels", self.channels), ("head_dim", self.head_dim),
                           ("window", self.window), ("mixcfn_ratio", self.mixcfn_ratio),
                           ("modules_per_stage", self.modules_per_stage)):
            if len(seq) != ns:
                raise ConfigError(f"config: {label} needs {ns} entries, got {len(seq)}")
            if any(v < 1 for v in seq):
                raise ConfigError(f"config: {label} entries must be positive, got {seq}")
        for i in range(ns):
            c, d = self.channels[i], self.head_dim[i]
            if c % d:
                raise ConfigError(
                    f"config: branch {i + 1} head dim {d} must divide channels {c}"
                )
            if (c // d) % 2:
                raise ConfigError(
                    f"config: branch {i + 1} head count {c // d} must be even"
                )
            if (c * self.mixcfn_ratio[i]) % 2:
                raise ConfigError(
                    f"config: branch {i + 1} expanded width {c * self.mixcfn_ratio[i]} must be even"
                )
        if not 0.0 <= self.max_drop_path < 1.0:
            raise ConfigError(f"config: max_drop_path must be in [0, 1), got {self.max_drop_path}")
        expected = {(s, m, b)
                    for s in range(1, ns + 1)
                    for m in range(1, self.modules_per_stage[s - 1] + 1)
                    for b in range(1, s + 1)}
        got = set(self.blocks)
        if got != expected:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ConfigError(
                f"config: block map mismatch (missing {missing[:4]}, unexpected {extra[:4]})"
            )
        if any(n < 1 for n in self.blocks.values()):
            raise ConfigError("config: every (stage, module, branch) needs at least one block")
        if ns >= 3:
            per_module = self.third_branch_split()
            total = sum(per_module)
            if not validate_assignment(total, per_module, relaxed=self.relaxed_assignment):
                raise ConfigError(
                    f"config: third-branch split {per_module} violates the near-uniform rule "
                    f"(relaxed_assignment=false)"
                )

    def third_branch_split(self) -> tuple[int, ...]:
        """Block counts of branch 3 per module, in graph order."""
        split = []
        for s in range(3, self.num_stages + 1):
            for m in range(1, self.modules_per_stage[s - 1] + 1):
                split.append(self.blocks[(s, m, 3)])
        return tuple(split)

    def branch_resolution(self, branch: int, h: int, w: int) -> tuple[int, int]:
        """Feature resolution of 1-indexed ``branch`` for an (h, w) input."""
        f = 4 * 2 ** (branch - 1)
        return h // f, w // f

    def module_iter(self) -> Iterator[tuple[int, int]]:
        for s in range(1, self.num_stages + 1):
            for m in range(1, self.modules_per_stage[s - 1] + 1):
                yield s, m


def drop_path_schedule(cfg: ArchConfig) -> dict[tuple[int, int, int, int], float]:
    """Stochastic-depth rates per (stage, module, branch, block index).

    Third-branch blocks ramp linearly over their cumulative order: block t of
    T gets max * t / T, so the first gets max/T and the last exactly max.
    Every block on another branch of a stage-3+ module inherits the maximum
    third-branch rate of its own module; stage 1-2 modules use rate 0.
    Rates are metadata only -- inference applies the identity.
    """
    rates: dict[tuple[int, int, int, int], float] = {}
    total_third = sum(
        n for (s, _m, b), n in cfg.blocks.items() if b == 3 and s >= 3
    )
    t = 0
    for s, m in cfg.module_iter():
        module_max = 0.0
        if s >= 3 and total_third > 0:
            n3 = cfg.blocks[(s, m, 3)]
            for k in range(1, n3 + 1):
                rate = cfg.max_drop_path * (t + k) / total_third
                rates[(s, m, 3, k)] = rate
            t += n3
            module_max = rates[(s, m, 3, n3)]
        for b in range(1, s + 1):
            if b == 3:
                continue
            for k in range(1, cfg.blocks[(s, m, b)] + 1):
                rates[(s, m, b, k)] = module_max if s >= 3 else 0.0
    return rates


# ---------------------------------------------------------------------------
# canonical variants
# ---------------------------------------------------------------------------

_COMMON_EARLY_BLOCKS = {
    (1, 1): (1,),
    (2, 1): (1, 1),
    (3, 1): (1, 1, 6),
    (3, 2): (1, 1, 6),
}

_VARIANTS = {
    "b1": dict(
        channels=(32, 64, 128, 256),
        head_dim=(16, 32, 32, 32),
        mixcfn_ratio=(4, 4, 4, 4),
        stage4=((1, 1, 6, 2), (1, 1, 2, 2)),
    ),
    "b2": dict(
        channels=(48, 96, 240, 384),
        head_dim=(24, 24, 24, 24),
        mixcfn_ratio=(2, 3, 3, 3),
        stage4=((1, 1, 6, 2), (1, 1, 6, 2)),
    ),
    "b3": dict(
        channels=(64, 128, 256, 512),
        head_dim=(32, 32, 32, 32),
        mixcfn_ratio=(2, 2, 2, 2),
        stage4=((1, 1, 6, 3), (1, 1, 6, 3)),
    ),
}

VARIANT_NAMES = tuple(sorted(_VARIANTS))
CITYSCAPES_WINDOWS = (1, 2, 9, 9)
DEFAULT_WINDOWS = (1, 2, 7, 7)


def build_variant(name: str, cityscapes_windows: bool = False) -> ArchConfig:
    """Canonical b1 / b2 / b3 configs; ``cityscapes_windows`` swaps the
    MR/LR window sizes to (9, 9) and is defined for b3 only."""
    if name not in _VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected one of {VARIANT_NAMES}")
    if cityscapes_windows and name != "b3":
        raise ConfigError("cityscapes windows are defined for the b3 variant only")
    spec = _VARIANTS[name]
    blocks: dict[tuple[int, int, int], int] = {}
    for (s, m), counts in _COMMON_EARLY_BLOCKS.items():
        for b, n in enumerate(counts, start=1):
            blocks[(s, m, b)] = n
    for m, counts in enumerate(spec["stage4"], start=1):
        for b, n in enumerate(counts, start=1):
            blocks[(4, m, b)] = n
    return ArchConfig(
        name=name if not cityscapes_windows else f"{name}-cityscapes",
        channels=spec["channels"],
        head_dim=spec["head_dim"],
        window=CITYSCAPES_WINDOWS if cityscapes_windows else DEFAULT_WINDOWS,
        mixcfn_ratio=spec["mixcfn_ratio"],
        modules_per_stage=(1, 1, 2, 2),
        blocks=blocks,
        max_drop_path=0.1,
    )


# ---------------------------------------------------------------------------
# layer graph
# ---------------------------------------------------------------------------


@dataclass
class GraphNode:
    """One executable node of a built graph."""

    node_id: str
    kind: str                    # stem | fusion | patch_embed | attention | mixcfn | head
    layer: object
    stage: int | None = None
    module: int | None = None
    branch: int | None = None
    drop_path: float = 0.0


class LayerGraph:
    """Ordered executable graph of one backbone (optionally with a head)."""

    def __init__(self, cfg: ArchConfig, nodes: list[GraphNode], num_classes: int | None):
        self.cfg = cfg
        self.nodes = nodes
        self.num_classes = num_classes

    # -- execution ------------------------------------------------------------
    def min_divisor(self) -> int:
        return 4 * 2 ** (self.cfg.num_stages - 1)

    def forward(self, x: Tensor, trace: Callable[[GraphNode, list[Tensor]], None] | None = None
                ) -> tuple[list[Tensor], Tensor | None]:
        """Run the graph; returns (branch outputs, logits or None).

        ``trace`` is called after each node with the node and its outputs.
        """
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"graph forward: expected an (N,3,H,W) image, got {x.shape}")
        d = self.min_divisor()
        if x.shape[2] % d or x.shape[3] % d:
            raise ShapeError(
                f"graph forward: resolution {x.shape[2]}x{x.shape[3]} must be divisible by {d}"
            )
        branches: list[Tensor] = []
        logits: Tensor | None = None
        for node in self.nodes:
            if node.kind == "stem":
                branches = [node.layer.forward(x)]
                outs = branches
            elif node.kind == "fusion":
                branches = node.layer.forward(branches)
                outs = branches
            elif node.kind in ("patch_embed", "attention", "mixcfn"):
                i = node.branch - 1
                branches[i] = node.layer.forward(branches[i])
                outs = [branches[i]]
            elif node.kind == "head":
                logits = node.layer.forward(branches)
                outs = [logits]
            else:  # pragma: no cover - guarded by construction
                raise ConfigError(f"unknown node kind {node.kind!r}")
            if trace is not None:
                trace(node, outs)
        return branches, logits

    # -- bookkeeping ------------------------------------------------------------
    def named_weights(self) -> Iterator[tuple[str, Tensor]]:
        for node in self.nodes:
            for name, t in node.layer.named_weights():
                yield f"{node.node_id}.{name}", t

    def weight_scalars(self) -> int:
        """Traversal-path parameter count: sum of stored array sizes."""
        return sum(t.data.size for _, t in self.named_weights())


def build_graph(cfg: ArchConfig, num_classes: int | None = None, seed: int = 0) -> LayerGraph:
    """Materialize a config into an executable graph with seeded weights."""
    cfg.validate()
    if num_classes is not None and cfg.num_stages != 4:
        raise ConfigError("the classification head requires a 4-stage config")
    winit = WeightInit(seed)
    rates = drop_path_schedule(cfg)
    nodes: list[GraphNode] = [
        GraphNode("stem", "stem", Stem(cfg.channels[0], winit))
    ]
    for s, m in cfg.module_iter():
        if s > 1 and m == 1:
            spec = FusionSpec(cfg.channels[: s - 1], cfg.channels[:s], dense=cfg.dense_fusion)
        else:
            spec = FusionSpec(cfg.channels[:s], cfg.channels[:s], dense=cfg.dense_fusion)
        nodes.append(GraphNode(
            f"stage{s}.module{m}.fusion", "fusion", FusionLayer(spec, winit), stage=s, module=m,
        ))
        for b in range(1, s + 1):
            c = cfg.channels[b - 1]
            nodes.append(GraphNode(
                f"stage{s}.module{m}.branch{b}.embed", "patch_embed",
                PatchEmbed(c, c, winit, efficient=cfg.eff_patch_embed),
                stage=s, module=m, branch=b,
            ))
        for b in range(1, s + 1):
            c = cfg.channels[b - 1]
            attn_cfg = AttnConfig(
                channels=c,
                window=cfg.window[b - 1],
                head_dim=cfg.head_dim[b - 1],
                share_kv=cfg.share_kv,
                use_parallel_conv=cfg.parallel_conv,
                use_des=cfg.des,
                use_extra_nonlinearity_bn=cfg.extra_nl_bn,
            )
            mix_cfg = MixCfnConfig(channels=c, ratio=cfg.mixcfn_ratio[b - 1],
                                   use_mixcfn=cfg.mixcfn)
            for k in range(1, cfg.blocks[(s, m, b)] + 1):
                rate = rates[(s, m, b, k)]
                nodes.append(GraphNode(
                    f"stage{s}.module{m}.branch{b}.block{k}.attn", "attention",
                    AttentionBlock(attn_cfg, winit),
                    stage=s, module=m, branch=b, drop_path=rate,
                ))
                nodes.append(GraphNode(
                    f"stage{s}.module{m}.branch{b}.block{k}.mixcfn", "mixcfn",
                    MixCfn(mix_cfg, winit),
                    stage=s, module=m, branch=b, drop_path=rate,
                ))
    if num_classes is not None:
        nodes.append(GraphNode(
            "head", "head", ClassifierHead(cfg.channels, num_classes, winit)
        ))
    return LayerGraph(cfg, nodes, num_classes)


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


def summarize(cfg: ArchConfig) -> dict:
    """Structured per-stage/module/branch summary of a config."""
    cfg.validate()
    rates = drop_path_schedule(cfg)
    stages = []
    for s in range(1, cfg.num_stages + 1):
        modules = []
        for m in range(1, cfg.modules_per_stage[s - 1] + 1):
            branches = []
            for b in range(1, s + 1):
                n = cfg.blocks[(s, m, b)]
                branches.append({
                    "branch": b,
                    "channels": cfg.channels[b - 1],
                    "window": cfg.window[b - 1],
                    "head_dim": cfg.head_dim[b - 1],
                    "mixcfn_ratio": cfg.mixcfn_ratio[b - 1],
                    "blocks": n,
                    "drop_path": [round(rates[(s, m, b, k)], 12) for k in range(1, n + 1)],
                })
            modules.append({"module": m, "branches": branches})
        stages.append({"stage": s, "modules": modules})
    per_branch_totals = {
        b: sum(n for (s, _m, bb), n in cfg.blocks.items() if bb == b)
        for b in range(1, cfg.num_stages + 1)
    }
    return {
        "name": cfg.name,
        "num_stages": cfg.num_stages,
        "channels": list(cfg.channels),
        "head_dim": list(cfg.head_dim),
        "window": list(cfg.window),
        "mixcfn_ratio": list(cfg.mixcfn_ratio),
        "modules_per_stage": list(cfg.modules_per_stage),
        "toggles": {t: bool(getattr(cfg, t)) for t in TOGGLES},
        "max_drop_path": cfg.max_drop_path,
        "third_branch_split": list(cfg.third_branch_split()) if cfg.num_stages >= 3 else [],
        "blocks_per_branch": per_branch_totals,
        "stages": stages,
    }


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

_BOOL_KEYS = ("share_kv", "eff_patch_embed", "mixcfn", "parallel_conv",
              "extra_nl_bn", "dense_fusion", "des", "relaxed_assignment")
_LIST_KEYS = ("channels", "head_dim", "window", "mixcfn_ratio", "modules_per_stage")


def _parse_bool(raw: str) -> bool:
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ValueError(f"expected true or false, got {raw!r}")


def _parse_int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in raw.split(","))


def parse_config(text: str, source: str = "<config>") -> ArchConfig:
    """Parse the flat ``key = value`` config format.

    Lists are comma-separated, booleans are ``true``/``false``, blank lines
    and ``#`` comments are ignored.  Unknown and duplicate keys are rejected
    with their line numbers; missing keys are reported by name.
    """
    entries: dict[str, tuple[int, str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        entries[key] = (lineno, raw)

    def take(key: str, parser, default=None):
        if key not in entries:
            if default is not None:
                return default
            raise ConfigError(f"{source}: missing required key '{key}'")
        lineno, raw = entries.pop(key)
        try:
            return parser(raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for '{key}': {exc}") from exc

    name = take("name", str)
    num_stages = take("num_stages", int, default=4)
    lists = {k: take(k, _parse_int_list) for k in _LIST_KEYS}
    bools = {}
    for k in _BOOL_KEYS:
        if k == "relaxed_assignment":
            bools[k] = take(k, _parse_bool, default=False)
        else:
            bools[k] = take(k, _parse_bool)
    max_drop_path = take("max_drop_path", float)

    blocks: dict[tuple[int, int, int], int] = {}
    mps = lists["modules_per_stage"]
    if len(mps) != num_stages:
        raise ConfigError(
            f"{source}: modules_per_stage needs {num_stages} entries, got {len(mps)}"
        )
    for s in range(1, num_stages + 1):
        for m in range(1, mps[s - 1] + 1):
            key = f"blocks_stage{s}_module{m}"
            counts = take(key, _parse_int_list)
            if len(counts) != s:
                raise ConfigError(
                    f"{source}: '{key}' needs {s} per-branch entries, got {len(counts)}"
                )
            for b, n in enumerate(counts, start=1):
                blocks[(s, m, b)] = n
    if entries:
        key, (lineno, _) = next(iter(entries.items()))
        raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")

    cfg = ArchConfig(
        name=name,
        channels=lists["channels"],
        head_dim=lists["head_dim"],
        window=lists["window"],
        mixcfn_ratio=lists["mixcfn_ratio"],
        modules_per_stage=mps,
        blocks=blocks,
        num_stages=num_stages,
        max_drop_path=max_drop_path,
        **bools,
    )
    cfg.validate()
    return cfg


def load_config(path) -> ArchConfig:
    """Load an :class:`ArchConfig` from a config file path."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))


def config_text(cfg: ArchConfig) -> str:
    """Serialize a config in the flat file format (inverse of parse)."""
    lines = [f"name = {cfg.name}", f"num_stages = {cfg.num_stages}"]
    for k in _LIST_KEYS:
        lines.append(f"{k} = " + ",".join(str(v) for v in getattr(cfg, k)))
    for s in range(1, cfg.num_stages + 1):
        for m in range(1, cfg.modules_per_stage[s - 1] + 1):
            counts = [cfg.blocks[(s, m, b)] for b in range(1, s + 1)]
            lines.append(f"blocks_stage{s}_module{m} = " + ",".join(map(str, counts)))
    for k in _BOOL_KEYS:
        lines.append(f"{k} = " + ("true" if getattr(cfg, k) else "false"))
    lines.append(f"max_drop_path = {cfg.max_drop_path}")
    return "\n".join(lines) + "\n"


def variant_config_path(name: str):
    """Filesystem path of a packaged canonical config file."""
    if name not in _VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected one of {VARIANT_NAMES}")
    return importlib.resources.files("hrvit").joinpath(f"configs/hrvit_{name}.cfg")
