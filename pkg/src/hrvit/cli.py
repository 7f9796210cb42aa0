"""Command-line interface.

Subcommands: summarize, cost, check, forward, ablate.  Exit codes: 0 on
success, 1 when a check suite reports failures, 2 on usage or config errors.
The HRVIT_SEED environment variable supplies the default seed (0 if unset).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .checks import run_suite
from .cost import (
    CONVENTION,
    ablation_report,
    count_flops,
    window_sweep,
)
from .init import checksum
from .tensor import ConfigError, ShapeError, Tensor, no_grad
from .topology import (
    TOGGLES,
    VARIANT_NAMES,
    build_graph,
    build_variant,
    load_config,
    summarize,
)


def _default_seed() -> int:
    raw = os.environ.get("HRVIT_SEED", "0")
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"HRVIT_SEED must be an integer, got {raw!r}") from exc


def _parse_res(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ConfigError(f"--res expects HxW (e.g. 224x224), got {text!r}")
    try:
        h, w = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ConfigError(f"--res expects integers, got {text!r}") from exc
    if h < 1 or w < 1:
        raise ConfigError(f"--res expects positive sizes, got {text!r}")
    return h, w


def _parse_head(text: str) -> int:
    kind, _, n = text.partition(":")
    if kind != "cls" or not n:
        raise ConfigError(f"--head expects cls:N (e.g. cls:1000), got {text!r}")
    try:
        classes = int(n)
    except ValueError as exc:
        raise ConfigError(f"--head expects an integer class count, got {text!r}") from exc
    if classes < 1:
        raise ConfigError(f"--head expects a positive class count, got {text!r}")
    return classes


def _load_cfg(args):
    if getattr(args, "config", None):
        if getattr(args, "cityscapes_windows", False):
            raise ConfigError("--cityscapes-windows applies to --variant, not --config")
        return load_config(args.config)
    return build_variant(args.variant,
                         cityscapes_windows=getattr(args, "cityscapes_windows", False))


def _emit(text: str, out_path: str | None) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _add_model_args(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--variant", choices=VARIANT_NAMES, help="canonical model")
    group.add_argument("--config", help="path to a config file")
    p.add_argument("--cityscapes-windows", action="store_true",
                   help="use the large-window b3 configuration")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_summarize(args) -> int:
    cfg = _load_cfg(args)
    info = summarize(cfg)
    if args.json:
        _emit(json.dumps(info, indent=2) + "\n", args.out)
        return 0
    lines = [
        f"model {info['name']}: {info['num_stages']} stages",
        f"channels      {tuple(info['channels'])}",
        f"head_dim      {tuple(info['head_dim'])}",
        f"window        {tuple(info['window'])}",
        f"mixcfn_ratio  {tuple(info['mixcfn_ratio'])}",
        "toggles       " + " ".join(
            f"{k}={'on' if v else 'off'}" for k, v in info["toggles"].items()),
        f"max_drop_path {info['max_drop_path']}",
    ]
    if info["third_branch_split"]:
        split = info["third_branch_split"]
        lines.append(
            f"third-branch split {'-'.join(str(v) for v in split)} (total {sum(split)})"
        )
    for stage in info["stages"]:
        for module in stage["modules"]:
            for br in module["branches"]:
                dp = br["drop_path"]
                lines.append(
                    f"stage {stage['stage']} module {module['module']} branch {br['branch']}: "
                    f"channels={br['channels']} window={br['window']} "
                    f"head_dim={br['head_dim']} ratio={br['mixcfn_ratio']} "
                    f"blocks={br['blocks']} drop_path={dp[0]:.4f}..{dp[-1]:.4f}"
                )
        lines.append("")
    lines.append("config ok")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_cost(args) -> int:
    cfg = _load_cfg(args)
    h, w = _parse_res(args.res)
    classes = _parse_head(args.head) if args.head else None
    graph = build_graph(cfg, num_classes=classes, seed=args.seed)
    report = count_flops(graph, h, w)
    _emit(report.to_json() if args.format == "json" else report.to_tsv(), args.out)
    return 0


def cmd_check(args) -> int:
    reports = run_suite(args.suite, seed=args.seed)
    lines = []
    failures = 0
    for r in reports:
        status = "ok  " if r.passed else "FAIL"
        failures += 0 if r.passed else 1
        lines.append(f"{status} {r.name}  error={r.error:.3e}  tol={r.tolerance:.1e}")
    lines.append(f"{len(reports)} checks, {failures} failed")
    _emit("\n".join(lines) + "\n", args.out)
    return 1 if failures else 0


def cmd_forward(args) -> int:
    cfg = _load_cfg(args)
    h, w = _parse_res(args.res)
    classes = _parse_head(args.head) if args.head else None
    graph = build_graph(cfg, num_classes=classes, seed=args.seed)
    rng = np.random.default_rng([args.seed, 0x464F5257])
    x = Tensor(rng.standard_normal((1, 3, h, w)))
    lines = [f"input\timage\t{tuple(x.shape)}\t{checksum(x.data):016x}"]

    def trace(node, outs):
        for j, t in enumerate(outs):
            label = node.node_id if len(outs) == 1 else f"{node.node_id}[{j}]"
            lines.append(f"{label}\t{node.kind}\t{tuple(t.shape)}\t{checksum(t.data):016x}")

    with no_grad():
        branches, logits = graph.forward(x, trace=trace)
    for i, t in enumerate(branches, start=1):
        lines.append(f"output.branch{i}\toutput\t{tuple(t.shape)}\t{checksum(t.data):016x}")
    if logits is not None:
        lines.append(f"output.logits\toutput\t{tuple(logits.shape)}\t{checksum(logits.data):016x}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_ablate(args) -> int:
    cfg = build_variant(args.variant)
    h, w = _parse_res(args.res)
    classes = _parse_head(args.head) if args.head else None
    row = ablation_report(cfg, args.toggle, h, w, num_classes=classes, seed=args.seed)
    if args.format == "json":
        payload = {
            "variant": args.variant,
            "resolution": [h, w],
            "head_classes": classes,
            "convention": CONVENTION,
            "toggle": row.toggle,
            "params_base": row.params_base,
            "params_variant": row.params_variant,
            "delta_params": row.delta_params,
            "flops_base": row.flops_base,
            "flops_variant": row.flops_variant,
            "delta_flops": row.delta_flops,
        }
        _emit(json.dumps(payload, indent=2) + "\n", args.out)
        return 0
    lines = [
        "toggle\tparams_base\tparams_variant\tdelta_params\tflops_base\tflops_variant\tdelta_flops",
        f"{row.toggle}\t{row.params_base}\t{row.params_variant}\t{row.delta_params}"
        f"\t{row.flops_base}\t{row.flops_variant}\t{row.delta_flops}",
    ]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    h, w = _parse_res(args.res)
    sizes = [int(v) for v in args.windows.split(",")]
    sweep = window_sweep(cfg, sizes, h, w, seed=args.seed)
    lines = ["window\tflops"]
    lines.extend(f"{p.window}\t{p.macs}" for p in sweep.points)
    lines.append(f"strictly_increasing\t{str(sweep.strictly_increasing).lower()}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hrvit",
        description="Multi-branch high-resolution vision transformer toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    seed = _default_seed()

    p = sub.add_parser("summarize", help="print the topology of a model config")
    _add_model_args(p)
    p.add_argument("--json", action="store_true", help="emit JSON instead of text")
    p.add_argument("--out", help="write output to a file")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("cost", help="per-node parameter and MAC table")
    _add_model_args(p)
    p.add_argument("--res", required=True, help="input resolution HxW")
    p.add_argument("--head", help="attach a classification head, e.g. cls:1000")
    p.add_argument("--format", choices=("tsv", "json"), default="tsv")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", help="write output to a file")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("check", help="run verification suites")
    p.add_argument("--suite", required=True, choices=("grad", "oracle", "invariant", "all"))
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", help="write output to a file")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("forward", help="run a seeded forward pass and print checksums")
    _add_model_args(p)
    p.add_argument("--res", required=True, help="input resolution HxW")
    p.add_argument("--head", help="attach a classification head, e.g. cls:1000")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", help="write output to a file")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("ablate", help="cost deltas from flipping one feature toggle")
    p.add_argument("variant", choices=VARIANT_NAMES)
    p.add_argument("--toggle", required=True, choices=TOGGLES + ("all",))
    p.add_argument("--res", required=True, help="input resolution HxW")
    p.add_argument("--head", help="attach a classification head, e.g. cls:1000")
    p.add_argument("--format", choices=("tsv", "json"), default="tsv")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", help="write output to a file")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="backbone MACs as the MR/LR window size varies")
    _add_model_args(p)
    p.add_argument("--res", required=True, help="input resolution HxW")
    p.add_argument("--windows", default="7,9,11,13,15",
                   help="comma-separated window sizes")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", help="write output to a file")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
