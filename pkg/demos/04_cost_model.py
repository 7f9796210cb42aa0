"""Tour of the cost model: exact per-node counting, model-scale totals,
feature ablations, window-size scaling, and the asymptotic band.

Counts use the multiply-accumulate (MAC) convention: one MAC per
multiply-add in matmuls and convolutions; elementwise work is tracked
separately and excluded from totals.
"""
from hrvit import (
    ablation_report,
    ablation_table,
    asymptotic_cost,
    build_graph,
    build_variant,
    count_flops,
    exact_block_cost,
    window_sweep,
)

print("=" * 72)
print("1. model-scale totals (classification, 1000 classes, 224x224)")
print("=" * 72)

print(f"{'variant':8} {'params':>12} {'MACs':>14}")
for name in ("b1", "b2", "b3"):
    graph = build_graph(build_variant(name), num_classes=1000, seed=0)
    report = count_flops(graph, 224, 224)
    print(f"{name:8} {report.total_params:>12,} {report.total_macs:>14,}")

print()
print("per-node table excerpt (b1, first six rows):")
graph = build_graph(build_variant("b1"), num_classes=1000, seed=0)
report = count_flops(graph, 224, 224)
for line in report.to_tsv().strip().split("\n")[:7]:
    print("   ", line.expandtabs(4))

print()
print("=" * 72)
print("2. feature ablations on b1 (deltas: flipped - default)")
print("=" * 72)

print(f"{'toggle':18} {'d_params':>12} {'d_MACs@224':>14}")
for row in ablation_table(build_variant("b1"), 224, 224, num_classes=1000, seed=0):
    print(f"{row.toggle:18} {row.delta_params:>+12,} {row.delta_flops:>+14,}")
print("(extra_nl_bn changes only parameters: BN affine pairs cost no MACs)")

print()
print("at 512x512 the KV-sharing saving is larger in absolute terms:")
kv = ablation_report(build_variant("b1"), "share_kv", 512, 512, seed=0)
print(f"    un-sharing K/V: {kv.delta_params:+,} params, {kv.delta_flops:+,} MACs")

des = ablation_report(build_variant("b1"), "des", 512, 512, num_classes=1000, seed=0)
fus = ablation_report(build_variant("b1"), "dense_fusion", 512, 512,
                      num_classes=1000, seed=0)
print(f"    DES accounts for {abs(des.delta_flops) / des.flops_base:.3%} of total MACs")
print(f"    extra dense-fusion paths: {abs(fus.delta_flops) / fus.flops_base:.3%}")

print()
print("=" * 72)
print("3. window-size scaling")
print("=" * 72)

sweep = window_sweep(build_variant("b1"), (7, 9, 11, 13, 15), 512, 512, seed=0)
print("b1 backbone at 512x512 (third branch side 32: no padding waste):")
for p in sweep.points:
    print(f"    window {p.window:>2}: {p.macs:>14,} MACs")
print("strictly increasing:", sweep.strictly_increasing)

sweep224 = window_sweep(build_variant("b1"), (7, 9, 11, 13, 15), 224, 224, seed=0)
print()
print("at 224x224 the third branch is 14x14, so padding effects appear:")
for p in sweep224.points:
    print(f"    window {p.window:>2}: {p.macs:>14,} MACs")
print("strictly increasing:", sweep224.strictly_increasing,
      " (13 -> 15 dips: one padded 15-window beats two padded 13-windows)")
growth = sweep224.points[-1].macs / sweep224.points[0].macs - 1
print(f"total growth 7 -> 15 at this size stays single-digit: {growth:.1%}")

print()
print("=" * 72)
print("4. exact vs asymptotic block costs")
print("=" * 72)

cfg = build_variant("b1")
print("ratio exact/asymptotic for one attention+MixCFN block, input 256x256:")
print(f"{'branch':8} {'p_attn':>8} {'p_mixcfn':>9} {'f_attn':>8} {'f_mixcfn':>9}")
for br in range(1, 5):
    base = cfg.channels[br - 1] / 2 ** (br - 1)
    asym = asymptotic_cost(br, base, 64, 64, cfg.window[br - 1],
                           cfg.mixcfn_ratio[br - 1])
    exact = exact_block_cost(cfg, br, 256, 256)
    ratios = [exact[k] / getattr(asym, k)
              for k in ("params_attention", "params_mixcfn",
                        "flops_attention", "flops_mixcfn")]
    print(f"{br:<8} " + " ".join(f"{r:>8.3f}" for r in ratios))
print("all ratios sit inside the [0.25, 4] band (asserted suite-wide in tests)")
