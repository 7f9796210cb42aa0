"""Tour of the topology layer: canonical variants, block assignment,
stochastic-depth schedule, and the plain-text config format.
"""
from hrvit import (
    build_graph,
    build_variant,
    config_text,
    count_params,
    drop_path_schedule,
    parse_config,
    summarize,
    validate_assignment,
    variant_config_path,
)

print("=" * 72)
print("1. the three canonical variants")
print("=" * 72)

for name in ("b1", "b2", "b3"):
    cfg = build_variant(name)
    info = summarize(cfg)
    params = count_params(build_graph(cfg, seed=0)).total_params
    split = info["third_branch_split"]
    print(f"{name}: channels={tuple(info['channels'])} "
          f"head_dim={tuple(info['head_dim'])} window={tuple(info['window'])}")
    print(f"    blocks per branch {info['blocks_per_branch']}  "
          f"third-branch split {'-'.join(map(str, split))}")
    print(f"    backbone parameters: {params:,}")

print()
print("the segmentation flavour of b3 widens the two coarse windows:")
city = build_variant("b3", cityscapes_windows=True)
print(f"    {city.name}: window={city.window}")

print()
print("=" * 72)
print("2. near-uniform block assignment")
print("=" * 72)

# a branch's block budget is spread over the modules it appears in; the
# validator enforces max - min <= ceil(total / modules) unless relaxed
for split in ((6, 6, 6, 2), (7, 6, 5, 2), (17, 1, 1, 1), (8, 8, 2, 2)):
    ok = validate_assignment(20, split)
    print(f"split {split} of 20 -> {'accepted' if ok else 'rejected'}")
print("rejected splits pass under relaxed_assignment:",
      validate_assignment(20, (17, 1, 1, 1), relaxed=True))

print()
print("=" * 72)
print("3. stochastic-depth (drop-path) schedule")
print("=" * 72)

cfg = build_variant("b1")
sched = drop_path_schedule(cfg)
print("rates ramp linearly over the third branch's 20 blocks (graph order);")
print("other branches inherit their module's deepest third-branch rate:")
groups: dict[tuple[int, int], list[float]] = {}
for (s, m, b, k), rate in sorted(sched.items()):
    if s >= 3 and b == 3:
        groups.setdefault((s, m), []).append(rate)
for (s, m), rates in sorted(groups.items()):
    print(f"  stage {s} module {m} branch 3: "
          f"{rates[0]:.4f} .. {rates[-1]:.4f} over {len(rates)} blocks")
stage12 = [rate for (s, m, b, k), rate in sched.items() if s <= 2]
print(f"stages 1-2 stay at zero: {set(stage12)} "
      f"(rates are inference metadata; forward passes are deterministic)")

print()
print("=" * 72)
print("4. plain-text config files")
print("=" * 72)

path = variant_config_path("b2")
print(f"packaged config: {path}")
text = config_text(build_variant("b2"))
print("serialised form (first 12 lines):")
for line in text.strip().split("\n")[:12]:
    print(f"    {line}")
roundtrip = parse_config(text, source="<demo>")
print("parse(config_text(cfg)) == cfg:", roundtrip == build_variant("b2"))

broken = text.replace("head_dim = 24,24,24,24\n", "")
try:
    parse_config(broken, source="<demo>")
except Exception as exc:
    print("missing keys are reported by name:", exc)
