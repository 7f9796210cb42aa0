"""Tour of the backbone's building blocks, bottom-up.

Each block is constructed standalone with seeded weights and probed for the
properties the library's invariant suite checks: locality patterns, exact
masking, cost bookkeeping, and graceful degradation when a feature toggle is
off.
"""
import numpy as np

from hrvit import (
    AttentionBlock,
    AttnConfig,
    ClassifierHead,
    DiversityShortcut,
    FusionLayer,
    FusionSpec,
    MixCfn,
    MixCfnConfig,
    PatchEmbed,
    Stem,
    Tensor,
    WeightInit,
    balanced_factor_pair,
    no_grad,
    window_partition,
    window_merge,
)

rng = np.random.default_rng(7)
winit = WeightInit(seed=0)

print("=" * 72)
print("1. cross-shaped window attention")
print("=" * 72)

cfg = AttnConfig(channels=16, window=3, head_dim=8)
block = AttentionBlock(cfg, winit)
x = Tensor(rng.standard_normal((2, 16, 9, 12)))
with no_grad():
    y = block.forward(x)
print(f"input {x.shape} -> output {y.shape} (residual, shape-preserving)")
print(f"parameters: {block.param_count()}")
cost = block.cost(9, 12)
print(f"cost at 9x12: {cost.macs} MACs, {cost.eltwise} elementwise flops")

# the horizontal half of the heads sees s x W strips, the vertical half
# H x s strips; perturbing one pixel therefore moves outputs only inside a
# cross-shaped neighbourhood (checked exactly by the invariant suite)
unshared = AttentionBlock(
    AttnConfig(channels=16, window=3, head_dim=8, share_kv=False), WeightInit(seed=0))
print(f"un-sharing the KV projection adds "
      f"{unshared.param_count() - block.param_count()} parameters "
      f"(= C^2 + C = {16 * 16 + 16})")

print()
print("window partition bookkeeping (9 rows, window 2 -> padded to 10):")
fmap = Tensor(rng.standard_normal((1, 4, 9, 12)))
strips, mask = window_partition(fmap, 2, "horizontal")
print(f"  windows tensor {strips.shape}, padded positions in mask: {int(mask.sum())}")
merged = window_merge(strips, "horizontal", 9, 12)
print("  partition -> merge roundtrip is bit-exact:",
      bool(np.array_equal(merged.data, fmap.data)))

print()
print("=" * 72)
print("2. diversity-enhanced shortcut (DES)")
print("=" * 72)

des = DiversityShortcut(48, WeightInit(seed=1))
print("channel count 48 factors as p x q =", balanced_factor_pair(48))
t = Tensor(rng.standard_normal((2, 48, 5, 3)))
with no_grad():
    d = des.forward(t)
print(f"map {t.shape} -> {d.shape}; acts per position, no spatial mixing")
print(f"parameters: {des.param_count()} (two small factor matrices, no bias)")

print()
print("=" * 72)
print("3. MixCFN feed-forward")
print("=" * 72)

mix = MixCfn(MixCfnConfig(channels=16, ratio=4), WeightInit(seed=2))
plain = MixCfn(MixCfnConfig(channels=16, ratio=4, use_mixcfn=False), WeightInit(seed=2))
fm = Tensor(rng.standard_normal((1, 16, 6, 6)))
with no_grad():
    out = mix.forward(fm)
print(f"feature map {fm.shape} -> {out.shape}")
print(f"mixed-scale params {mix.param_count()} vs plain FFN {plain.param_count()} "
      f"(delta = two depthwise stacks = {mix.param_count() - plain.param_count()})")

print()
print("=" * 72)
print("4. patch embedding and stem")
print("=" * 72)

eff = PatchEmbed(8, 24, WeightInit(seed=3), efficient=True)
full = PatchEmbed(8, 24, WeightInit(seed=3), efficient=False)
print(f"efficient embed (PW + DW3x3 + LN): {eff.param_count()} params")
print(f"full conv embed (3x3 + LN):        {full.param_count()} params")

stem = Stem(32, WeightInit(seed=4))
img = Tensor(rng.standard_normal((1, 3, 64, 96)))
with no_grad():
    feat = stem.forward(img)
print(f"stem: image {img.shape} -> {feat.shape} (two stride-2 convs, /4)")

print()
print("=" * 72)
print("5. cross-resolution fusion")
print("=" * 72)

spec = FusionSpec(in_channels=(8, 16), out_channels=(8, 16, 32), dense=True)
fusion = FusionLayer(spec, WeightInit(seed=5))
hi = Tensor(rng.standard_normal((1, 8, 12, 12)))
lo = Tensor(rng.standard_normal((1, 16, 6, 6)))
with no_grad():
    outs = fusion.forward([hi, lo])
print("two branches in, three out (new coarsest branch is synthesised):")
for i, o in enumerate(outs, start=1):
    print(f"  branch {i}: {o.shape}")
print("active paths (dense):", spec.active_pairs())
sparse = FusionSpec(in_channels=(8, 16, 32), out_channels=(8, 16, 32), dense=False)
print("active paths (sparse, |i-j|<=1 only):", sparse.active_pairs())

print()
print("=" * 72)
print("6. classification head")
print("=" * 72)

head = ClassifierHead((8, 16, 32, 64), num_classes=10, winit=WeightInit(seed=6))
pyramid = [Tensor(rng.standard_normal((1, c, r, r)))
           for c, r in zip((8, 16, 32, 64), (16, 8, 4, 2))]
with no_grad():
    logits = head.forward(pyramid)
print(f"four-branch pyramid -> logits {logits.shape}")
print(f"head parameters: {head.param_count()}")
