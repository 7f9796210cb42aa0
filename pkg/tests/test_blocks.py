"""Unit tests for the model building blocks.

Every block carries a closed-form cost() beside its forward(); the tests
here hold the two together by instrumenting real forwards with the MAC
counter, and pin the structural contracts (windowing, masking, sharing,
locality, additivity) that the larger model relies on.
"""
import numpy as np
import numpy.testing as npt
import pytest

from hrvit import (
    AttentionBlock,
    AttnConfig,
    ClassifierHead,
    ConfigError,
    DiversityShortcut,
    FusionLayer,
    FusionSpec,
    MixCfn,
    MixCfnConfig,
    OpCounter,
    PatchEmbed,
    ShapeError,
    Stem,
    Tensor,
    WeightInit,
    balanced_factor_pair,
    count_ops,
    no_grad,
    oracle_des,
    oracle_window_attention,
    window_merge,
    window_partition,
    windowed_mhsa,
)
from hrvit.blocks import BN_EPS


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("h,w,s,orientation", [
    (6, 5, 2, "horizontal"),
    (5, 6, 2, "vertical"),
    (4, 4, 7, "horizontal"),
    (3, 10, 4, "vertical"),
    (7, 7, 7, "horizontal"),
    (1, 9, 3, "vertical"),
])
def test_window_partition_merge_roundtrip(h, w, s, orientation):
    rng = np.random.default_rng(h * 100 + w * 10 + s)
    x = Tensor(rng.standard_normal((2, 3, h, w)))
    with no_grad():
        win, mask = window_partition(x, s, orientation)
        back = window_merge(win, orientation, h, w)
    assert (back.data == x.data).all()
    side = h if orientation == "horizontal" else w
    n_windows = -(-side // s)
    assert win.shape[0] == 2 * n_windows
    assert mask.sum() == (n_windows * s - side) * (w if orientation == "horizontal" else h) * 2


def test_window_partition_marks_padding():
    x = Tensor(np.ones((1, 2, 3, 4)))
    win, mask = window_partition(x, 2, "horizontal")
    assert win.shape == (2, 2, 2, 4)
    # last window's second row is padding
    assert (win.data[1, :, 1, :] == 0).all()
    assert mask[1, 1, :].all() and not mask[0].any() and not mask[1, 0].any()


def test_window_partition_window_index_layout():
    x = Tensor(np.arange(2 * 1 * 4 * 2, dtype=float).reshape(2, 1, 4, 2))
    win, _ = window_partition(x, 2, "horizontal")
    # window m of batch item n lands at row n * M + m
    npt.assert_allclose(win.data[0], x.data[0][:, 0:2, :])
    npt.assert_allclose(win.data[1], x.data[0][:, 2:4, :])
    npt.assert_allclose(win.data[2], x.data[1][:, 0:2, :])
    npt.assert_allclose(win.data[3], x.data[1][:, 2:4, :])


def test_windowed_mhsa_matches_pairwise_oracle():
    rng = np.random.default_rng(11)
    c, d_k = 8, 4
    win = rng.standard_normal((2, c, 3, 4))
    wq, wk, wv = (rng.standard_normal((c, c)) * 0.3 for _ in range(3))
    bq, bk, bv = (rng.standard_normal(c) * 0.1 for _ in range(3))
    mask = np.zeros((2, 3, 4), dtype=bool)
    mask[1, 2, :] = True
    with no_grad():
        got = windowed_mhsa(Tensor(win), Tensor(wq), Tensor(wk), Tensor(wv), d_k,
                            pad_mask=mask, bq=Tensor(bq), bk=Tensor(bk),
                            bv=Tensor(bv)).data
    ref = oracle_window_attention(win, wq, bq, wk, bk, wv, bv, d_k, mask)
    npt.assert_allclose(got, ref, rtol=0, atol=1e-12)


def test_masked_keys_get_exactly_zero_weight_and_padded_queries_zero_output():
    rng = np.random.default_rng(12)
    x = Tensor(rng.standard_normal((1, 8, 5, 4)))
    with no_grad():
        win, mask = window_partition(x, 2, "horizontal")
        wq = Tensor(rng.standard_normal((8, 8)) * 0.2)
        out, probs = windowed_mhsa(win, wq, wq, wq, 4, pad_mask=mask, return_probs=True)
    flat = mask.reshape(mask.shape[0], -1)
    for n in range(flat.shape[0]):
        if not flat[n].any():
            continue
        assert (probs[n][:, :, flat[n]] == 0.0).all()
        tokens = out.data[n].reshape(out.shape[1], -1)
        assert (tokens[:, flat[n]] == 0.0).all()


def test_fully_padded_window_rejected():
    win = Tensor(np.zeros((1, 4, 2, 2)))
    wq = Tensor(np.eye(4))
    with pytest.raises(ConfigError):
        windowed_mhsa(win, wq, wq, wq, 2, pad_mask=np.ones((1, 2, 2), dtype=bool))


def test_shared_and_unshared_kv_are_bit_identical():
    rng = np.random.default_rng(13)
    c = 8
    win = Tensor(rng.standard_normal((1, c, 2, 5)))
    wq = Tensor(rng.standard_normal((c, c)) * 0.3)
    wkv = Tensor(rng.standard_normal((c, c)) * 0.3)
    with no_grad():
        shared = windowed_mhsa(win, wq, wkv, wkv, 4).data
        unshared = windowed_mhsa(win, wq, Tensor(wkv.data.copy()), wkv, 4).data
    assert (shared == unshared).all()


# ---------------------------------------------------------------------------
# DES
# ---------------------------------------------------------------------------


def test_balanced_factor_pair_examples():
    assert balanced_factor_pair(32) == (4, 8)
    assert balanced_factor_pair(64) == (8, 8)
    assert balanced_factor_pair(49) == (7, 7)
    assert balanced_factor_pair(12) == (3, 4)
    assert balanced_factor_pair(7) == (1, 7)
    assert balanced_factor_pair(240) == (15, 16)
    with pytest.raises(ConfigError):
        balanced_factor_pair(0)


def test_des_matches_explicit_kronecker_oracle():
    rng = np.random.default_rng(14)
    shortcut = DiversityShortcut(12, WeightInit(7))
    x = rng.standard_normal((2, 12, 3, 2))
    with no_grad():
        got = shortcut.forward(Tensor(x)).data
    tokens = x.transpose(0, 2, 3, 1).reshape(-1, 12)
    ref = oracle_des(tokens, shortcut.a.data, shortcut.b.data)
    npt.assert_allclose(got, ref.reshape(2, 3, 2, 12).transpose(0, 3, 1, 2),
                        rtol=0, atol=1e-12)


def test_des_has_no_biases_and_square_factors():
    shortcut = DiversityShortcut(32, WeightInit(0))
    names = dict(shortcut.named_weights())
    assert set(names) == {"a", "b"}
    assert names["a"].shape == (4, 4) and names["b"].shape == (8, 8)
    assert shortcut.param_count() == 16 + 64


# ---------------------------------------------------------------------------
# attention block
# ---------------------------------------------------------------------------


def test_attn_config_validation():
    with pytest.raises(ConfigError):
        AttnConfig(channels=10, window=2, head_dim=4).validate()  # not divisible
    with pytest.raises(ConfigError):
        AttnConfig(channels=12, window=2, head_dim=4).validate()  # 3 heads, odd
    AttnConfig(channels=16, window=2, head_dim=4).validate()


def test_attention_block_preserves_shape_and_differs_from_input():
    rng = np.random.default_rng(15)
    block = AttentionBlock(AttnConfig(channels=8, window=2, head_dim=4), WeightInit(3))
    x = Tensor(rng.standard_normal((2, 8, 5, 6)))
    with no_grad():
        y = block.forward(x)
    assert y.shape == x.shape
    assert not np.allclose(y.data, x.data)


def test_attention_block_force_mask_matches_unmasked_on_aligned_input():
    rng = np.random.default_rng(16)
    block = AttentionBlock(AttnConfig(channels=8, window=2, head_dim=4), WeightInit(4))
    x = Tensor(rng.standard_normal((1, 8, 4, 6)))  # divisible by s: no padding
    with no_grad():
        plain = block.forward(x).data
        forced = block.forward(x, force_mask=True).data
    assert (plain == forced).all()


def test_attention_block_kv_sharing_bit_exact_against_copied_unshared():
    rng = np.random.default_rng(17)
    shared = AttentionBlock(AttnConfig(channels=8, window=2, head_dim=4,
                                       share_kv=True), WeightInit(5))
    unshared = AttentionBlock(AttnConfig(channels=8, window=2, head_dim=4,
                                         share_kv=False), WeightInit(5))
    # copy every shared weight over, then point k at v's weights
    for name in ("ln_gamma", "ln_beta", "wq", "bq", "wv", "bv", "wo", "bo",
                 "dw", "dw_bias", "bn_gamma", "bn_beta"):
        getattr(unshared, name).data[...] = getattr(shared, name).data
    unshared.wk.data[...] = shared.wv.data
    unshared.bk.data[...] = shared.bv.data
    unshared.des.a.data[...] = shared.des.a.data
    unshared.des.b.data[...] = shared.des.b.data
    x = Tensor(rng.standard_normal((1, 8, 5, 6)))
    with no_grad():
        assert (shared.forward(x).data == unshared.forward(x).data).all()
    assert unshared.param_count() == shared.param_count() + 8 * 8 + 8


def test_attention_block_cross_shaped_locality():
    rng = np.random.default_rng(18)
    h, w, s = 4, 6, 2
    base = rng.standard_normal((1, 8, h, w))
    r0, c0 = 1, 4
    bumped = base.copy()
    bumped[0, :, r0, c0] += 0.5
    for use_parallel in (False, True):
        block = AttentionBlock(AttnConfig(channels=8, window=s, head_dim=4,
                                          use_parallel_conv=use_parallel),
                               WeightInit(6))
        with no_grad():
            diff = np.abs(block.forward(Tensor(bumped)).data
                          - block.forward(Tensor(base)).data).sum(axis=(0, 1))
        allowed = np.zeros((h, w), dtype=bool)
        allowed[(r0 // s) * s:(r0 // s) * s + s, :] = True
        allowed[:, (c0 // s) * s:(c0 // s) * s + s] = True
        if use_parallel:
            allowed[r0 - 1:r0 + 2, c0 - 1:c0 + 2] = True
        assert (diff[~allowed] == 0.0).all()
        assert (diff[allowed] > 0.0).any()


def test_attention_block_param_count_toggles():
    c = 16
    full = AttentionBlock(AttnConfig(channels=c, window=2, head_dim=4), WeightInit(0))
    bare = AttentionBlock(AttnConfig(channels=c, window=2, head_dim=4,
                                     share_kv=True, use_parallel_conv=False,
                                     use_des=False, use_extra_nonlinearity_bn=False),
                          WeightInit(0))
    # parallel conv adds 10C, the extra BN adds 2C, DES adds p^2 + q^2
    assert full.param_count() - bare.param_count() == 10 * c + 2 * c + 32
    for block in (full, bare):
        assert block.param_count() == sum(t.size for _, t in block.named_weights())


# ---------------------------------------------------------------------------
# MixCFN / patch embed / stem
# ---------------------------------------------------------------------------


def test_mixcfn_matches_manual_composition():
    import hrvit.tensor as T

    rng = np.random.default_rng(19)
    mix = MixCfn(MixCfnConfig(channels=6, ratio=2, use_mixcfn=True), WeightInit(8))
    x = Tensor(rng.standard_normal((1, 6, 3, 4)))
    with no_grad():
        got = mix.forward(x).data
        # independent re-composition from the same weights
        n, c, h, w = x.shape
        tokens = T.reshape(T.transpose(x, (0, 2, 3, 1)), (n * h * w, c))
        tokens = T.layer_norm(tokens, mix.ln_gamma, mix.ln_beta, eps=1e-5)
        hidden = T.add(T.matmul(tokens, T.transpose(mix.w1, (1, 0))), mix.b1)
        hmap = T.transpose(T.reshape(hidden, (n, h, w, 12)), (0, 3, 1, 2))
        lo = T.narrow(hmap, 1, 0, 6)
        hi = T.narrow(hmap, 1, 6, 6)
        lo = T.gelu(T.conv2d(lo, mix.dw3, mix.dw3_bias, stride=1, padding=1, groups=6))
        hi = T.gelu(T.conv2d(hi, mix.dw5, mix.dw5_bias, stride=1, padding=2, groups=6))
        merged = T.concat([lo, hi], axis=1)
        tokens2 = T.reshape(T.transpose(merged, (0, 2, 3, 1)), (n * h * w, 12))
        out = T.add(T.matmul(tokens2, T.transpose(mix.w2, (1, 0))), mix.b2)
        ref = T.add(x, T.transpose(T.reshape(out, (n, h, w, c)), (0, 3, 1, 2))).data
    npt.assert_allclose(got, ref, rtol=0, atol=1e-12)


def test_mixcfn_plain_variant_has_no_depthwise_convs():
    mix = MixCfn(MixCfnConfig(channels=6, ratio=2, use_mixcfn=False), WeightInit(9))
    names = [n for n, _ in mix.named_weights()]
    assert not any("dw" in n for n in names)
    on = MixCfn(MixCfnConfig(channels=6, ratio=2, use_mixcfn=True), WeightInit(9))
    assert on.param_count() - mix.param_count() == (9 + 1 + 25 + 1) * 6


def test_mixcfn_rejects_odd_hidden_width():
    with pytest.raises(ConfigError):
        MixCfnConfig(channels=3, ratio=3, use_mixcfn=True).validate()


def test_patch_embed_shapes_and_param_counts():
    pe = PatchEmbed(5, 7, WeightInit(10), efficient=True)
    full = PatchEmbed(5, 7, WeightInit(10), efficient=False)
    x = Tensor(np.random.default_rng(20).standard_normal((1, 5, 4, 6)))
    with no_grad():
        assert pe.forward(x).shape == (1, 7, 4, 6)
        assert full.forward(x).shape == (1, 7, 4, 6)
    assert pe.param_count() == 5 * 7 + 7 + 9 * 7 + 7 + 2 * 7
    assert full.param_count() == 9 * 5 * 7 + 7 + 2 * 7


def test_stem_downsamples_by_four_and_validates_input():
    stem = Stem(8, WeightInit(11))
    x = Tensor(np.random.default_rng(21).standard_normal((2, 3, 8, 12)))
    with no_grad():
        y = stem.forward(x)
    assert y.shape == (2, 8, 2, 3)
    with pytest.raises(ShapeError):
        stem.forward(Tensor(np.zeros((1, 4, 8, 8))))
    with pytest.raises(ShapeError):
        stem.forward(Tensor(np.zeros((1, 3, 6, 8))))


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------


def test_fusion_grows_one_branch_and_validates():
    spec = FusionSpec((4, 6), (4, 6, 8), dense=True)
    fusion = FusionLayer(spec, WeightInit(12))
    rng = np.random.default_rng(22)
    xs = [Tensor(rng.standard_normal((1, 4, 8, 8))),
          Tensor(rng.standard_normal((1, 6, 4, 4)))]
    with no_grad():
        outs = fusion.forward(xs)
    assert [tuple(o.shape) for o in outs] == [(1, 4, 8, 8), (1, 6, 4, 4), (1, 8, 2, 2)]
    with pytest.raises(ShapeError):
        fusion.forward(xs[:1])
    bad = [xs[0], Tensor(rng.standard_normal((1, 6, 3, 4)))]
    with pytest.raises(ShapeError):
        fusion.forward(bad)


def test_fusion_output_is_sum_of_path_contributions():
    spec = FusionSpec((4, 6, 8), (4, 6, 8), dense=True)
    fusion = FusionLayer(spec, WeightInit(13))
    rng = np.random.default_rng(23)
    xs = [Tensor(rng.standard_normal((1, 4, 8, 8))),
          Tensor(rng.standard_normal((1, 6, 4, 4))),
          Tensor(rng.standard_normal((1, 8, 2, 2)))]
    with no_grad():
        outs = fusion.forward(xs)
        for j in range(3):
            acc = xs[j].data.copy()
            for i in range(3):
                if i != j:
                    acc = acc + fusion._run_path(i, j, xs[i]).data
            npt.assert_allclose(outs[j].data, acc, rtol=0, atol=1e-12)


def test_sparse_fusion_only_keeps_adjacent_pairs():
    dense = FusionSpec((4, 6, 8), (4, 6, 8), dense=True)
    sparse = FusionSpec((4, 6, 8), (4, 6, 8), dense=False)
    assert len(dense.active_pairs()) == 6
    assert set(sparse.active_pairs()) == {(0, 1), (1, 0), (1, 2), (2, 1)}
    grow = FusionSpec((4,), (4, 6), dense=False)
    assert grow.active_pairs() == [(0, 1)]


def test_fusion_rejects_changed_surviving_widths():
    with pytest.raises(ConfigError):
        FusionSpec((4, 6), (4, 7, 8)).validate()
    with pytest.raises(ConfigError):
        FusionSpec((4, 6), (4, 6, 8, 10)).validate()


def test_fusion_upsample_path_uses_nearest_neighbour():
    spec = FusionSpec((2, 3), (2, 3), dense=True)
    fusion = FusionLayer(spec, WeightInit(14))
    x_lo = Tensor(np.random.default_rng(24).standard_normal((1, 3, 2, 2)))
    with no_grad():
        up = fusion._run_path(1, 0, x_lo)
    assert up.shape == (1, 2, 4, 4)
    block = up.data[:, :, 0:2, 0:2]
    assert (block[0, :, 0, 0] == block[0, :, 1, 1]).all()


# ---------------------------------------------------------------------------
# classifier head
# ---------------------------------------------------------------------------


def test_classifier_head_shapes_and_validation():
    head = ClassifierHead((6, 8, 10, 12), 5, WeightInit(15))
    rng = np.random.default_rng(25)
    xs = [Tensor(rng.standard_normal((2, c, r, r)))
          for c, r in ((6, 8), (8, 4), (10, 2), (12, 1))]
    with no_grad():
        logits = head.forward(xs)
    assert logits.shape == (2, 5)
    with pytest.raises(ShapeError):
        head.forward(xs[:3])
    with pytest.raises(ConfigError):
        ClassifierHead((6, 8, 10), 5, WeightInit(0))


def test_bn_eps_is_zero_for_exact_identity():
    assert BN_EPS == 0.0


# ---------------------------------------------------------------------------
# cost model stays synchronized with execution
# ---------------------------------------------------------------------------


def _assert_cost_matches_forward(layer, inputs, cost):
    counter = OpCounter()
    with no_grad(), count_ops(counter):
        if isinstance(inputs, list):
            layer.forward(inputs)
        else:
            layer.forward(inputs)
    assert counter.macs == cost.macs, f"{type(layer).__name__}: {counter.macs} != {cost.macs}"


@pytest.mark.parametrize("share,parallel,des,nlbn,h,w", [
    (True, True, True, True, 6, 8),
    (False, True, True, True, 6, 8),
    (True, False, False, False, 6, 8),
    (True, True, True, True, 5, 7),   # window padding in both orientations
    (True, True, True, True, 1, 9),
])
def test_attention_block_cost_matches_instrumented_forward(share, parallel, des, nlbn, h, w):
    rng = np.random.default_rng(26)
    block = AttentionBlock(AttnConfig(channels=8, window=2, head_dim=4,
                                      share_kv=share, use_parallel_conv=parallel,
                                      use_des=des, use_extra_nonlinearity_bn=nlbn),
                           WeightInit(16))
    x = Tensor(rng.standard_normal((1, 8, h, w)))
    _assert_cost_matches_forward(block, x, block.cost(h, w))


@pytest.mark.parametrize("use_mix", [True, False])
def test_mixcfn_cost_matches_instrumented_forward(use_mix):
    rng = np.random.default_rng(27)
    mix = MixCfn(MixCfnConfig(channels=6, ratio=2, use_mixcfn=use_mix), WeightInit(17))
    x = Tensor(rng.standard_normal((1, 6, 4, 5)))
    _assert_cost_matches_forward(mix, x, mix.cost(4, 5))


@pytest.mark.parametrize("efficient", [True, False])
def test_patch_embed_cost_matches_instrumented_forward(efficient):
    rng = np.random.default_rng(28)
    pe = PatchEmbed(5, 7, WeightInit(18), efficient=efficient)
    x = Tensor(rng.standard_normal((1, 5, 4, 6)))
    _assert_cost_matches_forward(pe, x, pe.cost(4, 6))


def test_stem_cost_matches_instrumented_forward():
    stem = Stem(8, WeightInit(19))
    x = Tensor(np.random.default_rng(29).standard_normal((1, 3, 16, 12)))
    _assert_cost_matches_forward(stem, x, stem.cost(16, 12))


@pytest.mark.parametrize("dense", [True, False])
def test_fusion_cost_matches_instrumented_forward(dense):
    spec = FusionSpec((4, 6), (4, 6, 8), dense=dense)
    fusion = FusionLayer(spec, WeightInit(20))
    rng = np.random.default_rng(30)
    xs = [Tensor(rng.standard_normal((1, 4, 8, 8))),
          Tensor(rng.standard_normal((1, 6, 4, 4)))]
    _assert_cost_matches_forward(fusion, xs, fusion.cost([(8, 8), (4, 4)]))


def test_classifier_head_cost_matches_instrumented_forward():
    head = ClassifierHead((6, 8, 10, 12), 5, WeightInit(21))
    rng = np.random.default_rng(31)
    sizes = [(8, 8), (4, 4), (2, 2), (1, 1)]
    xs = [Tensor(rng.standard_normal((1, c, h, w)))
          for (c, (h, w)) in zip((6, 8, 10, 12), sizes)]
    _assert_cost_matches_forward(head, xs, head.cost(sizes))


def test_des_cost_matches_instrumented_forward():
    shortcut = DiversityShortcut(12, WeightInit(22))
    x = Tensor(np.random.default_rng(32).standard_normal((1, 12, 3, 4)))
    _assert_cost_matches_forward(shortcut, x, shortcut.cost(3, 4))
