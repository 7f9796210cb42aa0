"""Tests for architecture configs, variants, graph building, and config files."""
import numpy as np
import numpy.testing as npt
import pytest

from hrvit import (
    ArchConfig,
    ConfigError,
    PatchEmbed,
    ShapeError,
    Stem,
    Tensor,
    WeightInit,
    build_graph,
    build_variant,
    checksum,
    config_text,
    drop_path_schedule,
    load_config,
    no_grad,
    parse_config,
    summarize,
    validate_assignment,
    variant_config_path,
)
from hrvit.blocks import AttentionBlock, AttnConfig, FusionLayer, FusionSpec, MixCfn, MixCfnConfig


# ---------------------------------------------------------------------------
# assignment validator
# ---------------------------------------------------------------------------


def test_validator_accepts_canonical_split():
    assert validate_assignment(20, (6, 6, 6, 2)) is True


def test_validator_rejects_front_loaded_split():
    assert validate_assignment(20, (17, 1, 1, 1)) is False


def test_validator_relaxed_mode_accepts_anything_matching_total():
    assert validate_assignment(20, (17, 1, 1, 1), relaxed=True) is True
    assert validate_assignment(20, (8, 8, 2, 2)) is False
    assert validate_assignment(20, (8, 8, 2, 2), relaxed=True) is True


def test_validator_uniform_and_boundary_splits():
    assert validate_assignment(20, (5, 5, 5, 5)) is True
    assert validate_assignment(24, (6, 6, 6, 6)) is True
    # boundary: max - min == ceil(total/modules) passes
    assert validate_assignment(20, (7, 6, 5, 2)) is True


def test_validator_rejects_wrong_total():
    with pytest.raises(ConfigError):
        validate_assignment(20, (6, 6, 6, 6))
    with pytest.raises(ConfigError):
        validate_assignment(5, ())


# ---------------------------------------------------------------------------
# variants
# ---------------------------------------------------------------------------


def test_variant_b1_topology():
    cfg = build_variant("b1")
    cfg.validate()
    assert cfg.channels == (32, 64, 128, 256)
    assert cfg.head_dim == (16, 32, 32, 32)
    assert cfg.window == (1, 2, 7, 7)
    assert cfg.mixcfn_ratio == (4, 4, 4, 4)
    assert cfg.modules_per_stage == (1, 1, 2, 2)
    assert cfg.third_branch_split() == (6, 6, 6, 2)
    info = summarize(cfg)
    assert info["blocks_per_branch"] == {1: 6, 2: 5, 3: 20, 4: 4}


def test_variant_b2_topology():
    cfg = build_variant("b2")
    assert cfg.channels == (48, 96, 240, 384)
    assert cfg.head_dim == (24, 24, 24, 24)
    assert cfg.mixcfn_ratio == (2, 3, 3, 3)
    assert cfg.third_branch_split() == (6, 6, 6, 6)
    assert summarize(cfg)["blocks_per_branch"] == {1: 6, 2: 5, 3: 24, 4: 4}


def test_variant_b3_topology():
    cfg = build_variant("b3")
    assert cfg.channels == (64, 128, 256, 512)
    assert cfg.head_dim == (32, 32, 32, 32)
    assert cfg.mixcfn_ratio == (2, 2, 2, 2)
    assert cfg.third_branch_split() == (6, 6, 6, 6)
    assert summarize(cfg)["blocks_per_branch"] == {1: 6, 2: 5, 3: 24, 4: 6}


def test_cityscapes_windows_only_for_b3():
    cfg = build_variant("b3", cityscapes_windows=True)
    assert cfg.window == (1, 2, 9, 9)
    with pytest.raises(ConfigError):
        build_variant("b1", cityscapes_windows=True)


def test_unknown_variant_rejected():
    with pytest.raises(ConfigError):
        build_variant("b4")


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------


def _tiny_cfg(**overrides):
    base = dict(
        name="t", num_stages=2, channels=(4, 8), head_dim=(2, 4),
        window=(1, 2), mixcfn_ratio=(2, 2), modules_per_stage=(1, 1),
        blocks={(1, 1, 1): 1, (2, 1, 1): 1, (2, 1, 2): 1},
    )
    base.update(overrides)
    return ArchConfig(**base)


def test_config_rejects_odd_head_count():
    with pytest.raises(ConfigError, match="even"):
        _tiny_cfg(channels=(6, 8), head_dim=(2, 4)).validate()


def test_config_rejects_indivisible_head_dim():
    with pytest.raises(ConfigError, match="divide"):
        _tiny_cfg(channels=(5, 8), head_dim=(2, 4)).validate()


def test_config_rejects_wrong_sequence_lengths():
    with pytest.raises(ConfigError, match="entries"):
        _tiny_cfg(window=(1, 2, 3)).validate()


def test_config_rejects_block_map_mismatch():
    with pytest.raises(ConfigError, match="block map"):
        _tiny_cfg(blocks={(1, 1, 1): 1, (2, 1, 1): 1}).validate()
    with pytest.raises(ConfigError, match="block map"):
        _tiny_cfg(blocks={(1, 1, 1): 1, (2, 1, 1): 1, (2, 1, 2): 1, (3, 1, 1): 1}).validate()


def test_config_rejects_bad_drop_path():
    with pytest.raises(ConfigError, match="max_drop_path"):
        _tiny_cfg(max_drop_path=1.5).validate()


def test_config_enforces_near_uniform_third_branch():
    blocks = {}
    for s in range(1, 5):
        for m in range(1, 3 if s >= 3 else 2):
            for b in range(1, s + 1):
                blocks[(s, m, b)] = 1
    blocks[(3, 1, 3)] = 17
    blocks[(3, 2, 3)] = 1
    blocks[(4, 1, 3)] = 1
    blocks[(4, 2, 3)] = 1
    cfg = ArchConfig(
        name="skew", num_stages=4, channels=(4, 8, 8, 8), head_dim=(2, 4, 4, 4),
        window=(1, 2, 2, 2), mixcfn_ratio=(2, 2, 2, 2),
        modules_per_stage=(1, 1, 2, 2), blocks=blocks,
    )
    with pytest.raises(ConfigError, match="near-uniform"):
        cfg.validate()
    cfg_relaxed = ArchConfig(
        name="skew", num_stages=4, channels=(4, 8, 8, 8), head_dim=(2, 4, 4, 4),
        window=(1, 2, 2, 2), mixcfn_ratio=(2, 2, 2, 2),
        modules_per_stage=(1, 1, 2, 2), blocks=blocks, relaxed_assignment=True,
    )
    cfg_relaxed.validate()


# ---------------------------------------------------------------------------
# drop-path schedule
# ---------------------------------------------------------------------------


def test_drop_path_schedule_linear_ramp_on_b1():
    cfg = build_variant("b1")
    rates = drop_path_schedule(cfg)
    # third branch: cumulative block t of 20 gets 0.1 * t / 20
    offsets = {(3, 1): 0, (3, 2): 6, (4, 1): 12, (4, 2): 18}
    for (s, m), off in offsets.items():
        for t in range(1, cfg.blocks[(s, m, 3)] + 1):
            assert rates[(s, m, 3, t)] == pytest.approx(0.1 * (off + t) / 20.0, abs=1e-15)
    # first third-branch block gets max/total, the last exactly max
    assert rates[(3, 1, 3, 1)] == pytest.approx(0.005, abs=1e-15)
    assert rates[(4, 2, 3, 2)] == pytest.approx(0.1, abs=1e-15)


def test_drop_path_other_branches_inherit_module_maximum():
    cfg = build_variant("b1")
    rates = drop_path_schedule(cfg)
    assert rates[(3, 1, 1, 1)] == pytest.approx(0.03, abs=1e-15)
    assert rates[(3, 2, 2, 1)] == pytest.approx(0.06, abs=1e-15)
    assert rates[(4, 1, 4, 1)] == pytest.approx(0.09, abs=1e-15)
    assert rates[(4, 2, 4, 2)] == pytest.approx(0.1, abs=1e-15)


def test_drop_path_stages_one_and_two_are_zero():
    rates = drop_path_schedule(build_variant("b1"))
    assert rates[(1, 1, 1, 1)] == 0.0
    assert rates[(2, 1, 1, 1)] == 0.0
    assert rates[(2, 1, 2, 1)] == 0.0


def test_drop_path_rates_attached_to_graph_nodes():
    graph = build_graph(build_variant("b1"), seed=0)
    by_id = {n.node_id: n for n in graph.nodes}
    assert by_id["stage3.module1.branch3.block6.attn"].drop_path == pytest.approx(0.03)
    assert by_id["stage4.module2.branch3.block2.attn"].drop_path == pytest.approx(0.1)
    assert by_id["stage1.module1.branch1.block1.attn"].drop_path == 0.0


# ---------------------------------------------------------------------------
# graph building and execution
# ---------------------------------------------------------------------------


def test_graph_node_inventory_for_b1():
    graph = build_graph(build_variant("b1"), num_classes=10, seed=0)
    kinds = {}
    for n in graph.nodes:
        kinds[n.kind] = kinds.get(n.kind, 0) + 1
    assert kinds == {
        "stem": 1,
        "fusion": 6,          # one per module
        "patch_embed": 17,    # sum of branch counts over modules
        "attention": 35,      # 6 + 5 + 20 + 4 blocks
        "mixcfn": 35,
        "head": 1,
    }
    assert graph.nodes[0].kind == "stem"
    assert graph.nodes[-1].kind == "head"
    assert graph.nodes[1].node_id == "stage1.module1.fusion"
    assert graph.nodes[2].node_id == "stage1.module1.branch1.embed"
    assert graph.nodes[3].node_id == "stage1.module1.branch1.block1.attn"
    assert graph.nodes[4].node_id == "stage1.module1.branch1.block1.mixcfn"


def test_forward_output_shapes_and_trace():
    graph = build_graph(build_variant("b1"), num_classes=7, seed=0)
    x = Tensor(np.random.default_rng(0).standard_normal((1, 3, 64, 64)))
    seen = []
    with no_grad():
        branches, logits = graph.forward(x, trace=lambda n, outs: seen.append(n.node_id))
    assert [tuple(b.shape) for b in branches] == [
        (1, 32, 16, 16), (1, 64, 8, 8), (1, 128, 4, 4), (1, 256, 2, 2)]
    assert logits.shape == (1, 7)
    assert len(seen) == len(graph.nodes)
    assert seen[0] == "stem" and seen[-1] == "head"


def test_forward_validates_resolution_and_channels():
    graph = build_graph(build_variant("b1"), seed=0)
    with pytest.raises(ShapeError, match="divisible"):
        with no_grad():
            graph.forward(Tensor(np.zeros((1, 3, 60, 64))))
    with pytest.raises(ShapeError):
        with no_grad():
            graph.forward(Tensor(np.zeros((1, 4, 64, 64))))


def test_head_requires_four_stages():
    cfg = _tiny_cfg()
    with pytest.raises(ConfigError):
        build_graph(cfg, num_classes=10, seed=0)


def test_same_seed_builds_bit_identical_graphs():
    g1 = build_graph(build_variant("b1"), seed=11)
    g2 = build_graph(build_variant("b1"), seed=11)
    g3 = build_graph(build_variant("b1"), seed=12)
    w1 = [checksum(t.data) for _, t in g1.named_weights()]
    w2 = [checksum(t.data) for _, t in g2.named_weights()]
    w3 = [checksum(t.data) for _, t in g3.named_weights()]
    assert w1 == w2
    assert w1 != w3


def test_single_stage_graph_composes_like_manual_pipeline():
    cfg = ArchConfig(
        name="one", num_stages=1, channels=(4,), head_dim=(2,), window=(2,),
        mixcfn_ratio=(2,), modules_per_stage=(1,), blocks={(1, 1, 1): 2},
    )
    graph = build_graph(cfg, seed=5)
    x = Tensor(np.random.default_rng(1).standard_normal((1, 3, 16, 16)))
    with no_grad():
        branches, logits = graph.forward(x)
    assert logits is None

    # rebuild the same pipeline by hand, drawing weights in the same order
    winit = WeightInit(5)
    stem = Stem(4, winit)
    fusion = FusionLayer(FusionSpec((4,), (4,)), winit)
    embed = PatchEmbed(4, 4, winit, efficient=True)
    blocks = []
    for _ in range(2):
        blocks.append(AttentionBlock(AttnConfig(channels=4, window=2, head_dim=2), winit))
        blocks.append(MixCfn(MixCfnConfig(channels=4, ratio=2), winit))
    with no_grad():
        y = stem.forward(x)
        y = fusion.forward([y])[0]
        y = embed.forward(y)
        for blk in blocks:
            y = blk.forward(y)
    assert (branches[0].data == y.data).all()


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


def test_config_text_roundtrip_for_all_variants():
    for name in ("b1", "b2", "b3"):
        cfg = build_variant(name)
        assert parse_config(config_text(cfg), source="roundtrip") == cfg


def test_packaged_config_files_match_builtin_variants(tmp_path):
    for name in ("b1", "b2", "b3"):
        path = variant_config_path(name)
        assert load_config(path) == build_variant(name)


def test_parse_config_reports_unknown_key_with_line_number():
    text = config_text(build_variant("b1")) + "mystery_knob = 3\n"
    lineno = len(text.splitlines())
    with pytest.raises(ConfigError, match=rf":{lineno}: unknown key 'mystery_knob'"):
        parse_config(text, source="test")


def test_parse_config_reports_missing_key_by_name():
    text = "\n".join(line for line in config_text(build_variant("b1")).splitlines()
                     if not line.startswith("head_dim"))
    with pytest.raises(ConfigError, match="missing required key 'head_dim'"):
        parse_config(text, source="test")


def test_parse_config_rejects_duplicate_keys():
    text = config_text(build_variant("b1")) + "name = again\n"
    with pytest.raises(ConfigError, match="duplicate key 'name'"):
        parse_config(text, source="test")


def test_parse_config_rejects_malformed_lines_and_values():
    with pytest.raises(ConfigError, match=":1:"):
        parse_config("just some words\n", source="test")
    text = config_text(build_variant("b1")).replace("share_kv = true", "share_kv = yes")
    with pytest.raises(ConfigError, match="share_kv"):
        parse_config(text, source="test")
    text = config_text(build_variant("b1")).replace(
        "channels = 32,64,128,256", "channels = 32,sixty-four,128,256")
    with pytest.raises(ConfigError, match="channels"):
        parse_config(text, source="test")


def test_parse_config_rejects_wrong_blocks_arity():
    text = config_text(build_variant("b1")).replace(
        "blocks_stage2_module1 = 1,1", "blocks_stage2_module1 = 1,1,1")
    with pytest.raises(ConfigError, match="blocks_stage2_module1"):
        parse_config(text, source="test")


def test_parse_config_ignores_comments_and_blanks():
    text = "# leading comment\n\n" + config_text(build_variant("b1")) + "\n# trailing\n"
    assert parse_config(text, source="test") == build_variant("b1")


def test_summarize_lists_drop_path_per_block():
    info = summarize(build_variant("b1"))
    s3m1 = info["stages"][2]["modules"][0]["branches"][2]
    assert s3m1["branch"] == 3 and s3m1["blocks"] == 6
    npt.assert_allclose(s3m1["drop_path"], [0.1 * t / 20 for t in range(1, 7)], atol=1e-12)
