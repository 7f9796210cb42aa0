"""Acceptance gate: the numbered release criteria, each with its stated
tolerance and wall-clock budget.  Every test here must stay green; none may
be skipped or loosened.  Reference scale numbers are the published totals
for the three canonical model sizes.
"""
import time

import numpy as np
import pytest

from conftest import random_tiny_config
from hrvit import (
    ConfigError,
    OpCounter,
    Tensor,
    ablation_report,
    asymptotic_cost,
    build_graph,
    build_variant,
    count_flops,
    count_ops,
    count_params,
    count_params_traversal,
    exact_block_cost,
    no_grad,
    run_suite,
    validate_assignment,
    window_sweep,
)

REFERENCE = {
    # variant: (params with cls:1000 head, MACs at 224x224 with that head)
    "b1": (19.7e6, 2.7e9),
    "b2": (32.5e6, 5.1e9),
    "b3": (37.9e6, 5.7e9),
}


class Budget:
    """Context manager asserting the enclosed block stays under a deadline."""

    def __init__(self, seconds: float):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.monotonic()
        return self

    def __exit__(self, *exc):
        if exc[0] is None:
            elapsed = time.monotonic() - self.start
            assert elapsed < self.seconds, (
                f"exceeded {self.seconds}s budget: took {elapsed:.1f}s")
        return False


# -- criterion 1: parameter totals ------------------------------------------


@pytest.mark.parametrize("name", ["b1", "b2", "b3"])
def test_criterion_1_parameter_totals_within_10_percent(name):
    ref_params, _ = REFERENCE[name]
    with Budget(5.0):
        graph = build_graph(build_variant(name), num_classes=1000, seed=0)
        total = count_params(graph).total_params
    assert abs(total - ref_params) / ref_params <= 0.10, total


# -- criterion 2: MAC totals at 224x224 --------------------------------------


@pytest.mark.parametrize("name", ["b1", "b2", "b3"])
def test_criterion_2_flop_totals_within_15_percent(name):
    _, ref_macs = REFERENCE[name]
    with Budget(5.0):
        graph = build_graph(build_variant(name), num_classes=1000, seed=0)
        total = count_flops(graph, 224, 224).total_macs
    assert abs(total - ref_macs) / ref_macs <= 0.15, total


# -- criterion 3: ablation directions and KV-sharing magnitude ---------------


def test_criterion_3_ablation_signs_and_kv_sharing_delta():
    # delta = cost(toggle flipped) - cost(default); sign of 0 means exact zero
    expected_sign = {
        "share_kv": (+1, +1),        # separate K projection adds cost
        "eff_patch_embed": (+1, +1),  # dense conv embedding costs more
        "mixcfn": (-1, -1),           # plain FFN is cheaper
        "parallel_conv": (-1, -1),
        "extra_nl_bn": (-1, 0),       # BN affine params only; no MACs
        "dense_fusion": (-1, -1),     # sparse fusion drops paths
        "des": (-1, -1),
    }
    cfg = build_variant("b1")
    with Budget(30.0):
        for toggle, (sp, sf) in expected_sign.items():
            row = ablation_report(cfg, toggle, 224, 224,
                                  num_classes=1000, seed=0)
            assert np.sign(row.delta_params) == sp, (toggle, row.delta_params)
            assert np.sign(row.delta_flops) == sf, (toggle, row.delta_flops)
        kv = ablation_report(cfg, "share_kv", 512, 512, seed=0)
    # reference deltas for un-sharing KV at 512x512: +0.7M params, +0.6G MACs
    assert abs(kv.delta_params - 0.7e6) / 0.7e6 <= 0.25, kv.delta_params
    assert abs(kv.delta_flops - 0.6e9) / 0.6e9 <= 0.25, kv.delta_flops


# -- criterion 4: operation oracles ------------------------------------------


def test_criterion_4_oracle_suite_within_1e10():
    with Budget(60.0):
        reports = run_suite("oracle", seed=0)
    per_family = {}
    for r in reports:
        family = r.name.split("/")[1]
        per_family[family] = per_family.get(family, 0) + 1
        assert r.error <= 1e-10, (r.name, r.error)
        assert r.passed
    assert set(per_family) == {"matmul", "conv2d", "attention", "des"}
    assert all(n >= 10 for n in per_family.values()), per_family


# -- criterion 5: gradient checks ---------------------------------------------


def test_criterion_5_gradient_checks_within_1e4():
    with Budget(300.0):
        reports = run_suite("grad", seed=0)
    per_family = {}
    for r in reports:
        family = r.name.split("/")[1]
        per_family[family] = per_family.get(family, 0) + 1
        assert r.error <= 1e-4, (r.name, r.error)
        assert r.passed
    # every block type exercised, at least three instances each
    for required in ("attention_block", "mixcfn", "patch_embed_efficient",
                     "patch_embed_conv", "stem", "fusion", "head", "des",
                     "windowed_mhsa"):
        assert per_family.get(required, 0) >= 3, (required, per_family)
    assert all(n >= 3 for n in per_family.values()), per_family


# -- criterion 6: structural invariants ---------------------------------------


def test_criterion_6_invariant_suite_passes():
    with Budget(120.0):
        reports = run_suite("invariant", seed=0)
    for r in reports:
        assert r.passed, (r.name, r.error)
    assert len(reports) >= 10


# -- criterion 7: asymptotic band and window scaling --------------------------


def test_criterion_7_exact_vs_asymptotic_band_and_window_growth():
    with Budget(120.0):
        for name in ("b1", "b2", "b3"):
            cfg = build_variant(name)
            for res in (64, 128, 256, 512):
                h1 = w1 = res // 4
                for br in range(1, 5):
                    base = cfg.channels[br - 1] / 2 ** (br - 1)
                    asym = asymptotic_cost(br, base, h1, w1,
                                           cfg.window[br - 1],
                                           cfg.mixcfn_ratio[br - 1])
                    exact = exact_block_cost(cfg, br, res, res)
                    for key in ("params_attention", "params_mixcfn",
                                "flops_attention", "flops_mixcfn"):
                        ratio = exact[key] / getattr(asym, key)
                        assert 0.25 <= ratio <= 4.0, (name, res, br, key, ratio)
        sweep = window_sweep(build_variant("b1"), (7, 9, 11, 13, 15),
                             512, 512, seed=0)
    assert sweep.strictly_increasing, [p.macs for p in sweep.points]


# -- criterion 8: counting self-consistency on fuzzed topologies --------------


def test_criterion_8_param_formulas_match_traversal_on_100_configs():
    rng = np.random.default_rng(2024)
    with Budget(120.0):
        for i in range(100):
            cfg = random_tiny_config(rng)
            classes = 7 if (cfg.num_stages == 4 and i % 5 == 0) else None
            graph = build_graph(cfg, num_classes=classes,
                                seed=int(rng.integers(10_000)))
            report = count_params(graph)  # per-node formula check built in
            assert report.total_params == count_params_traversal(graph), cfg.name


def test_criterion_8_flop_totals_match_instrumented_forward():
    rng = np.random.default_rng(2025)
    with Budget(120.0):
        for _ in range(10):
            cfg = random_tiny_config(rng)
            graph = build_graph(cfg, seed=int(rng.integers(10_000)))
            d = graph.min_divisor()
            h = d * int(rng.integers(1, 4))
            w = d * int(rng.integers(1, 4))
            counter = OpCounter()
            x = Tensor(rng.standard_normal((1, 3, h, w)))
            with no_grad(), count_ops(counter):
                graph.forward(x)
            assert count_flops(graph, h, w).total_macs == counter.macs, (
                cfg.name, h, w)


# -- criterion 9: block-assignment validator ----------------------------------


def test_criterion_9_assignment_validator():
    with Budget(5.0):
        assert validate_assignment(20, (6, 6, 6, 2)) is True
        assert validate_assignment(20, (17, 1, 1, 1)) is False
        # permitted only under the relaxed escape hatch
        assert validate_assignment(20, (17, 1, 1, 1), relaxed=True) is True
        with pytest.raises(ConfigError):
            validate_assignment(20, (6, 6, 6, 3))  # wrong total
