"""Shared test helpers."""
import numpy as np

from hrvit import ArchConfig


def random_tiny_config(rng: np.random.Generator) -> ArchConfig:
    """A random small-but-valid architecture config for fuzz tests.

    Widths stay tiny so hundreds of graphs build quickly; every constraint
    the validator enforces (divisibility, even heads, near-uniform third
    branch) is satisfied by construction.
    """
    ns = int(rng.integers(1, 5))
    channels, head_dim, window, ratio = [], [], [], []
    for _ in range(ns):
        hd = int(rng.integers(1, 4))
        heads = int(rng.choice([2, 4]))
        channels.append(hd * heads)
        head_dim.append(hd)
        window.append(int(rng.integers(1, 4)))
        ratio.append(int(rng.integers(1, 4)))
    mps = tuple(int(rng.integers(1, 3)) for _ in range(ns))
    n3 = int(rng.integers(1, 3))
    blocks = {}
    for s in range(1, ns + 1):
        for m in range(1, mps[s - 1] + 1):
            for b in range(1, s + 1):
                blocks[(s, m, b)] = n3 if b == 3 else int(rng.integers(1, 4))
    flag = lambda: bool(rng.integers(2))  # noqa: E731
    return ArchConfig(
        name="fuzz",
        num_stages=ns,
        channels=tuple(channels),
        head_dim=tuple(head_dim),
        window=tuple(window),
        mixcfn_ratio=tuple(ratio),
        modules_per_stage=mps,
        blocks=blocks,
        share_kv=flag(),
        eff_patch_embed=flag(),
        mixcfn=flag(),
        parallel_conv=flag(),
        extra_nl_bn=flag(),
        dense_fusion=flag(),
        des=flag(),
        max_drop_path=float(rng.uniform(0.0, 0.3)),
    )
