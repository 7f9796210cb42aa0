"""Verification suites: independent naive oracles, gradient checks, and
structural invariants.

The oracles are deliberately written in the slowest, most literal style
possible (explicit Python loops, explicit Kronecker matrices) so that they
share no code path with the production implementations they certify.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import blocks as B
from . import tensor as T
from .init import WeightInit, checksum
from .tensor import ConfigError, Tensor, grad_check, no_grad
from .topology import build_variant, config_text, drop_path_schedule, parse_config


@dataclass
class CheckReport:
    """Outcome of one verification: ``error <= tolerance`` must hold."""

    name: str
    error: float
    tolerance: float
    passed: bool


def _report(name: str, error: float, tolerance: float) -> CheckReport:
    error = float(error)
    return CheckReport(name=name, error=error, tolerance=float(tolerance),
                       passed=bool(np.isfinite(error) and error <= tolerance))


def _rel_err(got: np.ndarray, ref: np.ndarray) -> float:
    return float(np.max(np.abs(got - ref)) / max(1.0, float(np.max(np.abs(ref)))))


# ---------------------------------------------------------------------------
# naive oracles
# ---------------------------------------------------------------------------


def oracle_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop 2-D matrix multiply."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def oracle_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None,
                  stride: int = 1, padding: int = 0, groups: int = 1) -> np.ndarray:
    """Fully explicit grouped 2-D convolution (six nested loops)."""
    n, cin, h, wd = x.shape
    cout, cpg, kh, kw = w.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    opg = cout // groups
    for ni in range(n):
        for co in range(cout):
            g = co // opg
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(cpg):
                        for uy in range(kh):
                            for ux in range(kw):
                                iy = oy * stride + uy - padding
                                ix = ox * stride + ux - padding
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc += x[ni, g * cpg + ci, iy, ix] * w[co, ci, uy, ux]
                    out[ni, co, oy, ox] = acc + (0.0 if b is None else b[co])
    return out


def _hardswish_np(x: np.ndarray) -> np.ndarray:
    return x * np.clip(x + 3.0, 0.0, 6.0) / 6.0


def oracle_window_attention(win: np.ndarray, wq: np.ndarray, bq: np.ndarray,
                            wk: np.ndarray, bk: np.ndarray,
                            wv: np.ndarray, bv: np.ndarray, d_k: int,
                            pad_mask: np.ndarray | None = None) -> np.ndarray:
    """Per-query-key double-loop attention over a batch of windows.

    Mirrors the contract of :func:`hrvit.blocks.windowed_mhsa`: positions are
    flattened row-major, channels split head-major, masked keys get exactly
    zero weight, masked query rows give exactly zero output.
    """
    bsz, c, h, w = win.shape
    heads = c // d_k
    out = np.zeros_like(win)
    scale = 1.0 / math.sqrt(d_k)
    for n in range(bsz):
        tokens = win[n].transpose(1, 2, 0).reshape(h * w, c)
        masked = (pad_mask[n].reshape(h * w)
                  if pad_mask is not None else np.zeros(h * w, dtype=bool))
        q = tokens @ wq.T + bq
        k = tokens @ wk.T + bk
        v = tokens @ wv.T + bv
        result = np.zeros((h * w, c))
        for hd in range(heads):
            sl = slice(hd * d_k, (hd + 1) * d_k)
            for i in range(h * w):
                if masked[i]:
                    continue
                scores = np.full(h * w, -np.inf)
                for j in range(h * w):
                    if masked[j]:
                        continue
                    scores[j] = float(q[i, sl] @ k[j, sl]) * scale
                scores -= scores.max()
                weights = np.exp(scores)
                weights /= weights.sum()
                acc = np.zeros(d_k)
                for j in range(h * w):
                    if weights[j] > 0.0:
                        acc += weights[j] * v[j, sl]
                result[i, sl] = acc
        out[n] = result.reshape(h, w, c).transpose(2, 0, 1)
    return out


def oracle_des(tokens: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Explicit Kronecker-matrix form of the diversity shortcut.

    Folding a C-vector row-major into p x q and computing
    A @ hardswish(X~ @ B^T) equals applying the explicit matrices
    (I_p (x) B) and (A (x) I_q) to the unfolded vector with hardswish
    in between.
    """
    p, q = a.shape[0], b.shape[0]
    fold_b = np.kron(np.eye(p), b)
    unfold_a = np.kron(a, np.eye(q))
    out = np.zeros_like(tokens)
    for i in range(tokens.shape[0]):
        out[i] = unfold_a @ _hardswish_np(fold_b @ tokens[i])
    return out


# ---------------------------------------------------------------------------
# oracle suite
# ---------------------------------------------------------------------------

ORACLE_TOL = 1e-10


def oracle_suite(seed: int = 0) -> list[CheckReport]:
    """Production ops versus naive oracles on randomized instances."""
    reports: list[CheckReport] = []

    for k in range(10):
        rng = np.random.default_rng(seed * 7919 + k)
        n, kk, m = rng.integers(1, 7, size=3)
        a = rng.standard_normal((n, kk))
        b = rng.standard_normal((kk, m))
        with no_grad():
            got = T.matmul(Tensor(a), Tensor(b)).data
        reports.append(_report(f"oracle/matmul/{k}", _rel_err(got, oracle_matmul(a, b)),
                               ORACLE_TOL))

    conv_cases = [
        dict(n=1, cin=3, h=5, w=5, cout=4, kh=3, kw=3, stride=1, padding=1, groups=1),
        dict(n=2, cin=4, h=6, w=5, cout=6, kh=3, kw=3, stride=2, padding=1, groups=2),
        dict(n=1, cin=6, h=4, w=7, cout=6, kh=3, kw=3, stride=1, padding=1, groups=6),
        dict(n=1, cin=2, h=7, w=6, cout=4, kh=5, kw=5, stride=2, padding=2, groups=1),
        dict(n=2, cin=3, h=8, w=8, cout=3, kh=3, kw=3, stride=2, padding=1, groups=3),
        dict(n=1, cin=4, h=5, w=9, cout=8, kh=1, kw=1, stride=1, padding=0, groups=1),
        dict(n=1, cin=8, h=6, w=6, cout=8, kh=5, kw=5, stride=1, padding=2, groups=8),
        dict(n=3, cin=2, h=5, w=4, cout=6, kh=3, kw=3, stride=1, padding=0, groups=1),
        dict(n=1, cin=6, h=9, w=5, cout=4, kh=3, kw=3, stride=3, padding=1, groups=2),
        dict(n=2, cin=5, h=4, w=4, cout=10, kh=2, kw=2, stride=2, padding=0, groups=5),
    ]
    for k, case in enumerate(conv_cases):
        rng = np.random.default_rng(seed * 104729 + k)
        x = rng.standard_normal((case["n"], case["cin"], case["h"], case["w"]))
        w = rng.standard_normal((case["cout"], case["cin"] // case["groups"],
                                 case["kh"], case["kw"]))
        bias = rng.standard_normal(case["cout"])
        with no_grad():
            got = T.conv2d(Tensor(x), Tensor(w), Tensor(bias), stride=case["stride"],
                           padding=case["padding"], groups=case["groups"]).data
        ref = oracle_conv2d(x, w, bias, stride=case["stride"], padding=case["padding"],
                            groups=case["groups"])
        reports.append(_report(f"oracle/conv2d/{k}", _rel_err(got, ref), ORACLE_TOL))

    attn_cases = [
        dict(b=1, c=8, h=2, w=5, d_k=4, mask_rows=0),
        dict(b=2, c=8, h=3, w=3, d_k=2, mask_rows=0),
        dict(b=1, c=12, h=2, w=4, d_k=4, mask_rows=1),
        dict(b=2, c=6, h=4, w=2, d_k=3, mask_rows=1),
        dict(b=1, c=16, h=3, w=4, d_k=8, mask_rows=2),
        dict(b=1, c=4, h=5, w=2, d_k=2, mask_rows=0),
        dict(b=3, c=8, h=2, w=2, d_k=4, mask_rows=1),
        dict(b=1, c=10, h=4, w=3, d_k=5, mask_rows=2),
        dict(b=2, c=8, h=3, w=5, d_k=4, mask_rows=1),
        dict(b=1, c=6, h=6, w=2, d_k=6, mask_rows=3),
    ]
    for k, case in enumerate(attn_cases):
        rng = np.random.default_rng(seed * 1299709 + k)
        c = case["c"]
        win = rng.standard_normal((case["b"], c, case["h"], case["w"]))
        wq, wk, wv = (rng.standard_normal((c, c)) * 0.3 for _ in range(3))
        bq, bk, bv = (rng.standard_normal(c) * 0.1 for _ in range(3))
        mask = None
        if case["mask_rows"]:
            mask = np.zeros((case["b"], case["h"], case["w"]), dtype=bool)
            mask[:, -case["mask_rows"]:, :] = True
        with no_grad():
            got = B.windowed_mhsa(Tensor(win), Tensor(wq), Tensor(wk), Tensor(wv),
                                  case["d_k"], pad_mask=mask, bq=Tensor(bq),
                                  bk=Tensor(bk), bv=Tensor(bv)).data
        ref = oracle_window_attention(win, wq, bq, wk, bk, wv, bv, case["d_k"], mask)
        reports.append(_report(f"oracle/attention/{k}", _rel_err(got, ref), ORACLE_TOL))

    for k in range(10):
        rng = np.random.default_rng(seed * 15485863 + k)
        c = int(rng.choice([4, 6, 8, 9, 12, 16, 20, 24, 30, 36]))
        shortcut = B.DiversityShortcut(c, WeightInit(seed * 31 + k))
        n, h, w = (int(v) for v in rng.integers(1, 4, size=3))
        x = rng.standard_normal((n, c, h, w))
        with no_grad():
            got = shortcut.forward(Tensor(x)).data
        tokens = x.transpose(0, 2, 3, 1).reshape(n * h * w, c)
        ref_tokens = oracle_des(tokens, shortcut.a.data, shortcut.b.data)
        ref = ref_tokens.reshape(n, h, w, c).transpose(0, 3, 1, 2)
        reports.append(_report(f"oracle/des/{k}", _rel_err(got, ref), ORACLE_TOL))

    return reports


# ---------------------------------------------------------------------------
# gradient suite
# ---------------------------------------------------------------------------

GRAD_TOL = 1e-4
GRAD_EPS = 1e-5


def _away_from(rng, shape, kinks, margin=1e-2, scale=1.5):
    """Random values kept ``margin`` away from non-differentiable points."""
    x = rng.standard_normal(shape) * scale
    for kink in kinks:
        near = np.abs(x - kink) < margin
        x = np.where(near, x + 4 * margin, x)
    return x


def _grad_cases(seed: int):
    """Yield (name, f, x0) gradient-check instances, three per family."""
    for k in range(3):
        rng = np.random.default_rng(seed * 6151 + k)

        a0 = rng.standard_normal((3, 4))
        b0 = Tensor(rng.standard_normal((4, 5)))
        yield f"grad/matmul_lhs/{k}", (lambda b0: lambda t: T.matmul(t, b0))(b0), a0
        a1 = Tensor(rng.standard_normal((2, 3, 4)))
        yield f"grad/matmul_rhs/{k}", (lambda a1: lambda t: T.matmul(a1, t))(a1), \
            rng.standard_normal((4, 2))

        xc = Tensor(rng.standard_normal((1, 4, 5, 6)))
        wc = Tensor(rng.standard_normal((6, 2, 3, 3)) * 0.4)
        bc = Tensor(rng.standard_normal(6) * 0.1)
        yield f"grad/conv2d_input/{k}", \
            (lambda wc, bc: lambda t: T.conv2d(t, wc, bc, stride=2, padding=1, groups=2))(wc, bc), \
            rng.standard_normal((1, 4, 5, 6))
        yield f"grad/conv2d_weight/{k}", \
            (lambda xc, bc: lambda t: T.conv2d(xc, t, bc, stride=1, padding=1, groups=2))(xc, bc), \
            rng.standard_normal((6, 2, 3, 3)) * 0.4

        yield f"grad/relu/{k}", T.relu, _away_from(rng, (3, 7), kinks=(0.0,))
        yield f"grad/gelu/{k}", T.gelu, rng.standard_normal((4, 5))
        yield f"grad/hardswish/{k}", T.hardswish, _away_from(rng, (3, 6), kinks=(-3.0, 3.0))
        yield f"grad/softmax/{k}", (lambda t: T.softmax(t, axis=-1)), rng.standard_normal((3, 6))

        g0 = Tensor(rng.standard_normal(8) * 0.5 + 1.0)
        be0 = Tensor(rng.standard_normal(8) * 0.1)
        yield f"grad/layer_norm_x/{k}", \
            (lambda g0, be0: lambda t: T.layer_norm(t, g0, be0))(g0, be0), \
            rng.standard_normal((2, 5, 8))
        xl = Tensor(rng.standard_normal((2, 5, 8)))
        yield f"grad/layer_norm_gamma/{k}", \
            (lambda xl, be0: lambda t: T.layer_norm(xl, t, be0))(xl, be0), \
            rng.standard_normal(8)
        yield f"grad/layer_norm_beta/{k}", \
            (lambda xl, g0: lambda t: T.layer_norm(xl, g0, t))(xl, g0), \
            rng.standard_normal(8)

        gb = Tensor(rng.standard_normal(5) * 0.3 + 1.0)
        bb = Tensor(rng.standard_normal(5) * 0.1)
        mu = Tensor(rng.standard_normal(5) * 0.2)
        var = Tensor(rng.uniform(0.5, 2.0, size=5))
        yield f"grad/batch_norm_x/{k}", \
            (lambda gb, bb, mu, var: lambda t: T.batch_norm_inference(t, gb, bb, mu, var, eps=1e-5))(
                gb, bb, mu, var), \
            rng.standard_normal((2, 5, 3, 4))
        xb = Tensor(rng.standard_normal((2, 5, 3, 4)))
        yield f"grad/batch_norm_gamma/{k}", \
            (lambda xb, bb, mu, var: lambda t: T.batch_norm_inference(xb, t, bb, mu, var, eps=1e-5))(
                xb, bb, mu, var), \
            rng.standard_normal(5)

        yield f"grad/upsample/{k}", (lambda t: T.nearest_upsample(t, 2)), \
            rng.standard_normal((1, 3, 2, 3))
        yield f"grad/pad/{k}", (lambda t: T.pad_zeros(t, bottom=2, right=1)), \
            rng.standard_normal((1, 2, 3, 4))
        yield f"grad/gap/{k}", T.global_avg_pool, rng.standard_normal((2, 5, 3, 4))

        def reshape_chain(t: Tensor) -> Tensor:
            y = T.transpose(T.reshape(t, (2, 6, 4)), (1, 0, 2))
            y = T.narrow(y, 0, 1, 4)
            return T.concat([y, y], axis=2)

        yield f"grad/reshape_chain/{k}", reshape_chain, rng.standard_normal((2, 24))

        shortcut = B.DiversityShortcut(12, WeightInit(seed * 13 + k))
        yield f"grad/des/{k}", shortcut.forward, rng.standard_normal((1, 12, 3, 4)) * 2.0

        c, dk, s = 8, 4, 2
        wq, wk, wv = (Tensor(rng.standard_normal((c, c)) * 0.3) for _ in range(3))
        bq, bk, bv = (Tensor(rng.standard_normal(c) * 0.1) for _ in range(3))

        def mhsa_chain(t: Tensor, wq=wq, wk=wk, wv=wv, bq=bq, bk=bk, bv=bv):
            win, mask = B.window_partition(t, s, "horizontal")
            out = B.windowed_mhsa(win, wq, wk, wv, dk, pad_mask=mask,
                                  bq=bq, bk=bk, bv=bv)
            return B.window_merge(out, "horizontal", t.shape[2], t.shape[3])

        yield f"grad/windowed_mhsa/{k}", mhsa_chain, rng.standard_normal((1, c, 3, 4))

        attn = B.AttentionBlock(B.AttnConfig(
            channels=8, window=2, head_dim=4,
            share_kv=(k != 1), use_parallel_conv=(k != 2),
            use_des=True, use_extra_nonlinearity_bn=(k != 2)),
            WeightInit(seed * 17 + k))
        yield f"grad/attention_block/{k}", attn.forward, rng.standard_normal((1, 8, 3, 4))

        mix = B.MixCfn(B.MixCfnConfig(channels=6, ratio=2, use_mixcfn=(k != 2)),
                       WeightInit(seed * 19 + k))
        yield f"grad/mixcfn/{k}", mix.forward, rng.standard_normal((1, 6, 3, 4))

        pe = B.PatchEmbed(5, 7, WeightInit(seed * 23 + k), efficient=True)
        yield f"grad/patch_embed_efficient/{k}", pe.forward, rng.standard_normal((1, 5, 4, 3))
        pe2 = B.PatchEmbed(5, 7, WeightInit(seed * 29 + k), efficient=False)
        yield f"grad/patch_embed_conv/{k}", pe2.forward, rng.standard_normal((1, 5, 4, 3))

        stem = B.Stem(6, WeightInit(seed * 37 + k))
        yield f"grad/stem/{k}", stem.forward, rng.standard_normal((1, 3, 8, 8))

        fusion = B.FusionLayer(B.FusionSpec((4, 6), (4, 6, 8), dense=(k != 2)),
                               WeightInit(seed * 41 + k))
        x_hi = rng.standard_normal((1, 4, 4, 4))
        x_lo = Tensor(rng.standard_normal((1, 6, 2, 2)))

        def fusion_chain(t: Tensor, fusion=fusion, x_lo=x_lo):
            outs = fusion.forward([t, x_lo])
            pooled = [T.global_avg_pool(o) for o in outs]
            return T.concat(pooled, axis=1)

        yield f"grad/fusion/{k}", fusion_chain, x_hi

        head = B.ClassifierHead((6, 8, 10, 12), 3, WeightInit(seed * 43 + k))
        others = [Tensor(rng.standard_normal((1, ch, r, r)))
                  for ch, r in ((6, 8), (8, 4), (10, 2))]
        x4 = rng.standard_normal((1, 12, 1, 1))

        def head_chain(t: Tensor, head=head, others=others):
            return head.forward(others + [t])

        yield f"grad/head/{k}", head_chain, x4


def grad_suite(seed: int = 0) -> list[CheckReport]:
    """Finite-difference gradient checks, three instances per op family."""
    reports = []
    for name, f, x0 in _grad_cases(seed):
        res = grad_check(f, Tensor(np.asarray(x0), requires_grad=True),
                         epsilon=GRAD_EPS, tolerance=GRAD_TOL, op_name=name)
        reports.append(CheckReport(name=name, error=res.max_rel_error,
                                   tolerance=res.tolerance, passed=res.passed))
    return reports


# ---------------------------------------------------------------------------
# invariant suite
# ---------------------------------------------------------------------------


def _run_invariant(name: str, fn, reports: list[CheckReport]) -> None:
    try:
        err, tol = fn()
        reports.append(_report(name, err, tol))
    except Exception:
        reports.append(CheckReport(name=name, error=float("inf"),
                                   tolerance=0.0, passed=False))


def invariant_suite(seed: int = 0) -> list[CheckReport]:
    """Structural invariants: exact identities the implementation promises."""
    rng = np.random.default_rng(seed)
    reports: list[CheckReport] = []

    def roundtrip():
        worst = 0.0
        for h, w, s, orientation in [(6, 5, 2, "horizontal"), (5, 7, 3, "vertical"),
                                     (4, 4, 7, "horizontal"), (3, 9, 4, "vertical")]:
            x = Tensor(rng.standard_normal((2, 3, h, w)))
            with no_grad():
                win, _ = B.window_partition(x, s, orientation)
                back = B.window_merge(win, orientation, h, w)
            worst = max(worst, float(np.max(np.abs(back.data - x.data))))
        return worst, 0.0

    _run_invariant("invariant/partition_merge_roundtrip", roundtrip, reports)

    def masked_probs_zero():
        x = Tensor(rng.standard_normal((1, 8, 3, 5)))
        with no_grad():
            win, mask = B.window_partition(x, 2, "horizontal")
            wq = Tensor(rng.standard_normal((8, 8)) * 0.3)
            out, probs = B.windowed_mhsa(win, wq, wq, wq, 4, pad_mask=mask,
                                         return_probs=True)
        worst = 0.0
        flat = mask.reshape(mask.shape[0], -1)
        out_tokens = out.data.reshape(out.shape[0], out.shape[1], -1)
        for n in range(flat.shape[0]):
            masked = flat[n]
            if masked.any():
                # masked keys carry exactly zero attention weight
                worst = max(worst, float(np.max(np.abs(probs[n][:, :, masked]))))
                # padded query rows produce exactly zero output
                worst = max(worst, float(np.max(np.abs(out_tokens[n][:, masked]))))
            live_rows = probs[n][:, ~masked, :]
            worst = max(worst, 1e-3 * float(np.max(np.abs(live_rows.sum(axis=-1) - 1.0))))
        return worst, 1e-15

    _run_invariant("invariant/masked_softmax_exact_zero", masked_probs_zero, reports)

    def fully_masked_raises():
        win = Tensor(rng.standard_normal((1, 4, 2, 2)))
        mask = np.ones((1, 2, 2), dtype=bool)
        wq = Tensor(rng.standard_normal((4, 4)))
        try:
            with no_grad():
                B.windowed_mhsa(win, wq, wq, wq, 2, pad_mask=mask)
        except ConfigError:
            return 0.0, 0.0
        return float("inf"), 0.0

    _run_invariant("invariant/fully_masked_window_rejected", fully_masked_raises, reports)

    def kv_share_bit_exact():
        cfg_shared = B.AttnConfig(channels=8, window=2, head_dim=4, share_kv=True)
        shared = B.AttentionBlock(cfg_shared, WeightInit(seed + 101))
        cfg_un = B.AttnConfig(channels=8, window=2, head_dim=4, share_kv=False)
        unshared = B.AttentionBlock(cfg_un, WeightInit(seed + 101))
        for name in ("ln_gamma", "ln_beta", "wq", "bq", "wv", "bv", "wo", "bo",
                     "dw", "dw_bias", "bn_gamma", "bn_beta"):
            getattr(unshared, name).data[...] = getattr(shared, name).data
        unshared.wk.data[...] = shared.wv.data
        unshared.bk.data[...] = shared.bv.data
        unshared.des.a.data[...] = shared.des.a.data
        unshared.des.b.data[...] = shared.des.b.data
        x = Tensor(rng.standard_normal((1, 8, 5, 6)))
        with no_grad():
            ys = shared.forward(x)
            yu = unshared.forward(x)
        return float(np.max(np.abs(ys.data - yu.data))), 0.0

    _run_invariant("invariant/kv_sharing_bit_exact", kv_share_bit_exact, reports)

    def bn_identity():
        x = Tensor(rng.standard_normal((2, 6, 4, 5)))
        winit = WeightInit(seed + 5)
        gamma, beta = winit.ones((6,)), winit.zeros((6,))
        mean, var = winit.zeros((6,)), winit.ones((6,))
        with no_grad():
            y = T.batch_norm_inference(x, gamma, beta, mean, var, eps=B.BN_EPS)
        return float(np.max(np.abs(y.data - x.data))), 0.0

    _run_invariant("invariant/bn_identity_at_init", bn_identity, reports)

    def fusion_additive():
        spec = B.FusionSpec((4, 6), (4, 6, 8), dense=True)
        fusion = B.FusionLayer(spec, WeightInit(seed + 7))
        xs = [Tensor(rng.standard_normal((1, 4, 4, 4))),
              Tensor(rng.standard_normal((1, 6, 2, 2)))]
        with no_grad():
            outs = fusion.forward(xs)
            worst = 0.0
            for j in range(3):
                acc = np.zeros_like(outs[j].data)
                for i in range(2):
                    if i == j:
                        acc = acc + xs[i].data
                    elif (i, j) in fusion.paths:
                        acc = acc + fusion._run_path(i, j, xs[i]).data
                worst = max(worst, float(np.max(np.abs(outs[j].data - acc))))
        return worst, 1e-12

    _run_invariant("invariant/fusion_additivity", fusion_additive, reports)

    def cross_locality():
        h, w, s = 4, 6, 2
        base = rng.standard_normal((1, 8, h, w))
        for use_parallel in (False, True):
            attn = B.AttentionBlock(B.AttnConfig(
                channels=8, window=s, head_dim=4, share_kv=True,
                use_parallel_conv=use_parallel, use_des=True,
                use_extra_nonlinearity_bn=True), WeightInit(seed + 11))
            r0, c0 = 1, 4
            bumped = base.copy()
            bumped[0, :, r0, c0] += 0.5
            with no_grad():
                y0 = attn.forward(Tensor(base)).data
                y1 = attn.forward(Tensor(bumped)).data
            diff = np.abs(y1 - y0).sum(axis=(0, 1))
            allowed = np.zeros((h, w), dtype=bool)
            rb, cb = (r0 // s) * s, (c0 // s) * s
            allowed[rb:rb + s, :] = True
            allowed[:, cb:cb + s] = True
            if use_parallel:
                allowed[max(0, r0 - 1):r0 + 2, max(0, c0 - 1):c0 + 2] = True
            leak = float(np.max(diff[~allowed])) if (~allowed).any() else 0.0
            touched = float(np.max(diff[allowed]))
            if leak > 0.0 or touched == 0.0:
                return float("inf"), 0.0
        return 0.0, 0.0

    _run_invariant("invariant/cross_shaped_locality", cross_locality, reports)

    def des_pointwise():
        shortcut = B.DiversityShortcut(12, WeightInit(seed + 13))
        base = rng.standard_normal((1, 12, 3, 4))
        bumped = base.copy()
        bumped[0, :, 1, 2] += 0.25
        with no_grad():
            d = np.abs(shortcut.forward(Tensor(bumped)).data
                       - shortcut.forward(Tensor(base)).data).sum(axis=(0, 1))
        off = d.copy()
        off[1, 2] = 0.0
        return float(np.max(off)), 0.0

    _run_invariant("invariant/des_is_pointwise", des_pointwise, reports)

    def schedule_linear():
        cfg = build_variant("b1")
        rates = drop_path_schedule(cfg)
        worst = 0.0
        fractions = {(3, 1): 0, (3, 2): 6, (4, 1): 12, (4, 2): 18}
        for (stg, mod), offset in fractions.items():
            n3 = cfg.blocks[(stg, mod, 3)]
            for t in range(1, n3 + 1):
                expect = 0.1 * (offset + t) / 20.0
                worst = max(worst, abs(rates[(stg, mod, 3, t)] - expect))
            for b in (1, 2) + ((4,) if stg == 4 else ()):
                for t in range(1, cfg.blocks[(stg, mod, b)] + 1):
                    expect = 0.1 * (offset + n3) / 20.0
                    worst = max(worst, abs(rates[(stg, mod, b, t)] - expect))
        for key, rate in rates.items():
            if key[0] <= 2:
                worst = max(worst, abs(rate))
        return worst, 1e-15

    _run_invariant("invariant/drop_path_schedule", schedule_linear, reports)

    def config_roundtrip():
        for name in ("b1", "b2", "b3"):
            cfg = build_variant(name)
            if parse_config(config_text(cfg), source="roundtrip") != cfg:
                return float("inf"), 0.0
        return 0.0, 0.0

    _run_invariant("invariant/config_roundtrip", config_roundtrip, reports)

    def init_determinism():
        g1 = B.AttentionBlock(B.AttnConfig(channels=8, window=2, head_dim=4),
                              WeightInit(seed + 17))
        g2 = B.AttentionBlock(B.AttnConfig(channels=8, window=2, head_dim=4),
                              WeightInit(seed + 17))
        g3 = B.AttentionBlock(B.AttnConfig(channels=8, window=2, head_dim=4),
                              WeightInit(seed + 18))
        c1 = checksum(np.concatenate([t.data.ravel() for _, t in g1.named_weights()]))
        c2 = checksum(np.concatenate([t.data.ravel() for _, t in g2.named_weights()]))
        c3 = checksum(np.concatenate([t.data.ravel() for _, t in g3.named_weights()]))
        if c1 != c2 or c1 == c3:
            return float("inf"), 0.0
        return 0.0, 0.0

    _run_invariant("invariant/seeded_init_determinism", init_determinism, reports)

    def counts_match_instrumented():
        from .cost import count_flops
        from .topology import ArchConfig, build_graph

        cfg = ArchConfig(
            name="tiny", num_stages=2, channels=(4, 8), head_dim=(2, 4),
            window=(1, 2), mixcfn_ratio=(2, 2), modules_per_stage=(1, 1),
            blocks={(1, 1, 1): 1, (2, 1, 1): 1, (2, 1, 2): 1},
        )
        graph = build_graph(cfg, num_classes=None, seed=seed)
        h = w = 16
        report = count_flops(graph, h, w)
        counter = T.OpCounter()
        x = Tensor(rng.standard_normal((1, 3, h, w)))
        with no_grad(), T.count_ops(counter):
            graph.forward(x)
        return abs(report.total_macs - counter.macs), 0.0

    _run_invariant("invariant/flops_match_instrumented", counts_match_instrumented, reports)

    return reports


SUITES = {
    "grad": grad_suite,
    "oracle": oracle_suite,
    "invariant": invariant_suite,
}


def run_suite(name: str, seed: int = 0) -> list[CheckReport]:
    """Run one named suite, or all of them."""
    if name == "all":
        out = []
        for key in ("oracle", "grad", "invariant"):
            out.extend(SUITES[key](seed))
        return out
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; expected grad, oracle, invariant, or all")
    return SUITES[name](seed)
