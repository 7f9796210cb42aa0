"""HRViT building blocks.

All blocks operate on NCHW float64 tensors from :mod:`hrvit.tensor`.  Each
block class carries three synchronized views of itself:

* ``forward``       -- the actual computation on tensors,
* ``param_count``   -- closed-form parameter count from hyperparameters,
* ``cost(h, w)``    -- closed-form MAC / elementwise counts at a resolution.

``param_count`` deliberately never inspects tensor shapes (the cost model
cross-checks it against a traversal of the stored weight arrays), and
``cost`` mirrors the executed operations exactly, including padded window
extents, so it can be validated against an instrumented execution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .init import WeightInit
from .tensor import (
    ConfigError,
    ShapeError,
    Tensor,
    add,
    batch_norm_inference,
    concat,
    conv2d,
    conv_output_size,
    gelu,
    global_avg_pool,
    hardswish,
    layer_norm,
    matmul,
    mul,
    narrow,
    nearest_upsample,
    pad_zeros,
    relu,
    reshape,
    softmax,
    transpose,
)

ORIENTATIONS = ("horizontal", "vertical")

LN_EPS = 1e-5
# Inference-time batch norms run with identity statistics (mean 0, var 1) and
# eps 0 so an identity-initialized BN is exactly the identity map.
BN_EPS = 0.0


@dataclass
class LayerCost:
    """Closed-form cost of one layer at a fixed resolution."""

    macs: int = 0
    eltwise: int = 0

    def __iadd__(self, other: "LayerCost") -> "LayerCost":
        self.macs += other.macs
        self.eltwise += other.eltwise
        return self


# ---------------------------------------------------------------------------
# layout helpers
# ---------------------------------------------------------------------------


def to_tokens(x: Tensor) -> Tensor:
    """NCHW -> (N*H*W, C) token matrix."""
    n, c, h, w = x.shape
    return reshape(transpose(x, (0, 2, 3, 1)), (n * h * w, c))


def to_map(tokens: Tensor, n: int, h: int, w: int) -> Tensor:
    """(N*H*W, C) token matrix -> NCHW."""
    c = tokens.shape[-1]
    return transpose(reshape(tokens, (n, h, w, c)), (0, 3, 1, 2))


def channel_project(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Pointwise (1x1) channel projection of an NCHW map via matmul."""
    n, _, h, iw = x.shape
    t = matmul(to_tokens(x), transpose(w, (1, 0)))
    if b is not None:
        t = add(t, b)
    return to_map(t, n, h, iw)


def channel_layer_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """LayerNorm over the channel axis of an NCHW map."""
    t = transpose(x, (0, 2, 3, 1))
    t = layer_norm(t, gamma, beta, eps=LN_EPS)
    return transpose(t, (0, 3, 1, 2))


def balanced_factor_pair(c: int) -> tuple[int, int]:
    """Balanced factorization c = p*q with p <= q and p maximal."""
    if c < 1:
        raise ConfigError(f"balanced_factor_pair: need a positive channel count, got {c}")
    p = 1
    for d in range(1, int(math.isqrt(c)) + 1):
        if c % d == 0:
            p = d
    return p, c // p


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------


def window_partition(x: Tensor, s: int, orientation: str) -> tuple[Tensor, np.ndarray]:
    """Partition an NCHW map into cross-shaped windows.

    ``horizontal`` yields M = ceil(H/s) strips of shape (N*M, C, s, W); the
    map is zero-padded at the bottom to a multiple of ``s``.  ``vertical``
    yields ceil(W/s) strips of shape (N*M, C, H, s), zero-padded at the
    right.  Returns (windows, pad_mask) where pad_mask is a boolean array of
    the window's spatial shape marking padded positions with True.  Window
    index m of batch item n lands at row n*M + m.
    """
    if s < 1:
        raise ConfigError(f"window_partition: window size must be >= 1, got {s}")
    if orientation not in ORIENTATIONS:
        raise ConfigError(f"window_partition: unknown orientation {orientation!r}")
    n, c, h, w = x.shape
    if orientation == "horizontal":
        m = -(-h // s)
        pad = m * s - h
        xp = pad_zeros(x, bottom=pad) if pad else x
        r = reshape(xp, (n, c, m, s, w))
        t = transpose(r, (0, 2, 1, 3, 4))
        windows = reshape(t, (n * m, c, s, w))
        mask = np.zeros((n * m, s, w), dtype=bool)
        if pad:
            mask[np.arange(n) * m + (m - 1), s - pad:, :] = True
    else:
        m = -(-w // s)
        pad = m * s - w
        xp = pad_zeros(x, right=pad) if pad else x
        r = reshape(xp, (n, c, h, m, s))
        t = transpose(r, (0, 3, 1, 2, 4))
        windows = reshape(t, (n * m, c, h, s))
        mask = np.zeros((n * m, h, s), dtype=bool)
        if pad:
            mask[np.arange(n) * m + (m - 1), :, s - pad:] = True
    return windows, mask


def window_merge(windows: Tensor, orientation: str, height: int, width: int) -> Tensor:
    """Inverse of :func:`window_partition`, cropped back to (height, width)."""
    if orientation not in ORIENTATIONS:
        raise ConfigError(f"window_merge: unknown orientation {orientation!r}")
    b, c, wh, ww = windows.shape
    if orientation == "horizontal":
        s = wh
        m = -(-height // s)
        if b % m:
            raise ShapeError(f"window_merge: {b} windows do not tile height {height} with s={s}")
        n = b // m
        r = reshape(windows, (n, m, c, s, ww))
        t = transpose(r, (0, 2, 1, 3, 4))
        full = reshape(t, (n, c, m * s, ww))
        return narrow(full, 2, 0, height) if m * s != height else full
    s = ww
    m = -(-width // s)
    if b % m:
        raise ShapeError(f"window_merge: {b} windows do not tile width {width} with s={s}")
    n = b // m
    r = reshape(windows, (n, m, c, wh, s))
    t = transpose(r, (0, 2, 3, 1, 4))
    full = reshape(t, (n, c, wh, m * s))
    return narrow(full, 3, 0, width) if m * s != width else full


def _window_sdpa(qw: Tensor, kw: Tensor, vw: Tensor, d_k: int,
                 pad_mask: np.ndarray | None, return_probs: bool = False):
    """Masked multi-head scaled dot-product attention inside windows.

    Inputs are projected window maps of shape (B, D, h, w) with D divisible
    by ``d_k``.  ``pad_mask`` (B, h, w) marks padded positions: masked keys
    receive -inf logits (exactly zero post-softmax weight) and padded query
    rows are zeroed in the output.
    """
    b, d, h, w = qw.shape
    if d % d_k:
        raise ConfigError(f"attention: head dim {d_k} must divide channel count {d}")
    heads = d // d_k
    l = h * w

    def split_heads(t: Tensor) -> Tensor:
        tok = reshape(transpose(t, (0, 2, 3, 1)), (b, l, heads, d_k))
        return transpose(tok, (0, 2, 1, 3))

    q = split_heads(qw)
    k = split_heads(kw)
    v = split_heads(vw)
    logits = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d_k))
    if pad_mask is not None:
        flat = pad_mask.reshape(b, l)
        if flat.all(axis=1).any():
            raise ConfigError("attention: a window consists entirely of padding")
        bias = np.where(flat, -np.inf, 0.0)[:, None, None, :]
        logits = add(logits, Tensor(bias))
    probs = softmax(logits, axis=-1)
    out = matmul(probs, v)
    if pad_mask is not None:
        keep = (~pad_mask.reshape(b, l)).astype(np.float64)[:, None, :, None]
        out = mul(out, Tensor(keep))
    out = reshape(transpose(out, (0, 2, 1, 3)), (b, l, d))
    out = transpose(reshape(out, (b, h, w, d)), (0, 3, 1, 2))
    if return_probs:
        return out, probs.data.copy()
    return out


def windowed_mhsa(win: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, d_k: int,
                  pad_mask: np.ndarray | None = None, bq: Tensor | None = None,
                  bk: Tensor | None = None, bv: Tensor | None = None,
                  return_probs: bool = False):
    """Scaled dot-product attention over one batch of windows.

    ``win`` is (B, C, h, w); ``wq``/``wk``/``wv`` are (D, C) projections
    applied per position before per-head attention.  Pass ``wk is wv`` (the
    same tensor) for key-value sharing; the contract is definitional, so an
    unshared call with identical key/value weights is bit-identical to the
    shared call.
    """
    q = channel_project(win, wq, bq)
    k = channel_project(win, wk, bk)
    v = channel_project(win, wv, bv)
    return _window_sdpa(q, k, v, d_k, pad_mask, return_probs=return_probs)


# ---------------------------------------------------------------------------
# DES: diversity-enhanced shortcut
# ---------------------------------------------------------------------------


class DiversityShortcut:
    """Kronecker-decomposed per-position linear shortcut.

    The C-channel vector at each position is folded to a p x q matrix
    (row-major, with p*q = C and p <= q a balanced factor pair); the
    shortcut computes A @ hardswish(X~ @ B^T) with square mixing matrices
    A (p x p) and B (q x q) and no biases.
    """

    def __init__(self, channels: int, winit: WeightInit):
        self.channels = channels
        self.p, self.q = balanced_factor_pair(channels)
        self.a = winit.trunc_normal((self.p, self.p))
        self.b = winit.trunc_normal((self.q, self.q))

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(f"DES: expected {self.channels} channels, got {c}")
        folded = reshape(to_tokens(x), (n * h * w, self.p, self.q))
        mixed = hardswish(matmul(folded, transpose(self.b, (1, 0))))
        out = matmul(self.a, mixed)
        return to_map(reshape(out, (n * h * w, c)), n, h, w)

    def named_weights(self) -> Iterator[tuple[str, Tensor]]:
        yield "a", self.a
        yield "b", self.b

    def param_count(self) -> int:
        return self.p * self.p + self.q * self.q

    def cost(self, h: int, w: int) -> LayerCost:
        hw = h * w
        macs = hw * (self.p * self.q * self.q + self.p * self.p * self.q)
        return LayerCost(macs=macs, eltwise=hw * self.channels)


def des_forward(x: Tensor, shortcut: DiversityShortcut) -> Tensor:
    """Functional form of :class:`DiversityShortcut`."""
    return shortcut.forward(x)


# ---------------------------------------------------------------------------
# attention block
# ---------------------------------------------------------------------------


@dataclass
class AttnConfig:
    """Hyperparameters of one cross-shaped window attention block."""

    channels: int
    window: int
    head_dim: int
    share_kv: bool = True
    use_parallel_conv: bool = True
    use_des: bool = True
    use_extra_nonlinearity_bn: bool = True

    @property
    def num_heads(self) -> int:
        return self.channels // self.head_dim

    def validate(self) -> None:
        if self.channels < 1 or self.head_dim < 1 or self.window < 1:
            raise ConfigError(f"attention config: non-positive dimension in {self}")
        if self.channels % self.head_dim:
            raise ConfigError(
                f"attention config: head dim {self.head_dim} must divide channels {self.channels}"
            )
        if self.num_heads % 2:
            raise ConfigError(
                f"attention config: head count {self.num_heads} must be even "
                "(half horizontal, half vertical)"
            )


class AttentionBlock:
    """Cross-shaped window attention with the augmented shortcut topology.

    Heads with index < K/2 attend inside horizontal s x W strips, the rest
    inside vertical H x s strips.  Keys and values share one projection when
    ``share_kv`` is set; a depthwise 3x3 conv over hardswish of the full
    value map runs in parallel with attention; the merged heads pass through
    an output projection, an extra hardswish, and an inference batch norm.
    The block applies its pre-norm internally and returns

        x + attention(LN(x)) + DES(x).
    """

    def __init__(self, cfg: AttnConfig, winit: WeightInit):
        cfg.validate()
        self.cfg = cfg
        c = cfg.channels
        self.ln_gamma = winit.ones((c,))
        self.ln_beta = winit.zeros((c,))
        self.wq = winit.trunc_normal((c, c))
        self.bq = winit.zeros((c,))
        self.wv = winit.trunc_normal((c, c))
        self.bv = winit.zeros((c,))
        if not cfg.share_kv:
            self.wk = winit.trunc_normal((c, c))
            self.bk = winit.zeros((c,))
        else:
            self.wk = None
            self.bk = None
        self.wo = winit.trunc_normal((c, c))
        self.bo = winit.zeros((c,))
        if cfg.use_parallel_conv:
            self.dw = winit.trunc_normal((c, 1, 3, 3))
            self.dw_bias = winit.zeros((c,))
        if cfg.use_extra_nonlinearity_bn:
            self.bn_gamma = winit.ones((c,))
            self.bn_beta = winit.zeros((c,))
            self.bn_mean = Tensor(np.zeros(c))
            self.bn_var = Tensor(np.ones(c))
        if cfg.use_des:
            self.des = DiversityShortcut(c, winit)

    # -- forward ------------------------------------------------------------
    def forward(self, x: Tensor, force_mask: bool = False) -> Tensor:
        cfg = self.cfg
        n, c, h, w = x.shape
        if c != cfg.channels:
            raise ShapeError(f"attention block: expected {cfg.channels} channels, got {c}")
        normed = channel_layer_norm(x, self.ln_gamma, self.ln_beta)
        tokens = to_tokens(normed)
        q_map = to_map(add(matmul(tokens, transpose(self.wq, (1, 0))), self.bq), n, h, w)
        v_map = to_map(add(matmul(tokens, transpose(self.wv, (1, 0))), self.bv), n, h, w)
        if cfg.share_kv:
            k_map = v_map
        else:
            k_map = to_map(add(matmul(tokens, transpose(self.wk, (1, 0))), self.bk), n, h, w)

        half = c // 2
        outs = []
        for idx, orientation in enumerate(ORIENTATIONS):
            qh = narrow(q_map, 1, idx * half, half)
            kh = narrow(k_map, 1, idx * half, half)
            vh = narrow(v_map, 1, idx * half, half)
            qw, mask = window_partition(qh, cfg.window, orientation)
            kw, _ = window_partition(kh, cfg.window, orientation)
            vw, _ = window_partition(vh, cfg.window, orientation)
            use_mask = mask if (mask.any() or force_mask) else None
            ow = _window_sdpa(qw, kw, vw, cfg.head_dim, use_mask)
            outs.append(window_merge(ow, orientation, h, w))
        y = concat(outs, axis=1)

        if cfg.use_parallel_conv:
            par = conv2d(hardswish(v_map), self.dw, self.dw_bias, stride=1, padding=1, groups=c)
            y = add(y, par)

        o = channel_project(y, self.wo, self.bo)
        if cfg.use_extra_nonlinearity_bn:
            o = batch_norm_inference(hardswish(o), self.bn_gamma, self.bn_beta,
                                     self.bn_mean, self.bn_var, eps=BN_EPS)
        out = add(x, o)
        if cfg.use_des:
            out = add(out, self.des.forward(x))
        return out

    # -- bookkeeping ---------------------------------------------------------
    def named_weights(self) -> Iterator[tuple[str, Tensor]]:
        yield "ln_gamma", self.ln_gamma
        yield "ln_beta", self.ln_beta
        yield "wq", self.wq
        yield "bq", self.bq
        yield "wv", self.wv
        yield "bv", self.bv
        if not self.cfg.share_kv:
            yield "wk", self.wk
            yield "bk", self.bk
        yield "wo", self.wo
        yield "bo", self.bo
        if self.cfg.use_parallel_conv:
            yield "dw", self.dw
            yield "dw_bias", self.dw_bias
        if self.cfg.use_extra_nonlinearity_bn:
            yield "bn_gamma", self.bn_gamma
            yield "bn_beta", self.bn_beta
        if self.cfg.use_des:
            for name, t in self.des.named_weights():
                yield f"des.{name}", t

    def param_count(self) -> int:
        c = self.cfg.channels
        total = 2 * c                      # layer norm affine
        total += 2 * (c * c + c)           # q and v projections
        if not self.cfg.share_kv:
            total += c * c + c             # separate k projection
        total += c * c + c                 # output projection
        if self.cfg.use_parallel_conv:
            total += 9 * c + c             # depthwise 3x3 + bias
        if self.cfg.use_extra_nonlinearity_bn:
            total += 2 * c                 # batch norm affine
        if self.cfg.use_des:
            total += self.des.param_count()
        return total

    def window_cost(self, h: int, w: int) -> int:
        """MACs of the attention logits and weighted sums at (h, w),
        counting padded window extents."""
        cfg = self.cfg
        heads_per_side = cfg.num_heads // 2
        total = 0
        for orientation in ORIENTATIONS:
            if orientation == "horizontal":
                m, l = -(-h // cfg.window), cfg.window * w
            else:
                m, l = -(-w // cfg.window), h * cfg.window
            total += 2 * m * heads_per_side * l * l * cfg.head_dim
        return total

    def cost(self, h: int, w: int) -> LayerCost:
        cfg = self.cfg
        c = cfg.channels
        hw = h * w
        macs = 2 * hw * c * c              # q and v projections
        if not cfg.share_kv:
            macs += hw * c * c
        macs += self.window_cost(h, w)
        if cfg.use_parallel_conv:
            macs += 9 * c * hw
        macs += hw * c * c                 # output projection
        if cfg.use_des:
            macs += self.des.cost(h, w).macs
        eltwise = hw * c * 4               # norm, biases, residual (coarse tally)
        if cfg.use_parallel_conv:
            eltwise += 2 * hw * c
        if cfg.use_extra_nonlinearity_bn:
            eltwise += 2 * hw * c
        heads_per_side = cfg.num_heads // 2
        for orientation in ORIENTATIONS:
            if orientation == "horizontal":
                m, l = -(-h // cfg.window), cfg.window * w
            else:
                m, l = -(-w // cfg.window), h * cfg.window
            eltwise += 2 * m * heads_per_side * l * l
        if cfg.use_des:
            eltwise += self.des.cost(h, w).eltwise + hw * c
        return LayerCost(macs=macs, eltwise=eltwise)


# ---------------------------------------------------------------------------
# MixCFN
# ---------------------------------------------------------------------------


@dataclass
class MixCfnConfig:
    """Hyperparameters of one mixed-scale convolutional FFN block."""

    channels: int
    ratio: int
    use_mixcfn: bool = True

    def validate(self) -> None:
        if self.channels < 1 or self.ratio < 1:
            raise ConfigError(f"mixcfn config: non-positive dimension in {self}")
        if (self.channels * self.ratio) % 2:
            raise ConfigError(
                f"mixcfn config: expanded width {self.channels * self.ratio} must be even to split"
            )


class MixCfn:
    """Feed-forward block: LN, expand C -> r*C, split into two halves mixed
    by depthwise 3x3 / 5x5 convs, GELU, concat, project back, residual.

    With ``use_mixcfn`` unset it degrades to the plain FFN
    (expand, GELU, project).
    """

    def __init__(self, cfg: MixCfnConfig, winit: WeightInit):
        cfg.validate()
        self.cfg = cfg
        c, r = cfg.channels, cfg.ratio
        hidden = c * r
        self.ln_gamma = winit.ones((c,))
        self.ln_beta = winit.zeros((c,))
        self.w1 = winit.trunc_normal((hidden, c))
        self.b1 = winit.zeros((hidden,))
        if cfg.use_mixcfn:
            self.dw3 = winit.trunc_normal((hidden // 2, 1, 3, 3))
            self.dw3_bias = winit.zeros((hidden // 2,))
            self.dw5 = winit.trunc_normal((hidden // 2, 1, 5, 5))
            self.dw5_bias = winit.zeros((hidden // 2,))
        self.w2 = winit.trunc_normal((c, hidden))
        self.b2 = winit.zeros((c,))

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        n, c, h, w = x.shape
        if c != cfg.channels:
            raise ShapeError(f"mixcfn block: expected {cfg.channels} channels, got {c}")
        hidden = c * cfg.ratio
        normed = channel_layer_norm(x, self.ln_gamma, self.ln_beta)
        u = to_map(add(matmul(to_tokens(normed), transpose(self.w1, (1, 0))), self.b1), n, h, w)
        if cfg.use_mixcfn:
            u1 = narrow(u, 1, 0, hidden // 2)
            u2 = narrow(u, 1, hidden // 2, hidden // 2)
            g1 = gelu(conv2d(u1, self.dw3, self.dw3_bias, stride=1, padding=1, groups=hidden // 2))
            g2 = gelu(conv2d(u2, self.dw5, self.dw5_bias, stride=1, padding=2, groups=hidden // 2))
            g = concat([g1, g2], axis=1)
        else:
            g = gelu(u)
        out = to_map(add(matmul(to_tokens(g), transpose(self.w2, (1, 0))), self.b2), n, h, w)
        return add(x, out)

    def named_weights(self) -> Iterator[tuple[str, Tensor]]:
        yield "ln_gamma", self.ln_gamma
        yield "ln_beta", self.ln_beta
        yield "w1", self.w1
        yield "b1", self.b1
        if self.cfg.use_mixcfn:
            yield "dw3", self.dw3
            yield "dw3_bias", self.dw3_bias
            yield "dw5", self.dw5
            yield "dw5_bias", self.dw5_bias
        yield "w2", self.w2
        yield "b2", self.b2

    def param_count(self) -> int:
        c, r = self.cfg.channels, self.cfg.ratio
        hidden = c * r
        total = 2 * c + hidden * c + hidden + hidden * c + c
        if self.cfg.use_mixcfn:
            total += (hidden // 2) * 9 + hidden // 2
            total += (hidden // 2) * 25 + hidden // 2
        return total

    def cost(self, h: int, w: int) -> LayerCost:
        c, r = self.cfg.channels, self.cfg.ratio
        hidden = c * r
        hw = h * w
        macs = 2 * hw * c * hidden
        eltwise = hw * (2 * c + 2 * hidden)
        if self.cfg.use_mixcfn:
            macs += (hidden // 2) * hw * 9 + (hidden // 2) * hw * 25
            eltwise += hw * hidden
        return LayerCost(macs=macs, eltwise=eltwise)


# ---------------------------------------------------------------------------
# patch embedding
# ---------------------------------------------------------------------------


class PatchEmbed:
    """Efficient patch embedding: LN(DWConv3x3(PWConv(x))), spatial-preserving.

    With ``efficient`` unset it falls back to a single full 3x3 convolution
    followed by the layer norm.
    """

    def __init__(self, in_channels: int, out_channels: int, winit: WeightInit,
                 efficient: bool = True):
        if in_channels < 1 or out_channels < 1:
            raise ConfigError(f"patch embed: bad channels {in_channels} -> {out_channels}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.efficient = efficient
        if efficient:
            self.pw = winit.trunc_normal((out_channels, in_channels))
            self.pw_bias = winit.zeros((out_channels,))
            self.dw = winit.trunc_normal((out_channels, 1, 3, 3))
            self.dw_bias = winit.zeros((out_channels,))
        else:
            self.conv = winit.trunc_normal((out_channels, in_channels, 3, 3))
            self.conv_bias = winit.zeros((out_channels,))
        self.ln_gamma = winit.ones((out_channels,))
        self.ln_beta = winit.zeros((out_channels,))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"patch embed: expected {self.in_channels} channels, got {x.shape[1]}")
        if self.efficient:
            y = channel_project(x, self.pw, self.pw_bias)
            y = conv2d(y, self.dw, self.dw_bias, stride=1, padding=1, groups=self.out_channels)
        else:
            y = conv2d(x, self.conv, self.conv_bias, stride=1, padding=1)
        return channel_layer_norm(y, self.ln_gamma, self.ln_beta)

    def named_weights(self) -> Iterator[tuple[str, Tensor]]:
        if self.efficient:
            yield "pw", self.pw
            yield "pw_bias", self.pw_bias
            yield "dw", self.dw
            yield "dw_bias", self.dw_bias
        else:
            yield "conv", self.conv
            yield "conv_bias", self.conv_bias
        yield "ln_gamma", self.ln_gamma
        yield "ln_beta", self.ln_beta

    def param_count(self) -> int:
        ci, co = self.in_channels, self.out_channels
        if self.efficient:
            return ci * co + co + 9 * co + co + 2 * co
        return 9 * ci * co + co + 2 * co

    def cost(self, h: int, w: int) -> LayerCost:
        ci, co = self.in_channels, self.out_channels
        hw = h * w
        if self.efficient:
            macs = hw * ci * co + co * hw * 9
            eltwise = hw * co * 3
        else:
            macs = co * hw * ci * 9
            eltwise = hw * co * 2
        return LayerCost(macs=macs, eltwise=eltwise)


# ---------------------------------------------------------------------------
# stem
# ---------------------------------------------------------------------------


class Stem:
    """Two stride-2 3x3 conv + BN + ReLU stages: (N,3,H,W) -> (N,C,H/4,W/4)."""

    def __init__(self, channels: int, winit: WeightInit):
        if channels < 1:
            raise ConfigError(f"stem: bad channel count {channels}")
        self.channels = channels
        c = channels
        self.conv1 = winit.trunc_normal((c, 3, 3, 3))
        self.conv1_bias = winit.zeros((c,))
        self.bn1_gamma = winit.ones((c,))
        self.bn1_beta = winit.zeros((c,))
        self.bn1_mean = Tensor(np.zeros(c))
        self.bn1_var = Tensor(np.ones(c))
        self.conv2 = winit.trunc_normal((c, c, 3, 3))
        self.conv2_bias = winit.zeros((c,))
        self.bn2_gamma = winit.ones((c,))
        self.bn2_beta = winit.zeros((c,))
        self.bn2_mean = Tensor(np.zeros(c))
        self.bn2_var = Tensor(np.ones(c))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"stem: expected an (N,3,H,W) image, got {x.shape}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ShapeError(f"stem: spatial size {x.shape[2]}x{x.shape[3]} must be divisible by 4")
        y = conv2d(x, self.conv1, self.conv1_bias, stride=2, padding=1)
        y = relu(batch_norm_inference(y, self.bn1_gamma, self.bn1_beta,
                                      self.bn1_mean, self.bn1_var, eps=BN_EPS))
        y = conv2d(y, self.conv2, self.conv2_bias, stride=2, padding=1)
        y = relu(batch_norm_inference(y, self.bn2_gamma, self.bn2_beta,
                                      self.bn2_mean, self.bn2_var, eps=BN_EPS))
        return y

    def named_weights(self) -> Iterator[tuple[str, Tensor]]:
        yield "conv1", self.conv1
        yield "conv1_bias", self.conv1_bias
        yield "bn1_gamma", self.bn1_gamma
        yield "bn1_beta", self.bn1_beta
        yield "conv2", self.conv2
        yield "conv2_bias", self.conv2_bias
        yield "bn2_gamma", self.bn2_gamma
        yield "bn2_beta", self.bn2_beta

    def param_count(self) -> int:
        c = self.channels
        return (27 * c + c + 2 * c) + (9 * c * c + c + 2 * c)

    def cost(self, h: int, w: int) -> LayerCost:
        c = self.channels
        h2, w2 = conv_output_size(h, 3, 2, 1), conv_output_size(w, 3, 2, 1)
        h4, w4 = conv_output_size(h2, 3, 2, 1), conv_output_size(w2, 3, 2, 1)
        macs = c * h2 * w2 * 27 + c * h4 * w4 * 9 * c
        eltwise = 3 * c * h2 * w2 + 3 * c * h4 * w4
        return LayerCost(macs=macs, eltwise=eltwise)


# ---------------------------------------------------------------------------
# cross-resolution fusion
# ---------------------------------------------------------------------------


@dataclass
class FusionSpec:
    """Connectivity of one cross-resolution fusion layer.

    ``in_channels`` / ``out_channels`` list the branch widths (index 0 is the
    highest resolution); ``dense`` keeps every branch pair connected, the
    sparse alternative keeps only |i - j| <= 1.
    """

    in_channels: tuple[int, ...]
    out_channels: tuple[int, ...]
    dense: bool = True

    def validate(self) -> None:
        n_in, n_out = len(self.in_channels), len(self.out_channels)
        if n_in < 1 or n_out not in (n_in, n_in + 1):
            raise ConfigError(
                f"fusion: output branch count {n_out} must equal input count {n_in} or grow by one"
            )
        if self.out_channels[:n_in] != self.in_channels:
            raise ConfigError(
                f"fusion: surviving branches must keep their widths, got {self.in_channels} -> {self.out_channels}"
            )

    def active_pairs(self) -> list[tuple[int, int]]:
        pairs = []
        for j in range(len(self.out_channels)):
            for i in range(len(self.in_channels)):
                if i == j:
                    continue
                if self.dense or abs(i - j) <= 1:
                    pairs.append((i, j))
        return pairs


class FusionLayer:
    """Sum of resolution-matched paths between branches (no norm, no act).

    Down paths (i < j) use a depthwise conv of kernel 2^(j-i)+1 with stride
    2^(j-i), followed by a pointwise projection; up paths (i > j) use a
    pointwise projection followed by nearest upsampling; the i == j path is
    the identity.  A new lowest-resolution branch is created from the down
    paths alone.
    """

    def __init__(self, spec: FusionSpec, winit: WeightInit):
        spec.validate()
        self.spec = spec
        self.paths: dict[tuple[int, int], dict[str, Tensor]] = {}
        for i, j in spec.active_pairs():
            ci = spec.in_channels[i]
            cj = spec.out_channels[j]
            if i < j:
                k = 2 ** (j - i) + 1
                self.paths[(i, j)] = {
                    "dw": winit.trunc_normal((ci, 1, k, k)),
                    "dw_bias": winit.zeros((ci,)),
                    "pw": winit.trunc_normal((cj, ci)),
                    "pw_bias": winit.zeros((cj,)),
                }
            else:
                self.paths[(i, j)] = {
                    "pw": winit.trunc_normal((cj, ci)),
                    "pw_bias": winit.zeros((cj,)),
                }

    def forward(self, inputs: list[Tensor]) -> list[Tensor]:
        spec = self.spec
        if len(inputs) != len(spec.in_channels):
            raise ShapeError(
                f"fusion: expected {len(spec.in_channels)} inputs, got {len(inputs)}"
            )
        for i, t in enumerate(inputs):
            if t.shape[1] != spec.in_channels[i]:
                raise ShapeError(
                    f"fusion: branch {i} expected {spec.in_channels[i]} channels, got {t.shape[1]}"
                )
            if i and (inputs[i - 1].shape[2] != 2 * t.shape[2] or inputs[i - 1].shape[3] != 2 * t.shape[3]):
                raise ShapeError(
                    f"fusion: branch {i} resolution {t.shape[2:]} is not half of branch {i - 1} "
                    f"{inputs[i - 1].shape[2:]}"
                )
        active = set(spec.active_pairs())
        outputs: list[Tensor] = []
        for j in range(len(spec.out_channels)):
            acc: Tensor | None = None
            for i in range(len(spec.in_channels)):
                if i == j:
                    term = inputs[i]
                elif (i, j) in active:
                    term = self._run_path(i, j, inputs[i])
                else:
                    continue
                acc = term if acc is None else add(acc, term)
            if acc is None:
                raise ConfigError(f"fusion: output branch {j} has no incoming paths")
            outputs.append(acc)
        return outputs

    def _run_path(self, i: int, j: int, x: Tensor) -> Tensor:
        w = self.paths[(i, j)]
        if i < j:
            m = j - i
            k = 2 ** m + 1
            y = conv2d(x, w["dw"], w["dw_bias"], stride=2 ** m, padding=(k - 1) // 2,
                       groups=self.spec.in_channels[i])
            return channel_project(y, w["pw"], w["pw_bias"])
        y = channel_project(x, w["pw"], w["pw_bias"])
        return nearest_upsample(y, 2 ** (i - j))

    def named_weights(self) -> Iterator[tuple[str, Tensor]]:
        for (i, j), w in sorted(self.paths.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            for name, t in w.items():
                yield f"path{i}to{j}.{name}", t

    def param_count(self) -> int:
        total = 0
        for (i, j) in self.spec.active_pairs():
            ci = self.spec.in_channels[i]
            cj = self.spec.out_channels[j]
            if i < j:
                k = 2 ** (j - i) + 1
                total += ci * k * k + ci + ci * cj + cj
            else:
                total += ci * cj + cj
        return total

    def cost(self, sizes: list[tuple[int, int]]) -> LayerCost:
        """``sizes`` holds (h, w) for each *input* branch; the new branch (if
        any) sits at half the last input resolution."""
        spec = self.spec
        all_sizes = list(sizes)
        if len(spec.out_channels) > len(sizes):
            h, w = sizes[-1]
            all_sizes.append((h // 2, w // 2))
        macs = 0
        eltwise = 0
        for (i, j) in spec.active_pairs():
            ci = spec.in_channels[i]
            cj = spec.out_channels[j]
            hj, wj = all_sizes[j]
            hi, wi = all_sizes[i]
            if i < j:
                k = 2 ** (j - i) + 1
                macs += ci * hj * wj * k * k + hj * wj * ci * cj
                eltwise += hj * wj * (ci + 2 * cj)
            else:
                macs += hi * wi * ci * cj
                eltwise += hi * wi * cj + 2 * hj * wj * cj
        return LayerCost(macs=macs, eltwise=eltwise)


# ---------------------------------------------------------------------------
# classification head
# ---------------------------------------------------------------------------

HEAD_PLANES = (32, 64, 128, 256)
HEAD_EXPANSION = 4
HEAD_FINAL = 2048


class _Bottleneck:
    """1x1 -> 3x3 -> 1x1 bottleneck with BN + ReLU and a projected shortcut."""

    def __init__(self, in_channels: int, planes: int, winit: WeightInit):
        self.in_channels = in_channels
        self.planes = planes
        self.out_channels = planes * HEAD_EXPANSION
        p = planes

        def bn(c):
            return (winit.ones((c,)), winit.zeros((c,)), Tensor(np.zeros(c)), Tensor(np.ones(c)))

        self.w1 = winit.trunc_normal((p, in_channels))
        self.b1 = winit.zeros((p,))
        self.bn1 = bn(p)
        self.w2 = winit.trunc_normal((p, p, 3, 3))
        self.b2 = winit.zeros((p,))
        self.bn2 = bn(p)
        self.w3 = winit.trunc_normal((self.out_channels, p))
        self.b3 = winit.zeros((self.out_channels,))
        self.bn3 = bn(self.out_channels)
        self.ws = winit.trunc_normal((self.out_channels, in_channels))
        self.bs = winit.zeros((self.out_channels,))
        self.bns = bn(self.out_channels)

    @staticmethod
    def _bn(x, params):
        g, b, m, v = params
        return batch_norm_inference(x, g, b, m, v, eps=BN_EPS)

    def forward(self, x: Tensor) -> Tensor:
        y = relu(self._bn(channel_project(x, self.w1, self.b1), self.bn1))
        y = relu(self._bn(conv2d(y, self.w2, self.b2, stride=1, padding=1), self.bn2))
        y = self._bn(channel_project(y, self.w3, self.b3), self.bn3)
        short = self._bn(channel_project(x, self.ws, self.bs), self.bns)
        return relu(add(y, short))

    def named_weights(self) -> Iterator[tuple[str, Tensor]]:
        for name in ("w1", "b1", "w2", "b2", "w3", "b3", "ws", "bs"):
            yield name, getattr(self, name)
        for bn_name in ("bn1", "bn2", "bn3", "bns"):
            g, b, _, _ = getattr(self, bn_name)
            yield f"{bn_name}_gamma", g
            yield f"{bn_name}_beta", b

    def param_count(self) -> int:
        ci, p, co = self.in_channels, self.planes, self.out_channels
        total = ci * p + p + 2 * p           # 1x1 reduce + bn
        total += 9 * p * p + p + 2 * p       # 3x3 + bn
        total += p * co + co + 2 * co        # 1x1 expand + bn
        total += ci * co + co + 2 * co       # shortcut projection + bn
        return total

    def cost(self, h: int, w: int) -> LayerCost:
        ci, p, co = self.in_channels, self.planes, self.out_channels
        hw = h * w
        macs = hw * ci * p + p * hw * p * 9 + hw * p * co + hw * ci * co
        eltwise = hw * (3 * p + 3 * p + 2 * co + 2 * co + 2 * co)
        return LayerCost(macs=macs, eltwise=eltwise)


class ClassifierHead:
    """HRNetV2-style classification head over the four branch outputs.

    Each branch passes through a bottleneck to (128, 256, 512, 1024)
    channels; a cascade of stride-2 3x3 convs doubles channels and adds into
    the next branch; a 1x1 conv expands to 2048, followed by global average
    pooling and a linear classifier.
    """

    def __init__(self, in_channels: tuple[int, ...], num_classes: int, winit: WeightInit):
        if len(in_channels) != 4:
            raise ConfigError(f"classifier head: expected 4 branches, got {len(in_channels)}")
        if num_classes < 1:
            raise ConfigError(f"classifier head: bad class count {num_classes}")
        self.in_channels = tuple(in_channels)
        self.num_classes = num_classes
        self.bottlenecks = [_Bottleneck(c, p, winit) for c, p in zip(in_channels, HEAD_PLANES)]
        self.downsamples = []
        for i in range(3):
            cin = HEAD_PLANES[i] * HEAD_EXPANSION
            cout = HEAD_PLANES[i + 1] * HEAD_EXPANSION
            self.downsamples.append({
                "w": winit.trunc_normal((cout, cin, 3, 3)),
                "b": winit.zeros((cout,)),
                "bn_gamma": winit.ones((cout,)),
                "bn_beta": winit.zeros((cout,)),
                "bn_mean": Tensor(np.zeros(cout)),
                "bn_var": Tensor(np.ones(cout)),
            })
        top = HEAD_PLANES[3] * HEAD_EXPANSION
        self.final_w = winit.trunc_normal((HEAD_FINAL, top))
        self.final_b = winit.zeros((HEAD_FINAL,))
        self.final_bn_gamma = winit.ones((HEAD_FINAL,))
        self.final_bn_beta = winit.zeros((HEAD_FINAL,))
        self.final_bn_mean = Tensor(np.zeros(HEAD_FINAL))
        self.final_bn_var = Tensor(np.ones(HEAD_FINAL))
        self.cls_w = winit.trunc_normal((num_classes, HEAD_FINAL))
        self.cls_b = winit.zeros((num_classes,))

    def forward(self, inputs: list[Tensor]) -> Tensor:
        if len(inputs) != 4:
            raise ShapeError(f"classifier head: expected 4 branch inputs, got {len(inputs)}")
        y = self.bottlenecks[0].forward(inputs[0])
        for i in range(3):
            d = self.downsamples[i]
            down = conv2d(y, d["w"], d["b"], stride=2, padding=1)
            down = relu(batch_norm_inference(down, d["bn_gamma"], d["bn_beta"],
                                             d["bn_mean"], d["bn_var"], eps=BN_EPS))
            y = add(self.bottlenecks[i + 1].forward(inputs[i + 1]), down)
        y = channel_project(y, self.final_w, self.final_b)
        y = relu(batch_norm_inference(y, self.final_bn_gamma, self.final_bn_beta,
                                      self.final_bn_mean, self.final_bn_var, eps=BN_EPS))
        pooled = global_avg_pool(y)
        return add(matmul(pooled, transpose(self.cls_w, (1, 0))), self.cls_b)

    def named_weights(self) -> Iterator[tuple[str, Tensor]]:
        for i, b in enumerate(self.bottlenecks):
            for name, t in b.named_weights():
                yield f"bottleneck{i}.{name}", t
        for i, d in enumerate(self.downsamples):
            yield f"down{i}.w", d["w"]
            yield f"down{i}.b", d["b"]
            yield f"down{i}.bn_gamma", d["bn_gamma"]
            yield f"down{i}.bn_beta", d["bn_beta"]
        yield "final_w", self.final_w
        yield "final_b", self.final_b
        yield "final_bn_gamma", self.final_bn_gamma
        yield "final_bn_beta", self.final_bn_beta
        yield "cls_w", self.cls_w
        yield "cls_b", self.cls_b

    def param_count(self) -> int:
        total = sum(b.param_count() for b in self.bottlenecks)
        for i in range(3):
            cin = HEAD_PLANES[i] * HEAD_EXPANSION
            cout = HEAD_PLANES[i + 1] * HEAD_EXPANSION
            total += 9 * cin * cout + cout + 2 * cout
        top = HEAD_PLANES[3] * HEAD_EXPANSION
        total += top * HEAD_FINAL + HEAD_FINAL + 2 * HEAD_FINAL
        total += HEAD_FINAL * self.num_classes + self.num_classes
        return total

    def cost(self, sizes: list[tuple[int, int]]) -> LayerCost:
        if len(sizes) != 4:
            raise ShapeError(f"classifier head: expected 4 branch sizes, got {len(sizes)}")
        total = LayerCost()
        for b, (h, w) in zip(self.bottlenecks, sizes):
            total += b.cost(h, w)
        for i in range(3):
            cin = HEAD_PLANES[i] * HEAD_EXPANSION
            cout = HEAD_PLANES[i + 1] * HEAD_EXPANSION
            h, w = sizes[i + 1]
            total.macs += cout * h * w * cin * 9
            total.eltwise += 3 * cout * h * w + cout * h * w
        h4, w4 = sizes[3]
        top = HEAD_PLANES[3] * HEAD_EXPANSION
        total.macs += h4 * w4 * top * HEAD_FINAL
        total.eltwise += 3 * HEAD_FINAL * h4 * w4 + HEAD_FINAL * h4 * w4 + HEAD_FINAL
        total.macs += HEAD_FINAL * self.num_classes
        total.eltwise += self.num_classes
        return total
