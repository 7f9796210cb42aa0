"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records a vector-Jacobian product (VJP) on a small tape so
that ``Tensor.backward`` can walk the graph once, in reverse topological
order, and accumulate gradients.  The engine is deliberately minimal: dense
float64 arrays only, single process, graphs are built per forward call and
owned by the tensors they produced.

An optional operation counter (:func:`count_ops`) tallies multiply-accumulate
operations (matmul / conv2d) and elementwise work separately, which the cost
model uses to cross-check its closed-form FLOP accounting against an actual
instrumented execution.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf as _erf


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; names both shapes."""


class ConfigError(ValueError):
    """Raised for invalid hyperparameters or malformed configuration."""


class GradCheckError(RuntimeError):
    """Raised when a finite-difference probe produces a non-finite value."""


# ---------------------------------------------------------------------------
# grad mode + instrumentation
# ---------------------------------------------------------------------------

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@dataclass
class OpCounter:
    """Running tally of executed work.

    ``macs`` counts one multiply-accumulate per output-contributing product in
    matmul/conv2d.  ``eltwise`` counts one unit per output element of
    elementwise, normalization, softmax, and resampling operations, kept
    separate so a MAC-only total is available.
    """

    macs: int = 0
    eltwise: int = 0


_COUNTER: OpCounter | None = None


@contextlib.contextmanager
def count_ops(counter: OpCounter | None = None):
    """Install ``counter`` (or a fresh one) as the active op tally."""
    global _COUNTER
    if counter is None:
        counter = OpCounter()
    prev = _COUNTER
    _COUNTER = counter
    try:
        yield counter
    finally:
        _COUNTER = prev


def _tally_macs(n: int) -> None:
    if _COUNTER is not None:
        _COUNTER.macs += int(n)


def _tally_eltwise(n: int) -> None:
    if _COUNTER is not None:
        _COUNTER.eltwise += int(n)


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------


class Tensor:
    """A dense float64 array plus an optional gradient and VJP record.

    Tensors are immutable once created except for ``grad``, which is filled
    in (and accumulated) during a single :meth:`backward` pass.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- introspection ------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- autodiff -----------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor through the recorded graph.

        ``grad`` defaults to 1 for single-element tensors.  Gradients are
        accumulated into ``.grad`` of every reachable tensor that has
        ``requires_grad`` set.
        """
        if grad is None:
            if self.size != 1:
                raise ShapeError(
                    f"backward() without an explicit gradient requires a scalar output, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.shape:
                raise ShapeError(f"gradient shape {grad.shape} does not match tensor shape {self.shape}")

        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not (parent.requires_grad or parent._vjp is not None):
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(
                        f"internal VJP shape mismatch: got {pg.shape}, expected {parent.shape}"
                    )
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order topological sort, returned output-first."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def _needs_graph(parents: Iterable[Tensor]) -> bool:
    if not _GRAD_ENABLED:
        return False
    return any(p.requires_grad or p._vjp is not None for p in parents)


def _record(out_data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(out_data)
    if _needs_graph(parents):
        out._parents = parents
        out._vjp = vjp
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    """Broadcasting elementwise addition."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc
    _tally_eltwise(out.size)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    """Broadcasting elementwise multiplication."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc
    _tally_eltwise(out.size)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), vjp)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Sum reduction (counted as elementwise work over the input)."""
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out, dtype=np.float64)
    _tally_eltwise(x.size)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g.reshape((1,) * x.ndim), x.shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        ax = tuple(a % x.ndim for a in ax)
        if keepdims:
            ge = g
        else:
            shape = list(x.shape)
            for a in ax:
                shape[a] = 1
            ge = g.reshape(shape)
        return (np.broadcast_to(ge, x.shape).copy(),)

    return _record(out, (x,), vjp)


def mean_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Mean reduction implemented as a scaled sum."""
    x = _as_tensor(x)
    if axis is None:
        n = x.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for a in ax:
            n *= x.shape[a % x.ndim]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# structural ops (zero-FLOP data movement)
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from exc

    def vjp(g):
        return (g.reshape(x.shape),)

    return _record(out, (x,), vjp)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} are not a permutation for shape {x.shape}")
    out = np.transpose(x.data, axes)
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inv),)

    return _record(out, (x,), vjp)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    parts = tuple(_as_tensor(t) for t in tensors)
    if not parts:
        raise ShapeError("concat: need at least one tensor")
    axis = axis % parts[0].ndim
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, parts, vjp)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries from ``start`` along ``axis``."""
    x = _as_tensor(x)
    axis = axis % x.ndim
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeError(
            f"narrow: slice [{start}:{start + length}) out of range for axis {axis} of shape {x.shape}"
        )
    idx = tuple(slice(None) if a != axis else slice(start, start + length) for a in range(x.ndim))
    out = x.data[idx]

    def vjp(g):
        full = np.zeros(x.shape, dtype=np.float64)
        full[idx] = g
        return (full,)

    return _record(out, (x,), vjp)


def pad_zeros(x: Tensor, bottom: int = 0, right: int = 0) -> Tensor:
    """Zero-pad an NCHW tensor at the bottom / right spatial edges."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"pad_zeros expects an NCHW tensor, got shape {x.shape}")
    if bottom < 0 or right < 0:
        raise ConfigError(f"pad_zeros: negative padding ({bottom}, {right})")
    if bottom == 0 and right == 0:
        out = x.data
    else:
        out = np.pad(x.data, ((0, 0), (0, 0), (0, bottom), (0, right)))
    h, w = x.shape[2], x.shape[3]

    def vjp(g):
        return (g[:, :, :h, :w],)

    return _record(out, (x,), vjp)


# ---------------------------------------------------------------------------
# matmul / conv
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix multiply with numpy broadcasting on leading dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires 2-D+ operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree for {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    _tally_macs(out.size * a.shape[-1])

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(out, (a, b), vjp)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """Spatial output extent of a strided convolution."""
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Strided sliding-window view of shape (N, C, OH, OW, KH, KW)."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, oh, ow, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, *, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 2-D convolution (cross-correlation) on NCHW tensors.

    ``w`` has shape (Cout, Cin/groups, KH, KW); optional bias has shape (Cout,).
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIHW weight, got {x.shape} and {w.shape}")
    n, cin, h, iw = x.shape
    cout, cin_g, kh, kw = w.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigError(f"conv2d: groups={groups} must divide Cin={cin} and Cout={cout}")
    if cin_g != cin // groups:
        raise ShapeError(f"conv2d: weight expects Cin/groups={cin_g}, input provides {cin // groups}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d: invalid stride={stride} or padding={padding}")
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(iw, kw, stride, padding)
    if oh <= 0 or ow <= 0:
        raise ShapeError(
            f"conv2d: empty output for input {x.shape}, kernel {w.shape}, stride {stride}, padding {padding}"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    cols_g = cols.reshape(n, groups, cin_g, oh, ow, kh, kw)
    wg = w.data.reshape(groups, cout // groups, cin_g, kh, kw)
    out = np.einsum("ngchwuv,gocuv->ngohw", cols_g, wg, optimize=True)
    out = out.reshape(n, cout, oh, ow)
    _tally_macs(n * cout * oh * ow * cin_g * kh * kw)
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {b.shape} does not match Cout={cout}")
        out = out + b.data.reshape(1, cout, 1, 1)
        _tally_eltwise(out.size)

    hp, wp = xp.shape[2], xp.shape[3]
    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gg = g.reshape(n, groups, cout // groups, oh, ow)
        gw = np.einsum("ngchwuv,ngohw->gocuv", cols_g, gg, optimize=True)
        gw = gw.reshape(w.shape)
        gxp = np.zeros((n, cin, hp, wp), dtype=np.float64)
        gxp_g = gxp.reshape(n, groups, cin_g, hp, wp)
        for u in range(kh):
            for v in range(kw):
                contrib = np.einsum("ngohw,goc->ngchw", gg, wg[:, :, :, u, v], optimize=True)
                gxp_g[:, :, :, u:u + stride * oh:stride, v:v + stride * ow:stride] += contrib
        gx = gxp[:, :, padding:padding + h, padding:padding + iw] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _record(out, parents, vjp)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0.0)
    _tally_eltwise(out.size)

    def vjp(g):
        return (g * (x.data > 0.0),)

    return _record(out, (x,), vjp)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    x = _as_tensor(x)
    phi = 0.5 * (1.0 + _erf(x.data / math.sqrt(2.0)))
    out = x.data * phi
    _tally_eltwise(out.size)

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
        return (g * (phi + x.data * pdf),)

    return _record(out, (x,), vjp)


def hardswish(x: Tensor) -> Tensor:
    """Hardswish x * clip(x + 3, 0, 6) / 6; derivative fixed to 0 at the kinks."""
    x = _as_tensor(x)
    out = x.data * np.clip(x.data + 3.0, 0.0, 6.0) / 6.0
    _tally_eltwise(out.size)

    def vjp(g):
        d = x.data
        slope = np.zeros_like(d)
        mid = (d > -3.0) & (d < 3.0)
        slope[mid] = (2.0 * d[mid] + 3.0) / 6.0
        slope[d > 3.0] = 1.0
        return (g * slope,)

    return _record(out, (x,), vjp)


# ---------------------------------------------------------------------------
# normalization / softmax
# ---------------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; -inf logits map to exactly 0 weight.

    Raises :class:`ConfigError` if any row is fully masked (all -inf), since
    the result would be undefined.
    """
    x = _as_tensor(x)
    axis = axis % x.ndim
    m = np.max(x.data, axis=axis, keepdims=True)
    if np.isneginf(m).any():
        raise ConfigError("softmax: encountered a fully masked (all -inf) row")
    if np.isposinf(m).any():
        raise ConfigError("softmax: +inf logits are not supported")
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = e / s
    _tally_eltwise(out.size)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _record(out, (x,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with affine parameters."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match feature dim ({c},)"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    _tally_eltwise(out.size)

    def vjp(g):
        gxhat = g * gamma.data
        m1 = gxhat.mean(axis=-1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gxhat - m1 - xhat * m2)
        axes = tuple(range(x.ndim - 1))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _record(out, (x, gamma, beta), vjp)


def batch_norm_inference(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Tensor,
                         running_var: Tensor, eps: float = 0.0) -> Tensor:
    """Inference-mode batch norm over channel axis 1 of an NCHW tensor."""
    x = _as_tensor(x)
    gamma, beta = _as_tensor(gamma), _as_tensor(beta)
    running_mean, running_var = _as_tensor(running_mean), _as_tensor(running_var)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm_inference expects NCHW input, got {x.shape}")
    c = x.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta), ("mean", running_mean), ("var", running_var)):
        if t.shape != (c,):
            raise ShapeError(f"batch_norm_inference: {name} shape {t.shape} does not match C={c}")
    if (running_var.data < 0).any():
        raise ConfigError("batch_norm_inference: negative running variance")
    shape = (1, c, 1, 1)
    inv = 1.0 / np.sqrt(running_var.data + eps)
    xhat = (x.data - running_mean.data.reshape(shape)) * inv.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)
    _tally_eltwise(out.size)

    def vjp(g):
        gx = g * (gamma.data * inv).reshape(shape)
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        return gx, ggamma, gbeta, None, None

    return _record(out, (x, gamma, beta, running_mean, running_var), vjp)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def nearest_upsample(x: Tensor, rate: int) -> Tensor:
    """Nearest-neighbour spatial upsampling of an NCHW tensor by ``rate``."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"nearest_upsample expects NCHW input, got {x.shape}")
    if not isinstance(rate, int) or rate < 1:
        raise ConfigError(f"nearest_upsample: rate must be a positive integer, got {rate!r}")
    if rate == 1:
        out = x.data.copy()
    else:
        out = np.repeat(np.repeat(x.data, rate, axis=2), rate, axis=3)
    _tally_eltwise(out.size)
    n, c, h, w = x.shape

    def vjp(g):
        return (g.reshape(n, c, h, rate, w, rate).sum(axis=(3, 5)),)

    return _record(out, (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes of an NCHW tensor, returning (N, C)."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW input, got {x.shape}")
    return mean_(x, axis=(2, 3))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckResult:
    """Outcome of a central finite-difference gradient check."""

    op_name: str
    max_rel_error: float
    epsilon: float
    tolerance: float
    passed: bool


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, epsilon: float = 1e-5,
               tolerance: float = 1e-4, op_name: str = "f") -> GradCheckResult:
    """Compare reverse-mode gradients of ``sum(f(x)**2)`` against central
    finite differences, coordinate by coordinate.

    The relative error for each coordinate is |fd - ad| / max(1, |fd|, |ad|);
    the result reports the maximum over all coordinates.  A non-finite
    difference raises :class:`GradCheckError` naming the offending coordinate.
    """
    base = np.array(x.data, dtype=np.float64, copy=True)
    leaf = Tensor(base.copy(), requires_grad=True)
    out = f(leaf)
    loss = sum_(mul(out, out))
    loss.backward()
    if leaf.grad is None:
        ad = np.zeros_like(base)
    else:
        ad = leaf.grad.copy()

    def loss_at(arr: np.ndarray) -> float:
        with no_grad():
            y = f(Tensor(arr))
        return float(np.sum(y.data * y.data))

    fd = np.zeros_like(base)
    flat_base = base.ravel()
    flat_fd = fd.ravel()
    for i in range(flat_base.size):
        orig = flat_base[i]
        flat_base[i] = orig + epsilon
        hi = loss_at(base)
        flat_base[i] = orig - epsilon
        lo = loss_at(base)
        flat_base[i] = orig
        d = (hi - lo) / (2.0 * epsilon)
        if not np.isfinite(d):
            raise GradCheckError(f"{op_name}: non-finite finite-difference at coordinate {i}")
        flat_fd[i] = d

    denom = np.maximum(1.0, np.maximum(np.abs(fd), np.abs(ad)))
    max_rel = float(np.max(np.abs(fd - ad) / denom)) if base.size else 0.0
    return GradCheckResult(op_name=op_name, max_rel_error=max_rel, epsilon=epsilon,
                           tolerance=tolerance, passed=max_rel <= tolerance)
