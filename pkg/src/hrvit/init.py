"""Deterministic weight initialization and value checksums.

A 64-bit master seed drives a splitmix-style stream; every tensor drawn from
the stream receives its own derived child seed, so identical seeds yield
bit-identical weights regardless of platform or run.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (next_state, output)."""
    with np.errstate(over="ignore"):
        s = (np.uint64(state) + _GOLDEN) & _MASK64
        z = s
        z = (z ^ (z >> np.uint64(30))) * _MIX1 & _MASK64
        z = (z ^ (z >> np.uint64(27))) * _MIX2 & _MASK64
        z = z ^ (z >> np.uint64(31))
    return int(s), int(z)


class WeightInit:
    """Sequential weight factory: one child seed per tensor drawn."""

    def __init__(self, seed: int):
        self._state = int(seed) & 0xFFFFFFFFFFFFFFFF

    def _child(self) -> int:
        self._state, out = splitmix64(self._state)
        return out

    def trunc_normal(self, shape: tuple[int, ...], std: float = 0.02) -> Tensor:
        """Truncated normal (+-2 sigma, rejection sampled), scaled by ``std``."""
        rng = np.random.Generator(np.random.PCG64(self._child()))
        vals = rng.standard_normal(shape)
        bad = np.abs(vals) > 2.0
        while bad.any():
            vals[bad] = rng.standard_normal(int(bad.sum()))
            bad = np.abs(vals) > 2.0
        return Tensor(vals * std, requires_grad=True)

    def zeros(self, shape: tuple[int, ...]) -> Tensor:
        self._child()  # keep the stream position independent of init kind
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(self, shape: tuple[int, ...]) -> Tensor:
        self._child()
        return Tensor(np.ones(shape), requires_grad=True)

    def constant(self, shape: tuple[int, ...], value: float, requires_grad: bool = False) -> Tensor:
        self._child()
        return Tensor(np.full(shape, float(value)), requires_grad=requires_grad)


def checksum(values) -> int:
    """Order-independent 64-bit checksum of a float array's bit patterns.

    Each float64 value is hashed (splitmix64 finalizer on its raw bits) and
    the hashes are summed modulo 2**64, so the checksum is independent of
    memory layout and iteration order but sensitive to any value change.
    """
    if isinstance(values, Tensor):
        values = values.data
    arr = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
    bits = arr.view(np.uint64).ravel()
    with np.errstate(over="ignore"):
        z = (bits + _GOLDEN) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * _MIX1 & _MASK64
        z = (z ^ (z >> np.uint64(27))) * _MIX2 & _MASK64
        z = z ^ (z >> np.uint64(31))
        total = np.uint64(0)
        for chunk in np.array_split(z, max(1, z.size // 1_000_000 + 1)):
            total = (total + chunk.sum(dtype=np.uint64)) & _MASK64
    return int(total)
