"""Dense cubical tensors and the mode products used by the moment/MGF equations.

All indices are 0-based: a multi-index ``(k_0, ..., k_{r-1})`` addresses one
entry of an order-``r`` tensor whose every mode has extent ``n``. Modes are
numbered ``0 .. r-1``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_ORDER = 4


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """Order-``order`` tensor with all modes of extent ``dim``.

    ``data`` is the flat row-major (last index fastest) array of length
    ``dim ** order``. Instances are treated as immutable; operations return
    new tensors.
    """

    order: int
    dim: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.order < 1 or self.dim < 1:
            raise ValueError(f"order and dim must be >= 1, got {self.order}, {self.dim}")
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        if data.size != self.dim**self.order:
            raise ValueError(
                f"data has {data.size} entries, expected {self.dim}**{self.order}"
            )
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "DenseTensor":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim < 1 or len(set(array.shape)) != 1:
            raise ValueError(f"array must be cubical, got shape {array.shape}")
        return cls(array.ndim, array.shape[0], array)

    @classmethod
    def zeros(cls, order: int, dim: int) -> "DenseTensor":
        return cls(order, dim, np.zeros(dim**order))

    @classmethod
    def full(cls, order: int, dim: int, value: float) -> "DenseTensor":
        return cls(order, dim, np.full(dim**order, float(value)))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.dim,) * self.order

    @property
    def array(self) -> np.ndarray:
        """Read-only view with shape ``(dim,) * order``."""
        return self.data.reshape(self.shape)

    def _offset(self, k: Sequence[int]) -> int:
        k = tuple(int(i) for i in k)
        if len(k) != self.order:
            raise IndexError(f"multi-index has length {len(k)}, tensor order is {self.order}")
        for mode, i in enumerate(k):
            if not 0 <= i < self.dim:
                raise IndexError(f"index {i} out of range for mode {mode} (extent {self.dim})")
        offset = 0
        for i in k:
            offset = offset * self.dim + i
        return offset

    def get(self, k: Sequence[int]) -> float:
        return float(self.data[self._offset(k)])

    def with_value(self, k: Sequence[int], value: float) -> "DenseTensor":
        """Copy of this tensor with entry ``k`` replaced."""
        data = self.data.copy()
        data[self._offset(k)] = value
        return DenseTensor(self.order, self.dim, data)

    def allclose(self, other: "DenseTensor", atol: float = 0.0, rtol: float = 0.0) -> bool:
        return (
            self.order == other.order
            and self.dim == other.dim
            and bool(np.allclose(self.data, other.data, atol=atol, rtol=rtol))
        )

    def __repr__(self) -> str:
        return f"DenseTensor(order={self.order}, dim={self.dim}, data={self.array!r})"


def get(t: DenseTensor, k: Sequence[int]) -> float:
    return t.get(k)


def check_order(order: int, dim: int, max_order: int = MAX_ORDER) -> None:
    """Warn when an order-``order`` tensor exceeds the configured size cap."""
    if order > max_order:
        warnings.warn(
            f"tensor order {order} exceeds max_order={max_order}; "
            f"storage grows as {dim}**{order} = {dim**order} entries",
            RuntimeWarning,
            stacklevel=2,
        )


def mode_product(t: DenseTensor, a: np.ndarray, mode: int) -> DenseTensor:
    """``t x_mode a``: contract mode ``mode`` of ``t`` with the columns of ``a``.

    ``[Y]_{k with k_mode = i} = sum_p a[i, p] [X]_{k with k_mode = p}``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (t.dim, t.dim):
        raise ValueError(f"matrix shape {a.shape} does not match tensor dim {t.dim}")
    if not 0 <= mode < t.order:
        raise ValueError(f"mode {mode} out of range for order-{t.order} tensor")
    out = np.tensordot(a, t.array, axes=([1], [mode]))
    out = np.moveaxis(out, 0, mode)
    return DenseTensor(t.order, t.dim, out)


def reset_contraction(t: DenseTensor, a: np.ndarray) -> DenseTensor:
    """Push a reset map ``x' = x a`` through every mode of ``t``.

    The result satisfies ``[Y]_K = sum_I [X]_I prod_j a[I_j, K_j]``: an order-1
    tensor maps to ``t @ a`` and an order-2 one to ``a.T @ t @ a``. Each mode
    therefore takes a mode product with ``a.T``.
    """
    a = np.asarray(a, dtype=np.float64)
    out = t
    for mode in range(t.order):
        out = mode_product(out, a.T, mode)
    return out
