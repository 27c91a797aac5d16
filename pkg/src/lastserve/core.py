"""Dense float64 math for small ranking networks.

Everything operates on plain numpy arrays. Parameter collections are
name-keyed and insertion-ordered, so flattening to a single vector and back
is exact; the serving-time overlay machinery depends on that layout being
stable. Gradients are computed with explicit per-layer backward functions
rather than a general tape: the network shapes are fixed and tiny.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

Array = np.ndarray


class ContractError(ValueError):
    """An operation was called with inputs that violate its contract."""


@dataclass(frozen=True)
class ModelDims:
    """Feature and hidden dimensions shared by generator and evaluator."""

    d_user: int = 8
    d_item: int = 8
    hidden: int = 32

    def as_dict(self) -> dict[str, int]:
        return {"d_user": self.d_user, "d_item": self.d_item, "hidden": self.hidden}

    @classmethod
    def from_dict(cls, d: Mapping[str, int]) -> "ModelDims":
        return cls(d_user=int(d["d_user"]), d_item=int(d["d_item"]), hidden=int(d["hidden"]))


def as_tensor(values, shape=None) -> Array:
    """Coerce to a float64 array, rejecting NaN/Inf entries."""
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ContractError("tensor contains non-finite entries")
    return arr


class ParamSet:
    """Ordered name -> array collection holding model parameters.

    Insertion order fixes the coordinate layout of :meth:`flatten`, so two
    ParamSets constructed with the same names and shapes are
    vector-compatible and ``unflatten(flatten())`` round-trips bitwise.
    """

    def __init__(self, entries: Mapping[str, Array]):
        self._entries: dict[str, Array] = {
            name: as_tensor(value) for name, value in entries.items()
        }

    def __getitem__(self, name: str) -> Array:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> tuple[str, ...]:
        return tuple(self._entries)

    def items(self):
        return self._entries.items()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: arr.shape for name, arr in self._entries.items()}

    @property
    def flat_len(self) -> int:
        return sum(arr.size for arr in self._entries.values())

    def flatten(self) -> Array:
        """Concatenate all entries into one vector, in insertion order."""
        if not self._entries:
            return np.empty(0, dtype=np.float64)
        return np.concatenate([arr.ravel() for arr in self._entries.values()])

    def unflatten(self, flat: Array) -> "ParamSet":
        """Rebuild a ParamSet with this one's names/shapes from a flat vector."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.ndim != 1 or flat.size != self.flat_len:
            raise ContractError(
                f"expected flat vector of length {self.flat_len}, got shape {flat.shape}"
            )
        out: dict[str, Array] = {}
        offset = 0
        for name, arr in self._entries.items():
            out[name] = flat[offset : offset + arr.size].reshape(arr.shape).copy()
            offset += arr.size
        return ParamSet(out)

    def copy(self) -> "ParamSet":
        return ParamSet({name: arr.copy() for name, arr in self._entries.items()})

    def zeros_like(self) -> "ParamSet":
        return ParamSet({name: np.zeros_like(arr) for name, arr in self._entries.items()})


@dataclass(frozen=True)
class AdaptableMask:
    """Names of the ParamSet entries that serving-time updates may touch."""

    names: frozenset[str]

    def __init__(self, names):
        object.__setattr__(self, "names", frozenset(names))

    def validate(self, params: ParamSet) -> None:
        missing = self.names - set(params.names())
        if missing:
            raise ContractError(f"mask names not present in params: {sorted(missing)}")

    def masked_names(self, params: ParamSet) -> list[str]:
        """Masked entry names in the ParamSet's insertion order."""
        self.validate(params)
        return [name for name in params.names() if name in self.names]

    def size(self, params: ParamSet) -> int:
        return sum(params[name].size for name in self.masked_names(params))

    def gather(self, params: ParamSet, values: Mapping[str, Array] | None = None) -> Array:
        """Flatten the masked coordinates, reading from `values` if given.

        `values` lets callers gather a gradient dict using the ParamSet
        purely for name order and shape checking.
        """
        source = params if values is None else values
        names = self.masked_names(params)
        if not names:
            return np.empty(0, dtype=np.float64)
        return np.concatenate([np.asarray(source[name], dtype=np.float64).ravel() for name in names])


def axpy_overlay(base: ParamSet, mask: AdaptableMask, delta: Array, scale: float) -> ParamSet:
    """Return a read-only view of `base` with masked entries shifted by scale*delta.

    `base` is never mutated; unmasked entries are shared by reference. With
    scale == 0 every entry is shared, so downstream computation is
    bit-identical to using `base` directly.
    """
    delta = np.asarray(delta, dtype=np.float64)
    names = mask.masked_names(base)
    expected = sum(base[name].size for name in names)
    if delta.ndim != 1 or delta.size != expected:
        raise ContractError(f"delta length {delta.size} != masked size {expected}")
    if scale == 0.0:
        return ParamSet({name: arr for name, arr in base.items()})
    out: dict[str, Array] = {}
    offset = 0
    for name, arr in base.items():
        if name in mask.names:
            piece = delta[offset : offset + arr.size].reshape(arr.shape)
            out[name] = arr + scale * piece
            offset += arr.size
        else:
            out[name] = arr
    return ParamSet(out)


def affine_forward(x: Array, w: Array, b: Array) -> Array:
    """out[i, o] = sum_j x[i, j] * w[j, o] + b[o]."""
    x, w, b = np.asarray(x, np.float64), np.asarray(w, np.float64), np.asarray(b, np.float64)
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise ContractError("affine_forward expects x:(B,I), w:(I,O), b:(O,)")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ContractError(
            f"affine shapes do not conform: x{x.shape} w{w.shape} b{b.shape}"
        )
    return x @ w + b


def affine_backward(grad_out: Array, x: Array, w: Array) -> tuple[Array, Array, Array]:
    """Reverse-mode partials of affine_forward: (d_x, d_w, d_b)."""
    grad_out = np.asarray(grad_out, np.float64)
    if grad_out.shape != (x.shape[0], w.shape[1]):
        raise ContractError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"({x.shape[0]}, {w.shape[1]})"
        )
    return grad_out @ w.T, x.T @ grad_out, grad_out.sum(axis=0)


def tanh_affine_forward(x: Array, w: Array, b: Array) -> Array:
    return np.tanh(affine_forward(x, w, b))


def tanh_affine_backward(grad_out: Array, out: Array, x: Array, w: Array) -> tuple[Array, Array, Array]:
    """Backward of tanh(affine); `out` is the forward activation."""
    return affine_backward(grad_out * (1.0 - out * out), x, w)


def masked_softmax(scores: Array, mask: Array) -> Array:
    """Softmax over the True entries of `mask`; False entries get exactly 0.

    Max-subtraction keeps the exponentials finite for any score magnitude.
    """
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if scores.shape != mask.shape or scores.ndim != 1:
        raise ContractError("scores and mask must be 1-D with identical shape")
    if not mask.any():
        raise ContractError("masked_softmax requires at least one unmasked entry")
    out = np.zeros_like(scores)
    active = scores[mask]
    z = np.exp(active - active.max())
    out[mask] = z / z.sum()
    return out


def l2_norm(v: Array) -> float:
    """sqrt(sum v_i^2); 0.0 for an empty vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return 0.0
    return float(np.sqrt(np.sum(v * v)))


def vector_norm(v: Array, ord: float = 2.0) -> float:
    """L1/L2/Linf norm of a flat vector. The gradient-scaling ratio in the
    serving-time update uses the same `ord` for numerator and denominator."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return 0.0
    if ord == 2.0:
        return l2_norm(v)
    return float(np.linalg.norm(v, ord=ord))
