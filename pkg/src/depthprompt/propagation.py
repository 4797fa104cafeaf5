"""Affinity-guided spatial propagation.

Each step replaces every pixel by a convex combination of the initial depth
at that pixel (weighted by the stencil's center channel) and the previous
iterate at the C*C - 1 surrounding stencil offsets. Out-of-image offsets are
clamped to the nearest edge pixel. Updates are Jacobi-style: a step reads
only the previous iterate.

Weights are laid out as ``(C*C, H, W)``; channel ``k`` corresponds to the
offset ``(k // C - r, k % C - r)`` with ``r = C // 2``. Accumulation order is
fixed (center first, then increasing ``k``) so that all backends agree bit
for bit.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _accel
from .core import DepthRaster, SparseDepth, as_depth, read_stack, write_stack
from .errors import ConfigurationError, ContractError, DataError, FormatError


@dataclass(frozen=True, eq=False)
class AffinityField:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 3:
            raise ContractError(f"affinity must be (C*C, H, W), got {w.shape}")
        c = math.isqrt(w.shape[0])
        if c * c != w.shape[0] or c % 2 == 0 or c < 3:
            raise ContractError(f"channel count {w.shape[0]} is not an odd square >= 9")
        object.__setattr__(self, "weights", w)

    @property
    def stencil_size(self) -> int:
        return math.isqrt(self.weights.shape[0])

    @property
    def radius(self) -> int:
        return self.stencil_size // 2

    @property
    def center(self) -> int:
        return self.weights.shape[0] // 2

    @property
    def height(self) -> int:
        return self.weights.shape[1]

    @property
    def width(self) -> int:
        return self.weights.shape[2]

    def transpose(self) -> "AffinityField":
        """Field for the transposed raster (offset ``(dy, dx)`` becomes ``(dx, dy)``)."""
        c = self.stencil_size
        w = self.weights.reshape(c, c, self.height, self.width)
        w = w.transpose(1, 0, 3, 2).reshape(c * c, self.width, self.height)
        return AffinityField(np.ascontiguousarray(w))


@dataclass(frozen=True)
class PropagationConfig:
    n_steps: int = 6
    seed_reinjection: bool = True
    boundary: str = "clamp"

    def __post_init__(self):
        if self.n_steps < 0:
            raise ConfigurationError("n_steps must be >= 0")
        if self.boundary != "clamp":
            raise ConfigurationError(f"unsupported boundary {self.boundary!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def normalize_affinity(raw: AffinityField) -> AffinityField:
    """Per pixel ``w <- |w| / sum |w|``; an all-zero pixel becomes the identity stencil."""
    w = np.abs(raw.weights)
    if not np.all(np.isfinite(w)):
        raise DataError("affinity contains non-finite weights")
    total = w.sum(axis=0)
    dead = total == 0
    out = w / np.where(dead, 1.0, total)
    if np.any(dead):
        out[:, dead] = 0.0
        out[raw.center, dead] = 1.0
    return AffinityField(out)


def write_affinity(field: AffinityField, path) -> None:
    write_stack(field.weights.astype(np.float32), path)


def read_affinity(path) -> AffinityField:
    stack = read_stack(path)
    c = math.isqrt(stack.shape[0])
    if c * c != stack.shape[0] or c % 2 == 0 or c < 3:
        raise FormatError(f"{path}: channel count {stack.shape[0]} is not an odd square >= 9")
    return AffinityField(stack.astype(np.float64))


# ----------------------------------------------------------------- kernels


@_accel.njit
def _step_loop(prev, init, w, radius, out):
    # stencil-major so every pass streams one contiguous weight plane; per-pixel
    # accumulation order (center, then k ascending) matches the numpy path
    c = 2 * radius + 1
    center = radius * c + radius
    h, wd = prev.shape
    for y in range(h):
        for x in range(wd):
            out[y, x] = w[center, y, x] * init[y, x]
    for k in range(c * c):
        if k == center:
            continue
        dy = k // c - radius
        dx = k % c - radius
        for y in range(h):
            yy = min(max(y + dy, 0), h - 1)
            for x in range(wd):
                xx = min(max(x + dx, 0), wd - 1)
                out[y, x] += w[k, y, x] * prev[yy, xx]


@_accel.njit
def _propagate_numba(init, seeds, w, radius, n_steps, reinject):
    prev = init.copy()
    out = np.empty_like(init)
    h, wd = init.shape
    for _ in range(n_steps):
        _step_loop(prev, init, w, radius, out)
        if reinject:
            for y in range(h):
                for x in range(wd):
                    if seeds[y, x] > 0:
                        out[y, x] = seeds[y, x]
        prev, out = out, prev
    return prev


def _step_numpy(prev, init, w, radius):
    c = 2 * radius + 1
    center = radius * c + radius
    h, wd = prev.shape
    padded = np.pad(prev, radius, mode="edge")
    acc = w[center] * init
    for k in range(c * c):
        if k == center:
            continue
        dy, dx = k // c, k % c
        acc = acc + w[k] * padded[dy:dy + h, dx:dx + wd]
    return acc


def _propagate_numpy(init, seeds, w, radius, n_steps, reinject, history=None):
    prev = init.copy()
    mask = seeds > 0
    for _ in range(n_steps):
        prev = _step_numpy(prev, init, w, radius)
        if reinject:
            prev = np.where(mask, seeds, prev)
        if history is not None:
            history.append(prev)
    return prev


def _check_inputs(initial, seeds, affinity):
    init = as_depth(initial).values.astype(np.float64)
    sd = as_depth(seeds, SparseDepth).values.astype(np.float64)
    if not isinstance(affinity, AffinityField):
        affinity = AffinityField(affinity)
    if init.shape != sd.shape or init.shape != (affinity.height, affinity.width):
        raise ContractError(
            f"shape mismatch: initial {init.shape}, seeds {sd.shape}, "
            f"affinity {(affinity.height, affinity.width)}"
        )
    return np.ascontiguousarray(init), np.ascontiguousarray(sd), affinity


def propagate(initial, seeds, affinity: AffinityField, cfg: PropagationConfig = PropagationConfig(),
              *, backend: str | None = None) -> DepthRaster:
    """Run ``cfg.n_steps`` propagation steps from ``initial``.

    ``affinity`` must already be normalized. With ``cfg.seed_reinjection`` the
    valid seed pixels overwrite the iterate after every step.
    """
    init, sd, aff = _check_inputs(initial, seeds, affinity)
    reinject = cfg.seed_reinjection
    if _accel.resolve_backend(backend) == "numba":
        out = _propagate_numba(init, sd, aff.weights, aff.radius, cfg.n_steps, reinject)
    else:
        out = _propagate_numpy(init, sd, aff.weights, aff.radius, cfg.n_steps, reinject)
    return DepthRaster(out)


def propagate_history(initial, seeds, affinity: AffinityField, cfg: PropagationConfig = PropagationConfig()) -> list[np.ndarray]:
    """All iterates ``[D0, D1, ..., D_n]`` (numpy path), for inspection and tests."""
    init, sd, aff = _check_inputs(initial, seeds, affinity)
    hist = [init]
    _propagate_numpy(init, sd, aff.weights, aff.radius, cfg.n_steps, cfg.seed_reinjection, hist)
    return hist


def propagate_reference(initial, seeds, affinity: AffinityField, cfg: PropagationConfig = PropagationConfig()) -> DepthRaster:
    """Direct per-pixel loop in plain Python. Slow; an oracle for tests."""
    init, sd, aff = _check_inputs(initial, seeds, affinity)
    h, wd = init.shape
    c = aff.stencil_size
    r = aff.radius
    center = aff.center
    w = aff.weights
    d0 = init.tolist()
    prev = [row[:] for row in d0]
    for _ in range(cfg.n_steps):
        nxt = [[0.0] * wd for _ in range(h)]
        for y in range(h):
            for x in range(wd):
                acc = float(w[center, y, x]) * d0[y][x]
                for k in range(c * c):
                    if k == center:
                        continue
                    yy = min(max(y + k // c - r, 0), h - 1)
                    xx = min(max(x + k % c - r, 0), wd - 1)
                    acc = acc + float(w[k, y, x]) * prev[yy][xx]
                nxt[y][x] = acc
        if cfg.seed_reinjection:
            for y in range(h):
                for x in range(wd):
                    if sd[y, x] > 0:
                        nxt[y][x] = float(sd[y, x])
        prev = nxt
    return DepthRaster(np.array(prev, dtype=np.float64))
