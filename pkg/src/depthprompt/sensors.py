"""Sensor simulation: sparsity / pattern / range transforms and synthetic scenes.

Every sampler copies ground-truth values verbatim at the retained pixels and
writes 0 elsewhere; no value is ever perturbed.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import DepthRaster, ImageRaster, SparseDepth, as_depth
from .errors import ConfigurationError, ContractError, InsufficientSupportError

PATTERNS = ("random", "grid", "line")


@dataclass(frozen=True)
class BiasSpec:
    """Declarative sensor condition.

    ``sample_count`` is the point budget of the random pattern. Under random
    depth augmentation the count is drawn log-uniformly from
    ``[sample_count_min, sample_count]``; ``sample_count_min=None`` means 1.
    """

    pattern: str = "random"
    sample_count: int = 500
    sample_count_min: Optional[int] = None
    grid_stride: int = 4
    grid_phase: tuple[int, int] = (0, 0)
    line_count: int = 4
    line_band: Optional[tuple[int, int]] = None
    range_window: tuple[float, float] = (0.0, math.inf)
    rng_seed: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ConfigurationError(f"unknown pattern {self.pattern!r}")
        if self.sample_count < 0 or self.line_count < 0:
            raise ConfigurationError("counts must be non-negative")
        if self.sample_count_min is not None and not 0 <= self.sample_count_min <= self.sample_count:
            raise ConfigurationError("sample_count_min must lie in [0, sample_count]")
        if self.grid_stride < 1:
            raise ConfigurationError("grid_stride must be >= 1")
        lo, hi = self.range_window
        if not 0 <= lo < hi:
            raise ConfigurationError(f"range window must satisfy 0 <= min < max, got {self.range_window}")
        object.__setattr__(self, "grid_phase", tuple(int(v) for v in self.grid_phase))
        object.__setattr__(self, "range_window", (float(lo), float(hi)))
        if self.line_band is not None:
            object.__setattr__(self, "line_band", tuple(int(v) for v in self.line_band))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid_phase"] = list(self.grid_phase)
        d["range_window"] = [self.range_window[0], _encode_inf(self.range_window[1])]
        d["line_band"] = None if self.line_band is None else list(self.line_band)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BiasSpec":
        d = dict(d)
        if "range_window" in d:
            lo, hi = d["range_window"]
            d["range_window"] = (float(lo), _decode_inf(hi))
        for key in ("grid_phase", "line_band"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    def label(self) -> str:
        if self.pattern == "random":
            what = f"random{self.sample_count}"
            if self.sample_count_min is not None:
                what = f"random{self.sample_count_min}-{self.sample_count}"
        elif self.pattern == "grid":
            what = f"grid{self.grid_stride}"
        else:
            what = f"line{self.line_count}"
        lo, hi = self.range_window
        if lo > 0 or math.isfinite(hi):
            what += f"@{lo:g}-{hi:g}m"
        return what


def _encode_inf(v: float):
    return "inf" if math.isinf(v) else v


def _decode_inf(v) -> float:
    return math.inf if v in ("inf", None) else float(v)


# ----------------------------------------------------------------- samplers


def _empty_like(gt: DepthRaster) -> np.ndarray:
    return np.zeros_like(gt.values)


def sample_random(gt, n: int, rng_seed: int = 0) -> SparseDepth:
    """Keep exactly ``n`` distinct valid pixels chosen uniformly at random."""
    gt = as_depth(gt)
    flat = np.flatnonzero(gt.values > 0)
    if n < 0:
        raise ContractError("n must be non-negative")
    if n > flat.size:
        raise InsufficientSupportError(f"asked for {n} samples, only {flat.size} valid pixels")
    rng = np.random.default_rng(rng_seed)
    chosen = rng.choice(flat, size=n, replace=False)
    out = _empty_like(gt)
    out.flat[chosen] = gt.values.flat[chosen]
    return SparseDepth(out)


def sample_grid(gt, stride: int, phase: tuple[int, int] = (0, 0)) -> SparseDepth:
    """Keep valid pixels on the lattice ``(phase + k * stride)`` in both axes."""
    gt = as_depth(gt)
    r0, c0 = phase
    if stride < 1 or not (0 <= r0 < stride and 0 <= c0 < stride):
        raise ContractError(f"need stride >= 1 and 0 <= phase < stride, got {stride}, {phase}")
    out = _empty_like(gt)
    out[r0::stride, c0::stride] = gt.values[r0::stride, c0::stride]
    return SparseDepth(out)


def line_rows(height: int, n_lines: int, rng_seed: int = 0, band: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Row indices of ``n_lines`` evenly spaced scan lines inside ``band``.

    ``band`` is a half-open row interval, by default the lower half of the
    image. The seed only moves the common sub-spacing offset.
    """
    lo, hi = band if band is not None else (height // 2, height)
    if not 0 <= lo < hi <= height:
        raise ContractError(f"invalid band {band} for height {height}")
    span = hi - lo
    if n_lines > span:
        raise InsufficientSupportError(f"{n_lines} lines requested, band has {span} rows")
    if n_lines == 0:
        return np.zeros(0, dtype=np.int64)
    offset = np.random.default_rng(rng_seed).random()
    rows = lo + np.floor((np.arange(n_lines) + offset) * span / n_lines).astype(np.int64)
    return np.minimum(rows, hi - 1)


def sample_lines(gt, n_lines: int, rng_seed: int = 0, band: Optional[tuple[int, int]] = None) -> SparseDepth:
    """LiDAR-like pattern: keep valid pixels on a few evenly spaced rows."""
    gt = as_depth(gt)
    rows = line_rows(gt.height, n_lines, rng_seed, band)
    out = _empty_like(gt)
    out[rows] = gt.values[rows]
    return SparseDepth(out)


def mask_range(d, window: tuple[float, float]) -> DepthRaster:
    """Zero every pixel whose depth lies outside ``[min, max]``."""
    d = as_depth(d)
    lo, hi = window
    if lo > hi:
        raise ContractError(f"window {window} is not ordered")
    keep = (d.values >= lo) & (d.values <= hi)
    return type(d)(np.where(keep, d.values, 0).astype(d.values.dtype))


def simulate_sensor(gt, spec: BiasSpec, rng_seed: Optional[int] = None, *, clip_count: bool = False) -> SparseDepth:
    """Apply ``spec``: restrict to its range window, then sample its pattern.

    With ``clip_count`` the random pattern returns every available pixel when
    the window holds fewer than ``sample_count`` of them instead of raising.
    """
    gt = as_depth(gt)
    seed = spec.rng_seed if rng_seed is None else rng_seed
    lo, hi = spec.range_window
    if lo > 0 or math.isfinite(hi):
        gt = mask_range(gt, spec.range_window)
    if spec.pattern == "random":
        n = spec.sample_count
        if clip_count:
            n = min(n, gt.valid_count)
        return sample_random(gt, n, seed)
    if spec.pattern == "grid":
        return sample_grid(gt, spec.grid_stride, spec.grid_phase)
    return sample_lines(gt, spec.line_count, seed, spec.line_band)


def log_uniform_count(rng: np.random.Generator, n_min: int, n_max: int) -> int:
    """Integer drawn log-uniformly from ``[n_min, n_max]`` (``n_min >= 1``)."""
    if n_min == n_max:
        return n_max
    u = rng.uniform(math.log(n_min), math.log(n_max))
    return int(min(max(round(math.exp(u)), n_min), n_max))


def rda_sample(gt, spec_family: Sequence[BiasSpec], rng_seed: int = 0, *, clip_count: bool = False) -> SparseDepth:
    """Random depth augmentation: draw a condition from ``spec_family`` and sample it.

    The draw uses its own stream; the chosen sampler receives ``rng_seed``
    unchanged, so a degenerate one-spec fixed-count family reproduces
    ``sample_random`` exactly.
    """
    if not spec_family:
        raise ConfigurationError("spec_family must be non-empty")
    draw = np.random.default_rng(np.random.SeedSequence(rng_seed, spawn_key=(0x5EED,)))
    spec = spec_family[int(draw.integers(len(spec_family)))] if len(spec_family) > 1 else spec_family[0]
    if spec.pattern == "random":
        n_min = max(1, spec.sample_count_min if spec.sample_count_min is not None else 1)
        n_max = spec.sample_count
        n = log_uniform_count(draw, min(n_min, n_max), n_max) if n_max > 0 else 0
        spec = replace(spec, sample_count=n, sample_count_min=None)
    return simulate_sensor(gt, spec, rng_seed, clip_count=clip_count)


# ------------------------------------------------------------------- scenes


@dataclass(frozen=True)
class SceneSpec:
    """Piecewise-planar synthetic scene.

    ``max_slope`` bounds each plane's depth gradient in meters per image
    width; 0 gives fronto-parallel planes.
    """

    height: int = 32
    width: int = 48
    n_planes: int = 6
    depth_range: tuple[float, float] = (0.5, 10.0)
    rng_seed: int = 0
    max_slope: float = 4.0
    noise: float = 0.02

    def __post_init__(self):
        lo, hi = self.depth_range
        if self.n_planes < 1:
            raise ConfigurationError("n_planes must be >= 1")
        if not 0 < lo < hi:
            raise ConfigurationError(f"depth_range must be positive and ordered, got {self.depth_range}")
        if self.height < 1 or self.width < 1:
            raise ConfigurationError("scene must be at least 1x1")
        object.__setattr__(self, "depth_range", (float(lo), float(hi)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depth_range"] = list(self.depth_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["depth_range"] = tuple(d["depth_range"])
        return cls(**d)


def generate_scene(spec: SceneSpec) -> tuple[ImageRaster, DepthRaster]:
    """Render an (image, depth) pair.

    The image plane is split into Voronoi cells (convex), each carrying a
    slanted plane clipped to ``depth_range``. Intensity is the cell albedo
    times a shading term that falls with depth, plus Gaussian noise, so image
    edges coincide with depth discontinuities.
    """
    rng = np.random.default_rng(spec.rng_seed)
    h, w = spec.height, spec.width
    lo, hi = spec.depth_range
    ys, xs = np.mgrid[0:h, 0:w]
    ys = (ys + 0.5) / w
    xs = (xs + 0.5) / w

    centers = rng.random((spec.n_planes, 2)) * np.array([h / w, 1.0])
    d2 = (ys[None] - centers[:, 0, None, None]) ** 2 + (xs[None] - centers[:, 1, None, None]) ** 2
    label = np.argmin(d2, axis=0)

    base = rng.uniform(lo, hi, size=spec.n_planes)
    slopes = rng.uniform(-spec.max_slope, spec.max_slope, size=(spec.n_planes, 2))
    albedo = rng.uniform(0.7, 1.0, size=(spec.n_planes, 3))

    cy = centers[label, 0]
    cx = centers[label, 1]
    depth = base[label] + slopes[label, 0] * (ys - cy) + slopes[label, 1] * (xs - cx)
    depth = np.clip(depth, lo, hi)

    shade = 1.0 - 0.75 * (depth - lo) / (hi - lo)
    image = albedo[label].transpose(2, 0, 1) * shade[None]
    image = image + spec.noise * rng.standard_normal(image.shape)
    return ImageRaster(image), DepthRaster(depth)
