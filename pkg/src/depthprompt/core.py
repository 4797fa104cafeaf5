"""Depth rasters, raster file I/O and the evaluation metric suite.

A pixel is valid iff its stored depth is strictly positive; 0 means "no
measurement". Depth is in meters throughout.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ContractError, DataError, EmptyEvaluationError, FormatError

MAGIC = b"DPR1"
VERSION_SINGLE = 1
VERSION_STACK = 2
_HEADER = struct.Struct("<4sB3xII")
_CHANNELS = struct.Struct("<I")

PathLike = Union[str, Path]


def _check_depth_values(values: np.ndarray) -> None:
    if values.ndim != 2:
        raise ContractError(f"depth raster must be 2-D, got shape {values.shape}")
    if values.shape[0] < 1 or values.shape[1] < 1:
        raise ContractError(f"depth raster must be non-empty, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise DataError("depth raster contains non-finite values")
    if np.any(values < 0):
        raise DataError("depth raster contains negative values")


@dataclass(frozen=True, eq=False)
class DepthRaster:
    """Dense per-pixel depth in meters; 0 marks an invalid pixel."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        _check_depth_values(arr)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def valid_mask(self) -> np.ndarray:
        return self.values > 0

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.values > 0))

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.height}x{self.width}, valid={self.valid_count})"


class SparseDepth(DepthRaster):
    """A depth raster whose valid set is a sensor sample set."""


@dataclass(frozen=True, eq=False)
class ImageRaster:
    """Image with values in [0, 1], stored channel-first as (C, H, W)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[0] not in (1, 3):
            raise ContractError(f"image must be (1|3, H, W), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("image contains non-finite values")
        object.__setattr__(self, "values", np.clip(arr, 0.0, 1.0))

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


def as_depth(d, cls=DepthRaster) -> DepthRaster:
    if isinstance(d, cls):
        return d
    if isinstance(d, DepthRaster):
        return cls(d.values)
    return cls(np.asarray(d))


# --------------------------------------------------------------------------- I/O


def write_stack(stack: np.ndarray, path: PathLike) -> None:
    """Write a (C, H, W) float32 stack using the channel-extended layout."""
    stack = np.asarray(stack)
    if stack.ndim != 3:
        raise ContractError(f"stack must be 3-D, got {stack.shape}")
    c, h, w = stack.shape
    payload = np.ascontiguousarray(stack, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION_STACK, h, w))
        fh.write(_CHANNELS.pack(c))
        fh.write(payload)


def _read_payload(path: PathLike) -> tuple[int, np.ndarray]:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, h, w = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC or blob[5:8] != b"\x00\x00\x00":
        raise FormatError(f"{path}: bad magic or reserved bytes")
    offset = _HEADER.size
    if version == VERSION_SINGLE:
        c = 1
    elif version == VERSION_STACK:
        if len(blob) < offset + _CHANNELS.size:
            raise FormatError(f"{path}: truncated channel header")
        (c,) = _CHANNELS.unpack_from(blob, offset)
        offset += _CHANNELS.size
    else:
        raise FormatError(f"{path}: unsupported version {version}")
    if h < 1 or w < 1 or c < 1:
        raise FormatError(f"{path}: empty dimensions {c}x{h}x{w}")
    expected = offset + 4 * c * h * w
    if len(blob) != expected:
        raise FormatError(f"{path}: payload size {len(blob) - offset} != {expected - offset}")
    data = np.frombuffer(blob, dtype="<f4", offset=offset).astype(np.float32).reshape(c, h, w)
    return version, data


def read_stack(path: PathLike) -> np.ndarray:
    """Read a (C, H, W) float32 stack; single-channel files yield C = 1."""
    _, data = _read_payload(path)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite payload")
    return data


def write_raster(raster, path: PathLike, format: str = "float32-raster") -> None:
    raster = as_depth(raster)
    if format == "float32-raster":
        payload = np.ascontiguousarray(raster.values, dtype="<f4").tobytes()
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION_SINGLE, raster.height, raster.width))
            fh.write(payload)
    elif format == "png16-mm":
        from PIL import Image

        mm = np.round(raster.values.astype(np.float64) * 1000.0)
        if mm.max(initial=0) > 65535:
            raise DataError("depth exceeds the 65.535 m range of png16-mm")
        Image.fromarray(mm.astype(np.uint16)).save(path, format="PNG")
    else:
        raise ValueError(f"unknown raster format {format!r}")


def read_raster(path: PathLike, format: str = "float32-raster") -> DepthRaster:
    if format == "float32-raster":
        version, data = _read_payload(path)
        if version != VERSION_SINGLE:
            raise FormatError(f"{path}: expected a single-channel raster")
        values = data[0]
    elif format == "png16-mm":
        from PIL import Image

        try:
            with Image.open(path) as im:
                arr = np.array(im)
        except OSError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        if arr.ndim != 2:
            raise FormatError(f"{path}: expected a single-channel PNG")
        values = arr.astype(np.float64) / 1000.0
    else:
        raise ValueError(f"unknown raster format {format!r}")
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite payload")
    if np.any(values < 0):
        raise DataError(f"{path}: negative payload")
    return DepthRaster(values)


def write_image(image: ImageRaster, path: PathLike) -> None:
    write_stack(image.values.astype(np.float32), path)


def read_image(path: PathLike) -> ImageRaster:
    return ImageRaster(read_stack(path).astype(np.float64))


# ----------------------------------------------------------------------- metrics


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    mae: float
    delta1: float
    n_valid: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(float(d["rmse"]), float(d["mae"]), float(d["delta1"]), int(d["n_valid"]))


@dataclass
class MetricAccumulator:
    """Pixel-pooled running sums, so a split is scored as one big raster."""

    sq: float = 0.0
    abs: float = 0.0
    inliers: int = 0
    n: int = 0

    def add(self, pred, gt, min_eval_depth: float = 1e-3, max_eval_depth: float = math.inf) -> None:
        p, g = _masked_pairs(pred, gt, min_eval_depth, max_eval_depth)
        err = p - g
        self.sq += float(np.sum(err * err))
        self.abs += float(np.sum(np.abs(err)))
        self.inliers += int(np.count_nonzero(_ratio(p, g) < 1.25))
        self.n += int(g.size)

    def report(self) -> MetricReport:
        if self.n == 0:
            raise EmptyEvaluationError("no pixel inside the evaluation window")
        return MetricReport(
            rmse=math.sqrt(self.sq / self.n),
            mae=self.abs / self.n,
            delta1=self.inliers / self.n,
            n_valid=self.n,
        )


def _ratio(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.maximum(p / g, g / p)
    return np.where(np.isnan(r), np.inf, r)


def _masked_pairs(pred, gt, lo, hi):
    pv = as_depth(pred).values
    gv = as_depth(gt).values
    if pv.shape != gv.shape:
        raise ContractError(f"pred shape {pv.shape} != gt shape {gv.shape}")
    mask = (gv > 0) & (gv >= lo) & (gv <= hi)
    return pv[mask].astype(np.float64), gv[mask].astype(np.float64)


def compute_metrics(pred, gt, min_eval_depth: float = 1e-3, max_eval_depth: float = math.inf) -> MetricReport:
    """RMSE / MAE / DELTA1 over gt-valid pixels inside ``[min_eval_depth, max_eval_depth]``.

    Raises EmptyEvaluationError when no pixel is evaluated.
    """
    acc = MetricAccumulator()
    acc.add(pred, gt, min_eval_depth, max_eval_depth)
    return acc.report()
