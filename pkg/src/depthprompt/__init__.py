"""Sensor-agnostic depth completion: sparse-depth prompts driving adaptive spatial propagation."""
from .core import DepthRaster, ImageRaster, MetricReport, SparseDepth, compute_metrics, read_raster, write_raster
from .propagation import AffinityField, PropagationConfig, normalize_affinity, propagate
from .scale import ScaleFit, apply_scale, fit_scale
from .sensors import BiasSpec, SceneSpec, generate_scene, simulate_sensor

__version__ = "0.1.0"

__all__ = [
    "AffinityField", "BiasSpec", "DepthRaster", "ImageRaster", "MetricReport", "PropagationConfig",
    "ScaleFit", "SceneSpec", "SparseDepth", "apply_scale", "compute_metrics", "fit_scale",
    "generate_scene", "normalize_affinity", "propagate", "read_raster", "simulate_sensor", "write_raster",
]
