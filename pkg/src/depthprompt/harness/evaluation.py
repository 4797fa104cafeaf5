"""Scoring a trained checkpoint (or any predictor) on a corpus split."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from ..core import ImageRaster, MetricAccumulator, MetricReport
from ..net.checkpoint import load_net
from ..net.pipeline import forward_pipeline
from ..sensors import BiasSpec, simulate_sensor
from .corpus import Corpus

Predictor = Callable[[ImageRaster, np.ndarray, np.ndarray], np.ndarray]


def eval_window(spec: BiasSpec, min_eval_depth: float = 1e-3) -> tuple[float, float]:
    """Pixels scored under ``spec``: its range window, floored at ``min_eval_depth``."""
    lo, hi = spec.range_window
    return max(lo, min_eval_depth), hi


def test_sparse(gt: np.ndarray, spec: BiasSpec, scene_seed: int) -> np.ndarray:
    """Test-time sensor draw; depends only on the spec and the scene, never on the model."""
    return simulate_sensor(gt, spec, [int(spec.rng_seed), int(scene_seed)], clip_count=True).values


def evaluate_predictor(predict: Predictor, test_spec: BiasSpec, corpus: Corpus, split: str = "test",
                       min_eval_depth: float = 1e-3) -> MetricReport:
    """Pool metrics over every pixel of ``split``.

    ``predict(image, sparse, gt)`` returns a dense prediction; ``gt`` is only
    passed so that oracle stubs can be written.
    """
    images, gts, seeds = corpus.split(split)
    lo, hi = eval_window(test_spec, min_eval_depth)
    acc = MetricAccumulator()
    for img, gt, seed in zip(images, gts, seeds):
        sparse = test_sparse(gt, test_spec, seed)
        pred = predict(ImageRaster(img), sparse, gt)
        acc.add(pred, gt, lo, hi)
    return acc.report()


def checkpoint_predictor(checkpoint) -> Predictor:
    net, _ = load_net(checkpoint)

    def predict(image, sparse, _gt):
        final, _ = forward_pipeline(image, sparse, net.foundation, net.prompt, net.pipeline)
        return final.values

    return predict


def evaluate(checkpoint, test_spec: BiasSpec, corpus: Corpus, split: str = "test",
             min_eval_depth: float = 1e-3) -> MetricReport:
    return evaluate_predictor(checkpoint_predictor(checkpoint), test_spec, corpus, split, min_eval_depth)
