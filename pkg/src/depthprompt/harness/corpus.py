"""Synthetic corpus on disk: paired ``scene_%05d.img.dpr`` / ``scene_%05d.gt.dpr`` files plus ``manifest.json``."""
from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..core import read_raster, read_stack, write_image, write_raster
from ..errors import ConfigurationError
from ..sensors import SceneSpec, generate_scene
from .config import SplitSpec

MANIFEST = "manifest.json"
SCHEMA = "depthprompt-corpus/1"


def generate_corpus(out_dir, scene: SceneSpec, splits: dict[str, SplitSpec]) -> dict:
    """Render every split into ``out_dir``. Scene ``i`` of a split uses seed ``split.seed + i``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    index = 0
    for name in sorted(splits):
        split = splits[name]
        for seed in split.seeds():
            image, depth = generate_scene(replace(scene, rng_seed=seed))
            stem = f"scene_{index:05d}"
            write_image(image, out / f"{stem}.img.dpr")
            write_raster(depth, out / f"{stem}.gt.dpr")
            entries.append({"index": index, "split": name, "seed": seed,
                            "image": f"{stem}.img.dpr", "gt": f"{stem}.gt.dpr"})
            index += 1
    manifest = {
        "schema": SCHEMA,
        "scene": scene.to_dict(),
        "splits": {k: {"seed": s.seed, "count": s.count} for k, s in sorted(splits.items())},
        "scenes": entries,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return manifest


class Corpus:
    """Read-only view over a generated corpus directory; splits load lazily."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / MANIFEST
        if not path.is_file():
            raise FileNotFoundError(f"no corpus manifest at {path}")
        self.manifest = json.loads(path.read_text())
        if self.manifest.get("schema") != SCHEMA:
            raise ConfigurationError(f"{path}: unexpected schema {self.manifest.get('schema')!r}")
        self._cache: dict[str, tuple] = {}

    @property
    def scene_spec(self) -> SceneSpec:
        return SceneSpec.from_dict(self.manifest["scene"])

    def splits(self) -> dict[str, SplitSpec]:
        return {k: SplitSpec(v["seed"], v["count"]) for k, v in self.manifest["splits"].items()}

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(images (N,3,H,W), gts (N,H,W), seeds (N,))`` as float32 / int64 arrays."""
        if name not in self._cache:
            entries = [e for e in self.manifest["scenes"] if e["split"] == name]
            if not entries:
                raise ConfigurationError(f"corpus {self.root} has no split {name!r}")
            images = np.stack([read_stack(self.root / e["image"]) for e in entries])
            gts = np.stack([read_raster(self.root / e["gt"]).values for e in entries])
            seeds = np.array([e["seed"] for e in entries], dtype=np.int64)
            self._cache[name] = (images, gts, seeds)
        return self._cache[name]

    def matches(self, splits: dict[str, SplitSpec], scene: SceneSpec) -> bool:
        mine = self.splits()
        return self.scene_spec == scene and all(mine.get(k) == v for k, v in splits.items())


def ensure_corpus(root, scene: SceneSpec, splits: dict[str, SplitSpec]) -> Corpus:
    """Open ``root``, generating it first when absent."""
    root = Path(root)
    if not (root / MANIFEST).is_file():
        generate_corpus(root, scene, splits)
    corpus = Corpus(root)
    if not corpus.matches(splits, scene):
        raise ConfigurationError(f"corpus at {root} was generated from a different spec")
    return corpus
