"""Checkpoint directories: ``manifest.json`` plus a flat float32 blob.

The manifest carries the architecture config, the frozen/tunable parameter
partition, seeds and training provenance, and an index mapping each
parameter name to ``(offset, shape)`` in the blob (offsets in float32
elements, little-endian).
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from ..errors import ConfigurationError, FormatError
from ..propagation import PropagationConfig
from .models import FoundationConfig, FoundationModel, PromptConfig, PromptModule
from .pipeline import DepthCompletionNet, PipelineConfig

FORMAT = "depthprompt-checkpoint"
VERSION = 1
BLOB = "params.f32"
MANIFEST = "manifest.json"


def pack_state(module: nn.Module) -> tuple[bytes, dict]:
    index = {}
    chunks = []
    offset = 0
    for name, tensor in module.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        index[name] = {"offset": offset, "shape": list(arr.shape)}
        chunks.append(arr.tobytes())
        offset += arr.size
    return b"".join(chunks), index


def unpack_state(blob: bytes, index: dict) -> dict:
    flat = np.frombuffer(blob, dtype="<f4")
    state = {}
    for name, entry in index.items():
        n = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + n > flat.size:
            raise FormatError(f"parameter {name} overruns the blob")
        state[name] = torch.from_numpy(flat[start:start + n].reshape(entry["shape"]).copy())
    return state


def blob_digest(path) -> str:
    return hashlib.sha256((Path(path) / BLOB).read_bytes()).hexdigest()


def save_checkpoint(path, module: nn.Module, kind: str, architecture: dict,
                    partition: dict | None = None, seeds: dict | None = None,
                    provenance: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob, index = pack_state(module)
    (path / BLOB).write_bytes(blob)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "architecture": architecture,
        "partition": partition or {},
        "seeds": seeds or {},
        "provenance": provenance or {},
        "blob": BLOB,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "index": index,
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    if not (path / MANIFEST).is_file():
        raise ConfigurationError(f"no checkpoint at {path}")
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest ({exc})") from exc
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise FormatError(f"{path}: not a version-{VERSION} {FORMAT}")
    return manifest


def load_state(path) -> tuple[dict, dict]:
    path = Path(path)
    manifest = read_manifest(path)
    blob = (path / manifest["blob"]).read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise FormatError(f"{path}: blob digest mismatch")
    return unpack_state(blob, manifest["index"]), manifest


def foundation_architecture(cfg: FoundationConfig) -> dict:
    return {"foundation": cfg.to_dict()}


def build_foundation(arch: dict) -> FoundationModel:
    f = arch["foundation"]
    return FoundationModel(FoundationConfig(channels=tuple(f["channels"]), in_channels=f["in_channels"]))


def net_architecture(net: DepthCompletionNet) -> dict:
    return {
        "foundation": net.foundation.cfg.to_dict(),
        "prompt": net.prompt.cfg.to_dict(),
        "pipeline": {
            "propagation": net.pipeline.propagation.to_dict(),
            "use_ls": net.pipeline.use_ls,
            "use_spn": net.pipeline.use_spn,
        },
    }


def build_net(arch: dict) -> DepthCompletionNet:
    p = dict(arch["prompt"])
    for k in ("channels", "decoder_channels", "image_channels"):
        p[k] = tuple(p[k])
    pipe = arch["pipeline"]
    return DepthCompletionNet(
        build_foundation(arch),
        PromptModule(PromptConfig(**p)),
        PipelineConfig(PropagationConfig(**pipe["propagation"]), pipe["use_ls"], pipe["use_spn"]),
    )


def load_foundation(path) -> tuple[FoundationModel, dict]:
    state, manifest = load_state(path)
    model = build_foundation(manifest["architecture"])
    if manifest["kind"] == "completion":
        state = {k[len("foundation."):]: v for k, v in state.items() if k.startswith("foundation.")}
    model.load_state_dict(state)
    model.eval()
    return model, manifest


def load_net(path) -> tuple[DepthCompletionNet, dict]:
    state, manifest = load_state(path)
    if manifest["kind"] != "completion":
        raise FormatError(f"{path}: expected a completion checkpoint, found {manifest['kind']!r}")
    net = build_net(manifest["architecture"])
    net.load_state_dict(state)
    net.eval()
    return net, manifest
