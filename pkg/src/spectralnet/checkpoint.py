"""Checkpoint directories: ``manifest.json`` plus one NPY per parameter and BN buffer."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .model import ModelConfig, SpectralNet, build_model
from .npyio import read_npy, write_npy


class CheckpointMismatchError(ValueError):
    pass


def parameter_hash(net: SpectralNet) -> str:
    h = hashlib.sha256()
    for name, p in net.params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    for name, rs in net.running.items():
        if rs.initialized:
            h.update(name.encode())
            h.update(rs.mean.tobytes())
            h.update(rs.var.tobytes())
    return h.hexdigest()


def save_checkpoint(directory, net: SpectralNet, seed: int, epoch: int) -> dict:
    d = Path(directory)
    (d / "params").mkdir(parents=True, exist_ok=True)
    entries = []
    for name, p in net.params.items():
        fname = f"params/{name}.npy"
        write_npy(d / fname, p.data)
        entries.append({"name": name, "shape": list(p.shape), "file": fname})
    buffers = []
    for name, rs in net.running.items():
        if not rs.initialized:
            continue
        for kind, arr in (("mean", rs.mean), ("var", rs.var)):
            fname = f"params/{name}.running_{kind}.npy"
            write_npy(d / fname, arr)
            buffers.append({"name": name, "kind": kind, "file": fname})
    manifest = {
        "config": net.config.to_dict(),
        "parameters": entries,
        "buffers": buffers,
        "seed": seed,
        "epoch": epoch,
        "parameter_sha256": parameter_hash(net),
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def load_checkpoint(directory) -> tuple[SpectralNet, dict]:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    config = ModelConfig.from_dict(manifest["config"])
    net = build_model(config, manifest.get("seed", 0))
    expected = {name: p.shape for name, p in net.params.items()}
    stored = {e["name"]: tuple(e["shape"]) for e in manifest["parameters"]}
    if stored != expected:
        raise CheckpointMismatchError("checkpoint parameter names/shapes do not match its config")
    for e in manifest["parameters"]:
        arr = read_npy(d / e["file"])
        if arr.shape != expected[e["name"]]:
            raise CheckpointMismatchError(f"{e['name']}: stored {arr.shape}, expected {expected[e['name']]}")
        net.params[e["name"]].data = arr.astype(np.float64)
    for b in manifest["buffers"]:
        rs = net.running[b["name"]]
        setattr(rs, b["kind"], read_npy(d / b["file"]).astype(np.float64))
    return net.eval(), manifest
