"""
Rarefy — Network Checkpoints

Format (JSON, one document per file):

    {
      "format": "rarefy-checkpoint",
      "version": 1,
      "nets": {
        "<name>": {
          "groups": [..] | null,
          "temperature": 1.0,
          "layers": [
            {"in": 16, "out": 128, "activation": "relu",
             "weight": [row-major, in*out floats], "bias": [out floats]},
            ...
          ]
        }
      },
      "meta": {...}
    }

Floats are written with ``repr`` precision so float64 values round-trip exactly.
"""

import json
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from config.settings import CHECKPOINT_FORMAT, CHECKPOINT_VERSION
from engine.dense_net import DenseNet, Layer


class CheckpointError(ValueError):
    pass


def _net_to_dict(net: DenseNet) -> dict:
    return {
        "groups": list(net.groups) if net.groups else None,
        "temperature": net.temperature,
        "layers": [
            {
                "in": layer.fan_in,
                "out": layer.fan_out,
                "activation": layer.activation,
                "weight": layer.weight.ravel(order="C").tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in net.layers
        ],
    }


def _net_from_dict(name: str, payload: dict) -> DenseNet:
    layers = []
    for i, spec in enumerate(payload["layers"]):
        weight = np.asarray(spec["weight"], dtype=np.float64)
        if weight.size != spec["in"] * spec["out"]:
            raise CheckpointError(f"{name} layer {i}: {weight.size} weights for {spec['in']}x{spec['out']}")
        layers.append(Layer(weight.reshape(spec["in"], spec["out"]), np.asarray(spec["bias"]), spec["activation"]))
    return DenseNet(layers, groups=payload.get("groups"), temperature=payload.get("temperature", 1.0))


def save_checkpoint(path, nets: Dict[str, DenseNet], meta: dict = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "nets": {name: _net_to_dict(net) for name, net in nets.items()},
        "meta": meta or {},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
    return path


def load_checkpoint(path) -> Tuple[Dict[str, DenseNet], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"{path}: not a checkpoint ({e})")
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown format {doc.get('format')!r}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    nets = {name: _net_from_dict(name, payload) for name, payload in doc["nets"].items()}
    return nets, doc.get("meta", {})
