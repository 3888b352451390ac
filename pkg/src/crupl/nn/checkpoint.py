"""Network checkpoints.

Format: a .npz archive holding one array per parameter/buffer plus a ``meta``
JSON string with a format-version field, the class count, and the layer stack
(kind + constructor arguments). Arrays round-trip bit-exactly.
"""

from __future__ import annotations

import json

import numpy as np

from crupl.errors import SchemaError
from crupl.nn.layers import (BatchNorm1D, Conv1D, Dense, Flatten, MaxPool1D,
                             ReLU, Softmax)
from crupl.nn.network import Network

FORMAT_VERSION = 1

_LAYER_KINDS = {cls.kind: cls for cls in
                (Conv1D, BatchNorm1D, ReLU, MaxPool1D, Flatten, Dense, Softmax)}


def save_network(network: Network, path) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "class_count": network.class_count,
        "layers": [{"kind": layer.kind, "hyper": layer.hyper()}
                   for layer in network.layers],
    }
    arrays = {}
    for i, layer in enumerate(network.layers):
        for name, value in layer.params.items():
            arrays[f"L{i}_param_{name}"] = value
        for name, value in layer.buffers().items():
            arrays[f"L{i}_buffer_{name}"] = value
    np.savez(path, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_network(path) -> Network:
    with np.load(path, allow_pickle=False) as archive:
        try:
            meta = json.loads(str(archive["meta"]))
        except KeyError:
            raise SchemaError(f"{path}: not a network checkpoint (no meta entry)")
        version = meta.get("format_version")
        if version != FORMAT_VERSION:
            raise SchemaError(
                f"{path}: unsupported checkpoint format version {version!r}, "
                f"expected {FORMAT_VERSION}")
        layers = []
        for i, entry in enumerate(meta["layers"]):
            kind = entry["kind"]
            if kind not in _LAYER_KINDS:
                raise SchemaError(f"{path}: unknown layer kind {kind!r}")
            layer = _LAYER_KINDS[kind](**entry["hyper"])
            for name in layer.params:
                layer.params[name] = archive[f"L{i}_param_{name}"].copy()
            for name, buf in layer.buffers().items():
                buf[...] = archive[f"L{i}_buffer_{name}"]
            layer._alloc_grads()
            layers.append(layer)
        return Network(layers, meta["class_count"])
