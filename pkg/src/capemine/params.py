"""Named parameter registry and the binary checkpoint container.

Checkpoint layout::

    b"CAPEMINE"                  magic, 8 bytes
    uint32 little-endian         manifest length in bytes
    manifest                     UTF-8 JSON: {"entries": [[name, shape], ...], "config": {...}}
    payloads                     float64 little-endian, row-major, manifest order
"""

import json
import struct
from collections import OrderedDict

import numpy as np

from .errors import ContractViolation
from .tensor import Tensor

MAGIC = b"CAPEMINE"


class ParamStore:
    """Ordered name -> Tensor mapping; the order defines the flat layout."""

    def __init__(self):
        self._params = OrderedDict()

    def add(self, name, value):
        if name in self._params:
            raise ContractViolation(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def items(self):
        return self._params.items()

    def shapes(self):
        return [(n, tuple(t.shape)) for n, t in self._params.items()]

    def num_values(self):
        return sum(t.size for t in self._params.values())

    def flatten(self):
        return np.concatenate([t.data.reshape(-1) for t in self._params.values()])

    def unflatten(self, vector):
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.num_values(),):
            raise ContractViolation(f"flat vector has shape {vector.shape}, expected ({self.num_values()},)")
        pos = 0
        for t in self._params.values():
            t.data[...] = vector[pos:pos + t.size].reshape(t.shape)
            pos += t.size

    def grads(self):
        return [t.grad for t in self._params.values()]


def save_checkpoint(path, store, config=None):
    manifest = {"entries": [[n, list(s)] for n, s in store.shapes()], "config": config or {}}
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, t in store.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def read_checkpoint(path):
    """Return ``(entries, arrays, config)`` from a checkpoint file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:len(MAGIC)] != MAGIC:
        raise ContractViolation(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    manifest = json.loads(raw[start:start + n].decode("utf-8"))
    pos = start + n
    entries, arrays = [], []
    for name, shape in manifest["entries"]:
        count = int(np.prod(shape)) if shape else 1
        end = pos + 8 * count
        if end > len(raw):
            raise ContractViolation(f"{path}: truncated payload for {name}")
        arrays.append(np.frombuffer(raw[pos:end], dtype="<f8").astype(np.float64).reshape(shape))
        entries.append((name, tuple(shape)))
        pos = end
    if pos != len(raw):
        raise ContractViolation(f"{path}: {len(raw) - pos} trailing bytes")
    return entries, arrays, manifest.get("config", {})


def load_into(path, store):
    """Copy checkpoint values into ``store``; geometry must match exactly."""
    entries, arrays, config = read_checkpoint(path)
    expected = store.shapes()
    if entries != expected:
        have = dict(entries)
        for name, shape in expected:
            if name not in have:
                raise ContractViolation(f"checkpoint lacks parameter {name}")
            if have[name] != shape:
                raise ContractViolation(f"parameter {name}: checkpoint shape {have[name]} != model shape {shape}")
        raise ContractViolation(f"checkpoint has {len(entries)} entries, model expects {len(expected)}")
    for (name, _), arr in zip(entries, arrays):
        store[name].data[...] = arr
    return config
