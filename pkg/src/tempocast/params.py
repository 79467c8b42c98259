"""Named parameter registry, seeded initializers, and checkpoint IO."""

import hashlib
import json
import struct

import numpy as np

from .errors import ConfigError
from .tensor import Tensor

_MAGIC = b"TCKP"
_VERSION = 1

# Fixed stream ids so seeded substreams are stable across runs (str hash()
# is randomized per process and must not be used here).
STREAM_BACKBONE = 1
STREAM_MODEL = 2
STREAM_DATA = 3
STREAM_BATCH = 4
STREAM_EXPERIMENT = 5


def make_rng(seed, stream=0):
    """Deterministic generator for (seed, stream)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), int(stream)))))


def normal_init(rng, shape, std):
    return rng.normal(0.0, std, size=shape).astype(np.float64)


class ParamRegistry:
    """All model parameters, keyed by dotted name, in insertion order.

    Every parameter keeps a gradient buffer, frozen ones included; a frozen
    parameter's buffer is simply never written, so it stays identically zero.
    """

    def __init__(self):
        self._params = {}

    def register(self, name, data, trainable):
        if name in self._params:
            raise ConfigError("duplicate parameter name %r" % name)
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=bool(trainable))
        t.ensure_grad_buffer()
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

    def items(self):
        return list(self._params.items())

    def trainable_items(self):
        return [(n, p) for n, p in self._params.items() if p.requires_grad]

    def set_trainable(self, prefix, flag):
        """Flip the trainable flag on every parameter whose name starts with prefix."""
        hits = 0
        for name, p in self._params.items():
            if name.startswith(prefix):
                p.requires_grad = bool(flag)
                hits += 1
        if hits == 0:
            raise ConfigError("no parameters match prefix %r" % prefix)
        return hits

    def zero_grads(self):
        for p in self._params.values():
            p.grad[...] = 0.0

    def count(self, prefix=""):
        return sum(p.data.size for n, p in self._params.items() if n.startswith(prefix))

    def count_trainable(self, prefix=""):
        return sum(p.data.size for n, p in self._params.items() if n.startswith(prefix) and p.requires_grad)

    def fingerprint(self, prefix=""):
        """SHA-256 over names, shapes and raw bytes of matching parameters."""
        h = hashlib.sha256()
        for name in sorted(self._params):
            if not name.startswith(prefix):
                continue
            p = self._params[name]
            h.update(name.encode())
            h.update(str(p.data.shape).encode())
            h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        return h.hexdigest()


def save_checkpoint(path, registry, meta=None):
    """Write all parameters to a flat binary container.

    Layout: magic, u32 version, u64 header length, JSON header (metadata
    plus ordered entry names/shapes), then each array as raw little-endian
    float64 bytes. Equal parameters always produce identical bytes.
    """
    entries = [{"name": n, "shape": list(p.data.shape)} for n, p in registry.items()]
    header = {"meta": meta or {}, "entries": entries}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IQ", _VERSION, len(blob)))
        f.write(blob)
        for _, p in registry.items():
            f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def read_checkpoint(path):
    """Return (meta, {name: array}) from a checkpoint file."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ConfigError("not a checkpoint file: %r" % path)
        version, hlen = struct.unpack("<IQ", f.read(12))
        if version != _VERSION:
            raise ConfigError("unsupported checkpoint version %d" % version)
        header = json.loads(f.read(hlen).decode())
        arrays = {}
        for e in header["entries"]:
            shape = tuple(e["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * n)
            arrays[e["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    return header["meta"], arrays


def load_checkpoint(path, registry):
    """Load arrays into an existing registry; names and shapes must match."""
    meta, arrays = read_checkpoint(path)
    missing = [n for n in registry.names() if n not in arrays]
    extra = [n for n in arrays if n not in registry]
    if missing or extra:
        raise ConfigError("checkpoint/model parameter mismatch (missing %s, extra %s)" % (missing[:3], extra[:3]))
    for name, p in registry.items():
        a = arrays[name]
        if a.shape != p.data.shape:
            raise ConfigError("shape mismatch for %r: %s vs %s" % (name, a.shape, p.data.shape))
        p.data[...] = a
    return meta
