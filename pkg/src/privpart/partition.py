"""Local/remote partitions of a network and their on-disk format.

File layout (all integers little-endian)::

    b"PPRT" | u32 version | u32 header length | header (UTF-8 JSON)
    | float32 parameter blobs in header order | u32 CRC32 of all preceding bytes
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .nn import Network

MAGIC = b"PPRT"
FORMAT_VERSION = 1


class PartitionFormatError(ValueError):
    """A partition file could not be decoded."""


class PartitionVersionError(PartitionFormatError):
    pass


class ChecksumError(PartitionFormatError):
    pass


class TruncatedFileError(PartitionFormatError):
    pass


class BipartiteNetwork:
    """A network split at a cut: ``local`` maps X to H, ``remote`` maps H to Y."""

    def __init__(self, local: Network, remote: Network, cut: int, metadata: dict | None = None):
        if tuple(local.output_shape) != tuple(remote.input_shape):
            raise ad.ShapeError(f"local output {local.output_shape} does not feed remote "
                                f"input {remote.input_shape}")
        self.local = local
        self.remote = remote
        self.cut = int(cut)
        self.metadata = dict(metadata or {})

    @property
    def hidden_shape(self) -> tuple:
        return tuple(self.local.output_shape)

    @property
    def input_shape(self) -> tuple:
        return self.local.input_shape

    @property
    def dtype(self):
        return self.local.dtype

    @property
    def local_locked(self) -> bool:
        return self.local.locked

    def lock_local(self) -> "BipartiteNetwork":
        self.local.locked = True
        return self

    def copy(self) -> "BipartiteNetwork":
        return BipartiteNetwork(self.local.copy(), self.remote.copy(), self.cut, self.metadata)

    def local_forward(self, x, train: bool = False, rng=None):
        return self.local.forward(x, train=train, rng=rng)

    def remote_forward(self, h, train: bool = False, rng=None):
        return self.remote.forward(h, train=train, rng=rng)

    def forward(self, x, train: bool = False, rng=None):
        return self.remote.forward(self.local.forward(x, train=train, rng=rng),
                                   train=train, rng=rng)

    __call__ = forward

    def transform(self, x, batch_size: int = 1024) -> np.ndarray:
        """Eval-mode hidden activations for ``x``."""
        return self.local.predict(x, batch_size)

    def predict(self, x, batch_size: int = 1024) -> np.ndarray:
        """Eval-mode logits of the composed network."""
        x = np.asarray(x, dtype=self.dtype)
        outs = [self.forward(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        if not outs:
            return np.zeros((0,) + self.remote.output_shape, dtype=self.dtype)
        return np.concatenate(outs)

    def accuracy(self, x, y, batch_size: int = 1024) -> float:
        return float(np.mean(np.argmax(self.predict(x, batch_size), axis=1) == np.asarray(y)))

    def __repr__(self) -> str:
        return (f"BipartiteNetwork(cut={self.cut}, input={self.input_shape}, "
                f"hidden={self.hidden_shape}, output={self.remote.output_shape})")


def resolve_cut(network: Network, cut) -> int:
    idx = network.layer_index(cut) if isinstance(cut, str) else int(cut)
    if not 1 <= idx < len(network):
        raise ValueError(f"cut {cut!r} must leave at least one layer on each side "
                         f"(valid range 1..{len(network) - 1})")
    return idx


def split(network: Network, cut) -> BipartiteNetwork:
    """Split after layer ``cut`` (1-based index or layer name).

    The parameter arrays are shared with ``network``, not copied.
    """
    idx = resolve_cut(network, cut)
    local = Network(network.layers[:idx], network.input_shape, network.dtype)
    remote = Network(network.layers[idx:], network.shapes[idx], network.dtype)
    for key, arr in network.params.items():
        i, name = key.split(".", 1)
        i = int(i)
        if i <= idx:
            local.params[key] = arr
        else:
            remote.params[f"{i - idx}.{name}"] = arr
    return BipartiteNetwork(local, remote, idx)


def compose(bipartite: BipartiteNetwork) -> Network:
    """Rebuild the full network (sharing parameter arrays)."""
    local, remote, cut = bipartite.local, bipartite.remote, bipartite.cut
    net = Network(local.layers + remote.layers, local.input_shape, local.dtype)
    net.params.update(local.params)
    for key, arr in remote.params.items():
        i, name = key.split(".", 1)
        net.params[f"{int(i) + cut}.{name}"] = arr
    return net


@dataclass
class PartitionSuite:
    """One independently trained bipartite network per cut point."""

    cuts: list[int]
    members: list[BipartiteNetwork] = field(default_factory=list)

    def __post_init__(self):
        self.cuts = [int(c) for c in self.cuts]
        if not self.cuts:
            raise ValueError("a partition suite needs at least one cut")
        if any(b <= a for a, b in zip(self.cuts, self.cuts[1:])):
            raise ValueError(f"suite cuts must be strictly increasing, got {self.cuts}")
        if self.members and [m.cut for m in self.members] != self.cuts:
            raise ValueError("suite members do not match the declared cuts")

    def __getitem__(self, cut: int) -> BipartiteNetwork:
        return self.members[self.cuts.index(int(cut))]

    def __len__(self) -> int:
        return len(self.cuts)


def build_suite(make_network: Callable[[], Network], cuts: Sequence,
                train: Callable[[Network, int], BipartiteNetwork]) -> PartitionSuite:
    """Train a fresh network for each cut, in increasing cut order."""
    members, resolved = [], []
    for cut in cuts:
        net = make_network()
        idx = resolve_cut(net, cut)
        resolved.append(idx)
        members.append(train(net, idx))
    order = np.argsort(resolved)
    return PartitionSuite([resolved[i] for i in order], [members[i] for i in order])


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _param_order(bipartite: BipartiteNetwork):
    out = []
    for part, net in (("local", bipartite.local), ("remote", bipartite.remote)):
        for key in sorted(net.params, key=lambda k: (int(k.split(".")[0]), k)):
            out.append((part, key, net.params[key]))
    return out


def to_bytes(bipartite: BipartiteNetwork) -> bytes:
    entries = _param_order(bipartite)
    header = {
        "cut": bipartite.cut,
        "hidden_shape": list(bipartite.hidden_shape),
        "local": bipartite.local.spec_dict(),
        "remote": bipartite.remote.spec_dict(),
        "local_locked": bipartite.local.locked,
        "metadata": bipartite.metadata,
        "params": [{"part": p, "key": k, "shape": list(a.shape)} for p, k, a in entries],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes]
    chunks += [np.ascontiguousarray(a, dtype="<f4").tobytes() for _, _, a in entries]
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(data: bytes) -> BipartiteNetwork:
    if len(data) < 12:
        raise TruncatedFileError("partition file shorter than its fixed header")
    if data[:4] != MAGIC:
        raise PartitionFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise PartitionVersionError(f"unsupported partition format version {version} "
                                    f"(this build reads version {FORMAT_VERSION})")
    crc_ok = len(data) >= 16 and zlib.crc32(data[:-4]) == struct.unpack("<I", data[-4:])[0]
    header = None
    if len(data) >= 12 + hlen:
        try:
            header = json.loads(data[12:12 + hlen])
        except (UnicodeDecodeError, json.JSONDecodeError):
            header = None
    if header is not None:
        expected = 12 + hlen + 4 * sum(int(np.prod(p["shape"])) for p in header["params"]) + 4
        if len(data) < expected:
            raise TruncatedFileError(f"partition file has {len(data)} bytes, expected {expected}")
    elif len(data) < 12 + hlen + 4:
        raise TruncatedFileError("partition file ends inside its header")
    if not crc_ok:
        raise ChecksumError("partition file checksum mismatch")
    if header is None or len(data) != expected:
        raise PartitionFormatError("partition file is malformed")

    local = Network.from_spec_dict(header["local"])
    remote = Network.from_spec_dict(header["remote"])
    offset = 12 + hlen
    for p in header["params"]:
        n = int(np.prod(p["shape"]))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(p["shape"])
        offset += 4 * n
        target = local if p["part"] == "local" else remote
        target.params[p["key"]] = arr.astype(np.float32)
    local.locked = bool(header.get("local_locked", False))
    return BipartiteNetwork(local, remote, header["cut"], header.get("metadata"))


def save_partition(bipartite: BipartiteNetwork, path) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(bipartite))
    return path


def load_partition(path) -> BipartiteNetwork:
    return from_bytes(Path(path).read_bytes())
