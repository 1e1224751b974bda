"""Datasets and the single-file model format.

Model file layout (all integers little-endian)::

    b"SNNF" | version:u8 | manifest_len:u32 | manifest (UTF-8 JSON) | blob

The blob is the concatenation of every parameter as row-major float32 LE;
the manifest records each parameter's byte offset and shape.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from snnforge.activation import QuantActParams
from snnforge.ann import LayerSpec, NetworkDef
from snnforge.errors import CountMismatch, FormatError
from snnforge.snn import SpikingNetwork, Stage
from snnforge.tensor import DTYPE, RandomSource

MAGIC = b"SNNF"
VERSION = 1
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_LE_F32 = np.dtype("<f4")


@dataclass
class DatasetHandle:
    x: np.ndarray  # (N, *input_shape) float32
    y: np.ndarray  # (N,) int64
    class_count: int
    input_shape: tuple[int, ...]
    provenance: str = ""

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=DTYPE)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.input_shape = tuple(self.input_shape)
        if len(self.x) != len(self.y):
            raise CountMismatch(f"{len(self.x)} samples but {len(self.y)} labels")
        if self.x.shape[1:] != self.input_shape:
            raise ValueError(f"sample shape {self.x.shape[1:]} != input_shape {self.input_shape}")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.class_count):
            raise ValueError("labels outside [0, class_count)")

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i):
        return self.x[i], int(self.y[i])

    def subset(self, idx, provenance: str | None = None) -> "DatasetHandle":
        idx = np.asarray(idx, dtype=np.int64)
        return DatasetHandle(self.x[idx], self.y[idx], self.class_count, self.input_shape,
                             self.provenance if provenance is None else provenance)


# --------------------------------------------------------------------------
# synthetic data


def _blobs(rs: RandomSource, n: int):
    # Means sit 4 sigma either side of the separating line x0 = 0.
    sigma = 0.15
    y = np.arange(n) % 2
    centers = np.where(y[:, None] == 0, [-4 * sigma, 0.0], [4 * sigma, 0.0])
    x = centers + sigma * rs.generator.standard_normal((n, 2))
    return x, y


def _spirals(rs: RandomSource, n: int):
    y = np.arange(n) % 2
    t = np.sqrt(rs.generator.random(n)) * 3.0 * np.pi
    r = t / (3.0 * np.pi)
    angle = t + np.pi * y
    x = np.stack([r * np.cos(angle), r * np.sin(angle)], axis=1)
    x += 0.02 * rs.generator.standard_normal((n, 2))
    return x, y


def _xor_grid(rs: RandomSource, n: int):
    x = rs.generator.uniform(-1.0, 1.0, size=(n, 2))
    y = ((x[:, 0] > 0) ^ (x[:, 1] > 0)).astype(np.int64)
    return x, y


_SYNTH = {"blobs": _blobs, "spirals": _spirals, "xor_grid": _xor_grid}


def synth(name: str, n: int, seed: int) -> DatasetHandle:
    """Deterministic 2-class 2-D toy sets: ``blobs``, ``spirals``, ``xor_grid``."""
    if name not in _SYNTH:
        raise ValueError(f"unknown synthetic dataset {name!r}; choose from {sorted(_SYNTH)}")
    if n < 2:
        raise ValueError("n must be at least the class count (2)")
    x, y = _SYNTH[name](RandomSource(seed).derive("synth", name, n), n)
    return DatasetHandle(x.astype(DTYPE), y, 2, (2,), f"synthetic:{name}:{seed}")


def load_digits8(seed: int = 0, test_fraction: float = 0.2) -> tuple[DatasetHandle, DatasetHandle]:
    """scikit-learn's bundled 8x8 digits as (1, 8, 8) images in [0, 1].

    Returns a stratified (train, test) split keyed by ``seed``.
    """
    from sklearn.datasets import load_digits

    bunch = load_digits()
    x = (bunch.images / 16.0).astype(DTYPE)[:, None]
    full = DatasetHandle(x, bunch.target, 10, (1, 8, 8), "sklearn:digits")
    return stratified_split(full, test_fraction, RandomSource(seed).derive("digits-split"))


def stratified_split(data: DatasetHandle, fraction: float, rs: RandomSource):
    """Split off ``round(fraction * N)`` samples, allocated across classes by
    largest remainder. Returns ``(rest, held_out)``."""
    n_hold = int(round(fraction * len(data)))
    classes = [np.flatnonzero(data.y == c) for c in range(data.class_count)]
    quotas = np.array([fraction * len(idx) for idx in classes])
    take = np.floor(quotas).astype(int)
    remainder = n_hold - take.sum()
    for c in np.argsort(-(quotas - take), kind="stable")[:remainder]:
        take[c] += 1
    held, rest = [], []
    for c, idx in enumerate(classes):
        if len(idx) == 0:
            continue
        perm = idx[rs.derive("class", c).generator.permutation(len(idx))]
        held.append(perm[: take[c]])
        rest.append(perm[take[c] :])
    held = np.sort(np.concatenate(held))
    rest = np.sort(np.concatenate(rest))
    return data.subset(rest), data.subset(held)


# --------------------------------------------------------------------------
# file loaders


def _read_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return raw


def load_idx(images_path, labels_path) -> DatasetHandle:
    """Load an IDX image/label pair (MNIST layout), scaling pixels to [0, 1]."""
    img = _read_bytes(images_path)
    lab = _read_bytes(labels_path)
    if len(img) < 16:
        raise FormatError(f"{images_path}: too short for an IDX image header")
    if len(lab) < 8:
        raise FormatError(f"{labels_path}: too short for an IDX label header")
    magic, count, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad magic {magic:#010x}")
    lmagic, lcount = struct.unpack(">II", lab[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad magic {lmagic:#010x}")
    if count != lcount:
        raise CountMismatch(f"{count} images but {lcount} labels")
    if len(img) != 16 + count * rows * cols or len(lab) != 8 + count:
        raise FormatError("IDX payload length does not match header")
    if count == 0:
        raise FormatError("IDX files contain no samples")
    pixels = np.frombuffer(img, dtype=np.uint8, offset=16).reshape(count, 1, rows, cols)
    labels = np.frombuffer(lab, dtype=np.uint8, offset=8).astype(np.int64)
    x = pixels.astype(DTYPE) / DTYPE(255)
    return DatasetHandle(x, labels, int(labels.max()) + 1, (1, rows, cols), "idx")


def load_csv(path, input_shape: tuple[int, ...] | None = None, class_count: int | None = None) -> DatasetHandle:
    """Rows of ``label,f1,...,fn``; a non-numeric first line is taken as a header."""
    lines = Path(path).read_text().strip().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty CSV")
    try:
        float(lines[0].split(",")[0])
    except ValueError:
        lines = lines[1:]
    try:
        rows = np.array([[float(v) for v in line.split(",")] for line in lines], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if rows.ndim != 2 or rows.shape[1] < 2:
        raise FormatError(f"{path}: need a label column and at least one feature")
    y = rows[:, 0].astype(np.int64)
    x = rows[:, 1:].astype(DTYPE)
    shape = tuple(input_shape) if input_shape else (x.shape[1],)
    x = x.reshape((len(x),) + shape)
    return DatasetHandle(x, y, class_count or int(y.max()) + 1, shape, f"csv:{path}")


# --------------------------------------------------------------------------
# model files

_PARAM_NAMES = ("weight", "bias")


def _layer_manifest(layer: LayerSpec, blobs: list[bytes], offset: int, with_delta: bool):
    entry = {"kind": layer.kind}
    if layer.kind == "conv2d":
        entry.update(stride=layer.stride, pad=layer.pad)
    if layer.kind == "avgpool":
        entry["size"] = layer.size
    if layer.kind == "activation":
        entry["act"] = {"lambda": layer.act.lam, "L": layer.act.L}
        if with_delta:
            entry["act"]["delta"] = layer.act.delta
    params = {}
    for name in _PARAM_NAMES:
        arr = getattr(layer, name)
        if arr is None:
            continue
        raw = np.ascontiguousarray(arr, dtype=_LE_F32).tobytes()
        params[name] = {"offset": offset, "shape": list(arr.shape)}
        blobs.append(raw)
        offset += len(raw)
    if params:
        entry["params"] = params
    return entry, offset


def _encode(manifest: dict, blobs: list[bytes]) -> bytes:
    blob = b"".join(blobs)
    manifest["blob_length"] = len(blob)
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + bytes([VERSION]) + struct.pack("<I", len(text)) + text + blob


def model_to_bytes(net) -> bytes:
    blobs: list[bytes] = []
    offset = 0
    layers = []
    if isinstance(net, SpikingNetwork):
        stages = []
        for stage in net.stages:
            entries = []
            for layer in stage.layers:
                entry, offset = _layer_manifest(layer, blobs, offset, with_delta=False)
                entries.append(entry)
            stages.append({"layers": entries, "theta": stage.theta})
        manifest = {"kind": "snn", "stages": stages}
    elif isinstance(net, NetworkDef):
        for layer in net.layers:
            entry, offset = _layer_manifest(layer, blobs, offset, with_delta=True)
            layers.append(entry)
        manifest = {"kind": "ann", "layers": layers, "arch": net.arch}
    else:
        raise TypeError(f"cannot serialize {type(net).__name__}")
    manifest.update(input_shape=list(net.input_shape), class_count=net.class_count, dataset=net.dataset)
    return _encode(manifest, blobs)


def save_model(net, path) -> None:
    """Write an ANN (NetworkDef) or SNN (SpikingNetwork) to ``path``."""
    Path(path).write_bytes(model_to_bytes(net))


def _layer_from_manifest(entry: dict, blob: bytes) -> LayerSpec:
    kind = entry.get("kind")
    kwargs = {}
    for name, info in entry.get("params", {}).items():
        if name not in _PARAM_NAMES:
            raise FormatError(f"unknown parameter {name!r}")
        shape = tuple(info["shape"])
        start = info["offset"]
        stop = start + 4 * int(np.prod(shape, dtype=np.int64))
        if start < 0 or stop > len(blob):
            raise FormatError(f"parameter {name!r} at [{start}, {stop}) outside blob of {len(blob)} bytes")
        kwargs[name] = np.frombuffer(blob[start:stop], dtype=_LE_F32).astype(DTYPE).reshape(shape)
    for key in ("stride", "pad", "size"):
        if key in entry:
            kwargs[key] = int(entry[key])
    if "act" in entry:
        a = entry["act"]
        kwargs["act"] = QuantActParams(lam=a["lambda"], L=a["L"], delta=a.get("delta", 0.0))
    try:
        return LayerSpec(kind, **kwargs)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad layer entry: {exc}") from None


def _check_offsets(manifest: dict, blob_length: int) -> None:
    spans = []

    def collect(entries):
        for e in entries:
            for info in e.get("params", {}).values():
                start = int(info["offset"])
                spans.append((start, start + 4 * int(np.prod(info["shape"], dtype=np.int64))))

    if manifest["kind"] == "snn":
        for st in manifest["stages"]:
            collect(st["layers"])
    else:
        collect(manifest["layers"])
    spans.sort()
    prev_end = 0
    for start, stop in spans:
        if start < prev_end or stop > blob_length:
            raise FormatError("overlapping or out-of-range parameter offsets")
        prev_end = stop


def model_from_bytes(data: bytes):
    if len(data) < 9 or data[:4] != MAGIC:
        raise FormatError("not an SNNF model file (bad magic)")
    if data[4] != VERSION:
        raise FormatError(f"unsupported model file version {data[4]} (expected {VERSION})")
    (mlen,) = struct.unpack("<I", data[5:9])
    if 9 + mlen > len(data):
        raise FormatError("truncated manifest")
    try:
        manifest = json.loads(data[9 : 9 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt manifest: {exc}") from None
    blob = data[9 + mlen :]
    try:
        if manifest["blob_length"] != len(blob):
            raise FormatError(f"blob is {len(blob)} bytes, manifest says {manifest['blob_length']}")
        _check_offsets(manifest, len(blob))
        common = dict(
            input_shape=tuple(manifest["input_shape"]),
            class_count=int(manifest["class_count"]),
            dataset=manifest.get("dataset", ""),
        )
        if manifest["kind"] == "ann":
            layers = [_layer_from_manifest(e, blob) for e in manifest["layers"]]
            return NetworkDef(layers, arch=manifest.get("arch", ""), **common)
        if manifest["kind"] == "snn":
            stages = [
                Stage([_layer_from_manifest(e, blob) for e in st["layers"]], st["theta"])
                for st in manifest["stages"]
            ]
            return SpikingNetwork(stages, **common)
        raise FormatError(f"unknown model kind {manifest['kind']!r}")
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed manifest: {exc!r}") from None


def load_model(path):
    """Read a model file; returns a NetworkDef or a SpikingNetwork."""
    return model_from_bytes(Path(path).read_bytes())


def read_manifest(path) -> dict:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError("not an SNNF model file (bad magic)")
    (mlen,) = struct.unpack("<I", data[5:9])
    return json.loads(data[9 : 9 + mlen].decode())
