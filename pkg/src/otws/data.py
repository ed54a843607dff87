"""Dataset generation, image ingestion, and binary serialization.

File formats
------------
raw_grid (measures):
    magic ``OTG1`` | u32 count | u32 rows | u32 cols | count*rows*cols f64,
    integers and floats little-endian, weights row-major per measure.
IDX3 images (MNIST-style):
    big-endian header u32 magic=0x00000803 | u32 count | u32 rows | u32
    cols, then 8-bit pixels row-major.
checkpoint (models):
    magic ``OTCK`` | u32 version | u32 header length | UTF-8 JSON header |
    concatenated f64 little-endian row-major tensors in header order |
    u32 CRC32 of the tensor payload.  Integers little-endian.

Every produced measure is strictly positive: a floor ``delta`` is added to
all raw pixel values before normalization.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, CorruptionError, FormatError
from .measures import DiscreteMeasure, GridGeometry

__all__ = [
    "DatasetSpec",
    "gen_random_r3",
    "raw_r3_pixels",
    "load_idx_images",
    "save_raw_grid",
    "load_raw_grid",
    "save_checkpoint",
    "load_checkpoint",
    "measure_to_csv",
    "matrix_to_csv",
    "save_pgm",
]

IDX_IMAGE_MAGIC = 0x00000803
RAW_GRID_MAGIC = b"OTG1"
CHECKPOINT_MAGIC = b"OTCK"
CHECKPOINT_VERSION = 1

#: positivity floor added to raw pixel values before normalization
DEFAULT_DELTA = 1e-6


@dataclass(frozen=True)
class DatasetSpec:
    """What to generate or how to ingest: kind, size, and positivity floor."""

    kind: str
    count: int
    rows: int
    cols: int
    delta: float = DEFAULT_DELTA
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("random_r3", "idx_images", "raw_grid"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid dimensions must be positive")
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")


def raw_r3_pixels(rng, count, size):
    """Cubed-uniform raw pixel values (expectation 1/4 per pixel)."""
    return rng.random((count, size)) ** 3


def _normalize_rows(raw, delta, geometry):
    w = raw + delta
    w = w / w.sum(axis=1, keepdims=True)
    return [DiscreteMeasure(w[k], geometry) for k in range(w.shape[0])]


def gen_random_r3(spec):
    """Measures whose pixels are drawn as r^3, r uniform on [0, 1].

    A pure function of (spec.seed, spec shape): the same spec always
    produces the identical dataset.
    """
    if spec.kind != "random_r3":
        raise ValueError("spec.kind must be 'random_r3'")
    rng = np.random.default_rng(spec.seed)
    geometry = GridGeometry.regular(spec.rows, spec.cols)
    raw = raw_r3_pixels(rng, spec.count, geometry.size)
    return _normalize_rows(raw, spec.delta, geometry)


def load_idx_images(path, delta=DEFAULT_DELTA, limit=None):
    """Measures from an IDX3 image file (8-bit pixels, big-endian header).

    Pixels are scaled to [0, 1], floored by ``delta``, and normalized.
    Raises :class:`FormatError` (with the failing byte offset) on a bad
    magic number or truncation.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise FormatError(f"{path}: truncated IDX header", len(data))
    (magic,) = struct.unpack(">I", data[:4])
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{path}: bad IDX image magic {magic:#010x}", 0)
    if len(data) < 16:
        raise FormatError(f"{path}: truncated IDX header", len(data))
    count, rows, cols = struct.unpack(">III", data[4:16])
    if limit is not None:
        count = min(count, limit)
    need = 16 + count * rows * cols
    if len(data) < need:
        raise FormatError(f"{path}: truncated IDX payload", len(data))
    pixels = np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16)
    raw = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    geometry = GridGeometry.regular(rows, cols)
    return _normalize_rows(raw, delta, geometry)


def save_raw_grid(measures, path):
    """Write measures sharing one geometry to a raw_grid binary file."""
    geometry = measures[0].geometry
    for m in measures:
        if m.geometry.rows != geometry.rows or m.geometry.cols != geometry.cols:
            raise ValueError("all measures must share one geometry")
    payload = np.stack([m.weights for m in measures]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(RAW_GRID_MAGIC)
        fh.write(struct.pack("<III", len(measures), geometry.rows, geometry.cols))
        fh.write(payload.tobytes())


def load_raw_grid(path):
    """Read a raw_grid file back into a list of measures."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != RAW_GRID_MAGIC:
        raise FormatError(f"{path}: bad raw_grid magic", 0)
    if len(data) < 16:
        raise FormatError(f"{path}: truncated raw_grid header", len(data))
    count, rows, cols = struct.unpack("<III", data[4:16])
    need = 16 + count * rows * cols * 8
    if len(data) < need:
        raise FormatError(f"{path}: truncated raw_grid payload", len(data))
    w = np.frombuffer(data, dtype="<f8", count=count * rows * cols, offset=16)
    w = w.reshape(count, rows * cols)
    geometry = GridGeometry.regular(rows, cols)
    return [DiscreteMeasure(w[k], geometry) for k in range(count)]


def _model_header(gen, approx, seed, outer_iterations, samples_consumed):
    bn = next(layer for layer in approx.stack.layers if hasattr(layer, "running_mean"))
    tensors = []
    for name, arr in gen.state_tensors().items():
        tensors.append({"name": f"generator.{name}", "shape": list(arr.shape)})
    for name, arr in approx.state_tensors().items():
        tensors.append({"name": f"approximator.{name}", "shape": list(arr.shape)})
    return {
        "version": CHECKPOINT_VERSION,
        "generator": {
            "latent_dim": gen.config.latent_dim,
            "n": gen.config.n,
            "lam": gen.config.lam,
            "c": gen.config.c,
        },
        "approximator": {"n": approx.config.n},
        "batch_norm": {"epsilon": bn.epsilon, "momentum": bn.momentum},
        "layer_order": "linear-relu-batchnorm",
        "seed": seed,
        "progress": {
            "outer_iterations": outer_iterations,
            "samples_consumed": samples_consumed,
        },
        "tensors": tensors,
    }


def save_checkpoint(gen, approx, path, seed=0, outer_iterations=0, samples_consumed=0):
    """Write both models to a checkpoint file; round trips bit-exactly."""
    header = _model_header(gen, approx, seed, outer_iterations, samples_consumed)
    named = {}
    for name, arr in gen.state_tensors().items():
        named[f"generator.{name}"] = arr
    for name, arr in approx.state_tensors().items():
        named[f"approximator.{name}"] = arr
    payload = b"".join(
        np.ascontiguousarray(named[t["name"]], dtype="<f8").tobytes() for t in header["tensors"]
    )
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_checkpoint(path):
    """Rebuild (generator, approximator, header) from a checkpoint file.

    Raises :class:`CorruptionError` on truncation or checksum mismatch,
    ``ValueError`` on a version mismatch, and :class:`ConsistencyError`
    (naming the offending tensor) when header shapes disagree with the
    declared architecture.
    """
    from .models import Approximator, ApproximatorConfig, Generator, GeneratorConfig

    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        raise CorruptionError(f"{path}: truncated checkpoint")
    if data[:4] != CHECKPOINT_MAGIC:
        raise CorruptionError(f"{path}: bad checkpoint magic")
    version, header_len = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise ValueError(
            f"{path}: checkpoint version {version} not supported (expected {CHECKPOINT_VERSION})"
        )
    if len(data) < 12 + header_len + 4:
        raise CorruptionError(f"{path}: truncated checkpoint")
    header = json.loads(data[12 : 12 + header_len].decode("utf-8"))

    payload_len = sum(
        8 * int(np.prod(t["shape"])) if t["shape"] else 8 for t in header["tensors"]
    )
    start = 12 + header_len
    if len(data) < start + payload_len + 4:
        raise CorruptionError(f"{path}: truncated checkpoint payload")
    payload = data[start : start + payload_len]
    (crc,) = struct.unpack("<I", data[start + payload_len : start + payload_len + 4])
    if crc != zlib.crc32(payload):
        raise CorruptionError(f"{path}: checkpoint payload fails CRC32 check")

    gcfg = GeneratorConfig(**header["generator"])
    acfg = ApproximatorConfig(**header["approximator"])
    rng = np.random.default_rng(0)
    gen = Generator(gcfg, rng)
    approx = Approximator(acfg, rng)
    bn_cfg = header["batch_norm"]
    for layer in approx.stack.layers:
        if hasattr(layer, "running_mean"):
            layer.epsilon = bn_cfg["epsilon"]
            layer.momentum = bn_cfg["momentum"]

    state = {}
    for name, arr in gen.state_tensors().items():
        state[f"generator.{name}"] = arr
    for name, arr in approx.state_tensors().items():
        state[f"approximator.{name}"] = arr

    offset = 0
    for t in header["tensors"]:
        name = t["name"]
        shape = tuple(t["shape"])
        size = int(np.prod(shape)) if shape else 1
        if name not in state:
            raise ConsistencyError(f"{path}: header names unknown tensor {name!r}")
        if state[name].shape != shape:
            raise ConsistencyError(
                f"{path}: tensor {name!r} has shape {shape} in header but "
                f"{state[name].shape} in the declared architecture"
            )
        values = np.frombuffer(payload, dtype="<f8", count=size, offset=offset)
        state[name][...] = values.reshape(shape)
        offset += size * 8
    return gen, approx, header


def measure_to_csv(measure, path):
    """Inspection CSV with header i,j,value (row-major grid indices)."""
    cols = measure.geometry.cols
    with open(path, "w") as fh:
        fh.write("i,j,value\n")
        for flat, value in enumerate(measure.weights):
            fh.write(f"{flat // cols},{flat % cols},{value!r}\n")


def matrix_to_csv(matrix, path):
    """Inspection CSV for any 2-D array, header i,j,value."""
    matrix = np.asarray(matrix)
    with open(path, "w") as fh:
        fh.write("i,j,value\n")
        for i in range(matrix.shape[0]):
            for j in range(matrix.shape[1]):
                fh.write(f"{i},{j},{matrix[i, j]!r}\n")


def save_pgm(measure, path):
    """Render a measure as a binary PGM image (max weight maps to white)."""
    g = measure.geometry
    w = measure.weights
    peak = w.max()
    pixels = np.zeros(g.size, dtype=np.uint8) if peak == 0 else np.rint(
        w / peak * 255.0
    ).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{g.cols} {g.rows}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
