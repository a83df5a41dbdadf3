"""Data ingestion and persistence: IDX datasets, PGM images, checkpoints.

All formats are bit-exact on round trip. The checkpoint layout is
little-endian: magic ``DGDN1``, a version byte, a length-prefixed JSON header
(architecture, hyperparameters, counters, data range), length-prefixed
float64 arrays, and a trailing CRC32 over everything before it.
"""

import gzip
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .model import DictionarySet, Hyperparams, LayerSpec, NetworkSpec

MAGIC = b"DGDN1"
VERSION = 1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class DatasetHandle:
    """Images plus optional labels in 1..C."""
    images: list
    labels: np.ndarray = None
    classes: int = 0

    def __post_init__(self):
        if self.images:
            shape = self.images[0].shape
            for im in self.images:
                if im.shape != shape:
                    raise FormatError("dataset images have mixed dimensions")
        if self.labels is not None:
            if len(self.labels) != len(self.images):
                raise FormatError(
                    f"{len(self.images)} images but {len(self.labels)} labels")
            if self.classes and (self.labels.min() < 1
                                 or self.labels.max() > self.classes):
                raise FormatError("labels outside 1..C")

    def __len__(self):
        return len(self.images)

    def subset(self, n, offset=0):
        lab = None if self.labels is None else self.labels[offset:offset + n]
        return DatasetHandle(self.images[offset:offset + n], lab, self.classes)


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(images_path, labels_path=None):
    """Parse big-endian IDX files into a DatasetHandle.

    Pixels are scaled to [0, 1]; raw label byte b becomes class b+1 so labels
    live in 1..C. Gzipped files are detected and decompressed transparently.
    """
    with _open_maybe_gzip(images_path) as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise FormatError(f"{images_path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(
                f"{images_path}: bad IDX magic 0x{magic:08x}, "
                f"want 0x{IDX_IMAGES_MAGIC:08x}")
        raw = fh.read(count * rows * cols)
    if len(raw) != count * rows * cols:
        raise FormatError(f"{images_path}: truncated pixel data "
                          f"({len(raw)} of {count * rows * cols} bytes)")
    pix = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    images = [np.ascontiguousarray(pix[i * rows * cols:(i + 1) * rows * cols]
                                   .reshape(1, rows, cols))
              for i in range(count)]

    labels = None
    classes = 0
    if labels_path is not None:
        with _open_maybe_gzip(labels_path) as fh:
            head = fh.read(8)
            if len(head) < 8:
                raise FormatError(f"{labels_path}: truncated IDX header")
            magic, lcount = struct.unpack(">II", head)
            if magic != IDX_LABELS_MAGIC:
                raise FormatError(
                    f"{labels_path}: bad IDX magic 0x{magic:08x}, "
                    f"want 0x{IDX_LABELS_MAGIC:08x}")
            raw = fh.read(lcount)
        if len(raw) != lcount:
            raise FormatError(f"{labels_path}: truncated label data")
        if lcount != count:
            raise FormatError(
                f"count mismatch: {count} images vs {lcount} labels")
        labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64) + 1
        classes = int(labels.max())
    return DatasetHandle(images, labels, classes)


def write_pgm(image, path):
    """Write a single-band image as binary PGM (P5, maxval 255).

    Min-max scaled to the byte range; a constant image falls back to clamping
    the raw values into [0, 1]. Bytes round half to even.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        if image.shape[0] != 1:
            raise FormatError(f"PGM writer is single-band; got {image.shape[0]} bands")
        image = image[0]
    if image.ndim != 2:
        raise FormatError(f"expected a 2-D image, got shape {image.shape}")
    lo, hi = float(image.min()), float(image.max())
    if hi > lo:
        scaled = (image - lo) / (hi - lo)
    else:
        scaled = np.clip(image, 0.0, 1.0)
    data = np.rint(scaled * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


# ---------------------------------------------------------------------------
# Checkpoints

@dataclass
class Checkpoint:
    spec: NetworkSpec
    dicts: DictionarySet
    betas: np.ndarray = None          # (C, top_feature_dim + 1) or None
    rms_v: list = None                # RMSprop accumulators or None
    seed: int = 0
    iteration: int = 0
    data_range: tuple = (0.0, 1.0)
    pixel_scale: float = 1.0 / 255.0  # ingestion scaling, recorded for parity


def _spec_to_json(spec):
    return {
        "input_h": spec.input_h, "input_w": spec.input_w,
        "input_bands": spec.input_bands, "classes": spec.classes,
        "layers": [{"k": l.k, "dict_h": l.dict_h, "dict_w": l.dict_w,
                    "pool_h": l.pool_h, "pool_w": l.pool_w}
                   for l in spec.layers],
        "hypers": vars(spec.hypers),
    }


def _spec_from_json(d):
    layers = [LayerSpec(**l) for l in d["layers"]]
    hypers = Hyperparams(**d["hypers"])
    return NetworkSpec(d["input_h"], d["input_w"], d["input_bands"],
                       d["classes"], layers, hypers)


def _pack_array(name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    name_b = name.encode("ascii")
    out = [struct.pack("<H", len(name_b)), name_b,
           struct.pack("<B", arr.ndim),
           struct.pack(f"<{arr.ndim}I", *arr.shape),
           arr.tobytes()]
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def save_checkpoint(cp, path):
    """Serialize a checkpoint; bit-exact across save/load/save cycles."""
    header = {
        "spec": _spec_to_json(cp.spec),
        "seed": int(cp.seed),
        "iteration": int(cp.iteration),
        "data_range": [float(cp.data_range[0]), float(cp.data_range[1])],
        "pixel_scale": float(cp.pixel_scale),
        "has_betas": cp.betas is not None,
        "n_rms": 0 if cp.rms_v is None else len(cp.rms_v),
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<B", VERSION),
             struct.pack("<I", len(hdr)), hdr]
    arrays = [(f"dict{li}", d) for li, d in enumerate(cp.dicts.layers)]
    if cp.betas is not None:
        arrays.append(("betas", cp.betas))
    if cp.rms_v is not None:
        arrays.extend((f"rms{li}", v) for li, v in enumerate(cp.rms_v))
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        parts.append(_pack_array(name, arr))
    body = b"".join(parts)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", crc))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < len(MAGIC) + 5:
        raise FormatError("checkpoint too short")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise FormatError("checkpoint CRC mismatch")
    rd = _Reader(body)
    if rd.take(len(MAGIC)) != MAGIC:
        raise FormatError("not a DGDN checkpoint (bad magic)")
    (version,) = rd.unpack("<B")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, want {VERSION}")
    (hlen,) = rd.unpack("<I")
    header = json.loads(rd.take(hlen).decode("utf-8"))
    spec = _spec_from_json(header["spec"])
    (n_arrays,) = rd.unpack("<I")
    arrays = {}
    order = []
    for _ in range(n_arrays):
        (nlen,) = rd.unpack("<H")
        name = rd.take(nlen).decode("ascii")
        (ndim,) = rd.unpack("<B")
        shape = rd.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(rd.take(count * 8), dtype="<f8").reshape(shape).copy()
        arrays[name] = arr
        order.append(name)
    dicts = DictionarySet([arrays[f"dict{li}"] for li in range(spec.n_layers)])
    dicts.check_shapes(spec)
    betas = arrays.get("betas") if header["has_betas"] else None
    rms_v = ([arrays[f"rms{li}"] for li in range(header["n_rms"])]
             if header["n_rms"] else None)
    return Checkpoint(spec=spec, dicts=dicts, betas=betas, rms_v=rms_v,
                      seed=header["seed"], iteration=header["iteration"],
                      data_range=tuple(header["data_range"]),
                      pixel_scale=header["pixel_scale"])
