"""File formats: instance pools, IDX images, model checkpoints, images and masks.

All writers go through :func:`atomic_write` (temp file + rename).
"""
from __future__ import annotations

import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .bags import InstancePool
from .errors import FormatError
from .kde_pool import KdeConfig
from .model import POOLINGS, UccModel
from .ndcore import ACTIVATIONS, Layer, MlpParams
from .segmentation import LabeledImage

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CHECKPOINT_MAGIC = b"UCCM"
CHECKPOINT_VERSION = 1
IMAGE_MAGIC = "UCCI"
MASK_MAGIC = "UCCK"


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------- pools


def format_pool(pool: InstancePool) -> str:
    """Header ``m d K`` then one line per instance: d floats and, if labelled, the label."""
    lines = [f"{pool.size} {pool.dim} {pool.n_classes}"]
    for i in range(pool.size):
        vals = " ".join(repr(float(v)) for v in pool.instances[i])
        lines.append(f"{vals} {int(pool.labels[i])}" if pool.labelled else vals)
    return "\n".join(lines) + "\n"


def write_pool(path, pool: InstancePool) -> None:
    atomic_write(path, format_pool(pool))


def read_pool(path) -> InstancePool:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"pool file not found: {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty pool file")
    try:
        m, d, k = (int(t) for t in lines[0].split())
    except ValueError:
        raise FormatError(f"{path}: header must be 'm d K'") from None
    if len(lines) - 1 != m:
        raise FormatError(f"{path}: header announces {m} instances, found {len(lines) - 1}")
    width = d + (1 if k > 0 else 0)
    x = np.empty((m, d))
    y = np.empty(m, dtype=np.int64) if k > 0 else None
    for i, ln in enumerate(lines[1:]):
        parts = ln.split()
        if len(parts) != width:
            raise FormatError(f"{path}: line {i + 2} has {len(parts)} fields, expected {width}")
        x[i] = [float(t) for t in parts[:d]]
        if y is not None:
            y[i] = int(parts[d])
    return InstancePool(x, y, k)


# --------------------------------------------------------------------------- IDX


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header", 0)
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}", 0)
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{path}: truncated dimension header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims))
    if len(raw) < head + count:
        raise FormatError(f"{path}: truncated data, need {count} bytes", len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)


def load_idx(images_path, labels_path, classes=None) -> InstancePool:
    """IDX image/label pair -> pool with pixels scaled to [0, 1].

    ``classes`` optionally keeps only those raw label values; labels are
    renumbered to 1..K in ascending raw order.
    """
    imgs = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if imgs.shape[0] != labels.shape[0]:
        raise FormatError(f"{imgs.shape[0]} images but {labels.shape[0]} labels", 4)
    x = imgs.reshape(imgs.shape[0], -1).astype(np.float64) / 255.0
    raw = labels.astype(np.int64)
    if classes is not None:
        keep = np.isin(raw, list(classes))
        x, raw = x[keep], raw[keep]
    present = np.unique(raw)
    remap = np.searchsorted(present, raw) + 1
    return InstancePool(x, remap, present.size)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    head = struct.pack(">I3I", IDX_IMAGES_MAGIC, *images.shape)
    atomic_write(images_path, head + images.tobytes())
    atomic_write(labels_path, struct.pack(">II", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


# --------------------------------------------------------------------------- checkpoints


def _write_net(buf: io.BytesIO, net: MlpParams) -> None:
    buf.write(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        buf.write(struct.pack("<IIB", layer.fan_in, layer.fan_out,
                              ACTIVATIONS.index(layer.activation)))
        buf.write(layer.weight.astype("<f8").tobytes())
        buf.write(layer.bias.astype("<f8").tobytes())


def checkpoint_bytes(model: UccModel) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    for net in model.nets:
        _write_net(buf, net)
    k = model.kde
    buf.write(struct.pack("<Iddd", k.num_bins, k.bandwidth, k.range_lo, k.range_hi))
    buf.write(struct.pack("<dIIB", model.alpha, model.ucc_lo, model.ucc_hi,
                          POOLINGS.index(model.pooling)))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes, name: str):
        self.data, self.pos, self.name = data, 0, name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.name}: truncated checkpoint", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def _read_net(r: _Reader) -> MlpParams:
    (n,) = r.unpack("<I")
    layers = []
    for _ in range(n):
        fan_in, fan_out, act = r.unpack("<IIB")
        if act >= len(ACTIVATIONS):
            raise FormatError(f"{r.name}: unknown activation code {act}", r.pos - 1)
        w = r.floats(fan_in * fan_out).reshape(fan_in, fan_out)
        b = r.floats(fan_out)
        layers.append(Layer(w, b, ACTIVATIONS[act]))
    return MlpParams(layers)


def model_from_bytes(data: bytes, name: str = "checkpoint") -> UccModel:
    r = _Reader(data, name)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{name}: not a model checkpoint (bad magic)", 0)
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{name}: unsupported checkpoint version {version}", 4)
    feature, drn, decoder = _read_net(r), _read_net(r), _read_net(r)
    bins, bw, lo, hi = r.unpack("<Iddd")
    alpha, ucc_lo, ucc_hi, pooling = r.unpack("<dIIB")
    if r.pos != len(data):
        raise FormatError(f"{name}: trailing bytes after checkpoint", r.pos)
    return UccModel(feature, drn, decoder, KdeConfig(bins, bw, lo, hi), alpha,
                    ucc_lo, ucc_hi, POOLINGS[pooling])


def save_model(path, model: UccModel) -> None:
    atomic_write(path, checkpoint_bytes(model))


def load_model(path) -> UccModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return model_from_bytes(path.read_bytes(), str(path))


# --------------------------------------------------------------------------- images and masks


def image_bytes(pixels: np.ndarray) -> bytes:
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim == 2:
        px = px[:, :, None]
    h, w, c = px.shape
    return f"{IMAGE_MAGIC} {h} {w} {c}\n".encode() + px.astype("<f8").tobytes()


def mask_bytes(mask: np.ndarray) -> bytes:
    m = np.asarray(mask, dtype=np.uint8)
    h, w = m.shape
    return f"{MASK_MAGIC} {h} {w}\n".encode() + m.tobytes()


def _split_header(data: bytes, magic: str, nfields: int, name: str):
    end = data.find(b"\n")
    if end < 0:
        raise FormatError(f"{name}: missing header line", 0)
    parts = data[:end].decode("ascii", errors="replace").split()
    if not parts or parts[0] != magic or len(parts) != nfields + 1:
        raise FormatError(f"{name}: header must be '{magic}' followed by {nfields} sizes", 0)
    try:
        dims = [int(p) for p in parts[1:]]
    except ValueError:
        raise FormatError(f"{name}: non-integer size in header", 0) from None
    return dims, end + 1


def read_image(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (h, w, c), off = _split_header(data, IMAGE_MAGIC, 3, str(path))
    need = h * w * c * 8
    if len(data) - off != need:
        raise FormatError(f"{path}: expected {need} pixel bytes, found {len(data) - off}", off)
    return np.frombuffer(data, dtype="<f8", offset=off).reshape(h, w, c).astype(np.float64)


def read_mask(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (h, w), off = _split_header(data, MASK_MAGIC, 2, str(path))
    if len(data) - off != h * w:
        raise FormatError(f"{path}: expected {h * w} mask bytes, found {len(data) - off}", off)
    m = np.frombuffer(data, dtype=np.uint8, offset=off).reshape(h, w).copy()
    if np.any(m > 1):
        raise FormatError(f"{path}: mask bytes must be 0 or 1", off)
    return m


def write_image_set(directory, images) -> None:
    directory = Path(directory)
    for i, img in enumerate(images):
        atomic_write(directory / f"img_{i:04d}.ucci", image_bytes(img.pixels))
        atomic_write(directory / f"img_{i:04d}.ucck", mask_bytes(img.mask))


def read_image_set(directory) -> list[LabeledImage]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"image directory not found: {directory}")
    out = []
    for img_path in sorted(directory.glob("*.ucci")):
        mask_path = img_path.with_suffix(".ucck")
        if not mask_path.exists():
            raise FileNotFoundError(f"mask missing for {img_path}")
        out.append(LabeledImage(read_image(img_path), read_mask(mask_path)))
    return out
