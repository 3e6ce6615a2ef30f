"""Readers and writers for coherency images, label maps, checkpoints and rasters.

On-disk formats
---------------
T3 directory (PolSARpro layout)
    ``config.txt`` plus ``T11.bin T22.bin T33.bin`` and ``T12_real.bin``,
    ``T12_imag.bin``, ``T13_real.bin``, ``T13_imag.bin``, ``T23_real.bin``,
    ``T23_imag.bin``. Each ``.bin`` is ``H*W`` row-major float32 little-endian.
Label map
    ASCII header ``PLBL 1 <height> <width> <num_classes>\\n`` followed by
    ``H*W`` row-major uint16 little-endian labels; 0 means unlabeled.
Checkpoint
    ``b"CVPS"``, uint32 format version, then the model config text, best
    validation loss, Adam step and one record per parameter holding the value,
    first and second moments as float64 planes (real then imaginary).
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHANNELS = ("T11", "T12", "T13", "T22", "T23", "T33")
DIAGONAL = (0, 3, 5)
# (off-diagonal channel, its two diagonal channels)
OFF_DIAGONAL = ((1, 0, 3), (2, 0, 5), (4, 3, 5))
T3_FILES = ("T11.bin", "T22.bin", "T33.bin",
            "T12_real.bin", "T12_imag.bin",
            "T13_real.bin", "T13_imag.bin",
            "T23_real.bin", "T23_imag.bin")

PSD_RTOL = 1e-4
NEG_DIAG_TOL = 1e-6

CHECKPOINT_MAGIC = b"CVPS"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    """A file or directory does not match the expected layout."""


def check_coherency(data: np.ndarray, rtol: float = PSD_RTOL) -> None:
    """Raise ``ValueError`` unless every pixel is a Hermitian PSD upper triangle."""
    if data.ndim != 3 or data.shape[2] != 6:
        raise ValueError(f"coherency data must be (H, W, 6), got {data.shape}")
    diag = data[..., DIAGONAL]
    if np.any(diag.imag != 0):
        raise ValueError("diagonal channels must be real")
    if np.any(diag.real < 0):
        raise ValueError("diagonal channels must be non-negative")
    scale = float(diag.real.max()) if diag.size else 0.0
    atol = 1e-12 * scale * scale
    for off, a, b in OFF_DIAGONAL:
        lhs = np.abs(data[..., off]) ** 2
        rhs = data[..., a].real * data[..., b].real
        if np.any(lhs > rhs * (1 + rtol) + atol):
            raise ValueError(f"|{CHANNELS[off]}|^2 exceeds {CHANNELS[a]}*{CHANNELS[b]}: "
                             "matrix is not positive semidefinite")


@dataclass(frozen=True, eq=False)
class CoherencyImage:
    """``H x W`` grid of six complex channels ``(T11, T12, T13, T22, T23, T33)``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.complex128, copy=True)
        if arr.ndim != 3 or arr.shape[2] != 6:
            raise ValueError(f"coherency data must be (H, W, 6), got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def channel(self, name: str) -> np.ndarray:
        return self.data[..., CHANNELS.index(name)]

    def __eq__(self, other):
        return isinstance(other, CoherencyImage) and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class LabelMap:
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        raw = np.asarray(self.labels)
        if raw.ndim != 2:
            raise ValueError(f"label map must be 2-D, got {raw.shape}")
        if raw.size and (raw.min() < 0 or raw.max() > self.num_classes):
            raise FormatError(f"label out of range: labels must lie in 0..{self.num_classes}")
        arr = raw.astype(np.uint16, copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)
        object.__setattr__(self, "num_classes", int(self.num_classes))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self):
        return self.labels.shape

    def __eq__(self, other):
        return (isinstance(other, LabelMap) and self.num_classes == other.num_classes
                and np.array_equal(self.labels, other.labels))


# --- T3 directories -----------------------------------------------------------

def _parse_config(text: str) -> tuple[int, int]:
    values = {}
    lines = [ln.strip() for ln in text.splitlines()]
    for i, line in enumerate(lines):
        for key in ("Nrow", "Ncol"):
            if line == key:
                nxt = next((ln for ln in lines[i + 1:] if ln), None)
                values[key] = nxt
            elif line.startswith(key) and line[len(key)] in " \t=:":
                values[key] = line[len(key):].strip(" \t=:")
    try:
        rows, cols = int(values["Nrow"]), int(values["Ncol"])
    except (KeyError, TypeError, ValueError):
        raise FormatError("bad header: config.txt must declare Nrow and Ncol") from None
    if rows < 1 or cols < 1:
        raise FormatError("bad header: Nrow and Ncol must be positive")
    return rows, cols


def read_t3_directory(path) -> CoherencyImage:
    path = Path(path)
    missing = [f for f in ("config.txt", *T3_FILES) if not (path / f).is_file()]
    if missing:
        raise FormatError(f"incomplete T3 directory: missing {', '.join(missing)}")
    h, w = _parse_config((path / "config.txt").read_text())
    planes = {}
    for name in T3_FILES:
        raw = (path / name).read_bytes()
        if len(raw) != 4 * h * w:
            raise FormatError(f"shape mismatch: {name} has {len(raw)} bytes, "
                              f"expected {4 * h * w}")
        planes[name[:-4]] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(h, w)
    data = np.empty((h, w, 6), dtype=np.complex128)
    for c, name in enumerate(CHANNELS):
        if c in DIAGONAL:
            data[..., c] = planes[name]
        else:
            data[..., c] = planes[name + "_real"] + 1j * planes[name + "_imag"]
    diag = data[..., DIAGONAL].real
    peak = max(float(np.abs(diag).max()), 0.0)
    if np.any(diag < -NEG_DIAG_TOL * peak):
        raise FormatError("diagonal channel has negative power")
    data[..., DIAGONAL] = np.maximum(diag, 0.0)
    try:
        check_coherency(data)
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    return CoherencyImage(data)


def write_t3_directory(image: CoherencyImage, path) -> None:
    check_coherency(image.data)
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    h, w = image.height, image.width
    for c, name in enumerate(CHANNELS):
        plane = image.data[..., c]
        if c in DIAGONAL:
            outputs = {name: plane.real}
        else:
            outputs = {name + "_real": plane.real, name + "_imag": plane.imag}
        for fname, values in outputs.items():
            (path / f"{fname}.bin").write_bytes(values.astype("<f4").tobytes())
    (path / "config.txt").write_text(
        f"Nrow\n{h}\n---------\nNcol\n{w}\n---------\n"
        "PolarCase\nmonostatic\n---------\nPolarType\nfull\n")


# --- label maps ---------------------------------------------------------------

def read_label_map(path) -> LabelMap:
    raw = Path(path).read_bytes()
    head, sep, payload = raw.partition(b"\n")
    parts = head.decode("ascii", errors="replace").split()
    if not sep or len(parts) != 5 or parts[0] != "PLBL" or parts[1] != "1":
        raise FormatError("bad header: expected 'PLBL 1 <height> <width> <num_classes>'")
    try:
        h, w, n = (int(v) for v in parts[2:])
    except ValueError:
        raise FormatError("bad header: non-integer dimensions") from None
    if len(payload) != 2 * h * w:
        raise FormatError(f"shape mismatch: payload has {len(payload)} bytes, expected {2 * h * w}")
    labels = np.frombuffer(payload, dtype="<u2").reshape(h, w)
    if labels.size and int(labels.max()) > n:
        raise FormatError(f"label out of range: {int(labels.max())} > num_classes {n}")
    return LabelMap(labels, n)


def write_label_map(label_map: LabelMap, path) -> None:
    h, w = label_map.shape
    header = f"PLBL 1 {h} {w} {label_map.num_classes}\n".encode("ascii")
    Path(path).write_bytes(header + label_map.labels.astype("<u2").tobytes())


# --- checkpoints --------------------------------------------------------------

def _planes(arr, is_complex):
    if is_complex:
        return [np.ascontiguousarray(arr.real), np.ascontiguousarray(arr.imag)]
    return [np.ascontiguousarray(arr)]


def save_checkpoint(net, path) -> None:
    from .model import parameter_shapes

    shapes = parameter_shapes(net.config)
    if list(shapes) != list(net.params):
        raise ValueError("network parameters do not match its config")
    cfg = net.config.to_text().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<dQI", float(net.best_val_loss), int(net.step), len(shapes)))
        for name, (shape, is_complex) in shapes.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", int(is_complex), len(shape)))
            fh.write(struct.pack(f"<{len(shape)}I", *shape))
            for arr in (net.params[name], net.adam_m[name], net.adam_v[name]):
                if arr.shape != tuple(shape):
                    raise ValueError(f"parameter {name} has shape {arr.shape}, expected {shape}")
                for plane in _planes(arr, is_complex):
                    fh.write(plane.astype("<f8").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    from .model import ModelConfig, Network, parameter_shapes

    rd = _Reader(Path(path).read_bytes())
    if len(rd.data) < 8 or rd.take(4) != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint")
    (version,) = rd.unpack("<I")
    if version > CHECKPOINT_VERSION:
        raise FormatError(f"unsupported version {version}")
    (cfg_len,) = rd.unpack("<I")
    config = ModelConfig.from_text(rd.take(cfg_len).decode("utf-8"))
    best, step, count = rd.unpack("<dQI")
    expected = parameter_shapes(config)
    if count != len(expected):
        raise FormatError("checkpoint parameters do not match its model config")
    params, m, v = {}, {}, {}
    for name, (shape, is_complex) in expected.items():
        (n_len,) = rd.unpack("<H")
        stored = rd.take(n_len).decode("utf-8")
        flag, ndim = rd.unpack("<BB")
        dims = rd.unpack(f"<{ndim}I")
        if stored != name or tuple(dims) != tuple(shape) or bool(flag) != is_complex:
            raise FormatError(f"checkpoint parameter {stored} does not match {name}{shape}")
        size = int(np.prod(shape))
        arrays = []
        for _ in range(3):
            planes = [np.frombuffer(rd.take(8 * size), dtype="<f8").reshape(shape)
                      for _ in range(2 if is_complex else 1)]
            arr = planes[0] + 1j * planes[1] if is_complex else planes[0].copy()
            arrays.append(arr)
        params[name], m[name], v[name] = arrays
    if rd.pos != len(rd.data):
        raise FormatError("trailing bytes after checkpoint payload")
    return Network(config, params, m, v, int(step), float(best))


# --- rasters ------------------------------------------------------------------

def _save_rgb(rgb: np.ndarray, path) -> None:
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def scale_channel(values: np.ndarray) -> np.ndarray:
    """Map to 0..255 with ``255 * x / p99``, p99 being the nearest-rank 99th percentile."""
    p99 = float(np.percentile(values, 99, method="inverted_cdf")) if values.size else 0.0
    if not p99 > 0:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.rint(np.clip(255.0 * values / p99, 0, 255)).astype(np.uint8)


def pauli_rgb(image: CoherencyImage) -> np.ndarray:
    # R: double bounce (T22), G: volume (T33), B: surface (T11)
    return np.stack([scale_channel(image.channel(c).real) for c in ("T22", "T33", "T11")],
                    axis=-1)


def render_pauli_rgb(image: CoherencyImage, path) -> None:
    _save_rgb(pauli_rgb(image), path)


def default_palette(num_classes: int) -> list:
    """Black for unlabeled, then evenly spaced hues."""
    import colorsys

    palette = [(0, 0, 0)]
    for i in range(num_classes):
        r, g, b = colorsys.hsv_to_rgb(i / max(num_classes, 1), 0.85, 0.95)
        palette.append((round(255 * r), round(255 * g), round(255 * b)))
    return palette


def render_class_map(label_map: LabelMap, palette, path) -> None:
    lut = np.asarray(palette, dtype=np.int64)
    if lut.ndim != 2 or lut.shape[1] != 3 or len(lut) < label_map.num_classes + 1:
        raise ValueError(f"palette/classes mismatch: {len(palette)} colors for "
                         f"{label_map.num_classes} classes plus unlabeled")
    if lut.min() < 0 or lut.max() > 255:
        raise ValueError("palette entries must be 0..255")
    _save_rgb(lut[label_map.labels], path)


def read_rgb(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def ensure_writable_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise OSError(f"cannot write to {path}")
    return path
