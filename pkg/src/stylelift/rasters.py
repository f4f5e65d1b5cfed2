"""Dense raster buffers and their on-disk formats.

All pipeline rasters share one raw little-endian container: a 4-byte magic,
three uint32 fields (width, height, channels), then a row-major payload.
Float rasters store float32 and round-trip losslessly; segmentation stores
uint16 label ids. Images may alternatively live in 8-bit PNG files and
depth maps in PFM files, selected by file extension.

Per-pixel validity is encoded as NaN in the payload (all components of a
pixel), so a raster file is self-describing. Buffer constructors normalise
their payload this way, which is what makes write/read round-trips
bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    DimensionMismatchError,
    IoFailureError,
    MagicMismatchError,
    MalformedHeaderError,
    MissingFileError,
)

MAGIC_IMAGE = b"RSIM"
MAGIC_DEPTH = b"RSDP"
MAGIC_POINTMAP = b"RSPM"
MAGIC_FLOW = b"RSFL"
MAGIC_SEGMENTATION = b"RSSG"
MAGIC_INVERSION = b"RSIR"
MAGIC_CONDITION = b"RSCD"

_HEADER = struct.Struct("<4sIII")


# --------------------------------------------------------------------------
# buffer types
# --------------------------------------------------------------------------

@dataclass
class ImageBuffer:
    """H x W x C raster with float values in [0, 1], C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3 or self.data.shape[2] not in (1, 3):
            raise DimensionMismatchError(
                f"image must be HxWx1 or HxWx3, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class DepthMap:
    """H x W metric depth; valid entries are positive and finite."""

    data: np.ndarray
    validity: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise DimensionMismatchError(
                f"depth must be HxW, got shape {self.data.shape}")
        implied = np.isfinite(self.data) & (self.data > 0.0)
        if self.validity is None:
            self.validity = implied
        else:
            self.validity = np.asarray(self.validity, dtype=bool) & implied
        if self.validity.shape != self.data.shape:
            raise DimensionMismatchError("depth validity shape differs from data")
        self.data = self.data.copy()
        self.data[~self.validity] = np.nan

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass
class Pointmap:
    """H x W x 3 world-coordinate points; invalid pixels are NaN."""

    data: np.ndarray
    validity: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise DimensionMismatchError(
                f"pointmap must be HxWx3, got shape {self.data.shape}")
        implied = np.all(np.isfinite(self.data), axis=2)
        if self.validity is None:
            self.validity = implied
        else:
            self.validity = np.asarray(self.validity, dtype=bool) & implied
        if self.validity.shape != self.data.shape[:2]:
            raise DimensionMismatchError("pointmap validity shape differs from data")
        self.data = self.data.copy()
        self.data[~self.validity] = np.nan

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass
class FlowField:
    """H x W x 2 displacement field, target minus source, in pixels."""

    flow: np.ndarray
    validity: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.flow = np.ascontiguousarray(self.flow, dtype=np.float32)
        if self.flow.ndim != 3 or self.flow.shape[2] != 2:
            raise DimensionMismatchError(
                f"flow must be HxWx2, got shape {self.flow.shape}")
        implied = np.all(np.isfinite(self.flow), axis=2)
        if self.validity is None:
            self.validity = implied
        else:
            self.validity = np.asarray(self.validity, dtype=bool) & implied
        if self.validity.shape != self.flow.shape[:2]:
            raise DimensionMismatchError("flow validity shape differs from data")
        self.flow = self.flow.copy()
        self.flow[~self.validity] = np.nan

    @property
    def width(self) -> int:
        return self.flow.shape[1]

    @property
    def height(self) -> int:
        return self.flow.shape[0]


@dataclass
class SemanticMap:
    """H x W categorical label raster plus an id -> class-name table."""

    labels: np.ndarray
    label_table: dict[int, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint16)
        if self.labels.ndim != 2:
            raise DimensionMismatchError(
                f"labels must be HxW, got shape {self.labels.shape}")
        if not self.label_table:
            self.label_table = {int(i): str(int(i)) for i in np.unique(self.labels)}
        missing = set(np.unique(self.labels).tolist()) - set(self.label_table)
        if missing:
            raise ValueError(f"label ids {sorted(missing)} missing from label table")

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def classes(self) -> set[str]:
        """Class names actually present in the raster."""
        return {self.label_table[int(i)] for i in np.unique(self.labels)}

    def class_at(self, row: int, col: int) -> str:
        return self.label_table[int(self.labels[row, col])]


# --------------------------------------------------------------------------
# raw container
# --------------------------------------------------------------------------

def write_raw(path: str | Path, magic: bytes, width: int, height: int,
              channels: int, payload: bytes) -> None:
    """Write one header + payload blob; the low-level shared writer."""
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(magic, width, height, channels))
            fh.write(payload)
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


def read_raw(path: str | Path) -> tuple[bytes, int, int, int, bytes]:
    """Read a raw container, returning (magic, width, height, channels, payload)."""
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise MissingFileError(f"no such raster file: {path}") from exc
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise MalformedHeaderError(f"{path}: file shorter than raster header")
    magic, width, height, channels = _HEADER.unpack_from(blob)
    if width == 0 or height == 0 or channels == 0:
        raise MalformedHeaderError(f"{path}: zero dimension in header")
    return magic, width, height, channels, blob[_HEADER.size:]


_FLOAT_MAGICS = {MAGIC_IMAGE, MAGIC_DEPTH, MAGIC_POINTMAP, MAGIC_FLOW, MAGIC_CONDITION}
_KNOWN_MAGICS = _FLOAT_MAGICS | {MAGIC_SEGMENTATION, MAGIC_INVERSION}


def _decode_payload(path, magic, width, height, channels, payload) -> np.ndarray:
    dtype = np.uint16 if magic == MAGIC_SEGMENTATION else np.float32
    expected = width * height * channels * dtype().itemsize
    if len(payload) != expected:
        raise MalformedHeaderError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    arr = np.frombuffer(payload, dtype=np.dtype(dtype).newbyteorder("<"))
    return arr.reshape(height, width, channels).astype(dtype, copy=True)


def write_raster(buffer, path: str | Path) -> None:
    """Serialize a buffer; format picked by buffer type and file extension.

    ``.png`` paths store images as 8-bit PNG (quantized to 1/255 steps);
    ``.pfm`` paths store depth as PFM; everything else uses the raw
    container, which is lossless for float rasters.
    """
    path = Path(path)
    if isinstance(buffer, ImageBuffer):
        if path.suffix.lower() == ".png":
            _write_png(buffer, path)
            return
        payload = buffer.data.astype("<f4").tobytes()
        write_raw(path, MAGIC_IMAGE, buffer.width, buffer.height,
                  buffer.channels, payload)
    elif isinstance(buffer, DepthMap):
        if path.suffix.lower() == ".pfm":
            _write_pfm(buffer, path)
            return
        payload = buffer.data.astype("<f4").tobytes()
        write_raw(path, MAGIC_DEPTH, buffer.width, buffer.height, 1, payload)
    elif isinstance(buffer, Pointmap):
        payload = buffer.data.astype("<f4").tobytes()
        write_raw(path, MAGIC_POINTMAP, buffer.width, buffer.height, 3, payload)
    elif isinstance(buffer, FlowField):
        payload = buffer.flow.astype("<f4").tobytes()
        write_raw(path, MAGIC_FLOW, buffer.width, buffer.height, 2, payload)
    elif isinstance(buffer, SemanticMap):
        payload = buffer.labels.astype("<u2").tobytes()
        write_raw(path, MAGIC_SEGMENTATION, buffer.width, buffer.height, 1, payload)
    else:
        raise TypeError(f"cannot serialize {type(buffer).__name__}")


def read_raster(path: str | Path):
    """Load a raster file, dispatching on extension then magic."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        return _read_png(path)
    if path.suffix.lower() == ".pfm":
        return _read_pfm(path)
    magic, width, height, channels, payload = read_raw(path)
    if magic not in _KNOWN_MAGICS:
        raise MagicMismatchError(f"{path}: unknown magic {magic!r}")
    if magic == MAGIC_INVERSION:
        raise MagicMismatchError(
            f"{path}: inversion records load via diffusion.read_inversion_record")
    arr = _decode_payload(path, magic, width, height, channels, payload)
    if magic == MAGIC_IMAGE:
        if channels not in (1, 3):
            raise MalformedHeaderError(f"{path}: image channels must be 1 or 3")
        return ImageBuffer(arr)
    if magic == MAGIC_DEPTH:
        if channels != 1:
            raise MalformedHeaderError(f"{path}: depth channels must be 1")
        return DepthMap(arr[:, :, 0])
    if magic == MAGIC_POINTMAP:
        if channels != 3:
            raise MalformedHeaderError(f"{path}: pointmap channels must be 3")
        return Pointmap(arr)
    if magic == MAGIC_FLOW:
        if channels != 2:
            raise MalformedHeaderError(f"{path}: flow channels must be 2")
        return FlowField(arr)
    if magic == MAGIC_SEGMENTATION:
        if channels != 1:
            raise MalformedHeaderError(f"{path}: segmentation channels must be 1")
        return SemanticMap(arr[:, :, 0])
    raise MagicMismatchError(f"{path}: unhandled magic {magic!r}")


def read_condition_channels(path: str | Path) -> np.ndarray:
    """Load a 5-channel condition raster written with MAGIC_CONDITION."""
    magic, width, height, channels, payload = read_raw(path)
    if magic != MAGIC_CONDITION:
        raise MagicMismatchError(f"{path}: expected condition magic, got {magic!r}")
    return _decode_payload(path, magic, width, height, channels, payload)


def write_condition_channels(channels: np.ndarray, path: str | Path) -> None:
    arr = np.ascontiguousarray(channels, dtype=np.float32)
    write_raw(path, MAGIC_CONDITION, arr.shape[1], arr.shape[0], arr.shape[2],
              arr.astype("<f4").tobytes())


# --------------------------------------------------------------------------
# PNG / PFM alternatives
# --------------------------------------------------------------------------

def _write_png(buffer: ImageBuffer, path: Path) -> None:
    arr = np.round(buffer.data * 255.0).astype(np.uint8)
    mode = "L" if buffer.channels == 1 else "RGB"
    img = Image.fromarray(arr[:, :, 0] if mode == "L" else arr, mode=mode)
    try:
        img.save(path, format="PNG")
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


def _read_png(path: Path) -> ImageBuffer:
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError as exc:
        raise MissingFileError(f"no such image file: {path}") from exc
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return ImageBuffer(arr)


def _write_pfm(depth: DepthMap, path: Path) -> None:
    # grayscale PFM, negative scale marks little-endian, rows bottom-up
    try:
        with open(path, "wb") as fh:
            fh.write(b"Pf\n")
            fh.write(f"{depth.width} {depth.height}\n".encode("ascii"))
            fh.write(b"-1.0\n")
            fh.write(depth.data[::-1].astype("<f4").tobytes())
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


def _read_pfm(path: Path) -> DepthMap:
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise MissingFileError(f"no such depth file: {path}") from exc
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    try:
        header, dims, scale_line, rest = blob.split(b"\n", 3)
        width, height = (int(v) for v in dims.split())
        scale = float(scale_line)
    except ValueError as exc:
        raise MalformedHeaderError(f"{path}: bad PFM header") from exc
    if header != b"Pf":
        raise MagicMismatchError(f"{path}: expected grayscale PFM, got {header!r}")
    if len(rest) != width * height * 4:
        raise MalformedHeaderError(f"{path}: PFM payload size mismatch")
    order = "<" if scale < 0 else ">"
    arr = np.frombuffer(rest, dtype=np.dtype(np.float32).newbyteorder(order))
    return DepthMap(arr.reshape(height, width)[::-1].astype(np.float32))
