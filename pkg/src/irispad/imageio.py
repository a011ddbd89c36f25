"""Bit-exact grayscale image, mask and manifest I/O.

Binary PGM (P5, maxval 255) is the canonical on-disk format.  8-bit grayscale
PNG is accepted on input.  Nothing in here rescales pixel values.
"""

from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import (
    CorruptFile,
    DepthMismatch,
    DimensionMismatch,
    DuplicateSampleId,
    InvalidGeometry,
    MalformedRow,
    MissingFile,
    UnsupportedFormat,
)
from .roi import AnnulusGeometry

MANIFEST_HEADER = [
    "sample_id", "left", "right", "mask_left", "mask_right",
    "pupil_cx", "pupil_cy", "pupil_r", "iris_cx", "iris_cy", "iris_r",
    "label", "tags",
]

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _frozen(array, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Row-major 8-bit intensities, shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise DimensionMismatch(f"expected a non-empty 2-D raster, got shape {pixels.shape}")
        if pixels.dtype != np.uint8:
            if np.any((pixels < 0) | (pixels > 255)) or np.any(pixels != np.round(pixels)):
                raise DepthMismatch("pixel values must be integers in [0, 255]")
        object.__setattr__(self, "pixels", _frozen(pixels, np.uint8))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self):
        return self.pixels.shape

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Boolean usability mask, True marks an iris pixel."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise DimensionMismatch(f"expected a 2-D mask, got shape {bits.shape}")
        object.__setattr__(self, "bits", _frozen(bits, bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def shape(self):
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())

    def __and__(self, other):
        other_bits = getattr(other, "bits", other)
        if self.shape != np.shape(other_bits):
            raise DimensionMismatch(f"mask shapes differ: {self.shape} vs {np.shape(other_bits)}")
        return BinaryMask(self.bits & np.asarray(other_bits, dtype=bool))

    def __eq__(self, other):
        return isinstance(other, BinaryMask) and np.array_equal(self.bits, other.bits)

    __hash__ = None


class Label(str, enum.Enum):
    BONAFIDE = "bonafide"
    ATTACK = "attack"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class ImagePair:
    left: GrayImage
    right: GrayImage
    mask_left: BinaryMask
    mask_right: BinaryMask
    label: Label = Label.UNKNOWN
    sample_id: str = ""

    def __post_init__(self):
        shapes = {self.left.shape, self.right.shape, self.mask_left.shape, self.mask_right.shape}
        if len(shapes) != 1:
            raise DimensionMismatch(f"pair rasters have differing shapes: {sorted(shapes)}")

    @property
    def shape(self):
        return self.left.shape


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    left: Path
    right: Path
    mask_left: Path
    mask_right: Path
    annulus: Optional[AnnulusGeometry]
    label: Label
    tags: Tuple[str, ...] = ()

    @property
    def paths(self):
        return (self.left, self.right, self.mask_left, self.mask_right)


@dataclass(frozen=True)
class DatasetManifest:
    entries: Tuple[ManifestEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for entry in self.entries:
            if entry.sample_id in seen:
                raise DuplicateSampleId(f"duplicate sample_id {entry.sample_id!r}")
            seen.add(entry.sample_id)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, index):
        return self.entries[index]

    def by_id(self, sample_id) -> ManifestEntry:
        for entry in self.entries:
            if entry.sample_id == sample_id:
                return entry
        raise KeyError(sample_id)


# --------------------------------------------------------------------------
# PGM / PNG rasters


def _parse_pnm_header(data: bytes):
    """Return (magic, width, height, maxval, payload_offset)."""
    magic = data[:2]
    pos = 2
    tokens = []
    while len(tokens) < 3:
        if pos >= len(data):
            raise CorruptFile("truncated PGM header")
        ch = data[pos:pos + 1]
        if ch == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise CorruptFile("unterminated comment in PGM header")
            pos = end + 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
                pos += 1
            tok = data[start:pos]
            if not tok.isdigit():
                raise CorruptFile(f"bad PGM header token {tok!r}")
            tokens.append(int(tok))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise CorruptFile("missing whitespace after PGM maxval")
    width, height, maxval = tokens
    return magic, width, height, maxval, pos + 1


def _read_pgm(data: bytes, path) -> np.ndarray:
    _, width, height, maxval, offset = _parse_pnm_header(data)
    if width < 1 or height < 1:
        raise CorruptFile(f"{path}: invalid dimensions {width}x{height}")
    if maxval != 255:
        raise DepthMismatch(f"{path}: maxval {maxval}, only 255 is supported")
    payload = data[offset:offset + width * height]
    if len(payload) < width * height:
        raise CorruptFile(f"{path}: expected {width * height} pixel bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def _read_png(path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as img:
            mode = img.mode
            if mode in ("I;16", "I;16B", "I;16L", "I", "F", "1"):
                raise DepthMismatch(f"{path}: PNG mode {mode} is not 8-bit grayscale")
            if mode != "L":
                raise UnsupportedFormat(f"{path}: PNG mode {mode} is not grayscale")
            img.load()
            return np.asarray(img, dtype=np.uint8).copy()
    except (DepthMismatch, UnsupportedFormat):
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc


def _read_raster(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise MissingFile(str(path)) from exc
    if data[:2] == b"P5":
        return _read_pgm(data, path)
    if data[:8] == _PNG_MAGIC:
        return _read_png(path)
    raise UnsupportedFormat(f"{path}: not a binary PGM (P5) or PNG file")


def load_gray(path) -> GrayImage:
    return GrayImage(_read_raster(path))


def encode_pgm(pixels) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8)
    height, width = pixels.shape
    return b"P5\n%d %d\n255\n" % (width, height) + pixels.tobytes()


def save_gray(image, path) -> None:
    """Write ``image`` as canonical P5 (or PNG when the suffix is ``.png``)."""
    pixels = getattr(image, "pixels", image)
    pixels = GrayImage(pixels).pixels
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(pixels, mode="L").save(path)
        return
    path.write_bytes(encode_pgm(pixels))


def save_pgm16(values, path) -> None:
    """Write a 16-bit (maxval 65535, big-endian) PGM; used for debug rasters."""
    values = np.asarray(values)
    if values.ndim != 2 or values.min(initial=0) < 0 or values.max(initial=0) > 65535:
        raise DepthMismatch("16-bit PGM needs a 2-D array with values in [0, 65535]")
    height, width = values.shape
    header = b"P5\n%d %d\n65535\n" % (width, height)
    Path(path).write_bytes(header + values.astype(">u2").tobytes())


def load_mask(path) -> BinaryMask:
    return BinaryMask(_read_raster(path) >= 128)


def save_mask(mask, path) -> None:
    bits = np.asarray(getattr(mask, "bits", mask), dtype=bool)
    save_gray(np.where(bits, 255, 0).astype(np.uint8), path)


def load_pair(entry: ManifestEntry) -> ImagePair:
    return ImagePair(
        left=load_gray(entry.left),
        right=load_gray(entry.right),
        mask_left=load_mask(entry.mask_left),
        mask_right=load_mask(entry.mask_right),
        label=entry.label,
        sample_id=entry.sample_id,
    )


# --------------------------------------------------------------------------
# manifests


def _parse_annulus(row, line):
    cols = [row[k].strip() for k in MANIFEST_HEADER[5:11]]
    if all(c == "" for c in cols):
        return None
    if any(c == "" for c in cols):
        raise MalformedRow(line, "circle columns must be all present or all empty")
    try:
        pcx, pcy, pr, icx, icy, ir = (float(c) for c in cols)
    except ValueError as exc:
        raise MalformedRow(line, f"non-numeric circle parameter ({exc})") from exc
    try:
        return AnnulusGeometry((pcx, pcy), pr, (icx, icy), ir)
    except InvalidGeometry as exc:
        raise MalformedRow(line, str(exc)) from exc


def load_manifest(path) -> DatasetManifest:
    """Read and eagerly validate a manifest CSV.

    Relative paths are resolved against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    try:
        handle = open(path, newline="")
    except FileNotFoundError as exc:
        raise MissingFile(str(path)) from exc
    entries = []
    seen = set()
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
            raise MalformedRow(1, f"header must be {','.join(MANIFEST_HEADER)}")
        for values in reader:
            line = reader.line_num
            if not values or all(not v.strip() for v in values):
                continue
            if len(values) != len(MANIFEST_HEADER):
                raise MalformedRow(line, f"expected {len(MANIFEST_HEADER)} columns, got {len(values)}")
            row = dict(zip(MANIFEST_HEADER, values))
            sample_id = row["sample_id"].strip()
            if not sample_id:
                raise MalformedRow(line, "empty sample_id")
            if sample_id in seen:
                raise DuplicateSampleId(f"duplicate sample_id {sample_id!r} (line {line})")
            seen.add(sample_id)
            try:
                label = Label(row["label"].strip().lower())
            except ValueError as exc:
                raise MalformedRow(line, f"unknown label {row['label']!r}") from exc
            files = []
            for key in ("left", "right", "mask_left", "mask_right"):
                raw = row[key].strip()
                if not raw:
                    raise MalformedRow(line, f"empty {key} path")
                p = Path(raw)
                if not p.is_absolute():
                    p = base / p
                if not p.is_file():
                    raise MissingFile(f"{p} (sample {sample_id!r}, column {key})")
                files.append(p)
            tags = tuple(t.strip() for t in row["tags"].split(";") if t.strip())
            entries.append(ManifestEntry(sample_id, *files, _parse_annulus(row, line), label, tags))
    return DatasetManifest(tuple(entries))


def _rel(p: Path, base: Path) -> str:
    try:
        return os.path.relpath(p, base)
    except ValueError:
        return str(p)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_manifest(manifest: DatasetManifest | Sequence[ManifestEntry], path) -> None:
    path = Path(path)
    base = path.parent
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for e in manifest:
            if e.annulus is None:
                circle = [""] * 6
            else:
                g = e.annulus
                circle = [_fmt(v) for v in (*g.pupil_center, g.pupil_radius, *g.iris_center, g.iris_radius)]
            writer.writerow([
                e.sample_id,
                *(_rel(Path(p), base) for p in e.paths),
                *circle,
                e.label.value,
                ";".join(e.tags),
            ])
