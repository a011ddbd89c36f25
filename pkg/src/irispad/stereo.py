"""Per-pixel surface normals from k >= 2 images under known light directions.

The Lambertian model ties the k observed intensities of a pixel to its
albedo-scaled normal through the k x 3 light matrix ``L`` (one light
direction per row): ``I = L @ n_hat``.  ``n_hat`` is recovered with the
pseudoinverse of ``L`` and normalised to give the unit normal.  With two
lights ``L`` has rank 2 and the minimum-norm solution is used, i.e. the
component of ``n_hat`` orthogonal to both lights is zero.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CorruptFile, DimensionMismatch, InvalidRig, NonFiniteInput, RankDeficient, UnsupportedFormat

#: ||n_hat|| below this is treated as a null solution (normal undefined).
NULL_NORM = 1e-12
#: relative singular-value floor used for the rank test.
RANK_RTOL = 1e-9

NRM_MAGIC = b"NRM1"


@dataclass(frozen=True, eq=False)
class LightRig:
    """k unit light directions (pointing from the surface toward each light)."""

    directions: np.ndarray

    def __post_init__(self):
        d = np.array(self.directions, dtype=np.float64, copy=True)
        if d.ndim != 2 or d.shape[1] != 3 or d.shape[0] < 2:
            raise InvalidRig(f"need k >= 2 three-vectors, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise InvalidRig("light directions must be finite")
        norms = np.linalg.norm(d, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise InvalidRig(f"light directions must be unit length, norms={norms.tolist()}")
        gram = np.abs(d @ d.T)
        k = d.shape[0]
        for a in range(k):
            for b in range(a + 1, k):
                if gram[a, b] >= 1.0 - 1e-9:
                    raise RankDeficient(f"lights {a} and {b} are parallel")
        d.setflags(write=False)
        object.__setattr__(self, "directions", d)
        # factorise eagerly so an unusable rig fails at construction
        _ = self.pinv

    @classmethod
    def from_vectors(cls, vectors) -> "LightRig":
        """Normalise arbitrary-length direction vectors into a rig."""
        v = np.asarray(vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise InvalidRig(f"expected a list of 3-vectors, got shape {v.shape}")
        norms = np.linalg.norm(v, axis=1)
        if np.any(~np.isfinite(norms)) or np.any(norms < 1e-6):
            raise InvalidRig("light direction with (near) zero length")
        return cls(v / norms[:, None])

    @classmethod
    def symmetric(cls, degrees: float = 20.0) -> "LightRig":
        """Left/right pair at (-sin a, 0, cos a) and (sin a, 0, cos a)."""
        s, c = math.sin(math.radians(degrees)), math.cos(math.radians(degrees))
        return cls([[-s, 0.0, c], [s, 0.0, c]])

    @property
    def k(self) -> int:
        return self.directions.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """The k x 3 light matrix L."""
        return self.directions

    @cached_property
    def pinv(self) -> np.ndarray:
        """3 x k matrix P with ``n_hat = P @ I`` (least squares / minimum norm)."""
        L = self.directions
        sv = np.linalg.svd(L, compute_uv=False)
        if sv[-1] < RANK_RTOL * sv[0]:
            raise RankDeficient(f"light matrix rank < {min(self.k, 3)} (singular values {sv.tolist()})")
        if self.k == 3:
            return np.linalg.inv(L)
        if self.k == 2:
            return L.T @ np.linalg.inv(L @ L.T)
        return np.linalg.inv(L.T @ L) @ L.T

    def to_json(self) -> str:
        return json.dumps({"directions": self.directions.tolist()})

    def __eq__(self, other):
        return isinstance(other, LightRig) and np.array_equal(self.directions, other.directions)

    __hash__ = None


def load_rig(path) -> LightRig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidRig(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or "directions" not in doc:
        raise InvalidRig(f"{path}: missing 'directions'")
    return LightRig.from_vectors(doc["directions"])


def save_rig(rig: LightRig, path) -> None:
    Path(path).write_text(rig.to_json() + "\n")


def solve_pixel(intensities: Sequence[float], rig: LightRig) -> np.ndarray:
    """Unnormalised normal ``n_hat`` for one pixel."""
    I = np.asarray(intensities, dtype=np.float64)
    if I.shape != (rig.k,):
        raise DimensionMismatch(f"expected {rig.k} intensities, got shape {I.shape}")
    if not np.all(np.isfinite(I)):
        raise NonFiniteInput("intensities must be finite")
    return rig.pinv @ I


@dataclass(frozen=True, eq=False)
class NormalField:
    """Unit normals ``normals`` (H, W, 3), raw solutions ``raw`` and validity (H, W)."""

    normals: np.ndarray
    raw: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        normals = np.array(self.normals, dtype=np.float64, copy=True)
        raw = np.array(self.raw, dtype=np.float64, copy=True)
        valid = np.array(getattr(self.valid, "bits", self.valid), dtype=bool, copy=True)
        if normals.ndim != 3 or normals.shape[2] != 3 or raw.shape != normals.shape:
            raise DimensionMismatch("normals and raw must both have shape (H, W, 3)")
        if valid.shape != normals.shape[:2]:
            raise DimensionMismatch(f"validity mask {valid.shape} vs field {normals.shape[:2]}")
        for a in (normals, raw, valid):
            a.setflags(write=False)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "valid", valid)

    @property
    def width(self) -> int:
        return self.normals.shape[1]

    @property
    def height(self) -> int:
        return self.normals.shape[0]

    @property
    def shape(self):
        return self.normals.shape[:2]

    @classmethod
    def from_raw(cls, raw: np.ndarray) -> "NormalField":
        raw = np.asarray(raw, dtype=np.float64)
        norm = np.linalg.norm(raw, axis=-1)
        valid = norm >= NULL_NORM
        safe = np.where(valid, norm, 1.0)
        normals = np.where(valid[..., None], raw / safe[..., None], 0.0)
        return cls(normals, raw, valid)

    @classmethod
    def from_normals(cls, normals: np.ndarray, valid=None) -> "NormalField":
        """Wrap unit normals (normalising them) as a field; raw equals normals."""
        normals = np.asarray(normals, dtype=np.float64)
        field = cls.from_raw(normals)
        if valid is None:
            return field
        valid = np.asarray(valid, dtype=bool) & field.valid
        return cls(np.where(valid[..., None], field.normals, 0.0), field.raw, valid)


def _stack(images) -> np.ndarray:
    arrays = [np.asarray(getattr(im, "pixels", im), dtype=np.float64) for im in images]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise DimensionMismatch(f"images have differing shapes: {sorted(shapes)}")
    if arrays[0].ndim != 2:
        raise DimensionMismatch("images must be 2-D")
    return np.stack(arrays, axis=-1)


def estimate_normals_multi(images, rig: LightRig) -> NormalField:
    """Normals from k co-registered 8-bit images, one per light of ``rig``."""
    if len(images) != rig.k:
        raise DimensionMismatch(f"rig has {rig.k} lights but {len(images)} images were given")
    stack = _stack(images) / 255.0
    if not np.all(np.isfinite(stack)):
        raise NonFiniteInput("images contain non-finite values")
    raw = stack @ rig.pinv.T
    return NormalField.from_raw(raw)


def estimate_normals(pair, rig: LightRig) -> NormalField:
    """Normals for a left/right image pair; ``rig`` lists the left light first."""
    if rig.k != 2:
        raise DimensionMismatch(f"an image pair needs a 2-light rig, got k={rig.k}")
    return estimate_normals_multi([pair.left, pair.right], rig)


# --------------------------------------------------------------------------
# NRM1 export


def save_normal_field(field: NormalField, path) -> None:
    """NRM1: magic, u32 width, u32 height, float64 xyz per pixel, packed validity bits.

    All multi-byte values are little-endian; validity bits are row-major,
    most significant bit first within each byte.  Invalid pixels store zeros.
    """
    h, w = field.shape
    normals = np.where(field.valid[..., None], field.normals, 0.0)
    payload = (
        NRM_MAGIC
        + struct.pack("<II", w, h)
        + normals.astype("<f8").tobytes()
        + np.packbits(field.valid.ravel()).tobytes()
    )
    Path(path).write_bytes(payload)


def load_normal_field(path) -> NormalField:
    data = Path(path).read_bytes()
    if data[:4] != NRM_MAGIC:
        raise UnsupportedFormat(f"{path}: not an NRM1 file")
    if len(data) < 12:
        raise CorruptFile(f"{path}: truncated header")
    w, h = struct.unpack("<II", data[4:12])
    n_float = w * h * 3 * 8
    n_bits = (w * h + 7) // 8
    if len(data) != 12 + n_float + n_bits:
        raise CorruptFile(f"{path}: expected {12 + n_float + n_bits} bytes, found {len(data)}")
    normals = np.frombuffer(data[12:12 + n_float], dtype="<f8").reshape(h, w, 3)
    valid = np.unpackbits(np.frombuffer(data[12 + n_float:], dtype=np.uint8))[: w * h].reshape(h, w)
    return NormalField(normals, normals, valid.astype(bool))


def component_images(field: NormalField):
    """Three uint8 rasters mapping each normal component from [-1, 1] to [0, 255]."""
    out = []
    for c in range(3):
        comp = np.where(field.valid, field.normals[..., c], 0.0)
        out.append(np.clip(np.round((comp + 1.0) * 127.5), 0, 255).astype(np.uint8))
    return out
