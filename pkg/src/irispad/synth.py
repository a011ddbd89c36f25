"""Synthetic Lambertian iris pairs with known surface normals.

Bona fide samples are nearly flat surfaces with a faint smooth perturbation.
Attack samples carry a rough printed lens: large smooth slope perturbations
plus opaque dots that cast a shadow on the side away from each light, so each
shadow appears in only one image of the pair.  ``clear`` samples are flat
irises with a thin annular ridge standing in for a clear lens edge.

Every sample is fully determined by ``(seed, index)``.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .errors import InvalidSpec
from .imageio import (
    BinaryMask,
    DatasetManifest,
    GrayImage,
    ImagePair,
    Label,
    ManifestEntry,
    save_gray,
    save_mask,
    write_manifest,
)
from .roi import AnnulusGeometry, _annulus_bits, _pixel_centres, _polar
from .stereo import LightRig, NormalField, save_rig

log = logging.getLogger(__name__)

FLAT_MAX_AMPLITUDE = 0.05


class SurfaceKind(str, enum.Enum):
    FLAT_IRIS = "flat"
    BUMPY_LENS = "bumpy"


@dataclass(frozen=True)
class SurfaceSpec:
    kind: SurfaceKind = SurfaceKind.FLAT_IRIS
    base_normal: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    texture_seed: int = 0
    bump_amplitude: float = 0.02
    bump_count: int = 16
    opaque_dot_fraction: float = 0.0
    albedo_range: Tuple[float, float] = (0.35, 0.85)
    # thin annular ridge (clear-lens edge); 0 disables it
    rim_amplitude: float = 0.0
    rim_position: float = 0.85
    rim_width: float = 1.5
    # optional (rho_lo, rho_hi, theta_lo, theta_hi) window in normalised
    # annulus coordinates outside which attack bumps and dots are absent
    region: Optional[Tuple[float, float, float, float]] = None
    # natural iris roughness of an attack sample outside ``region``
    iris_amplitude: float = 0.02
    dot_radius: float = 1.6
    shadow_offset: float = 2.5
    shadow_depth: float = 0.2

    def __post_init__(self):
        kind = SurfaceKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.bump_amplitude < 0 or not math.isfinite(self.bump_amplitude):
            raise InvalidSpec("bump_amplitude must be a non-negative number")
        if not 0.0 <= self.opaque_dot_fraction <= 1.0:
            raise InvalidSpec("opaque_dot_fraction must lie in [0, 1]")
        lo, hi = self.albedo_range
        if not (0.0 < lo <= hi <= 1.0):
            raise InvalidSpec(f"albedo_range must satisfy 0 < low <= high <= 1, got {self.albedo_range}")
        if self.bump_count < 1:
            raise InvalidSpec("bump_count must be at least 1")
        if np.linalg.norm(self.base_normal) < 1e-9:
            raise InvalidSpec("base_normal must be non-zero")
        if kind is SurfaceKind.FLAT_IRIS:
            if self.bump_amplitude > FLAT_MAX_AMPLITUDE:
                raise InvalidSpec(f"flat iris bump_amplitude must be <= {FLAT_MAX_AMPLITUDE}")
            if self.opaque_dot_fraction != 0.0:
                raise InvalidSpec("flat iris cannot carry opaque dots")
        if self.region is not None and len(self.region) != 4:
            raise InvalidSpec("region must be (rho_lo, rho_hi, theta_lo, theta_hi)")

    @classmethod
    def flat(cls, seed=0, **kw) -> "SurfaceSpec":
        return cls(SurfaceKind.FLAT_IRIS, texture_seed=seed, **kw)

    @classmethod
    def bumpy(cls, seed=0, **kw) -> "SurfaceSpec":
        kw.setdefault("bump_amplitude", 0.3)
        kw.setdefault("bump_count", 24)
        kw.setdefault("opaque_dot_fraction", 0.02)
        return cls(SurfaceKind.BUMPY_LENS, texture_seed=seed, **kw)


@dataclass(frozen=True)
class SynthSample:
    pair: ImagePair
    truth_normals: NormalField
    geometry: AnnulusGeometry
    albedo: np.ndarray
    clamp_count: int = 0


def value_noise(rng: np.random.Generator, cells: int, height: int, width: int) -> np.ndarray:
    """Bilinearly interpolated lattice noise in [-1, 1] with ``cells`` cells per side."""
    lattice = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1))
    ys = np.linspace(0.0, cells, height, endpoint=False) + cells / (2.0 * height)
    xs = np.linspace(0.0, cells, width, endpoint=False) + cells / (2.0 * width)
    y0 = np.minimum(np.floor(ys).astype(int), cells - 1)
    x0 = np.minimum(np.floor(xs).astype(int), cells - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    v00 = lattice[y0][:, x0]
    v01 = lattice[y0][:, x0 + 1]
    v10 = lattice[y0 + 1][:, x0]
    v11 = lattice[y0 + 1][:, x0 + 1]
    return (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy


def _region_bits(spec: SurfaceSpec, geometry, px, py) -> np.ndarray:
    if spec.region is None:
        return np.ones(px.shape, dtype=bool)
    rho, theta = _polar(geometry, px, py)
    r_lo, r_hi, t_lo, t_hi = spec.region
    frac = theta / (2.0 * np.pi)
    return (rho >= r_lo) & (rho <= r_hi) & (frac >= t_lo) & (frac <= t_hi)


def _normalise(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _disc_bits(centres, radius, px, py) -> np.ndarray:
    out = np.zeros(px.shape, dtype=bool)
    r2 = radius * radius
    for cx, cy in centres:
        x0, x1 = int(max(cx - radius - 1, 0)), int(min(cx + radius + 2, px.shape[1]))
        y0, y1 = int(max(cy - radius - 1, 0)), int(min(cy + radius + 2, px.shape[0]))
        if x0 >= x1 or y0 >= y1:
            continue
        sub = (px[y0:y1, x0:x1] - cx) ** 2 + (py[y0:y1, x0:x1] - cy) ** 2 <= r2
        out[y0:y1, x0:x1] |= sub
    return out


def generate(spec: SurfaceSpec, geometry: AnnulusGeometry, rig: LightRig, width: int, height: int,
             noise_sigma: float = 0.0, label: Label = Label.UNKNOWN, sample_id: str = "") -> SynthSample:
    """Render one image pair (one image per light of ``rig``) from ``spec``.

    ``noise_sigma`` is the standard deviation of additive Gaussian noise on
    the [0, 1] intensity scale, applied before 8-bit quantisation.
    """
    if noise_sigma < 0 or not math.isfinite(noise_sigma):
        raise InvalidSpec("noise_sigma must be a non-negative number")
    if width < 1 or height < 1:
        raise InvalidSpec("image dimensions must be positive")
    rng = np.random.default_rng([spec.texture_seed & 0xFFFFFFFFFFFFFFFF, 0x5EED])
    px, py = _pixel_centres(width, height)
    annulus = _annulus_bits(geometry, px, py)
    region = _region_bits(spec, geometry, px, py)

    # surface slopes -> normals
    base = np.asarray(spec.base_normal, dtype=np.float64)
    base = base / np.linalg.norm(base)
    gx = value_noise(rng, spec.bump_count, height, width)
    gy = value_noise(rng, spec.bump_count, height, width)
    amp = spec.bump_amplitude
    if spec.kind is SurfaceKind.BUMPY_LENS:
        amp = np.where(region, spec.bump_amplitude, spec.iris_amplitude)
    slopes = np.zeros((height, width, 3))
    slopes[..., 0] = amp * gx
    slopes[..., 1] = amp * gy
    if spec.rim_amplitude > 0:
        dx = px - geometry.iris_center[0]
        dy = py - geometry.iris_center[1]
        dist = np.hypot(dx, dy)
        u = (dist - spec.rim_position * geometry.iris_radius) / spec.rim_width
        # derivative-of-Gaussian profile, peak magnitude = rim_amplitude
        profile = -spec.rim_amplitude * u * np.exp(0.5 - 0.5 * u * u)
        safe = np.where(dist > 0, dist, 1.0)
        slopes[..., 0] += profile * dx / safe
        slopes[..., 1] += profile * dy / safe
    normals = _normalise(base + slopes)

    lo, hi = spec.albedo_range
    albedo = lo + (hi - lo) * 0.5 * (value_noise(rng, max(spec.bump_count, 8), height, width) + 1.0)

    shade = np.ones((rig.k, height, width))
    if spec.opaque_dot_fraction > 0:
        eligible = np.flatnonzero(annulus & region)
        area = float(eligible.size)
        n_dots = int(round(spec.opaque_dot_fraction * area / (math.pi * spec.dot_radius ** 2)))
        if n_dots and eligible.size:
            picks = rng.choice(eligible, size=n_dots, replace=True)
            centres = np.stack([px.ravel()[picks], py.ravel()[picks]], axis=1)
            albedo = np.where(_disc_bits(centres, spec.dot_radius, px, py), 0.0, albedo)
            for d, light in enumerate(rig.directions):
                planar = np.hypot(light[0], light[1])
                if planar < 1e-9:
                    continue
                offset = -spec.shadow_offset * light[:2] / planar
                shadow = _disc_bits(centres + offset, spec.dot_radius, px, py)
                shade[d] = np.where(shadow, spec.shadow_depth, 1.0)

    cosines = np.maximum(np.einsum("hwc,kc->khw", normals, rig.directions), 0.0)
    radiance = np.clip(albedo[None] * cosines, 0.0, 1.0) * shade
    if noise_sigma > 0:
        radiance = radiance + rng.normal(0.0, noise_sigma, size=radiance.shape)
    clamps = int(np.count_nonzero((radiance < 0.0) | (radiance > 1.0)))
    if clamps:
        log.debug("sample %s: %d intensities clamped", sample_id, clamps)
    images = np.round(np.clip(radiance, 0.0, 1.0) * 255.0).astype(np.uint8)

    mask = BinaryMask(annulus)
    pair = ImagePair(GrayImage(images[0]), GrayImage(images[1]), mask, mask, label, sample_id)
    truth = NormalField(normals, normals * albedo[..., None], np.ones((height, width), dtype=bool))
    return SynthSample(pair, truth, geometry, albedo, clamps)


# --------------------------------------------------------------------------
# corpora


ATTACK_TAGS = ("textured-regular", "textured-irregular")


@dataclass(frozen=True)
class CorpusParams:
    width: int = 128
    height: int = 128
    bonafide_amplitude: float = 0.02
    bump_amplitude: float = 0.3
    # irregular lenses: no dots, coarser bumps this many times steeper
    irregular_factor: float = 3.0
    dot_fraction: float = 0.02
    noise_sigma: float = 0.004
    clear_rim_amplitude: float = 0.12
    attack_region: Optional[Tuple[float, float, float, float]] = None


@dataclass(frozen=True)
class CorpusItem:
    sample_id: str
    label: Label
    tags: Tuple[str, ...]
    spec: SurfaceSpec
    geometry: AnnulusGeometry


def random_geometry(rng: np.random.Generator, width: int, height: int) -> AnnulusGeometry:
    scale = min(width, height) / 128.0
    icx = width / 2.0 + rng.uniform(-1.5, 1.5) * scale
    icy = height / 2.0 + rng.uniform(-1.5, 1.5) * scale
    ir = rng.uniform(48.0, 54.0) * scale
    pr = rng.uniform(16.0, 22.0) * scale
    pcx = icx + rng.uniform(-2.0, 2.0) * scale
    pcy = icy + rng.uniform(-2.0, 2.0) * scale
    return AnnulusGeometry((pcx, pcy), pr, (icx, icy), ir)


def plan_corpus(n_bonafide: int, n_attack: int, params: CorpusParams = CorpusParams(), seed: int = 0,
                n_clear: int = 0) -> List[CorpusItem]:
    """Describe every sample of a corpus without rendering it.

    Attacks alternate between ``textured-regular`` (dot pattern) and
    ``textured-irregular`` (no dots, coarser and stronger bumps).
    """
    if min(n_bonafide, n_attack, n_clear) < 0:
        raise InvalidSpec("sample counts must be non-negative")
    items = []
    index = 0

    def next_rng():
        nonlocal index
        rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, index])
        index += 1
        return rng

    for k in range(n_bonafide):
        rng = next_rng()
        spec = SurfaceSpec.flat(int(rng.integers(2 ** 63)), bump_amplitude=params.bonafide_amplitude)
        items.append(CorpusItem(f"bf{k:04d}", Label.BONAFIDE, ("none",), spec,
                                random_geometry(rng, params.width, params.height)))
    for k in range(n_attack):
        rng = next_rng()
        tex = int(rng.integers(2 ** 63))
        if k % 2 == 0:
            tag = ATTACK_TAGS[0]
            spec = SurfaceSpec.bumpy(tex, bump_amplitude=params.bump_amplitude,
                                     opaque_dot_fraction=params.dot_fraction, region=params.attack_region)
        else:
            tag = ATTACK_TAGS[1]
            spec = SurfaceSpec.bumpy(tex, bump_amplitude=params.bump_amplitude * params.irregular_factor,
                                     bump_count=12,
                                     opaque_dot_fraction=0.0, region=params.attack_region)
        items.append(CorpusItem(f"at{k:04d}", Label.ATTACK, (tag,), spec,
                                random_geometry(rng, params.width, params.height)))
    for k in range(n_clear):
        rng = next_rng()
        spec = SurfaceSpec.flat(int(rng.integers(2 ** 63)), bump_amplitude=params.bonafide_amplitude,
                                rim_amplitude=params.clear_rim_amplitude)
        items.append(CorpusItem(f"cl{k:04d}", Label.BONAFIDE, ("clear",), spec,
                                random_geometry(rng, params.width, params.height)))
    return items


def render_item(item: CorpusItem, rig: LightRig, params: CorpusParams = CorpusParams(),
                noise_sigma: Optional[float] = None) -> SynthSample:
    sigma = params.noise_sigma if noise_sigma is None else noise_sigma
    return generate(item.spec, item.geometry, rig, params.width, params.height, sigma,
                    label=item.label, sample_id=item.sample_id)


def generate_corpus(out_dir, n_bonafide: int, n_attack: int, params: CorpusParams = CorpusParams(),
                    seed: int = 0, rig: Optional[LightRig] = None, n_clear: int = 0) -> DatasetManifest:
    """Render a corpus to ``out_dir`` (PGM images and masks, manifest.csv, rig.json)."""
    rig = rig or LightRig.symmetric()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    total_clamps = 0
    for item in plan_corpus(n_bonafide, n_attack, params, seed, n_clear):
        sample = render_item(item, rig, params)
        total_clamps += sample.clamp_count
        sid = item.sample_id
        paths = [out / f"{sid}_{suffix}.pgm" for suffix in ("L", "R", "mL", "mR")]
        save_gray(sample.pair.left, paths[0])
        save_gray(sample.pair.right, paths[1])
        save_mask(sample.pair.mask_left, paths[2])
        save_mask(sample.pair.mask_right, paths[3])
        entries.append(ManifestEntry(sid, *paths, item.geometry, item.label, item.tags))
    manifest = DatasetManifest(tuple(entries))
    write_manifest(manifest, out / "manifest.csv")
    save_rig(rig, out / "rig.json")
    if total_clamps:
        log.info("%d rendered intensities were clamped to [0, 1]", total_clamps)
    return manifest


def manifest_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
