"""Shared helpers for building test inputs."""

import math

import numpy as np

from irispad.pipeline import prepare_pair
from irispad.stereo import LightRig
from irispad.imageio import Label
from irispad.synth import CorpusParams, SurfaceSpec, generate, plan_corpus, random_geometry, render_item


def prepared_corpus(n_bonafide, n_attack, params=CorpusParams(), seed=0, n_clear=0, rig=None, noise_sigma=None):
    """Render and estimate a corpus in memory (no files)."""
    rig = rig or LightRig.symmetric()
    out = []
    for item in plan_corpus(n_bonafide, n_attack, params, seed, n_clear):
        sample = render_item(item, rig, params, noise_sigma)
        out.append(prepare_pair(sample.pair, rig, item.geometry, item.tags))
    return out


def random_unit(rng, shape):
    v = rng.normal(size=tuple(shape) + (3,))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_pair_rig(rng, min_deg=30.0, max_deg=90.0, max_tilt_deg=60.0):
    """Two lights within ``max_tilt_deg`` of +z, separated by an angle in [min_deg, max_deg]."""
    while True:
        d = random_unit(rng, (2,))
        d[:, 2] = np.abs(d[:, 2])
        if np.any(d[:, 2] < math.cos(math.radians(max_tilt_deg))):
            continue
        sep = math.degrees(math.acos(np.clip(d[0] @ d[1], -1, 1)))
        if min_deg <= sep <= max_deg:
            return LightRig(d)


def planted_sector_corpus(n_per_class, seed, region=(0.5, 0.75, 0.3, 0.4), roughness=(0.01, 0.05), size=128,
                          rig=None):
    """Rendered corpus whose only class difference is lens texture inside ``region``.

    Every sample draws its own iris roughness from ``roughness``, so all
    sectors outside ``region`` carry class-independent noise.
    """
    rig = rig or LightRig.symmetric()
    out = []
    for k in range(2 * n_per_class):
        rng = np.random.default_rng([seed, k])
        attack = k >= n_per_class
        geom = random_geometry(rng, size, size)
        amp = float(rng.uniform(*roughness))
        tex = int(rng.integers(2 ** 63))
        if attack:
            spec = SurfaceSpec.bumpy(tex, opaque_dot_fraction=0.0, region=region, iris_amplitude=amp)
        else:
            spec = SurfaceSpec.flat(tex, bump_amplitude=amp)
        label = Label.ATTACK if attack else Label.BONAFIDE
        sample = generate(spec, geom, rig, size, size, 0.004, label, f"p{k:04d}")
        out.append(prepare_pair(sample.pair, rig, geom))
    return out
