"""Glue between I/O, stereo, ROI and scoring: one image pair in, one PAD score out."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .imageio import ImagePair, Label, ManifestEntry, load_pair
from .roi import AnnulusGeometry, annulus_mask, combined_mask
from .score import PadScore, base_score, weighted_score
from .stereo import LightRig, NormalField, estimate_normals


@dataclass(frozen=True, eq=False)
class PreparedSample:
    """Normals and the usable-pixel mask of one sample, ready for scoring."""

    sample_id: str
    label: Label
    tags: Tuple[str, ...]
    field: NormalField
    mask: np.ndarray
    geometry: Optional[AnnulusGeometry]

    @property
    def is_attack(self) -> bool:
        return self.label is Label.ATTACK


def region_of_interest(pair: ImagePair, geometry: Optional[AnnulusGeometry]) -> np.ndarray:
    """Both occlusion masks intersected, then clipped to the annulus when known."""
    bits = combined_mask(pair).bits
    if geometry is not None:
        h, w = pair.shape
        bits = bits & annulus_mask(geometry, w, h).bits
    return bits


def prepare_pair(pair: ImagePair, rig: LightRig, geometry: Optional[AnnulusGeometry] = None,
                 tags: Tuple[str, ...] = ()) -> PreparedSample:
    field = estimate_normals(pair, rig)
    return PreparedSample(pair.sample_id, pair.label, tuple(tags), field,
                          region_of_interest(pair, geometry), geometry)


def prepare_entry(entry: ManifestEntry, rig: LightRig) -> PreparedSample:
    return prepare_pair(load_pair(entry), rig, entry.annulus, entry.tags)


def score_prepared(sample: PreparedSample, model=None) -> PadScore:
    """Base score, or the weighted score when an area model is given."""
    if model is None:
        return base_score(sample.field, sample.mask)
    if sample.geometry is None:
        raise ValueError(f"sample {sample.sample_id!r} has no annulus geometry; weighted scoring needs one")
    return weighted_score(sample.field, sample.mask, model.grid(sample.geometry), model.weights())


def _prepare_job(args):
    entry, rig = args
    return prepare_entry(entry, rig)


def worker_count(jobs: int) -> int:
    return max(1, os.cpu_count() or 1) if jobs == 0 else max(1, jobs)


def prepare_entries(entries, rig: LightRig, jobs: int = 1):
    """Prepare manifest entries, in manifest order, with up to ``jobs`` processes (0 = auto)."""
    entries = list(entries)
    n = worker_count(jobs)
    if n == 1 or len(entries) < 2:
        return [prepare_entry(e, rig) for e in entries]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_prepare_job, [(e, rig) for e in entries], chunksize=4))
