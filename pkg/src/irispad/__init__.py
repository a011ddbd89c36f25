"""Iris presentation attack detection from photometric-stereo normals."""

from .errors import IrisPadError
from .imageio import BinaryMask, DatasetManifest, GrayImage, ImagePair, Label, load_gray, load_manifest, load_mask
from .roi import AnnulusGeometry, SectorGrid, annulus_mask, combined_mask, sector_index
from .score import PadScore, base_score, mean_normal, weighted_score
from .stereo import LightRig, NormalField, estimate_normals, estimate_normals_multi, solve_pixel

__version__ = "0.1.0"
