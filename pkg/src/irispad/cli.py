"""Command-line entry point: ``irispad {normals,score,train-areas,eval,synth}``.

Exit codes: 0 success, 1 some samples failed (their rows are marked
``error``), 2 configuration or input error.  Every output file is a pure
function of the inputs and ``--seed``; wall-clock timestamps only go to
``run.log`` in the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import IrisPadError

log = logging.getLogger("irispad")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    rig_path: Optional[str] = None
    manifest_path: Optional[str] = None
    method: str = "base"
    area_model_path: Optional[str] = None
    threshold: Optional[float] = None
    output_dir: str = "."
    seed: int = 0
    parallelism: int = 1

    def __post_init__(self):
        if self.method not in ("base", "weighted"):
            raise ConfigError(f"method must be 'base' or 'weighted', got {self.method!r}")
        if self.parallelism < 0:
            raise ConfigError("parallelism must be >= 0")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**doc)


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {
        "rig_path": getattr(args, "rig", None),
        "manifest_path": getattr(args, "manifest", None),
        "method": getattr(args, "method", None),
        "area_model_path": getattr(args, "area_model", None),
        "threshold": getattr(args, "threshold", None),
        "output_dir": getattr(args, "out", None),
        "seed": getattr(args, "seed", None),
        "parallelism": getattr(args, "jobs", None),
    }
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def _require_file(path, what) -> Path:
    if not path:
        raise ConfigError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} file not found: {p}")
    return p


def _rig(cfg: RunConfig):
    from .stereo import load_rig

    return load_rig(_require_file(cfg.rig_path, "rig"))


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _attach_run_log(out: Path) -> logging.Handler:
    handler = logging.FileHandler(out / "run.log", mode="a")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("irispad").addHandler(handler)
    return handler


# --------------------------------------------------------------------------
# normals


def quiver_svg(field, mask=None, stride: int = 4, scale: float = 3.0) -> str:
    """Arrows of the in-image (x, y) normal components on a ``stride`` lattice."""
    h, w = field.shape
    usable = field.valid if mask is None else field.valid & np.asarray(mask, dtype=bool)
    lines = []
    for y in range(stride // 2, h, stride):
        for x in range(stride // 2, w, stride):
            if not usable[y, x]:
                continue
            nx, ny = field.normals[y, x, 0], field.normals[y, x, 1]
            x0, y0 = x + 0.5, y + 0.5
            lines.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x0 + scale * stride * nx:.2f}" '
                         f'y2="{y0 + scale * stride * ny:.2f}"/>')
    body = "\n".join(lines)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * 4}" height="{h * 4}" viewBox="0 0 {w} {h}">\n'
        f'<rect width="{w}" height="{h}" fill="white"/>\n'
        f'<g stroke="#1a4f8b" stroke-width="0.3" stroke-linecap="round">\n{body}\n</g>\n</svg>\n'
    )


def cmd_normals(args) -> int:
    from .imageio import BinaryMask, ImagePair, load_gray, load_mask, save_gray
    from .pipeline import region_of_interest
    from .stereo import component_images, estimate_normals, save_normal_field

    cfg = _config(args)
    rig = _rig(cfg)
    left = load_gray(_require_file(args.left, "left"))
    right = load_gray(_require_file(args.right, "right"))
    full = BinaryMask(np.ones(left.shape, dtype=bool))
    mask_l = load_mask(args.mask_left) if args.mask_left else full
    mask_r = load_mask(args.mask_right) if args.mask_right else full
    pair = ImagePair(left, right, mask_l, mask_r)
    field = estimate_normals(pair, rig)
    out = _out_dir(cfg)
    save_normal_field(field, out / "normals.nrm")
    for name, img in zip("xyz", component_images(field)):
        save_gray(img, out / f"normal_{name}.pgm")
    (out / "quiver.svg").write_text(quiver_svg(field, region_of_interest(pair, None), args.stride))
    log.info("normals: %d valid pixels of %d", int(field.valid.sum()), field.valid.size)
    return EXIT_OK


# --------------------------------------------------------------------------
# score


def _score_entry(job):
    entry, rig, model = job
    from .pipeline import prepare_entry, score_prepared

    try:
        return score_prepared(prepare_entry(entry, rig), model), None
    except (IrisPadError, ValueError, OSError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def cmd_score(args) -> int:
    from .areas import AreaModel
    from .imageio import load_manifest
    from .pipeline import worker_count

    cfg = _config(args)
    if cfg.method == "weighted" and not cfg.area_model_path:
        raise ConfigError("--method weighted needs --area-model")
    rig = _rig(cfg)
    manifest = load_manifest(_require_file(cfg.manifest_path, "manifest"))
    model = AreaModel.load(_require_file(cfg.area_model_path, "area-model")) if cfg.method == "weighted" else None
    out = _out_dir(cfg)
    _attach_run_log(out)

    jobs = [(e, rig, model) for e in manifest]
    n = worker_count(cfg.parallelism)
    if n > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_score_entry, jobs, chunksize=4))
    else:
        results = [_score_entry(j) for j in jobs]

    header = ["sample_id", "variant", "score", "n_pixels", "label"]
    if cfg.threshold is not None:
        header.append("decision")
    failures = 0
    with open(out / "scores.csv", "w") as fh:
        fh.write(",".join(header) + "\n")
        for entry, (score, err) in zip(manifest, results):
            if score is None:
                failures += 1
                log.warning("sample %s failed: %s", entry.sample_id, err)
                row = [entry.sample_id, cfg.method, "error", "", entry.label.value]
                if cfg.threshold is not None:
                    row.append("error")
            else:
                row = [entry.sample_id, score.variant.value, repr(score.value), str(score.n_pixels),
                       entry.label.value]
                if cfg.threshold is not None:
                    row.append("attack" if score.value > cfg.threshold else "bonafide")
            fh.write(",".join(row) + "\n")
    if failures:
        print(f"warning: {failures} of {len(manifest)} samples failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# --------------------------------------------------------------------------
# train-areas


def significance_raster(model, size: int = 128) -> np.ndarray:
    """|d'| of every sector drawn on a centred annulus, scaled to [0, 255]."""
    from .roi import AnnulusGeometry, SectorGrid, sector_map

    geom = AnnulusGeometry.concentric(size / 2, size / 2, size * 0.15, size * 0.45)
    ids = sector_map(SectorGrid(geom, model.r, model.t), size, size)
    mags = np.nan_to_num(np.abs(np.asarray(model.significance, dtype=np.float64)), nan=0.0, posinf=0.0)
    if mags.size != model.r * model.t:
        mags = model.weights()
    top = mags.max() if mags.size and mags.max() > 0 else 1.0
    values = np.where(ids >= 0, mags[np.maximum(ids, 0)] / top, 0.0)
    return np.round(values * 255).astype(np.uint8)


def _parse_grids(text):
    grids = []
    for part in text.split(","):
        try:
            r, t = part.lower().split("x")
            grids.append((int(r), int(t)))
        except ValueError as exc:
            raise ConfigError(f"bad grid {part!r}, expected RxT") from exc
    return tuple(grids)


def cmd_train_areas(args) -> int:
    from .areas import grid_search
    from .evaluation import ScoreTable
    from .imageio import Label, load_manifest, save_gray
    from .pipeline import prepare_entries

    cfg = _config(args)
    rig = _rig(cfg)
    manifest = load_manifest(_require_file(cfg.manifest_path, "manifest"))
    grids = _parse_grids(args.grids)
    out = _out_dir(cfg)
    _attach_run_log(out)
    entries = [e for e in manifest if e.label is not Label.UNKNOWN]
    samples = prepare_entries(entries, rig, jobs=cfg.parallelism)
    table = ScoreTable(samples, "weighted", grids, args.signed_dprime)
    stacks = {g: table.stack(g) for g in grids} if samples else {}
    model = grid_search(stacks, table.attack, grids, signed=args.signed_dprime)
    model.save(out / "area_model.json")
    save_gray(significance_raster(model), out / "significance.pgm")
    log.info("area model %dx%d, %d sectors, d'=%s (base d'=%s)",
             model.r, model.t, model.p, model.global_dprime, model.base_dprime)
    return EXIT_OK


# --------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    from .evaluation import (Method, SplitSpec, roc_svg, run_scenario, write_folds_csv, write_roc_csv)
    from .imageio import load_manifest

    cfg = _config(args)
    rig = _rig(cfg)
    manifest = load_manifest(_require_file(cfg.manifest_path, "manifest"))
    split = SplitSpec(
        scenario=args.scenario,
        train_filter=tuple(t for t in (args.train_tags or "").split(";") if t),
        test_filter=tuple(t for t in (args.test_tags or "").split(";") if t),
        folds=args.folds,
        seed=cfg.seed,
        classic_kfold=args.classic_kfold,
    )
    out = _out_dir(cfg)
    _attach_run_log(out)
    method = Method.WEIGHTED_AREAS if cfg.method == "weighted" else Method.BASE
    report = run_scenario(manifest, split, method, rig, jobs=cfg.parallelism, signed=args.signed_dprime)
    (out / "report.json").write_text(report.to_json())
    write_roc_csv(report.roc, out / "roc.csv")
    (out / "roc.svg").write_text(roc_svg(report.roc))
    write_folds_csv(report, out / "folds.csv")
    log.info("eval %s/%s: accuracy=%s auc=%s", split.scenario.value, method.value, report.accuracy, report.auc)
    return EXIT_OK


# --------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    from .stereo import LightRig, load_rig
    from .synth import CorpusParams, generate_corpus

    seed = getattr(args, "seed", 0)
    out = getattr(args, "out", None)
    if not out:
        raise ConfigError("--out is required")
    rig_path = getattr(args, "rig", None)
    rig = load_rig(_require_file(rig_path, "rig")) if rig_path else LightRig.symmetric()
    params = CorpusParams(
        width=args.size,
        height=args.size,
        bump_amplitude=args.bump_amp,
        dot_fraction=args.dot_frac,
        noise_sigma=args.noise,
    )
    manifest = generate_corpus(out, args.n_bonafide, args.n_attack, params, seed, rig, n_clear=args.n_clear)
    print(f"wrote {len(manifest)} samples to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--rig", default=argparse.SUPPRESS, help="light rig JSON file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes, 0 = auto")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--config", default=argparse.SUPPRESS, help="RunConfig JSON file")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="irispad", parents=[common],
                                     description="Photometric-stereo iris presentation attack detection")
    parser.add_argument("--version", action="version", version=f"irispad {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("normals", parents=[common], help="estimate normals for one image pair")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--mask-left")
    p.add_argument("--mask-right")
    p.add_argument("--stride", type=int, default=4, help="quiver arrow spacing in pixels")
    p.set_defaults(func=cmd_normals)

    p = sub.add_parser("score", parents=[common], help="score every pair of a manifest")
    p.add_argument("--manifest")
    p.add_argument("--method", choices=["base", "weighted"])
    p.add_argument("--area-model")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train-areas", parents=[common], help="learn weighted local areas")
    p.add_argument("--manifest")
    p.add_argument("--grids", default="4x10,5x10,4x15,5x15", help="comma-separated RxT grids")
    p.add_argument("--signed-dprime", action="store_true", help="rank sectors by signed d' instead of |d'|")
    p.set_defaults(func=cmd_train_areas)

    p = sub.add_parser("eval", parents=[common], help="run an evaluation scenario")
    p.add_argument("--manifest")
    p.add_argument("--scenario", choices=["a", "b", "c", "clear", "custom"], default="c")
    p.add_argument("--method", choices=["base", "weighted"])
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--classic-kfold", action="store_true", help="partition folds instead of resampling")
    p.add_argument("--train-tags", help="';'-separated tags for the custom scenario")
    p.add_argument("--test-tags", help="';'-separated tags for the custom scenario")
    p.add_argument("--signed-dprime", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic corpus")
    p.add_argument("--n-bonafide", type=int, default=20)
    p.add_argument("--n-attack", type=int, default=20)
    p.add_argument("--n-clear", type=int, default=0)
    p.add_argument("--bump-amp", type=float, default=0.3)
    p.add_argument("--dot-frac", type=float, default=0.02)
    p.add_argument("--noise", type=float, default=0.004)
    p.add_argument("--size", type=int, default=128)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    pkg_log = logging.getLogger("irispad")
    handlers_before = list(pkg_log.handlers)
    level_before = pkg_log.level
    # the logger passes INFO on to run.log; the console only shows it with -v
    pkg_log.setLevel(logging.INFO)
    console = logging.StreamHandler()
    console.setLevel(logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    pkg_log.addHandler(console)
    try:
        return args.func(args)
    except (ConfigError, IrisPadError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        for h in list(pkg_log.handlers):
            if h not in handlers_before:
                h.close()
                pkg_log.removeHandler(h)
        pkg_log.setLevel(level_before)


if __name__ == "__main__":
    sys.exit(main())
