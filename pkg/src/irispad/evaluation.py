"""Evaluation harness: splits, EER thresholds, APCER/BPCER, ROC/AUC, cross-validation.

Scores are attack-positive: a sample is declared an attack when its score is
strictly greater than the threshold.

Candidate thresholds for a score set are the largest score (nothing is
declared an attack), the midpoints between consecutive distinct scores, and
the float just below the smallest score (everything is an attack).  ROC
points and the EER search both use this candidate list, so the ROC point at
a learned threshold is exactly ``(bpcer, 1 - apcer)``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .areas import DEFAULT_GRIDS, FeatureStack, grid_search, sector_features, weighted_scores_from_features
from .errors import InsufficientData, SingleClass, TagMismatch
from .imageio import Label

REGULAR = "textured-regular"
IRREGULAR = "textured-irregular"
AUTHENTIC = "none"
CLEAR = "clear"


class Scenario(str, enum.Enum):
    TRAIN_REGULAR_TEST_IRREGULAR = "a"
    TRAIN_IRREGULAR_TEST_REGULAR = "b"
    MIXED_CROSS_VAL = "c"
    CLEAR_LENS_TEST = "clear"
    CUSTOM = "custom"


class Method(str, enum.Enum):
    BASE = "base"
    WEIGHTED_AREAS = "weighted"


def _attack_flags(labels) -> np.ndarray:
    out = np.empty(len(labels), dtype=bool)
    for k, lab in enumerate(labels):
        value = getattr(lab, "value", lab)
        if value in (True, 1, "attack"):
            out[k] = True
        elif value in (False, 0, "bonafide"):
            out[k] = False
        else:
            raise ValueError(f"labels must be bonafide or attack, got {lab!r}")
    return out


def _split_classes(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    attack = _attack_flags(labels)
    if scores.shape != attack.shape:
        raise ValueError("scores and labels differ in length")
    return scores[attack], scores[~attack]


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float


def candidate_thresholds(scores) -> np.ndarray:
    """Decision thresholds in descending order (see module docstring)."""
    u = np.unique(np.asarray(scores, dtype=np.float64))
    if u.size == 0:
        return u
    lower, upper = u[:-1], u[1:]
    mids = lower + (upper - lower) / 2.0
    # adjacent floats: the midpoint may round onto the upper score
    mids = np.where(mids >= upper, lower, mids)
    below = np.nextafter(u[0], -np.inf)
    return np.concatenate([[u[-1]], mids[::-1], [below]])


def _counts_above(sorted_scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    return sorted_scores.size - np.searchsorted(sorted_scores, thresholds, side="right")


def roc_auc(scores, labels) -> Tuple[List[RocPoint], float]:
    """ROC over all candidate thresholds and its trapezoidal AUC.

    Ties collapse into one step, so the AUC equals
    P(attack > bona fide) + 0.5 * P(attack == bona fide) exactly.
    """
    att, bf = _split_classes(scores, labels)
    if att.size == 0 or bf.size == 0:
        raise SingleClass("ROC needs both attack and bona fide scores")
    thresholds = candidate_thresholds(np.concatenate([att, bf]))
    tp = _counts_above(np.sort(att), thresholds)
    fp = _counts_above(np.sort(bf), thresholds)
    area2 = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    auc = area2 / (2 * att.size * bf.size)
    points = [RocPoint(f / bf.size, t / att.size, float(th)) for f, t, th in zip(fp, tp, thresholds)]
    return points, auc


def eer_threshold(scores, labels) -> Tuple[float, float]:
    """Threshold where APCER and BPCER meet on ``scores``; returns ``(threshold, eer)``.

    Among candidate thresholds the one minimising |APCER - BPCER| wins, then
    the one with lower BPCER, then the lower threshold.
    """
    att, bf = _split_classes(scores, labels)
    if att.size == 0 or bf.size == 0:
        raise SingleClass("EER needs both attack and bona fide scores")
    thresholds = candidate_thresholds(np.concatenate([att, bf]))
    n_a, n_b = att.size, bf.size
    miss = n_a - _counts_above(np.sort(att), thresholds)   # attacks <= threshold
    false_alarm = _counts_above(np.sort(bf), thresholds)   # bona fide > threshold
    gap = np.abs(miss * n_b - false_alarm * n_a)           # |APCER - BPCER| * n_a * n_b
    best = min(range(len(thresholds)), key=lambda k: (gap[k], false_alarm[k], thresholds[k]))
    eer = (miss[best] / n_a + false_alarm[best] / n_b) / 2.0
    return float(thresholds[best]), float(eer)


def apcer_bpcer(scores, labels, threshold: float) -> Tuple[Optional[float], Optional[float], float]:
    """``(apcer, bpcer, accuracy)`` at ``threshold``; a rate is None when its class is absent."""
    att, bf = _split_classes(scores, labels)
    if att.size + bf.size == 0:
        raise InsufficientData("no scores")
    missed = int(np.count_nonzero(att <= threshold))
    false_alarm = int(np.count_nonzero(bf > threshold))
    apcer = missed / att.size if att.size else None
    bpcer = false_alarm / bf.size if bf.size else None
    accuracy = (att.size + bf.size - missed - false_alarm) / (att.size + bf.size)
    return apcer, bpcer, accuracy


# --------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    scenario: Scenario
    train_filter: Tuple[str, ...] = ()
    test_filter: Tuple[str, ...] = ()
    folds: int = 10
    seed: int = 0
    classic_kfold: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if self.folds < 1:
            raise ValueError("folds must be >= 1")


@dataclass(frozen=True)
class Fold:
    index: int
    train: Tuple[str, ...]   # may repeat ids (sampling with replacement)
    test: Tuple[str, ...]


@dataclass(frozen=True)
class SampleInfo:
    sample_id: str
    label: Label
    tags: Tuple[str, ...]


def _with_tag(samples, tag) -> List[SampleInfo]:
    return [s for s in samples if tag in s.tags]


def _fold_rngs(seed: int, n: int) -> List[np.random.Generator]:
    children = np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def _ids(samples) -> Tuple[str, ...]:
    return tuple(s.sample_id for s in samples)


def _require(group, name):
    if not group:
        raise TagMismatch(f"no samples tagged {name!r}")


def _transfer_split(samples, spec: SplitSpec, train_tag, test_tag) -> List[Fold]:
    train_att = [s for s in _with_tag(samples, train_tag) if s.label is Label.ATTACK]
    test_att = [s for s in _with_tag(samples, test_tag) if s.label is Label.ATTACK]
    authentic = [s for s in _with_tag(samples, AUTHENTIC) if s.label is Label.BONAFIDE]
    _require(train_att, train_tag)
    _require(test_att, test_tag)
    _require(authentic, AUTHENTIC)
    # authentic eyes split in the same proportion as the two attack groups
    n_train = int(round(len(authentic) * len(train_att) / (len(train_att) + len(test_att))))
    n_train = min(max(n_train, 1), len(authentic) - 1) if len(authentic) > 1 else 1
    rng = _fold_rngs(spec.seed, 1)[0]
    picked = set(rng.choice(len(authentic), size=n_train, replace=False).tolist())
    train_bf = [s for k, s in enumerate(authentic) if k in picked]
    test_bf = [s for k, s in enumerate(authentic) if k not in picked]
    return [Fold(0, _ids(train_att + train_bf), _ids(test_att + test_bf))]


def _pool(samples):
    attacks = [s for s in samples if s.label is Label.ATTACK and ({REGULAR, IRREGULAR} & set(s.tags))]
    authentic = [s for s in samples if s.label is Label.BONAFIDE and AUTHENTIC in s.tags]
    if not attacks:
        raise TagMismatch(f"no attack samples tagged {REGULAR!r} or {IRREGULAR!r}")
    _require(authentic, AUTHENTIC)
    return attacks + authentic


def _cross_val_split(samples, spec: SplitSpec) -> List[Fold]:
    pool = _pool(samples)
    clear = [s for s in samples if CLEAR in s.tags] if spec.scenario is Scenario.CLEAR_LENS_TEST else []
    if spec.scenario is Scenario.CLEAR_LENS_TEST:
        _require(clear, CLEAR)
    folds = []
    if spec.classic_kfold:
        if spec.folds > len(pool):
            raise InsufficientData(f"{spec.folds} folds requested but the pool has {len(pool)} samples")
        order = _fold_rngs(spec.seed, 1)[0].permutation(len(pool))
        for f, part in enumerate(np.array_split(order, spec.folds)):
            held = set(part.tolist())
            train = [pool[k] for k in order if k not in held]
            test = [pool[k] for k in part]
            if spec.scenario is Scenario.CLEAR_LENS_TEST:
                test = [s for s in test if s.label is Label.ATTACK] + clear
            folds.append(Fold(f, _ids(train), _ids(test)))
        return folds
    for f, rng in enumerate(_fold_rngs(spec.seed, spec.folds)):
        drawn = rng.integers(0, len(pool), size=len(pool))
        train = [pool[k] for k in drawn]
        used = set(drawn.tolist())
        unused = [s for k, s in enumerate(pool) if k not in used]
        if spec.scenario is Scenario.CLEAR_LENS_TEST:
            test = [s for s in unused if s.label is Label.ATTACK] + clear
        else:
            test = unused
        folds.append(Fold(f, _ids(train), _ids(test)))
    return folds


def _custom_split(samples, spec: SplitSpec) -> List[Fold]:
    if not spec.train_filter or not spec.test_filter:
        raise TagMismatch("custom scenario needs both train and test tag filters")
    train = [s for s in samples if set(spec.train_filter) & set(s.tags)]
    train_ids = set(_ids(train))
    test = [s for s in samples if set(spec.test_filter) & set(s.tags) and s.sample_id not in train_ids]
    if not train:
        raise TagMismatch(f"no samples match train tags {spec.train_filter}")
    if not test:
        raise TagMismatch(f"no samples match test tags {spec.test_filter}")
    return [Fold(0, _ids(train), _ids(test))]


def build_splits(samples: Sequence[SampleInfo], spec: SplitSpec) -> List[Fold]:
    """Train/test folds for ``spec`` over samples described by id, label and tags."""
    samples = [s for s in samples if s.label is not Label.UNKNOWN]
    sc = spec.scenario
    if sc is Scenario.TRAIN_REGULAR_TEST_IRREGULAR:
        return _transfer_split(samples, spec, REGULAR, IRREGULAR)
    if sc is Scenario.TRAIN_IRREGULAR_TEST_REGULAR:
        return _transfer_split(samples, spec, IRREGULAR, REGULAR)
    if sc in (Scenario.MIXED_CROSS_VAL, Scenario.CLEAR_LENS_TEST):
        return _cross_val_split(samples, spec)
    return _custom_split(samples, spec)


# --------------------------------------------------------------------------
# reports


@dataclass
class FoldReport:
    fold: int
    n_train: int
    n_train_unique: int
    n_test: int
    threshold: float
    eer: float
    apcer: Optional[float]
    bpcer: Optional[float]
    accuracy: float
    auc: Optional[float]
    grid: Optional[Tuple[int, int]] = None
    n_areas: Optional[int] = None


@dataclass
class EvalReport:
    scenario: str
    method: str
    seed: int
    apcer: Optional[float]
    bpcer: Optional[float]
    accuracy: float
    auc: Optional[float]
    eer: float
    threshold: float
    roc: List[RocPoint] = field(default_factory=list)
    per_fold: Optional[List[FoldReport]] = None
    fold_stats: Optional[Dict[str, Dict[str, float]]] = None

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def box_stats(values) -> Dict[str, float]:
    """Mean, median, quartiles, extremes and notch half-width of ``values``."""
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return {}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {
        "n": int(v.size),
        "mean": float(math.fsum(v.tolist()) / v.size),
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "min": float(v.min()),
        "max": float(v.max()),
        "notch": float(1.57 * (q3 - q1) / math.sqrt(v.size)),
    }


def _mean_or_none(values):
    v = [x for x in values if x is not None]
    return math.fsum(v) / len(v) if v else None


# --------------------------------------------------------------------------
# running scenarios


class ScoreTable:
    """Scores of prepared samples, computed once and reused across folds."""

    def __init__(self, samples, method: Method, grids=DEFAULT_GRIDS, signed: bool = False):
        self.samples = list(samples)
        self.method = Method(method)
        self.grids = tuple(grids)
        self.signed = signed
        self.index = {s.sample_id: k for k, s in enumerate(self.samples)}
        self.attack = np.array([s.is_attack for s in self.samples], dtype=bool)
        self._stacks: Dict[Tuple[int, int], FeatureStack] = {}
        self._base: Optional[np.ndarray] = None

    def rows(self, ids) -> np.ndarray:
        return np.array([self.index[i] for i in ids], dtype=np.int64)

    def stack(self, grid) -> FeatureStack:
        if grid not in self._stacks:
            missing = [s.sample_id for s in self.samples if s.geometry is None]
            if missing:
                raise InsufficientData(f"weighted areas need annulus geometry; missing for {missing[:5]}")
            r, t = grid
            self._stacks[grid] = FeatureStack.from_features(
                [sector_features(s.field, s.mask, s.geometry, r, t) for s in self.samples])
        return self._stacks[grid]

    def base_scores(self) -> np.ndarray:
        if self._base is None:
            from .score import base_score

            self._base = np.array([base_score(s.field, s.mask).value for s in self.samples])
        return self._base

    def fold_scores(self, fold: Fold):
        """Train and test scores for ``fold`` plus the trained area model (or None)."""
        train_rows, test_rows = self.rows(fold.train), self.rows(fold.test)
        if self.method is Method.BASE:
            scores = self.base_scores()
            return scores[train_rows], scores[test_rows], None
        stacks = {g: self.stack(g).take(train_rows) for g in self.grids}
        model = grid_search(stacks, self.attack[train_rows], self.grids, signed=self.signed)
        w = model.weights()
        full = self.stack((model.r, model.t))
        return (weighted_scores_from_features(stacks[(model.r, model.t)], w),
                weighted_scores_from_features(full.take(test_rows), w), model)


def _evaluate_fold(table: ScoreTable, fold: Fold) -> Tuple[FoldReport, np.ndarray, np.ndarray]:
    train_rows, test_rows = table.rows(fold.train), table.rows(fold.test)
    y_train, y_test = table.attack[train_rows], table.attack[test_rows]
    if y_train.all() or not y_train.any():
        raise InsufficientData(f"fold {fold.index}: training set lacks one class")
    s_train, s_test, model = table.fold_scores(fold)
    ok_train, ok_test = np.isfinite(s_train), np.isfinite(s_test)
    threshold, eer = eer_threshold(s_train[ok_train], y_train[ok_train])
    s_test, y_test = s_test[ok_test], y_test[ok_test]
    if s_test.size == 0:
        raise InsufficientData(f"fold {fold.index}: empty test set")
    apcer, bpcer, acc = apcer_bpcer(s_test, y_test, threshold)
    auc = roc_auc(s_test, y_test)[1] if 0 < y_test.sum() < y_test.size else None
    report = FoldReport(
        fold=fold.index,
        n_train=len(fold.train),
        n_train_unique=len(set(fold.train)),
        n_test=len(fold.test),
        threshold=threshold,
        eer=eer,
        apcer=apcer,
        bpcer=bpcer,
        accuracy=acc,
        auc=auc,
        grid=None if model is None else (model.r, model.t),
        n_areas=None if model is None else model.p,
    )
    return report, s_test, y_test


def evaluate(samples, spec: SplitSpec, method: Method = Method.BASE, *, grids=DEFAULT_GRIDS,
             signed: bool = False) -> EvalReport:
    """Run ``spec`` on already prepared samples (see :mod:`irispad.pipeline`)."""
    samples = [s for s in samples if s.label is not Label.UNKNOWN]
    n_attack = sum(s.is_attack for s in samples)
    if n_attack == 0 or n_attack == len(samples):
        raise SingleClass("evaluation needs both bona fide and attack samples")
    folds = build_splits([SampleInfo(s.sample_id, s.label, s.tags) for s in samples], spec)
    table = ScoreTable(samples, method, grids, signed)
    reports, pooled_s, pooled_y = [], [], []
    for fold in folds:
        rep, s_test, y_test = _evaluate_fold(table, fold)
        reports.append(rep)
        pooled_s.append(s_test)
        pooled_y.append(y_test)
    all_s, all_y = np.concatenate(pooled_s), np.concatenate(pooled_y)
    roc = roc_auc(all_s, all_y)[0] if 0 < all_y.sum() < all_y.size else []
    multi = spec.scenario in (Scenario.MIXED_CROSS_VAL, Scenario.CLEAR_LENS_TEST)
    if not multi:
        r = reports[0]
        return EvalReport(spec.scenario.value, Method(method).value, spec.seed, r.apcer, r.bpcer,
                          r.accuracy, r.auc, r.eer, r.threshold, roc)
    stats = {k: box_stats([getattr(r, k) for r in reports])
             for k in ("accuracy", "apcer", "bpcer", "auc", "eer", "threshold")}
    return EvalReport(
        scenario=spec.scenario.value,
        method=Method(method).value,
        seed=spec.seed,
        apcer=_mean_or_none(r.apcer for r in reports),
        bpcer=_mean_or_none(r.bpcer for r in reports),
        accuracy=_mean_or_none(r.accuracy for r in reports),
        auc=_mean_or_none(r.auc for r in reports),
        eer=_mean_or_none(r.eer for r in reports),
        threshold=_mean_or_none(r.threshold for r in reports),
        roc=roc,
        per_fold=reports,
        fold_stats=stats,
    )


def run_scenario(manifest, spec: SplitSpec, method: Method, rig, *, jobs: int = 1, grids=DEFAULT_GRIDS,
                 signed: bool = False) -> EvalReport:
    """Load, estimate and score every labelled manifest entry, then evaluate ``spec``."""
    from .pipeline import prepare_entries

    entries = [e for e in manifest if e.label is not Label.UNKNOWN]
    if not entries:
        raise InsufficientData("manifest has no labelled samples")
    samples = prepare_entries(entries, rig, jobs=jobs)
    return evaluate(samples, spec, method, grids=grids, signed=signed)


# --------------------------------------------------------------------------
# report files


def write_roc_csv(points: Sequence[RocPoint], path) -> None:
    with open(path, "w") as fh:
        fh.write("fpr,tpr,threshold\n")
        for p in points:
            fh.write(f"{p.fpr!r},{p.tpr!r},{p.threshold!r}\n")


def write_folds_csv(report: EvalReport, path) -> None:
    cols = ["fold", "n_train", "n_train_unique", "n_test", "threshold", "eer", "apcer", "bpcer", "accuracy", "auc"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in report.per_fold or []:
            fh.write(",".join("" if getattr(r, c) is None else repr(getattr(r, c)) for c in cols) + "\n")


def roc_svg(points: Sequence[RocPoint], size: int = 320) -> str:
    pad = 30
    span = size - 2 * pad
    coords = " ".join(f"{pad + p.fpr * span:.2f},{size - pad - p.tpr * span:.2f}" for p in points)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">\n'
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="#888"/>\n'
        f'<line x1="{pad}" y1="{size - pad}" x2="{size - pad}" y2="{pad}" stroke="#ccc" stroke-dasharray="4"/>\n'
        f'<polyline points="{coords}" fill="none" stroke="#c00" stroke-width="2"/>\n'
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="12">false positive rate (BPCER)</text>\n'
        f'<text x="12" y="{size / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 12 {size / 2})">true positive rate (1 - APCER)</text>\n'
        "</svg>\n"
    )
