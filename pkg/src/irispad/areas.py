"""Local-area training: per-sector separability and greedy sector selection.

The annulus of every training sample is cut into ``r`` radial by ``t``
angular sectors.  Each sector gets a base PAD score per sample, and the
class-conditional moments of those scores give a d' value per sector.
Sectors are then added one at a time in order of decreasing |d'|; after
each addition the weighted PAD score of every training sample is
recomputed and the d' between the two classes of weighted scores is
recorded.  The prefix with the best d' is kept.

Training evaluates the weighted score many times, so it works from
per-sector sufficient statistics (pixel count, sum of normals, sum of outer
products) instead of revisiting pixels.  ``weighted_scores_from_features``
is algebraically identical to :func:`irispad.score.weighted_score`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import AllSectorsDegenerate, DimensionMismatch, SingleClassDataset
from .roi import GEOMETRY_CONVENTION, AnnulusGeometry, SectorGrid, sector_map
from .score import _base_from_normals, _included

DEFAULT_GRIDS = ((4, 10), (5, 10), (4, 15), (5, 15))


def dprime(mu_a: float, sigma_a: float, mu_c: float, sigma_c: float) -> float:
    """Separability of authentic vs. contact-lens score distributions.

    ``(mu_a - mu_c) / sqrt(0.5 * (sigma_a**2 + sigma_c**2))``.  When both
    deviations are zero the result is +/-inf following the sign of the mean
    difference, or 0 when the means coincide.
    """
    diff = mu_a - mu_c
    pooled = 0.5 * (sigma_a * sigma_a + sigma_c * sigma_c)
    if pooled <= 0.0:
        if diff == 0.0:
            return 0.0
        return math.copysign(math.inf, diff)
    return diff / math.sqrt(pooled)


def _moments(values: np.ndarray) -> Tuple[float, float]:
    values = values[np.isfinite(values)]
    if values.size == 0:
        return math.nan, math.nan
    mu = math.fsum(values.tolist()) / values.size
    var = math.fsum(((values - mu) ** 2).tolist()) / values.size
    return mu, math.sqrt(var)


def _is_attack(labels) -> np.ndarray:
    out = []
    for lab in labels:
        value = getattr(lab, "value", lab)
        if value in (True, 1, "attack"):
            out.append(True)
        elif value in (False, 0, "bonafide"):
            out.append(False)
        else:
            raise ValueError(f"training labels must be bonafide or attack, got {lab!r}")
    return np.array(out, dtype=bool)


def class_dprime(scores, is_attack) -> float:
    """d' between the bona fide and attack entries of ``scores`` (NaN entries skipped)."""
    scores = np.asarray(scores, dtype=np.float64)
    is_attack = np.asarray(is_attack, dtype=bool)
    mu_a, s_a = _moments(scores[~is_attack])
    mu_c, s_c = _moments(scores[is_attack])
    if math.isnan(mu_a) or math.isnan(mu_c):
        return math.nan
    return dprime(mu_a, s_a, mu_c, s_c)


# --------------------------------------------------------------------------
# per-sample sector statistics


@dataclass(frozen=True, eq=False)
class SectorFeatures:
    """Sector statistics of a single sample on one (r, t) grid."""

    r: int
    t: int
    scores: np.ndarray      # (rt,) base score per sector, NaN if < 2 pixels
    counts: np.ndarray      # (rt,)
    sums: np.ndarray        # (rt, 3)
    outer: np.ndarray       # (rt, 3, 3)
    base: float             # base score over the whole usable annulus


def sector_features(normal_field, mask, geometry: AnnulusGeometry, r: int, t: int) -> SectorFeatures:
    grid = SectorGrid(geometry, r, t)
    sel = _included(normal_field, mask)
    ids = sector_map(grid, normal_field.width, normal_field.height)
    sel &= ids >= 0
    ids = ids[sel]
    normals = normal_field.normals[sel]
    order = np.argsort(ids, kind="stable")
    ids, normals = ids[order], normals[order]
    n_sec = r * t
    counts = np.bincount(ids, minlength=n_sec).astype(np.int64)
    scores = np.full(n_sec, np.nan)
    sums = np.zeros((n_sec, 3))
    outer = np.zeros((n_sec, 3, 3))
    bounds = np.concatenate([[0], np.cumsum(counts)])
    for s in range(n_sec):
        block = normals[bounds[s]:bounds[s + 1]]
        if block.shape[0] == 0:
            continue
        sums[s] = block.sum(axis=0)
        outer[s] = block.T @ block
        if block.shape[0] >= 2:
            scores[s] = _base_from_normals(block)
    base = _base_from_normals(normals) if normals.shape[0] >= 2 else math.nan
    return SectorFeatures(r, t, scores, counts, sums, outer, base)


@dataclass(frozen=True, eq=False)
class FeatureStack:
    """Sector statistics of many samples on one grid, stacked along axis 0."""

    r: int
    t: int
    scores: np.ndarray      # (S, rt)
    counts: np.ndarray      # (S, rt)
    sums: np.ndarray        # (S, rt, 3)
    outer: np.ndarray       # (S, rt, 3, 3)
    base: np.ndarray        # (S,)

    @classmethod
    def from_features(cls, feats: Sequence[SectorFeatures]) -> "FeatureStack":
        if not feats:
            raise SingleClassDataset("no training samples")
        r, t = feats[0].r, feats[0].t
        if any((f.r, f.t) != (r, t) for f in feats):
            raise DimensionMismatch("features computed on different grids")
        return cls(
            r, t,
            np.stack([f.scores for f in feats]),
            np.stack([f.counts for f in feats]),
            np.stack([f.sums for f in feats]),
            np.stack([f.outer for f in feats]),
            np.array([f.base for f in feats]),
        )

    def __len__(self):
        return self.scores.shape[0]

    def take(self, rows) -> "FeatureStack":
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureStack(self.r, self.t, self.scores[rows], self.counts[rows],
                            self.sums[rows], self.outer[rows], self.base[rows])


def sector_scores(dataset: Iterable, r: int, t: int) -> np.ndarray:
    """Per-sample, per-sector base scores; NaN marks a sector with < 2 usable pixels.

    ``dataset`` yields ``(normal_field, mask, geometry)`` triples.
    """
    rows = [sector_features(f, m, g, r, t).scores for f, m, g in dataset]
    if not rows:
        return np.zeros((0, r * t))
    return np.stack(rows)


def weighted_scores_from_features(stack: FeatureStack, weights) -> np.ndarray:
    """Weighted PAD score of every sample in ``stack``; NaN where no weighted pixel exists."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    on = w > 0
    cnt = stack.counts[:, on].astype(np.float64)
    sums = stack.sums[:, on]
    outer = stack.outer[:, on]
    w = w[on]
    n_total = cnt.sum(axis=1)
    ok = n_total > 0
    nbar = sums.sum(axis=1) / np.where(ok, n_total, 1.0)[:, None]
    # l = ||n - nbar||^2 = a - 2 n.nbar, with a = 1 + ||nbar||^2 for unit n
    a = 1.0 + np.sum(nbar * nbar, axis=1)
    s_dot = np.einsum("srk,sk->sr", sums, nbar)
    q_form = np.einsum("sk,srkl,sl->sr", nbar, outer, nbar)
    wsum = cnt @ w
    sum_l = (cnt * a[:, None] - 2.0 * s_dot) @ w
    sum_l2 = (cnt * (a * a)[:, None] - 4.0 * a[:, None] * s_dot + 4.0 * q_form) @ w
    safe = np.where(wsum > 0, wsum, 1.0)
    lw = sum_l / safe
    out = np.maximum(sum_l2 / safe - lw * lw, 0.0)
    return np.where(ok & (wsum > 0), out, np.nan)


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True, eq=False)
class SectorStats:
    mu_authentic: np.ndarray
    sigma_authentic: np.ndarray
    mu_contact: np.ndarray
    sigma_contact: np.ndarray
    n_authentic: np.ndarray
    n_contact: np.ndarray
    dprime: np.ndarray

    def recomputed_dprime(self) -> np.ndarray:
        return np.array([
            dprime(a, sa, c, sc) if n_a and n_c else math.nan
            for a, sa, c, sc, n_a, n_c in zip(self.mu_authentic, self.sigma_authentic, self.mu_contact,
                                             self.sigma_contact, self.n_authentic, self.n_contact)
        ])


def sector_stats(scores, labels) -> SectorStats:
    """Class-conditional moments and d' per sector; missing cells are skipped per sector."""
    scores = np.asarray(scores, dtype=np.float64)
    attack = _is_attack(labels)
    n_sec = scores.shape[1]
    cols = {k: np.full(n_sec, np.nan) for k in ("ma", "sa", "mc", "sc")}
    n_a = np.zeros(n_sec, dtype=np.int64)
    n_c = np.zeros(n_sec, dtype=np.int64)
    for s in range(n_sec):
        col = scores[:, s]
        auth, cont = col[~attack], col[attack]
        n_a[s] = int(np.isfinite(auth).sum())
        n_c[s] = int(np.isfinite(cont).sum())
        cols["ma"][s], cols["sa"][s] = _moments(auth)
        cols["mc"][s], cols["sc"][s] = _moments(cont)
    stats = SectorStats(cols["ma"], cols["sa"], cols["mc"], cols["sc"], n_a, n_c, np.zeros(n_sec))
    object.__setattr__(stats, "dprime", stats.recomputed_dprime())
    return stats


def _rank_key(value: float, signed: bool) -> float:
    if math.isnan(value):
        return -math.inf
    return value if signed else abs(value)


def selection_weights(dprimes: Sequence[float]) -> np.ndarray:
    """Positive weights from selected sectors' d' values.

    The weight is |d'|; an infinite d' (both classes constant) is weighted
    like the largest finite magnitude among the selection, or 1 if there is
    none.
    """
    mags = np.abs(np.asarray(dprimes, dtype=np.float64))
    finite = mags[np.isfinite(mags)]
    cap = float(finite.max()) if finite.size else 1.0
    return np.where(np.isfinite(mags), mags, cap)


def _enc(v: float):
    if math.isnan(v):
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def _dec(v) -> float:
    return math.nan if v is None else float(v)


@dataclass(frozen=True)
class AreaModel:
    r: int
    t: int
    selected: Tuple[Tuple[int, int, float], ...]   # (i, j, d') in rank order
    history: Tuple[Tuple[int, float], ...]         # (p, global d') for p = 1..rt
    ranking: str = "absolute"
    base_dprime: float = math.nan
    geometry_convention: str = GEOMETRY_CONVENTION
    significance: Tuple[float, ...] = ()           # signed d' of every sector

    @property
    def p(self) -> int:
        return len(self.selected)

    @property
    def global_dprime(self) -> float:
        return self.history[self.p - 1][1]

    @property
    def selected_ids(self) -> List[int]:
        return [i * self.t + j for i, j, _ in self.selected]

    def weights(self) -> np.ndarray:
        """Per-sector weight vector (length rt): |d'| on selected sectors, 0 elsewhere."""
        w = np.zeros(self.r * self.t)
        w[self.selected_ids] = selection_weights([d for _, _, d in self.selected])
        return w

    def grid(self, geometry: AnnulusGeometry) -> SectorGrid:
        return SectorGrid(geometry, self.r, self.t)

    def to_dict(self) -> dict:
        """JSON-ready dict; NaN becomes null and infinities the strings "inf"/"-inf"."""
        return {
            "r": self.r,
            "t": self.t,
            "geometry_convention": self.geometry_convention,
            "ranking": self.ranking,
            "selected": [{"i": i, "j": j, "dprime": _enc(d)} for i, j, d in self.selected],
            "history": [[p, _enc(d)] for p, d in self.history],
            "base_dprime": _enc(self.base_dprime),
            "significance": [_enc(v) for v in self.significance],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "AreaModel":
        return cls(
            r=int(doc["r"]),
            t=int(doc["t"]),
            selected=tuple((int(s["i"]), int(s["j"]), _dec(s["dprime"])) for s in doc["selected"]),
            history=tuple((int(p), _dec(d)) for p, d in doc["history"]),
            ranking=doc.get("ranking", "absolute"),
            base_dprime=_dec(doc.get("base_dprime")),
            geometry_convention=doc.get("geometry_convention", GEOMETRY_CONVENTION),
            significance=tuple(_dec(v) for v in doc.get("significance", ())),
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "AreaModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_stack(data, r, t) -> FeatureStack:
    if isinstance(data, FeatureStack):
        if (data.r, data.t) != (r, t):
            raise DimensionMismatch(f"feature stack is for grid {data.r}x{data.t}, not {r}x{t}")
        return data
    return FeatureStack.from_features([sector_features(f, m, g, r, t) for f, m, g in data])


def train_area_model(data, labels, r: int, t: int, *, signed: bool = False) -> AreaModel:
    """Greedy selection of the most separating sectors.

    ``data`` is either a :class:`FeatureStack` for grid (r, t) or a sequence
    of ``(normal_field, mask, geometry)`` triples.  With ``signed=True``
    sectors are ranked by signed d' instead of |d'|.
    """
    attack = _is_attack(labels)
    if len(attack) == 0 or attack.all() or not attack.any():
        raise SingleClassDataset("training needs both bona fide and attack samples")
    stack = _as_stack(data, r, t)
    if len(stack) != len(attack):
        raise DimensionMismatch(f"{len(stack)} samples but {len(attack)} labels")
    stats = sector_stats(stack.scores, attack)
    d = stats.dprime
    keys = np.array([_rank_key(v, signed) for v in d])
    usable = ~np.isnan(d) & (d != 0)
    if not usable.any():
        raise AllSectorsDegenerate("no sector separates the classes")
    # rank usable sectors first, best key first, ties by sector id
    order = sorted(range(len(d)), key=lambda s: (not usable[s], -keys[s], s))
    n_usable = int(usable.sum())

    weights = np.zeros(len(d))
    history = []
    for p in range(1, len(d) + 1):
        top = order[:min(p, n_usable)]
        weights[:] = 0.0
        weights[top] = selection_weights(d[top])
        q = weighted_scores_from_features(stack, weights)
        history.append((p, class_dprime(q, attack)))

    best_p, best_key = 1, -math.inf
    for p, g in history[:n_usable]:
        key = _rank_key(g, signed)
        if key > best_key:
            best_p, best_key = p, key
    sel = order[:best_p]
    return AreaModel(
        r=r,
        t=t,
        selected=tuple((s // t, s % t, float(d[s])) for s in sel),
        history=tuple(history),
        ranking="signed" if signed else "absolute",
        base_dprime=class_dprime(stack.base, attack),
        significance=tuple(float(v) for v in d),
    )


def grid_search(data_by_grid, labels, grids=DEFAULT_GRIDS, *, signed: bool = False) -> AreaModel:
    """Train one model per (r, t) and keep the one with the best global d'.

    ``data_by_grid`` is either a sequence of ``(field, mask, geometry)``
    triples shared by all grids or a mapping ``(r, t) -> FeatureStack``.
    Ties go to the smaller ``r * t``, then the smaller ``r``.
    """
    if not isinstance(data_by_grid, dict):
        data_by_grid = list(data_by_grid)
    if len(labels) == 0:
        raise SingleClassDataset("empty training set")
    best: Optional[AreaModel] = None
    best_key = -math.inf
    for r, t in sorted(grids, key=lambda g: (g[0] * g[1], g[0])):
        data = data_by_grid[(r, t)] if isinstance(data_by_grid, dict) else data_by_grid
        model = train_area_model(data, labels, r, t, signed=signed)
        key = _rank_key(model.global_dprime, signed)
        if best is None or key > best_key:
            best, best_key = model, key
    return best


def score_with_model(model: AreaModel, normal_field, mask, geometry: AnnulusGeometry):
    from .score import weighted_score

    return weighted_score(normal_field, mask, model.grid(geometry), model.weights())
