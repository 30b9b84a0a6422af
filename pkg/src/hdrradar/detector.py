"""CA-CFAR baseline, probability-map thresholding and truth matching."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import CalibrationError, ParameterError
from .numerics import ComplexFrame


@dataclass(frozen=True)
class CfarConfig:
    train_cells: tuple = (4, 4)   # (Doppler, range) half-widths of the training band
    guard_cells: tuple = (2, 2)
    alpha: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "train_cells", tuple(int(v) for v in self.train_cells))
        object.__setattr__(self, "guard_cells", tuple(int(v) for v in self.guard_cells))
        if not 0.0 < self.alpha <= 0.1:
            raise ParameterError(f"alpha must lie in (0, 0.1], got {self.alpha}")
        if len(self.train_cells) != 2 or len(self.guard_cells) != 2:
            raise ParameterError("train_cells and guard_cells need two entries (Doppler, range)")
        if min(self.train_cells) < 0 or min(self.guard_cells) < 0 or sum(self.train_cells) == 0:
            raise ParameterError("cell counts must be non-negative with some training cells")

    @property
    def full_training_count(self) -> int:
        (td, tr), (gd, gr) = self.train_cells, self.guard_cells
        return (2 * (td + gd) + 1) * (2 * (tr + gr) + 1) - (2 * gd + 1) * (2 * gr + 1)


@dataclass
class DetectionSet:
    cells: list = field(default_factory=list)  # (row, col, score), score descending
    threshold_used: float = math.nan

    def __post_init__(self):
        self.cells = sorted(((int(r), int(c), float(s)) for r, c, s in self.cells),
                            key=lambda t: (-t[2], t[0], t[1]))

    def __len__(self):
        return len(self.cells)

    def as_array(self) -> np.ndarray:
        return np.array([(r, c) for r, c, _ in self.cells], dtype=np.int64).reshape(-1, 2)


def cfar_factor(n_train, alpha: float):
    """Exact CA-CFAR multiplier for exponentially distributed noise power."""
    n = np.asarray(n_train, dtype=np.float64)
    return n * (alpha ** (-1.0 / n) - 1.0)


def _power(rdm) -> np.ndarray:
    data = rdm.data if isinstance(rdm, ComplexFrame) else np.asarray(rdm)
    if np.iscomplexobj(data):
        return data.real ** 2 + data.imag ** 2
    return np.asarray(data, dtype=np.float64)


def cfar_ratio(rdm, cfg: CfarConfig):
    """Per-cell ratio of cell power to training-ring mean, and the per-cell
    threshold it must exceed."""
    p = _power(rdm)
    m, n = p.shape
    (td, tr), (gd, gr) = cfg.train_cells, cfg.guard_cells
    hd, hr = td + gd, tr + gr
    if 2 * hd + 1 > m or 2 * hr + 1 > n:
        raise ParameterError(f"CFAR window {2 * hd + 1}x{2 * hr + 1} larger than frame {m}x{n}")
    total, count = kernels.box_sums(p, hd, hr, gd, gr)
    with np.errstate(divide="ignore", invalid="ignore"):
        est = total / count
        ratio = np.where(est > 0, p / est, 0.0)
        thr = np.where(count > 0, cfar_factor(np.maximum(count, 1), cfg.alpha), np.inf)
    return ratio, thr


def ca_cfar(rdm, cfg: CfarConfig) -> DetectionSet:
    ratio, thr = cfar_ratio(rdm, cfg)
    rows, cols = np.nonzero(ratio > thr)
    scores = ratio[rows, cols]
    return DetectionSet(list(zip(rows, cols, scores)), float(cfar_factor(cfg.full_training_count, cfg.alpha)))


@dataclass(frozen=True)
class ProbThreshold:
    value: float
    degenerate: bool
    n_cells: int
    calibration_rate: float

    def __float__(self):
        return self.value


def calibrate_prob_threshold(prob_maps, alpha: float) -> ProbThreshold:
    """Empirical (1 - alpha) quantile of per-cell probabilities on noise.

    Detection is ``p > threshold``. The threshold is the smallest sample value
    with at most ``floor(alpha * n)`` samples strictly above it. It is flagged
    degenerate when ties leave fewer than half that many samples above it.
    """
    vals = np.concatenate([np.asarray(getattr(p, "data", p)).real.ravel() for p in prob_maps])
    n = vals.size
    if not 0 < alpha <= 0.1:
        raise ParameterError("alpha must lie in (0, 0.1]")
    if n < 100.0 / alpha:
        raise CalibrationError(f"{n} calibration cells < 100/alpha = {100.0 / alpha:.0f}")
    k = int(math.floor(alpha * n))
    v = float(np.partition(vals, n - k - 1)[n - k - 1])
    above = int(np.count_nonzero(vals > v))
    return ProbThreshold(v, above < 0.5 * k, n, above / n)


def detect_prob_map(prob, threshold) -> DetectionSet:
    p = np.asarray(getattr(prob, "data", prob)).real
    thr = float(threshold)
    rows, cols = np.nonzero(p > thr)
    return DetectionSet(list(zip(rows, cols, p[rows, cols])), thr)


# --------------------------------------------------------------------------
# truth matching

@dataclass
class MatchResult:
    hits: list
    false_alarms: int
    non_truth_cells: int
    det_is_hit: list

    @property
    def pfa(self) -> float:
        return self.false_alarms / self.non_truth_cells if self.non_truth_cells else 0.0

    @property
    def pd(self) -> float:
        return float(np.mean(self.hits)) if self.hits else math.nan


def _truth_cells(t) -> list:
    return list(t.peaks.cells()) if hasattr(t, "peaks") else list(t)


def dilated_truth(truth, shape, radius: int = 2) -> np.ndarray:
    m, n = shape
    mask = np.zeros(shape, dtype=bool)
    for t in truth:
        for d, r in _truth_cells(t):
            rows = np.arange(d - radius, d + radius + 1) % m
            mask[rows, max(r - radius, 0):min(r + radius + 1, n)] = True
    return mask


def match_truth(dets: DetectionSet, truth: Sequence, tol: int = 1, shape=(256, 512),
                dilation: int = 2) -> MatchResult:
    """Hits per target (any peak within ``tol`` bins, Chebyshev, Doppler wrapped)
    and false alarms outside the truth mask dilated by ``dilation`` bins."""
    m = shape[0]
    det = dets.as_array()
    hits = []
    det_hit = np.zeros(len(det), dtype=bool)
    for t in truth:
        cells = np.array(_truth_cells(t), dtype=np.int64).reshape(-1, 2)
        if len(det) and len(cells):
            dd = np.abs(det[:, None, 0] - cells[None, :, 0]) % m
            dd = np.minimum(dd, m - dd)
            dr = np.abs(det[:, None, 1] - cells[None, :, 1])
            near = np.maximum(dd, dr) <= tol
            hits.append(bool(near.any()))
            det_hit |= near.any(axis=1)
        else:
            hits.append(False)
    dil = dilated_truth(truth, shape, dilation)
    fa = int(np.count_nonzero(~dil[det[:, 0], det[:, 1]])) if len(det) else 0
    return MatchResult(hits, fa, int(dil.size - np.count_nonzero(dil)), det_hit.tolist())


def cluster_detections(dets: DetectionSet, shape=(256, 512)) -> DetectionSet:
    """Merge 8-connected detections (Doppler wrapped), keeping each cluster's peak."""
    m = shape[0]
    cells = dets.cells
    index = {(r, c): i for i, (r, c, _) in enumerate(cells)}
    parent = list(range(len(cells)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, (r, c, _) in enumerate(cells):
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                j = index.get(((r + dr) % m, c + dc))
                if j is not None:
                    a, b = find(i), find(j)
                    if a != b:
                        parent[max(a, b)] = min(a, b)
    best = {}
    for i, cell in enumerate(cells):
        root = find(i)
        if root not in best or cell[2] > best[root][2]:
            best[root] = cell
    return DetectionSet(list(best.values()), dets.threshold_used)


def write_detections_csv(path, rows) -> None:
    """``rows``: iterable of (frame_id, row, col, score, is_hit)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_id", "row", "col", "score", "is_hit"])
        for fid, r, c, s, h in rows:
            w.writerow([fid, r, c, repr(float(s)), int(bool(h))])


def read_detections_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        return [(int(x["frame_id"]), int(x["row"]), int(x["col"]), float(x["score"]), bool(int(x["is_hit"])))
                for x in rd]
