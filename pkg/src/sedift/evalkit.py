"""Correspondence labeling, ROC/AUC/EER, and reconstruction/matching reports.

Ground truth comes for free on synthetic pairs: both channels share pixel
geometry, so the correct partner of a keypoint at (u, v) sits at (u, v) in
the other modality. A predicted-image keypoint with a reference keypoint
within the acceptance radius is positive-eligible; one without any nearby
reference keypoint can only ever be matched wrongly and counts toward the
negatives.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, require
from . import features as F

SWEEP_THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(1, 21))  # 0.05 .. 1.00
CATEGORY_ORDER = ("objects", "buildings", "nature")
VARIANT_ROWS = ("no-prediction", "regular-l1", "augmented-l1",
                "regular-l1cgan", "augmented-l1cgan")


@dataclass(frozen=True)
class MatchRecord:
    query: int
    train: int
    distance_px: float     # matched reference keypoint vs ground-truth location
    positive_eligible: bool
    correct: bool
    ratio: float


@dataclass(frozen=True)
class CorrespondenceSet:
    records: tuple           # MatchRecord per retained match
    eligibility: np.ndarray  # per predicted keypoint: has an in-radius reference partner
    radius: float

    def __post_init__(self):
        require(self.radius > 0.0, "acceptance radius must be positive")


def label_matches(matches, kp_pred, kp_ref, radius: float) -> CorrespondenceSet:
    """Label each match correct/incorrect and each query keypoint's eligibility."""
    require(radius > 0.0, "acceptance radius must be positive")
    pred_xy = np.array([[kp.u, kp.v] for kp in kp_pred]).reshape(-1, 2)
    ref_xy = np.array([[kp.u, kp.v] for kp in kp_ref]).reshape(-1, 2)
    if len(kp_pred) and len(kp_ref):
        d = np.hypot(pred_xy[:, None, 0] - ref_xy[None, :, 0],
                     pred_xy[:, None, 1] - ref_xy[None, :, 1])
        eligibility = (d.min(axis=1) <= radius)
    else:
        d = np.zeros((len(kp_pred), len(kp_ref)))
        eligibility = np.zeros(len(kp_pred), dtype=bool)
    records = []
    for m in matches:
        dist = float(d[m.query, m.train]) if d.size else math.inf
        records.append(MatchRecord(query=m.query, train=m.train, distance_px=dist,
                                   positive_eligible=bool(eligibility[m.query]),
                                   correct=bool(dist <= radius), ratio=m.ratio))
    return CorrespondenceSet(records=tuple(records), eligibility=eligibility,
                             radius=radius)


def confusion(cs: CorrespondenceSet, ratio_threshold: float = 1.0,
              wrong_match_counts: str = "fn") -> dict:
    """TP/FP/TN/FN over all predicted keypoints at one ratio threshold.

    Eligible keypoints: correctly matched -> TP, wrongly matched -> FN by
    default (configurable to FP), unmatched -> FN. Ineligible keypoints:
    matched -> FP, unmatched -> TN.
    """
    require(wrong_match_counts in ("fn", "fp"), "wrong_match_counts must be 'fn' or 'fp'")
    matched = {}
    for rec in cs.records:
        if rec.ratio < ratio_threshold:
            matched[rec.query] = rec
    tp = fp = tn = fn = 0
    for qi, eligible in enumerate(cs.eligibility):
        rec = matched.get(qi)
        if eligible:
            if rec is None:
                fn += 1
            elif rec.correct:
                tp += 1
            elif wrong_match_counts == "fn":
                fn += 1
            else:
                fp += 1
        else:
            if rec is None:
                tn += 1
            else:
                fp += 1
    return {"tp": tp, "fp": fp, "tn": tn, "fn": fn}


@dataclass(frozen=True)
class RocCurve:
    points: np.ndarray          # (K, 2) rows of (FPR, TPR), endpoints included
    thresholds: tuple = ()
    skipped: tuple = ()         # thresholds dropped for zero denominators

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        require(pts.shape[0] >= 2, "curve needs at least 2 points")
        require(bool(np.all((pts >= -1e-12) & (pts <= 1.0 + 1e-12))),
                "curve values must lie in [0, 1]")
        pts = np.clip(pts, 0.0, 1.0)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)


def roc_from_confusions(entries) -> RocCurve:
    """Build a curve from (threshold, {tp, fp, tn, fn}) sweep entries."""
    require(len(entries) >= 2, "need at least 2 sweep points")
    pts = []
    kept, skipped = [], []
    for threshold, c in entries:
        pos = c["tp"] + c["fn"]
        neg = c["fp"] + c["tn"]
        if pos == 0 or neg == 0:
            skipped.append(threshold)
            continue
        pts.append((c["fp"] / neg, c["tp"] / pos))
        kept.append(threshold)
    pts.append((0.0, 0.0))
    pts.append((1.0, 1.0))
    pts = np.array(sorted(set(pts)))
    return RocCurve(points=pts, thresholds=tuple(kept), skipped=tuple(skipped))


def roc_from_scores(pos_scores, neg_scores, higher_is_better: bool = True) -> RocCurve:
    """Exhaustive-threshold curve for raw scores (rank-statistic ground)."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    require(pos.size > 0 and neg.size > 0, "need scores on both sides")
    sign = 1.0 if higher_is_better else -1.0
    cuts = np.unique(np.concatenate([pos, neg]) * sign)
    pts = [(0.0, 0.0)]
    for cut in cuts[::-1]:  # strictest first
        tpr = float(np.mean(sign * pos >= cut))
        fpr = float(np.mean(sign * neg >= cut))
        pts.append((fpr, tpr))
    pts.append((1.0, 1.0))
    pts = np.array(sorted(set(pts)))
    return RocCurve(points=pts)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the FPR-sorted curve."""
    pts = curve.points[np.lexsort((curve.points[:, 1], curve.points[:, 0]))]
    return float(np.trapezoid(pts[:, 1], pts[:, 0]))


@dataclass(frozen=True)
class EerResult:
    value: float
    crossed: bool  # False when the polyline never meets TPR = 1 - FPR


def eer_info(curve: RocCurve) -> EerResult:
    """FPR where TPR = 1 - FPR, linearly interpolated along the polyline."""
    pts = curve.points[np.lexsort((curve.points[:, 1], curve.points[:, 0]))]
    gap = pts[:, 1] - (1.0 - pts[:, 0])  # signed distance above the EER line
    for i in range(len(pts) - 1):
        g0, g1 = gap[i], gap[i + 1]
        if g0 == 0.0:
            return EerResult(value=float(pts[i, 0]), crossed=True)
        if g0 < 0.0 <= g1:
            t = g0 / (g0 - g1)
            fpr = pts[i, 0] + t * (pts[i + 1, 0] - pts[i, 0])
            return EerResult(value=float(fpr), crossed=True)
    if gap[-1] == 0.0:
        return EerResult(value=float(pts[-1, 0]), crossed=True)
    nearest = int(np.argmin(np.abs(gap)))
    return EerResult(value=float(pts[nearest, 0]), crossed=False)


def eer(curve: RocCurve) -> float:
    return eer_info(curve).value


def reconstruction_report(generator, samples, batch_size: int = 4) -> dict:
    """Per-category mean L1 plus the pair-count-weighted overall row.

    `samples` are TrainSample-like objects (x, g, y, category). Categories
    with no samples are omitted with a warning.
    """
    by_cat = {}
    for s in samples:
        by_cat.setdefault(s.category, []).append(s)
    report = {}
    total = 0.0
    count = 0
    for cat in CATEGORY_ORDER:
        if cat not in by_cat:
            warnings.warn(f"category {cat!r} has no test pairs; omitting row")
            continue
        chunk = by_cat[cat]
        losses = []
        for start in range(0, len(chunk), batch_size):
            part = chunk[start:start + batch_size]
            x = np.stack([s.x for s in part])
            g = np.stack([s.g for s in part])
            y = np.stack([s.y for s in part])
            y_hat, _ = generator.forward(x, g, mode="eval")
            losses.extend(np.abs(y_hat - y).mean(axis=(1, 2, 3)).tolist())
        mean_l1 = float(np.mean(losses))
        report[cat] = {"l1": mean_l1, "count": len(chunk)}
        total += mean_l1 * len(chunk)
        count += len(chunk)
    require(count > 0, "no test samples in any category")
    report["all"] = {"l1": total / count, "count": count}
    return report


def relative_improvement(baseline: float, improved: float) -> float:
    require(baseline > 0.0, "baseline loss must be positive")
    return (baseline - improved) / baseline


def pair_matching_sweep(pred_image, ref_image, kind: str, radius: float,
                        thresholds=SWEEP_THRESHOLDS, max_count: int = 100,
                        sigma_spatial: float = 3.0, sigma_range: float = 0.1,
                        wrong_match_counts: str = "fn"):
    """Confusion counts per ratio threshold for one predicted/reference pair."""
    pred = F.bilateral_filter(pred_image, sigma_spatial, sigma_range)
    ref = F.bilateral_filter(ref_image, sigma_spatial, sigma_range)
    kp_pred = F.detect_keypoints(pred, max_count)
    kp_ref = F.detect_keypoints(ref, max_count)
    if not kp_pred or not kp_ref:
        zero = {"tp": 0, "fp": 0, "tn": len(kp_pred), "fn": 0}
        return [(t, dict(zero)) for t in thresholds]
    d_pred = F.describe_all(pred, kp_pred, kind)
    d_ref = F.describe_all(ref, kp_ref, kind)
    matches = F.match_bruteforce(d_pred, d_ref, ratio_threshold=1.0)
    cs = label_matches(matches, kp_pred, kp_ref, radius)
    return [(t, confusion(cs, t, wrong_match_counts)) for t in thresholds]


def aggregate_sweeps(sweeps):
    """Sum per-threshold confusion counts across pairs."""
    require(len(sweeps) > 0, "no sweeps to aggregate")
    thresholds = [t for t, _ in sweeps[0]]
    total = {t: {"tp": 0, "fp": 0, "tn": 0, "fn": 0} for t in thresholds}
    for sweep in sweeps:
        for t, c in sweep:
            for k in total[t]:
                total[t][k] += c[k]
    return [(t, total[t]) for t in thresholds]


def matching_report(pred_images_by_variant: dict, ref_images, radius: float,
                    kinds=(F.FLOAT_KIND, F.BINARY_KIND),
                    thresholds=SWEEP_THRESHOLDS, **sweep_kwargs) -> dict:
    """AUC/EER per variant row and descriptor kind for one direction.

    `pred_images_by_variant` maps row name -> list of predicted (H, W) arrays
    aligned index-by-index with `ref_images`. Rows with no predictions are
    skipped with a warning.
    """
    report = {}
    for variant in pred_images_by_variant:
        preds = pred_images_by_variant[variant]
        if preds is None or len(preds) == 0:
            warnings.warn(f"variant {variant!r} has no predictions; skipping row")
            continue
        require(len(preds) == len(ref_images),
                f"variant {variant!r}: {len(preds)} predictions vs {len(ref_images)} references")
        report[variant] = {}
        for kind in kinds:
            sweeps = [pair_matching_sweep(p, r, kind, radius, thresholds, **sweep_kwargs)
                      for p, r in zip(preds, ref_images)]
            curve = roc_from_confusions(aggregate_sweeps(sweeps))
            report[variant][kind] = {"auc": auc(curve), "eer": eer(curve),
                                     "skipped_thresholds": list(curve.skipped)}
    return report


def median_over_runs(tables: list) -> dict:
    """Elementwise median of numeric leaves across structurally equal dicts."""
    require(len(tables) > 0, "need at least one table")
    first = tables[0]
    if isinstance(first, dict):
        return {k: median_over_runs([t[k] for t in tables]) for k in first}
    if isinstance(first, (int, float)):
        return float(np.median([t for t in tables]))
    return first


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def recon_report_to_csv(report: dict) -> str:
    lines = ["category,l1,count"]
    for cat in list(CATEGORY_ORDER) + ["all"]:
        if cat in report:
            lines.append(f"{cat},{report[cat]['l1']:.8f},{report[cat]['count']}")
    return "\n".join(lines) + "\n"


def matching_report_to_csv(report: dict) -> str:
    lines = ["variant,descriptor,auc,eer"]
    for variant in VARIANT_ROWS:
        if variant not in report:
            continue
        for kind, cell in sorted(report[variant].items()):
            lines.append(f"{variant},{kind},{cell['auc']:.6f},{cell['eer']:.6f}")
    for variant in sorted(set(report) - set(VARIANT_ROWS)):
        for kind, cell in sorted(report[variant].items()):
            lines.append(f"{variant},{kind},{cell['auc']:.6f},{cell['eer']:.6f}")
    return "\n".join(lines) + "\n"


def save_triptych(path, x, y_hat, y):
    """Input | prediction | target as one grayscale PGM strip (diagnostic aid)."""

    def to_u8(a):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim == 3:
            a = a[:, :, 0]
        lo, hi = a.min(), a.max()
        scaled = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
        return (scaled * 255.0).astype(np.uint8)

    strip = np.concatenate([to_u8(x), to_u8(y_hat), to_u8(y)], axis=1)
    header = f"P5\n{strip.shape[1]} {strip.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(strip.tobytes())
