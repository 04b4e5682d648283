"""Detection evaluation: one-to-one IoU matching and recall / precision /
F-measure.

Matching is greedy over candidate (ground truth, detection) pairs sorted by
polygon IoU descending; each side is used at most once. Detections matched
to an ignore-flagged ground truth are excluded from both the true-positive
and false-positive counts; ignored ground truths never enter the recall
denominator. This is the common IoU-at-0.5 protocol, a documented
approximation of dataset-specific official evaluators, not a replacement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ImageIdMismatch
from .geometry import Polygon, mask_to_polygons, polygon_area, polygon_intersection
from .suppress import DetectionSet


@dataclass
class GroundTruthSet:
    """Polygon instances of one image plus their don't-care flags."""

    image_id: str
    instances: list
    ignore_flags: list
    image_width: int | None = None
    image_height: int | None = None

    def __post_init__(self):
        if len(self.instances) != len(self.ignore_flags):
            raise ValueError(
                f"{len(self.instances)} instances vs {len(self.ignore_flags)} ignore flags"
            )


@dataclass
class MatchResult:
    """Per-image matching outcome feeding the metric roll-up."""

    image_id: str
    matches: list          # (gt_index, det_index, iou) over non-ignored gt
    ignored_detections: list
    gt_total: int
    gt_ignored: int
    det_count: int

    @property
    def effective_gt(self) -> int:
        return self.gt_total - self.gt_ignored

    @property
    def effective_det(self) -> int:
        return self.det_count - len(self.ignored_detections)


@dataclass
class EvalReport:
    recall: float
    precision: float
    f_measure: float
    matched_pairs: list = field(default_factory=list)  # (image_id, gt, det, iou)
    per_image: dict = field(default_factory=dict)
    undefined: tuple = ()
    true_positives: int = 0
    gt_count: int = 0
    det_count: int = 0


def region_iou(gt_poly: Polygon, det_polys) -> float:
    """IoU between a ground-truth polygon and a detection region given as a
    list of disjoint polygons (one per mask component)."""
    det_polys = list(det_polys)
    if not det_polys:
        return 0.0
    inter = 0.0
    for piece in det_polys:
        inter += sum(polygon_area(p) for p in polygon_intersection(gt_poly, piece))
    union = polygon_area(gt_poly) + sum(polygon_area(p) for p in det_polys) - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def match_detections(gt: GroundTruthSet, det_set: DetectionSet,
                     iou_thresh: float = 0.5) -> MatchResult:
    """Greedy one-to-one matching of detections to ground-truth polygons.

    Detection regions are the outer contours of their masks. Candidate pairs
    with IoU >= iou_thresh are taken in IoU-descending order (ties by ground
    truth index, then detection index).
    """
    if gt.image_id != det_set.image_id:
        raise ImageIdMismatch(
            f"ground truth is for {gt.image_id!r}, detections for {det_set.image_id!r}"
        )
    det_polys = [mask_to_polygons(det.mask) for det in det_set.detections]
    candidates = []
    for g, poly in enumerate(gt.instances):
        for d, pieces in enumerate(det_polys):
            iou = region_iou(poly, pieces)
            if iou >= iou_thresh:
                candidates.append((iou, g, d))
    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))
    gt_used = [False] * len(gt.instances)
    det_used = [False] * len(det_set.detections)
    matches = []
    ignored_dets = []
    for iou, g, d in candidates:
        if gt_used[g] or det_used[d]:
            continue
        gt_used[g] = True
        det_used[d] = True
        if gt.ignore_flags[g]:
            ignored_dets.append(d)
        else:
            matches.append((g, d, iou))
    return MatchResult(
        image_id=gt.image_id,
        matches=matches,
        ignored_detections=ignored_dets,
        gt_total=len(gt.instances),
        gt_ignored=sum(1 for f in gt.ignore_flags if f),
        det_count=len(det_set.detections),
    )


def compute_metrics(matches, gt_count: int, det_count: int,
                    image_id: str = "") -> EvalReport:
    """Roll matched pairs and counts up into recall / precision / F-measure.

    gt_count and det_count must already exclude ignored instances. Zero
    denominators yield metric 0 and a flag in ``undefined``.
    """
    matches = list(matches)
    tp = len(matches)
    undefined = []
    if gt_count > 0:
        recall = tp / gt_count
    else:
        recall = 0.0
        undefined.append("recall")
    if det_count > 0:
        precision = tp / det_count
    else:
        precision = 0.0
        undefined.append("precision")
    if precision + recall > 0.0:
        f_measure = 2.0 * precision * recall / (precision + recall)
    else:
        f_measure = 0.0
    return EvalReport(
        recall=recall,
        precision=precision,
        f_measure=f_measure,
        matched_pairs=[(image_id, g, d, iou) for g, d, iou in matches],
        per_image={},
        undefined=tuple(undefined),
        true_positives=tp,
        gt_count=gt_count,
        det_count=det_count,
    )


def evaluate(gt_sets, det_sets, iou_thresh: float = 0.5) -> EvalReport:
    """Evaluate a corpus: per-image matching plus an overall roll-up.

    gt_sets and det_sets must cover the same image ids (any order).
    """
    gt_by_id = {g.image_id: g for g in gt_sets}
    det_by_id = {d.image_id: d for d in det_sets}
    if set(gt_by_id) != set(det_by_id):
        raise ImageIdMismatch(
            f"image ids differ: gt={sorted(gt_by_id)} det={sorted(det_by_id)}"
        )
    all_pairs = []
    per_image = {}
    tp = gt_eff = det_eff = 0
    for image_id in sorted(gt_by_id):
        result = match_detections(gt_by_id[image_id], det_by_id[image_id], iou_thresh)
        image_report = compute_metrics(
            result.matches, result.effective_gt, result.effective_det, image_id
        )
        per_image[image_id] = {
            "recall": image_report.recall,
            "precision": image_report.precision,
            "fMeasure": image_report.f_measure,
            "truePositives": image_report.true_positives,
            "gtCount": image_report.gt_count,
            "detCount": image_report.det_count,
            "flags": list(image_report.undefined),
            "matches": [[g, d, iou] for g, d, iou in result.matches],
        }
        all_pairs.extend(image_report.matched_pairs)
        tp += image_report.true_positives
        gt_eff += result.effective_gt
        det_eff += result.effective_det
    overall = compute_metrics([m[1:] for m in all_pairs], gt_eff, det_eff)
    overall.matched_pairs = all_pairs
    overall.per_image = per_image
    return overall
