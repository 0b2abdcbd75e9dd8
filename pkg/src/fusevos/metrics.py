"""Region similarity J, boundary F-measure, and their mean.

J is intersection-over-union of binary masks. F matches predicted and
ground-truth boundary pixels within a Chebyshev tolerance (implemented by
dilating each boundary with a (2*tol+1)^2 square element): precision is
the matched fraction of predicted boundary pixels, recall the matched
fraction of ground-truth boundary pixels, F their harmonic mean.

Empty-mask conventions: both sides empty scores 1.0 (a correctly
predicted disappearance is a correct prediction), exactly one side empty
scores 0.0. All aggregation runs in full precision and fixed index order;
round_half_up exists for presentation only.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import LabelMask, ObjectSet

__all__ = [
    "jaccard",
    "extract_boundary",
    "dilate_chebyshev",
    "BoundaryMatchCounts",
    "boundary_match_counts",
    "boundary_f",
    "default_boundary_tolerance",
    "jf_mean",
    "round_half_up",
    "EvalRecord",
    "ObjectScore",
    "VideoScore",
    "EvalSummary",
    "evaluate_masks",
    "evaluate_sequence",
    "combine_summaries",
    "records_to_csv",
]


def _as_bool_mask(m, name: str) -> np.ndarray:
    arr = m.labels if isinstance(m, LabelMask) else np.asarray(m)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def _check_same_shape(p: np.ndarray, g: np.ndarray) -> None:
    if p.shape != g.shape:
        raise ValueError(f"dimension mismatch: prediction {p.shape} vs ground truth {g.shape}")


def jaccard(pred, gt) -> float:
    """|P & G| / |P | G|; both empty -> 1.0, exactly one empty -> 0.0."""
    p = _as_bool_mask(pred, "pred")
    g = _as_bool_mask(gt, "gt")
    _check_same_shape(p, g)
    union = int(np.logical_or(p, g).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(p, g).sum())
    return inter / union


def extract_boundary(mask) -> np.ndarray:
    """Foreground pixels with at least one background 4-neighbour.

    The image border counts as background, so objects touching the border
    have boundary there.
    """
    m = _as_bool_mask(mask, "mask")
    interior = np.zeros_like(m)
    if m.shape[0] >= 3 and m.shape[1] >= 3:
        interior[1:-1, 1:-1] = (
            m[:-2, 1:-1] & m[2:, 1:-1] & m[1:-1, :-2] & m[1:-1, 2:]
        )
    return m & ~interior


def dilate_chebyshev(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a (2*radius+1)^2 square structuring element,
    i.e. the set of pixels within Chebyshev distance <= radius of the mask.
    Separable: a 1-D dilation per axis."""
    if radius < 0:
        raise ValueError(f"radius must be non-negative, got {radius}")
    m = np.asarray(mask, dtype=bool)
    if radius == 0:
        return m.copy()
    out = m.copy()
    for d in range(1, radius + 1):
        out[:, d:] |= m[:, :-d]
        out[:, :-d] |= m[:, d:]
    m = out
    out = m.copy()
    for d in range(1, radius + 1):
        out[d:, :] |= m[:-d, :]
        out[:-d, :] |= m[d:, :]
    return out


@dataclass(frozen=True)
class BoundaryMatchCounts:
    """Per-side boundary matching tallies.

    Precision counts on the predicted side (tp_pred matched, fp unmatched)
    and recall on the ground-truth side (tp_gt matched, fn unmatched), so
    precision = tp/(tp+fp) and recall = tp/(tp+fn) each hold with their own
    side's matched count and the measure stays symmetric in (pred, gt).
    """

    tp_pred: int
    fp: int
    tp_gt: int
    fn: int

    def __post_init__(self):
        for name in ("tp_pred", "fp", "tp_gt", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def precision(self) -> float:
        total = self.tp_pred + self.fp
        return self.tp_pred / total if total else 1.0

    @property
    def recall(self) -> float:
        total = self.tp_gt + self.fn
        return self.tp_gt / total if total else 1.0


def boundary_match_counts(pred, gt, tol: int) -> BoundaryMatchCounts:
    p = _as_bool_mask(pred, "pred")
    g = _as_bool_mask(gt, "gt")
    _check_same_shape(p, g)
    if tol < 0:
        raise ValueError(f"tol must be non-negative, got {tol}")
    bp = extract_boundary(p)
    bg = extract_boundary(g)
    n_pred = int(bp.sum())
    n_gt = int(bg.sum())
    matched_pred = int((bp & dilate_chebyshev(bg, tol)).sum()) if n_pred and n_gt else 0
    matched_gt = int((bg & dilate_chebyshev(bp, tol)).sum()) if n_pred and n_gt else 0
    return BoundaryMatchCounts(matched_pred, n_pred - matched_pred, matched_gt, n_gt - matched_gt)


def default_boundary_tolerance(height: int, width: int) -> int:
    """ceil(0.008 * image diagonal), the usual matching radius."""
    return int(math.ceil(0.008 * math.hypot(height, width)))


def boundary_f(pred, gt, tol: "int | None" = None) -> float:
    """Boundary F-measure: 2PR/(P+R) under Chebyshev matching radius tol.

    tol defaults to ceil(0.008 * diagonal). Both boundaries empty -> 1.0;
    exactly one empty -> 0.0; P = R = 0 -> 0.0.
    """
    p = _as_bool_mask(pred, "pred")
    g = _as_bool_mask(gt, "gt")
    _check_same_shape(p, g)
    if tol is None:
        tol = default_boundary_tolerance(*p.shape)
    counts = boundary_match_counts(p, g, tol)
    n_pred = counts.tp_pred + counts.fp
    n_gt = counts.tp_gt + counts.fn
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0
    precision = counts.tp_pred / n_pred
    recall = counts.tp_gt / n_gt
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def jf_mean(j: float, f: float) -> float:
    """(J + F) / 2."""
    for name, v in (("j", j), ("f", f)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return (j + f) / 2


def round_half_up(x: float, places: int = 4) -> float:
    """Decimal round-half-up for presentation.

    Rounds the shortest round-trip decimal form of x, so a float carrying
    representation error just below a decimal midpoint (e.g. 0.85835)
    still rounds up like its printed value.
    """
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


# --------------------------------------------------------------------------
# Sequence evaluation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalRecord:
    video: str
    object_id: int
    frame_index: int
    j: float
    f: float


@dataclass(frozen=True)
class ObjectScore:
    video: str
    object_id: int
    j: float
    f: float

    @property
    def jf(self) -> float:
        return jf_mean(self.j, self.f)


@dataclass(frozen=True)
class VideoScore:
    video: str
    j: float
    f: float

    @property
    def jf(self) -> float:
        return jf_mean(self.j, self.f)


@dataclass(frozen=True)
class EvalSummary:
    """Per-object and per-video means plus the global J, F, and J&F."""

    objects: tuple[ObjectScore, ...]
    videos: tuple[VideoScore, ...]
    j: float
    f: float
    jf: float
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "global": {"J&F": self.jf, "J": self.j, "F": self.f},
            "videos": [
                {"video": v.video, "J&F": v.jf, "J": v.j, "F": v.f} for v in self.videos
            ],
            "objects": [
                {"video": o.video, "object": o.object_id, "J&F": o.jf, "J": o.j, "F": o.f}
                for o in self.objects
            ],
            "warnings": list(self.warnings),
        }


def _mean(values: Sequence[float]) -> float:
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


def _summarise(objects: Sequence[ObjectScore], warnings: Sequence[str]) -> EvalSummary:
    if not objects:
        raise ValueError("nothing to summarise: no object scores")
    videos: list[VideoScore] = []
    for video in dict.fromkeys(o.video for o in objects):
        own = [o for o in objects if o.video == video]
        videos.append(VideoScore(video, _mean([o.j for o in own]), _mean([o.f for o in own])))
    j = _mean([o.j for o in objects])
    f = _mean([o.f for o in objects])
    return EvalSummary(tuple(objects), tuple(videos), j, f, jf_mean(j, f), tuple(warnings))


class _SequenceScorer:
    """Streams (prediction, ground truth) frame pairs and accumulates
    per-object J/F in frame order."""

    def __init__(self, objs: ObjectSet, tol: "int | None", video: str):
        self.objs = objs
        self.tol = tol
        self.video = video
        self.records: list[EvalRecord] = []
        self.stray: set[int] = set()
        self.per_object: dict[int, tuple[list[float], list[float]]] = {
            oid: ([], []) for oid in objs
        }

    def add(self, frame_index: int, pred: LabelMask, gt: LabelMask) -> None:
        if pred.shape != gt.shape:
            raise ValueError(
                f"dimension mismatch at frame {frame_index}: "
                f"prediction {pred.shape} vs ground truth {gt.shape}"
            )
        if self.tol is None:
            self.tol = default_boundary_tolerance(*gt.shape)
        self.stray.update(set(pred.object_ids()) - set(self.objs.ids))
        for oid in self.objs:
            j = jaccard(pred.binary(oid), gt.binary(oid))
            f = boundary_f(pred.binary(oid), gt.binary(oid), self.tol)
            self.records.append(EvalRecord(self.video, oid, frame_index, j, f))
            self.per_object[oid][0].append(j)
            self.per_object[oid][1].append(f)

    def finish(self) -> tuple[list[EvalRecord], EvalSummary]:
        if not self.records:
            raise ValueError("no frames were evaluated")
        warnings = []
        if self.stray:
            warnings.append(
                f"unknown object id(s) {sorted(self.stray)} in predictions treated as background"
            )
        objects = [
            ObjectScore(self.video, oid, _mean(js), _mean(fs))
            for oid, (js, fs) in self.per_object.items()
        ]
        return self.records, _summarise(objects, warnings)


def evaluate_masks(
    pred_masks: Sequence[LabelMask],
    gt_masks: Sequence[LabelMask],
    objs: ObjectSet,
    tol: "int | None" = None,
    video: str = "sequence",
    frame_indices: "Sequence[int] | None" = None,
) -> tuple[list[EvalRecord], EvalSummary]:
    """Score aligned in-memory mask sequences.

    The first mask pair is the provided first-frame annotation and is
    excluded from scoring; at least two frames are required. Prediction
    labels outside ``objs`` are treated as background for every evaluated
    object and reported as a warning.
    """
    if len(pred_masks) != len(gt_masks):
        raise ValueError(
            f"got {len(pred_masks)} predictions for {len(gt_masks)} ground-truth frames"
        )
    if len(gt_masks) < 2:
        raise ValueError("need at least 2 frames; the first frame is the given annotation")
    if frame_indices is None:
        frame_indices = list(range(len(gt_masks)))
    scorer = _SequenceScorer(objs, tol, video)
    for k in range(1, len(gt_masks)):
        scorer.add(frame_indices[k], pred_masks[k], gt_masks[k])
    return scorer.finish()


_FRAME_STEM_RE = re.compile(r"^frame_(\d+)$")


def _frame_files(directory: Path) -> list[str]:
    return sorted(p.name for p in directory.iterdir() if p.suffix == ".png")


def evaluate_sequence(
    pred_dir: "str | Path",
    gt_dir: "str | Path",
    objs: "ObjectSet | None" = None,
    tol: "int | None" = None,
    video: "str | None" = None,
) -> tuple[list[EvalRecord], EvalSummary]:
    """Score a prediction directory against a ground-truth directory.

    Frames are the sorted ``*.png`` names of ``gt_dir``; each must also
    exist in ``pred_dir``. The first frame is excluded from scoring. When
    ``objs`` is None the object set is inferred from the ground truth.
    """
    from .io import read_label_mask  # local import to avoid a cycle at module load

    pred_dir = Path(pred_dir)
    gt_dir = Path(gt_dir)
    if not gt_dir.is_dir():
        raise FileNotFoundError(f"ground-truth directory not found: {gt_dir}")
    if not pred_dir.is_dir():
        raise FileNotFoundError(f"prediction directory not found: {pred_dir}")
    names = _frame_files(gt_dir)
    if len(names) < 2:
        raise ValueError(f"{gt_dir}: need at least 2 ground-truth frames, found {len(names)}")
    missing = [n for n in names if not (pred_dir / n).is_file()]
    if missing:
        raise FileNotFoundError(f"missing frame {missing[0]} in prediction dir {pred_dir}")

    if objs is None:
        # infer the tracked ids from the ground truth
        present: set[int] = set()
        for n in names:
            present.update(read_label_mask(gt_dir / n).object_ids())
        if not present:
            raise ValueError(f"{gt_dir}: ground truth contains no objects")
        objs = ObjectSet.from_iterable(present)

    indices = []
    for k, n in enumerate(names):
        m = _FRAME_STEM_RE.match(Path(n).stem)
        indices.append(int(m.group(1)) if m else k)

    scorer = _SequenceScorer(objs, tol, video if video is not None else gt_dir.name)
    for k in range(1, len(names)):
        scorer.add(indices[k], read_label_mask(pred_dir / names[k]), read_label_mask(gt_dir / names[k]))
    return scorer.finish()


def combine_summaries(summaries: Iterable[EvalSummary]) -> EvalSummary:
    """Aggregate several sequence summaries: the global score is the
    unweighted mean over all per-object means across videos."""
    objects: list[ObjectScore] = []
    warnings: list[str] = []
    for s in summaries:
        objects.extend(s.objects)
        warnings.extend(s.warnings)
    return _summarise(objects, warnings)


def records_to_csv(records: Sequence[EvalRecord], path: "str | Path") -> None:
    """Write per-(video, object, frame) J and F values in full precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video", "object", "frame", "J", "F"])
        for r in records:
            writer.writerow([r.video, r.object_id, r.frame_index, repr(r.j), repr(r.f)])
