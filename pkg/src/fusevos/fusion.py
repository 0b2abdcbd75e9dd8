"""Multi-model fusion of confidence volumes into label masks.

Three strategies over a stack of per-model, per-object confidence planes:

* confidence-guided: a two-stage per-pixel decision. Stage 1 marks a pixel
  foreground when the weighted sum of each model's foreground confidence
  (its max over objects) exceeds tau. Stage 2 assigns the object id by
  weighted voting, each model voting for its argmax object and abstaining
  below 0.5 foreground confidence; ties fall back to the largest summed
  weighted confidence, then the lowest object id. If every model abstains
  the summed-confidence fallback decides directly.
* average: weighted mean confidence per object, thresholded argmax at 0.5.
* max: per-object maximum over the models with nonzero weight (weight
  magnitudes are meaningless for a maximum), thresholded argmax at 0.5.

All decisions depend only on aggregates and object ids, never on the
order in which (volume, weight) pairs are supplied. Accumulation over the
model axis is sequential in model index so results are reproducible to
the bit against a naive per-pixel reference.

Estimators follow the sklearn fit/predict contract: fit validates a
frame's volume stack and binds the object set and frame geometry, predict
fuses a stack into a LabelMask.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .base import ParamsMixin
from .core import (
    STRATEGY_AVERAGE,
    STRATEGY_CONFIDENCE_GUIDED,
    STRATEGY_MAX,
    VOTE_ABSTAIN_THRESHOLD,
    ConfidencePlane,
    ConfidenceVolume,
    FusionConfig,
    LabelMask,
    ObjectSet,
    flip_horizontal,
)
from .validation import check_volumes

__all__ = [
    "ConfidenceGuidedFusion",
    "AverageFusion",
    "MaxFusion",
    "make_fusion",
    "fuse_confidence_guided",
    "fuse_average",
    "fuse_max",
    "tta_merge",
    "fuse_sequence",
    "FusionReport",
    "FrameFusionError",
    "PixelDecision",
    "explain_pixel",
    "count_contested",
    "model_argmax_labels",
]


def _stack(volumes: Sequence[ConfidenceVolume]) -> np.ndarray:
    """(models, objects, H, W) float64 stack; object axis ascending id."""
    return np.stack([v.as_array() for v in volumes]).astype(np.float64)


def _argmax_chain(primary: np.ndarray, secondary: np.ndarray) -> np.ndarray:
    """Per-pixel index of the lexicographic maximum over axis 0 of
    (primary, secondary), lowest index on full ties."""
    n = primary.shape[0]
    best = np.zeros(primary.shape[1:], dtype=np.intp)
    best_primary = primary[0].copy()
    best_secondary = secondary[0].copy()
    for k in range(1, n):
        better = (primary[k] > best_primary) | (
            (primary[k] == best_primary) & (secondary[k] > best_secondary)
        )
        best = np.where(better, k, best)
        best_primary = np.where(better, primary[k], best_primary)
        best_secondary = np.where(better, secondary[k], best_secondary)
    return best


def _strict_argmax(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel (index, value) of the maximum over axis 0, lowest index
    on ties."""
    best = np.zeros(values.shape[1:], dtype=np.intp)
    best_value = values[0].copy()
    for k in range(1, values.shape[0]):
        better = values[k] > best_value
        best = np.where(better, k, best)
        best_value = np.where(better, values[k], best_value)
    return best, best_value


def _labels_from_winner(
    winner: np.ndarray, foreground: np.ndarray, object_ids: Sequence[int]
) -> np.ndarray:
    ids = np.asarray(object_ids, dtype=np.int32)
    return np.where(foreground, ids[winner], np.int32(0))


def _confidence_guided_kernel(
    conf: np.ndarray, weights: Sequence[float], tau: float, object_ids: Sequence[int]
) -> np.ndarray:
    n_models, n_objects = conf.shape[0], conf.shape[1]
    fg = conf.max(axis=1)  # (models, H, W) foreground confidence
    score = np.zeros(conf.shape[2:], dtype=np.float64)
    for m in range(n_models):
        score += weights[m] * fg[m]
    foreground = score > tau

    model_vote = np.empty((n_models,) + conf.shape[2:], dtype=np.intp)
    for m in range(n_models):
        model_vote[m], _ = _strict_argmax(conf[m])

    vote_mass = np.zeros((n_objects,) + conf.shape[2:], dtype=np.float64)
    aggregate = np.zeros_like(vote_mass)
    for m in range(n_models):
        aggregate += weights[m] * conf[m]
        voting = fg[m] >= VOTE_ABSTAIN_THRESHOLD
        for k in range(n_objects):
            vote_mass[k] += np.where(voting & (model_vote[m] == k), weights[m], 0.0)

    winner = _argmax_chain(vote_mass, aggregate)
    return _labels_from_winner(winner, foreground, object_ids)


def _average_kernel(
    conf: np.ndarray, weights: Sequence[float], object_ids: Sequence[int]
) -> np.ndarray:
    acc = np.zeros(conf.shape[1:], dtype=np.float64)
    total = 0.0
    for m in range(conf.shape[0]):
        acc += weights[m] * conf[m]
        total += weights[m]
    averaged = acc / total
    winner, value = _strict_argmax(averaged)
    return _labels_from_winner(winner, value > 0.5, object_ids)


def _max_kernel(
    conf: np.ndarray, weights: Sequence[float], object_ids: Sequence[int]
) -> np.ndarray:
    acc = None
    for m in range(conf.shape[0]):
        if weights[m] == 0:
            continue
        acc = conf[m].copy() if acc is None else np.maximum(acc, conf[m])
    if acc is None:
        raise ValueError("at least one model weight must be positive")
    winner, value = _strict_argmax(acc)
    return _labels_from_winner(winner, value > 0.5, object_ids)


class _FusionEstimator(ParamsMixin):
    """Shared fit/predict machinery; subclasses provide the kernel."""

    strategy: str

    def _resolved(self, n_models: int) -> tuple[tuple[float, ...], float]:
        cfg = FusionConfig(
            strategy=self.strategy,
            tau=getattr(self, "tau", None),
            model_weights=tuple(self.model_weights) if self.model_weights is not None else None,
        )
        return cfg.resolve(n_models)

    def fit(self, X: Sequence[ConfidenceVolume], y=None, objects: "ObjectSet | None" = None):
        """Validate a volume stack and bind the expected object set, frame
        shape, model count, and resolved weights/threshold. Returns self."""
        volumes = list(X)
        if not volumes:
            raise ValueError("no volumes supplied")
        if objects is None:
            objects = ObjectSet(volumes[0].object_ids)
        weights, tau = self._resolved(len(volumes))
        check_volumes(volumes, objects, weights)
        self.object_ids_ = objects.ids
        self.frame_shape_ = volumes[0].shape
        self.n_models_ = len(volumes)
        self.weights_ = weights
        self.tau_ = tau
        return self

    def predict(self, X: Sequence[ConfidenceVolume]) -> LabelMask:
        """Fuse one frame's volume stack into a label mask."""
        self._check_is_fitted("object_ids_")
        volumes = list(X)
        objects = ObjectSet(self.object_ids_)
        check_volumes(volumes, objects, None)
        if len(volumes) != self.n_models_:
            raise ValueError(f"expected {self.n_models_} volumes, got {len(volumes)}")
        if volumes[0].shape != self.frame_shape_:
            raise ValueError(
                f"dimension mismatch: fitted on {self.frame_shape_}, got {volumes[0].shape}"
            )
        labels = self._kernel(_stack(volumes))
        return LabelMask(labels)

    def fit_predict(
        self, X: Sequence[ConfidenceVolume], y=None, objects: "ObjectSet | None" = None
    ) -> LabelMask:
        return self.fit(X, objects=objects).predict(X)

    def _kernel(self, conf: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ConfidenceGuidedFusion(_FusionEstimator):
    """Pixel-check plus object-id voting fusion."""

    strategy = STRATEGY_CONFIDENCE_GUIDED

    def __init__(self, tau: "float | None" = None, model_weights=None):
        self.tau = tau
        self.model_weights = model_weights

    def _kernel(self, conf: np.ndarray) -> np.ndarray:
        return _confidence_guided_kernel(conf, self.weights_, self.tau_, self.object_ids_)


class AverageFusion(_FusionEstimator):
    """Weighted mean confidence, thresholded argmax."""

    strategy = STRATEGY_AVERAGE

    def __init__(self, model_weights=None):
        self.model_weights = model_weights

    def _kernel(self, conf: np.ndarray) -> np.ndarray:
        return _average_kernel(conf, self.weights_, self.object_ids_)


class MaxFusion(_FusionEstimator):
    """Per-object maximum confidence, thresholded argmax. Weights only
    include (nonzero) or exclude (zero) a model."""

    strategy = STRATEGY_MAX

    def __init__(self, model_weights=None):
        self.model_weights = model_weights

    def _kernel(self, conf: np.ndarray) -> np.ndarray:
        return _max_kernel(conf, self.weights_, self.object_ids_)


def make_fusion(cfg: FusionConfig) -> _FusionEstimator:
    """Estimator for a fusion configuration."""
    if cfg.strategy == STRATEGY_CONFIDENCE_GUIDED:
        return ConfidenceGuidedFusion(tau=cfg.tau, model_weights=cfg.model_weights)
    if cfg.strategy == STRATEGY_AVERAGE:
        return AverageFusion(model_weights=cfg.model_weights)
    if cfg.strategy == STRATEGY_MAX:
        return MaxFusion(model_weights=cfg.model_weights)
    raise ValueError(f"unknown strategy {cfg.strategy!r}")


def fuse_confidence_guided(
    volumes: Sequence[ConfidenceVolume], cfg: FusionConfig, objs: ObjectSet
) -> LabelMask:
    est = ConfidenceGuidedFusion(tau=cfg.tau, model_weights=cfg.model_weights)
    return est.fit_predict(volumes, objects=objs)


def fuse_average(
    volumes: Sequence[ConfidenceVolume], weights: "Sequence[float] | None", objs: ObjectSet
) -> LabelMask:
    w = tuple(weights) if weights is not None else None
    return AverageFusion(model_weights=w).fit_predict(volumes, objects=objs)


def fuse_max(
    volumes: Sequence[ConfidenceVolume], weights: "Sequence[float] | None", objs: ObjectSet
) -> LabelMask:
    w = tuple(weights) if weights is not None else None
    return MaxFusion(model_weights=w).fit_predict(volumes, objects=objs)


def tta_merge(
    original: ConfidenceVolume, flipped_prediction: ConfidenceVolume
) -> ConfidenceVolume:
    """Average a prediction with the un-mirrored prediction on the mirrored
    frame. ``flipped_prediction`` is still in mirrored coordinates."""
    if original.object_ids != flipped_prediction.object_ids:
        raise ValueError(
            f"object-set mismatch: {original.object_ids} vs {flipped_prediction.object_ids}"
        )
    if original.shape != flipped_prediction.shape:
        raise ValueError(
            f"dimension mismatch: {original.shape} vs {flipped_prediction.shape}"
        )
    unflipped = flip_horizontal(flipped_prediction)
    planes = tuple(
        ConfidencePlane(a.object_id, (a.values + b.values) * np.float32(0.5))
        for a, b in zip(original.planes, unflipped.planes)
    )
    return ConfidenceVolume(original.model_name, planes)


@dataclass(frozen=True)
class PixelDecision:
    """Outcome of the confidence-guided decision at a single pixel: whether
    it passed the foreground check, the winning object (None for
    background), and the per-object summed weighted confidence."""

    foreground: bool
    winner: "int | None"
    aggregate: Mapping[int, float]

    def __post_init__(self):
        if (self.winner is None) != (not self.foreground):
            raise ValueError("winner must be None exactly for background pixels")


def explain_pixel(
    volumes: Sequence[ConfidenceVolume], cfg: FusionConfig, objs: ObjectSet, y: int, x: int
) -> PixelDecision:
    """Confidence-guided decision for one pixel, for inspection and debugging."""
    estimator = ConfidenceGuidedFusion(tau=cfg.tau, model_weights=cfg.model_weights)
    mask = estimator.fit_predict(volumes, objects=objs)
    label = int(mask.labels[y, x])
    conf = _stack(volumes)
    aggregate = {}
    for k, oid in enumerate(objs.ids):
        total = 0.0
        for m in range(conf.shape[0]):
            total += estimator.weights_[m] * conf[m, k, y, x]
        aggregate[oid] = total
    return PixelDecision(
        foreground=label != 0,
        winner=label if label != 0 else None,
        aggregate=aggregate,
    )


def model_argmax_labels(conf: np.ndarray, object_ids: Sequence[int]) -> np.ndarray:
    """(models, H, W) per-model thresholded-argmax labels: argmax object
    where the model's max confidence exceeds 0.5, else background."""
    ids = np.asarray(object_ids, dtype=np.int32)
    out = np.empty((conf.shape[0],) + conf.shape[2:], dtype=np.int32)
    for m in range(conf.shape[0]):
        winner, value = _strict_argmax(conf[m])
        out[m] = np.where(value > 0.5, ids[winner], np.int32(0))
    return out


def count_contested(volumes: Sequence[ConfidenceVolume]) -> int:
    """Pixels where at least two models' thresholded-argmax labels disagree."""
    if not volumes:
        raise ValueError("no volumes supplied")
    conf = _stack(volumes)
    labels = model_argmax_labels(conf, volumes[0].object_ids)
    return int((labels != labels[0]).any(axis=0).sum())


@dataclass(frozen=True)
class FusionReport:
    """Run provenance plus the per-frame contested-pixel counts."""

    strategy: str
    tau: float
    weights: Mapping[str, float]
    contested_pixels: Mapping[str, int]

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "tau": self.tau,
            "weights": dict(self.weights),
            "contested_pixels": dict(self.contested_pixels),
        }

    def save(self, path: "str | Path") -> None:
        from .io import _atomic_write_bytes

        _atomic_write_bytes(path, (json.dumps(self.to_dict(), indent=2) + "\n").encode("utf-8"))


class FrameFusionError(RuntimeError):
    """An error while fusing one frame, annotated with the frame index."""

    def __init__(self, frame_index: int, cause: BaseException):
        super().__init__(f"frame {frame_index}: {cause}")
        self.frame_index = frame_index
        self.cause = cause


def fuse_sequence(
    manifest,
    cfg: FusionConfig,
    out_dir: "str | Path",
    threads: int = 1,
    palette: "Mapping[int, tuple[int, int, int]] | None" = None,
) -> FusionReport:
    """Fuse every frame of a manifest's zoo and write indexed-PNG masks.

    Per model and frame the prediction volume is loaded (and TTA-merged
    with the flipped-frame prediction when the manifest provides one),
    then the configured strategy runs. Frames are independent; with
    threads > 1 they are processed concurrently and outputs are byte-for-
    byte identical to a serial run.
    """
    from .io import frame_filename, read_confidence_volume, write_label_mask

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    weights = cfg.model_weights if cfg.model_weights is not None else manifest.model_weights()
    run_cfg = FusionConfig(strategy=cfg.strategy, tau=cfg.tau, model_weights=tuple(weights))
    resolved_weights, tau = run_cfg.resolve(len(manifest.models))

    def load_frame(index: int) -> list[ConfidenceVolume]:
        volumes = []
        for entry in manifest.models:
            path = manifest.resolve_dir(entry.prediction_dir) / frame_filename(index, "cgfv")
            volume = read_confidence_volume(path, model_name=entry.name)
            if entry.tta_flipped_dir:
                flipped_path = manifest.resolve_dir(entry.tta_flipped_dir) / frame_filename(
                    index, "cgfv"
                )
                flipped = read_confidence_volume(flipped_path, model_name=entry.name)
                volume = tta_merge(volume, flipped)
            volumes.append(volume)
        return volumes

    try:
        first = load_frame(0)
        estimator = make_fusion(run_cfg).fit(first, objects=manifest.objects)
    except FrameFusionError:
        raise
    except Exception as exc:
        raise FrameFusionError(0, exc) from exc

    def process(index: int) -> int:
        try:
            volumes = first if index == 0 else load_frame(index)
            mask = estimator.predict(volumes)
            contested = count_contested(volumes)
            write_label_mask(mask, out_dir / frame_filename(index, "png"), palette)
            return contested
        except Exception as exc:
            raise FrameFusionError(index, exc) from exc

    indices = range(manifest.num_frames)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = list(pool.map(process, indices))
    else:
        counts = [process(i) for i in indices]

    report = FusionReport(
        strategy=run_cfg.strategy,
        tau=tau,
        weights={m.name: w for m, w in zip(manifest.models, resolved_weights)},
        contested_pixels={frame_filename(i, "png"): c for i, c in zip(indices, counts)},
    )
    report.save(out_dir / "fusion_report.json")
    return report
