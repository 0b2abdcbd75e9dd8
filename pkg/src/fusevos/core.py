"""Domain types and raster primitives shared by every other module.

All types are immutable after construction (arrays are frozen read-only),
so values can be shared freely across threads. Constructors normalise
shapes and dtypes but do not range-check confidence values; full invariant
checking lives in :mod:`fusevos.validation` so that invalid inputs can be
*reported* rather than merely rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "LONG_VIDEO_FRAME_THRESHOLD",
    "STRATEGY_CONFIDENCE_GUIDED",
    "STRATEGY_AVERAGE",
    "STRATEGY_MAX",
    "STRATEGIES",
    "TIE_BREAK_SUM_CONFIDENCE_THEN_LOWEST_ID",
    "VOTE_ABSTAIN_THRESHOLD",
    "LabelMask",
    "ObjectSet",
    "ConfidencePlane",
    "ConfidenceVolume",
    "FusionConfig",
    "MemoryPreset",
    "memory_preset",
    "flip_horizontal",
]

# Sequences with strictly more frames than this get the long-video memory
# preset; a sequence of exactly this length gets the short preset.
LONG_VIDEO_FRAME_THRESHOLD = 200

STRATEGY_CONFIDENCE_GUIDED = "confidence_guided"
STRATEGY_AVERAGE = "average"
STRATEGY_MAX = "max"
STRATEGIES = (STRATEGY_CONFIDENCE_GUIDED, STRATEGY_AVERAGE, STRATEGY_MAX)

TIE_BREAK_SUM_CONFIDENCE_THEN_LOWEST_ID = "sum_confidence_then_lowest_id"

# A model whose foreground confidence at a pixel falls below this value
# abstains from object-id voting at that pixel.
VOTE_ABSTAIN_THRESHOLD = 0.5


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LabelMask:
    """H x W raster of object ids; 0 is background."""

    labels: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.labels, np.int32)
        if arr.ndim != 2:
            raise ValueError(f"labels must be 2-dimensional, got shape {arr.shape}")
        object.__setattr__(self, "labels", arr)

    @classmethod
    def from_flat(cls, width: int, height: int, labels: Sequence[int]) -> "LabelMask":
        flat = np.asarray(labels, dtype=np.int32)
        if flat.size != width * height:
            raise ValueError(
                f"expected {width * height} labels for a {width}x{height} mask, got {flat.size}"
            )
        return cls(flat.reshape(height, width))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def flat_labels(self) -> np.ndarray:
        """Row-major flat view of the label raster."""
        return self.labels.ravel()

    def object_ids(self) -> tuple[int, ...]:
        """Distinct nonzero ids present in the mask, ascending."""
        ids = np.unique(self.labels)
        return tuple(int(i) for i in ids if i != 0)

    def binary(self, object_id: int) -> np.ndarray:
        """Boolean mask of the pixels labelled ``object_id``."""
        return self.labels == object_id

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.labels, other.labels))

    def __repr__(self) -> str:
        return f"LabelMask({self.width}x{self.height}, objects={self.object_ids()})"


@dataclass(frozen=True)
class ObjectSet:
    """Ordered set of the positive object ids tracked in a sequence."""

    ids: tuple[int, ...]

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        if not ids:
            raise ValueError("object set must not be empty")
        if any(i < 1 for i in ids):
            raise ValueError(f"object ids must be positive, got {ids}")
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError(f"object ids must be strictly increasing, got {ids}")
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_iterable(cls, ids: Iterable[int]) -> "ObjectSet":
        return cls(tuple(sorted(set(int(i) for i in ids))))

    def __iter__(self) -> Iterator[int]:
        return iter(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, object_id) -> bool:
        return object_id in self.ids


@dataclass(frozen=True, eq=False)
class ConfidencePlane:
    """Per-pixel confidence in [0, 1] that a pixel belongs to one object.

    Values are stored as 32-bit floats. Range/finiteness violations are
    surfaced by :func:`fusevos.validation.validate_volume`, not here.
    """

    object_id: int
    values: np.ndarray

    def __post_init__(self):
        if int(self.object_id) < 1:
            raise ValueError(f"object_id must be a positive integer, got {self.object_id}")
        object.__setattr__(self, "object_id", int(self.object_id))
        arr = _frozen_array(self.values, np.float32)
        if arr.ndim != 2:
            raise ValueError(f"values must be 2-dimensional, got shape {arr.shape}")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfidencePlane):
            return NotImplemented
        return (
            self.object_id == other.object_id
            and self.shape == other.shape
            and bool(np.array_equal(self.values, other.values))
        )


@dataclass(frozen=True, eq=False)
class ConfidenceVolume:
    """One model's per-frame prediction: one confidence plane per object.

    Planes are canonicalised to ascending object id so the object axis is
    aligned across models regardless of construction order.
    """

    model_name: str
    planes: tuple[ConfidencePlane, ...]

    def __post_init__(self):
        planes = tuple(sorted(self.planes, key=lambda p: p.object_id))
        object.__setattr__(self, "planes", planes)

    @property
    def object_ids(self) -> tuple[int, ...]:
        return tuple(p.object_id for p in self.planes)

    @property
    def shape(self) -> tuple[int, int] | None:
        return self.planes[0].shape if self.planes else None

    def plane_for(self, object_id: int) -> ConfidencePlane:
        for p in self.planes:
            if p.object_id == object_id:
                return p
        raise KeyError(f"no plane for object id {object_id}")

    def as_array(self) -> np.ndarray:
        """Stack planes into an (objects, H, W) float32 array, ascending id."""
        if not self.planes:
            raise ValueError("volume has no planes")
        return np.stack([p.values for p in self.planes])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfidenceVolume):
            return NotImplemented
        return self.model_name == other.model_name and self.planes == other.planes


@dataclass(frozen=True)
class FusionConfig:
    """Parameters of a fusion run.

    ``tau`` is the foreground threshold on summed weighted confidence.
    Left as None, it defaults to half the total model weight (a weighted
    majority of probability mass). ``model_weights`` of None means one
    unit weight per model.
    """

    strategy: str = STRATEGY_CONFIDENCE_GUIDED
    tau: float | None = None
    model_weights: tuple[float, ...] | None = None
    tie_break: str = TIE_BREAK_SUM_CONFIDENCE_THEN_LOWEST_ID

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if self.tie_break != TIE_BREAK_SUM_CONFIDENCE_THEN_LOWEST_ID:
            raise ValueError(f"unknown tie-break policy {self.tie_break!r}")
        if self.tau is not None:
            tau = float(self.tau)
            if not np.isfinite(tau) or tau <= 0:
                raise ValueError(f"tau must be a positive finite number, got {self.tau}")
            object.__setattr__(self, "tau", tau)
        if self.model_weights is not None:
            weights = tuple(float(w) for w in self.model_weights)
            if not weights:
                raise ValueError("model_weights must not be empty")
            if any(not np.isfinite(w) or w < 0 for w in weights):
                raise ValueError(f"model weights must be finite and non-negative, got {weights}")
            if all(w == 0 for w in weights):
                raise ValueError("at least one model weight must be positive")
            object.__setattr__(self, "model_weights", weights)

    def resolve(self, n_models: int) -> tuple[tuple[float, ...], float]:
        """Concrete (weights, tau) for a zoo of ``n_models`` models."""
        if n_models < 1:
            raise ValueError("need at least one model")
        if self.model_weights is None:
            weights = (1.0,) * n_models
        else:
            if len(self.model_weights) != n_models:
                raise ValueError(
                    f"{len(self.model_weights)} weights supplied for {n_models} models"
                )
            weights = self.model_weights
        total = 0.0
        for w in weights:
            total += w
        tau = 0.5 * total if self.tau is None else self.tau
        if tau > total:
            raise ValueError(f"tau={tau} exceeds the total model weight {total}")
        return weights, tau


@dataclass(frozen=True)
class MemoryPreset:
    """Memory-bank configuration applied to the memory-based zoo models."""

    max_mem_frames: int
    min_mem_frames: int
    topk: int

    def __post_init__(self):
        for name in ("max_mem_frames", "min_mem_frames", "topk"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.min_mem_frames > self.max_mem_frames:
            raise ValueError(
                f"min_mem_frames ({self.min_mem_frames}) exceeds "
                f"max_mem_frames ({self.max_mem_frames})"
            )


_LONG_PRESET = MemoryPreset(max_mem_frames=45, min_mem_frames=40, topk=50)
_SHORT_PRESET = MemoryPreset(max_mem_frames=15, min_mem_frames=14, topk=40)


def memory_preset(num_frames: int) -> MemoryPreset:
    """Memory preset for a sequence of ``num_frames`` frames.

    Sequences longer than LONG_VIDEO_FRAME_THRESHOLD frames get the larger
    memory bank; everything else (the threshold itself included) gets the
    short preset.
    """
    if num_frames < 1:
        raise ValueError(f"num_frames must be at least 1, got {num_frames}")
    return _LONG_PRESET if num_frames > LONG_VIDEO_FRAME_THRESHOLD else _SHORT_PRESET


def flip_horizontal(volume: ConfidenceVolume) -> ConfidenceVolume:
    """Mirror every plane left-to-right. Applying twice is a bit-exact no-op."""
    flipped = tuple(
        ConfidencePlane(p.object_id, p.values[:, ::-1]) for p in volume.planes
    )
    return ConfidenceVolume(volume.model_name, flipped)
