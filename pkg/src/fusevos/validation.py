"""Input validation helpers.

Checks come in two flavours: ``validate_*`` functions collect every
violation into a :class:`ValidationResult` (nothing is raised), while the
``check_*`` helpers raise ``ValueError`` on the first problem and are used
at the entry points of the numeric operations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfidenceVolume, ObjectSet

__all__ = [
    "ValidationResult",
    "validate_volume",
    "check_volume",
    "check_volumes",
]


@dataclass(frozen=True)
class ValidationResult:
    """Outcome of a validation pass: ok iff no violations were recorded."""

    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def raise_if_failed(self, context: str = "validation failed") -> None:
        if not self.ok:
            raise ValueError(f"{context}: " + "; ".join(self.violations))

    @staticmethod
    def merge(results: "list[ValidationResult]") -> "ValidationResult":
        violations: list[str] = []
        for r in results:
            violations.extend(r.violations)
        return ValidationResult(tuple(violations))


def validate_volume(volume: ConfidenceVolume, objs: ObjectSet) -> ValidationResult:
    """Check every volume invariant against the sequence's object set."""
    violations: list[str] = []

    if not volume.planes:
        violations.append("volume has no planes")
        return ValidationResult(tuple(violations))

    seen: set[int] = set()
    ref_shape = volume.planes[0].shape
    for plane in volume.planes:
        oid = plane.object_id
        if oid in seen:
            violations.append(f"duplicate plane for object id {oid}")
        seen.add(oid)
        if oid not in objs:
            violations.append(f"unknown object id {oid}")
        if plane.shape != ref_shape:
            violations.append(
                f"dimension mismatch: plane for object {oid} is "
                f"{plane.width}x{plane.height}, expected {ref_shape[1]}x{ref_shape[0]}"
            )
        values = plane.values
        if not np.all(np.isfinite(values)):
            violations.append(f"non-finite value in plane for object {oid}")
        elif values.size and (float(values.min()) < 0.0 or float(values.max()) > 1.0):
            violations.append(f"value out of range [0, 1] in plane for object {oid}")

    for oid in objs:
        if oid not in seen:
            violations.append(f"missing plane for object id {oid}")

    return ValidationResult(tuple(violations))


def check_volume(volume: ConfidenceVolume, objs: ObjectSet) -> None:
    """Raise ValueError unless ``volume`` satisfies every invariant."""
    validate_volume(volume, objs).raise_if_failed(
        f"invalid confidence volume {volume.model_name!r}"
    )


def check_volumes(
    volumes: "list[ConfidenceVolume] | tuple[ConfidenceVolume, ...]",
    objs: ObjectSet,
    weights: "tuple[float, ...] | None" = None,
) -> None:
    """Validate a multi-model stack: per-volume invariants, shared frame
    dimensions, and weight alignment."""
    if not volumes:
        raise ValueError("no volumes supplied")
    if weights is not None and len(weights) != len(volumes):
        raise ValueError(f"{len(weights)} weights supplied for {len(volumes)} volumes")
    ref_shape = None
    for volume in volumes:
        check_volume(volume, objs)
        if ref_shape is None:
            ref_shape = volume.shape
        elif volume.shape != ref_shape:
            raise ValueError(
                f"dimension mismatch across models: {volume.model_name!r} is "
                f"{volume.shape}, expected {ref_shape}"
            )
