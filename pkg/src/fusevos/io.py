"""Bit-exact readers and writers: indexed-PNG label masks, CGFV confidence
volumes, and the JSON model-zoo manifest.

CGFV layout (all integers little-endian):
    magic "CGFV" | u16 version=1 | u32 height | u32 width | u16 num_planes
    then per plane: u32 object_id, height*width IEEE-754 float32, row-major.

Writers stage output in a temp file in the destination directory and
atomically rename, so readers never observe partial files.
"""

from __future__ import annotations

import json
import math
import os
import re
import struct
import tempfile
import warnings
from dataclasses import dataclass, field
from io import BytesIO
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image

from .core import ConfidencePlane, ConfidenceVolume, LabelMask, ObjectSet
from .validation import ValidationResult

__all__ = [
    "FormatError",
    "CGFV_MAGIC",
    "CGFV_VERSION",
    "MANIFEST_VERSION",
    "frame_filename",
    "default_palette",
    "read_label_mask",
    "write_label_mask",
    "read_confidence_volume",
    "write_confidence_volume",
    "ModelEntry",
    "ZooManifest",
    "load_manifest",
    "validate_manifest",
    "write_manifest",
]


class FormatError(ValueError):
    """A file does not conform to its declared format."""


CGFV_MAGIC = b"CGFV"
CGFV_VERSION = 1
_CGFV_HEADER = struct.Struct("<4sHIIH")
_CGFV_PLANE_ID = struct.Struct("<I")

MANIFEST_VERSION = 1

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_PNG_COLOR_TYPE_PALETTE = 3

_FRAME_RE = re.compile(r"^frame_(\d{5})$")


def frame_filename(index: int, ext: str) -> str:
    """Canonical per-frame filename, e.g. frame_00003.cgfv (index from 0)."""
    if index < 0:
        raise ValueError(f"frame index must be non-negative, got {index}")
    return f"frame_{index:05d}.{ext.lstrip('.')}"


def frame_index_of(path: "str | Path") -> int | None:
    """Frame index parsed from a canonical filename, or None."""
    m = _FRAME_RE.match(Path(path).stem)
    return int(m.group(1)) if m else None


def _atomic_write_bytes(path: "str | Path", data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


# --------------------------------------------------------------------------
# Indexed PNG label masks
# --------------------------------------------------------------------------

def default_palette() -> dict[int, tuple[int, int, int]]:
    """256-entry id -> RGB map (the PASCAL VOC / DAVIS colour map)."""
    palette = {}
    for i in range(256):
        r = g = b = 0
        cid = i
        for shift in range(8):
            r |= ((cid >> 0) & 1) << (7 - shift)
            g |= ((cid >> 1) & 1) << (7 - shift)
            b |= ((cid >> 2) & 1) << (7 - shift)
            cid >>= 3
        palette[i] = (r, g, b)
    return palette


def read_label_mask(path: "str | Path") -> LabelMask:
    """Decode an 8-bit palette-indexed PNG; palette index = object id."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"label mask not found: {path}")
    data = path.read_bytes()
    if len(data) < 33 or not data.startswith(_PNG_SIGNATURE) or data[12:16] != b"IHDR":
        raise FormatError(f"{path}: not a PNG file")
    bit_depth = data[24]
    color_type = data[25]
    if color_type != _PNG_COLOR_TYPE_PALETTE:
        raise FormatError(f"{path}: not palette-indexed (color type {color_type})")
    if bit_depth != 8:
        raise FormatError(f"{path}: bit depth is {bit_depth}, expected 8")
    try:
        with Image.open(BytesIO(data)) as img:
            img.load()
            labels = np.asarray(img, dtype=np.int32)
    except Exception as exc:  # corrupt payload past the header
        raise FormatError(f"{path}: failed to decode PNG ({exc})") from exc
    return LabelMask(labels)


def write_label_mask(
    mask: LabelMask,
    path: "str | Path",
    palette: "Mapping[int, tuple[int, int, int]] | None" = None,
) -> None:
    """Write an 8-bit indexed PNG whose palette index is the object id."""
    if palette is None:
        palette = default_palette()
    labels = mask.labels
    present = [int(v) for v in np.unique(labels)]
    too_big = [v for v in present if v > 255 or v < 0]
    if too_big:
        raise ValueError(f"labels {too_big} cannot be stored in an 8-bit indexed PNG")
    unmapped = [v for v in present if v not in palette]
    if unmapped:
        raise ValueError(f"no palette entry for label(s) {unmapped}")
    flat = [0] * (256 * 3)
    for idx, rgb in palette.items():
        if 0 <= int(idx) <= 255:
            flat[3 * int(idx) : 3 * int(idx) + 3] = [int(c) & 0xFF for c in rgb]
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette(flat)
    buf = BytesIO()
    img.save(buf, format="PNG", bits=8)
    _atomic_write_bytes(path, buf.getvalue())


# --------------------------------------------------------------------------
# CGFV confidence volumes
# --------------------------------------------------------------------------

def write_confidence_volume(volume: ConfidenceVolume, path: "str | Path") -> None:
    """Serialise a volume to CGFV. The volume must already be internally
    consistent (shared dims, unique positive ids, finite values in [0, 1])."""
    if not volume.planes:
        raise ValueError("cannot write a volume with no planes")
    shape = volume.planes[0].shape
    height, width = shape
    seen: set[int] = set()
    parts = [_CGFV_HEADER.pack(CGFV_MAGIC, CGFV_VERSION, height, width, len(volume.planes))]
    for plane in volume.planes:
        if plane.object_id in seen:
            raise ValueError(f"duplicate plane for object id {plane.object_id}")
        seen.add(plane.object_id)
        if plane.shape != shape:
            raise ValueError(
                f"dimension mismatch: plane for object {plane.object_id} is "
                f"{plane.shape}, expected {shape}"
            )
        values = plane.values
        if not np.all(np.isfinite(values)):
            raise ValueError(f"non-finite value in plane for object {plane.object_id}")
        if values.size and (float(values.min()) < 0.0 or float(values.max()) > 1.0):
            raise ValueError(f"value out of range [0, 1] in plane for object {plane.object_id}")
        parts.append(_CGFV_PLANE_ID.pack(plane.object_id))
        parts.append(values.astype("<f4", copy=False).tobytes())
    _atomic_write_bytes(path, b"".join(parts))


def read_confidence_volume(path: "str | Path", model_name: str = "") -> ConfidenceVolume:
    """Parse a CGFV file, rejecting anything that violates the format.

    The byte format carries no model name; callers that know the producing
    model pass it in (the fusion driver uses the manifest entry name).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"confidence volume not found: {path}")
    data = path.read_bytes()
    if len(data) < _CGFV_HEADER.size:
        raise FormatError(f"{path}: truncated payload (header incomplete)")
    magic, version, height, width, num_planes = _CGFV_HEADER.unpack_from(data, 0)
    if magic != CGFV_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CGFV_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if height < 1 or width < 1:
        raise FormatError(f"{path}: invalid dimensions {width}x{height}")

    plane_bytes = height * width * 4
    offset = _CGFV_HEADER.size
    planes: list[ConfidencePlane] = []
    seen: set[int] = set()
    for _ in range(num_planes):
        if offset + 4 + plane_bytes > len(data):
            raise FormatError(f"{path}: truncated payload")
        (object_id,) = _CGFV_PLANE_ID.unpack_from(data, offset)
        offset += 4
        if object_id < 1:
            raise FormatError(f"{path}: invalid object id {object_id}")
        if object_id in seen:
            raise FormatError(f"{path}: duplicate object id {object_id}")
        seen.add(object_id)
        values = np.frombuffer(data, dtype="<f4", count=height * width, offset=offset)
        offset += plane_bytes
        if not np.all(np.isfinite(values)):
            raise FormatError(f"{path}: non-finite value in plane for object {object_id}")
        if float(values.min()) < 0.0 or float(values.max()) > 1.0:
            raise FormatError(f"{path}: value out of range [0, 1] for object {object_id}")
        planes.append(ConfidencePlane(object_id, values.reshape(height, width)))
    if offset != len(data):
        raise FormatError(f"{path}: trailing data ({len(data) - offset} extra bytes)")
    return ConfidenceVolume(model_name, tuple(planes))


# --------------------------------------------------------------------------
# Model-zoo manifest
# --------------------------------------------------------------------------

_MANIFEST_KEYS = {"version", "sequence_name", "num_frames", "objects", "models"}
_MODEL_KEYS = {"name", "weight", "prediction_dir", "hyperparameters", "tta_flipped_dir"}


@dataclass(frozen=True)
class ModelEntry:
    """One zoo model: where its per-frame CGFV predictions live and how it
    was run (hyperparameters are recorded for provenance, never executed)."""

    name: str
    prediction_dir: str
    weight: float = 1.0
    hyperparameters: Mapping[str, object] = field(default_factory=dict)
    tta_flipped_dir: str | None = None


@dataclass(frozen=True)
class ZooManifest:
    """Declarative description of a model-zoo run over one sequence."""

    sequence_name: str
    num_frames: int
    objects: ObjectSet
    models: tuple[ModelEntry, ...]
    base_dir: Path | None = None

    def resolve_dir(self, raw: str) -> Path:
        """Resolve a manifest-relative directory path."""
        p = Path(raw)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p

    def model_weights(self) -> tuple[float, ...]:
        return tuple(float(m.weight) for m in self.models)


def _require(obj: Mapping, key: str, kind, where: str):
    if key not in obj:
        raise FormatError(f"{where}: missing required key {key!r}")
    value = obj[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise FormatError(f"{where}: key {key!r} must be {kind.__name__}")
    return value


def load_manifest(path: "str | Path") -> ZooManifest:
    """Parse a manifest JSON file. Schema problems raise FormatError;
    representable invariant violations are left for validate_manifest."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(
            f"{path}: manifest parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")

    version = _require(raw, "version", int, str(path))
    if version != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {version}")
    unknown = sorted(set(raw) - _MANIFEST_KEYS)
    if unknown:
        warnings.warn(f"{path}: ignoring unknown manifest key(s) {unknown}", stacklevel=2)

    sequence_name = _require(raw, "sequence_name", str, str(path))
    num_frames = _require(raw, "num_frames", int, str(path))
    objects_raw = _require(raw, "objects", list, str(path))
    if not objects_raw or not all(isinstance(i, int) and not isinstance(i, bool) for i in objects_raw):
        raise FormatError(f"{path}: 'objects' must be a non-empty list of integers")
    try:
        objects = ObjectSet(tuple(objects_raw))
    except ValueError as exc:
        raise FormatError(f"{path}: invalid object set: {exc}") from exc

    models_raw = _require(raw, "models", list, str(path))
    models: list[ModelEntry] = []
    for i, entry in enumerate(models_raw):
        where = f"{path}: models[{i}]"
        if not isinstance(entry, dict):
            raise FormatError(f"{where}: must be an object")
        unknown = sorted(set(entry) - _MODEL_KEYS)
        if unknown:
            warnings.warn(f"{where}: ignoring unknown key(s) {unknown}", stacklevel=2)
        name = _require(entry, "name", str, where)
        prediction_dir = _require(entry, "prediction_dir", str, where)
        weight = entry.get("weight", 1.0)
        if not isinstance(weight, (int, float)) or isinstance(weight, bool):
            raise FormatError(f"{where}: 'weight' must be a number")
        hyper = entry.get("hyperparameters", {})
        if not isinstance(hyper, dict):
            raise FormatError(f"{where}: 'hyperparameters' must be an object")
        tta = entry.get("tta_flipped_dir")
        if tta is not None and not isinstance(tta, str):
            raise FormatError(f"{where}: 'tta_flipped_dir' must be a string")
        models.append(ModelEntry(name, prediction_dir, float(weight), dict(hyper), tta))

    return ZooManifest(sequence_name, num_frames, objects, tuple(models), path.parent)


def validate_manifest(manifest: ZooManifest, check_files: bool = True) -> ValidationResult:
    """Check manifest invariants and, optionally, the on-disk layout: every
    model directory must hold one CGFV file per frame, frame_%05d.cgfv."""
    violations: list[str] = []

    if manifest.num_frames < 1:
        violations.append(f"num_frames must be at least 1, got {manifest.num_frames}")
    if not manifest.models:
        violations.append("manifest lists no models")
    seen: set[str] = set()
    for entry in manifest.models:
        if entry.name in seen:
            violations.append(f"duplicate model name: {entry.name}")
        seen.add(entry.name)
        if entry.weight < 0 or not math.isfinite(entry.weight):
            violations.append(f"model {entry.name}: weight must be non-negative, got {entry.weight}")
        if not entry.prediction_dir:
            violations.append(f"model {entry.name}: prediction_dir is empty")
    if manifest.models and all(m.weight == 0 for m in manifest.models):
        violations.append("all model weights are zero")

    if check_files and manifest.num_frames >= 1:
        for entry in manifest.models:
            dirs = [("prediction_dir", entry.prediction_dir)]
            if entry.tta_flipped_dir:
                dirs.append(("tta_flipped_dir", entry.tta_flipped_dir))
            for label, raw in dirs:
                if not raw:
                    continue
                directory = manifest.resolve_dir(raw)
                if not directory.is_dir():
                    violations.append(f"model {entry.name}: missing {label} {directory}")
                    continue
                for i in range(manifest.num_frames):
                    fname = frame_filename(i, "cgfv")
                    if not (directory / fname).is_file():
                        violations.append(f"model {entry.name}: {label} missing {fname}")

    return ValidationResult(tuple(violations))


def write_manifest(manifest: ZooManifest, path: "str | Path") -> None:
    """Serialise a manifest to JSON (deterministic byte output)."""
    doc = {
        "version": MANIFEST_VERSION,
        "sequence_name": manifest.sequence_name,
        "num_frames": manifest.num_frames,
        "objects": list(manifest.objects.ids),
        "models": [
            {
                "name": m.name,
                "weight": m.weight,
                "prediction_dir": m.prediction_dir,
                "hyperparameters": dict(m.hyperparameters),
                **({"tta_flipped_dir": m.tta_flipped_dir} if m.tta_flipped_dir else {}),
            }
            for m in manifest.models
        ],
    }
    _atomic_write_bytes(path, (json.dumps(doc, indent=2) + "\n").encode("utf-8"))
