"""Seeded synthetic multi-model benchmark.

Generates a short sequence of two moving rectangular objects (the second
may disappear for a stretch, mimicking real disappearance events) and a
zoo of five simulated models with heterogeneous error profiles:

* boundary_erode  - confident only on an eroded core, misses the rim
* boundary_dilate - spills confidence over a dilated rim
* id_swap         - sometimes swaps the two objects' identities
* drop_prone      - sometimes loses an object entirely for a frame
* near_oracle     - tracks the ground truth with low noise

The profiles are complementary by construction: summed-confidence pixel
checking recovers rim pixels that averaging loses (erode and drop pull
the mean under threshold) while rejecting the dilated spill that a
maximum keeps, and voting outvotes the identity swapper.

Everything is a pure function of the seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import ConfidencePlane, ConfidenceVolume, LabelMask, ObjectSet
from .metrics import dilate_chebyshev

__all__ = [
    "MODEL_PROFILES",
    "make_ground_truth",
    "simulate_zoo",
    "write_fixture",
    "run_benchmark",
]

MODEL_PROFILES = (
    "boundary_erode",
    "boundary_dilate",
    "id_swap",
    "drop_prone",
    "near_oracle",
)

_SWAP_PROB = 0.5
_DROP_PROB = 0.35
_LAG_PROB = 0.5
_ORACLE_JITTER_PROB = 0.25


def _erode(mask: np.ndarray, radius: int) -> np.ndarray:
    return ~dilate_chebyshev(~mask, radius)


def _shift(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[ys, xs] = mask[ys_src, xs_src]
    return out


def _rect_mask(height, width, top, left, size) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    mask[top : top + size, left : left + size] = True
    return mask


def make_ground_truth(
    rng: np.random.Generator, frames: int = 10, height: int = 64, width: int = 64
) -> list[LabelMask]:
    """Ground-truth label masks: two non-overlapping moving squares,
    ids 1 and 2; object 2 may vanish mid-sequence."""
    if frames < 2 or height < 32 or width < 32:
        raise ValueError("need frames >= 2 and at least a 32x32 canvas")
    half = width // 2

    def walk(x_lo, x_hi):
        size = int(rng.integers(12, 19))
        top = int(rng.integers(2, height - size - 2))
        left = int(rng.integers(x_lo, x_hi - size))
        vy = int(rng.integers(-2, 3))
        vx = int(rng.integers(-2, 3))
        boxes = []
        for _ in range(frames):
            boxes.append((top, left, size))
            top = int(np.clip(top + vy, 1, height - size - 1))
            left = int(np.clip(left + vx, x_lo, x_hi - size))
        return boxes

    boxes1 = walk(1, half - 1)
    boxes2 = walk(half + 1, width - 1)

    absent: set[int] = set()
    if rng.random() < 0.5 and frames >= 6:
        start = int(rng.integers(2, frames - 3))
        absent = {start, start + 1}

    masks = []
    for k in range(frames):
        labels = np.zeros((height, width), dtype=np.int32)
        t, l, s = boxes1[k]
        labels[t : t + s, l : l + s] = 1
        if k not in absent:
            t, l, s = boxes2[k]
            labels[t : t + s, l : l + s] = 2
        masks.append(LabelMask(labels))
    return masks


def _render(mask: np.ndarray, rng: np.random.Generator, fg: float, bg: float, noise: float):
    base = np.where(mask, fg, bg)
    values = base + rng.uniform(-noise, noise, mask.shape)
    return np.clip(values, 0.0, 1.0).astype(np.float32)


def simulate_zoo(
    gt_masks: list[LabelMask], objs: ObjectSet, rng: np.random.Generator
) -> dict[str, list[ConfidenceVolume]]:
    """Per-profile confidence volumes, one per frame."""
    ids = list(objs.ids)
    out: dict[str, list[ConfidenceVolume]] = {name: [] for name in MODEL_PROFILES}

    for gt in gt_masks:
        binaries = {oid: gt.binary(oid) for oid in ids}

        swap = rng.random() < _SWAP_PROB
        swapped = dict(binaries)
        if swap and len(ids) >= 2:
            order = ids[1:] + ids[:1]  # cyclic identity shift
            swapped = {oid: binaries[other] for oid, other in zip(ids, order)}

        erode_radius = int(rng.integers(1, 4))
        dilate_radius = int(rng.integers(1, 4))

        def lagged(mask):
            if rng.random() < _DROP_PROB:
                return np.zeros_like(mask)
            if rng.random() < _LAG_PROB:
                return _shift(mask, int(rng.integers(-1, 2)), int(rng.integers(-1, 2)))
            return mask

        def jittered(mask):
            u = rng.random()
            if u < _ORACLE_JITTER_PROB:
                return dilate_chebyshev(mask, 1)
            if u < 2 * _ORACLE_JITTER_PROB:
                return _erode(mask, 1)
            return mask

        per_profile_masks = {
            "boundary_erode": {o: _erode(binaries[o], erode_radius) for o in ids},
            "boundary_dilate": {o: dilate_chebyshev(binaries[o], dilate_radius) for o in ids},
            "id_swap": swapped,
            "drop_prone": {o: lagged(binaries[o]) for o in ids},
            "near_oracle": {o: jittered(binaries[o]) for o in ids},
        }

        for name in MODEL_PROFILES:
            fg, bg, noise = (0.92, 0.04, 0.02) if name == "near_oracle" else (0.9, 0.05, 0.04)
            planes = tuple(
                ConfidencePlane(o, _render(per_profile_masks[name][o], rng, fg, bg, noise))
                for o in ids
            )
            out[name].append(ConfidenceVolume(name, planes))

    return out


def run_benchmark(
    seed: int,
    frames: int = 10,
    height: int = 64,
    width: int = 64,
    tau: "float | None" = None,
) -> dict[str, dict[str, float]]:
    """Fuse one seeded synthetic sequence with each strategy and score it
    against the ground truth. Returns {strategy: {"J":, "F":, "J&F":}}."""
    from .core import STRATEGIES, FusionConfig
    from .fusion import make_fusion
    from .metrics import evaluate_masks

    rng = np.random.default_rng(seed)
    gt = make_ground_truth(rng, frames, height, width)
    objs = ObjectSet((1, 2))
    zoo = simulate_zoo(gt, objs, rng)
    per_frame = [[zoo[name][k] for name in MODEL_PROFILES] for k in range(frames)]

    results: dict[str, dict[str, float]] = {}
    for strategy in STRATEGIES:
        cfg = FusionConfig(strategy=strategy, tau=tau)
        estimator = make_fusion(cfg).fit(per_frame[0], objects=objs)
        fused = [estimator.predict(stack) for stack in per_frame]
        _, summary = evaluate_masks(fused, gt, objs, video=f"seed{seed}")
        results[strategy] = {"J": summary.j, "F": summary.f, "J&F": summary.jf}
    return results


def write_fixture(
    out_dir: "str | Path",
    seed: int,
    frames: int = 10,
    height: int = 64,
    width: int = 64,
    tta: bool = False,
) -> Path:
    """Materialise a benchmark instance on disk: ground-truth PNG masks,
    per-model CGFV prediction dirs, and a manifest. Returns the manifest
    path."""
    from .core import flip_horizontal
    from .io import (
        ModelEntry,
        ZooManifest,
        frame_filename,
        write_confidence_volume,
        write_label_mask,
        write_manifest,
    )

    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    gt = make_ground_truth(rng, frames, height, width)
    objs = ObjectSet((1, 2))
    zoo = simulate_zoo(gt, objs, rng)

    gt_dir = out_dir / "gt"
    for k, mask in enumerate(gt):
        write_label_mask(mask, gt_dir / frame_filename(k, "png"))

    entries = []
    for name in MODEL_PROFILES:
        pred_dir = out_dir / "models" / name
        for k, volume in enumerate(zoo[name]):
            write_confidence_volume(volume, pred_dir / frame_filename(k, "cgfv"))
        tta_dir = None
        if tta:
            tta_dir = f"models/{name}_flipped"
            for k, volume in enumerate(zoo[name]):
                # a mirrored-frame prediction, still in mirrored coordinates
                write_confidence_volume(
                    flip_horizontal(volume), out_dir / tta_dir / frame_filename(k, "cgfv")
                )
        entries.append(
            ModelEntry(
                name=name,
                prediction_dir=f"models/{name}",
                weight=1.0,
                hyperparameters={"profile": name, "seed": seed},
                tta_flipped_dir=tta_dir,
            )
        )

    manifest = ZooManifest(
        sequence_name=f"synthetic_{seed}",
        num_frames=frames,
        objects=objs,
        models=tuple(entries),
        base_dir=out_dir,
    )
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest, manifest_path)
    return manifest_path
