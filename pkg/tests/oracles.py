"""Brute-force reference implementations used to verify the library.

Everything here is written as naive per-pixel loops over Python floats,
independently of the vectorised production code. The fusion references
accumulate over models in supplied order with plain float adds, which the
production kernels are contractually required to match bit for bit.
"""

from __future__ import annotations

import numpy as np

VOTE_ABSTAIN = 0.5


def oracle_jaccard(p, g) -> float:
    p = np.asarray(p, dtype=bool)
    g = np.asarray(g, dtype=bool)
    pset = {(y, x) for y in range(p.shape[0]) for x in range(p.shape[1]) if p[y, x]}
    gset = {(y, x) for y in range(g.shape[0]) for x in range(g.shape[1]) if g[y, x]}
    union = pset | gset
    if not union:
        return 1.0
    return len(pset & gset) / len(union)


def oracle_boundary_points(mask) -> list[tuple[int, int]]:
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    points = []
    for y in range(h):
        for x in range(w):
            if not m[y, x]:
                continue
            on_border = y == 0 or y == h - 1 or x == 0 or x == w - 1
            neighbours_bg = any(
                not m[y + dy, x + dx]
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1))
                if 0 <= y + dy < h and 0 <= x + dx < w
            )
            if on_border or neighbours_bg:
                points.append((y, x))
    return points


def oracle_boundary_f(p, g, tol: int) -> float:
    """All-pairs Chebyshev matching, no dilation trick."""
    bp = oracle_boundary_points(p)
    bg = oracle_boundary_points(g)
    if not bp and not bg:
        return 1.0
    if not bp or not bg:
        return 0.0
    pa = np.array(bp)
    ga = np.array(bg)
    # Chebyshev distance matrix between every boundary-pixel pair
    dist = np.maximum(
        np.abs(pa[:, None, 0] - ga[None, :, 0]),
        np.abs(pa[:, None, 1] - ga[None, :, 1]),
    )
    matched_pred = int((dist.min(axis=1) <= tol).sum())
    matched_gt = int((dist.min(axis=0) <= tol).sum())
    precision = matched_pred / len(bp)
    recall = matched_gt / len(bg)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _model_argmax(planes: dict, ids: list[int], y: int, x: int) -> tuple[int, float]:
    """(argmax id, max confidence) scanning ids ascending, keeping the first
    maximum."""
    best_id = ids[0]
    best = float(planes[ids[0]][y, x])
    for oid in ids[1:]:
        v = float(planes[oid][y, x])
        if v > best:
            best = v
            best_id = oid
    return best_id, best


def oracle_fuse_confidence_guided(models, weights, tau, ids):
    """models: list over models of {object_id: 2-D array}; returns the
    fused int label array."""
    ids = sorted(ids)
    shape = models[0][ids[0]].shape
    out = np.zeros(shape, dtype=np.int32)
    for y in range(shape[0]):
        for x in range(shape[1]):
            score = 0.0
            for m, planes in enumerate(models):
                _, fg = _model_argmax(planes, ids, y, x)
                score += weights[m] * fg
            if not score > tau:
                continue
            vote_mass = {oid: 0.0 for oid in ids}
            aggregate = {oid: 0.0 for oid in ids}
            for m, planes in enumerate(models):
                vote_id, fg = _model_argmax(planes, ids, y, x)
                for oid in ids:
                    aggregate[oid] += weights[m] * float(planes[oid][y, x])
                if fg >= VOTE_ABSTAIN:
                    vote_mass[vote_id] += weights[m]
            winner = ids[0]
            for oid in ids[1:]:
                if vote_mass[oid] > vote_mass[winner] or (
                    vote_mass[oid] == vote_mass[winner]
                    and aggregate[oid] > aggregate[winner]
                ):
                    winner = oid
            out[y, x] = winner
    return out


def oracle_fuse_average(models, weights, ids):
    ids = sorted(ids)
    shape = models[0][ids[0]].shape
    out = np.zeros(shape, dtype=np.int32)
    total = 0.0
    for w in weights:
        total += w
    for y in range(shape[0]):
        for x in range(shape[1]):
            averaged = {}
            for oid in ids:
                acc = 0.0
                for m, planes in enumerate(models):
                    acc += weights[m] * float(planes[oid][y, x])
                averaged[oid] = acc / total
            winner = ids[0]
            for oid in ids[1:]:
                if averaged[oid] > averaged[winner]:
                    winner = oid
            if averaged[winner] > 0.5:
                out[y, x] = winner
    return out


def oracle_fuse_max(models, weights, ids):
    ids = sorted(ids)
    shape = models[0][ids[0]].shape
    out = np.zeros(shape, dtype=np.int32)
    for y in range(shape[0]):
        for x in range(shape[1]):
            best = {}
            for oid in ids:
                value = None
                for m, planes in enumerate(models):
                    if weights[m] == 0:
                        continue
                    v = float(planes[oid][y, x])
                    if value is None or v > value:
                        value = v
                best[oid] = value
            winner = ids[0]
            for oid in ids[1:]:
                if best[oid] > best[winner]:
                    winner = oid
            if best[winner] > 0.5:
                out[y, x] = winner
    return out


def oracle_contested(models, ids) -> int:
    """Pixels where the models' thresholded-argmax labels are not all equal."""
    ids = sorted(ids)
    shape = models[0][ids[0]].shape
    count = 0
    for y in range(shape[0]):
        for x in range(shape[1]):
            labels = set()
            for planes in models:
                vote_id, fg = _model_argmax(planes, ids, y, x)
                labels.add(vote_id if fg > 0.5 else 0)
            if len(labels) > 1:
                count += 1
    return count


def volumes_to_model_dicts(volumes):
    """Adapt ConfidenceVolume objects to the plain-dict form used here."""
    return [{p.object_id: p.values for p in v.planes} for v in volumes]
