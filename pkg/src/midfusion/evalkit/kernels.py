"""Per-frame metric kernels, numba-compiled with a pure-numpy fallback.

Set ``MIDFUSION_DISABLE_NUMBA=1`` to force the numpy path (also used when
numba is not importable). Both paths return identical results; the test
suite runs them against each other and ``benchmarks/bench_kernels.py``
times them.

Boxes are ``float64[n, 4]`` arrays of (x, y, w, h). A ground-truth box with
non-positive width or height marks a target-absent frame.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_ENV_FLAG = "MIDFUSION_DISABLE_NUMBA"


def numba_available() -> bool:
    return numba is not None


def _env_disabled() -> bool:
    return os.environ.get(_ENV_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


_backend = "numpy" if (numba is None or _env_disabled()) else "numba"


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and numba is None:
        raise RuntimeError("numba is not installed")
    _backend = name


# ---------------------------------------------------------------------------
# numpy reference path


def frame_metrics_numpy(pred: np.ndarray, gt: np.ndarray):
    """Center error (px), normalized center error, IoU and validity per frame."""
    pcx = pred[:, 0] + pred[:, 2] / 2
    pcy = pred[:, 1] + pred[:, 3] / 2
    gcx = gt[:, 0] + gt[:, 2] / 2
    gcy = gt[:, 1] + gt[:, 3] / 2
    valid = (gt[:, 2] > 0) & (gt[:, 3] > 0)
    dx, dy = pcx - gcx, pcy - gcy
    center = np.sqrt(dx * dx + dy * dy)
    with np.errstate(divide="ignore", invalid="ignore"):
        ndx = np.where(valid, dx / gt[:, 2], 0.0)
        ndy = np.where(valid, dy / gt[:, 3], 0.0)
    norm = np.sqrt(ndx * ndx + ndy * ndy)
    iw = np.minimum(pred[:, 0] + pred[:, 2], gt[:, 0] + gt[:, 2]) - np.maximum(pred[:, 0], gt[:, 0])
    ih = np.minimum(pred[:, 1] + pred[:, 3], gt[:, 1] + gt[:, 3]) - np.maximum(pred[:, 1], gt[:, 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    # rounding in x + w can push inter above union by an ulp; IoU is capped at 1
    union = np.maximum(pred[:, 2], 0) * np.maximum(pred[:, 3], 0) + np.maximum(gt[:, 2], 0) * np.maximum(gt[:, 3], 0) - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0, np.minimum(inter / union, 1.0), 0.0)
    return center, norm, iou, valid


def count_le_numpy(values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    return np.searchsorted(np.sort(values), thresholds, side="right").astype(np.int64)


def count_gt_numpy(values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    return (values.shape[0] - count_le_numpy(values, thresholds)).astype(np.int64)


# ---------------------------------------------------------------------------
# numba path

if numba is not None:

    @numba.njit(cache=True)
    def _frame_metrics_nb(pred, gt):
        n = pred.shape[0]
        center = np.empty(n)
        norm = np.empty(n)
        iou = np.empty(n)
        valid = np.empty(n, dtype=np.bool_)
        for i in range(n):
            px, py, pw, ph = pred[i, 0], pred[i, 1], pred[i, 2], pred[i, 3]
            gx, gy, gw, gh = gt[i, 0], gt[i, 1], gt[i, 2], gt[i, 3]
            dx = (px + pw / 2) - (gx + gw / 2)
            dy = (py + ph / 2) - (gy + gh / 2)
            center[i] = np.sqrt(dx * dx + dy * dy)
            ok = gw > 0 and gh > 0
            valid[i] = ok
            if ok:
                ndx = dx / gw
                ndy = dy / gh
                norm[i] = np.sqrt(ndx * ndx + ndy * ndy)
            else:
                norm[i] = 0.0
            iw = min(px + pw, gx + gw) - max(px, gx)
            ih = min(py + ph, gy + gh) - max(py, gy)
            inter = max(iw, 0.0) * max(ih, 0.0)
            union = max(pw, 0.0) * max(ph, 0.0) + max(gw, 0.0) * max(gh, 0.0) - inter
            iou[i] = min(inter / union, 1.0) if union > 0 else 0.0
        return center, norm, iou, valid

    @numba.njit(cache=True)
    def _count_le_nb(values, thresholds):
        # thresholds ascending: bin each value at the first threshold >= it, then accumulate
        m = thresholds.shape[0]
        hist = np.zeros(m + 1, dtype=np.int64)
        for i in range(values.shape[0]):
            v = values[i]
            if v != v:
                continue
            lo, hi = 0, m
            while lo < hi:
                mid = (lo + hi) // 2
                if thresholds[mid] < v:
                    lo = mid + 1
                else:
                    hi = mid
            hist[lo] += 1
        out = np.empty(m, dtype=np.int64)
        acc = 0
        for j in range(m):
            acc += hist[j]
            out[j] = acc
        return out


def frame_metrics(pred: np.ndarray, gt: np.ndarray):
    pred = np.ascontiguousarray(pred, dtype=np.float64).reshape(-1, 4)
    gt = np.ascontiguousarray(gt, dtype=np.float64).reshape(-1, 4)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction and ground truth lengths differ: {len(pred)} vs {len(gt)}")
    if _backend == "numba":
        return _frame_metrics_nb(pred, gt)
    return frame_metrics_numpy(pred, gt)


def count_le(values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values, dtype=np.float64)
    thresholds = np.ascontiguousarray(thresholds, dtype=np.float64)
    if _backend == "numba":
        order = np.argsort(thresholds, kind="stable")
        if np.all(order == np.arange(len(order))):
            return _count_le_nb(values, thresholds)
        out = np.empty(len(order), dtype=np.int64)
        out[order] = _count_le_nb(values, thresholds[order])
        return out
    return count_le_numpy(values, thresholds)


def count_gt(values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    return len(values) - count_le(values, thresholds)
