"""Interpreted twins of the compiled kernels in ``_kernels.pyx``.

Same signatures, same outputs; used when the extension is not built or when
``CRYOSEG_PURE_PYTHON=1`` is set.
"""
import heapq

import numpy as np
from scipy import ndimage


def flood(elevation, markers):
    elevation = np.ascontiguousarray(elevation, dtype=np.float64)
    lab = np.array(markers, dtype=np.int64, copy=True)
    h, w = elevation.shape
    flat_elev = elevation.ravel().tolist()
    flat = lab.ravel()
    heap = []
    age = 0
    for idx in np.flatnonzero(flat).tolist():
        heap.append((flat_elev[idx], age, idx))
        age += 1
    heapq.heapify(heap)
    labels = flat.tolist()
    while heap:
        _, _, idx = heapq.heappop(heap)
        r, c = divmod(idx, w)
        cur = labels[idx]
        for nr, nc in ((r - 1, c), (r, c - 1), (r, c + 1), (r + 1, c)):
            if nr < 0 or nr >= h or nc < 0 or nc >= w:
                continue
            nidx = nr * w + nc
            if labels[nidx] != 0:
                continue
            labels[nidx] = cur
            heapq.heappush(heap, (flat_elev[nidx], age, nidx))
            age += 1
    return np.asarray(labels, dtype=np.int64).reshape(h, w)


def contingency(a, b, na, nb):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape:
        raise ValueError("label vectors differ in length")
    flat = a * (nb + 1) + b
    return np.bincount(flat, minlength=(na + 1) * (nb + 1)).reshape(na + 1, nb + 1).astype(np.int64)


def label_boundaries(labels, thickness):
    labels = np.asarray(labels, dtype=np.int64)
    size = 2 * thickness + 1
    hi = ndimage.maximum_filter(labels, size=size, mode="nearest")
    lo = ndimage.minimum_filter(labels, size=size, mode="nearest")
    return ((labels > 0) & (hi != lo)).astype(np.uint8)
