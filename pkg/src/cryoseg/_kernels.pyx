# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: priority-flood watershed, label contingency, boundary scan.

Semantics are identical to ``cryoseg._kernels_py``; the test-suite runs both.
"""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef struct Entry:
    double key
    long long age
    Py_ssize_t index


cdef inline bint _less(Entry a, Entry b) nogil:
    if a.key < b.key:
        return True
    if a.key > b.key:
        return False
    return a.age < b.age


cdef inline void _push(Entry* heap, Py_ssize_t* size, Entry e) nogil:
    cdef Py_ssize_t i = size[0]
    cdef Py_ssize_t parent
    size[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if _less(e, heap[parent]):
            heap[i] = heap[parent]
            i = parent
        else:
            break
    heap[i] = e


cdef inline Entry _pop(Entry* heap, Py_ssize_t* size) nogil:
    cdef Entry top = heap[0]
    cdef Entry last
    cdef Py_ssize_t i = 0, child, n
    size[0] -= 1
    n = size[0]
    if n == 0:
        return top
    last = heap[n]
    while True:
        child = 2 * i + 1
        if child >= n:
            break
        if child + 1 < n and _less(heap[child + 1], heap[child]):
            child += 1
        if _less(heap[child], last):
            heap[i] = heap[child]
            i = child
        else:
            break
    heap[i] = last
    return top


def flood(double[:, ::1] elevation, long long[:, ::1] markers):
    """Marker-driven priority flood over a 4-connected grid.

    Pixels are labelled when first reached and queued by (elevation, age);
    initial markers enter the queue in raster order.
    """
    cdef Py_ssize_t h = elevation.shape[0], w = elevation.shape[1]
    cdef Py_ssize_t n = h * w
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.array(markers, dtype=np.int64, copy=True)
    cdef long long[:, ::1] lab = out
    cdef Entry* heap
    cdef Py_ssize_t size = 0, r, c, k, nr, nc
    cdef long long age = 0
    cdef long long cur
    cdef Entry e, ne
    cdef int d
    cdef int* dr = [-1, 0, 0, 1]
    cdef int* dc = [0, -1, 1, 0]

    if n == 0:
        return out
    heap = <Entry*> malloc(n * sizeof(Entry))
    if heap == NULL:
        raise MemoryError()
    try:
        with nogil:
            for r in range(h):
                for c in range(w):
                    if lab[r, c] != 0:
                        e.key = elevation[r, c]
                        e.age = age
                        e.index = r * w + c
                        age += 1
                        _push(heap, &size, e)
            while size > 0:
                e = _pop(heap, &size)
                r = e.index // w
                c = e.index - r * w
                cur = lab[r, c]
                for d in range(4):
                    nr = r + dr[d]
                    nc = c + dc[d]
                    if nr < 0 or nr >= h or nc < 0 or nc >= w:
                        continue
                    if lab[nr, nc] != 0:
                        continue
                    lab[nr, nc] = cur
                    ne.key = elevation[nr, nc]
                    ne.age = age
                    ne.index = nr * w + nc
                    age += 1
                    _push(heap, &size, ne)
    finally:
        free(heap)
    return out


def contingency(long long[::1] a, long long[::1] b, Py_ssize_t na, Py_ssize_t nb):
    """Joint histogram of two compact label vectors (values in 0..na, 0..nb)."""
    cdef cnp.ndarray[cnp.int64_t, ndim=2] table = np.zeros((na + 1, nb + 1), dtype=np.int64)
    cdef long long[:, ::1] t = table
    cdef Py_ssize_t i, m = a.shape[0]
    if b.shape[0] != m:
        raise ValueError("label vectors differ in length")
    with nogil:
        for i in range(m):
            t[a[i], b[i]] += 1
    return table


def label_boundaries(long long[:, ::1] labels, int thickness):
    """Foreground pixels within Chebyshev ``thickness`` of a differing label.

    Out-of-image positions are clamped to the nearest edge pixel.
    """
    cdef Py_ssize_t h = labels.shape[0], w = labels.shape[1]
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] out = np.zeros((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] o = out
    cdef Py_ssize_t r, c, rr, cc, r0, r1, c0, c1
    cdef long long v
    cdef bint hit
    with nogil:
        for r in range(h):
            r0 = r - thickness if r >= thickness else 0
            r1 = r + thickness if r + thickness < h else h - 1
            for c in range(w):
                v = labels[r, c]
                if v == 0:
                    continue
                c0 = c - thickness if c >= thickness else 0
                c1 = c + thickness if c + thickness < w else w - 1
                hit = False
                rr = r0
                while rr <= r1 and not hit:
                    cc = c0
                    while cc <= c1:
                        if labels[rr, cc] != v:
                            hit = True
                            break
                        cc += 1
                    rr += 1
                if hit:
                    o[r, c] = 1
    return out
