# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled box kernels mirroring ``osad._pykernels``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _iou(const double[:, ::1] a, Py_ssize_t i,
                        const double[:, ::1] b, Py_ssize_t j) noexcept nogil:
    cdef double iw = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
    cdef double ih = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
    cdef double inter, area_a, area_b
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
    area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
    return inter / (area_a + area_b - inter)


def iou_matrix(a, b):
    cdef const double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], i, j
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] ov = out
    with nogil:
        for i in range(n):
            for j in range(m):
                ov[i, j] = _iou(av, i, bv, j)
    return out


def nms_sorted(boxes, double thresh):
    cdef const double[:, ::1] bv = np.ascontiguousarray(boxes, dtype=np.float64)
    cdef Py_ssize_t n = bv.shape[0], i, j, count = 0
    sup = np.zeros(n, dtype=np.uint8)
    keep = np.empty(n, dtype=np.intp)
    cdef unsigned char[::1] sv = sup
    cdef Py_ssize_t[::1] kv = keep
    with nogil:
        for i in range(n):
            if sv[i]:
                continue
            kv[count] = i
            count += 1
            for j in range(i + 1, n):
                if not sv[j] and _iou(bv, i, bv, j) >= thresh:
                    sv[j] = 1
    return keep[:count].tolist()


def greedy_match(det_boxes, gt_boxes, double thresh):
    cdef const double[:, ::1] dv = np.ascontiguousarray(det_boxes, dtype=np.float64)
    cdef const double[:, ::1] gv = np.ascontiguousarray(gt_boxes, dtype=np.float64)
    cdef Py_ssize_t n = dv.shape[0], m = gv.shape[0], i, j, best
    cdef double v, best_iou
    matched = np.zeros(m, dtype=np.uint8)
    assigned = np.full(n, -1, dtype=np.intp)
    cdef unsigned char[::1] mv = matched
    cdef Py_ssize_t[::1] av = assigned
    with nogil:
        for i in range(n):
            best = -1
            best_iou = -1.0
            for j in range(m):
                if mv[j]:
                    continue
                v = _iou(dv, i, gv, j)
                if v > best_iou:
                    best = j
                    best_iou = v
            if best >= 0 and best_iou >= thresh:
                mv[best] = 1
                av[i] = best
    return assigned.tolist(), [bool(x) for x in matched]
