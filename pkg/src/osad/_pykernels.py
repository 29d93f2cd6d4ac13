"""Pure-Python box kernels; the reference the compiled kernels must agree with."""


def _iou(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def iou_matrix(a, b):
    import numpy as np

    rows_a = [tuple(r) for r in a.tolist()]
    rows_b = [tuple(r) for r in b.tolist()]
    out = np.zeros((len(rows_a), len(rows_b)), dtype=np.float64)
    for i, ra in enumerate(rows_a):
        for j, rb in enumerate(rows_b):
            out[i, j] = _iou(ra, rb)
    return out


def nms_sorted(boxes, thresh):
    """Greedy suppression over boxes already in processing order; returns kept positions."""
    rows = [tuple(r) for r in boxes.tolist()]
    suppressed = [False] * len(rows)
    keep = []
    for i, ri in enumerate(rows):
        if suppressed[i]:
            continue
        keep.append(i)
        for j in range(i + 1, len(rows)):
            if not suppressed[j] and _iou(ri, rows[j]) >= thresh:
                suppressed[j] = True
    return keep


def greedy_match(det_boxes, gt_boxes, thresh):
    """Match detections (in processing order) to the best still-unmatched GT.

    Returns ``(assigned, gt_matched)`` where ``assigned[i]`` is the matched GT
    position or -1.
    """
    dets = [tuple(r) for r in det_boxes.tolist()]
    gts = [tuple(r) for r in gt_boxes.tolist()]
    gt_matched = [False] * len(gts)
    assigned = [-1] * len(dets)
    for i, d in enumerate(dets):
        best, best_iou = -1, -1.0
        for j, g in enumerate(gts):
            if gt_matched[j]:
                continue
            v = _iou(d, g)
            if v > best_iou:
                best, best_iou = j, v
        if best >= 0 and best_iou >= thresh:
            gt_matched[best] = True
            assigned[i] = best
    return assigned, gt_matched
