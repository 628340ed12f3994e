"""Compiled inner loops for greedy cover on a chip grid.

Each item (box or proposal) is reduced to the rectangle of grid cells whose
chip covers it: columns ``lox..hix`` and rows ``loy..hiy`` (empty when
``lo > hi``). Candidate ``k`` is cell ``(k // nx, k % nx)``, row-major.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _q(v):
    # Same rounding as records.q.
    return np.rint(v * 1e6) / 1e6


@njit(cache=True)
def greedy_cells(lox, hix, loy, hiy, nx, ny, min_count):
    n = lox.shape[0]
    counts = np.zeros((ny, nx), dtype=np.int64)
    alive = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        if lox[i] <= hix[i] and loy[i] <= hiy[i]:
            alive[i] = True
            for r in range(loy[i], hiy[i] + 1):
                for c in range(lox[i], hix[i] + 1):
                    counts[r, c] += 1
    sel = np.empty(n, dtype=np.int64)
    cnt = np.empty(n, dtype=np.int64)
    m = 0
    while True:
        best = 0
        best_count = -1
        for r in range(ny):
            for c in range(nx):
                if counts[r, c] > best_count:
                    best_count = counts[r, c]
                    best = r * nx + c
        if best_count < min_count or best_count <= 0:
            break
        br = best // nx
        bc = best % nx
        sel[m] = best
        cnt[m] = best_count
        m += 1
        for i in range(n):
            if alive[i] and lox[i] <= bc <= hix[i] and loy[i] <= br <= hiy[i]:
                alive[i] = False
                for r in range(loy[i], hiy[i] + 1):
                    for c in range(lox[i], hix[i] + 1):
                        counts[r, c] -= 1
    return sel[:m], cnt[:m]


@njit(cache=True)
def points_in_chips(px, py, cx, cy, size):
    """Mask of points lying (edges inclusive) in any of the chips at ``(cx, cy)``."""
    out = np.zeros(px.shape[0], dtype=np.bool_)
    for i in range(px.shape[0]):
        for j in range(cx.shape[0]):
            if cx[j] <= px[i] <= cx[j] + size and cy[j] <= py[i] <= cy[j] + size:
                out[i] = True
                break
    return out


@njit(cache=True)
def boxes_in_chips(x1, y1, x2, y2, cx, cy, size):
    out = np.zeros(x1.shape[0], dtype=np.bool_)
    for i in range(x1.shape[0]):
        for j in range(cx.shape[0]):
            if cx[j] <= x1[i] and cy[j] <= y1[i] and x2[i] <= cx[j] + size and y2[i] <= cy[j] + size:
                out[i] = True
                break
    return out


@njit(cache=True)
def _axis_cells(starts, size, lo_edge, hi_edge):
    # First chip whose far edge reaches hi_edge, last chip starting at or before lo_edge.
    lo = np.searchsorted(starts + size, hi_edge, "left")
    hi = np.searchsorted(starts, lo_edge, "right") - 1
    return lo, hi


@njit(cache=True)
def mine_selection(
    gt, crowd, props, factors, extent, sizes, amin, amax, xs_all, xs_off, ys_all, ys_off, min_count, enclose_mode
):
    """All chip selections of one image.

    ``extent[s]`` is the resized content ``(w, h)`` of scale ``s``; scaled box
    corners are clipped to it.

    Returns ``(valid, uncoverable, n_pos, chips, start, crop_gt, crop_box)``;
    see :func:`_finish` for the chip and crop layout.
    """
    n_scales = factors.shape[0]
    n = gt.shape[0]
    m = props.shape[0]
    corners = np.empty((n_scales, n, 4))
    valid = np.zeros((n_scales, n), dtype=np.bool_)
    uncoverable = np.zeros((n_scales, n), dtype=np.bool_)
    pos = np.empty((n * n_scales, 2), dtype=np.int64)
    n_pos = 0
    area = gt[:, 2] * gt[:, 3]
    pos_start = np.zeros(n_scales + 1, dtype=np.int64)

    for s in range(n_scales):
        f = factors[s]
        size = sizes[s]
        xs = xs_all[xs_off[s]:xs_off[s + 1]]
        ys = ys_all[ys_off[s]:ys_off[s + 1]]
        idx = np.empty(n, dtype=np.int64)
        k = 0
        for i in range(n):
            x1 = gt[i, 0] * f
            y1 = gt[i, 1] * f
            w = gt[i, 2] * f
            h = gt[i, 3] * f
            corners[s, i, 0] = max(x1, 0.0)
            corners[s, i, 1] = max(y1, 0.0)
            corners[s, i, 2] = min(x1 + w, extent[s, 0])
            corners[s, i, 3] = min(y1 + h, extent[s, 1])
            if not crowd[i] and area[i] >= amin[s] and area[i] < amax[s]:
                valid[s, i] = True
                idx[k] = i
                k += 1
        pos_start[s] = n_pos
        if k > 0:
            idx = idx[:k]
            lox, hix = _axis_cells(xs, size, corners[s, idx, 0], corners[s, idx, 2])
            loy, hiy = _axis_cells(ys, size, corners[s, idx, 1], corners[s, idx, 3])
            for j in range(k):
                i = idx[j]
                w = gt[i, 2] * f
                h = gt[i, 3] * f
                if w < 1.0 or h < 1.0:
                    hix[j] = -1
                if lox[j] > hix[j] or loy[j] > hiy[j]:
                    uncoverable[s, i] = True
            sel, _ = greedy_cells(lox, hix, loy, hiy, xs.shape[0], ys.shape[0], 1)
            for j in range(sel.shape[0]):
                pos[n_pos, 0] = s
                pos[n_pos, 1] = sel[j]
                n_pos += 1
    pos_start[n_scales] = n_pos

    if m == 0:
        return _finish(corners, valid, uncoverable, pos[:n_pos], np.empty((0, 3), dtype=np.int64), xs_all, xs_off, ys_all, ys_off, sizes)

    parea = props[:, 2] * props[:, 3]
    covered = np.zeros(m, dtype=np.bool_)
    px1 = np.empty(m)
    py1 = np.empty(m)
    px2 = np.empty(m)
    py2 = np.empty(m)
    pcx = np.empty(m)
    pcy = np.empty(m)
    for s in range(n_scales):
        if pos_start[s + 1] == pos_start[s]:
            continue
        f = factors[s]
        size = sizes[s]
        nx = xs_off[s + 1] - xs_off[s]
        for i in range(m):
            if covered[i] or not (parea[i] >= amin[s] and parea[i] < amax[s]):
                continue
            x = props[i, 0] * f
            y = props[i, 1] * f
            w = props[i, 2] * f
            h = props[i, 3] * f
            for r in range(pos_start[s], pos_start[s + 1]):
                cell = pos[r, 1]
                ox = xs_all[xs_off[s] + cell % nx]
                oy = ys_all[ys_off[s] + cell // nx]
                if enclose_mode:
                    hit = (
                        ox <= max(x, 0.0)
                        and oy <= max(y, 0.0)
                        and min(x + w, extent[s, 0]) <= ox + size
                        and min(y + h, extent[s, 1]) <= oy + size
                    )
                else:
                    cx = x + w / 2
                    cy = y + h / 2
                    hit = ox <= cx <= ox + size and oy <= cy <= oy + size
                if hit:
                    covered[i] = True
                    break

    neg = np.empty((m * n_scales, 3), dtype=np.int64)
    n_neg = 0
    for s in range(n_scales):
        f = factors[s]
        size = sizes[s]
        xs = xs_all[xs_off[s]:xs_off[s + 1]]
        ys = ys_all[ys_off[s]:ys_off[s + 1]]
        k = 0
        for i in range(m):
            if covered[i] or not (parea[i] >= amin[s] and parea[i] < amax[s]):
                continue
            x = props[i, 0] * f
            y = props[i, 1] * f
            w = props[i, 2] * f
            h = props[i, 3] * f
            px1[k] = max(x, 0.0)
            py1[k] = max(y, 0.0)
            px2[k] = min(x + w, extent[s, 0])
            py2[k] = min(y + h, extent[s, 1])
            pcx[k] = x + w / 2
            pcy[k] = y + h / 2
            k += 1
        if k < min_count:
            continue
        if enclose_mode:
            lox, hix = _axis_cells(xs, size, px1[:k], px2[:k])
            loy, hiy = _axis_cells(ys, size, py1[:k], py2[:k])
        else:
            lox, hix = _axis_cells(xs, size, pcx[:k], pcx[:k])
            loy, hiy = _axis_cells(ys, size, pcy[:k], pcy[:k])
        sel, cnt = greedy_cells(lox, hix, loy, hiy, xs.shape[0], ys.shape[0], min_count)
        for j in range(sel.shape[0]):
            neg[n_neg, 0] = s
            neg[n_neg, 1] = sel[j]
            neg[n_neg, 2] = cnt[j]
            n_neg += 1
    return _finish(corners, valid, uncoverable, pos[:n_pos], neg[:n_neg], xs_all, xs_off, ys_all, ys_off, sizes)


@njit(cache=True)
def _finish(corners, valid, uncoverable, pos, neg, xs_all, xs_off, ys_all, ys_off, sizes):
    """Chip table ``(scale, ox, oy, count)`` and the ground truth clipped to each chip.

    Positive chips come first (count -1), then every negative pool entry.
    Crops of chip ``c`` are rows ``start[c]:start[c + 1]`` of ``crop_gt`` and
    ``crop_box`` (chip-local x, y, w, h).
    """
    n_chips = pos.shape[0] + neg.shape[0]
    n = corners.shape[1]
    chips = np.empty((n_chips, 4), dtype=np.int64)
    start = np.zeros(n_chips + 1, dtype=np.int64)
    crop_gt = np.empty(n_chips * n, dtype=np.int64)
    crop_box = np.empty((n_chips * n, 4))
    c = 0
    for r in range(n_chips):
        if r < pos.shape[0]:
            s = pos[r, 0]
            cell = pos[r, 1]
            count = -1
        else:
            s = neg[r - pos.shape[0], 0]
            cell = neg[r - pos.shape[0], 1]
            count = neg[r - pos.shape[0], 2]
        nx = xs_off[s + 1] - xs_off[s]
        ox = xs_all[xs_off[s] + cell % nx]
        oy = ys_all[ys_off[s] + cell // nx]
        ex = ox + sizes[s]
        ey = oy + sizes[s]
        chips[r, 0] = s
        chips[r, 1] = np.int64(ox)
        chips[r, 2] = np.int64(oy)
        chips[r, 3] = count
        start[r] = c
        for i in range(n):
            ix1 = max(corners[s, i, 0], ox)
            iy1 = max(corners[s, i, 1], oy)
            ix2 = min(corners[s, i, 2], ex)
            iy2 = min(corners[s, i, 3], ey)
            if ix2 - ix1 >= 1.0 and iy2 - iy1 >= 1.0:
                crop_gt[c] = i
                crop_box[c, 0] = _q(ix1 - ox)
                crop_box[c, 1] = _q(iy1 - oy)
                crop_box[c, 2] = _q(ix2 - ix1)
                crop_box[c, 3] = _q(iy2 - iy1)
                c += 1
    start[n_chips] = c
    return valid, uncoverable, pos.shape[0], chips, start, crop_gt[:c], crop_box[:c]
