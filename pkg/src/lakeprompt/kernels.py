"""Pixel-loop kernels behind morphology, clustering and contour tracing.

Each kernel exists twice: a scalar loop compiled with numba and a vectorized
numpy equivalent. ``IMPLS`` exposes both so tests and the benchmark can run
them side by side; the module-level names dispatch on ``_accel.BACKEND``.

Masks are ``uint8`` arrays of shape ``(H, W)`` holding 0/1.
"""
import numpy as np

from ._accel import BACKEND, njit

# Moore neighbourhood, clockwise on screen (y grows downwards), starting west.
DIR_DX = np.array([-1, -1, 0, 1, 1, 1, 0, -1], dtype=np.int64)
DIR_DY = np.array([0, -1, -1, -1, 0, 1, 1, 1], dtype=np.int64)


def disc_offsets(eps):
    """Integer offsets ``(dy, dx)`` with ``dx**2 + dy**2 <= eps**2``, self included."""
    r = int(np.floor(eps))
    out = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)
           if dx * dx + dy * dy <= eps * eps]
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def canonical_labels(labels):
    """Renumber labels >= 0 in order of first row-major appearance."""
    flat = labels.ravel()
    fg = flat >= 0
    if not fg.any():
        return labels.astype(np.int64, copy=True)
    uniq, first = np.unique(flat[fg], return_index=True)
    order = uniq[np.argsort(first)]
    remap = np.full(int(flat.max()) + 1, -1, dtype=np.int64)
    remap[order] = np.arange(order.size)
    out = np.full(flat.shape, -1, dtype=np.int64)
    out[fg] = remap[flat[fg]]
    return out.reshape(labels.shape)


# --- dilation / erosion ----------------------------------------------------

@njit
def _dilate_loop(mask, se):
    h, w = mask.shape
    sh, sw = se.shape
    ry, rx = (sh - 1) // 2, (sw - 1) // 2
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            hit = False
            for i in range(sh):
                yy = y + i - ry
                if yy < 0 or yy >= h:
                    continue
                for j in range(sw):
                    if se[i, j] == 0:
                        continue
                    xx = x + j - rx
                    if xx < 0 or xx >= w:
                        continue
                    if mask[yy, xx] != 0:
                        hit = True
                        break
                if hit:
                    break
            if hit:
                out[y, x] = 1
    return out


@njit
def _erode_loop(mask, se):
    # out-of-bounds window cells are ignored (neutral for AND)
    h, w = mask.shape
    sh, sw = se.shape
    ry, rx = (sh - 1) // 2, (sw - 1) // 2
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            ok = True
            for i in range(sh):
                yy = y + i - ry
                if yy < 0 or yy >= h:
                    continue
                for j in range(sw):
                    if se[i, j] == 0:
                        continue
                    xx = x + j - rx
                    if xx < 0 or xx >= w:
                        continue
                    if mask[yy, xx] == 0:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                out[y, x] = 1
    return out


def _shifted_windows(mask, se, fill):
    h, w = mask.shape
    sh, sw = se.shape
    ry, rx = (sh - 1) // 2, (sw - 1) // 2
    padded = np.pad(mask, ((ry, ry), (rx, rx)), constant_values=fill)
    for i, j in zip(*np.nonzero(se)):
        yield padded[i:i + h, j:j + w]


def _dilate_vec(mask, se):
    out = np.zeros(mask.shape, dtype=bool)
    for win in _shifted_windows(mask, se, 0):
        out |= win != 0
    return out.astype(np.uint8)


def _erode_vec(mask, se):
    out = np.ones(mask.shape, dtype=bool)
    for win in _shifted_windows(mask, se, 1):
        out &= win != 0
    return out.astype(np.uint8)


# --- DBSCAN on the pixel grid -----------------------------------------------

@njit
def _dbscan_loop(mask, offsets, min_pts):
    h, w = mask.shape
    n_off = offsets.shape[0]
    count = np.zeros((h, w), dtype=np.int64)
    for y in range(h):
        for x in range(w):
            if mask[y, x] == 0:
                continue
            c = 0
            for k in range(n_off):
                yy = y + offsets[k, 0]
                xx = x + offsets[k, 1]
                if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] != 0:
                    c += 1
            count[y, x] = c
    labels = np.full((h, w), -1, dtype=np.int64)
    stack = np.empty(h * w, dtype=np.int64)
    cluster = 0
    for y in range(h):
        for x in range(w):
            if mask[y, x] == 0 or count[y, x] < min_pts or labels[y, x] >= 0:
                continue
            labels[y, x] = cluster
            top = 0
            stack[top] = y * w + x
            top += 1
            while top > 0:
                top -= 1
                p = stack[top]
                py = p // w
                px = p - py * w
                for k in range(n_off):
                    yy = py + offsets[k, 0]
                    xx = px + offsets[k, 1]
                    if yy < 0 or yy >= h or xx < 0 or xx >= w:
                        continue
                    if mask[yy, xx] == 0 or labels[yy, xx] >= 0:
                        continue
                    labels[yy, xx] = cluster
                    if count[yy, xx] >= min_pts:
                        stack[top] = yy * w + xx
                        top += 1
            cluster += 1
    return labels


def _shift(a, dy, dx, fill):
    """``out[y, x] = a[y + dy, x + dx]`` with ``fill`` outside."""
    h, w = a.shape
    out = np.full_like(a, fill)
    ys, yd = (slice(dy, h), slice(0, h - dy)) if dy >= 0 else (slice(0, h + dy), slice(-dy, h))
    xs, xd = (slice(dx, w), slice(0, w - dx)) if dx >= 0 else (slice(0, w + dx), slice(-dx, w))
    out[yd, xd] = a[ys, xs]
    return out


def _dbscan_vec(mask, offsets, min_pts):
    h, w = mask.shape
    fg = mask != 0
    count = np.zeros((h, w), dtype=np.int64)
    for dy, dx in offsets:
        count += _shift(fg, dy, dx, False)
    core = fg & (count >= min_pts)
    big = np.int64(h * w)
    # min-label propagation over the core graph: label = smallest core index
    lab = np.where(core, np.arange(h * w, dtype=np.int64).reshape(h, w), big)
    while True:
        new = lab.copy()
        for dy, dx in offsets:
            new = np.minimum(new, _shift(lab, dy, dx, big))
        new = np.where(core, new, big)
        if np.array_equal(new, lab):
            break
        lab = new
    # border points join the earliest-seeded neighbouring cluster
    border = np.full((h, w), big, dtype=np.int64)
    for dy, dx in offsets:
        border = np.minimum(border, _shift(lab, dy, dx, big))
    out = np.where(core, lab, np.where(fg & (border < big), border, -1))
    return out.astype(np.int64)


# --- background reachable from the image border (4-connected) -------------

@njit
def _border_reach_loop(background):
    h, w = background.shape
    seen = np.zeros((h, w), dtype=np.uint8)
    stack = np.empty(h * w, dtype=np.int64)
    top = 0
    for y in range(h):
        for x in range(w):
            if (y == 0 or y == h - 1 or x == 0 or x == w - 1) and background[y, x] != 0:
                seen[y, x] = 1
                stack[top] = y * w + x
                top += 1
    while top > 0:
        top -= 1
        p = stack[top]
        py = p // w
        px = p - py * w
        for k in range(4):
            if k == 0:
                yy, xx = py - 1, px
            elif k == 1:
                yy, xx = py + 1, px
            elif k == 2:
                yy, xx = py, px - 1
            else:
                yy, xx = py, px + 1
            if 0 <= yy < h and 0 <= xx < w and background[yy, xx] != 0 and seen[yy, xx] == 0:
                seen[yy, xx] = 1
                stack[top] = yy * w + xx
                top += 1
    return seen


def _border_reach_vec(background):
    bg = background != 0
    seen = np.zeros_like(bg)
    seen[0, :] = bg[0, :]
    seen[-1, :] = bg[-1, :]
    seen[:, 0] |= bg[:, 0]
    seen[:, -1] |= bg[:, -1]
    while True:
        grown = seen.copy()
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            grown |= _shift(seen, dy, dx, False)
        grown &= bg
        if np.array_equal(grown, seen):
            return seen.astype(np.uint8)
        seen = grown


# --- Moore boundary following -----------------------------------------------

@njit
def moore_trace(labels, label, sy, sx, dir_dx, dir_dy, out):
    """Trace the outer boundary of component ``label`` from its first pixel.

    ``(sy, sx)`` must be the component's first row-major pixel, so its west
    neighbour is outside the component. Writes ``(x, y)`` rows into ``out``
    and returns how many were written.
    """
    h, w = labels.shape
    out[0, 0] = sx
    out[0, 1] = sy
    n = 1
    cy, cx = sy, sx
    back = 0
    first_y, first_x = -1, -1
    while True:
        found = -1
        for i in range(1, 9):
            d = (back + i) % 8
            ny = cy + dir_dy[d]
            nx = cx + dir_dx[d]
            if 0 <= ny < h and 0 <= nx < w and labels[ny, nx] == label:
                found = d
                break
        if found < 0:
            break
        ny = cy + dir_dy[found]
        nx = cx + dir_dx[found]
        if cy == sy and cx == sx:
            if first_y < 0:
                first_y, first_x = ny, nx
            elif ny == first_y and nx == first_x:
                break
        pd = (found + 7) % 8
        bx = cx + dir_dx[pd] - nx
        by = cy + dir_dy[pd] - ny
        for d in range(8):
            if dir_dx[d] == bx and dir_dy[d] == by:
                back = d
                break
        cy, cx = ny, nx
        out[n, 0] = cx
        out[n, 1] = cy
        n += 1
    if n > 1 and out[n - 1, 0] == sx and out[n - 1, 1] == sy:
        n -= 1
    return n


IMPLS = {
    "numba": {
        "dilate": _dilate_loop,
        "erode": _erode_loop,
        "dbscan": _dbscan_loop,
        "border_reach": _border_reach_loop,
    },
    "numpy": {
        "dilate": _dilate_vec,
        "erode": _erode_vec,
        "dbscan": _dbscan_vec,
        "border_reach": _border_reach_vec,
    },
}

_active = IMPLS[BACKEND]
dilate_once = _active["dilate"]
erode_once = _active["erode"]
dbscan_grid = _active["dbscan"]
border_reach = _active["border_reach"]
