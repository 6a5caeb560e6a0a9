"""Hot inner loops, each in a numba and a vectorized-numpy flavour.

The public names (``lk_refine``, ``paint_boxes``, ``knn``) dispatch on
``_accel.USE_NUMBA``. Both flavours are importable directly so tests and
the benchmark can compare them.
"""
import numpy as np

from . import _accel
from ._accel import njit

# Lucas-Kanade iteration stops once the update is below this many pixels.
LK_EPS = 0.01
# Minimum eigenvalue of the (window-averaged) structure tensor to attempt a solve.
LK_MIN_EIG = 1e-4


# ---------------------------------------------------------------------------
# bilinear sampling


@njit
def _sample_nb(img, x, y):
    h, w = img.shape
    if x < 0.0:
        x = 0.0
    elif x > w - 1.0:
        x = w - 1.0
    if y < 0.0:
        y = 0.0
    elif y > h - 1.0:
        y = h - 1.0
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def sample_bilinear(img, x, y):
    """Vectorized bilinear lookup with edge clamping; ``x``/``y`` any shape."""
    h, w = img.shape
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


# ---------------------------------------------------------------------------
# pyramidal Lucas-Kanade refinement at one pyramid level


@njit
def lk_refine_numba(prev, nxt, gx, gy, px, py, dx, dy, radius, iters, mask):
    n = px.shape[0]
    side = 2 * radius + 1
    area = side * side
    out_dx = dx.copy()
    out_dy = dy.copy()
    energy = np.zeros(n)
    tmpl = np.empty(area)
    wgx = np.empty(area)
    wgy = np.empty(area)
    for i in range(n):
        if not mask[i]:
            continue
        gxx = 0.0
        gxy = 0.0
        gyy = 0.0
        k = 0
        for oy in range(-radius, radius + 1):
            for ox in range(-radius, radius + 1):
                sx = px[i] + ox
                sy = py[i] + oy
                tmpl[k] = _sample_nb(prev, sx, sy)
                a = _sample_nb(gx, sx, sy)
                b = _sample_nb(gy, sx, sy)
                wgx[k] = a
                wgy[k] = b
                gxx += a * a
                gxy += a * b
                gyy += b * b
                k += 1
        gxx /= area
        gxy /= area
        gyy /= area
        energy[i] = gxx + gyy
        tr = gxx + gyy
        disc = np.sqrt(max((gxx - gyy) * (gxx - gyy) + 4.0 * gxy * gxy, 0.0))
        if 0.5 * (tr - disc) < LK_MIN_EIG:
            continue
        det = gxx * gyy - gxy * gxy
        ux = out_dx[i]
        uy = out_dy[i]
        for _ in range(iters):
            bx = 0.0
            by = 0.0
            k = 0
            for oy in range(-radius, radius + 1):
                for ox in range(-radius, radius + 1):
                    e = tmpl[k] - _sample_nb(nxt, px[i] + ox + ux, py[i] + oy + uy)
                    bx += e * wgx[k]
                    by += e * wgy[k]
                    k += 1
            bx /= area
            by /= area
            ddx = (gyy * bx - gxy * by) / det
            ddy = (gxx * by - gxy * bx) / det
            ux += ddx
            uy += ddy
            if ddx * ddx + ddy * ddy < LK_EPS * LK_EPS:
                break
        out_dx[i] = ux
        out_dy[i] = uy
    return out_dx, out_dy, energy


def lk_refine_numpy(prev, nxt, gx, gy, px, py, dx, dy, radius, iters, mask):
    ux = dx.astype(np.float64).copy()
    uy = dy.astype(np.float64).copy()
    energy = np.zeros(px.shape[0])
    sel = np.flatnonzero(mask)
    if sel.size == 0:
        return ux, uy, energy
    px = px[sel]
    py = py[sel]
    off = np.arange(-radius, radius + 1, dtype=np.float64)
    oy, ox = np.meshgrid(off, off, indexing="ij")
    ox = ox.ravel()[None, :]
    oy = oy.ravel()[None, :]
    area = ox.shape[1]
    sx = px[:, None] + ox
    sy = py[:, None] + oy
    tmpl = sample_bilinear(prev, sx, sy)
    wgx = sample_bilinear(gx, sx, sy)
    wgy = sample_bilinear(gy, sx, sy)
    gxx = (wgx * wgx).sum(axis=1) / area
    gxy = (wgx * wgy).sum(axis=1) / area
    gyy = (wgy * wgy).sum(axis=1) / area
    energy[sel] = gxx + gyy
    tr = gxx + gyy
    disc = np.sqrt(np.maximum((gxx - gyy) ** 2 + 4.0 * gxy * gxy, 0.0))
    active = 0.5 * (tr - disc) >= LK_MIN_EIG
    det = np.where(active, gxx * gyy - gxy * gxy, 1.0)
    vx = ux[sel]
    vy = uy[sel]
    for _ in range(iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        warped = sample_bilinear(nxt, sx[idx] + vx[idx, None], sy[idx] + vy[idx, None])
        e = tmpl[idx] - warped
        bx = (e * wgx[idx]).sum(axis=1) / area
        by = (e * wgy[idx]).sum(axis=1) / area
        ddx = (gyy[idx] * bx - gxy[idx] * by) / det[idx]
        ddy = (gxx[idx] * by - gxy[idx] * bx) / det[idx]
        vx[idx] += ddx
        vy[idx] += ddy
        active[idx[ddx * ddx + ddy * ddy < LK_EPS * LK_EPS]] = False
    ux[sel] = vx
    uy[sel] = vy
    return ux, uy, energy


def lk_refine(prev, nxt, gx, gy, px, py, dx, dy, radius, iters=20, mask=None):
    """Iterative LK update of per-node displacements ``(dx, dy)``.

    Nodes with ``mask`` False are passed through untouched. Returns the
    refined displacements and the window-averaged gradient energy of
    ``prev`` around each processed node (0 elsewhere).
    """
    if mask is None:
        mask = np.ones(len(px), dtype=np.bool_)
    args = (
        np.ascontiguousarray(prev, dtype=np.float64),
        np.ascontiguousarray(nxt, dtype=np.float64),
        np.ascontiguousarray(gx, dtype=np.float64),
        np.ascontiguousarray(gy, dtype=np.float64),
        np.ascontiguousarray(px, dtype=np.float64),
        np.ascontiguousarray(py, dtype=np.float64),
        np.ascontiguousarray(dx, dtype=np.float64),
        np.ascontiguousarray(dy, dtype=np.float64),
        int(radius),
        int(iters),
        np.ascontiguousarray(mask, dtype=np.bool_),
    )
    if _accel.USE_NUMBA:
        return lk_refine_numba(*args)
    return lk_refine_numpy(*args)


# ---------------------------------------------------------------------------
# oriented box rasterization


@njit
def paint_boxes_numba(canvas, cx, cy, ux, uy, half_len, half_wid, value):
    h, w = canvas.shape
    for i in range(cx.shape[0]):
        ext = np.sqrt(half_len[i] * half_len[i] + half_wid[i] * half_wid[i])
        x0 = max(int(np.floor(cx[i] - ext)), 0)
        x1 = min(int(np.ceil(cx[i] + ext)), w - 1)
        y0 = max(int(np.floor(cy[i] - ext)), 0)
        y1 = min(int(np.ceil(cy[i] + ext)), h - 1)
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                rx = x - cx[i]
                ry = y - cy[i]
                along = rx * ux[i] + ry * uy[i]
                across = -rx * uy[i] + ry * ux[i]
                if abs(along) <= half_len[i] and abs(across) <= half_wid[i]:
                    canvas[y, x] = value[i]
    return canvas


def paint_boxes_numpy(canvas, cx, cy, ux, uy, half_len, half_wid, value):
    # Boxes arrive sorted by ascending value, so "last write wins" is a per-pixel max.
    if cx.size == 0:
        return canvas
    h, w = canvas.shape
    ext = int(np.ceil(np.sqrt(half_len.max() ** 2 + half_wid.max() ** 2))) + 1
    off = np.arange(-ext, ext + 1)
    oy, ox = np.meshgrid(off, off, indexing="ij")
    px = np.floor(cx)[:, None].astype(np.int64) + ox.ravel()[None, :]
    py = np.floor(cy)[:, None].astype(np.int64) + oy.ravel()[None, :]
    rx = px - cx[:, None]
    ry = py - cy[:, None]
    along = rx * ux[:, None] + ry * uy[:, None]
    across = -rx * uy[:, None] + ry * ux[:, None]
    hit = (
        (np.abs(along) <= half_len[:, None])
        & (np.abs(across) <= half_wid[:, None])
        & (px >= 0)
        & (px < w)
        & (py >= 0)
        & (py < h)
    )
    vals = np.broadcast_to(value[:, None], hit.shape)[hit]
    np.maximum.at(canvas, (py[hit], px[hit]), vals.astype(canvas.dtype))
    return canvas


def paint_boxes(canvas, cx, cy, ux, uy, half_len, half_wid, value):
    """Draw oriented rectangles onto ``canvas`` in the given order.

    A pixel is covered when its centre lies inside the rectangle. Later
    boxes overwrite earlier ones, so callers sort by ascending ``value``.
    """
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (cx, cy, ux, uy, half_len, half_wid)]
    value = np.ascontiguousarray(value, dtype=canvas.dtype)
    if _accel.USE_NUMBA:
        return paint_boxes_numba(canvas, *args, value)
    return paint_boxes_numpy(canvas, *args, value)


# ---------------------------------------------------------------------------
# brute-force k nearest neighbours


@njit
def knn_numba(query, ref, k):
    nq = query.shape[0]
    nr = ref.shape[0]
    dim = query.shape[1]
    idx = np.empty((nq, k), dtype=np.int64)
    dist = np.empty((nq, k))
    d = np.empty(nr)
    for i in range(nq):
        for j in range(nr):
            acc = 0.0
            for c in range(dim):
                diff = query[i, c] - ref[j, c]
                acc += diff * diff
            d[j] = acc
        order = np.argsort(d, kind="mergesort")
        for m in range(k):
            idx[i, m] = order[m]
            dist[i, m] = d[order[m]]
    return idx, dist


def knn_numpy(query, ref, k, chunk=256):
    nq = query.shape[0]
    idx = np.empty((nq, k), dtype=np.int64)
    dist = np.empty((nq, k))
    for start in range(0, nq, chunk):
        q = query[start:start + chunk]
        d = ((q[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        idx[start:start + chunk] = order
        dist[start:start + chunk] = np.take_along_axis(d, order, axis=1)
    return idx, dist


def knn(query, ref, k):
    """Indices and squared distances of the ``k`` nearest rows of ``ref``.

    Ties resolve toward the lower reference index.
    """
    query = np.ascontiguousarray(np.atleast_2d(query), dtype=np.float64)
    ref = np.ascontiguousarray(np.atleast_2d(ref), dtype=np.float64)
    if k < 1 or k > ref.shape[0]:
        raise ValueError(f"k={k} outside 1..{ref.shape[0]}")
    if query.shape[1] != ref.shape[1]:
        raise ValueError("query and reference dimensions differ")
    if _accel.USE_NUMBA:
        return knn_numba(query, ref, int(k))
    return knn_numpy(query, ref, int(k))
