"""Rotated-rectangle geometry in the ground plane.

IoU between oriented boxes is computed exactly: the intersection of two
convex quads is built by Sutherland-Hodgman half-plane clipping and measured
with the shoelace formula.  A batched NumPy variant of the same clipping
serves the pairwise-matrix case; it is checked against the scalar path in the
test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import Box3D

#: Absolute tolerance for the orientation (half-plane side) tests.
CLIP_EPS = 1e-12

XY = tuple[float, float]


@dataclass(frozen=True)
class BevPolygon:
    """Convex polygon in the BEV plane, counter-clockwise, >= 3 vertices."""

    vertices: tuple[XY, ...]

    def __post_init__(self) -> None:
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        n = len(verts)
        if n < 3:
            raise ValueError(f"polygon needs at least 3 vertices, got {n}")
        for i in range(n):
            ax, ay = verts[i]
            bx, by = verts[(i + 1) % n]
            cx, cy = verts[(i + 2) % n]
            cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if cross < -CLIP_EPS:
                raise ValueError("vertices must wind counter-clockwise and be convex")

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)


def _corner_list(x: float, y: float, l: float, w: float, yaw: float) -> list[XY]:
    c, s = math.cos(yaw), math.sin(yaw)
    ux, uy = c * 0.5 * l, s * 0.5 * l   # half-extent along heading
    wx, wy = -s * 0.5 * w, c * 0.5 * w  # half-extent to the left
    return [
        (x + ux + wx, y + uy + wy),
        (x - ux + wx, y - uy + wy),
        (x - ux - wx, y - uy - wy),
        (x + ux - wx, y + uy - wy),
    ]


def bev_corners(box: Box3D) -> BevPolygon:
    """The four BEV corners of a box, counter-clockwise.

    At yaw 0 the first corner is (x + l/2, y + w/2), i.e. front-left.
    """
    return BevPolygon(tuple(_corner_list(box.x, box.y, box.l, box.w, box.yaw)))


def polygon_area(vertices: Sequence[XY]) -> float:
    """Shoelace area of a CCW polygon; degenerate inputs give 0."""
    n = len(vertices)
    if n < 3:
        return 0.0
    s = 0.0
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return max(0.5 * s, 0.0)


def clip_convex(subject: Sequence[XY], clip: Sequence[XY]) -> list[XY]:
    """Clip a convex CCW polygon by another via successive half-planes."""
    output = list(subject)
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = output
        output = []
        dist = [ex * (py - ay) - ey * (px - ax) for px, py in inp]
        k = len(inp)
        for j in range(k):
            jn = (j + 1) % k
            ds, de = dist[j], dist[jn]
            s_in = ds >= -CLIP_EPS
            e_in = de >= -CLIP_EPS
            if e_in:
                if not s_in:
                    output.append(_edge_hit(inp[j], inp[jn], ds, de))
                output.append(inp[jn])
            elif s_in:
                output.append(_edge_hit(inp[j], inp[jn], ds, de))
    return output


def _edge_hit(p: XY, q: XY, dp: float, dq: float) -> XY:
    t = dp / (dp - dq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def convex_intersection_area(p: BevPolygon, q: BevPolygon) -> float:
    """Area of the intersection of two convex polygons.

    Edge-touching contact counts as zero area.
    """
    return polygon_area(clip_convex(p.vertices, q.vertices))


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Exact BEV IoU of two boxes, in [0, 1].

    The operand order is canonicalized first so bev_iou(a, b) and
    bev_iou(b, a) run the identical arithmetic and agree bit for bit.
    """
    ka = (a.x, a.y, a.l, a.w, a.yaw)
    kb = (b.x, b.y, b.l, b.w, b.yaw)
    if ka > kb:
        a, b = b, a
    inter = polygon_area(clip_convex(_corner_list(a.x, a.y, a.l, a.w, a.yaw),
                                     _corner_list(b.x, b.y, b.l, b.w, b.yaw)))
    if inter <= 0.0:
        return 0.0
    union = a.l * a.w + b.l * b.w - inter
    if union <= 0.0:
        return 1.0
    return min(max(inter / union, 0.0), 1.0)


def box_params(boxes: Iterable[Box3D]) -> np.ndarray:
    """Stack (x, y, l, w, yaw) rows for the batched geometry routines."""
    rows = [(b.x, b.y, b.l, b.w, b.yaw) for b in boxes]
    if not rows:
        return np.empty((0, 5))
    return np.asarray(rows, dtype=np.float64)


def _corners_batch(params: np.ndarray) -> np.ndarray:
    """(n, 5) parameter rows -> (n, 4, 2) CCW corners; mirrors _corner_list."""
    x, y, l, w, yaw = params.T
    c, s = np.cos(yaw), np.sin(yaw)
    ux, uy = c * 0.5 * l, s * 0.5 * l
    wx, wy = -s * 0.5 * w, c * 0.5 * w
    out = np.empty((params.shape[0], 4, 2))
    out[:, 0, 0] = x + ux + wx
    out[:, 0, 1] = y + uy + wy
    out[:, 1, 0] = x - ux + wx
    out[:, 1, 1] = y - uy + wy
    out[:, 2, 0] = x - ux - wx
    out[:, 2, 1] = y - uy - wy
    out[:, 3, 0] = x + ux - wx
    out[:, 3, 1] = y + uy - wy
    return out


def _clip_halfplane_batch(px: np.ndarray, py: np.ndarray, counts: np.ndarray,
                          use_y: bool, flip: bool, offset: np.ndarray,
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One axis-aligned half-plane clip step over a batch of padded polygons.

    ``px``/``py`` are (n, k) padded coordinate arrays with per-row vertex
    ``counts``.  The half-plane keeps slots whose signed distance
    ``offset - coord`` (``flip``) or ``coord + offset`` is ``>= -CLIP_EPS``,
    where ``coord`` is the x or y column per ``use_y``.  A convex k-gon clips
    to at most k + 1 vertices, which bounds the output padding.
    """
    n, k = px.shape
    rows = np.arange(n)[:, None]
    idx = np.arange(k)[None, :]
    counts_col = counts[:, None]
    valid = idx < counts_col
    nxt = idx + 1
    nxt = np.where(nxt >= counts_col, 0, nxt)
    pxn = px[rows, nxt]
    pyn = py[rows, nxt]
    a, an = (py, pyn) if use_y else (px, pxn)
    d = offset - a if flip else a + offset
    dn = offset - an if flip else an + offset
    s_in = d >= -CLIP_EPS
    e_in = dn >= -CLIP_EPS
    # Interleaved emission slots per edge: crossing point, then endpoint.
    flags = np.empty((n, 2 * k), dtype=bool)
    flags[:, 0::2] = (s_in != e_in) & valid
    flags[:, 1::2] = e_in & valid
    pos = np.cumsum(flags, axis=1, dtype=np.int32)
    new_counts = pos[:, -1].astype(np.int64)
    r, c = np.nonzero(flags)
    p = pos[r, c] - 1
    src = c >> 1
    is_end = (c & 1).astype(bool)
    new_px = np.zeros((n, k + 1))
    new_py = np.zeros((n, k + 1))
    re, ce = r[is_end], src[is_end]
    new_px[re, p[is_end]] = pxn[re, ce]
    new_py[re, p[is_end]] = pyn[re, ce]
    # Crossings are sparse (at most two per row), so interpolate only there.
    hit = ~is_end
    rc, cc = r[hit], src[hit]
    dc = d[rc, cc]
    # Opposite eps-signs at a crossing make the denominator nonzero.
    t = dc / (dc - dn[rc, cc])
    pxc = px[rc, cc]
    pyc = py[rc, cc]
    new_px[rc, p[hit]] = pxc + t * (pxn[rc, cc] - pxc)
    new_py[rc, p[hit]] = pyc + t * (pyn[rc, cc] - pyc)
    return new_px, new_py, new_counts


def _shoelace_batch(px: np.ndarray, py: np.ndarray, counts: np.ndarray) -> np.ndarray:
    n, k = px.shape
    rows = np.arange(n)[:, None]
    idx = np.arange(k)[None, :]
    valid = idx < counts[:, None]
    nxt = idx + 1
    nxt = np.where(nxt >= counts[:, None], 0, nxt)
    cross = px * py[rows, nxt] - px[rows, nxt] * py
    area = 0.5 * np.where(valid, cross, 0.0).sum(axis=1)
    return np.maximum(area, 0.0)


def _intersection_areas_batch(subject: np.ndarray, clip_params: np.ndarray,
                              value_floor: float | None = None,
                              pair_areas: tuple[np.ndarray, np.ndarray] | None = None,
                              ) -> np.ndarray:
    """Intersection areas for (n, 4, 2) subject quads against (n, 5) clip boxes.

    The subjects are moved into each clip box's local frame, where the clip
    rectangle is axis-aligned and every half-plane test is a single coordinate
    comparison; the Sutherland-Hodgman recursion itself is unchanged.

    With ``value_floor`` set (and ``pair_areas`` the two footprint areas),
    rows whose IoU upper bound — from the subject's axis-aligned extent —
    falls below ``value_floor - 1e-9`` are reported as zero without clipping.
    The margin exceeds the bound's arithmetic error by orders of magnitude,
    so comparisons of the result against any threshold >= value_floor agree
    exactly with the full computation.
    """
    cx, cy, cl, cw, cyaw = clip_params.T
    cos, sin = np.cos(cyaw), np.sin(cyaw)
    dx = subject[:, :, 0] - cx[:, None]
    dy = subject[:, :, 1] - cy[:, None]
    px = cos[:, None] * dx + sin[:, None] * dy
    py = cos[:, None] * dy - sin[:, None] * dx
    hl = 0.5 * cl
    hw = 0.5 * cw
    pxmin = px.min(axis=1)
    pxmax = px.max(axis=1)
    pymin = py.min(axis=1)
    pymax = py.max(axis=1)
    # A subject whose corners all lie beyond one slab clips to nothing; skip
    # the recursion for those rows (the result is identically zero).
    alive = ~((pxmax < -hl - CLIP_EPS) | (pxmin > hl + CLIP_EPS)
              | (pymax < -hw - CLIP_EPS) | (pymin > hw + CLIP_EPS))
    if value_floor is not None:
        area_a, area_b = pair_areas
        inter_ub = (np.maximum(np.minimum(pxmax, hl) - np.maximum(pxmin, -hl), 0.0)
                    * np.maximum(np.minimum(pymax, hw) - np.maximum(pymin, -hw), 0.0))
        np.minimum(inter_ub, np.minimum(area_a, area_b), out=inter_ub)
        alive &= inter_ub >= (value_floor - 1e-9) * (area_a + area_b - inter_ub)
    areas = np.zeros(subject.shape[0])
    if not alive.any():
        return areas
    if not alive.all():
        px, py, hl, hw = px[alive], py[alive], hl[alive], hw[alive]
    hl = hl[:, None]
    hw = hw[:, None]
    counts = np.full(px.shape[0], 4, dtype=np.int64)
    px, py, counts = _clip_halfplane_batch(px, py, counts, False, True, hl)
    px, py, counts = _clip_halfplane_batch(px, py, counts, True, True, hw)
    px, py, counts = _clip_halfplane_batch(px, py, counts, False, False, hl)
    px, py, counts = _clip_halfplane_batch(px, py, counts, True, False, hw)
    areas[alive] = _shoelace_batch(px, py, counts)
    return areas


_TRIANGLES: dict[int, np.ndarray] = {}


def _upper_triangle(n: int) -> np.ndarray:
    """Cached boolean upper triangle (diagonal included)."""
    tri = _TRIANGLES.get(n)
    if tri is None:
        idx = np.arange(n)
        tri = idx[:, None] <= idx[None, :]
        _TRIANGLES[n] = tri
    return tri


def _candidate_pairs(a: np.ndarray, b: np.ndarray, pair_mask: np.ndarray | None,
                     symmetric: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Indices of pairs close enough for their footprints to overlap.

    ``symmetric`` (valid only when ``a`` and ``b`` are the same set) keeps
    just the upper triangle plus the diagonal; the caller mirrors the
    values, which canonical pair ordering makes exact.
    """
    ra = 0.5 * np.hypot(a[:, 2], a[:, 3])
    rb = ra if symmetric else 0.5 * np.hypot(b[:, 2], b[:, 3])
    dx = a[:, 0, None] - b[None, :, 0]
    dy = a[:, 1, None] - b[None, :, 1]
    cand = dx * dx + dy * dy < (ra[:, None] + rb[None, :]) ** 2
    if pair_mask is not None:
        cand &= pair_mask
    if symmetric:
        cand &= _upper_triangle(a.shape[0])
    return np.nonzero(cand)


def _pair_ious(pa: np.ndarray, pb: np.ndarray,
               value_floor: float | None = None) -> np.ndarray:
    """IoU for row-aligned (n, 5) parameter pairs.

    Each pair's operand order is canonicalized first (same rule as bev_iou),
    so the result is independent of orientation and of how pairs are batched
    together: iou_matrix(a, b).T == iou_matrix(b, a) holds exactly.
    ``value_floor`` propagates to the intersection kernel (see there); it is
    only safe when the caller thresholds the result at or above the floor.
    """
    swap = np.zeros(pa.shape[0], dtype=bool)
    undecided = np.ones(pa.shape[0], dtype=bool)
    for c in range(5):
        swap |= undecided & (pa[:, c] > pb[:, c])
        undecided &= pa[:, c] == pb[:, c]
    subj = np.where(swap[:, None], pb, pa)
    clip = np.where(swap[:, None], pa, pb)
    area_a = pa[:, 2] * pa[:, 3]
    area_b = pb[:, 2] * pb[:, 3]
    inter = _intersection_areas_batch(
        _corners_batch(subj), clip, value_floor,
        None if value_floor is None else (area_a, area_b))
    union = area_a + area_b - inter
    vals = np.where((inter > 0.0) & (union > 0.0), inter / np.maximum(union, 1e-300), 0.0)
    np.clip(vals, 0.0, 1.0, out=vals)
    return vals


def iou_matrix(params_a: np.ndarray, params_b: np.ndarray,
               pair_mask: np.ndarray | None = None) -> np.ndarray:
    """Pairwise BEV IoU between two sets of (x, y, l, w, yaw) rows.

    Pairs whose centers are farther apart than the sum of half-diagonals
    cannot overlap and are skipped; ``pair_mask`` (n, m) restricts the
    computation further, e.g. to same-class pairs.
    """
    symmetric = params_a is params_b and (
        pair_mask is None or bool(np.array_equal(pair_mask, pair_mask.T)))
    a = np.asarray(params_a, dtype=np.float64).reshape(-1, 5)
    b = a if symmetric else np.asarray(params_b, dtype=np.float64).reshape(-1, 5)
    n, m = a.shape[0], b.shape[0]
    out = np.zeros((n, m))
    if n == 0 or m == 0:
        return out
    ii, jj = _candidate_pairs(a, b, pair_mask, symmetric)
    if ii.size == 0:
        return out
    out[ii, jj] = _pair_ious(a[ii], b[jj])
    if symmetric:
        out[jj, ii] = out[ii, jj]
    return out


def iou_matrix_many(blocks: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray | None]],
                    value_floor: float | None = None) -> list[np.ndarray]:
    """``iou_matrix`` over many (params_a, params_b, pair_mask) blocks at once.

    Returns exactly the matrices the per-block calls would, but runs a single
    clipping pass over the concatenated candidate pairs, which amortizes the
    fixed NumPy dispatch cost when the blocks are small (e.g. one per frame).

    ``value_floor`` declares the smallest threshold the caller will compare
    entries against: values provably below it may come back as zero, which
    skips their exact clipping while leaving every such comparison identical
    to the full computation.
    """
    outs: list[np.ndarray] = []
    pending: list[tuple[int, np.ndarray, np.ndarray, bool]] = []
    rows_a: list[np.ndarray] = []
    rows_b: list[np.ndarray] = []
    for bi, (params_a, params_b, pair_mask) in enumerate(blocks):
        symmetric = params_a is params_b and (
            pair_mask is None or bool(np.array_equal(pair_mask, pair_mask.T)))
        a = np.asarray(params_a, dtype=np.float64).reshape(-1, 5)
        b = a if symmetric else np.asarray(params_b, dtype=np.float64).reshape(-1, 5)
        outs.append(np.zeros((a.shape[0], b.shape[0])))
        if a.shape[0] == 0 or b.shape[0] == 0:
            continue
        ii, jj = _candidate_pairs(a, b, pair_mask, symmetric)
        if ii.size:
            pending.append((bi, ii, jj, symmetric))
            rows_a.append(a[ii])
            rows_b.append(b[jj])
    if not pending:
        return outs
    vals = _pair_ious(np.concatenate(rows_a), np.concatenate(rows_b), value_floor)
    offset = 0
    for bi, ii, jj, symmetric in pending:
        outs[bi][ii, jj] = vals[offset:offset + ii.size]
        if symmetric:
            outs[bi][jj, ii] = outs[bi][ii, jj]
        offset += ii.size
    return outs
