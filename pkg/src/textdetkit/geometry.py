"""Exact 2-D geometry for text regions: polygons, boxes, bit masks, IoU.

Coordinate conventions (shared by every module):

* pixel (x, y) of a mask covers the half-open unit square
  [x, x+1) x [y, y+1); its center sits at (x + 0.5, y + 0.5),
* polygons are stored counter-clockwise by the shoelace sign,
* contours extracted from masks run along the pixel grid lines, so
  rasterizing them back with the even-odd pixel-center rule reproduces
  hole-free regions exactly.

Contours of components whose pixels touch only diagonally pass through the
shared corner twice; such polygons are weakly simple (edges meet at isolated
points but never cross) and every operation here handles them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import GeometryError, ShapeError

_AREA_EPS = 1e-12


# ---------------------------------------------------------------------------
# axis-aligned boxes


@dataclass(frozen=True)
class AxisBox:
    """Axis-aligned box in pixel units, xmin < xmax and ymin < ymax."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        vals = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError(f"box coordinates must be finite, got {vals}")
        object.__setattr__(self, "xmin", float(self.xmin))
        object.__setattr__(self, "ymin", float(self.ymin))
        object.__setattr__(self, "xmax", float(self.xmax))
        object.__setattr__(self, "ymax", float(self.ymax))
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise GeometryError(f"box must satisfy xmin < xmax and ymin < ymax, got {vals}")

    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)


def iou_box(a: AxisBox, b: AxisBox) -> float:
    """Standard interval-overlap IoU of two boxes."""
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area() + b.area() - inter
    return inter / union


# ---------------------------------------------------------------------------
# polygons


def _signed_area(vertices) -> float:
    acc = 0.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return acc / 2.0


@dataclass(frozen=True)
class Polygon:
    """Closed polygon with >= 3 vertices, stored counter-clockwise.

    Construction drops consecutive duplicate points, rejects (near-)zero
    signed area, and reverses clockwise input. Vertices may repeat at
    non-adjacent positions (pinch points of mask contours).
    """

    vertices: tuple

    def __post_init__(self):
        pts = []
        for p in self.vertices:
            x, y = float(p[0]), float(p[1])
            if not (math.isfinite(x) and math.isfinite(y)):
                raise GeometryError(f"polygon vertex is not finite: {p}")
            if not pts or (x, y) != pts[-1]:
                pts.append((x, y))
        if len(pts) > 1 and pts[0] == pts[-1]:
            pts.pop()
        if len(pts) < 3:
            raise GeometryError(f"polygon needs >= 3 distinct vertices, got {len(pts)}")
        area = _signed_area(pts)
        if abs(area) <= _AREA_EPS:
            raise GeometryError("degenerate polygon: signed area is zero")
        if area < 0.0:
            pts.reverse()
        object.__setattr__(self, "vertices", tuple(pts))

    def bounds(self) -> tuple[float, float, float, float]:
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return (min(xs), min(ys), max(xs), max(ys))

    def translated(self, dx: float, dy: float) -> "Polygon":
        return Polygon(tuple((x + dx, y + dy) for x, y in self.vertices))


def polygon_area(p: Polygon) -> float:
    """Shoelace area; positive because vertices are stored counter-clockwise."""
    return _signed_area(p.vertices)


def is_convex(p: Polygon) -> bool:
    verts = p.vertices
    n = len(verts)
    for i in range(n):
        ax, ay = verts[i - 1]
        bx, by = verts[i]
        cx, cy = verts[(i + 1) % n]
        cross = (bx - ax) * (cy - by) - (by - ay) * (cx - bx)
        if cross < 0.0:
            return False
    return True


def _line_intersect(s, e, a, b):
    # Intersection of segment s->e with the infinite line through a->b.
    dcx, dcy = b[0] - a[0], b[1] - a[1]
    dpx, dpy = e[0] - s[0], e[1] - s[1]
    denom = dpx * dcy - dpy * dcx
    t = ((a[0] - s[0]) * dcy - (a[1] - s[1]) * dcx) / denom
    return (s[0] + t * dpx, s[1] + t * dpy)


def _clip_convex(subject, clip):
    """Sutherland-Hodgman clip of a CCW subject by a convex CCW clip polygon."""
    output = list(subject)
    n = len(clip)
    for i in range(n):
        if not output:
            return []
        a = clip[i]
        b = clip[(i + 1) % n]
        dcx, dcy = b[0] - a[0], b[1] - a[1]

        def inside(p):
            return dcx * (p[1] - a[1]) - dcy * (p[0] - a[0]) >= 0.0

        input_list = output
        output = []
        s = input_list[-1]
        s_in = inside(s)
        for e in input_list:
            e_in = inside(e)
            if e_in:
                if not s_in:
                    output.append(_line_intersect(s, e, a, b))
                output.append(e)
            elif s_in:
                output.append(_line_intersect(s, e, a, b))
            s, s_in = e, e_in
    return output


def _clean_piece(verts):
    """Drop consecutive (near-)duplicates and reject slivers; None if empty."""
    pts = []
    for x, y in verts:
        if not pts or abs(x - pts[-1][0]) > 1e-12 or abs(y - pts[-1][1]) > 1e-12:
            pts.append((x, y))
    while len(pts) > 1 and abs(pts[0][0] - pts[-1][0]) <= 1e-12 and abs(pts[0][1] - pts[-1][1]) <= 1e-12:
        pts.pop()
    if len(pts) < 3:
        return None
    if abs(_signed_area(pts)) <= _AREA_EPS:
        return None
    return pts


def _convex_pieces(p: Polygon):
    """Decompose the even-odd region of a polygon into convex trapezoids.

    Bands between consecutive distinct vertex y-levels are cut by the active
    edges; pairs of crossings bound one trapezoid each. Robust for weakly
    simple polygons (mask contours with pinch points).
    """
    if is_convex(p):
        return [list(p.vertices)]
    verts = p.vertices
    n = len(verts)
    edges = []
    for i in range(n):
        v0, v1 = verts[i], verts[(i + 1) % n]
        if v0[1] != v1[1]:
            edges.append((v0, v1))
    levels = sorted({v[1] for v in verts})
    pieces = []
    for ya, yb in zip(levels, levels[1:]):
        active = []
        for (x0, y0), (x1, y1) in edges:
            if min(y0, y1) <= ya and max(y0, y1) >= yb:
                inv = 1.0 / (y1 - y0)
                xa = x0 + (ya - y0) * inv * (x1 - x0)
                xb = x0 + (yb - y0) * inv * (x1 - x0)
                active.append(((xa + xb) / 2.0, xa, xb))
        active.sort()
        for k in range(0, len(active) - 1, 2):
            _, la, lb = active[k]
            _, ra, rb = active[k + 1]
            quad = _clean_piece([(la, ya), (ra, ya), (rb, yb), (lb, yb)])
            if quad is not None:
                pieces.append(quad)
    return pieces


def polygon_intersection(a: Polygon, b: Polygon) -> list[Polygon]:
    """Intersection region of two polygons as a list of disjoint pieces.

    Convex inputs are clipped directly; otherwise both operands are cut into
    convex trapezoids and all cross pairs are clipped, so the returned pieces
    tile the intersection without overlap. An empty list means disjoint.
    """
    if is_convex(a) and is_convex(b):
        piece = _clean_piece(_clip_convex(list(a.vertices), list(b.vertices)))
        return [Polygon(tuple(piece))] if piece is not None else []
    out = []
    for pa in _convex_pieces(a):
        for pb in _convex_pieces(b):
            piece = _clean_piece(_clip_convex(pa, pb))
            if piece is not None:
                out.append(Polygon(tuple(piece)))
    return out


def iou_polygon(a: Polygon, b: Polygon) -> float:
    """|a n b| / |a u b| for polygons; symmetric by construction."""
    if b.vertices < a.vertices:  # canonical operand order => exact symmetry
        a, b = b, a
    inter = sum(polygon_area(p) for p in polygon_intersection(a, b))
    union = polygon_area(a) + polygon_area(b) - inter
    if union <= _AREA_EPS:
        raise GeometryError("IoU undefined: zero-area union")
    return min(max(inter / union, 0.0), 1.0)


# ---------------------------------------------------------------------------
# bit masks


@dataclass(eq=False)
class BitMask:
    """Row-major boolean pixel grid of a text region."""

    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.ascontiguousarray(np.asarray(self.bits, dtype=bool))
        if self.bits.shape != (self.height, self.width):
            raise ShapeError(
                f"mask bits shape {self.bits.shape} != (height, width) = "
                f"({self.height}, {self.width})"
            )

    @classmethod
    def from_array(cls, arr) -> "BitMask":
        arr = np.asarray(arr, dtype=bool)
        if arr.ndim != 2:
            raise ShapeError(f"mask array must be 2-D, got rank {arr.ndim}")
        return cls(width=arr.shape[1], height=arr.shape[0], bits=arr)

    @classmethod
    def empty(cls, width: int, height: int) -> "BitMask":
        return cls(width=width, height=height, bits=np.zeros((height, width), bool))

    def count(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not self.bits.any()

    def key(self) -> tuple:
        """Hashable identity for sorting / multiset comparisons."""
        return (self.width, self.height, self.bits.tobytes())

    def __eq__(self, other):
        if not isinstance(other, BitMask):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.bits, other.bits)
        )

    __hash__ = None

    def foreground_box(self) -> AxisBox | None:
        """Tight box around foreground pixels, or None for an empty mask."""
        rows = np.flatnonzero(self.bits.any(axis=1))
        if rows.size == 0:
            return None
        cols = np.flatnonzero(self.bits.any(axis=0))
        return AxisBox(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def iou_mask(a: BitMask, b: BitMask) -> float:
    """popcount(a AND b) / popcount(a OR b); 0 when both masks are empty."""
    if (a.width, a.height) != (b.width, b.height):
        raise ShapeError(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    inter = int(np.logical_and(a.bits, b.bits).sum())
    union = int(np.logical_or(a.bits, b.bits).sum())
    if union == 0:
        return 0.0
    return inter / union


# ---------------------------------------------------------------------------
# mask <-> polygon conversion


def _boundary_loops(comp: np.ndarray):
    """Closed grid-edge loops around a component, foreground kept on the left.

    Returns integer vertex loops; the outer boundary winds CCW (positive
    shoelace), hole boundaries wind CW. At pinch corners (two pixels of the
    component touching diagonally) the walk passes through to the diagonal
    pixel, so one component yields one outer loop.
    """
    h, w = comp.shape
    padded = np.zeros((h + 2, w + 2), bool)
    padded[1:-1, 1:-1] = comp
    edges = []  # (from_vertex, to_vertex, owner_pixel)
    edges_at: dict = {}

    def add(frm, to, owner):
        edges_at.setdefault(frm, []).append(len(edges))
        edges.append((frm, to, owner))

    ys, xs = np.nonzero(comp)
    for y, x in zip(ys.tolist(), xs.tolist()):
        owner = (x, y)
        if not padded[y, x + 1]:  # neighbor above
            add((x, y), (x + 1, y), owner)
        if not padded[y + 1, x + 2]:  # neighbor to the right
            add((x + 1, y), (x + 1, y + 1), owner)
        if not padded[y + 2, x + 1]:  # neighbor below
            add((x + 1, y + 1), (x, y + 1), owner)
        if not padded[y + 1, x]:  # neighbor to the left
            add((x, y + 1), (x, y), owner)

    used = [False] * len(edges)
    loops = []
    for start in range(len(edges)):
        if used[start]:
            continue
        used[start] = True
        frm, to, owner = edges[start]
        loop = [frm]
        cur_end, cur_owner = to, owner
        while True:
            cands = edges_at[cur_end]
            if len(cands) == 1:
                nxt = cands[0]
            else:
                # pinch vertex: continue along the diagonally-touching pixel
                nxt = next(i for i in cands if edges[i][2] != cur_owner)
            if nxt == start:
                break
            loop.append(cur_end)
            used[nxt] = True
            _, cur_end, cur_owner = edges[nxt]
        loops.append(loop)
    return loops


def _merge_collinear(loop):
    out = []
    n = len(loop)
    for i in range(n):
        px, py = loop[i - 1]
        x, y = loop[i]
        nx, ny = loop[(i + 1) % n]
        if (x - px) * (ny - y) - (y - py) * (nx - x) != 0:
            out.append((x, y))
    return out


def mask_to_polygons(m: BitMask) -> list[Polygon]:
    """Outer contours of the 8-connected foreground components of a mask.

    Each component contributes one CCW polygon tracing the pixel boundary
    grid lines (collinear vertices merged, holes ignored). Rasterizing the
    returned polygons with :func:`polygon_to_mask` reproduces hole-free
    components exactly.
    """
    if m.is_empty():
        return []
    labels, n_comp = ndimage.label(m.bits, structure=np.ones((3, 3), int))
    polygons = []
    for comp_id in range(1, n_comp + 1):
        comp = labels == comp_id
        for loop in _boundary_loops(comp):
            verts = _merge_collinear(loop)
            if _signed_area(verts) > 0:  # keep outer contours, drop holes
                polygons.append(Polygon(tuple((float(x), float(y)) for x, y in verts)))
    return polygons


def polygon_to_mask(p: Polygon, width: int, height: int) -> BitMask:
    """Rasterize a polygon: pixel centers inside by the even-odd rule.

    The polygon must lie within the [0, width] x [0, height] canvas. Slivers
    thinner than one pixel row may cover no pixel centers and rasterize to an
    empty mask; that is the documented contract, not an error.
    """
    if width < 1 or height < 1:
        raise GeometryError(f"canvas must be at least 1x1, got {width}x{height}")
    xmin, ymin, xmax, ymax = p.bounds()
    if xmin < -1e-9 or ymin < -1e-9 or xmax > width + 1e-9 or ymax > height + 1e-9:
        raise GeometryError(
            f"canvas {width}x{height} too small for polygon bounds "
            f"({xmin:.3f}, {ymin:.3f}, {xmax:.3f}, {ymax:.3f})"
        )
    bits = np.zeros((height, width), bool)
    crossings_by_row: dict[int, list[float]] = {}
    verts = p.vertices
    n = len(verts)
    for i in range(n):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % n]
        if y0 == y1:
            continue
        ylo, yhi = (y0, y1) if y0 < y1 else (y1, y0)
        r0 = max(math.ceil(ylo - 0.5), 0)
        r1 = min(math.ceil(yhi - 0.5), height)
        inv = 1.0 / (y1 - y0)
        for r in range(r0, r1):
            yc = r + 0.5
            crossings_by_row.setdefault(r, []).append(x0 + (yc - y0) * inv * (x1 - x0))
    for r, xs in crossings_by_row.items():
        xs.sort()
        for j in range(0, len(xs) - 1, 2):
            c0 = max(math.ceil(xs[j] - 0.5), 0)
            c1 = min(math.ceil(xs[j + 1] - 0.5), width)
            if c1 > c0:
                bits[r, c0:c1] = True
    return BitMask(width=width, height=height, bits=bits)
