"""RECIST measurement geometry.

Coordinates are (x, y) in pixel units with integer coordinates at pixel
centers; row i / column j of a mask is the pixel centered at (j, i).
Masks are boolean [H, W] arrays, contours are (n, 2) arrays of (x, y)
points ordered counterclockwise (positive shoelace area).
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError

PERP_TOLERANCE_DEG = 5.0
AXIS_ANGLE_WARN_DEG = 15.0


@dataclass
class RecistMeasurement:
    """Long and perpendicular short axis, endpoints in pixel coordinates."""

    long_axis: tuple  # ((x1, y1), (x2, y2))
    short_axis: tuple  # ((x3, y3), (x4, y4))
    spacing_mm: float = 1.0

    @property
    def long_len_px(self):
        (x1, y1), (x2, y2) = self.long_axis
        return float(np.hypot(x2 - x1, y2 - y1))

    @property
    def short_len_px(self):
        (x1, y1), (x2, y2) = self.short_axis
        return float(np.hypot(x2 - x1, y2 - y1))

    @property
    def long_len_mm(self):
        return self.long_len_px * self.spacing_mm

    @property
    def short_len_mm(self):
        return self.short_len_px * self.spacing_mm

    def endpoints(self):
        return np.array([*self.long_axis, *self.short_axis], dtype=np.float64)

    def center(self):
        """Intersection point of the two axis segments."""
        c = _segment_intersection(self.long_axis, self.short_axis)
        if c is None:
            raise DataError("measurement axes do not intersect")
        return c

    def validate(self):
        """Raise DataError on degenerate axes, warn on a skewed axis angle."""
        if self.spacing_mm <= 0:
            raise DataError("spacing must be positive")
        if self.long_len_px <= 0 or self.short_len_px <= 0:
            raise DataError("measurement axis has zero length")
        self.center()
        u = _unit(np.subtract(self.long_axis[1], self.long_axis[0]))
        v = _unit(np.subtract(self.short_axis[1], self.short_axis[0]))
        angle = np.degrees(np.arccos(np.clip(abs(float(u @ v)), 0.0, 1.0)))
        if abs(90.0 - angle) > AXIS_ANGLE_WARN_DEG:
            warnings.warn(
                f"axis angle {angle:.1f} deg is outside 90 +/- {AXIS_ANGLE_WARN_DEG} deg",
                stacklevel=2,
            )
        return self

    def to_record(self):
        coords = self.endpoints().ravel()
        return ",".join(f"{v:.6g}" for v in coords) + f",{self.spacing_mm:.6g}"

    @classmethod
    def from_record(cls, line):
        parts = [p.strip() for p in line.strip().split(",")]
        if len(parts) != 9:
            raise DataError(f"measurement record needs 9 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise DataError(f"bad measurement record: {exc}") from exc
        return cls(
            long_axis=((vals[0], vals[1]), (vals[2], vals[3])),
            short_axis=((vals[4], vals[5]), (vals[6], vals[7])),
            spacing_mm=vals[8],
        )


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.hypot(v[0], v[1])
    if n == 0:
        raise DataError("zero-length axis")
    return v / n


def _segment_intersection(seg_a, seg_b, tol=1e-9):
    """Intersection point of two segments, or None (parallel / outside)."""
    p = np.asarray(seg_a[0], dtype=np.float64)
    r = np.asarray(seg_a[1], dtype=np.float64) - p
    q = np.asarray(seg_b[0], dtype=np.float64)
    s = np.asarray(seg_b[1], dtype=np.float64) - q
    denom = r[0] * s[1] - r[1] * s[0]
    if abs(denom) < tol:
        return None
    d = q - p
    t = (d[0] * s[1] - d[1] * s[0]) / denom
    u = (d[0] * r[1] - d[1] * r[0]) / denom
    if -tol <= t <= 1 + tol and -tol <= u <= 1 + tol:
        return p + t * r
    return None


# ---------------------------------------------------------------------------
# pseudo-mask synthesis


def pseudo_mask(measurement, canvas_shape):
    """Rasterize the four quarter-ellipse quadrants spanned by the two axes.

    The frame is rotated so the long axis is horizontal; each quadrant is a
    quarter-ellipse whose semi-axes are the adjacent half-axis lengths. A
    pixel belongs to the mask when its center passes the implicit-ellipse
    test of its quadrant.
    """
    h, w = canvas_shape
    c = measurement.center()
    p1, p2 = (np.asarray(p, dtype=np.float64) for p in measurement.long_axis)
    q1, q2 = (np.asarray(p, dtype=np.float64) for p in measurement.short_axis)

    u = _unit(p2 - p1)
    v = np.array([-u[1], u[0]])

    a_p1 = float((p1 - c) @ u)
    a_p2 = float((p2 - c) @ u)
    a_neg, a_pos = sorted((a_p1, a_p2))
    b_q1 = float((q1 - c) @ v)
    b_q2 = float((q2 - c) @ v)
    b_neg, b_pos = sorted((b_q1, b_q2))
    if a_neg > 0 or a_pos < 0 or b_neg > 0 or b_pos < 0:
        raise DataError("axis intersection does not lie between both endpoint pairs")

    xs = np.arange(w, dtype=np.float64) - c[0]
    ys = np.arange(h, dtype=np.float64) - c[1]
    dx, dy = np.meshgrid(xs, ys)
    su = dx * u[0] + dy * u[1]
    sv = dx * v[0] + dy * v[1]
    ra = np.where(su >= 0, a_pos, -a_neg)
    rb = np.where(sv >= 0, b_pos, -b_neg)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (su / ra) ** 2 + (sv / rb) ** 2
    return np.nan_to_num(val, nan=np.inf) <= 1.0


# ---------------------------------------------------------------------------
# contour extraction

# Moore neighborhood scanned clockwise (y grows downward): E, SE, S, SW, W, NW, N, NE
_MOORE = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))


def largest_component(mask):
    """Boolean mask of the largest 8-connected foreground component."""
    if not mask.any():
        raise DataError("empty mask")
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if count == 1:
        return labels == 1
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == int(sizes.argmax())


def mask_to_contour(mask):
    """Outer boundary of the largest component via Moore boundary tracing.

    Returns an (n, 2) int array of (x, y) pixel centers ordered so the
    shoelace area is positive (counterclockwise in these coordinates).
    A single-pixel component yields a degenerate 1-point contour.
    """
    comp = largest_component(np.asarray(mask, dtype=bool))
    h, w = comp.shape
    rows, cols = np.nonzero(comp)
    start = (int(rows[0]), int(cols[0]))  # topmost, then leftmost

    def fg(r, c):
        return 0 <= r < h and 0 <= c < w and comp[r, c]

    if comp.sum() == 1:
        return np.array([[start[1], start[0]]], dtype=np.int64)

    boundary = [start]
    cur = start
    back = 4  # the west neighbor of start is background by construction
    first_move = None
    limit = 4 * int(comp.sum()) + 8
    while len(boundary) <= limit:
        moved = False
        for step in range(1, 9):
            d = (back + step) % 8
            dx, dy = _MOORE[d]
            nr, nc = cur[0] + dy, cur[1] + dx
            if fg(nr, nc):
                if cur == start:
                    if first_move is None:
                        first_move = d
                    elif d == first_move:
                        # Jacob's criterion: about to repeat the initial move
                        pts = np.array([[c_, r_] for r_, c_ in boundary[:-1]], dtype=np.int64)
                        return _counterclockwise(pts)
                cur = (nr, nc)
                boundary.append(cur)
                back = (d + 4) % 8  # points from the new pixel to the previous one
                moved = True
                break
        if not moved:
            break  # cannot happen for components of size > 1
    if len(boundary) > limit:
        raise DataError("contour tracing failed to terminate")
    pts = np.array([[c_, r_] for r_, c_ in boundary], dtype=np.int64)
    return _counterclockwise(pts)


def _signed_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _counterclockwise(pts):
    if len(pts) >= 3 and _signed_area(pts) < 0:
        return pts[::-1].copy()
    return pts


# ---------------------------------------------------------------------------
# diameter estimation


def estimate_recist(contour, spacing_mm=1.0):
    """Recover a RECIST measurement from a closed contour.

    Long axis: the contour point pair at maximal distance (exhaustive).
    Short axis: the longest point pair within PERP_TOLERANCE_DEG of
    perpendicular to the long axis whose segment crosses it. When no such
    chord exists the short axis degenerates to the long-axis midpoint.
    """
    pts = np.asarray(contour, dtype=np.float64)
    if len(pts) < 3:
        raise DataError("contour needs at least 3 points")

    diff = pts[:, None, :] - pts[None, :, :]
    d2 = (diff ** 2).sum(axis=2)
    i, j = np.unravel_index(int(d2.argmax()), d2.shape)
    p1, p2 = pts[i], pts[j]
    u = _unit(p2 - p1)

    ii, jj = np.triu_indices(len(pts), k=1)
    w = pts[jj] - pts[ii]
    lengths = np.hypot(w[:, 0], w[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        cos_to_long = np.abs(w @ u) / lengths
    perp_ok = cos_to_long <= np.sin(np.radians(PERP_TOLERANCE_DEG)) + 1e-12
    perp_ok &= lengths > 0

    # chord must cross the long-axis segment
    a, b = pts[ii], pts[jj]
    cross_ok = _segments_cross(a, b, p1, p2)
    valid = perp_ok & cross_ok
    if valid.any():
        cand = np.where(valid, lengths, -1.0)
        best = int(cand.argmax())
        q1, q2 = pts[ii[best]], pts[jj[best]]
        degenerate = False
    else:
        mid = (p1 + p2) / 2.0
        q1 = q2 = mid
        degenerate = True

    m = RecistMeasurement(
        long_axis=(tuple(p1), tuple(p2)),
        short_axis=(tuple(q1), tuple(q2)),
        spacing_mm=spacing_mm,
    )
    m.degenerate_short = degenerate
    return m


def _segments_cross(a, b, p1, p2):
    """Vectorized test: do segments (a[i], b[i]) intersect segment (p1, p2)?"""

    def orient(o, s, t):
        return (s[..., 0] - o[..., 0]) * (t[..., 1] - o[..., 1]) - (
            s[..., 1] - o[..., 1]
        ) * (t[..., 0] - o[..., 0])

    p1 = np.broadcast_to(p1, a.shape)
    p2 = np.broadcast_to(p2, a.shape)
    d1 = orient(a, b, p1) * orient(a, b, p2)
    d2 = orient(p1, p2, a) * orient(p1, p2, b)
    return (d1 <= 1e-9) & (d2 <= 1e-9)


# ---------------------------------------------------------------------------
# surrogate segmentation metrics


def point_to_polyline_distance(point, pts):
    """Min distance from one point to the closed polygon through pts."""
    p = np.asarray(point, dtype=np.float64)
    a = np.asarray(pts, dtype=np.float64)
    if len(a) == 1:
        return float(np.hypot(*(p - a[0])))
    b = np.roll(a, -1, axis=0)
    ab = b - a
    ap = p[None, :] - a
    denom = (ab ** 2).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.clip(np.where(denom > 0, (ap * ab).sum(axis=1) / denom, 0.0), 0.0, 1.0)
    proj = a + t[:, None] * ab
    d = p[None, :] - proj
    return float(np.hypot(d[:, 0], d[:, 1]).min())


def endpoint_contour_distance(gt, contour):
    """Mean distance (mm) from the 4 measurement endpoints to the contour."""
    pts = np.asarray(contour, dtype=np.float64)
    dists = [point_to_polyline_distance(e, pts) for e in gt.endpoints()]
    return float(np.mean(dists)) * gt.spacing_mm


def diameter_error(est, gt):
    """Mean absolute diameter error in mm over the long and short axis."""
    return 0.5 * (
        abs(est.long_len_mm - gt.long_len_mm) + abs(est.short_len_mm - gt.short_len_mm)
    )


# ---------------------------------------------------------------------------
# mask file I/O (PGM, 8-bit binary)


def write_mask_pgm(path, mask):
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write((mask.astype(np.uint8) * 255).tobytes())


def read_mask_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval > 255:
        raise DataError(f"{path}: 16-bit PGM not supported")
    pixels = np.frombuffer(data[pos : pos + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise DataError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w) > 127
