import itertools

import numpy as np
import pytest

from lesionkit.errors import DataError
from lesionkit.geometry import (
    RecistMeasurement,
    diameter_error,
    endpoint_contour_distance,
    estimate_recist,
    largest_component,
    mask_to_contour,
    pseudo_mask,
    read_mask_pgm,
    write_mask_pgm,
)


def make_measurement(cx, cy, a1, a2, b1, b2, angle_deg, spacing=1.0):
    """Measurement with half-axis lengths a1/a2 (long) and b1/b2 (short)."""
    t = np.radians(angle_deg)
    u = np.array([np.cos(t), np.sin(t)])
    v = np.array([-u[1], u[0]])
    c = np.array([cx, cy], dtype=float)
    return RecistMeasurement(
        long_axis=(tuple(c - a1 * u), tuple(c + a2 * u)),
        short_axis=(tuple(c - b1 * v), tuple(c + b2 * v)),
        spacing_mm=spacing,
    )


def rasterize_disc(cx, cy, r, shape):
    """Independent oracle: pixel centers inside the implicit circle."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def rasterize_ellipse(cx, cy, a, b, shape):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    return ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0


class TestPseudoMask:
    def test_symmetric_ellipse_area(self):
        m = RecistMeasurement(((0, 10), (20, 10)), ((10, 4), (10, 16)))
        mask = pseudo_mask(m, (24, 24))
        area = mask.sum()
        assert abs(area - np.pi * 10 * 6) <= 0.10 * np.pi * 10 * 6
        np.testing.assert_array_equal(mask, rasterize_ellipse(10, 10, 10, 6, (24, 24)))

    def test_circle_equals_disc_oracle(self):
        m = make_measurement(12, 12, 8, 8, 8, 8, 0.0)
        mask = pseudo_mask(m, (25, 25))
        np.testing.assert_array_equal(mask, rasterize_disc(12, 12, 8, (25, 25)))

    def test_asymmetric_half_axes_extent(self):
        m = RecistMeasurement(((6, 10), (18, 10)), ((10, 5), (10, 15)))
        # center at x=10: left half 4 px, right half 8 px
        mask = pseudo_mask(m, (21, 25))
        cols = np.nonzero(mask[10])[0]
        assert cols.min() == 6 and cols.max() == 18
        assert cols.max() - cols.min() + 1 == 13

    def test_non_intersecting_axes_rejected(self):
        m = RecistMeasurement(((0, 0), (10, 0)), ((20, -5), (20, 5)))
        with pytest.raises(DataError):
            pseudo_mask(m, (30, 30))

    def test_rotation_invariance_of_area(self):
        base = make_measurement(30, 30, 11, 11, 6, 6, 0.0)
        area0 = pseudo_mask(base, (61, 61)).sum()
        for angle in (15, 30, 45, 75):
            rot = make_measurement(30, 30, 11, 11, 6, 6, angle)
            area = pseudo_mask(rot, (61, 61)).sum()
            assert abs(area - area0) <= 0.03 * area0


class TestContour:
    def test_single_pixel_degenerate(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 3] = True
        contour = mask_to_contour(mask)
        assert contour.shape == (1, 2)
        np.testing.assert_array_equal(contour[0], [3, 2])

    def test_three_by_three_square_hand_trace(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[1:4, 1:4] = True
        contour = mask_to_contour(mask)
        expected = [(1, 1), (2, 1), (3, 1), (3, 2), (3, 3), (2, 3), (1, 3), (1, 2)]
        assert [tuple(p) for p in contour] == expected

    def test_counterclockwise_signed_area(self):
        mask = np.zeros((10, 12), dtype=bool)
        mask[2:7, 3:9] = True
        pts = mask_to_contour(mask).astype(float)
        x, y = pts[:, 0], pts[:, 1]
        area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        assert area > 0

    def test_largest_component_rule(self):
        mask = np.zeros((20, 20), dtype=bool)
        mask[1:2, 1:6] = True  # 5 px
        mask[8:13, 5:15] = True  # 50 px
        contour = mask_to_contour(mask)
        assert contour[:, 1].min() >= 8  # only the big component traced
        comp = largest_component(mask)
        assert comp.sum() == 50

    def test_empty_mask_rejected(self):
        with pytest.raises(DataError, match="empty"):
            mask_to_contour(np.zeros((4, 4), dtype=bool))

    def test_contour_closed_adjacency(self):
        mask = rasterize_disc(10, 10, 6, (21, 21))
        pts = mask_to_contour(mask)
        gaps = np.abs(np.diff(np.vstack([pts, pts[:1]]), axis=0)).max(axis=1)
        assert gaps.max() <= 1  # 8-connected chain, closed


class TestEstimateRecist:
    def brute_force_long(self, pts):
        best = (0.0, None)
        for p, q in itertools.combinations(range(len(pts)), 2):
            d = float(np.hypot(*(pts[p] - pts[q])))
            if d > best[0]:
                best = (d, (p, q))
        return best[0]

    def test_disc_diameters(self):
        mask = rasterize_disc(15, 15, 10, (31, 31))
        est = estimate_recist(mask_to_contour(mask), spacing_mm=1.0)
        assert est.long_len_mm == pytest.approx(20.0, abs=1.0)
        assert est.short_len_mm == pytest.approx(20.0, abs=1.0)

    def test_axis_aligned_ellipse(self):
        mask = rasterize_ellipse(16, 16, 8, 4, (33, 33))
        est = estimate_recist(mask_to_contour(mask), spacing_mm=1.0)
        assert est.long_len_mm == pytest.approx(16.0, abs=1.0)
        assert est.short_len_mm == pytest.approx(8.0, abs=1.0)

    def test_long_axis_equals_bruteforce(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            cx, cy = rng.uniform(20, 28, size=2)
            a, b = rng.uniform(5, 14), rng.uniform(4, 9)
            ang = rng.uniform(0, 180)
            m = make_measurement(cx, cy, a, a, b, b, ang)
            pts = mask_to_contour(pseudo_mask(m, (48, 48))).astype(float)
            est = estimate_recist(pts)
            assert est.long_len_px == pytest.approx(self.brute_force_long(pts), abs=1e-9)

    def test_rotation_changes_lengths_less_than_2px(self):
        m0 = make_measurement(30, 30, 12, 12, 7, 7, 0.0)
        m1 = make_measurement(30, 30, 12, 12, 7, 7, 30.0)
        e0 = estimate_recist(mask_to_contour(pseudo_mask(m0, (61, 61))))
        e1 = estimate_recist(mask_to_contour(pseudo_mask(m1, (61, 61))))
        assert abs(e0.long_len_px - e1.long_len_px) < 2.0
        assert abs(e0.short_len_px - e1.short_len_px) < 2.0

    def test_short_axis_crosses_long(self):
        m = make_measurement(25, 25, 13, 13, 5, 5, 20.0)
        est = estimate_recist(mask_to_contour(pseudo_mask(m, (51, 51))))
        assert not getattr(est, "degenerate_short", False)
        # short axis direction within 5 degrees of perpendicular
        u = np.subtract(est.long_axis[1], est.long_axis[0])
        v = np.subtract(est.short_axis[1], est.short_axis[0])
        cosang = abs(u @ v) / (np.hypot(*u) * np.hypot(*v))
        assert cosang <= np.sin(np.radians(5.0)) + 1e-9


class TestSurrogateMetrics:
    def test_endpoints_on_contour_give_zero(self):
        square = np.array([[0, 0], [4, 0], [4, 4], [0, 4]], dtype=float)
        gt = RecistMeasurement(((0, 0), (4, 4)), ((4, 0), (0, 4)))
        # endpoints are polygon corners
        assert endpoint_contour_distance(gt, square) == 0.0

    def test_center_of_unit_square(self):
        square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        gt = RecistMeasurement(
            ((0.5, 0.5), (0.5, 0.5)), ((0.5, 0.5), (0.5, 0.5)), spacing_mm=2.0
        )
        assert endpoint_contour_distance(gt, square) == pytest.approx(0.5 * 2.0)

    def test_round_trip_distance_below_one_pixel(self):
        m = make_measurement(20, 20, 10, 10, 6, 6, 25.0, spacing=0.8)
        contour = mask_to_contour(pseudo_mask(m, (41, 41))).astype(float)
        assert endpoint_contour_distance(m, contour) <= 1.0 * m.spacing_mm

    def test_symmetry_under_endpoint_relabel(self):
        m = make_measurement(20, 20, 9, 9, 5, 5, 10.0)
        contour = mask_to_contour(pseudo_mask(m, (41, 41))).astype(float)
        swapped = RecistMeasurement(
            (m.long_axis[1], m.long_axis[0]),
            (m.short_axis[1], m.short_axis[0]),
            m.spacing_mm,
        )
        assert endpoint_contour_distance(m, contour) == pytest.approx(
            endpoint_contour_distance(swapped, contour)
        )

    def test_diameter_error_values(self):
        gt = make_measurement(20, 20, 10, 10, 6, 6, 0.0)
        assert diameter_error(gt, gt) == 0.0
        est = make_measurement(20, 20, 11, 11, 6, 6, 0.0)  # long off by 2mm
        assert diameter_error(est, gt) == pytest.approx(1.0)


class TestRoundTrip:
    def test_many_random_measurements(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            a = rng.uniform(4, 30)
            b = rng.uniform(4, min(a, 30))
            ang = rng.uniform(0, 180)
            size = int(2 * (a + 6))
            m = make_measurement(size // 2, size // 2, a, a, b, b, ang)
            contour = mask_to_contour(pseudo_mask(m, (size, size)))
            est = estimate_recist(contour, spacing_mm=1.0)
            assert abs(est.long_len_px - 2 * a) <= 2.0
            assert abs(est.short_len_px - 2 * b) <= 2.0


class TestMeasurementRecord:
    def test_record_round_trip(self):
        m = make_measurement(12.5, 9.25, 6, 8, 4, 5, 33.0, spacing=0.8)
        m2 = RecistMeasurement.from_record(m.to_record())
        np.testing.assert_allclose(m2.endpoints(), m.endpoints(), atol=1e-4)
        assert m2.spacing_mm == pytest.approx(0.8)

    def test_bad_record_rejected(self):
        with pytest.raises(DataError):
            RecistMeasurement.from_record("1,2,3")

    def test_angle_warning(self):
        m = make_measurement(10, 10, 5, 5, 3, 3, 0.0)
        skew = RecistMeasurement(m.long_axis, ((9, 7), (13, 13)), 1.0)
        with pytest.warns(UserWarning, match="angle"):
            skew.validate()


class TestPgm:
    def test_round_trip(self, tmp_path):
        mask = rasterize_disc(6, 5, 4, (12, 14))
        path = tmp_path / "m.pgm"
        write_mask_pgm(path, mask)
        np.testing.assert_array_equal(read_mask_pgm(path), mask)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n14 12\n255\n")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(DataError):
            read_mask_pgm(path)
