"""Tests for deterministic SVG rendering of scatter and loss plots."""

from __future__ import annotations

import numpy as np
import pytest

from binimage.errors import BadSpec
from binimage.svg import HEIGHT, WIDTH, loss_curves_svg, scatter_svg


class TestScatterSvg:
    def test_well_formed_document(self):
        xy = np.array([[0.0, 0.0], [1.0, 2.0], [-1.0, 0.5]])
        svg = scatter_svg(xy, np.array([0, 1, 0]), ["alpha", "beta"])
        assert svg.startswith("<svg")
        assert svg.rstrip().endswith("</svg>")
        assert f'width="{WIDTH}"' in svg
        assert f'height="{HEIGHT}"' in svg
        # data points use r="3"; legend swatches use r="4"
        assert svg.count('r="3"') == 3
        assert svg.count('r="4"') == 2
        assert "alpha" in svg and "beta" in svg

    def test_byte_deterministic(self):
        rng = np.random.default_rng(0)
        xy = rng.standard_normal((20, 2))
        fids = rng.integers(0, 3, size=20)
        a = scatter_svg(xy, fids, ["f0", "f1", "f2"])
        b = scatter_svg(xy, fids, ["f0", "f1", "f2"])
        assert a == b

    def test_families_get_distinct_colors(self):
        xy = np.array([[0.0, 0.0], [1.0, 1.0]])
        svg = scatter_svg(xy, np.array([0, 1]))
        circles = [line for line in svg.splitlines() if "<circle" in line]
        fills = {line.split('fill="')[1].split('"')[0] for line in circles}
        assert len(fills) == 2

    def test_points_stay_inside_canvas(self):
        rng = np.random.default_rng(1)
        xy = rng.standard_normal((50, 2)) * 100
        svg = scatter_svg(xy, np.zeros(50, dtype=np.int64))
        for line in svg.splitlines():
            if "<circle" not in line:
                continue
            cx = float(line.split('cx="')[1].split('"')[0])
            cy = float(line.split('cy="')[1].split('"')[0])
            assert 0 <= cx <= WIDTH
            assert 0 <= cy <= HEIGHT

    def test_degenerate_single_point(self):
        svg = scatter_svg(np.array([[3.0, 3.0]]), np.array([0]))
        assert svg.count('r="3"') == 1

    def test_bad_shape_rejected(self):
        with pytest.raises(BadSpec):
            scatter_svg(np.zeros((4, 3)), np.zeros(4, dtype=np.int64))
        with pytest.raises(BadSpec):
            scatter_svg(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))


class TestLossCurvesSvg:
    def test_well_formed_document(self):
        svg = loss_curves_svg([("ce", [0, 1, 2], [1.0, 0.5, 0.25])])
        assert svg.startswith("<svg")
        assert svg.rstrip().endswith("</svg>")
        assert svg.count("<polyline") == 1
        assert "ce" in svg

    def test_byte_deterministic(self):
        series = [
            ("ce", list(range(10)), [1.0 / (k + 1) for k in range(10)]),
            ("d2v", list(range(10)), [0.5 / (k + 1) for k in range(10)]),
        ]
        assert loss_curves_svg(series) == loss_curves_svg(series)

    def test_multiple_series_distinct_colors(self):
        series = [
            ("a", [0, 1], [1.0, 0.9]),
            ("b", [0, 1], [2.0, 1.8]),
            ("c", [0, 1], [3.0, 2.7]),
        ]
        svg = loss_curves_svg(series)
        polylines = [line for line in svg.splitlines() if "<polyline" in line]
        strokes = {line.split('stroke="')[1].split('"')[0] for line in polylines}
        assert len(strokes) == 3

    def test_log_scale_handles_zero_values(self):
        svg = loss_curves_svg([("loss", [0, 1, 2], [1.0, 0.0, 1e-9])], log_y=True)
        assert "nan" not in svg.lower().replace("sans", "")
        assert "-inf" not in svg

    def test_linear_scale(self):
        svg = loss_curves_svg([("loss", [0, 1], [2.0, 1.0])], log_y=False)
        assert svg.count("<polyline") == 1

    def test_empty_series_rejected(self):
        with pytest.raises(BadSpec):
            loss_curves_svg([])
        with pytest.raises(BadSpec):
            loss_curves_svg([("x", [0, 1], [1.0])])
