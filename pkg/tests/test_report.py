"""Median-metric and metrics-report tests against sort-based oracles."""

import numpy as np
import pytest

from featloc.geometry import PoseError
from featloc.report import EmptyList, MetricsReport, median_metrics


def errs(pairs):
    return [PoseError(t, r) for t, r in pairs]


class TestMedianMetrics:
    def test_three_element_example(self):
        # [TRIVIAL] {(1,10),(2,20),(3,30)} -> (2, 20)
        assert median_metrics(errs([(1, 10), (2, 20), (3, 30)])) == (2, 20)

    def test_single_element_is_itself(self):
        assert median_metrics(errs([(0.4, 7.5)])) == (0.4, 7.5)

    def test_even_length_uses_lower_median(self):
        # ascending sort (1,2,3,4): lower middle = index ceil(4/2)=2 -> 2
        assert median_metrics(errs([(4, 40), (1, 10), (3, 30), (2, 20)])) \
            == (2, 20)

    def test_components_are_independent(self):
        # rotation order deliberately disagrees with translation order
        got = median_metrics(errs([(1, 30), (2, 10), (3, 20)]))
        assert got == (2, 20)

    def test_matches_sort_oracle_on_random_lists(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(1, 12))
            ts = rng.random(n).tolist()
            rs = (rng.random(n) * 180).tolist()
            med_t, med_r = median_metrics(errs(list(zip(ts, rs))))
            # [DERIVED: sort oracle] ceil(n/2)-th order statistic
            k = (n + 1) // 2 - 1
            assert med_t == sorted(ts)[k]
            assert med_r == sorted(rs)[k]

    def test_empty_raises(self):
        with pytest.raises(EmptyList):
            median_metrics([])


class TestMetricsReport:
    def test_from_errors_round_trips_through_json(self):
        report = MetricsReport.from_errors(
            ["a", "b", "c"], errs([(1.0, 10.0), (2.0, 20.0), (3.0, 30.0)]),
            psnr={"mean": 27.5})
        assert report.median_translation == 2.0
        assert report.median_rotation == 20.0
        again = MetricsReport.from_json(report.to_json())
        assert again == report

    def test_serialization_is_deterministic(self):
        a = MetricsReport.from_errors(["x"], errs([(0.5, 5.0)]))
        b = MetricsReport.from_errors(["x"], errs([(0.5, 5.0)]))
        assert a.to_json() == b.to_json()

    def test_inconsistent_medians_rejected(self):
        frames = [{"name": "a", "translation_error": 1.0,
                   "rotation_error": 10.0}]
        with pytest.raises(ValueError):
            MetricsReport(frames=frames, median_translation=2.0,
                          median_rotation=10.0)

    def test_empty_frame_list_rejected(self):
        with pytest.raises(EmptyList):
            MetricsReport(frames=[], median_translation=0.0,
                          median_rotation=0.0)
