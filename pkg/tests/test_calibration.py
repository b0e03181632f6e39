import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nedcal import EvalOutcome, accuracy, calibration_report, ece, reliability_bins
from nedcal.calibration import (
    ece_from_bins,
    merge_bins,
    read_reliability_csv,
    reliability_svg,
    report_json,
    write_reliability_csv,
)


def outcomes(conf, correct):
    return [EvalOutcome(c, 1, 1 if ok else 0) for c, ok in zip(conf, correct)]


outcome_lists = st.lists(
    st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=60
).map(lambda xs: outcomes([c for c, _ in xs], [ok for _, ok in xs]))


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy(outcomes([0.5] * 3, [True] * 3)) == 1.0

    def test_none_correct(self):
        assert accuracy(outcomes([0.5] * 3, [False] * 3)) == 0.0

    def test_three_of_four(self):
        assert accuracy(outcomes([0.9] * 4, [True, True, False, True])) == 0.75

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy([])

    def test_confidence_range(self):
        with pytest.raises(ValueError):
            EvalOutcome(1.5, 0, 0)


class TestBins:
    def test_two_outcome_example(self):
        bins = reliability_bins(outcomes([0.95, 0.92], [True, False]), 10)
        top = bins[-1]
        assert top.count == 2
        assert top.mean_conf == pytest.approx(0.935, abs=1e-15)
        assert top.accuracy == 0.5
        assert all(b.count == 0 and b.mean_conf == 0 and b.accuracy == 0 for b in bins[:-1])

    def test_all_confident_correct(self):
        bins = reliability_bins(outcomes([1.0] * 7, [True] * 7), 10)
        assert (bins[-1].count, bins[-1].accuracy, bins[-1].mean_conf) == (7, 1.0, 1.0)
        assert sum(b.count for b in bins) == 7

    @pytest.mark.parametrize("m", range(1, 11))
    def test_interior_edges_close_right(self, m):
        bins = reliability_bins(outcomes([m / 10], [True]), 10)
        assert bins[m - 1].count == 1

    def test_zero_goes_to_first_bin(self):
        assert reliability_bins(outcomes([0.0], [False]), 5)[0].count == 1

    def test_edges(self):
        bins = reliability_bins(outcomes([0.5], [True]), 4)
        assert [(b.lo, b.hi) for b in bins] == [(0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)]

    def test_bin_count_minimum(self):
        with pytest.raises(ValueError):
            reliability_bins(outcomes([0.5], [True]), 1)

    @given(outcome_lists, st.integers(2, 20))
    def test_invariants(self, outs, n_bins):
        bins = reliability_bins(outs, n_bins)
        assert sum(b.count for b in bins) == len(outs)
        for b in bins:
            assert b.lo < b.hi
            if b.count:
                assert b.lo - 1e-15 <= b.mean_conf <= b.hi + 1e-15
                assert 0 <= b.accuracy <= 1


class TestEce:
    def test_perfect(self):
        assert ece(outcomes([1.0] * 10, [True] * 10)) == 0.0

    def test_confident_half_correct(self):
        assert ece(outcomes([1.0] * 10, [True, False] * 5), 10) == 0.5

    def test_two_outcome_example(self):
        # one bin: |0.5 - 0.935|
        assert ece(outcomes([0.95, 0.92], [True, False])) == pytest.approx(0.435, abs=1e-15)

    def test_calibrated_predictor_small_ece(self):
        # correctness drawn with probability equal to the confidence
        values = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            conf = rng.uniform(0, 1, 10_000)
            correct = rng.uniform(0, 1, 10_000) < conf
            values.append(ece((conf, correct, np.ones_like(correct)), 10))
        assert max(values) < 0.02
        # per bin the gap is about |N(0, v/n_b)| with v the mean of p(1-p) over
        # the bin, so E[ECE] ~ sum_b (n_b/n) sqrt(2/pi) sqrt(v_b/n_b)
        lo = np.arange(10) / 10
        v = (lo + 0.05) - (lo**2 + lo * 0.1 + 0.01 / 3)  # E[p] - E[p^2] on each bin
        expected = np.sum(0.1 * np.sqrt(2 / np.pi) * np.sqrt(v / 1000))
        assert abs(np.mean(values) - expected) < 0.15 * expected

    @given(outcome_lists, st.integers(2, 15))
    def test_range_and_recomposition(self, outs, n_bins):
        e = ece(outs, n_bins)
        assert 0 <= e <= 1
        assert e == ece_from_bins(reliability_bins(outs, n_bins))
        assert calibration_report(outs, n_bins).ece == e

    @given(outcome_lists, st.randoms(use_true_random=False))
    def test_permutation(self, outs, rnd):
        shuffled = list(outs)
        rnd.shuffle(shuffled)
        assert ece(shuffled) == pytest.approx(ece(outs), abs=1e-12)

    @given(outcome_lists, outcome_lists)
    def test_merge(self, a, b):
        merged = merge_bins(reliability_bins(a), reliability_bins(b))
        direct = reliability_bins(a + b)
        for m, d in zip(merged, direct):
            assert m.count == d.count and m.n_correct == d.n_correct
            assert m.conf_sum == pytest.approx(d.conf_sum, abs=1e-12)
        assert ece_from_bins(merged) == pytest.approx(ece(a + b), abs=1e-12)

    def test_array_input(self):
        conf = np.array([0.9, 0.8, 0.3])
        assert ece((conf, [1, 2, 0], [1, 0, 0])) == ece(
            [EvalOutcome(0.9, 1, 1), EvalOutcome(0.8, 2, 0), EvalOutcome(0.3, 0, 0)])


class TestExport:
    def setup_method(self):
        rng = np.random.default_rng(4)
        conf = rng.uniform(0.2, 1, 500)
        correct = rng.uniform(0, 1, 500) < conf ** 0.7
        self.report = calibration_report((conf, correct, np.ones_like(correct)), 10)

    def test_report_invariants(self):
        r = self.report
        assert sum(b.count for b in r.bins) == r.n == 500
        assert r.ece == sum(b.count / r.n * abs(b.accuracy - b.mean_conf) for b in r.bins if b.count)

    def test_csv_recomposes_printed_ece(self, tmp_path):
        write_reliability_csv(self.report, tmp_path / "rel.csv")
        (tmp_path / "report.json").write_text(report_json(self.report))
        rows = read_reliability_csv(tmp_path / "rel.csv")
        n = sum(r["count"] for r in rows)
        recomposed = 0.0
        for r in rows:
            if r["count"]:
                recomposed += (r["count"] / n) * abs(r["accuracy"] - r["mean_conf"])
        printed = json.loads((tmp_path / "report.json").read_text())["ece"]
        assert repr(recomposed) == repr(printed)

    def test_csv_header(self, tmp_path):
        write_reliability_csv(self.report, tmp_path / "rel.csv")
        head = (tmp_path / "rel.csv").read_text().splitlines()[0]
        assert head == "bin_lo,bin_hi,count,mean_conf,accuracy"

    def test_svg(self):
        svg = reliability_svg(self.report, "ned <k=10>")
        root = ET.fromstring(svg)
        assert root.tag.endswith("svg")
        assert svg == reliability_svg(self.report, "ned <k=10>")
        bars = [e for e in root if e.tag.endswith("rect") and e.get("fill") == "#3b6ea5"]
        assert len(bars) == sum(1 for b in self.report.bins if b.count)
