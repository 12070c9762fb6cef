"""Calibration metrics, reliability reports, compound top-2 evaluation."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emorank.calibration import (BinningMode, CalibrationReport, accuracy,
                                 aece, bin_equal_mass, bin_equal_width,
                                 compound_top2_eval, confidence_correctness,
                                 ece, mce, read_report_csv,
                                 reliability_report, top2_match,
                                 write_heatmap_csv, write_report_csv)
from emorank.dataio import PredictionRow
from emorank.errors import DataFormatError, InvalidInputError
from emorank.numcore import Rng, softmax

# the four-sample golden fixture: top-1 confidences (0.6, 0.7, 0.9, 0.95)
# with correctness (no, yes, yes, yes)
GOLDEN_CONFS = [0.6, 0.7, 0.9, 0.95]
GOLDEN_CORRECT = [False, True, True, True]
GOLDEN_ROWS = [
    PredictionRow("g0", 1, (0.6, 0.4)),    # predicts 0, wrong
    PredictionRow("g1", 0, (0.7, 0.3)),
    PredictionRow("g2", 0, (0.9, 0.1)),
    PredictionRow("g3", 0, (0.95, 0.05)),
]


class TestConfidenceCorrectness:
    def test_golden_rows_decompose(self):
        confs, correct = confidence_correctness(
            [r.probs for r in GOLDEN_ROWS], [r.label for r in GOLDEN_ROWS])
        assert confs == GOLDEN_CONFS
        assert correct == GOLDEN_CORRECT

    def test_tie_breaks_to_lowest_index(self):
        confs, correct = confidence_correctness([(0.5, 0.5)], [1])
        assert confs == [0.5]
        assert correct == [False]

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            confidence_correctness([(1.0, 0.0)], [0, 1])


class TestEqualWidth:
    def test_single_bin_is_overall_stats(self):
        bins = bin_equal_width(GOLDEN_CONFS, GOLDEN_CORRECT, 1)
        assert len(bins) == 1
        assert bins[0].count == 4
        assert bins[0].acc == 0.75
        assert bins[0].conf == pytest.approx(0.7875, abs=1e-12)

    def test_golden_case_m2(self):
        bins = bin_equal_width(GOLDEN_CONFS, GOLDEN_CORRECT, 2)
        assert bins[0].empty and bins[0].count == 0
        assert bins[1].count == 4
        assert bins[1].acc == 0.75
        assert bins[1].conf == pytest.approx(0.7875, abs=1e-12)
        assert (bins[0].lo, bins[0].hi) == (0.0, 0.5)
        assert (bins[1].lo, bins[1].hi) == (0.5, 1.0)

    def test_boundary_lands_in_lower_bin(self):
        # the interval convention is ((m-1)/M, m/M]
        bins = bin_equal_width([0.5], [True], 2)
        assert bins[0].count == 1 and bins[1].count == 0

    def test_zero_confidence_lands_in_first_bin(self):
        bins = bin_equal_width([0.0], [False], 4)
        assert bins[0].count == 1

    def test_rejects_bad_inputs(self):
        with pytest.raises(InvalidInputError):
            bin_equal_width([0.5], [True], 0)
        with pytest.raises(InvalidInputError):
            bin_equal_width([1.5], [True], 2)
        with pytest.raises(InvalidInputError):
            bin_equal_width([0.5, 0.6], [True], 2)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=60),
           st.integers(1, 20))
    @settings(max_examples=100, deadline=None)
    def test_partition_covers_everything(self, confs, m):
        correct = [True] * len(confs)
        bins = bin_equal_width(confs, correct, m)
        assert len(bins) == m
        assert sum(b.count for b in bins) == len(confs)
        for b in bins:
            if not b.empty:
                # conf stays inside the bin bounds (left-open, 0 excepted)
                assert b.lo - 1e-12 <= b.conf <= b.hi + 1e-12 or b.conf == 0.0


class TestEqualMass:
    def test_golden_case_m2(self):
        bins = bin_equal_mass(GOLDEN_CONFS, GOLDEN_CORRECT, 2)
        assert [b.count for b in bins] == [2, 2]
        assert bins[0].acc == 0.5
        assert bins[0].conf == pytest.approx(0.65, abs=1e-12)
        assert bins[1].acc == 1.0
        assert bins[1].conf == pytest.approx(0.925, abs=1e-12)

    def test_remainder_rule(self):
        bins = bin_equal_mass([0.1, 0.2, 0.3, 0.4, 0.5], [True] * 5, 2)
        assert [b.count for b in bins] == [3, 2]

    def test_stable_under_ties(self):
        # equal confidences: stable sort keeps original index order
        confs = [0.5, 0.5, 0.5, 0.5]
        correct = [True, True, False, False]
        bins = bin_equal_mass(confs, correct, 2)
        assert bins[0].acc == 1.0
        assert bins[1].acc == 0.0

    def test_more_bins_than_samples(self):
        with pytest.raises(InvalidInputError):
            bin_equal_mass([0.5], [True], 2)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=60),
           st.integers(1, 20))
    @settings(max_examples=100, deadline=None)
    def test_sizes_differ_by_at_most_one(self, confs, m):
        if m > len(confs):
            return
        bins = bin_equal_mass(confs, [False] * len(confs), m)
        sizes = [b.count for b in bins]
        assert sum(sizes) == len(confs)
        assert max(sizes) - min(sizes) <= 1
        assert all(not b.empty for b in bins)


class TestScalars:
    def test_ece_golden(self):
        bins = bin_equal_width(GOLDEN_CONFS, GOLDEN_CORRECT, 2)
        assert abs(ece(bins, 4) - 0.0375) <= 1e-9

    def test_mce_golden(self):
        bins = bin_equal_width(GOLDEN_CONFS, GOLDEN_CORRECT, 2)
        assert abs(mce(bins) - 0.0375) <= 1e-9

    def test_aece_golden(self):
        assert abs(aece(GOLDEN_CONFS, GOLDEN_CORRECT, 2) - 0.1125) <= 1e-9

    def test_perfectly_calibrated_bins_score_zero(self):
        bins = bin_equal_width([0.25, 0.75], [False, True], 2)
        # acc(bin1)=0 vs conf 0.25; construct the truly calibrated variant
        bins = bin_equal_width([1.0, 1.0], [True, True], 1)
        assert ece(bins, 2) == 0.0
        assert mce(bins) == 0.0

    def test_single_bin_half_gap(self):
        bins = bin_equal_width([0.5, 0.5], [True, True], 1)
        assert ece(bins, 2) == pytest.approx(0.5, abs=1e-12)

    def test_mce_takes_max_gap(self):
        confs = [0.2, 0.55, 0.9]
        correct = [False, True, True]
        bins = bin_equal_width(confs, correct, 3)
        gaps = [b.gap for b in bins if not b.empty]
        assert mce(bins) == max(gaps)

    def test_ece_validates_counts(self):
        bins = bin_equal_width(GOLDEN_CONFS, GOLDEN_CORRECT, 2)
        with pytest.raises(InvalidInputError):
            ece(bins, 5)
        with pytest.raises(InvalidInputError):
            ece(bins, 0)

    def test_mce_requires_nonempty(self):
        with pytest.raises(InvalidInputError):
            mce([b for b in bin_equal_width([0.9], [True], 4) if b.empty])

    def test_aece_all_correct_full_confidence(self):
        assert aece([1.0, 1.0, 1.0], [True] * 3, 3) == 0.0

    def test_accuracy(self):
        probs = [r.probs for r in GOLDEN_ROWS]
        labels = [r.label for r in GOLDEN_ROWS]
        assert accuracy(probs, labels) == 0.75
        with pytest.raises(InvalidInputError):
            accuracy([], [])

    def test_bernoulli_stream_is_calibrated(self):
        # confidence c, correctness ~ Bernoulli(c): ECE tends to 0
        rng = Rng(2026)
        confs, correct = [], []
        for _ in range(10000):
            c = 0.5 + 0.5 * rng.random()
            confs.append(c)
            correct.append(rng.random() < c)
        bins = bin_equal_width(confs, correct, 15)
        assert ece(bins, len(confs)) < 0.03
        assert aece(confs, correct, 15) < 0.03

    @given(st.lists(st.tuples(st.floats(0, 1), st.booleans()),
                    min_size=1, max_size=80),
           st.integers(1, 15))
    @settings(max_examples=100, deadline=None)
    def test_ece_at_most_mce(self, rows, m):
        confs = [c for c, _ in rows]
        correct = [k for _, k in rows]
        bins = bin_equal_width(confs, correct, m)
        assert ece(bins, len(rows)) <= mce(bins) + 1e-12

    @given(st.lists(st.tuples(st.floats(0, 1), st.booleans()),
                    min_size=2, max_size=40),
           st.integers(1, 8), st.randoms())
    @settings(max_examples=80, deadline=None)
    def test_permutation_invariance(self, rows, m, shuffler):
        confs = [c for c, _ in rows]
        correct = [k for _, k in rows]
        perm = list(range(len(rows)))
        shuffler.shuffle(perm)
        confs_p = [confs[i] for i in perm]
        correct_p = [correct[i] for i in perm]
        a = ece(bin_equal_width(confs, correct, m), len(rows))
        b = ece(bin_equal_width(confs_p, correct_p, m), len(rows))
        assert a == pytest.approx(b, abs=1e-12)
        if m <= len(rows) and len(set(confs)) == len(confs):
            # ties make equal-mass binning order-dependent (stable sort)
            assert aece(confs, correct, m) == pytest.approx(
                aece(confs_p, correct_p, m), abs=1e-12)
        assert mce(bin_equal_width(confs, correct, m)) == pytest.approx(
            mce(bin_equal_width(confs_p, correct_p, m)), abs=1e-12)


class TestReliabilityReport:
    def test_golden_composition(self):
        report = reliability_report(GOLDEN_ROWS, 2)
        assert report.mode is BinningMode.EQUAL_WIDTH
        assert abs(report.ece - 0.0375) <= 1e-9
        assert abs(report.mce - 0.0375) <= 1e-9
        assert abs(report.aece - 0.1125) <= 1e-9
        assert report.acc == 0.75
        assert report.n == 4

    def test_mass_mode_uses_mass_bins_for_ece(self):
        report = reliability_report(GOLDEN_ROWS, 2, BinningMode.EQUAL_MASS)
        assert abs(report.ece - 0.1125) <= 1e-9  # same bins as aece
        assert abs(report.aece - 0.1125) <= 1e-9
        assert [b.count for b in report.bins] == [2, 2]

    def test_requires_labels(self):
        rows = [PredictionRow("a", None, (0.6, 0.4))]
        with pytest.raises(InvalidInputError):
            reliability_report(rows, 2)

    def test_requires_rows(self):
        with pytest.raises(InvalidInputError):
            reliability_report([], 2)

    def test_csv_round_trip(self, tmp_path):
        report = reliability_report(GOLDEN_ROWS, 2)
        path = str(tmp_path / "report.csv")
        write_report_csv(path, report)
        bins, scalars = read_report_csv(path)
        assert abs(scalars["ece"] - report.ece) <= 1e-8
        assert abs(scalars["aece"] - report.aece) <= 1e-8
        assert abs(scalars["mce"] - report.mce) <= 1e-8
        assert abs(scalars["acc"] - report.acc) <= 1e-8
        assert len(bins) == len(report.bins)
        for got, want in zip(bins, report.bins):
            assert got.bin_id == want.bin_id
            assert got.count == want.count
            assert abs(got.acc - want.acc) <= 1e-8
            assert abs(got.conf - want.conf) <= 1e-8

    def test_read_rejects_malformed(self, tmp_path):
        path = str(tmp_path / "report.csv")
        with open(path, "w") as f:
            f.write("wrong,header\n")
        with pytest.raises(DataFormatError) as exc:
            read_report_csv(path)
        assert exc.value.row == 1

        report = reliability_report(GOLDEN_ROWS, 2)
        write_report_csv(path, report)
        with open(path) as f:
            lines = f.readlines()
        with open(path, "w") as f:
            f.writelines(ln for ln in lines if not ln.startswith("acc="))
        with pytest.raises(DataFormatError, match="acc"):
            read_report_csv(path)


def _oracle_top2(probs, c1, c2):
    """Rank every class by (-prob, index); the first two must be {c1, c2}."""
    order = sorted(range(len(probs)), key=lambda k: (-probs[k], k))
    return {order[0], order[1]} == {c1, c2}


class TestCompoundEval:
    def test_matches_enumeration_oracle(self):
        rng = Rng(515)
        for _ in range(1000):
            c = 3 + rng.randrange(5)
            probs = softmax([rng.uniform(-3, 3) for _ in range(c)]).values
            c1 = rng.randrange(c)
            c2 = (c1 + 1 + rng.randrange(c - 1)) % c
            assert top2_match(probs, c1, c2) == _oracle_top2(probs, c1, c2)

    def test_half_half_fixture_matches(self):
        # distributions concentrated 0.5/0.5 on exactly the pair
        pairs = [(1, 2), (3, 6), (4, 5)]
        probs = []
        for c1, c2 in pairs:
            p = [0.0] * 7
            p[c1] = 0.5
            p[c2] = 0.5
            probs.append(tuple(p))
        result = compound_top2_eval(probs, pairs)
        assert result.overall_rate == 1.0
        assert all(rate == 1.0 for rate in result.match_rates)
        assert result.match_flags == [True, True, True]

    def test_onehot_misses(self):
        # all mass on c1: the runner-up is index 0 (tie-break), not c2
        p = [0.0] * 7
        p[3] = 1.0
        result = compound_top2_eval([tuple(p)], [(3, 6)])
        assert result.overall_rate == 0.0

    def test_per_pair_grouping_and_heatmap(self):
        probs = [
            (0.5, 0.5, 0.0),   # pair (0,1): match
            (0.0, 0.5, 0.5),   # pair (0,1): miss
            (0.2, 0.3, 0.5),   # pair (1,2): match
        ]
        result = compound_top2_eval(probs, [(0, 1), (0, 1), (1, 2)])
        assert result.pair_order == [(0, 1), (1, 2)]
        assert result.counts == [2, 1]
        assert result.match_rates == [0.5, 1.0]
        assert result.overall_rate == pytest.approx(2 / 3, abs=1e-12)
        assert result.heatmap[0] == pytest.approx([0.25, 0.5, 0.25], abs=1e-12)
        assert result.heatmap[1] == pytest.approx([0.2, 0.3, 0.5], abs=1e-12)

    def test_heatmap_rows_are_distribution_means(self):
        rng = Rng(99)
        probs = [softmax([rng.uniform(-2, 2) for _ in range(7)]).values
                 for _ in range(30)]
        pairs = [(1, 2)] * 30
        result = compound_top2_eval(probs, pairs)
        assert sum(result.heatmap[0]) == pytest.approx(1.0, abs=1e-9)

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            compound_top2_eval([], [])
        with pytest.raises(InvalidInputError):
            compound_top2_eval([(0.5, 0.5)], [(None, 1)])
        with pytest.raises(InvalidInputError):
            compound_top2_eval([(0.5, 0.5)], [(1, 1)])
        with pytest.raises(InvalidInputError):
            compound_top2_eval([(0.5, 0.5)], [(0, 5)])
        with pytest.raises(InvalidInputError):
            compound_top2_eval([(0.5, 0.5)], [(0, 1), (0, 1)])

    def test_heatmap_csv_format(self, tmp_path):
        result = compound_top2_eval([(0.25, 0.5, 0.25)], [(1, 2)])
        path = str(tmp_path / "heat.csv")
        write_heatmap_csv(path, result)
        with open(path) as f:
            lines = f.read().splitlines()
        assert lines[0] == "compound_class,basic_class,mean_confidence"
        assert lines[1] == "1+2,0,0.250000000"
        assert lines[2] == "1+2,1,0.500000000"
        assert lines[3] == "1+2,2,0.250000000"
        assert len(lines) == 4


class TestBinningMode:
    def test_parse(self):
        assert BinningMode.parse("width") is BinningMode.EQUAL_WIDTH
        assert BinningMode.parse("mass") is BinningMode.EQUAL_MASS
        with pytest.raises(InvalidInputError):
            BinningMode.parse("quantile")
