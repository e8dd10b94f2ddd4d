import pytest
import numpy as np
from pydantic import ValidationError

from app.evaluation.metrics import (
    acer,
    apcer,
    apcer_worst_pai,
    bpcer,
    det_curve,
    eer,
    metrics_report,
    roc_auc,
    select_threshold,
)
from app.evaluation.reports import fmt_rate, text_table, write_report
from app.models.metrics import DetCurve, DetPoint, MetricsReport, ScoredSample, ThresholdPolicy
from app.utils.error import MetricsError


def bona(*scores):
    return [ScoredSample(score=s, label="bonafide") for s in scores]


def attacks(pai, *scores):
    return [ScoredSample(score=s, label="attack", pai_type=pai) for s in scores]


def separable():
    return bona(0.1, 0.15, 0.2) + attacks("PH", 0.8, 0.85) + attacks("PL", 0.9)


class TestScoredSample:
    def test_attack_needs_pai(self):
        """Attack samples need a PAI type."""
        with pytest.raises(ValidationError):
            ScoredSample(score=0.5, label="attack")

    def test_bonafide_has_no_pai(self):
        """Bonafide samples may not carry a PAI type."""
        with pytest.raises(ValidationError):
            ScoredSample(score=0.5, label="bonafide", pai_type="PH")

    def test_score_range(self):
        """Scores outside [0, 1] are refused."""
        with pytest.raises(ValidationError):
            ScoredSample(score=1.5, label="bonafide")


class TestErrorRates:
    """APCER, BPCER and ACER at a fixed threshold."""

    def test_apcer_counts_missed_attacks(self):
        """APCER is the percentage of attacks scored below the threshold."""
        samples = attacks("PH", 0.1, 0.2, *[0.9] * 8)
        assert apcer(samples, 0.5)[0] == 20.0

    def test_apcer_all_caught(self):
        """APCER is zero when every attack is caught."""
        assert apcer(attacks("PH", 0.6, 0.7), 0.5)[0] == 0.0

    def test_apcer_per_pai(self):
        """Per-PAI APCER is reported next to the pooled rate and its worst case."""
        samples = attacks("PH", *[0.9] * 5) + attacks("PL", 0.1, *[0.9] * 4)
        pooled, per_pai = apcer(samples, 0.5)
        assert per_pai == {"PH": 0.0, "PL": 20.0}
        assert pooled == 10.0
        assert apcer_worst_pai(per_pai) == 20.0

    def test_threshold_is_inclusive_for_attack(self):
        """A score equal to the threshold counts as an attack decision."""
        assert apcer(attacks("PH", 0.5), 0.5)[0] == 0.0
        assert bpcer(bona(0.5), 0.5) == 100.0

    def test_bpcer(self):
        """BPCER is the percentage of bonafide scored at or above the threshold."""
        assert bpcer(bona(*[0.1] * 100), 0.5) == 0.0
        assert bpcer(bona(0.9, *[0.1] * 999), 0.5) == pytest.approx(0.1)

    def test_missing_class(self):
        """Rates need samples of the class they describe."""
        with pytest.raises(MetricsError):
            apcer(bona(0.1), 0.5)
        with pytest.raises(MetricsError):
            bpcer(attacks("PH", 0.1), 0.5)

    def test_bpcer_is_mirrored_apcer(self, rng):
        """BPCER equals APCER on mirrored scores and threshold."""
        scores = rng.uniform(0.0, 1.0, size=200)
        t = 0.4321
        mirrored = attacks("PH", *(1.0 - scores))
        assert bpcer(bona(*scores), t) == apcer(mirrored, 1.0 - t)[0]

    def test_per_pai_weighted_mean_is_pooled(self, rng):
        """Pooled APCER is the count-weighted mean of per-PAI rates."""
        samples = []
        for pai, n in (("PH", 37), ("PL", 11), ("EC", 52)):
            samples += attacks(pai, *rng.uniform(0.0, 1.0, size=n))
        pooled, per_pai = apcer(samples, 0.37)
        weighted = (37 * per_pai["PH"] + 11 * per_pai["PL"] + 52 * per_pai["EC"]) / 100
        assert abs(weighted - pooled) < 1e-9

    def test_acer_table_values(self):
        """ACER is the mean of APCER and BPCER."""
        assert acer(1.2, 0.09) == pytest.approx(0.645)
        assert abs(acer(1.2, 0.09) - 0.65) <= 0.005 + 1e-12
        assert acer(0.21, 0.09) == pytest.approx(0.15)
        assert acer(0.0, 0.0) == 0.0

    def test_acer_range(self):
        """Rates above 100 percent are refused."""
        with pytest.raises(MetricsError):
            acer(101.0, 0.0)


class TestDetCurve:
    def test_random_scores_are_monotone(self, rng):
        """DET points run with rising threshold, rising APCER and falling BPCER."""
        labels = rng.integers(0, 2, size=1000)
        scores = rng.uniform(0.0, 1.0, size=1000)
        samples = [
            ScoredSample(score=s, label="attack", pai_type="PH") if y else ScoredSample(score=s, label="bonafide")
            for s, y in zip(scores, labels)
        ]
        points = det_curve(samples).points
        assert len(points) == len(np.unique(scores)) + 1
        for prev, cur in zip(points, points[1:]):
            assert cur.threshold > prev.threshold
            assert cur.apcer >= prev.apcer
            assert cur.bpcer <= prev.bpcer
        assert (points[0].apcer, points[0].bpcer) == (0.0, 100.0)
        assert (points[-1].apcer, points[-1].bpcer) == (100.0, 0.0)

    def test_separable_scores_reach_origin(self):
        """Separable scores reach zero error on both axes."""
        assert any(p.apcer == 0.0 and p.bpcer == 0.0 for p in det_curve(separable()).points)

    def test_equal_scores_degenerate(self):
        """All-equal scores give at most two points."""
        points = det_curve(bona(0.5, 0.5) + attacks("PH", 0.5)).points
        assert len(points) <= 2

    def test_thinning_keeps_ends(self, rng):
        """Thinning keeps the first and last points."""
        samples = bona(*rng.uniform(0, 0.6, size=50)) + attacks("PH", *rng.uniform(0.4, 1.0, size=50))
        full, thin = det_curve(samples).points, det_curve(samples, num_points=10).points
        assert len(thin) == 10
        assert thin[0] == full[0] and thin[-1] == full[-1]

    def test_single_class_rejected(self):
        """A DET curve needs both classes."""
        with pytest.raises(MetricsError):
            det_curve(bona(0.1, 0.2))

    def test_non_monotone_curve_rejected(self):
        """Curves that are not monotone fail validation."""
        with pytest.raises(ValidationError):
            DetCurve(
                points=[DetPoint(threshold=0.1, apcer=10.0, bpcer=50.0), DetPoint(threshold=0.2, apcer=5.0, bpcer=40.0)]
            )

    def test_eer(self):
        """EER is zero for separable scores and 50 for ties."""
        assert eer(det_curve(separable())) == 0.0
        # all six scores tie: every threshold errs on one class or the other
        tied = bona(0.5, 0.5, 0.5) + attacks("PH", 0.5, 0.5, 0.5)
        assert eer(det_curve(tied)) == 50.0

    def test_roc_auc(self):
        """AUC is 1 for separable scores and 0 for inverted ones."""
        assert roc_auc(separable()) == 1.0
        assert roc_auc(bona(0.9) + attacks("PH", 0.1)) == 0.0


class TestThresholdPolicy:
    def test_parse(self):
        """Policy strings parse and print back."""
        assert ThresholdPolicy.parse("bpcer:0.1") == ThresholdPolicy(kind="bpcer", value=0.1)
        assert ThresholdPolicy.parse("eer") == ThresholdPolicy(kind="eer")
        assert ThresholdPolicy.parse(" fixed : 0.5 ").value == 0.5
        assert str(ThresholdPolicy.parse("bpcer:0.1")) == "bpcer:0.1"

    @pytest.mark.parametrize("text", ["", "bpcer", "fixed:2", "median:0.5", "bpcer:-1"])
    def test_parse_rejects(self, text):
        """Malformed policy strings raise ValueError."""
        with pytest.raises(ValueError):
            ThresholdPolicy.parse(text)

    def test_select_fixed(self):
        """A fixed policy returns its value."""
        assert select_threshold(separable(), ThresholdPolicy.parse("fixed:0.42")) == 0.42

    def test_select_bpcer_target(self):
        """A zero BPCER target keeps every bonafide score below the threshold."""
        assert select_threshold(separable(), ThresholdPolicy.parse("bpcer:0")) == 0.8

    def test_select_bpcer_loose_target(self):
        """A looser BPCER target allows a lower threshold."""
        # one false alarm in three is allowed
        assert select_threshold(separable(), ThresholdPolicy.parse("bpcer:40")) == 0.2

    def test_select_eer(self):
        """The EER policy picks the equal-error threshold."""
        assert select_threshold(separable(), ThresholdPolicy.parse("eer")) == 0.8


class TestMetricsReport:
    def test_separable_report(self):
        """Separable scores give a zero-error report with per-PAI counts."""
        report = metrics_report(separable(), 0.5)
        assert report.apcer_overall == report.bpcer == report.acer == 0.0
        assert set(report.apcer_per_pai) == {"PH", "PL"}
        assert report.counts == {"bonafide": 3, "attack": 3, "attack:PH": 2, "attack:PL": 1}
        assert report.auc == 1.0

    def test_acer_is_exact_mean(self, rng):
        """The report's ACER is exactly the mean of its two rates."""
        samples = bona(*rng.uniform(0, 1, size=40)) + attacks("PH", *rng.uniform(0, 1, size=40))
        report = metrics_report(samples, 0.5)
        assert report.acer == (report.apcer_overall + report.bpcer) / 2

    def test_inconsistent_acer_rejected(self):
        """A report whose ACER disagrees with its rates fails validation."""
        with pytest.raises(ValidationError):
            MetricsReport(
                threshold=0.5,
                apcer_overall=10.0,
                apcer_per_pai={"PH": 10.0},
                apcer_worst_pai=10.0,
                bpcer=0.0,
                acer=4.0,
                counts={},
            )

    def test_text_table_and_files(self, tmp_path):
        """Reports render as a table and write JSON, text and DET files."""
        report = metrics_report(separable(), 0.5)
        table = text_table(report)
        assert "APCER [PL]" in table and "ACER" in table
        paths = write_report(report, tmp_path, det_curve(separable()), name="run")
        assert sorted(p.name for p in paths.values()) == ["run.json", "run.txt", "run_det.csv"]
        assert MetricsReport.model_validate_json(paths["json"].read_text()) == report
        assert paths["det"].read_text().splitlines()[0] == "threshold,apcer,bpcer"

    def test_threshold_source_in_table(self):
        """Reports say where the threshold came from and flag in-sample selection."""
        in_sample = text_table(metrics_report(separable(), 0.5, "evaluated set"))
        assert "threshold chosen on" in in_sample and "optimistic" in in_sample
        held_out = text_table(metrics_report(separable(), 0.5, "held-out split"))
        assert "held-out split" in held_out and "optimistic" not in held_out
        assert "threshold chosen on" not in text_table(metrics_report(separable(), 0.5))

    def test_rate_formatting(self):
        """Rates print with four decimals."""
        assert fmt_rate(0.645) == "0.6450"
        assert fmt_rate(12.34565) == "12.3456"
        assert fmt_rate(0.0) == "0.0000"
