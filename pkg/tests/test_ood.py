import numpy as np
import pytest

from neurostage import ood
from neurostage.imaging import GrayImage
from neurostage.labels import UNSURE_TOKEN
from neurostage.ood import CalibrationReport, GatedPrediction, OodConfig, calibrate, gate, gate_scan


class ConstNet:
    """Always predicts class 0 with a fixed confidence."""

    def __init__(self, confidence, n_classes=2):
        self.confidence = confidence
        self.n_classes = n_classes

    def forward(self, x, mode="eval", rng=None, trace=None):
        rest = (1.0 - self.confidence) / (self.n_classes - 1)
        out = np.full((1, self.n_classes), rest, np.float32)
        out[0, 0] = self.confidence
        return out


class SequenceNet:
    """Plays back a scripted (class, confidence) sequence."""

    def __init__(self, script, n_classes=3):
        self.script = list(script)
        self.n_classes = n_classes
        self.pos = 0

    def forward(self, x, mode="eval", rng=None, trace=None):
        cls, conf = self.script[self.pos % len(self.script)]
        self.pos += 1
        rest = (1.0 - conf) / (self.n_classes - 1)
        out = np.full((1, self.n_classes), rest, np.float32)
        out[0, cls] = conf
        return out


IMG = GrayImage(np.zeros((248, 248), np.uint8))


class TestGate:
    def test_below_cutoff_is_unsure(self):
        gp = gate(ConstNet(0.55), IMG, OodConfig(cutoff=0.60))
        assert gp.is_unsure
        assert gp.confidence == pytest.approx(0.55, abs=1e-6)

    def test_above_cutoff_keeps_label(self):
        gp = gate(ConstNet(0.75), IMG, OodConfig(cutoff=0.60))
        assert gp.outcome == "non"
        assert gp.confidence == pytest.approx(0.75, abs=1e-6)

    def test_cutoff_one_with_sub_one_confidence(self):
        gp = gate(ConstNet(0.999), IMG, OodConfig(cutoff=1.0))
        assert gp.is_unsure

    def test_cutoff_above_one_rejected(self):
        with pytest.raises(ValueError):
            OodConfig(cutoff=1.0 + 1e-9)

    def test_label_never_altered(self, rng):
        for conf in (0.5, 0.61, 0.8, 0.95):
            net = ConstNet(conf, n_classes=2)
            gp = gate(net, IMG, OodConfig(cutoff=0.6))
            if not gp.is_unsure:
                idx, _ = ood.slice_confidence(net, IMG)
                assert gp.outcome == ("non", "dem")[idx]

    def test_resizes_input(self):
        small = GrayImage(np.zeros((100, 100), np.uint8))
        assert gate(ConstNet(0.9), small, OodConfig()).outcome == "non"


class TestMonotonicity:
    def test_raising_cutoff_only_adds_unsure(self, rng):
        confs = rng.uniform(0.34, 1.0, size=40)
        outcomes = []
        for cutoff in (0.4, 0.6, 0.8, 0.99):
            cfg = OodConfig(cutoff=cutoff)
            unsure = {
                i for i, c in enumerate(confs) if gate(ConstNet(c), IMG, cfg).is_unsure
            }
            outcomes.append(unsure)
        for smaller, larger in zip(outcomes, outcomes[1:]):
            assert smaller <= larger

    def test_no_abstention_at_or_below_uniform(self, rng):
        # softmax max >= 1/num_classes, so such cutoffs never abstain
        for n_classes in (2, 3):
            cfg = OodConfig(cutoff=1.0 / n_classes)
            for conf in rng.uniform(1.0 / n_classes, 1.0, size=25):
                net = ConstNet(float(conf), n_classes=n_classes)
                assert not gate(net, IMG, cfg).is_unsure


class TestCalibrate:
    def test_constant_stub_means_and_midpoint(self):
        id_net_conf, ood_net_conf = 0.9, 0.5

        class TwoPhase:
            n_classes = 2

            def __init__(self):
                self.calls = 0

            def forward(self, x, mode="eval", rng=None, trace=None):
                conf = id_net_conf if self.calls < 3 else ood_net_conf
                self.calls += 1
                return np.array([[conf, 1 - conf]], np.float32)

        net = TwoPhase()
        report = calibrate(net, [IMG] * 3, [IMG] * 3)
        assert report.mean_id_confidence == pytest.approx(0.9, abs=1e-6)
        assert report.mean_ood_confidence == pytest.approx(0.5, abs=1e-6)
        assert report.suggested_cutoff == pytest.approx(0.7, abs=1e-6)

    def test_identical_sets_suggest_their_mean(self):
        report = calibrate(ConstNet(0.8), [IMG, IMG], [IMG, IMG])
        assert report.suggested_cutoff == pytest.approx(report.mean_id_confidence, abs=1e-6)

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            calibrate(ConstNet(0.9), [], [IMG])

    def test_report_lines_mention_references(self):
        report = CalibrationReport(0.7, 0.5, 0.6)
        text = "\n".join(report.lines())
        assert "0.67" in text and "0.56" in text


class TestGateScan:
    def test_unanimous_confident_scan(self):
        net = SequenceNet([(1, 0.9)] * 61)
        gp = gate_scan(net, [IMG] * 61, OodConfig(cutoff=0.6))
        assert gp.outcome == "verymild"

    def test_majority_unsure_scan(self):
        script = [(0, 0.5)] * 40 + [(1, 0.9)] * 21  # 40/61 unsure = 0.656 > 0.5
        net = SequenceNet(script)
        gp = gate_scan(net, [IMG] * 61, OodConfig(cutoff=0.6, scan_unsure_fraction=0.5))
        assert gp.is_unsure

    def test_matches_brute_force_tally(self, rng):
        script = [(int(rng.integers(0, 3)), float(rng.uniform(0.4, 1.0))) for _ in range(30)]
        cfg = OodConfig(cutoff=0.7, scan_unsure_fraction=0.5)
        gp = gate_scan(SequenceNet(script), [IMG] * 30, cfg)
        unsure = sum(1 for _, c in script if c < 0.7)
        votes = [0, 0, 0]
        for cls, c in script:
            if c >= 0.7:
                votes[cls] += 1
        if unsure / 30 > 0.5 or sum(votes) == 0:
            assert gp.is_unsure
        else:
            best = max(range(3), key=lambda i: (votes[i], -i))
            assert gp.outcome == ("non", "verymild", "mild")[best]

    def test_tie_votes_lowest_class(self):
        script = [(2, 0.9), (0, 0.9)]
        gp = gate_scan(SequenceNet(script), [IMG, IMG], OodConfig(cutoff=0.6))
        assert gp.outcome == "non"

    def test_empty_scan_rejected(self):
        with pytest.raises(ValueError):
            gate_scan(ConstNet(0.9), [], OodConfig())

    def test_outcome_unsure_iff_confidence_below_cutoff(self, rng):
        for conf in rng.uniform(0.34, 1.0, size=20):
            gp = gate(ConstNet(float(conf), n_classes=3), IMG, OodConfig(cutoff=0.6))
            assert gp.is_unsure == (gp.confidence < 0.6)


class TestConfigValidation:
    def test_bad_scan_fraction(self):
        with pytest.raises(ValueError):
            OodConfig(scan_unsure_fraction=1.5)

    def test_zero_cutoff_rejected(self):
        with pytest.raises(ValueError):
            OodConfig(cutoff=0.0)
