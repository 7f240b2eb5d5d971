"""Metric suite: hand-derived cases, oracle equivalence, invariants."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snapscore.metrics import (PredictionStream, es, esv, evaluate, hit,
                               macro_f1, mean_es, qwk, read_streams,
                               stability, stream_hits, top1_accuracy,
                               write_streams)

import oracles


def stream_from_hits(hit_windows, p=18, w_max=18, c=5, label=1, conf=0.9):
    """Stream whose hit set at tau=0.7 is exactly ``hit_windows``."""
    probs = np.full((p, c), 1.0 / c)
    for w in hit_windows:
        probs[w - 1] = (1 - conf) / (c - 1)
        probs[w - 1, label] = conf
    return PredictionStream("v", probs, label, w_max=w_max)


def random_stream(rng, c=None, p=18, w_max=18):
    c = c or int(rng.integers(3, 6))
    raw = rng.random((p, c)) ** 3  # spiky rows so hits at various taus occur
    probs = raw / raw.sum(axis=1, keepdims=True)
    return PredictionStream(f"v{rng.integers(1e9)}", probs,
                            int(rng.integers(0, c)), w_max=w_max)


class TestHit:
    def test_clear_hit(self):
        assert hit(np.array([0.8, 0.2]), 0, tau=0.7)

    def test_strict_at_tau(self):
        assert not hit(np.array([0.7, 0.3]), 0, tau=0.7)

    def test_tau_dependence(self):
        probs = np.array([0.6, 0.4])
        assert hit(probs, 0, tau=0.5)
        assert not hit(probs, 0, tau=0.7)

    def test_wrong_class_never_hits(self):
        assert not hit(np.array([0.9, 0.1]), 1, tau=0.1)

    def test_tie_breaks_to_lowest_index(self):
        assert hit(np.array([0.5, 0.5]), 0, tau=0.2)
        assert not hit(np.array([0.5, 0.5]), 1, tau=0.2)

    def test_invalid_tau(self):
        with pytest.raises(ValueError):
            hit(np.array([1.0, 0.0]), 0, tau=1.0)


class TestStability:
    def test_n1_is_empty_range(self):
        hits = np.zeros(18, bool)
        hits[[4, 5, 6]] = True
        assert stability(5, 1, hits) == 0.0

    def test_hand_case_n3(self):
        hits = np.zeros(18, bool)
        hits[[4, 5, 6]] = True  # windows 5, 6, 7
        assert stability(5, 3, hits) == pytest.approx(2 / 3)

    def test_hand_case_n5(self):
        hits = np.zeros(18, bool)
        hits[[4, 5, 6]] = True
        assert stability(5, 5, hits) == pytest.approx(2 / 5)

    def test_at_last_window(self):
        hits = np.ones(18, bool)
        assert stability(18, 5, hits) == 0.0

    def test_truncated_by_p(self):
        hits = np.ones(10, bool)
        # j runs 9..10: two hits over n=5
        assert stability(8, 5, hits) == pytest.approx(2 / 5)


class TestEs:
    def test_no_hit_is_zero(self):
        assert es(3, stream_from_hits([])) == 0.0

    def test_hand_case(self):
        s = stream_from_hits([5, 6, 7])
        assert es(1, s) == pytest.approx(13 / 18)
        assert es(3, s) == pytest.approx((13 + 2 / 3) / 18)
        assert es(5, s) == pytest.approx((13 + 2 / 5) / 18)
        assert mean_es([s]) == pytest.approx(0.74197, abs=1e-5)

    def test_hit_only_at_w_max_scores_zero(self):
        # Formula artifact, kept verbatim: indistinguishable from never hitting.
        s = stream_from_hits([18])
        assert es(1, s) == 0.0
        assert es(3, s) == 0.0

    def test_all_hits_from_w1(self):
        s = stream_from_hits(range(1, 19))
        assert esv(1, [s]) == pytest.approx(17 / 18)
        assert esv(3, [s]) == pytest.approx((17 + 2 / 3) / 18)
        assert esv(5, [s]) == pytest.approx((17 + 4 / 5) / 18)
        assert mean_es([s]) == pytest.approx(0.9716, abs=1e-4)

    def test_esv_is_mean(self):
        s1, s2 = stream_from_hits([4]), stream_from_hits([10])
        v1, v2 = es(3, s1), es(3, s2)
        assert esv(3, [s1, s2]) == pytest.approx((v1 + v2) / 2)


class TestAveragedMetrics:
    def test_top1_perfect(self):
        assert top1_accuracy([stream_from_hits(range(1, 19))]) == 100.0

    def test_top1_two_video_mean(self):
        good = stream_from_hits(range(1, 19), label=1)
        bad = stream_from_hits([], label=1)
        # 'bad' has uniform rows: argmax ties to class 0, label is 1
        assert top1_accuracy([good, bad]) == pytest.approx(50.0)

    def test_macro_f1_hand_case(self):
        # One window, 4 videos: y=[0,0,1,1], pred=[0,1,0,1] -> macro F1 50
        streams = []
        for label, pred in [(0, 0), (0, 1), (1, 0), (1, 1)]:
            probs = np.zeros((1, 2))
            probs[0, pred] = 0.9
            probs[0, 1 - pred] = 0.1
            streams.append(PredictionStream(f"v{label}{pred}", probs, label, w_max=18))
        assert macro_f1(streams) == pytest.approx(50.0)

    def test_qwk_perfect_agreement(self):
        streams = [stream_from_hits(range(1, 19), label=c % 5) for c in range(10)]
        assert qwk(streams) == pytest.approx(1.0)

    def test_qwk_hand_case_antidiagonal(self):
        # C=2, one window, y=[0,1], pred=[1,0] -> kappa = -1
        s1 = PredictionStream("a", np.array([[0.1, 0.9]]), 0, w_max=18)
        s2 = PredictionStream("b", np.array([[0.9, 0.1]]), 1, w_max=18)
        assert qwk([s1, s2]) == pytest.approx(-1.0)

    def test_per_video_protocol_runs(self):
        rng = np.random.default_rng(0)
        streams = [random_stream(rng, c=4) for _ in range(6)]
        assert -1.0 <= qwk(streams, protocol="per_video") <= 1.0
        assert 0.0 <= macro_f1(streams, protocol="per_video") <= 100.0


class TestOracleEquivalence:
    def test_against_brute_force(self):
        rng = np.random.default_rng(123)
        for _ in range(60):
            c = int(rng.integers(3, 6))
            tau = float(rng.uniform(0.2, 0.8))
            streams = [random_stream(rng, c=c) for _ in range(int(rng.integers(2, 8)))]
            triples = [(s.probs, s.label, s.w_max) for s in streams]
            for s, t in zip(streams, triples):
                assert stream_hits(s, tau).tolist() == oracles.oracle_hits(*t[:2], tau)
                for n in (1, 3, 5):
                    assert es(n, s, tau) == pytest.approx(
                        oracles.oracle_es(n, *t[:2], tau, t[2]), abs=1e-12)
            for n in (1, 3, 5):
                assert esv(n, streams, tau) == pytest.approx(
                    oracles.oracle_esv(n, triples, tau), abs=1e-9)
            assert mean_es(streams, tau) == pytest.approx(
                oracles.oracle_mean_es(triples, tau), abs=1e-9)
            assert top1_accuracy(streams) == pytest.approx(
                oracles.oracle_top1(triples), abs=1e-9)
            assert macro_f1(streams) == pytest.approx(
                oracles.oracle_macro_f1(triples, c), abs=1e-9)
            assert qwk(streams) == pytest.approx(
                oracles.oracle_qwk(triples, c), abs=1e-9)


@st.composite
def hit_patterns(draw):
    p = draw(st.integers(4, 18))
    pattern = draw(st.lists(st.booleans(), min_size=p, max_size=p))
    return pattern


class TestInvariants:
    @settings(max_examples=60, deadline=None)
    @given(hit_patterns(), st.integers(1, 6))
    def test_earliness_monotonicity(self, pattern, n):
        """Translating the whole hit pattern one window earlier never lowers ES."""
        if not any(pattern) or pattern.index(True) == 0:
            return
        p = len(pattern)
        shifted = pattern[1:] + [False]
        s_late = stream_from_hits([i + 1 for i, h in enumerate(pattern) if h], p=p)
        s_early = stream_from_hits([i + 1 for i, h in enumerate(shifted) if h], p=p)
        assert es(n, s_early) >= es(n, s_late) - 1e-12

    @settings(max_examples=60, deadline=None)
    @given(hit_patterns(), st.integers(1, 6), st.integers(0, 17))
    def test_stability_monotonicity(self, pattern, n, extra):
        """Adding a hit inside the stability span never lowers ES."""
        if not any(pattern):
            return
        p = len(pattern)
        first = pattern.index(True) + 1
        lo, hi = first + 1, min(first + n - 1, p)
        if lo > hi:
            return
        w_new = lo + extra % (hi - lo + 1)
        augmented = list(pattern)
        augmented[w_new - 1] = True
        s0 = stream_from_hits([i + 1 for i, h in enumerate(pattern) if h], p=p)
        s1 = stream_from_hits([i + 1 for i, h in enumerate(augmented) if h], p=p)
        assert es(n, s1) >= es(n, s0) - 1e-12

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.95))
    def test_bounds(self, seed, tau):
        rng = np.random.default_rng(seed)
        streams = [random_stream(rng) for _ in range(3)]
        for n in (1, 3, 5):
            v = esv(n, streams, tau)
            assert 0.0 <= v < 1.0
        assert 0.0 <= mean_es(streams, tau) < 1.0

    def test_hit_invariant_prob_changes(self):
        """Reshuffling non-argmax mass leaves every ES value unchanged."""
        rng = np.random.default_rng(7)
        for _ in range(50):
            s = random_stream(rng, c=5)
            probs = s.probs.copy()
            for i in range(probs.shape[0]):
                top = np.argmax(probs[i])
                rest = [c for c in range(5) if c != top]
                mass = probs[i, rest].sum()
                mix = rng.random(4)
                probs[i, rest] = mass * mix / mix.sum()
            s2 = PredictionStream(s.video_id, probs, s.label, w_max=s.w_max)
            for n in (1, 3, 5):
                assert es(n, s2, 0.6) == es(n, s, 0.6)

    def test_probability_exactly_tau_never_hits(self):
        probs = np.zeros((1, 4))
        probs[0, 2] = 0.7
        probs[0, [0, 1, 3]] = 0.1
        s = PredictionStream("v", probs, 2, w_max=18)
        assert not stream_hits(s, 0.7)[0]


class TestStreamValidation:
    def test_rejects_unnormalized(self):
        probs = np.full((3, 4), 0.3)
        with pytest.raises(ValueError, match="sum"):
            PredictionStream("v", probs, 0)

    def test_rejects_bad_label(self):
        probs = np.full((3, 4), 0.25)
        with pytest.raises(ValueError, match="label"):
            PredictionStream("v", probs, 4)


class TestStreamFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        streams = [random_stream(rng, c=4) for _ in range(5)]
        path = tmp_path / "streams.jsonl"
        write_streams(streams, path)
        back = read_streams(path, w_max=18)
        back_by_id = {s.video_id: s for s in back}
        assert set(back_by_id) == {s.video_id for s in streams}
        for s in streams:
            b = back_by_id[s.video_id]
            assert b.label == s.label
            np.testing.assert_allclose(b.probs, s.probs, atol=1e-12)

    def test_rejects_gappy_windows(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            '{"video_id": "v", "scale": "", "w": 1, "probs": [0.5, 0.5], "label": 0}\n'
            '{"video_id": "v", "scale": "", "w": 3, "probs": [0.5, 0.5], "label": 0}\n')
        with pytest.raises(ValueError, match="contiguous"):
            read_streams(path)


class TestEvalReport:
    def test_summary_fields_and_csv(self, tmp_path):
        rng = np.random.default_rng(3)
        streams = [random_stream(rng, c=3) for _ in range(4)]
        report = evaluate(streams, tau=0.5)
        assert set(report.summary()) == {
            "top1", "f1", "qwk", "esv1", "esv3", "esv5", "mean_es", "tau"}
        assert report.mean_es == pytest.approx(
            (report.esv1 + report.esv3 + report.esv5) / 3)
        assert len(report.per_video) == 4
        assert len(report.per_window) == 18
        path = report.write_csv(tmp_path / "report.csv")
        header = path.read_text().splitlines()[0]
        assert "mean_es" in header and "qwk" in header
