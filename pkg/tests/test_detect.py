import numpy as np
import pytest
from hypothesis import given, strategies as st

from ntpdetect.detect import (DetectionConfig, classify_log, default_grid, evaluate, hits_top_k,
                              in_top_k, score_trace, sweep_threshold, top_k)


def test_grid():
    g = default_grid()
    assert len(g) == 20 and g[0] == 0.05 and g[-1] == 1.0 and g[2] == 0.15


def test_config_validation():
    with pytest.raises(ValueError):
        DetectionConfig(logs_top_k=0)
    with pytest.raises(ValueError):
        DetectionConfig(threshold_grid=(0.2, 0.1))
    with pytest.raises(ValueError):
        DetectionConfig(threshold_grid=(0.0, 0.5))


def test_classify_log():
    p = np.array([0.1, 0.6, 0.3])
    assert classify_log(p, 1, 1) == "normal"
    assert classify_log(p, 0, 2) == "anomaly"
    assert all(classify_log(p, t, 3) == "normal" for t in range(3))
    probs = np.linspace(1.0, 0.1, 30)   # template k ranks k+1
    assert classify_log(probs, 19, 20) == "normal"
    assert classify_log(probs, 20, 20) == "anomaly"


def test_ties_favour_lower_id():
    p = np.array([0.25, 0.25, 0.25, 0.25])
    assert top_k(p, 2).tolist() == [0, 1]
    assert in_top_k(p, 1, 2) and not in_top_k(p, 2, 2)
    assert hits_top_k(np.tile(p, (4, 1)), [0, 1, 2, 3], 2).tolist() == [True, True, False, False]


def test_unknown_always_misses():
    p = np.array([0.9, 0.1])
    assert not in_top_k(p, 0, 2, unknown_id=0)
    assert hits_top_k(p[None], [0], 2, unknown_id=0).tolist() == [False]


def test_score_trace():
    hit, miss = (np.array([0.9, 0.1]), 0), (np.array([0.9, 0.1]), 1)
    assert score_trace([hit, hit, hit, miss], 1) == 0.25
    assert score_trace([hit] * 3, 1) == 0.0
    assert score_trace([miss] * 2, 1) == 1.0
    with pytest.raises(ValueError):
        score_trace([], 1)


def test_sweep_example():
    scores = [(0.5, "anomaly"), (0.6, "anomaly"), (0.0, "normal"), (0.1, "normal")]
    theta, report = sweep_threshold(scores)
    # strict ">" makes 0.10 already perfect, so that is the smallest best grid value
    assert theta == 0.10 and report.f1 == 1.0


def test_sweep_no_separation():
    theta, report = sweep_threshold([(0.0, "anomaly"), (0.0, "normal")])
    assert report.recall == 0.0 and theta == 0.05


def test_sweep_degenerate_labels():
    with pytest.raises(ValueError, match="anomalous"):
        sweep_threshold([(0.1, "normal")])
    with pytest.raises(ValueError, match="normal"):
        sweep_threshold([(0.1, "anomaly")])


def test_evaluate_examples():
    truth = ["anomaly"] * 10 + ["normal"] * 90
    preds = ["anomaly"] * 9 + ["normal"] + ["anomaly"] + ["normal"] * 89
    r = evaluate(preds, truth)
    assert (r.tp, r.fp, r.fn, r.tn) == (9, 1, 1, 89)
    assert r.precision == pytest.approx(0.9) and r.recall == pytest.approx(0.9)
    assert r.f1 == pytest.approx(0.9) and r.accuracy == pytest.approx(0.98)
    perfect = evaluate(truth, truth)
    assert perfect.accuracy == perfect.precision == perfect.recall == perfect.f1 == 1.0
    with pytest.raises(ValueError):
        evaluate(["normal"], [])
    assert "precision" in r.table()


@given(st.lists(st.floats(0, 1), min_size=1, max_size=6), st.integers(0, 5))
def test_hits_monotone_in_k(weights, target):
    p = np.array(weights) + 1e-3
    p /= p.sum()
    target = target % len(p)
    hits = [in_top_k(p, target, k) for k in range(1, len(p) + 1)]
    assert hits == sorted(hits) and hits[-1]
