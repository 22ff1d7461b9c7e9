import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcc.errors import LengthError
from vcc.metrics import accuracy, contingency, evaluate, nmi

from oracles import entropy_nmi, exhaustive_accuracy


def test_swapped_labels_are_perfect():
    acc, mapping = accuracy([1, 1, 0, 0], [0, 0, 1, 1])
    assert acc == 1.0 and mapping == {0: 1, 1: 0}
    assert nmi([1, 1, 0, 0], [0, 0, 1, 1]) == 1.0


def test_one_error_in_six():
    acc, _ = accuracy([0, 0, 1, 1, 2, 2], [0, 0, 1, 1, 2, 0])
    assert acc == pytest.approx(5 / 6)


def test_more_clusters_than_classes():
    acc, mapping = accuracy([0, 1, 2, 2], [0, 0, 1, 1])
    assert acc == pytest.approx(3 / 4)
    assert len(mapping) == 2


def test_fewer_clusters_than_classes():
    acc, _ = accuracy([0, 0, 0, 0], [0, 1, 2, 3])
    assert acc == pytest.approx(1 / 4)


def test_nmi_single_cluster_prediction():
    assert nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0
    assert nmi([0, 0, 0], [5, 5, 5]) == 1.0


def test_nmi_independent_partitions():
    assert nmi([0, 1, 0, 1], [0, 0, 1, 1]) == pytest.approx(0.0, abs=1e-15)


def test_nmi_partial_table():
    # contingency [[2, 0], [1, 1]]
    pred, truth = [0, 0, 1, 1], [0, 0, 0, 1]
    assert nmi(pred, truth) == pytest.approx(entropy_nmi(pred, truth), abs=1e-12)
    assert 0 < nmi(pred, truth) < 1


def test_contingency_table():
    table, p, t = contingency([3, 3, 7], [1, 2, 2])
    np.testing.assert_array_equal(table, [[1, 1], [0, 1]])
    np.testing.assert_array_equal(p, [3, 7])
    np.testing.assert_array_equal(t, [1, 2])


def test_length_mismatch():
    with pytest.raises(LengthError):
        accuracy([0, 1], [0])
    with pytest.raises(LengthError):
        nmi([], [])


def test_report_record():
    rec = evaluate([0, 0, 1], [1, 1, 0]).record()
    assert rec == {"acc": 1.0, "nmi": 1.0, "N": 3, "K_pred": 2, "K_true": 2}


labelings = st.integers(1, 5).flatmap(
    lambda k: st.lists(st.tuples(st.integers(0, k - 1), st.integers(0, 4)), min_size=1, max_size=30))


@settings(max_examples=80, deadline=None)
@given(labelings)
def test_accuracy_matches_exhaustive_search(rows):
    pred, truth = zip(*rows)
    assert accuracy(pred, truth)[0] == pytest.approx(exhaustive_accuracy(pred, truth), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(labelings, st.permutations(range(5)))
def test_metrics_invariant_to_relabelling(rows, perm):
    pred, truth = map(np.array, zip(*rows))
    relabelled = np.array(perm)[pred]
    assert accuracy(relabelled, truth)[0] == pytest.approx(accuracy(pred, truth)[0], abs=1e-12)
    assert nmi(relabelled, truth) == pytest.approx(nmi(pred, truth), abs=1e-12)
    assert nmi(truth, pred) == pytest.approx(nmi(pred, truth), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(labelings)
def test_metric_bounds(rows):
    pred, truth = zip(*rows)
    acc = accuracy(pred, truth)[0]
    k = max(len(set(pred)), len(set(truth)))
    assert 1 / k - 1e-12 <= acc <= 1
    assert 0 <= nmi(pred, truth) <= 1
