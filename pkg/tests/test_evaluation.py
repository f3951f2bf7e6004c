import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attribmmf.errors import EmptyInput, LengthMismatch
from attribmmf.evaluation import confusion_counts, macro_f1, micro_f1, stratified_split

from oracles import counting_f1


def test_hand_derived_case():
    truth, pred = ["A", "A", "B"], ["A", "B", "B"]
    assert abs(micro_f1(truth, pred) - 2 / 3) < 1e-12
    assert abs(macro_f1(truth, pred) - 2 / 3) < 1e-12


def test_perfect_and_all_wrong():
    assert micro_f1([1, 2, 3], [1, 2, 3]) == 1.0
    assert macro_f1([1, 2, 3], [1, 2, 3]) == 1.0
    assert micro_f1([1, 1], [2, 2]) == 0.0 and macro_f1([1, 1], [2, 2]) == 0.0


def test_single_class_micro_equals_accuracy():
    truth = ["A"] * 4
    pred = ["A", "A", "A", "B"]
    assert abs(micro_f1(truth, pred) - 0.75) < 1e-12


def test_predicted_only_label_not_in_macro():
    # C never occurs in truth, so the macro average runs over A and B only
    truth, pred = ["A", "B"], ["A", "C"]
    assert abs(macro_f1(truth, pred) - 0.5) < 1e-12


def test_errors():
    with pytest.raises(LengthMismatch):
        micro_f1([1, 2], [1])
    with pytest.raises(EmptyInput):
        macro_f1([], [])


def test_confusion_counts():
    c = confusion_counts(["A", "A", "B"], ["A", "B", "B"])
    assert c == {"A": (1, 0, 1), "B": (1, 1, 0)}


@pytest.mark.parametrize("seed", range(5))
def test_metrics_match_counting_oracle(seed):
    rng = np.random.default_rng(seed)
    for _ in range(200):
        n_labels = int(rng.integers(1, 22))
        n = int(rng.integers(1, 60))
        truth = rng.integers(0, n_labels, size=n)
        pred = rng.integers(0, n_labels, size=n)
        micro, macro = counting_f1(truth.tolist(), pred.tolist())
        assert abs(micro_f1(truth, pred) - micro) <= 1e-12
        assert abs(macro_f1(truth, pred) - macro) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), min_size=1, max_size=40))
def test_metric_properties(pairs):
    truth, pred = zip(*pairs)
    mi, ma = micro_f1(truth, pred), macro_f1(truth, pred)
    assert 0.0 <= mi <= 1.0 and 0.0 <= ma <= 1.0
    acc = np.mean([t == p for t, p in pairs])
    assert abs(mi - acc) < 1e-12  # single-label multiclass micro F1 is accuracy
    assert micro_f1(pred, truth) == pytest.approx(mi)


def labels_for(counts):
    out = {}
    for g, n in counts.items():
        for i in range(n):
            out[f"report:{g}-{i:03d}"] = g
    return out


def test_split_partitions_and_is_seeded():
    labels = labels_for({"A": 50, "B": 30, "C": 10})
    s = stratified_split(labels, seed=4)
    assert sorted(s.train + s.val + s.test) == sorted(labels)
    assert not set(s.train) & set(s.val) and not set(s.val) & set(s.test)
    assert sum(labels[r] == "A" for r in s.test) == 5
    assert sum(labels[r] == "C" for r in s.val) == 1
    assert stratified_split(labels, seed=4) == s
    assert stratified_split(labels, seed=5) != s


def test_split_small_groups():
    s = stratified_split(labels_for({"A": 1, "B": 2, "C": 3}))
    assert "report:A-000" in s.train
    assert sum(r.startswith("report:B") for r in s.test) == 1
    assert sum(r.startswith("report:C") for r in s.val) == 1
    assert sum(r.startswith("report:C") for r in s.test) == 1


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.sampled_from("ABCDEFG"), st.integers(1, 40), min_size=1), st.integers(0, 99))
def test_split_covers_every_group_with_three_or_more(counts, seed):
    labels = labels_for(counts)
    s = stratified_split(labels, seed=seed)
    assert len(s.train) + len(s.val) + len(s.test) == len(labels)
    for g, n in counts.items():
        if n >= 3:
            assert any(labels[r] == g for r in s.val) and any(labels[r] == g for r in s.test)
            assert any(labels[r] == g for r in s.train)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=30), st.permutations(range(7)))
def test_metrics_invariant_under_relabelling(pairs, perm):
    truth, pred = zip(*pairs)
    t2 = [perm[t] for t in truth]
    p2 = [perm[p] for p in pred]
    assert micro_f1(t2, p2) == pytest.approx(micro_f1(truth, pred), abs=1e-12)
    assert macro_f1(t2, p2) == pytest.approx(macro_f1(truth, pred), abs=1e-12)
