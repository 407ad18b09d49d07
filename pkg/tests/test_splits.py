import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smearcl.core import SiteDataset, TaskStream
from smearcl.splits import (
    FoldAssignment,
    PatientGroupedKFold,
    assign_folds,
    fold_assignment,
    fold_streams,
    patient_grouped_kfold,
)

from conftest import make_record


def site_from_counts(images_per_patient, positive_patients=(), site_id="a"):
    recs = []
    for p, n in enumerate(images_per_patient):
        for k in range(n):
            infected = int(p in positive_patients and k == 0)
            recs.append(make_record(f"{site_id}_p{p}_i{k}", f"{site_id}_p{p}", site_id, infected=infected))
    return SiteDataset(site_id, train=recs[: len(recs) // 2], test=recs[len(recs) // 2:]) \
        if len(images_per_patient) < 2 else SiteDataset(site_id, train=recs, test=())


class TestAssignFolds:
    def test_three_patients_three_folds(self):
        a = assign_folds(["p0", "p1", "p2"], [True, False, False], k=3, seed=0)
        assert a.fold_sizes() == [1, 1, 1]

    def test_ninety_two_patients(self):
        pats = [f"p{i}" for i in range(92)]
        a = assign_folds(pats, [i % 3 == 0 for i in range(92)], k=3, seed=5)
        assert sorted(a.fold_sizes(), reverse=True) == [31, 31, 30]

    def test_deterministic(self):
        pats = [f"p{i}" for i in range(20)]
        pos = [i % 2 == 0 for i in range(20)]
        assert assign_folds(pats, pos, 3, 4) == assign_folds(pats, pos, 3, 4)
        assert assign_folds(pats, pos, 3, 4) != assign_folds(pats, pos, 3, 5)

    def test_insufficient_patients(self):
        with pytest.raises(ValueError, match="insufficient patients"):
            assign_folds(["p0", "p1"], [True, False], k=3)

    def test_k_below_two(self):
        with pytest.raises(ValueError):
            assign_folds(["p0", "p1"], [True, False], k=1)

    def test_positive_patients_spread(self):
        pats = [f"p{i}" for i in range(12)]
        pos = [i < 3 for i in range(12)]
        a = assign_folds(pats, pos, k=3, seed=1)
        assert sorted(a.fold_of_patient[p] for p in pats[:3]) == [0, 1, 2]

    def test_text_roundtrip(self):
        a = assign_folds([f"p{i}" for i in range(7)], [True] * 7, k=3, seed=2)
        assert FoldAssignment.from_text(a.to_text()) == a


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=3, max_size=25), st.integers(2, 4), st.integers(0, 10 ** 6),
       st.data())
def test_grouped_folds_never_leak(counts, k, seed, data):
    if len(counts) < k:
        counts = counts + [1] * (k - len(counts))
    positive = data.draw(st.sets(st.integers(0, len(counts) - 1)))
    site = site_from_counts(counts, positive)
    folds = patient_grouped_kfold(site, k=k, seed=seed)
    tests = [f.patients("test") for f in folds]
    all_patients = {r.patient_id for r in site.all_records}
    assert set().union(*tests) == all_patients
    for i in range(k):
        for j in range(i + 1, k):
            assert not tests[i] & tests[j]
    sizes = [len(t) for t in tests]
    assert max(sizes) - min(sizes) <= 1
    for f in folds:
        assert not f.patients("test") & (f.patients("train") | f.patients("val"))
        assert not f.patients("train") & f.patients("val")
        assert len(f.train) + len(f.val) + len(f.test) == len(site.all_records)


class TestValidationSplit:
    def test_ten_percent_of_patients(self):
        site = site_from_counts([2] * 30, set(range(0, 30, 2)))
        for f in patient_grouped_kfold(site, 3, 0, val_fraction=0.1):
            assert len(f.patients("val")) == 2
            assert any(r.positive for r in f.val)

    def test_no_validation(self):
        site = site_from_counts([2] * 9, {0, 1})
        assert all(not f.val for f in patient_grouped_kfold(site, 3, 0, val_fraction=0.0))


class TestSklearnSplitter:
    def test_groups_kept_together(self):
        groups = np.repeat([f"p{i}" for i in range(10)], 3)
        y = np.tile([True, False, False], 10)
        cv = PatientGroupedKFold(n_splits=3, random_state=0)
        assert cv.get_n_splits() == 3
        seen = []
        for train, test in cv.split(np.zeros(len(groups)), y, groups):
            assert not set(groups[train]) & set(groups[test])
            seen.extend(test)
        assert sorted(seen) == list(range(len(groups)))

    def test_groups_required(self):
        with pytest.raises(ValueError, match="groups"):
            list(PatientGroupedKFold().split(np.zeros(4)))


def test_fold_streams_keep_site_order():
    a = site_from_counts([2] * 6, {0, 1}, "a")
    b = site_from_counts([2] * 6, {2}, "b")
    streams = fold_streams(TaskStream((a, b)), k=3, seed=0)
    assert len(streams) == 3
    for f, s in enumerate(streams):
        assert [x.site_id for x in s] == ["a", "b"]
        assert s[0].patients("test") == set(fold_assignment(a, 3, 0).patients_in(f))
