import datetime as dt
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from prosocial_ranking.assignment import (
    Enrollment,
    InterventionCalendar,
    assign,
    control_pseudo_start,
    default_calendar,
    effective_start,
    enroll,
    is_treated,
    treatment_start,
)
from prosocial_ranking.feed import ContractViolation, Platform
from prosocial_ranking.rankers import TREATMENT_ARMS, RankerId

CAL = default_calendar()
D = dt.date


def e(arm, day):
    return Enrollment("u", day, arm)


def test_assignment_shares_and_determinism():
    counts = Counter(assign(f"user-{k}", 2024) for k in range(70_000))
    assert counts[RankerId.CONTROL] / 70_000 == pytest.approx(2 / 7, abs=0.01)
    for arm in TREATMENT_ARMS:
        assert counts[arm] / 70_000 == pytest.approx(1 / 7, abs=0.01)
    assert assign("abc", 1) == assign("abc", 1)
    assert len({assign("abc", s) for s in range(50)}) > 1


def test_assignment_independent_of_covariates():
    rng = np.random.default_rng(0)
    n = 4000
    rejections = 0
    for draw in range(20):
        x = rng.normal(size=n)
        treated = np.array([assign(f"d{draw}-{k}", 7) is not RankerId.CONTROL for k in range(n)])
        assert 0 < treated.sum() < n
        rejections += stats.ttest_ind(x[treated], x[~treated]).pvalue < 0.01
    assert rejections <= 2


@pytest.mark.parametrize(
    "enrolled, expected",
    [(D(2024, 8, 1), D(2024, 9, 6)), (D(2024, 9, 20), D(2024, 10, 4)), (D(2024, 9, 6), D(2024, 9, 20))],
)
def test_treatment_start_perspective(enrolled, expected):
    assert treatment_start(e(RankerId.UPRANK_BRIDGING, enrolled), CAL, Platform.TWITTER) == expected


def test_treatment_start_rejects_control():
    with pytest.raises(ContractViolation):
        treatment_start(e(RankerId.CONTROL, D(2024, 8, 1)), CAL, Platform.TWITTER)


def test_control_pseudo_start_examples():
    assert control_pseudo_start(e(RankerId.CONTROL, D(2024, 8, 1)), CAL) == D(2024, 9, 6)
    assert control_pseudo_start(e(RankerId.CONTROL, D(2024, 9, 25)), CAL) == D(2024, 10, 9)
    got = control_pseudo_start(e(RankerId.CONTROL, D(2024, 8, 1)), CAL, Platform.TWITTER, versus=RankerId.ADD_NEWS)
    assert got == D(2024, 10, 5)
    assert effective_start(e(RankerId.CONTROL, D(2024, 8, 1)), CAL, Platform.REDDIT) == D(2024, 9, 6)


def test_facebook_exceptions():
    assert CAL.start(RankerId.ADD_NEWS, Platform.FACEBOOK) == D(2024, 10, 21)
    assert CAL.start(RankerId.CHALLENGING_STEREOTYPES, Platform.REDDIT) == D(2024, 10, 6)
    assert CAL.earliest() == D(2024, 9, 6)


@settings(max_examples=100, deadline=None)
@given(st.dates(D(2024, 7, 1), D(2025, 1, 1)), st.sampled_from(TREATMENT_ARMS), st.sampled_from(list(Platform)))
def test_start_respects_holdback(day, arm, platform):
    en = e(arm, day)
    start = treatment_start(en, CAL, platform)
    assert start >= day + dt.timedelta(days=14)
    assert start >= CAL.start(arm, platform)
    assert not is_treated(en, CAL, platform, start - dt.timedelta(days=1))
    assert is_treated(en, CAL, platform, start)


def test_calendar_round_trip(tmp_path):
    rec = CAL.to_record()
    assert InterventionCalendar.from_record(rec) == CAL
    p = tmp_path / "cal.json"
    p.write_text(__import__("json").dumps(rec))
    assert InterventionCalendar.load(str(p)) == CAL
    with pytest.raises(ContractViolation):
        InterventionCalendar({}).start(RankerId.ADD_NEWS, Platform.TWITTER)


def test_enrollment_records():
    en = enroll("u9", "2024-08-03", 1, {"Democrat": 1})
    assert en.cohort == D(2024, 8, 3)
    assert Enrollment.from_record(en.to_record()) == en
    assert en.arm is assign("u9", 1)
