"""Domain model: kind/view tables, cycle geometry, validation, serialization."""
from __future__ import annotations

import math

import pytest
from hypothesis import given, strategies as st

from echoloop.domain import (
    ALL_KINDS,
    CAVITY_KINDS,
    EVALUATED_KINDS,
    KIND_ALIASES,
    KIND_LABELS,
    VIEW_KINDS,
    WALL_KINDS,
    CardiacPhase,
    CycleParams,
    EchoStudy,
    EchoView,
    MeasurementKind,
    StudyQuality,
    DegradedWindow,
    ed_frames,
    es_frames,
    feasibility_vector,
    find_kind_mentions,
    kind_feasible,
    kinds_in_text,
    pixels_to_cm,
    study_from_dict,
    study_to_dict,
    validate_study,
    value_at,
)
from echoloop.errors import InvalidScale, NotFeasible

from conftest import make_plax_study


# -- label space -----------------------------------------------------------


def test_exactly_sixteen_kinds_with_unique_names():
    assert len(ALL_KINDS) == 16
    assert len({kind.value for kind in ALL_KINDS}) == 16


def test_exactly_seven_evaluated_kinds():
    assert len(EVALUATED_KINDS) == 7
    assert set(EVALUATED_KINDS) <= set(ALL_KINDS)


def test_every_kind_has_label_and_alias():
    for kind in ALL_KINDS:
        assert kind in KIND_LABELS
        assert KIND_ALIASES[kind]


def test_exactly_thirteen_views_every_kind_reachable():
    assert len(EchoView) == 13
    covered = set()
    for kinds in VIEW_KINDS.values():
        covered |= kinds
    assert covered == set(ALL_KINDS)


def test_exactly_two_phases():
    assert {p.value for p in CardiacPhase} == {"end-diastole", "end-systole"}


# -- caliper arithmetic ------------------------------------------------------


def test_pixels_to_cm_vertical_segment():
    assert pixels_to_cm((0, 0), (0, 100), 0.046) == pytest.approx(4.6)


def test_pixels_to_cm_zero_length():
    assert pixels_to_cm((5, 5), (5, 5), 0.3) == 0.0


def test_pixels_to_cm_345_triangle():
    assert pixels_to_cm((0, 0), (3, 4), 1.0) == pytest.approx(5.0)


@pytest.mark.parametrize("scale", [0.0, -0.5, float("inf"), float("nan")])
def test_pixels_to_cm_rejects_bad_scale(scale):
    with pytest.raises(InvalidScale):
        pixels_to_cm((0, 0), (1, 1), scale)


# -- cycle geometry ----------------------------------------------------------


def test_ed_es_frames_cosine_extrema():
    study = make_plax_study(frame_count=60, period=30, offset=0)
    assert ed_frames(study) == (0, 30)
    assert es_frames(study) == (15, 45)


def test_value_at_hits_configured_extrema():
    study = make_plax_study(lvid=(4.6, 3.0))
    for frame in ed_frames(study):
        assert value_at(study, MeasurementKind.LVID, frame) == pytest.approx(4.6, abs=1e-9)
    for frame in es_frames(study):
        assert value_at(study, MeasurementKind.LVID, frame) == pytest.approx(3.0, abs=1e-9)


def test_value_at_stays_between_extrema():
    study = make_plax_study()
    for frame in range(study.frame_count):
        v = value_at(study, MeasurementKind.LVID, frame)
        assert 3.0 - 1e-9 <= v <= 4.6 + 1e-9


def test_value_at_unknown_kind_raises():
    study = make_plax_study()
    with pytest.raises(NotFeasible):
        value_at(study, MeasurementKind.IVC, 0)


def test_wall_kind_peaks_at_end_systole():
    study = make_plax_study(ivs=(1.0, 1.3))
    assert value_at(study, MeasurementKind.IVS, 15) == pytest.approx(1.3, abs=1e-9)
    assert value_at(study, MeasurementKind.IVS, 0) == pytest.approx(1.0, abs=1e-9)


@given(offset=st.integers(min_value=0, max_value=23))
def test_offset_shifts_extrema(offset):
    study = make_plax_study(frame_count=72, period=24, offset=offset)
    ed = ed_frames(study)
    assert ed[0] == offset % 24
    for frame in ed:
        assert value_at(study, MeasurementKind.LVID, frame) == pytest.approx(4.6, abs=1e-9)


# -- feasibility -------------------------------------------------------------


def test_kind_outside_view_not_feasible():
    study = make_plax_study()
    assert not kind_feasible(study, MeasurementKind.TAPSE, 0)


def test_invisible_kind_not_feasible():
    study = make_plax_study()
    quality = StudyQuality(visible={**study.quality.visible, MeasurementKind.IVS: False})
    dimmed = EchoStudy(
        study_id=study.study_id,
        view=study.view,
        frame_count=study.frame_count,
        frame_rate=study.frame_rate,
        pixel_scale_cm=study.pixel_scale_cm,
        cycle=study.cycle,
        quality=quality,
    )
    assert not kind_feasible(dimmed, MeasurementKind.IVS, 0)
    assert kind_feasible(dimmed, MeasurementKind.LVID, 0)


def test_degraded_window_masks_only_named_kinds_and_frames():
    study = make_plax_study()
    window = DegradedWindow(start=10, end=14, kinds=frozenset({MeasurementKind.LVID}))
    degraded = EchoStudy(
        study_id=study.study_id,
        view=study.view,
        frame_count=study.frame_count,
        frame_rate=study.frame_rate,
        pixel_scale_cm=study.pixel_scale_cm,
        cycle=study.cycle,
        quality=StudyQuality(visible=study.quality.visible, degraded=(window,)),
    )
    assert not kind_feasible(degraded, MeasurementKind.LVID, 10)
    assert not kind_feasible(degraded, MeasurementKind.LVID, 13)
    assert kind_feasible(degraded, MeasurementKind.LVID, 14)
    assert kind_feasible(degraded, MeasurementKind.IVS, 10)


def test_feasibility_vector_covers_label_space():
    study = make_plax_study()
    vector = feasibility_vector(study, 0)
    assert set(vector) == set(ALL_KINDS)
    for kind, flag in vector.items():
        if flag:
            assert kind in VIEW_KINDS[study.view]


# -- validation ---------------------------------------------------------------


def test_validate_well_formed_study_is_clean():
    report = validate_study(make_plax_study())
    assert report.ok
    assert report.violations == ()


def test_validate_single_frame_study():
    report = validate_study(make_plax_study(frame_count=1))
    assert not report.ok
    assert any("frame_count" in v for v in report.violations)


def test_validate_cavity_ordering_violation():
    study = make_plax_study(lvid=(4.0, 5.0))  # es exceeds ed on a cavity
    report = validate_study(study)
    assert any("LVID" in v and "ed >= es" in v for v in report.violations)


def test_validate_wall_ordering_violation():
    study = make_plax_study(ivs=(1.3, 1.0))
    report = validate_study(study)
    assert any("IVS" in v and "es >= ed" in v for v in report.violations)


def test_validate_collects_multiple_violations():
    study = make_plax_study(frame_count=1, lvid=(4.0, 5.0))
    report = validate_study(study)
    assert len(report.violations) >= 2


# -- serialization -------------------------------------------------------------


def test_study_round_trips_through_dict():
    study = make_plax_study()
    doc = study_to_dict(study)
    back = study_from_dict(doc)
    assert back == study


def test_study_dict_is_json_plain():
    import json

    doc = study_to_dict(make_plax_study())
    json.dumps(doc)  # raises if any exotic type leaked


def test_round_trip_preserves_degraded_windows(studies_pool):
    degraded = [s for s in studies_pool if s.quality.degraded]
    assert degraded, "pool should contain degraded studies"
    study = degraded[0]
    assert study_from_dict(study_to_dict(study)) == study


# -- kind mention scanning ------------------------------------------------------


def test_find_mentions_orders_by_position():
    text = "Report the LVID and then the IVS at end-diastole."
    assert kinds_in_text(text) == [MeasurementKind.LVID, MeasurementKind.IVS]


def test_aortic_root_does_not_double_as_aorta():
    assert kinds_in_text("the aortic root diameter") == [MeasurementKind.AORTIC_ROOT]


def test_aorta_and_root_both_found_when_both_present():
    kinds = kinds_in_text("Measure the Aorta and the aortic root.")
    assert kinds == [MeasurementKind.AORTA, MeasurementKind.AORTIC_ROOT]


def test_alias_requires_word_boundary():
    # "la" embedded inside another word must not read as left atrium
    assert MeasurementKind.LA not in kinds_in_text("a lamentable plan")


def test_long_label_wins_over_embedded_alias():
    found = find_kind_mentions("left ventricular posterior wall thickness")
    assert [k for _, k in found] == [MeasurementKind.LVPW]


@given(st.sampled_from(list(ALL_KINDS)))
def test_every_label_resolves_to_its_kind(kind):
    assert kinds_in_text(f"Please report the {KIND_LABELS[kind]}.") == [kind]


def test_wall_and_cavity_sets_disjoint():
    assert not (WALL_KINDS & CAVITY_KINDS)
