"""Shared fixtures: one study pool and one guideline index per test session."""
from __future__ import annotations

import pytest

from echoloop.domain import (
    CardiacPhase,
    CycleParams,
    EchoStudy,
    EchoView,
    MeasurementKind,
    StudyQuality,
)
from echoloop.guidelines import build_reference_index
from echoloop.sim import SimConfig, generate_studies

POOL_SEED = 7
POOL_SIZE = 80


@pytest.fixture(scope="session")
def studies_pool():
    return generate_studies(SimConfig(study_count=POOL_SIZE, seed=POOL_SEED))


@pytest.fixture(scope="session")
def reference_index():
    return build_reference_index()


def make_plax_study(
    study_id: str = "study_demo",
    frame_count: int = 60,
    period: int = 30,
    offset: int = 0,
    lvid: tuple[float, float] = (4.6, 3.0),
    ivs: tuple[float, float] = (1.0, 1.3),
) -> EchoStudy:
    """Hand-built parasternal study with closed-form extrema for exact tests."""
    values = {
        MeasurementKind.IVS: ivs,
        MeasurementKind.LVID: lvid,
        MeasurementKind.LVPW: (0.9, 1.15),
        MeasurementKind.LA: (3.6, 3.1),
        MeasurementKind.AORTA: (3.0, 2.9),
        MeasurementKind.AORTIC_ROOT: (3.2, 3.05),
    }
    return EchoStudy(
        study_id=study_id,
        view=EchoView.PLAX,
        frame_count=frame_count,
        frame_rate=50.0,
        pixel_scale_cm=0.046,
        cycle=CycleParams(period_frames=period, offset_frames=offset, values=values),
        quality=StudyQuality(visible={kind: True for kind in values}),
    )


@pytest.fixture()
def plax_study():
    return make_plax_study()


ED = CardiacPhase.ED
ES = CardiacPhase.ES
