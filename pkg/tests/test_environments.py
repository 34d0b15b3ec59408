from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from musclereward.dynamics import muscle_force
from musclereward.environments import (
    INJURY_SCALE,
    TASK_IDS,
    Terrain,
    build_task,
    load_task,
    rough_terrain,
    terrain_height,
    walker_morphology,
)


def test_catalog_has_six_tasks():
    assert set(TASK_IDS) == {"walker_flat", "walker_slope", "walker_rough", "walker_injured", "arm_reach",
                             "arm_reorient"}


def test_build_task_is_deterministic():
    m1, t1, s1, spec1 = build_task("walker_flat", 7)
    m2, t2, s2, spec2 = build_task("walker_flat", 7)
    assert np.array_equal(s1.q, s2.q) and np.array_equal(m1.moment_arms, m2.moment_arms)
    assert spec1.to_dict() == spec2.to_dict()


def test_unknown_task_raises():
    with pytest.raises(KeyError):
        load_task("walker_moon")


def test_presets_are_over_actuated():
    walker = load_task("walker_flat").morphology
    arm = load_task("arm_reach").morphology
    assert len(walker.links) == 7 and walker.n_u == 16
    assert len(arm.links) == 3 and arm.n_u == 6
    for m in (walker, arm):
        assert m.n_u > len(m.links)
        assert np.all(np.any(m.moment_arms != 0, axis=1))


def test_manipulation_tasks_carry_targets():
    for tid in TASK_IDS:
        task = load_task(tid)
        if tid.startswith("arm"):
            assert task.spec.target_position is not None and task.s0.obj is not None
        else:
            assert task.spec.target_position is None and task.spec.target_orientation is None
    assert load_task("arm_reorient").spec.target_orientation is not None


def test_injured_muscles_are_weakened():
    healthy = load_task("walker_flat").morphology
    task = load_task("walker_injured", seed=4)
    assert task.spec.injury
    injured = {i for i, _ in task.spec.injury}
    for i, (h, w) in enumerate(zip(healthy.muscle_params, task.morphology.muscle_params)):
        expect = h.f_max * INJURY_SCALE if i in injured else h.f_max
        assert w.f_max == pytest.approx(expect, rel=1e-15)


@given(hnp.arrays(float, 16, elements=st.floats(0, 1)), hnp.arrays(float, 16, elements=st.floats(-0.05, 0.05)),
       hnp.arrays(float, 16, elements=st.floats(-2, 2)))
def test_injury_never_increases_force(a, dl, v):
    healthy = walker_morphology()
    injured = walker_morphology(load_task("walker_injured").spec.injury)
    l = healthy.rest_lengths + dl
    fh = muscle_force(l, v, a, healthy.muscles)
    fi = muscle_force(l, v, a, injured.muscles)
    assert np.all(np.abs(fi) <= np.abs(fh))


def test_terrain_examples():
    assert terrain_height(Terrain("flat"), 3.2) == 0.0
    assert terrain_height(Terrain("slope", slope_angle=0.1), 1.0) == pytest.approx(math.tan(0.1), rel=1e-15)
    assert math.tan(0.1) == pytest.approx(0.10033, abs=1e-5)
    rough = rough_terrain(5)
    knots = rough.knots
    for i in (0, 3, len(knots) // 2, len(knots) - 1):
        assert terrain_height(rough, knots[i]) == rough.heights[i]


def test_slope_task_geometry():
    task = load_task("walker_slope", 2)
    xs = np.linspace(-1, 5, 13)
    assert np.allclose(task.terrain.height(xs), xs * math.tan(task.terrain.slope_angle), rtol=0, atol=1e-15)


def test_rough_terrain_reproducible_and_bounded():
    a, b = rough_terrain(11), rough_terrain(11)
    assert np.array_equal(a.heights, b.heights)
    assert not np.array_equal(a.heights, rough_terrain(12).heights)
    assert np.all(np.abs(a.heights) <= 0.03)
    assert np.allclose(np.diff(a.knots), 0.25)


def test_walker_starts_on_the_ground():
    for tid in ("walker_flat", "walker_slope", "walker_rough"):
        task = load_task(tid, 1)
        kin = task.morphology.kin
        feet = kin.points(task.s0.q, kin.C_contact)
        gap = feet[:, 1] - task.terrain.height(feet[:, 0])
        assert gap.min() == pytest.approx(0.0, abs=1e-12)
        assert task.fall_height < task.nominal_height


def test_task_spec_serializes():
    d = load_task("arm_reorient").spec.to_dict()
    assert d["task_id"] == "arm_reorient" and len(d["target_position"]) == 2
