#!/usr/bin/env python3
"""
Testes do controle nulo não linear: ponto fixo de Picard, raio de contração e pipeline global
"""
import math
import sys
sys.path.append('.')

import numpy as np
import pytest

from config.settings import settings
from control import nonlinear_null
from control.linear_null import SourceTermWeights, build_galerkin
from control.nonlinear_null import (
    GlobalPipelinePlan,
    PipelineReport,
    global_null_pipeline,
    picard_null,
    probe_direction,
    radius_search,
)
from core.errors import NoContraction, WeightOverflow
from core.schedule import ControlSchedule, H0Coefficients, LocalizedField, Segment
from core.spectral_core import SpectralField, TorusGrid, sobolev_norm

GRID = TorusGrid(1, 32)
HALF = GRID.nodes()[0] < math.pi


def _sin_x(amp):
    return SpectralField.from_modes(GRID, [((1,), "sin", amp)])


def test_zero_data_converges_immediately():
    print("🧪 Testando Picard com u₀ = 0...")
    sys9 = build_galerkin(GRID, HALF, 16.0)
    state, traj = picard_null(sys9, SpectralField.zeros(GRID), SourceTermWeights.default(1.0))
    assert state.converged
    assert state.iteration == 1
    assert state.ratios == []
    assert state.resim_terminal_norm == 0.0
    assert traj.final.is_zero()


def test_local_null_control():
    print("🧪 Testando controle nulo local para u₀ = 0.01 sin x, T = 1...")
    sys9 = build_galerkin(GRID, HALF, 16.0)
    state, traj = picard_null(sys9, _sin_x(0.01), SourceTermWeights.default(1.0))
    assert state.converged
    assert state.iteration <= 20
    assert all(r < 1.0 for r in state.ratios)
    assert state.report.terminal_norm <= 1e-8 * state.report.initial_norm
    assert state.resim_terminal_norm <= 1e-6
    assert traj.final_time == 1.0
    assert state.control_sup_norm > 0.0
    assert all(s.kind in ("localized", "free") for s in state.glued.to_schedule().segments)


def test_large_data_does_not_contract():
    print("🧪 Testando perda de contração para dados grandes...")
    sys9 = build_galerkin(GRID, HALF, 16.0)
    with pytest.raises(NoContraction):
        picard_null(sys9, _sin_x(10.0), SourceTermWeights.default(1.0), verify=False)


def test_radius_search():
    print("🧪 Testando a busca do raio de contração...")
    sys9 = build_galerkin(GRID, HALF, 16.0)
    direction = probe_direction(sys9)
    assert sobolev_norm(direction, 0.0) == pytest.approx(1.0, rel=1e-12)
    radius = radius_search(sys9, SourceTermWeights.default(0.5), probe_max=1.0, bisections=8)
    assert 0.0 < radius <= 1.0


def test_pipeline_plan_validation():
    print("🧪 Testando a estrutura em três estágios...")
    free = ControlSchedule((Segment(0.0, 0.1),))
    with pytest.raises(ValueError):
        GlobalPipelinePlan(0.5, 0.1, 1.0, free, free, free, 1.0, 0.5)
    with pytest.raises(ValueError):
        global_null_pipeline(_sin_x(1.0), 0.5, 0.5, 1.0, HALF)


def test_pipeline_with_zero_data(tmp_path):
    print("🧪 Testando o pipeline global com u₀ = 0...")
    plan, traj = global_null_pipeline(SpectralField.zeros(GRID), 0.05, 0.5, 1.0, HALF)
    assert plan.stage_structure_ok()
    assert plan.schedule.end == pytest.approx(1.0)
    assert traj.final.is_zero()
    path = plan.to_report().write(tmp_path / "pipeline.json")
    back = PipelineReport.model_validate_json(path.read_text(encoding="utf-8"))
    assert back.segments == {"free": 1, "steering": 1, "localized": 1}


def test_global_pipeline():
    print("🧪 Testando o pipeline global para u₀ = sin x, (ε, δ, T) = (0.05, 0.5, 1)...")
    plan, traj = global_null_pipeline(_sin_x(1.0), 0.05, 0.5, 1.0, HALF)
    assert plan.stage_structure_ok()
    assert plan.radius_target == pytest.approx(0.5 * plan.radius)
    assert plan.steering_error < plan.radius_target
    assert plan.terminal_norm <= 1e-4
    assert plan.schedule.end == pytest.approx(1.0)
    assert np.isclose(traj.times, 0.05).any() and np.isclose(traj.times, 0.5).any()
    stages = {s.label for s in plan.schedule.segments}
    assert stages == {"stage1-free", "stage2-steer", "stage3-local"}


def test_picard_is_deterministic():
    print("🧪 Testando que Picard repete bit a bit...")
    sys9 = build_galerkin(GRID, HALF, 16.0)
    w = SourceTermWeights.default(1.0)
    first, traj1 = picard_null(sys9, _sin_x(0.01), w)
    second, traj2 = picard_null(sys9, _sin_x(0.01), w)
    assert first.iteration == second.iteration
    assert first.differences == second.differences
    assert first.ratios == second.ratios
    assert np.array_equal(first.S.values, second.S.values)
    assert sobolev_norm(traj1.final - traj2.final, 0.0) == 0.0


def test_contraction_ratio_grows_with_amplitude():
    print("🧪 Testando razões de contração em 0.01, 0.03 e 0.1...")
    sys9 = build_galerkin(GRID, HALF, 16.0)
    w = SourceTermWeights.default(1.0)
    ratios = [picard_null(sys9, _sin_x(amp), w, max_iter=3, verify=False)[0].max_ratio
              for amp in (0.01, 0.03, 0.1)]
    assert ratios[0] > 0.0
    assert ratios[0] <= ratios[1] <= ratios[2]


def _contracts(sys, amp, w):
    direction = probe_direction(sys)
    state, _ = picard_null(sys, direction * amp, w, verify=False)
    return state.converged and state.max_ratio < settings.radius_ratio_max


def test_radius_brackets_contraction():
    print("🧪 Testando R/2 convergente, 2R divergente e R decrescente com T...")
    sys9 = build_galerkin(GRID, HALF, 16.0)
    radius = radius_search(sys9, SourceTermWeights.default(1.0), probe_max=4.0, bisections=8)
    assert 0.0 < radius < 4.0
    assert _contracts(sys9, radius / 2.0, SourceTermWeights.default(1.0))
    assert not _contracts(sys9, 2.0 * radius, SourceTermWeights.default(1.0))
    shorter = radius_search(sys9, SourceTermWeights.default(0.5), probe_max=4.0, bisections=8)
    assert shorter <= radius


def test_picard_keeps_programming_errors():
    print("🧪 Testando que só falhas numéricas viram NoContraction...")
    sys9 = build_galerkin(GRID, HALF, 16.0)
    w = SourceTermWeights.default(1.0)
    real = nonlinear_null.weighted_source_norm

    def failing_on_second_iteration(error):
        calls = []

        def norm(*args, **kwargs):
            calls.append(1)
            if len(calls) > 2:
                raise error
            return real(*args, **kwargs)
        return norm

    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(nonlinear_null, "weighted_source_norm", failing_on_second_iteration(ValueError("entrada")))
        with pytest.raises(ValueError):
            picard_null(sys9, _sin_x(0.01), w, verify=False)
        mp.setattr(nonlinear_null, "weighted_source_norm",
                   failing_on_second_iteration(WeightOverflow(float("inf"))))
        with pytest.raises(NoContraction):
            picard_null(sys9, _sin_x(0.01), w, verify=False)


def test_stage_structure_checks_mask_and_h0_size():
    print("🧪 Testando suporte em ω e 2d+1 coeficientes na estrutura dos estágios...")
    free = ControlSchedule((Segment(0.0, 0.1, None, label="stage1-free"),))
    good_steer = ControlSchedule((Segment(0.0, 0.4, H0Coefficients((0.0, 1.0, 0.0)), label="stage2-steer"),))
    bad_steer = ControlSchedule((Segment(0.0, 0.4, H0Coefficients((0.0, 1.0, 0.0, 0.0, 0.0)),
                                         label="stage2-steer"),))
    g = _sin_x(1.0)
    inside = ControlSchedule((Segment(0.0, 0.5, LocalizedField.from_field(g, HALF), label="stage3-local"),))
    outside = ControlSchedule((Segment(0.0, 0.5, LocalizedField.from_field(g, np.ones(GRID.shape, dtype=bool)),
                                       label="stage3-local"),))

    def plan(steer, local):
        return GlobalPipelinePlan(0.1, 0.5, 1.0, free, steer, local, 1.0, 0.5, mask=HALF)

    assert plan(good_steer, inside).stage_structure_ok()
    assert not plan(good_steer, outside).stage_structure_ok()
    assert not plan(bad_steer, inside).stage_structure_ok()
    # sem máscara só os tipos são conferidos
    assert GlobalPipelinePlan(0.1, 0.5, 1.0, free, bad_steer, outside, 1.0, 0.5).stage_structure_ok()


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    test_zero_data_converges_immediately()
    test_local_null_control()
    test_large_data_does_not_contract()
    test_radius_search()
    test_pipeline_plan_validation()
    with tempfile.TemporaryDirectory() as tmp:
        test_pipeline_with_zero_data(Path(tmp))
    test_global_pipeline()
    test_picard_is_deterministic()
    test_contraction_ratio_grows_with_amplitude()
    test_radius_brackets_contraction()
    test_picard_keeps_programming_errors()
    test_stage_structure_checks_mask_and_h0_size()
    print("✅ Controle nulo não linear OK")
