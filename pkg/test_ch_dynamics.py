#!/usr/bin/env python3
"""
Testes da dinâmica de Cahn–Hilliard e das agendas de controle
"""
import math
import sys
sys.path.append('.')

import numpy as np
import pytest

from core.ch_dynamics import (
    EvolutionProblem,
    check_growth,
    concatenation_check,
    energy_increments,
    evolve,
    flow_shift_check,
    free_energy,
    mass,
    richardson_order,
    trajectory_to_csv,
)
from core.errors import StepSizeTooLarge
from core.schedule import ControlSchedule, H0Coefficients, LocalizedField, Segment
from core.spectral_core import SpectralField, TorusGrid, sobolev_norm

GRID = TorusGrid(1, 32)


def _modes(*terms):
    return SpectralField.from_modes(GRID, terms)


def test_fixed_points():
    print("🧪 Testando pontos fixos (zero e constantes)...")
    for u0 in (SpectralField.zeros(GRID), SpectralField.constant(GRID, 0.3)):
        traj = evolve(EvolutionProblem(u0, 1.0, dt=1e-2))
        assert sobolev_norm(traj.final - u0, 1) < 1e-14
        assert traj.final_time == 1.0
        assert not traj.terminated_early


def test_problem_validation():
    print("🧪 Testando validação do problema de evolução...")
    u0 = _modes(((1,), "sin", 0.1))
    with pytest.raises(ValueError):
        EvolutionProblem(u0, 0.0)
    with pytest.raises(ValueError):
        EvolutionProblem(u0, 1.0, dt=-1e-3)
    with pytest.raises(ValueError):
        EvolutionProblem(u0, 1.0, scheme="euler")
    short = ControlSchedule((Segment(0.0, 0.5, H0Coefficients.zeros(1)),))
    with pytest.raises(ValueError):
        EvolutionProblem(u0, 1.0, control=short)


def test_constant_control_shifts_mass():
    print("🧪 Testando controle constante em ℋ₀...")
    u0 = SpectralField.zeros(GRID)
    control = ControlSchedule((Segment(0.0, 1.0, H0Coefficients((0.2, 0.0, 0.0))),))
    traj = evolve(EvolutionProblem(u0, 1.0, control=control, dt=1e-2))
    assert traj.final.mean == pytest.approx(0.2, abs=1e-14)
    assert sobolev_norm(traj.final - SpectralField.constant(GRID, 0.2), 0) < 1e-14


def test_richardson_order():
    print("🧪 Testando ordem observada do ETDRK2...")
    u0 = _modes(((1,), "sin", 0.1), ((2,), "cos", 0.05))
    report = richardson_order(EvolutionProblem(u0, 0.5, dt=0.01))
    assert report.order >= 2.0 - 0.02
    assert report.differences[1] < report.differences[0]


def test_half_step_agreement():
    print("🧪 Testando dt contra dt/2 em H¹...")
    u0 = _modes(((1,), "sin", 0.1), ((2,), "cos", 0.05))
    coarse = evolve(EvolutionProblem(u0, 0.5, dt=1e-3)).final
    fine = evolve(EvolutionProblem(u0, 0.5, dt=5e-4)).final
    assert sobolev_norm(coarse - fine, 1) <= 1e-6



def test_flow_shift_identity():
    print("🧪 Testando ℛ_δ(u₀, φ, η) = ℛ_δ(u₀+φ, 0, η) − φ...")
    zero = SpectralField.zeros(GRID)
    assert flow_shift_check(_modes(((1,), "sin", 0.1)), zero, None, 0.1) == 0.0
    err = flow_shift_check(_modes(((1,), "sin", 0.1)), _modes(((1,), "cos", 0.2)), None, 0.1)
    assert err <= 1e-8
    err = flow_shift_check(zero, SpectralField.constant(GRID, 0.1), None, 0.05)
    assert err <= 1e-10
    eta = H0Coefficients((0.0, 0.3, -0.1))
    err = flow_shift_check(_modes(((2,), "cos", 0.1)), _modes(((1,), "sin", 0.2)), eta, 0.1)
    assert err <= 1e-8


def test_mass_and_free_energy():
    print("🧪 Testando massa e energia livre...")
    u = SpectralField.constant(GRID, 3.0) + _modes(((1,), "sin", 1.0))
    assert mass(u) == pytest.approx(3.0, abs=1e-14)
    assert free_energy(_modes(((1,), "sin", 1.0))) == pytest.approx(3 * math.pi / 16, abs=1e-12)
    assert free_energy(SpectralField.zeros(GRID)) == 0.0


def test_free_flow_conserves_mass_and_dissipates_energy():
    print("🧪 Testando conservação de massa e dissipação de energia...")
    u0 = _modes(((0,), "cos", 0.1), ((1,), "cos", 0.5), ((2,), "sin", 0.3), ((3,), "cos", 0.2))
    traj = evolve(EvolutionProblem(u0, 0.2, dt=1e-3, record_steps=True))
    assert len(traj.times) > 100
    assert abs(mass(traj.final) - mass(u0)) <= 1e-12
    increments = energy_increments(traj)
    assert increments.max() <= 1e-10
    assert free_energy(traj.final) < free_energy(u0)
    assert traj.smoothing_integral > 0.0


def _random_field(rng):
    terms = [((k,), phase, 0.5 * rng.standard_normal() / k ** 2) for k in range(1, 4) for phase in ("sin", "cos")]
    return _modes(*terms) + SpectralField.constant(GRID, 0.1 * rng.standard_normal())


def test_energy_and_mass_over_random_data():
    print("🧪 Testando dissipação de energia e massa em 10 sementes...")
    for seed in range(10):
        u0 = _random_field(np.random.default_rng(seed))
        traj = evolve(EvolutionProblem(u0, 0.1, record_steps=True))
        assert energy_increments(traj).max() <= 1e-10
        assert max(abs(mass(u) - mass(u0)) for u in traj.states) <= 1e-12


def test_concatenation():
    print("🧪 Testando concatenação de evoluções...")
    u0 = _modes(((1,), "sin", 0.2), ((2,), "cos", 0.1))
    control = ControlSchedule.from_durations([
        (0.3, H0Coefficients((0.05, 0.1, 0.0)), None),
        (0.3, H0Coefficients((0.0, 0.0, -0.2)), None),
    ])
    assert concatenation_check(u0, control, 0.25, 0.6, dt=1e-2) <= 1e-12
    assert concatenation_check(u0, None, 0.1, 0.3, dt=1e-2) <= 1e-12
    with pytest.raises(ValueError):
        concatenation_check(u0, None, 0.3, 0.3)


def test_localized_control_runs():
    print("🧪 Testando controle localizado 1_ω g...")
    u0 = _modes(((1,), "sin", 0.1))
    mask = GRID.nodes()[0] < math.pi
    g = LocalizedField.from_field(_modes(((2,), "cos", 0.5)), mask)
    control = ControlSchedule((Segment(0.0, 0.2, g), Segment(0.2, 0.4, None)))
    traj = evolve(EvolutionProblem(u0, 0.4, control=control, dt=1e-2, sample_times=[0.1]))
    assert list(traj.times) == [0.0, 0.1, 0.2, 0.4]
    assert traj.state_at(0.1) is traj.states[1]
    with pytest.raises(KeyError):
        traj.state_at(0.3)


def test_blowup_is_reported():
    print("🧪 Testando detecção de blow-up numérico...")
    u0 = _modes(((1,), "sin", 50.0))
    traj = evolve(EvolutionProblem(u0, 1.0, dt=1e-3, stop_on_blowup=True, growth_guard=None))
    assert traj.terminated_early
    assert traj.blowup_time is not None and traj.blowup_time <= 1.0
    assert all(np.all(np.isfinite(s.coeffs)) for s in traj.states)


def test_growth_guard():
    print("🧪 Testando guarda de crescimento por passo...")
    check_growth(1.0, 5.0, 0.0, 10.0, 0.1)
    check_growth(1.0, 100.0, 0.0, None, 0.1)
    with pytest.raises(StepSizeTooLarge):
        check_growth(1.0, 100.0, 0.0, 10.0, 0.1)
    # o forçamento do passo entra na referência
    check_growth(1.0, 15.0, 1.0, 10.0, 0.1)
    with pytest.raises(StepSizeTooLarge):
        check_growth(1.0, 15.0, 0.0, 10.0, 0.1)


def test_schedule_operations(tmp_path):
    print("🧪 Testando recorte, concatenação e gravação de agendas...")
    mask = GRID.nodes()[0] < 1.0
    a = ControlSchedule.from_durations([(0.5, H0Coefficients((1.0, 0.0, 0.0)), None), (0.5, None, None)])
    b = ControlSchedule.from_durations([(0.25, LocalizedField.from_field(_modes(((1,), "cos", 1.0)), mask), 1e-3)])
    joined = a.then(b)
    assert joined.end == pytest.approx(1.25)
    assert [s.kind for s in joined.segments] == ["h0", "free", "localized"]
    piece = joined.window(0.25, 1.1)
    assert piece.start == 0.0 and piece.end == pytest.approx(0.85)
    with pytest.raises(ValueError):
        ControlSchedule((Segment(0.0, 0.5), Segment(0.6, 1.0)))

    path = joined.to_jsonl(tmp_path / "schedule.jsonl")
    back = ControlSchedule.from_jsonl(path, GRID)
    assert back.boundaries() == joined.boundaries()
    loc = back.segments[2].payload
    assert np.array_equal(loc.mask, mask)
    assert sobolev_norm(loc.field - b.segments[0].payload.field, 0) < 1e-14


def test_trajectory_csv(tmp_path):
    print("🧪 Testando CSV de trajetória...")
    traj = evolve(EvolutionProblem(_modes(((1,), "sin", 0.1)), 0.1, dt=1e-2, sample_times=[0.05]))
    path = trajectory_to_csv(tmp_path / "trajectory.csv", traj)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("t,H0,H1")
    assert len(lines) == 1 + len(traj.times)


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    test_fixed_points()
    test_problem_validation()
    test_constant_control_shifts_mass()
    test_richardson_order()
    test_half_step_agreement()
    test_flow_shift_identity()
    test_mass_and_free_energy()
    test_free_flow_conserves_mass_and_dissipates_energy()
    test_energy_and_mass_over_random_data()
    test_concatenation()
    test_localized_control_runs()
    test_blowup_is_reported()
    test_growth_guard()
    with tempfile.TemporaryDirectory() as tmp:
        test_schedule_operations(Path(tmp))
        test_trajectory_csv(Path(tmp))
    print("✅ Dinâmica OK")
