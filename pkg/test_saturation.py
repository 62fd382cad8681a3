#!/usr/bin/env python3
"""
Testes da álgebra de ℋ₀, da identidade Q e dos planos de geração de modos
"""
import itertools
import sys
from fractions import Fraction
sys.path.append('.')

import numpy as np
import pytest

from control.saturation import (
    TrigMode,
    TrigPoly,
    decompose_target,
    generate_mode_plan,
    load_plan,
    q_decompose,
    realize_plan,
    save_plan,
    sum_of_cubes,
    verify_identity_suite,
)
from core.errors import GridTooCoarse, TruncationTooLossy
from core.spectral_core import SpectralField, TorusGrid, sobolev_norm


def _target_field(grid, mode):
    return SpectralField.from_modes(grid, [(mode.p, mode.phase, float(mode.amplitude))])


def test_q_decompose_scalars():
    print("🧪 Testando Q(2, 3, 4)...")
    f = tuple(q_decompose(Fraction(2), Fraction(3), Fraction(4)))
    assert f == (3, -1, -1, -1)
    assert sum(v ** 3 for v in f) == 24
    flipped = tuple(q_decompose(Fraction(2), Fraction(3), Fraction(-4)))
    assert sum(v ** 3 for v in flipped) == -24


def test_q_identity_on_sine_cosine():
    print("🧪 Testando sin x · cos x = Σ f_i³...")
    grid = TorusGrid(1, 32)
    sin, cos = TrigPoly.mode((1,), "sin"), TrigPoly.mode((1,), "cos")
    triple = q_decompose(sin, cos, TrigPoly.constant(1, 1))
    expected = sin.evaluate(grid) * cos.evaluate(grid)
    assert np.abs(sum_of_cubes(triple, grid) - expected).max() <= 1e-13


def test_trig_modes_are_canonical():
    print("🧪 Testando forma canônica dos modos...")
    m = TrigMode((-2,), "sin", 1)
    assert m.p == (2,) and m.amplitude == -1
    assert TrigMode((0, -3), "cos", 2).p == (0, 3)
    assert TrigMode((1, 2), "sin").level == 2
    poly = TrigPoly.from_modes(2, [((1, 0), "sin", 1), ((-1, 0), "sin", 1)])
    assert poly.is_zero()
    h0 = (TrigPoly.constant(1, Fraction(1, 2)) + TrigPoly.mode((1,), "cos", 3)).to_h0()
    assert h0.coefficients == (0.5, 0.0, 3.0)
    with pytest.raises(ValueError):
        TrigPoly.mode((2,), "sin").to_h0()


def test_sin_2x_plan():
    print("🧪 Testando o plano de sin 2x...")
    grid = TorusGrid(1, 32)
    plan = generate_mode_plan(TrigMode((2,), "sin"))
    cubes = plan.cube_steps()
    assert len(cubes) == 4
    assert all(s.weight == Fraction(-1, 2) for s in cubes)
    assert all(s.ingredient.in_h0() for s in cubes)
    assert plan.depth() == 1
    out = realize_plan(plan, grid)
    assert sobolev_norm(out - _target_field(grid, plan.target), 0) <= 1e-13


def test_h0_modes_are_direct():
    print("🧪 Testando modos de ℋ₀ (sem cubos)...")
    plan = generate_mode_plan(TrigMode((0, 1), "cos", Fraction(3, 2)))
    assert plan.cube_steps() == []
    assert plan.depth() == 0
    assert plan.eta_part() == TrigPoly.mode((0, 1), "cos", Fraction(3, 2))


def test_split_h0():
    print("🧪 Testando separação da parte em ℋ₀...")
    poly = TrigPoly.from_modes(2, [((0, 0), "cos", 1), ((1, 0), "sin", 2), ((1, 1), "cos", 3), ((0, 2), "sin", 4)])
    low, high = poly.split_h0()
    assert low.in_h0()
    assert low == TrigPoly.from_modes(2, [((0, 0), "cos", 1), ((1, 0), "sin", 2)])
    assert all(m.l1 > 1 for m in high.terms())
    assert low + high == poly
    assert TrigPoly.zero(1).split_h0() == (TrigPoly.zero(1), TrigPoly.zero(1))


def test_diagonal_mode_in_2d():
    print("🧪 Testando sin(x₁ + x₂)...")
    grid = TorusGrid(2, 16)
    plan = generate_mode_plan(TrigMode((1, 1), "sin"))
    out = realize_plan(plan, grid)
    assert sobolev_norm(out - _target_field(grid, plan.target), 0) <= 1e-13


def test_sin_3x_realization():
    print("🧪 Testando sin 3x em n = 64...")
    grid = TorusGrid(1, 64)
    plan = generate_mode_plan(TrigMode((3,), "sin", Fraction(1, 3)))
    assert plan.depth() == 2
    out = realize_plan(plan, grid)
    assert sobolev_norm(out - _target_field(grid, plan.target), 0) <= 1e-11
    with pytest.raises(GridTooCoarse):
        realize_plan(generate_mode_plan(TrigMode((6,), "cos")), TorusGrid(1, 8))


def test_all_low_modes_realize_exactly():
    print("🧪 Testando todos os modos com |p|₁ <= 4 (d = 1, 2)...")
    for d in (1, 2):
        grid = TorusGrid(d, 32)
        for p in itertools.product(range(-4, 5), repeat=d):
            l1 = sum(abs(v) for v in p)
            nz = [v for v in p if v]
            if not nz or nz[0] < 0 or l1 > 4:
                continue
            for phase in ("sin", "cos"):
                plan = generate_mode_plan(TrigMode(p, phase))
                assert plan.depth() == max(0, l1 - 1)
                err = sobolev_norm(realize_plan(plan, grid) - _target_field(grid, plan.target), 0)
                assert err <= 1e-10, (p, phase, err)


def test_decompose_target():
    print("🧪 Testando decomposição de alvos em movimentos...")
    grid = TorusGrid(1, 32)
    target = SpectralField.from_modes(grid, [((1,), "sin", 0.2), ((0,), "cos", 0.1), ((2,), "sin", 0.3)])
    dec = decompose_target(target, 1, 1e-12)
    assert len(dec) == 2
    assert not dec[0].is_cubic and dec[1].is_cubic
    assert dec.tail_norm == 0.0
    assert dec.reconstruction_error <= 1e-12


def test_truncation_too_lossy():
    print("🧪 Testando cauda fora de A_I_N...")
    grid = TorusGrid(1, 32)
    target = SpectralField.from_modes(grid, [((5,), "sin", 1.0)])
    with pytest.raises(TruncationTooLossy):
        decompose_target(target, 3, 1e-12)
    with pytest.raises(ValueError):
        decompose_target(target, -1, 1e-12)
    dec = decompose_target(target, 4, 1e-12)
    assert dec.level == 4


def test_plan_file_round_trip(tmp_path):
    print("🧪 Testando gravação e leitura de planos...")
    plan = generate_mode_plan(TrigMode((2, 1), "cos", Fraction(-3, 7)))
    back = load_plan(save_plan(tmp_path / "plan.jsonl", plan))
    assert back == plan
    grid = TorusGrid(2, 16)
    assert sobolev_norm(realize_plan(back, grid) - realize_plan(plan, grid), 0) == 0.0


def test_identity_suite():
    print("🧪 Testando a suíte de identidades Q...")
    report = verify_identity_suite(TorusGrid(1, 64), count=100, seed=1)
    assert report.count == 100
    assert report.passed(1e-12)
    report = verify_identity_suite(TorusGrid(2, 32), count=20, seed=2)
    assert report.passed(1e-12)


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    test_q_decompose_scalars()
    test_q_identity_on_sine_cosine()
    test_trig_modes_are_canonical()
    test_sin_2x_plan()
    test_h0_modes_are_direct()
    test_split_h0()
    test_diagonal_mode_in_2d()
    test_sin_3x_realization()
    test_all_low_modes_realize_exactly()
    test_decompose_target()
    test_truncation_too_lossy()
    with tempfile.TemporaryDirectory() as tmp:
        test_plan_file_round_trip(Path(tmp))
    test_identity_suite()
    print("✅ Saturação OK")
