#!/usr/bin/env python3
"""
Testes do núcleo espectral: normas, operadores, produtos sem aliasing e projeções
"""
import itertools
import math
import sys
sys.path.append('.')

import numpy as np
import pytest

from core.errors import EmptyMask, GridTooCoarse
from core.spectral_core import (
    SpectralField,
    TorusGrid,
    apply_operator_A,
    cube,
    indicator_multiply,
    laplacian_of_cube,
    read_field_binary,
    real_modes,
    restrict_band,
    sobolev_norm,
    spectral_project,
    write_field_binary,
    write_spectrum_csv,
)


def _sin(grid, p, amp=1.0):
    return SpectralField.from_modes(grid, [(p, "sin", amp)])


def _cos(grid, p, amp=1.0):
    return SpectralField.from_modes(grid, [(p, "cos", amp)])


def _random_band_field(grid, seed, top=None):
    rng = np.random.default_rng(seed)
    top = grid.max_frequency if top is None else top
    terms = []
    for p in itertools.product(range(-top, top + 1), repeat=grid.d):
        nz = [v for v in p if v != 0]
        if nz and nz[0] > 0:
            terms.append((p, "sin", rng.normal()))
            terms.append((p, "cos", rng.normal()))
    terms.append(((0,) * grid.d, "cos", rng.normal()))
    return SpectralField.from_modes(grid, terms)


def test_grid_validation():
    print("🧪 Testando validação da malha...")
    with pytest.raises(ValueError):
        TorusGrid(3, 16)
    with pytest.raises(ValueError):
        TorusGrid(1, 12)
    with pytest.raises(ValueError):
        TorusGrid(1, 16, dealias_num=3, dealias_den=2)
    grid = TorusGrid(2, 16)
    assert grid.shape == (16, 16)
    assert grid.max_frequency == 7
    with pytest.raises(GridTooCoarse):
        grid.index_of((8, 0))


def test_sobolev_norm_of_sine():
    print("🧪 Testando normas de Sobolev de sin x...")
    grid = TorusGrid(1, 32)
    u = _sin(grid, (1,))
    assert sobolev_norm(u, 0) == pytest.approx(math.sqrt(0.5), abs=1e-12)
    assert sobolev_norm(u, 1) == pytest.approx(1.0, abs=1e-12)
    assert sobolev_norm(SpectralField.zeros(grid), 2) == 0.0


def test_operator_A_symbol():
    print("🧪 Testando o operador 𝒜 = −Δ² − Δ...")
    grid = TorusGrid(1, 32)
    assert apply_operator_A(SpectralField.constant(grid, 2.5)).is_zero()
    out = apply_operator_A(_sin(grid, (2,)))
    expected = _sin(grid, (2,), -12.0)
    assert np.abs(out.coeffs - expected.coeffs).max() < 1e-12
    # sin x está no núcleo
    assert sobolev_norm(apply_operator_A(_sin(grid, (1,))), 0) < 1e-14


def test_laplacian_of_sine_cubed():
    print("🧪 Testando Δ(sin³ x)...")
    grid = TorusGrid(1, 32)
    out = laplacian_of_cube(_sin(grid, (1,)))
    expected = SpectralField.from_modes(grid, [((1,), "sin", -0.75), ((3,), "sin", 2.25)])
    assert sobolev_norm(out - expected, 0) < 1e-13


def test_cube_matches_brute_force_convolution():
    print("🧪 Testando u³ contra a convolução direta...")
    for d, n in ((1, 16), (2, 8)):
        grid = TorusGrid(d, n)
        u = _random_band_field(grid, seed=7 + d)
        got = cube(u)
        top = grid.max_frequency
        band = list(itertools.product(range(-top, top + 1), repeat=d))
        coeff = {k: u.coefficient(k) for k in band}
        for k in band:
            total = 0.0 + 0.0j
            for k1 in band:
                for k2 in band:
                    k3 = tuple(a - b - c for a, b, c in zip(k, k1, k2))
                    if k3 in coeff:
                        total += coeff[k1] * coeff[k2] * coeff[k3]
            assert abs(got.coefficient(k) - total) < 1e-10 * max(1.0, abs(total))


def test_hermitian_symmetry_and_parseval():
    print("🧪 Testando simetria hermitiana e Parseval...")
    grid = TorusGrid(2, 16)
    u = _random_band_field(grid, seed=3)
    assert u.hermitian_defect() < 1e-14
    assert u.imaginary_defect() < 1e-13
    c = cube(u)
    assert c.hermitian_defect() < 1e-10
    mean_square = float(np.mean(u.values() ** 2))
    assert sobolev_norm(u, 0) ** 2 == pytest.approx(mean_square, rel=1e-12)


def test_spectral_project_splits_modes():
    print("🧪 Testando projeção espectral E_λ...")
    grid = TorusGrid(1, 32)
    u = _sin(grid, (1,)) + _sin(grid, (2,))
    low, high = spectral_project(u, 1.0)
    assert sobolev_norm(low - _sin(grid, (1,)), 0) < 1e-15
    assert sobolev_norm(high - _sin(grid, (2,)), 0) < 1e-15
    with pytest.raises(ValueError):
        spectral_project(u, -1.0)


def test_indicator_multiply():
    print("🧪 Testando multiplicação pela indicadora de ω...")
    grid = TorusGrid(1, 32)
    u = _sin(grid, (1,)) + SpectralField.constant(grid, 0.5)
    full = np.ones(grid.shape, dtype=bool)
    assert sobolev_norm(indicator_multiply(u, full) - u, 0) < 1e-14
    with pytest.raises(EmptyMask):
        indicator_multiply(u, np.zeros(grid.shape, dtype=bool))
    half = grid.nodes()[0] < math.pi
    out = indicator_multiply(SpectralField.constant(grid, 1.0), half)
    assert out.mean == pytest.approx(0.5, abs=1e-15)


def test_restrict_band_and_real_modes():
    print("🧪 Testando faixa |p|₁ <= N+1 e decomposição em modos reais...")
    grid = TorusGrid(2, 16)
    u = SpectralField.from_modes(grid, [((1, 1), "sin", 0.3), ((2, 1), "cos", -0.2), ((0, 0), "cos", 0.1)])
    kept, tail = restrict_band(u, 1)
    assert sobolev_norm(tail - SpectralField.from_modes(grid, [((2, 1), "cos", -0.2)]), 0) < 1e-15
    modes = {(p, phase): amp for p, phase, amp in real_modes(kept, 1e-14)}
    assert modes[((1, 1), "sin")] == pytest.approx(0.3)
    assert modes[((0, 0), "cos")] == pytest.approx(0.1)
    assert len(modes) == 2


def test_field_binary_and_spectrum(tmp_path):
    print("🧪 Testando gravação binária e CSV de espectro...")
    grid = TorusGrid(2, 16)
    u = _random_band_field(grid, seed=11, top=3)
    path = write_field_binary(tmp_path / "u.chsf", u)
    back = read_field_binary(path)
    assert back.grid == grid
    assert sobolev_norm(back - u, 0) < 1e-14
    csv_path = write_spectrum_csv(tmp_path / "spectrum.csv", u)
    lines = csv_path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "k1,k2,re,im"
    assert len(lines) == 1 + (2 * grid.max_frequency + 1) ** 2


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    test_grid_validation()
    test_sobolev_norm_of_sine()
    test_operator_A_symbol()
    test_laplacian_of_sine_cubed()
    test_cube_matches_brute_force_convolution()
    test_hermitian_symmetry_and_parseval()
    test_spectral_project_splits_modes()
    test_indicator_multiply()
    test_restrict_band_and_real_modes()
    with tempfile.TemporaryDirectory() as tmp:
        test_field_binary_and_spectrum(Path(tmp))
    print("✅ Núcleo espectral OK")
