"""
Integração temporal de Cahn–Hilliard (livre, controlada, estendida e escalada em δ)

    u_t = 𝒜(u + φ) + Δ((u + φ)³) + η(t),   𝒜 = −Δ² − Δ

O símbolo linear −(|k|⁴ − |k|²) é integrado exatamente (diferenças exponenciais);
o termo cúbico, o deslocamento φ e o controle η entram de forma explícita.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config.logger import setup_logger
from config.settings import settings
from core.errors import BlowupDetected, ProductOverflow, StepSizeTooLarge
from core.schedule import ControlSchedule, H0Coefficients, Segment
from core.spectral_core import (
    SpectralField,
    TorusGrid,
    TWO_PI,
    cube,
    padded_values,
    sobolev_norm,
)

logger = setup_logger(__name__)

SCHEMES = ("etdrk2", "etdrk4")
_NORM_FLOOR = 1e-8


# =========================
# Coeficientes ETD
# =========================

@lru_cache(maxsize=256)
def _etd_coefficients(grid: TorusGrid, h: float, scheme: str) -> Tuple[np.ndarray, ...]:
    """Funções φ avaliadas por média em contorno (semicírculo superior, parte real)."""
    L = grid.symbol_A
    vals, inverse = np.unique(L, return_inverse=True)
    m = settings.etd_contour_points
    roots = np.exp(1j * np.pi * (np.arange(m) + 0.5) / m)
    z = h * vals[:, None] + roots[None, :]
    ez = np.exp(z)

    def back(arr):
        return np.asarray(arr)[inverse].reshape(grid.shape)

    E = back(np.exp(h * vals))
    if scheme == "etdrk2":
        p1 = h * ((ez - 1.0) / z).mean(axis=1).real
        p2 = h * ((ez - 1.0 - z) / z ** 2).mean(axis=1).real
        return E, back(p1), back(p2)
    if scheme == "etdrk4":
        z2, z3 = z ** 2, z ** 3
        E2 = back(np.exp(0.5 * h * vals))
        q = h * ((np.exp(z / 2.0) - 1.0) / z).mean(axis=1).real
        f1 = h * ((-4.0 - z + ez * (4.0 - 3.0 * z + z2)) / z3).mean(axis=1).real
        f2 = h * ((2.0 + z + ez * (z - 2.0)) / z3).mean(axis=1).real
        f3 = h * ((-4.0 - 3.0 * z - z2 + ez * (4.0 - z)) / z3).mean(axis=1).real
        return E, E2, back(q), back(f1), back(f2), back(f3)
    raise ValueError(f"esquema desconhecido: {scheme}")


# =========================
# Tipos
# =========================

@dataclass(frozen=True, eq=False)
class EvolutionProblem:
    """Dado inicial, deslocamento φ, agenda de controle e parâmetros numéricos."""
    u0: SpectralField
    T: float
    shift: Optional[SpectralField] = None
    control: Optional[ControlSchedule] = None
    dt: float = field(default_factory=lambda: settings.default_dt)
    k_reg: Optional[float] = None
    blowup_threshold: Optional[float] = None
    sample_times: Optional[Sequence[float]] = None
    scheme: str = "etdrk2"
    stop_on_blowup: bool = False
    record_steps: bool = False
    growth_guard: Optional[float] = field(default_factory=lambda: settings.growth_guard_factor)

    def __post_init__(self):
        grid = self.u0.grid
        if not self.T > 0:
            raise ValueError(f"horizonte T={self.T} deve ser positivo")
        if not self.dt > 0:
            raise ValueError(f"passo dt={self.dt} deve ser positivo")
        if self.scheme not in SCHEMES:
            raise ValueError(f"esquema {self.scheme} não suportado ({SCHEMES})")
        if self.shift is None:
            object.__setattr__(self, "shift", SpectralField.zeros(grid))
        elif self.shift.grid != grid:
            raise ValueError("deslocamento em malha diferente de u0")
        if self.control is not None and len(self.control):
            tol = 1e-12 * max(1.0, self.T)
            if abs(self.control.start) > tol or self.control.end < self.T - tol:
                raise ValueError(
                    f"agenda cobre [{self.control.start}, {self.control.end}], exigido [0, {self.T}]")
        if self.k_reg is None:
            object.__setattr__(self, "k_reg", settings.k_reg_for(grid.d))
        if self.blowup_threshold is None:
            object.__setattr__(self, "blowup_threshold", self.default_threshold())
        if not self.blowup_threshold > sobolev_norm(self.u0, self.k_reg):
            raise ValueError("limiar de blow-up não excede a norma inicial")

    @property
    def grid(self) -> TorusGrid:
        return self.u0.grid

    def default_threshold(self) -> float:
        scale = sobolev_norm(self.u0, self.k_reg) + sobolev_norm(self.shift, self.k_reg)
        if self.control is not None:
            for seg in self.control.segments:
                if seg.payload is not None:
                    scale += seg.duration * sobolev_norm(seg.payload.to_field(self.grid), self.k_reg)
        return settings.blowup_factor * max(1.0, scale)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: Tuple[SpectralField, ...]
    norms: np.ndarray
    k_reg: float
    terminated_early: bool = False
    blowup_time: Optional[float] = None
    steps: int = 0
    # ∫‖u‖²_{H^{k+2}} dt acumulada (regra do trapézio por passo)
    smoothing_integral: float = 0.0

    @property
    def final(self) -> SpectralField:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    def state_at(self, t: float, tol: float = 1e-12) -> SpectralField:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > tol * max(1.0, abs(t)):
            raise KeyError(f"instante t={t} não amostrado")
        return self.states[idx]


# =========================
# Integrador
# =========================

def _hk_weight(grid: TorusGrid, s: float) -> np.ndarray:
    return (1.0 + grid.k_squared) ** s


def _norm(c: np.ndarray, weight: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(c) ** 2 * weight)))


def _breakpoints(problem: EvolutionProblem) -> List[float]:
    T = problem.T
    pts = {0.0, T}
    if problem.control is not None:
        pts.update(t for t in problem.control.boundaries() if 0.0 < t < T)
    if problem.sample_times is not None:
        pts.update(float(t) for t in problem.sample_times if 0.0 <= t <= T)
    ordered = sorted(pts)
    merged = [ordered[0]]
    for t in ordered[1:]:
        if t - merged[-1] > 1e-14 * max(1.0, T):
            merged.append(t)
    merged[-1] = T
    return merged


def _step_cap(problem: EvolutionProblem, seg: Optional[Segment], forcing: Optional[np.ndarray]) -> float:
    cap = problem.dt
    if seg is None:
        return cap
    if seg.max_step is not None:
        cap = min(cap, seg.max_step)
    if forcing is not None:
        magnitude = SpectralField(problem.grid, forcing).max_abs()
        # janelas de controle grande (δ⁻¹η em janela de comprimento δ)
        if magnitude > settings.large_control_factor / seg.duration:
            cap = min(cap, seg.duration / settings.large_control_steps)
    return cap


def check_growth(prev: float, new: float, increment: float, factor: Optional[float], t: float) -> None:
    """
    Guarda de instabilidade: a norma não pode saltar mais que factor× num passo.

    A referência é prev + h·‖N‖ (increment), não prev: um passo com forçamento
    grande pode crescer além de factor·prev sem disparar, o que afrouxa a guarda
    simples de ×10 por passo.
    """
    if factor is None or prev < _NORM_FLOOR:
        return
    reference = prev + increment
    if new > factor * reference:
        raise StepSizeTooLarge(t, new / reference)


def evolve(problem: EvolutionProblem) -> Trajectory:
    grid = problem.grid
    L = grid.symbol_A
    minus_k2 = -grid.k_squared
    shift_c = problem.shift.coeffs
    shift_lin = L * shift_c
    has_shift = not problem.shift.is_zero()
    weight = _hk_weight(grid, problem.k_reg)
    weight_smooth = _hk_weight(grid, problem.k_reg + 2.0)
    threshold = problem.blowup_threshold

    logger.debug(f"evolve: T={problem.T}, dt={problem.dt}, esquema={problem.scheme}, "
                 f"segmentos={len(problem.control) if problem.control else 0}")

    forcing_cache = {}

    def forcing_for(seg: Optional[Segment]) -> Optional[np.ndarray]:
        if seg is None or seg.payload is None:
            return None
        key = id(seg)
        if key not in forcing_cache:
            forcing_cache[key] = seg.payload.to_field(grid).coeffs
        return forcing_cache[key]

    def nonlinear(c: np.ndarray, eta: Optional[np.ndarray]) -> np.ndarray:
        total = c + shift_c if has_shift else c
        out = minus_k2 * cube(SpectralField(grid, total)).coeffs
        if has_shift:
            out = out + shift_lin
        if eta is not None:
            out = out + eta
        return out

    def step(c: np.ndarray, h: float, eta: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        coeffs = _etd_coefficients(grid, h, problem.scheme)
        n0 = nonlinear(c, eta)
        if problem.scheme == "etdrk2":
            E, p1, p2 = coeffs
            a = E * c + p1 * n0
            n1 = nonlinear(a, eta)
            return a + p2 * (n1 - n0), n0
        E, E2, q, f1, f2, f3 = coeffs
        a = E2 * c + q * n0
        n1 = nonlinear(a, eta)
        b = E2 * c + q * n1
        n2 = nonlinear(b, eta)
        cc = E2 * a + q * (2.0 * n2 - n0)
        n3 = nonlinear(cc, eta)
        return E * c + f1 * n0 + 2.0 * f2 * (n1 + n2) + f3 * n3, n0

    c = np.array(problem.u0.coeffs)
    times = [0.0]
    states = [problem.u0]
    norms = [_norm(c, weight)]
    prev_norm = norms[0]
    smooth_prev = _norm(c, weight_smooth) ** 2
    smoothing = 0.0
    t = 0.0
    nsteps = 0

    def finish(terminated: bool, blowup_time: Optional[float]) -> Trajectory:
        return Trajectory(
            times=np.array(times),
            states=tuple(states),
            norms=np.array(norms),
            k_reg=problem.k_reg,
            terminated_early=terminated,
            blowup_time=blowup_time,
            steps=nsteps,
            smoothing_integral=smoothing,
        )

    points = _breakpoints(problem)
    for a, b in zip(points[:-1], points[1:]):
        seg = problem.control.segment_at(0.5 * (a + b)) if problem.control is not None else None
        eta = forcing_for(seg)
        cap = _step_cap(problem, seg, eta)
        count = max(1, math.ceil((b - a) / cap * (1.0 - 1e-12)))
        h = (b - a) / count
        for i in range(count):
            t_new = b if i == count - 1 else a + (i + 1) * h
            try:
                c_new, n0 = step(c, h, eta)
                new_norm = _norm(c_new, weight)
            except ProductOverflow:
                new_norm = math.inf
                c_new, n0 = c, None
            nsteps += 1
            if not math.isfinite(new_norm) or new_norm > threshold:
                if math.isfinite(new_norm):
                    times.append(t_new)
                    states.append(SpectralField(grid, c_new))
                    norms.append(new_norm)
                else:
                    # último estado finito registrado como o de blow-up
                    times.append(t_new)
                    states.append(SpectralField(grid, c))
                    norms.append(math.inf)
                traj = finish(True, t_new)
                logger.warning(f"⚠️ blow-up em t={t_new:.6g} (norma H^{problem.k_reg:g} > {threshold:.3e})")
                if problem.stop_on_blowup:
                    return traj
                raise BlowupDetected(t_new, traj)
            check_growth(prev_norm, new_norm, h * _norm(n0, weight), problem.growth_guard, t_new)
            smooth_new = _norm(c_new, weight_smooth) ** 2
            smoothing += 0.5 * h * (smooth_prev + smooth_new)
            smooth_prev = smooth_new
            c, prev_norm, t = c_new, new_norm, t_new
            if problem.record_steps and i < count - 1:
                times.append(t)
                states.append(SpectralField(grid, c))
                norms.append(new_norm)
        times.append(b)
        states.append(SpectralField(grid, c))
        norms.append(prev_norm)

    logger.debug(f"evolve concluído: {nsteps} passos, norma final {prev_norm:.3e}")
    return finish(False, None)


# =========================
# Diagnósticos
# =========================

def mass(u: SpectralField) -> float:
    """Coeficiente médio u_0 = (2π)^{-d} ∫ u."""
    return u.mean


def free_energy(u: SpectralField) -> float:
    """E[u] = ∫ ½|∇u|² + ¼u⁴ − ½u² sobre [0, 2π)^d."""
    grid = u.grid
    volume = TWO_PI ** grid.d
    power = np.abs(u.coeffs) ** 2
    gradient = 0.5 * volume * float(np.sum(grid.k_squared * power))
    square = 0.5 * volume * float(np.sum(power))
    # u⁴ tem frequências < 2n: média exata na malha estendida
    quartic = 0.25 * volume * float(np.mean(padded_values(u) ** 4))
    return gradient + quartic - square


def flow_shift_check(
    u0: SpectralField,
    phi: SpectralField,
    eta: Optional[H0Coefficients],
    delta: float,
    dt: Optional[float] = None,
    scheme: str = "etdrk2",
) -> float:
    """‖ℛ_δ(u₀, φ, η) − (ℛ_δ(u₀+φ, 0, η) − φ)‖ em H^{k_reg}."""
    dt = dt or settings.default_dt
    schedule = ControlSchedule((Segment(0.0, delta, eta),)) if eta is not None else None
    k_reg = settings.k_reg_for(u0.grid.d)
    left = evolve(EvolutionProblem(u0, delta, shift=phi, control=schedule, dt=dt, scheme=scheme))
    right = evolve(EvolutionProblem(u0 + phi, delta, control=schedule, dt=dt, scheme=scheme))
    return sobolev_norm(left.final - (right.final - phi), k_reg)


def concatenation_check(
    u0: SpectralField,
    control: Optional[ControlSchedule],
    t1: float,
    T: float,
    dt: Optional[float] = None,
) -> float:
    """Evoluir até t₁ e depois até T com a agenda recortada = evoluir até T de uma vez."""
    if not 0.0 < t1 < T:
        raise ValueError("exige 0 < t₁ < T")
    dt = dt or settings.default_dt
    whole = evolve(EvolutionProblem(u0, T, control=control, dt=dt, sample_times=[t1]))
    first = evolve(EvolutionProblem(u0, t1, control=control.window(0.0, t1) if control else None, dt=dt))
    second = evolve(EvolutionProblem(first.final, T - t1,
                                     control=control.window(t1, T) if control else None, dt=dt))
    return sobolev_norm(whole.final - second.final, whole.k_reg)


@dataclass(frozen=True)
class RichardsonReport:
    dts: Tuple[float, float, float]
    differences: Tuple[float, float]
    order: float


def richardson_order(problem: EvolutionProblem, norm_index: float = 1.0) -> RichardsonReport:
    """Ordem observada a partir de dt, dt/2, dt/4 (diferenças sucessivas em H^s)."""
    dts = (problem.dt, problem.dt / 2.0, problem.dt / 4.0)
    finals = []
    for dt in dts:
        p = EvolutionProblem(problem.u0, problem.T, shift=problem.shift, control=problem.control, dt=dt,
                             k_reg=problem.k_reg, blowup_threshold=problem.blowup_threshold,
                             scheme=problem.scheme)
        finals.append(evolve(p).final)
    d1 = sobolev_norm(finals[0] - finals[1], norm_index)
    d2 = sobolev_norm(finals[1] - finals[2], norm_index)
    order = math.log2(d1 / d2) if d2 > 0 and d1 > 0 else math.inf
    logger.info(f"Richardson: diferenças {d1:.3e}, {d2:.3e} → ordem {order:.3f}")
    return RichardsonReport(dts, (d1, d2), order)


def energy_increments(traj: Trajectory) -> np.ndarray:
    """E(t_{n+1}) − E(t_n) entre amostras consecutivas."""
    energies = np.array([free_energy(u) for u in traj.states])
    return np.diff(energies)


def trajectory_to_csv(path: str | Path, traj: Trajectory) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "H0", "H1", f"H{traj.k_reg:g}", "mass", "free_energy"])
        for t, u in zip(traj.times, traj.states):
            writer.writerow([
                repr(float(t)),
                repr(sobolev_norm(u, 0.0)),
                repr(sobolev_norm(u, 1.0)),
                repr(sobolev_norm(u, traj.k_reg)),
                repr(mass(u)),
                repr(free_energy(u)),
            ])
    return path
