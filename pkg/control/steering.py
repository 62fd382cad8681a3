"""
Controlabilidade aproximada em tempo pequeno com controles em ℋ₀

Cada movimento da decomposição vira uma sequência de rampas (controle grande
em janela curta, soma ψ ao estado) e fases livres (o cubo age sobre ψ):

    rampa +ψ₁ (δ³) → livre (δ²) → rampa −ψ₁+ψ₂ (δ³) → … → rampa −ψ_m (δ³)

com ψ_j = δ^{-2/3}·∛w_j·f_j. O parâmetro δ é reduzido à metade até o erro
verificado ficar abaixo de ε.

Quando ψ tem modos fora de ℋ₀, a rampa vira um steering aninhado de nível
|p|₁ − 2, feito com a parte ℋ₀ de ψ fora do estado; a recursão desce até ℋ₀.
A precisão dos níveis profundos é limitada pela separação de escalas de tempo
entre níveis, que o δ inicial comum não garante.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import linregress

from config.logger import setup_logger
from config.settings import settings
from control.saturation import Move, TrigPoly, decompose_target
from core.ch_dynamics import EvolutionProblem, Trajectory, evolve
from core.errors import BudgetExhausted, NumericalFailure
from core.schedule import ControlSchedule, H0Coefficients, LocalizedField, Payload, Segment
from core.spectral_core import SpectralField, laplacian_of_cube, restrict_band, sobolev_norm

logger = setup_logger(__name__)

HOLD_OVERSHOOT = 0.35


@dataclass
class SteeringReport:
    achieved_error: float
    total_time: float
    segment_count: int
    delta_used: Optional[float]
    trajectory: Optional[Trajectory] = None
    attempts: List[Tuple[float, float]] = field(default_factory=list)
    cubic_moves: int = 0
    resteers: int = 0
    schedule: Optional[ControlSchedule] = None
    final_state: Optional[SpectralField] = None


# =========================
# Passos elementares
# =========================

def field_payload(u: SpectralField) -> Payload:
    """H0Coefficients quando u ∈ ℋ₀; caso contrário campo em todo o toro."""
    try:
        return H0Coefficients.from_field(u)
    except ValueError:
        return LocalizedField(u, np.ones(u.grid.shape, dtype=bool))


def _steps(length: float) -> float:
    return length / settings.steering_steps_per_phase


def asymptotic_step(u0: SpectralField, eta: SpectralField, delta: float) -> Tuple[ControlSchedule, SpectralField]:
    """Controle constante δ⁻¹η em [0, δ]; o ponto final tende a u₀ + η."""
    if not delta > 0:
        raise ValueError("δ deve ser positivo")
    schedule = ControlSchedule((Segment(0.0, delta, field_payload(eta / delta), _steps(delta), "asymptotic"),))
    traj = evolve(EvolutionProblem(u0, delta, control=schedule))
    return schedule, traj.final


def cubic_step(u0: SpectralField, phi: SpectralField, delta1: float, delta2: float
               ) -> Tuple[ControlSchedule, SpectralField]:
    """Rampa +δ₂^{-1/3}φ, fase livre δ₂, rampa −δ₂^{-1/3}φ; o ponto final tende a u₀ + Δ(φ³)."""
    if not (delta1 > 0 and delta2 > 0):
        raise ValueError("δ₁ e δ₂ devem ser positivos")
    psi = phi * delta2 ** (-1.0 / 3.0)
    zero = H0Coefficients.zeros(u0.grid.d)
    schedule = ControlSchedule.from_durations([
        (delta1, field_payload(psi / delta1), _steps(delta1)),
        (delta2, zero, _steps(delta2)),
        (delta1, field_payload(-psi / delta1), _steps(delta1)),
    ], label="cubic")
    traj = evolve(EvolutionProblem(u0, schedule.end, control=schedule))
    return schedule, traj.final


# =========================
# Propriedade assintótica
# =========================

def asymptotic_error(
    u0: SpectralField,
    eta: Optional[SpectralField],
    phi: Optional[SpectralField],
    delta: float,
    k_reg: Optional[float] = None,
) -> float:
    """‖u(δ) − (u₀ + η + Δ(φ³))‖ para o sistema com deslocamento δ^{-1/3}φ e controle δ⁻¹η."""
    grid = u0.grid
    k = settings.k_reg_for(grid.d) if k_reg is None else k_reg
    eta = eta if eta is not None else SpectralField.zeros(grid)
    phi = phi if phi is not None else SpectralField.zeros(grid)
    schedule = ControlSchedule((Segment(0.0, delta, field_payload(eta / delta)),))
    traj = evolve(EvolutionProblem(u0, delta, shift=phi * delta ** (-1.0 / 3.0), control=schedule,
                                   dt=delta / settings.large_control_steps))
    limit = u0 + eta + laplacian_of_cube(phi)
    return sobolev_norm(traj.final - limit, k)


@dataclass(frozen=True)
class AsymptoticRateReport:
    deltas: Tuple[float, ...]
    errors: Tuple[float, ...]
    slope: float
    r_squared: float

    @property
    def monotone(self) -> bool:
        ordered = [e for _, e in sorted(zip(self.deltas, self.errors), reverse=True)]
        return all(b < a for a, b in zip(ordered, ordered[1:]))


def asymptotic_rate(
    u0: SpectralField,
    eta: Optional[SpectralField],
    phi: Optional[SpectralField],
    deltas: Sequence[float],
    k_reg: Optional[float] = None,
) -> AsymptoticRateReport:
    """Inclinação de log e(δ) contra log δ."""
    errors = [asymptotic_error(u0, eta, phi, d, k_reg) for d in deltas]
    fit = linregress(np.log(deltas), np.log(errors))
    logger.info(f"taxa assintótica: inclinação {fit.slope:.3f} (R²={fit.rvalue ** 2:.3f})")
    return AsymptoticRateReport(tuple(deltas), tuple(errors), float(fit.slope), float(fit.rvalue ** 2))


# =========================
# Compilação
# =========================

class _ScheduleBuilder:
    """
    Acumula segmentos e acompanha o estado simulado

    O estado avança só pelo trecho ainda não simulado; sub-agendas de níveis
    inferiores já chegam com o estado final calculado.
    """

    def __init__(self, u0: SpectralField, delta: float, halvings: int, k_reg: float, depth: int):
        self.grid = u0.grid
        self.delta = delta
        self.halvings = halvings
        self.k_reg = k_reg
        self.depth = depth
        self.schedule = ControlSchedule.empty()
        self.inner_misses = 0
        self._state = u0
        self._simulated_until = 0.0

    def current_state(self) -> SpectralField:
        end = self.schedule.end
        if end > self._simulated_until:
            pending = self.schedule.window(self._simulated_until, end)
            self._state = evolve(EvolutionProblem(self._state, pending.end, control=pending,
                                                  k_reg=self.k_reg)).final
            self._simulated_until = end
        return self._state

    def append(self, pieces: Sequence[Tuple[float, Payload, Optional[float]]], label: str):
        self.schedule = self.schedule.then(ControlSchedule.from_durations(pieces, label=label))

    def ramp(self, change: TrigPoly, length: float):
        self.append([(length, change.to_h0().scaled(1.0 / length), _steps(length))], "ramp")

    def shift(self, old: TrigPoly, new: TrigPoly, length: float, eps: float, extra: Optional[TrigPoly] = None):
        """Troca o deslocamento old por new (mais extra) no estado."""
        change = new - old if extra is None else new - old + extra
        if change.in_h0():
            self.ramp(change, length)
            return
        # a parte fora de ℋ₀ é alcançada pelo nível anterior, com a parte ℋ₀ de ψ fora do estado
        old_low, _ = old.split_h0()
        new_low, _ = new.split_h0()
        if not old_low.is_zero():
            self.ramp(-old_low, length)
        self._steer(change - new_low + old_low, eps)
        if not new_low.is_zero():
            self.ramp(new_low, length)

    def _steer(self, change: TrigPoly, eps: float):
        here = self.current_state()
        level = max(0, change.l1_level - 1)
        try:
            sub, rep = compile_steering(here, here + change.to_field(self.grid), eps, level, math.inf,
                                        delta_start=self.delta, k_reg=self.k_reg, halvings=self.halvings,
                                        _depth=self.depth + 1)
        except BudgetExhausted as exc:
            rep = exc.best_report
            if rep is None or rep.schedule is None:
                raise
            # melhor esforço: o erro verificado no nível de cima decide
            sub = rep.schedule
            self.inner_misses += 1
            logger.debug(f"nível {level} (profundidade {self.depth + 1}) ficou em {rep.achieved_error:.3e} > {eps:.3e}")
        if not len(sub):
            return
        self.schedule = self.schedule.then(sub.with_label("ramp"))
        if rep.final_state is not None:
            self._state = rep.final_state
            self._simulated_until = self.schedule.end

    def free(self, length: float):
        self.append([(length, H0Coefficients.zeros(self.grid.d), _steps(length))], "free")


def _build_attempt(u0: SpectralField, moves: Sequence[Move], delta: float, eps: float, halvings: int,
                   k_reg: float, depth: int) -> _ScheduleBuilder:
    builder = _ScheduleBuilder(u0, delta, halvings, k_reg, depth)
    zero = TrigPoly.zero(u0.grid.d)
    d1, d2 = delta ** 3, delta ** 2
    amplification = d2 ** (-1.0 / 3.0)
    cube_count = max(1, sum(len(m.cubes) for m in moves))
    sub_eps = eps / (4.0 * cube_count)
    for move in moves:
        if not move.is_cubic:
            builder.shift(zero, zero, d1, sub_eps, extra=move.eta)
            continue
        previous = zero
        for j, (f, w) in enumerate(move.cubes):
            psi = f * (float(np.cbrt(float(w))) * amplification)
            builder.shift(previous, psi, d1, sub_eps, extra=move.eta if j == 0 else None)
            builder.free(d2)
            previous = psi
        builder.shift(previous, zero, d1, sub_eps)
    return builder


def compile_steering(
    u0: SpectralField,
    u1: SpectralField,
    eps: float,
    N: int,
    T_max: float,
    truncation_tol: Optional[float] = None,
    delta_start: Optional[float] = None,
    k_reg: Optional[float] = None,
    halvings: Optional[int] = None,
    _depth: int = 0,
) -> Tuple[ControlSchedule, SteeringReport]:
    """
    Agenda ℋ₀ por partes que leva u₀ a menos de ε de u₁

    Ingredientes fora de ℋ₀ são alcançados recursivamente pelo nível anterior;
    a recursão termina porque cada nível abaixo tem |p|₁ estritamente menor.
    Só o nível de cima re-simula a agenda inteira; os níveis internos usam o
    estado acumulado pelo construtor.
    """
    if not eps > 0:
        raise ValueError("ε deve ser positivo")
    grid = u0.grid
    k = settings.k_reg_for(grid.d) if k_reg is None else k_reg
    budget = settings.steering_halvings if halvings is None else halvings
    diff = u1 - u0
    initial_error = sobolev_norm(diff, k)
    if initial_error == 0.0:
        return ControlSchedule.empty(), SteeringReport(0.0, 0.0, 0, None, schedule=ControlSchedule.empty(),
                                                       final_state=u0)

    tol = eps / 2.0 if truncation_tol is None else truncation_tol
    decomposition = decompose_target(diff, N, tol, k)
    moves = decomposition.moves
    cubic = sum(1 for m in moves if m.is_cubic)
    delta = delta_start or settings.steering_delta_start
    log = logger.info if _depth == 0 else logger.debug
    log(f"🎯 compile_steering: erro inicial {initial_error:.3e}, {len(moves)} movimentos "
        f"({cubic} cúbicos), ε={eps:.3e}, profundidade {_depth}")

    best: Optional[SteeringReport] = None
    attempts: List[Tuple[float, float]] = []
    for attempt in range(budget + 1):
        try:
            builder = _build_attempt(u0, moves, delta, eps, budget, k, _depth)
        except (NumericalFailure, BudgetExhausted) as exc:
            logger.debug(f"δ={delta:.3e}: construção falhou ({exc})")
            attempts.append((delta, math.inf))
            delta /= 2.0
            continue
        schedule = builder.schedule
        if schedule.duration > T_max:
            logger.debug(f"δ={delta:.3e}: duração {schedule.duration:.3e} > T_max={T_max:.3e}")
            attempts.append((delta, math.inf))
            delta /= 2.0
            continue
        try:
            if _depth == 0:
                traj = evolve(EvolutionProblem(u0, schedule.end, control=schedule, k_reg=k))
                final = traj.final
            else:
                traj, final = None, builder.current_state()
        except NumericalFailure as exc:
            logger.debug(f"δ={delta:.3e}: simulação falhou ({exc})")
            attempts.append((delta, math.inf))
            delta /= 2.0
            continue
        error = sobolev_norm(final - u1, k)
        attempts.append((delta, error))
        logger.debug(f"δ={delta:.3e}: erro {error:.3e}, {len(schedule)} segmentos, "
                     f"{builder.inner_misses} níveis internos fora da tolerância")
        report = SteeringReport(error, schedule.duration, len(schedule), delta, traj, list(attempts), cubic,
                                schedule=schedule, final_state=final)
        if best is None or error < best.achieved_error:
            best = report
        if error < eps:
            log(f"✅ steering convergiu: erro {error:.3e} com δ={delta:.3e} ({len(schedule)} segmentos)")
            return schedule, report
        delta /= 2.0

    if best is not None:
        best.attempts = attempts
    warn = logger.warning if _depth == 0 else logger.debug
    warn(f"⚠️ orçamento de δ esgotado; melhor erro {best.achieved_error if best else math.inf:.3e} > ε={eps:.3e}")
    raise BudgetExhausted(best)


def auto_level(diff: SpectralField, tol: float, k_reg: Optional[float] = None) -> int:
    """Menor N cuja cauda fora de A_{I_N} fica abaixo de tol."""
    k = settings.k_reg_for(diff.grid.d) if k_reg is None else k_reg
    top = diff.grid.d * diff.grid.max_frequency
    for N in range(0, top):
        if sobolev_norm(restrict_band(diff, N)[1], k) <= tol:
            return N
    return max(0, top - 1)


# =========================
# Chegada em tempo exato
# =========================

def steer_at_exact_time(
    u0: SpectralField,
    u1: SpectralField,
    eps: float,
    T: float,
    N: Optional[int] = None,
    k_reg: Optional[float] = None,
) -> Tuple[ControlSchedule, SteeringReport]:
    """Steering inicial seguido de rajadas livres e novos steerings até t = T exatamente."""
    if not T > 0:
        raise ValueError("T deve ser positivo")
    grid = u0.grid
    k = settings.k_reg_for(grid.d) if k_reg is None else k_reg
    zero = H0Coefficients.zeros(grid.d)

    def tail_of(u: SpectralField, level: int) -> float:
        return sobolev_norm(restrict_band(u1 - u, level)[1], k)

    level = auto_level(u1 - u0, eps / 4.0, k) if N is None else N
    logger.info(f"⏱️ steer_at_exact_time: T={T}, ε={eps:.3e}, nível {level}")

    tail = tail_of(u0, level)
    schedule, first = compile_steering(u0, u1, eps / 2.0 + tail, level, T,
                                       truncation_tol=math.inf, k_reg=k)
    state = first.trajectory.final if first.trajectory is not None else u0
    delta = first.delta_used
    elapsed = schedule.end
    burst = settings.hold_burst_fraction * T
    resteers = 0

    while T - elapsed > 1e-14 * T:
        length = min(burst, T - elapsed)
        hold = ControlSchedule((Segment(0.0, length, zero, None, "hold"),))
        candidate = evolve(EvolutionProblem(state, length, control=hold, k_reg=k)).final
        drift = sobolev_norm(candidate - u1, k)
        if drift > 0.9 * eps and length > 1e-6 * T:
            burst = length / 2.0
            continue
        schedule = schedule.then(hold)
        moved = candidate - state
        state, elapsed = candidate, elapsed + length
        if drift <= eps / 4.0:
            burst *= 2.0
        if drift > eps / 2.0 and T - elapsed > 0:
            if resteers >= settings.hold_max_resteers:
                raise BudgetExhausted(SteeringReport(drift, elapsed, len(schedule), delta, resteers=resteers))
            resteers += 1
            # mira além de u₁, contra a deriva observada
            size = sobolev_norm(moved, k)
            aim = u1 - moved * (HOLD_OVERSHOOT * eps / size) if size > 0 else u1
            tail = sobolev_norm(restrict_band(aim - state, level)[1], k)
            try:
                fix, rep = compile_steering(state, aim, eps / 8.0 + tail, level, T - elapsed,
                                            truncation_tol=math.inf, delta_start=delta, k_reg=k)
            except BudgetExhausted:
                logger.debug(f"re-steering em t={elapsed:.4g} não coube no tempo restante")
                continue
            if len(fix):
                schedule = schedule.then(fix)
                state, elapsed = rep.trajectory.final, elapsed + fix.duration
                delta = rep.delta_used or delta

    if len(schedule):
        last = schedule.segments[-1]
        schedule = ControlSchedule(schedule.segments[:-1] + (Segment(last.t_start, T, last.payload,
                                                                     last.max_step, last.label),))
    else:
        schedule = ControlSchedule((Segment(0.0, T, zero, None, "hold"),))

    traj = evolve(EvolutionProblem(u0, T, control=schedule, k_reg=k))
    error = sobolev_norm(traj.final - u1, k)
    report = SteeringReport(error, T, len(schedule), delta, traj, cubic_moves=first.cubic_moves, resteers=resteers)
    if error >= eps:
        logger.warning(f"⚠️ erro final {error:.3e} >= ε={eps:.3e} em t={T}")
        raise BudgetExhausted(report)
    logger.info(f"✅ chegada em t={T}: erro {error:.3e}, {resteers} re-steerings, {len(schedule)} segmentos")
    return schedule, report
