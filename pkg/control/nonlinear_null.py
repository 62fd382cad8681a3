"""
Controle nulo do sistema não linear

- picard_null: ponto fixo S ↦ Δ(u³) sobre o controle nulo linear com termo fonte
- radius_search: maior amplitude em que o ponto fixo contrai
- global_null_pipeline: evolução livre → steering em ℋ₀ → controle local em ω
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import BaseModel

from config.logger import setup_logger
from config.settings import settings
from control.linear_null import (
    GalerkinSystem,
    GluedControl,
    SampledSource,
    SourceTermWeights,
    WeightedReport,
    build_galerkin,
    null_control_with_source,
    weighted_source_norm,
)
from control.steering import steer_at_exact_time
from core.ch_dynamics import EvolutionProblem, Trajectory, evolve
from core.errors import (
    BudgetExhausted,
    NoContraction,
    NumericalFailure,
    SteeringFailed,
    WeightOverflow,
)
from core.schedule import ControlSchedule, H0Coefficients, LocalizedField, Segment
from core.spectral_core import SpectralField, laplacian_of_cube, sobolev_norm

logger = setup_logger(__name__)

# ρ₀ abaixo disso fica sob o piso de arredondamento da re-simulação
RESIM_WEIGHT_FLOOR = 1e-6


# =========================
# Ponto fixo local
# =========================

@dataclass
class PicardState:
    S: Optional[SampledSource]
    glued: GluedControl
    report: WeightedReport
    weighted_S_norm: float
    iteration: int
    ratios: List[float] = field(default_factory=list)
    differences: List[float] = field(default_factory=list)
    converged: bool = False
    control_sup_norm: float = 0.0
    resim_terminal_norm: Optional[float] = None
    resim_weighted_state: Optional[float] = None

    @property
    def max_ratio(self) -> float:
        return max(self.ratios, default=0.0)


def _nonlinear_source(sys: GalerkinSystem, times: np.ndarray, states: np.ndarray) -> SampledSource:
    """S = P_m Δ(u³) nas amostras do estado truncado."""
    values = np.array([sys.from_field(laplacian_of_cube(sys.to_field(c))) for c in states])
    return SampledSource(np.asarray(times, dtype=float), values)


def _control_sup(glued: GluedControl) -> float:
    sys = glued.sys
    return max((sys.control_magnitude(f) for iv in glued.intervals for f in iv.controls), default=0.0)


def picard_null(
    sys: GalerkinSystem,
    u0: SpectralField,
    w: SourceTermWeights,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
    verify: bool = True,
) -> tuple[PicardState, Optional[Trajectory]]:
    """
    S₀ = 0, S_{j+1} = Δ(u_j³) com (u_j, f_j) = null_control_with_source(u0, S_j).
    Com verify, re-simula a equação completa sob o controle final.
    """
    max_iter = settings.picard_max_iter if max_iter is None else max_iter
    tol = settings.picard_tol if tol is None else tol
    a = sys.from_field(u0)

    S: Optional[SampledSource] = None
    prev_diff: Optional[float] = None
    ratios: List[float] = []
    diffs: List[float] = []
    rising = 0
    state: Optional[PicardState] = None

    for j in range(1, max_iter + 1):
        try:
            glued, report = null_control_with_source(sys, a, S, w)
            times = glued.times()
            nxt = _nonlinear_source(sys, times, glued.states())
            if not np.all(np.isfinite(nxt.values)):
                raise WeightOverflow(float("inf"))
            old = S.at(times) if S is not None else np.zeros_like(nxt.values)
            diff = weighted_source_norm(sys, w, times, nxt.values - old)
            s_norm = weighted_source_norm(sys, w, times, nxt.values)
        except NumericalFailure as exc:
            if j > 1:
                raise NoContraction(ratios, f"iteração {j} estourou: {exc}") from exc
            raise

        diffs.append(diff)
        if prev_diff is not None and prev_diff > 0:
            ratio = diff / prev_diff
            ratios.append(ratio)
            rising = rising + 1 if ratio > 1.0 else 0
            if rising >= 3:
                raise NoContraction(ratios)
        prev_diff = diff

        state = PicardState(S, glued, report, s_norm, j, list(ratios), list(diffs),
                            control_sup_norm=_control_sup(glued))
        logger.debug(f"Picard j={j}: ‖ΔS‖_𝒮 = {diff:.3e}, ‖S‖_𝒮 = {s_norm:.3e}")
        if diff <= tol * max(1.0, s_norm):
            state.converged = True
            break
        S = nxt

    assert state is not None
    if state.converged:
        logger.info(f"✅ Picard convergiu em {state.iteration} iterações (razão máx {state.max_ratio:.3e})")
    else:
        logger.warning(f"⚠️ Picard sem convergência após {max_iter} iterações")

    traj = None
    if verify:
        traj = evolve(EvolutionProblem(u0, w.T, control=state.glued.to_schedule()))
        state.resim_terminal_norm = sobolev_norm(traj.final, 0.0)
        state.resim_weighted_state = _resim_weighted(traj, w)
        logger.info(f"🔁 Re-simulação não linear: ‖u(T)‖ = {state.resim_terminal_norm:.3e}")
    return state, traj


def _resim_weighted(traj: Trajectory, w: SourceTermWeights) -> float:
    """sup ‖u(t)‖/ρ₀(t) nas amostras em que ρ₀ está acima do piso de arredondamento."""
    best = 0.0
    for t, u in zip(traj.times, traj.states):
        if t >= w.T:
            continue
        log_rho0, _ = w.log_weights(t)
        if log_rho0 < math.log(RESIM_WEIGHT_FLOOR):
            continue
        best = max(best, sobolev_norm(u, 0.0) / math.exp(float(log_rho0)))
    return best


def probe_direction(sys: GalerkinSystem) -> SpectralField:
    """Direção de prova: primeiro modo não constante, norma L² unitária."""
    c = np.zeros(sys.size)
    c[1 if sys.size > 1 else 0] = 1.0
    return sys.to_field(c)


def radius_search(
    sys: GalerkinSystem,
    w: SourceTermWeights,
    direction: Optional[SpectralField] = None,
    probe_max: Optional[float] = None,
    bisections: Optional[int] = None,
) -> float:
    """Bissecção na amplitude: maior r com Picard convergente e razões < radius_ratio_max."""
    direction = probe_direction(sys) if direction is None else direction
    direction = direction / sobolev_norm(direction, 0.0)
    hi = settings.radius_probe_max if probe_max is None else probe_max
    steps = settings.radius_bisections if bisections is None else bisections

    def contracts(r: float) -> bool:
        try:
            state, _ = picard_null(sys, direction * r, w, verify=False)
        except NumericalFailure:
            return False
        return state.converged and state.max_ratio < settings.radius_ratio_max

    if contracts(hi):
        return hi
    lo, found = 0.0, False
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if contracts(mid):
            lo, found = mid, True
        else:
            hi = mid
    radius = lo if found else 0.0
    logger.info(f"📏 Raio de contração: R = {radius:.4e} (T = {w.T})")
    return radius


# =========================
# Pipeline global
# =========================

@dataclass
class GlobalPipelinePlan:
    eps_phase_end: float
    delta_phase_end: float
    T: float
    free: ControlSchedule
    steering: ControlSchedule
    localized: ControlSchedule
    radius: float
    radius_target: float
    picard_iterations: int = 0
    contraction_ratios: List[float] = field(default_factory=list)
    steering_error: float = 0.0
    model_terminal_norm: float = 0.0
    terminal_norm: float = 0.0
    mask: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 < self.eps_phase_end < self.delta_phase_end < self.T:
            raise ValueError("exige 0 < ε < δ < T")

    @property
    def schedule(self) -> ControlSchedule:
        return self.free.then(self.steering).then(self.localized)

    def stage_structure_ok(self) -> bool:
        """Zero em (0, ε), ℋ₀ em (ε, δ), suporte em ω em (δ, T).

        Com a máscara conhecida, confere também 2d+1 coeficientes em ℋ₀ e
        suportes contidos em ω.
        """
        ok = all(s.payload is None for s in self.free.segments)
        ok &= all(s.kind in ("free", "h0") for s in self.steering.segments)
        ok &= all(s.kind in ("free", "localized") for s in self.localized.segments)
        if self.mask is not None:
            d = self.mask.ndim
            ok &= all(len(s.payload.coefficients) == 2 * d + 1
                      for s in self.steering.segments if isinstance(s.payload, H0Coefficients))
            ok &= all(s.payload.mask.shape == self.mask.shape and not (s.payload.mask & ~self.mask).any()
                      for s in self.localized.segments if isinstance(s.payload, LocalizedField))
        return bool(ok)

    def to_report(self) -> "PipelineReport":
        return PipelineReport(
            eps_phase_end=self.eps_phase_end,
            delta_phase_end=self.delta_phase_end,
            T=self.T,
            radius=self.radius,
            radius_target=self.radius_target,
            picard_iterations=self.picard_iterations,
            contraction_ratios=self.contraction_ratios,
            steering_error=self.steering_error,
            model_terminal_norm=self.model_terminal_norm,
            terminal_norm=self.terminal_norm,
            segments={"free": len(self.free), "steering": len(self.steering),
                      "localized": len(self.localized)},
        )


class PipelineReport(BaseModel):
    eps_phase_end: float
    delta_phase_end: float
    T: float
    radius: float
    radius_target: float
    picard_iterations: int
    contraction_ratios: List[float]
    steering_error: float
    model_terminal_norm: float
    terminal_norm: float
    segments: dict

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        return path


def global_null_pipeline(
    u0: SpectralField,
    eps_t: float,
    delta_t: float,
    T: float,
    mask: np.ndarray,
    lam_max: float = 16.0,
    weights: Optional[SourceTermWeights] = None,
    radius: Optional[float] = None,
    k_reg: Optional[float] = None,
) -> tuple[GlobalPipelinePlan, Trajectory]:
    """Três estágios: livre em (0, ε), steering até a bola em (ε, δ), controle local em (δ, T)."""
    if not 0.0 < eps_t < delta_t < T:
        raise ValueError(f"exige 0 < ε < δ < T, recebido ({eps_t}, {delta_t}, {T})")
    grid = u0.grid
    free = ControlSchedule((Segment(0.0, eps_t, None, label="stage1-free"),))

    if u0.is_zero():
        plan = GlobalPipelinePlan(
            eps_t, delta_t, T, free,
            ControlSchedule((Segment(0.0, delta_t - eps_t, None, label="stage2-steer"),)),
            ControlSchedule((Segment(0.0, T - delta_t, None, label="stage3-local"),)),
            radius=0.0, radius_target=0.0, mask=np.asarray(mask, dtype=bool),
        )
        return plan, evolve(EvolutionProblem(u0, T, control=plan.schedule))

    logger.info(f"🚀 Pipeline global: ε={eps_t}, δ={delta_t}, T={T}")
    stage1 = evolve(EvolutionProblem(u0, eps_t, control=free))
    u_eps = stage1.final

    sys = build_galerkin(grid, mask, lam_max)
    w = SourceTermWeights.default(T - delta_t) if weights is None else weights
    R = radius_search(sys, w) if radius is None else radius
    R_target = settings.radius_safety * R
    if R_target <= 0.0:
        raise SteeringFailed(float("inf"), 0.0)

    try:
        steer, steer_report = steer_at_exact_time(u_eps, SpectralField.zeros(grid), R_target,
                                                  delta_t - eps_t, k_reg=k_reg)
    except BudgetExhausted as exc:
        err = getattr(exc.best_report, "achieved_error", float("inf"))
        raise SteeringFailed(err, R_target) from exc
    steer = steer.with_label("stage2-steer")
    u_delta = evolve(EvolutionProblem(u_eps, delta_t - eps_t, control=steer, k_reg=k_reg)).final
    miss = sobolev_norm(u_delta, 0.0)
    if miss > R_target:
        raise SteeringFailed(miss, R_target)

    picard, _ = picard_null(sys, u_delta, w, verify=False)
    if not picard.converged:
        raise NoContraction(picard.ratios, "estágio local sem convergência")
    local = picard.glued.to_schedule().with_label("stage3-local")

    plan = GlobalPipelinePlan(
        eps_t, delta_t, T, free, steer, local, R, R_target,
        picard_iterations=picard.iteration,
        contraction_ratios=picard.ratios,
        steering_error=steer_report.achieved_error,
        model_terminal_norm=picard.report.terminal_norm,
        mask=np.asarray(mask, dtype=bool),
    )
    traj = evolve(EvolutionProblem(u0, T, control=plan.schedule, sample_times=[eps_t, delta_t], k_reg=k_reg))
    plan.terminal_norm = sobolev_norm(traj.final, 0.0)
    logger.info(f"🏁 Pipeline global: ‖u(T)‖ = {plan.terminal_norm:.3e} (R = {R:.3e})")
    return plan, traj
