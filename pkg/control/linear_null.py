"""
Controle nulo do sistema linearizado u_t + Δ²u + Δu = 1_ω f em truncamentos de Galerkin

- Controles de Gramiano (norma L² mínima) por intervalo
- Malha T_k = T(1 − q^{-k}) e pesos ρ₀, ρ_S do método do termo fonte
- Colagem dos controles por intervalo e normas ponderadas
- Sondas de observabilidade e da desigualdade espectral

Base real ortonormal para ⟨f, g⟩ = (2π)^{-d}∫fg: 1, √2 cos(k·x), √2 sin(k·x).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import solve_ivp, trapezoid
from scipy.linalg import eigvalsh, solve
from scipy.optimize import minimize
from scipy.stats import linregress

from config.logger import setup_logger
from config.settings import settings
from core.errors import AtHorizon, EmptyMask, GramianIllConditioned, GridTooCoarse, WeightOverflow
from core.schedule import ControlSchedule, LocalizedField, Segment, write_mask
from core.spectral_core import TWO_PI, SpectralField, TorusGrid, canonical_wavevectors

logger = setup_logger(__name__)

Mode = Tuple[Tuple[int, ...], str]


# =========================
# Funções auxiliares
# =========================

def _integral_exp(c: np.ndarray, tau) -> np.ndarray:
    """∫₀^τ e^{cs} ds = expm1(cτ)/c, com limite τ em c = 0."""
    c = np.asarray(c, dtype=float)
    tau = np.asarray(tau, dtype=float)
    z = c * tau
    safe = np.where(c == 0.0, 1.0, c)
    return np.where(np.abs(z) < 1e-8, tau * (1.0 + 0.5 * z), np.expm1(z) / safe)


def _phi1(z: np.ndarray) -> np.ndarray:
    safe = np.where(z == 0.0, 1.0, z)
    return np.where(np.abs(z) < 1e-5, 1.0 + z / 2.0 + z * z / 6.0, np.expm1(z) / safe)


def _phi2(z: np.ndarray) -> np.ndarray:
    safe = np.where(z == 0.0, 1.0, z)
    series = 0.5 + z / 6.0 + z * z / 24.0 + z ** 3 / 120.0
    return np.where(np.abs(z) < 1e-3, series, (np.expm1(z) - z) / (safe * safe))


def real_basis(grid: TorusGrid, lam: float) -> List[Mode]:
    """Modos reais com |k|² <= λ: constante e pares (cos, sin) por vetor canônico."""
    zero = (0,) * grid.d
    canon = [p for p in canonical_wavevectors(grid) if sum(c * c for c in p) <= lam]
    canon.sort(key=lambda p: (sum(c * c for c in p), p))
    modes: List[Mode] = [(zero, "cos")]
    for p in canon:
        modes += [(p, "cos"), (p, "sin")]
    return modes


def _basis_values(modes: Sequence[Mode], nodes: Tuple[np.ndarray, ...]) -> np.ndarray:
    """Matriz (m × pontos) com os valores de cada função da base."""
    flat = [x.ravel() for x in nodes]
    rows = []
    for k, phase in modes:
        if not any(k):
            rows.append(np.ones_like(flat[0]))
            continue
        arg = sum(c * x for c, x in zip(k, flat))
        rows.append(math.sqrt(2.0) * (np.cos(arg) if phase == "cos" else np.sin(arg)))
    return np.array(rows)


def _fine_nodes(grid: TorusGrid, factor: int) -> Tuple[np.ndarray, ...]:
    m = grid.n * factor
    x = TWO_PI * np.arange(m) / m
    return tuple(np.meshgrid(*([x] * grid.d), indexing="ij"))


# =========================
# Sistema de Galerkin
# =========================

@dataclass(frozen=True, eq=False)
class GalerkinSystem:
    grid: TorusGrid
    mask: np.ndarray
    modes: Tuple[Mode, ...]
    a_diag: np.ndarray
    B: np.ndarray
    basis: np.ndarray
    _gramians: Dict[float, Tuple[int, np.ndarray]] = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return len(self.modes)

    @property
    def k_squared(self) -> np.ndarray:
        return np.array([float(sum(c * c for c in k)) for k, _ in self.modes])

    def to_field(self, c: np.ndarray) -> SpectralField:
        values = (np.asarray(c, dtype=float) @ self.basis).reshape(self.grid.shape)
        return SpectralField.from_values(self.grid, values)

    def from_field(self, u: SpectralField) -> np.ndarray:
        return self.basis @ u.values().ravel() / self.grid.size

    def control_field(self, f: np.ndarray) -> LocalizedField:
        """1_ω g com g = Σ f_b Φ_b."""
        return LocalizedField.from_field(self.to_field(f), self.mask)

    def control_magnitude(self, f: np.ndarray) -> float:
        """‖1_ω g‖_{L²} normalizado: sqrt(fᵀBf)."""
        return float(math.sqrt(max(float(f @ self.B @ f), 0.0)))

    def sample_times(self, grid_times: Sequence[float]) -> List[np.ndarray]:
        """Amostras uniformes por intervalo, com as extremidades."""
        stiff = float(np.abs(self.a_diag).max())
        out = []
        for t0, t1 in zip(grid_times, grid_times[1:]):
            count = max(settings.samples_per_interval,
                        math.ceil((t1 - t0) * stiff / settings.sample_stiffness))
            out.append(np.linspace(t0, t1, count + 1))
        return out


def build_galerkin(grid: TorusGrid, mask: np.ndarray, lam_max: float) -> GalerkinSystem:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.shape:
        raise ValueError(f"máscara com forma {mask.shape}, esperado {grid.shape}")
    if not mask.any():
        raise EmptyMask()
    top = int(math.floor(math.sqrt(lam_max)))
    if top > grid.max_frequency:
        raise GridTooCoarse(top, grid.n)

    modes = tuple(real_basis(grid, lam_max))
    basis = _basis_values(modes, grid.nodes())
    k2 = np.array([float(sum(c * c for c in k)) for k, _ in modes])
    a_diag = -(k2 ** 2 - k2)
    restricted = basis * mask.ravel()[None, :]
    B = restricted @ basis.T / grid.size
    B = 0.5 * (B + B.T)
    logger.info(f"🧮 Galerkin: {len(modes)} modos, |ω| = {mask.sum()}/{grid.size} nós")
    return GalerkinSystem(grid, mask, modes, a_diag, B, basis)


# =========================
# Controle de Gramiano
# =========================

def gramian_closed_form(sys: GalerkinSystem, tau: float, kernel: Optional[np.ndarray] = None) -> np.ndarray:
    """G_ij = K_ij ∫₀^τ e^{(d_i+d_j)s} ds; K = BBᵀ por padrão."""
    K = sys.B @ sys.B.T if kernel is None else kernel
    d = sys.a_diag
    return K * _integral_exp(d[:, None] + d[None, :], tau)


def gramian_quadrature(sys: GalerkinSystem, tau: float, panels: int,
                       kernel: Optional[np.ndarray] = None) -> np.ndarray:
    """Gauss–Legendre composto: `panels` painéis de settings.gramian_nodes nós."""
    K = sys.B @ sys.B.T if kernel is None else kernel
    x, w = leggauss(settings.gramian_nodes)
    edges = np.linspace(0.0, tau, panels + 1)
    half = 0.5 * np.diff(edges)
    s = (0.5 * (edges[:-1] + edges[1:])[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    E = np.exp(np.outer(s, sys.a_diag))
    return K * ((E * weights[:, None]).T @ E)


def _solve_equilibrated(G: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, float]:
    diag = np.diag(G)
    if np.any(diag <= 0.0) or not np.all(np.isfinite(G)):
        raise GramianIllConditioned(float("inf"))
    s = 1.0 / np.sqrt(diag)
    Gs = s[:, None] * G * s[None, :]
    cond = float(np.linalg.cond(Gs))
    if not np.isfinite(cond) or cond > settings.gramian_cond_max:
        raise GramianIllConditioned(cond)
    return s * solve(Gs, s * b, assume_a="pos"), cond


@dataclass(frozen=True, eq=False)
class GramianControl:
    """f(t) = −Bᵀ e^{D(t1−t)} λ em (t0, t1)."""
    sys: GalerkinSystem
    a: np.ndarray
    t0: float
    t1: float
    lam: np.ndarray
    residual: float
    condition_number: float
    panels: int

    def adjoint(self, t) -> np.ndarray:
        """ψ(t) = e^{D(t1−t)} λ, uma linha por instante."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.exp(np.outer(self.t1 - t, self.sys.a_diag)) * self.lam[None, :]

    def value(self, t) -> np.ndarray:
        return -self.adjoint(t) @ self.sys.B

    def average(self, a: float, b: float) -> np.ndarray:
        """Média exata de f em [a, b]."""
        d = self.sys.a_diag
        integral = np.exp(d * (self.t1 - b)) * _integral_exp(d, b - a) * self.lam
        return -(self.sys.B @ integral) / (b - a)

    def state(self, t) -> np.ndarray:
        """Estado controlado em forma fechada (sem fonte), uma linha por instante."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        d = self.sys.a_diag
        K = self.sys.B @ self.sys.B.T
        out = np.empty((len(t), self.sys.size))
        for i, ti in enumerate(t):
            el = ti - self.t0
            M = _integral_exp(d[:, None] + d[None, :], el)
            forced = (K * M) @ (np.exp(d * (self.t1 - ti)) * self.lam)
            out[i] = np.exp(d * el) * self.a - forced
        return out


def gramian_control(sys: GalerkinSystem, a: np.ndarray, t0: float, t1: float,
                    offset: Optional[np.ndarray] = None) -> GramianControl:
    """
    Controle de norma L² mínima levando a (em t0) a −offset (em t1); offset = 0 dá
    controle nulo exato no truncamento.
    """
    if not t1 > t0:
        raise ValueError(f"intervalo vazio ({t0}, {t1})")
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("dado inicial não finito")
    tau = t1 - t0
    b = np.exp(sys.a_diag * tau) * a
    if offset is not None:
        b = b + offset
    scale = float(np.linalg.norm(a) + (np.linalg.norm(offset) if offset is not None else 0.0))
    if scale == 0.0:
        return GramianControl(sys, a, t0, t1, np.zeros(sys.size), 0.0, 1.0, 0)

    closed = gramian_closed_form(sys, tau)
    start, cached = sys._gramians.get(tau, (1, None))
    panels = start
    lam, cond, residual = None, float("nan"), float("inf")
    for _ in range(settings.gramian_max_refinements + 1):
        G = cached if cached is not None else gramian_quadrature(sys, tau, panels)
        cached = None
        lam, cond = _solve_equilibrated(G, b)
        residual = float(np.linalg.norm(b - closed @ lam)) / scale
        if residual <= settings.gramian_residual_tol:
            sys._gramians[tau] = (panels, G)
            break
        panels *= 2
    else:
        logger.warning(f"⚠️ Gramiano não atingiu resíduo {settings.gramian_residual_tol:.0e} "
                       f"(τ={tau:.3e}, resíduo {residual:.3e})")
    logger.debug(f"Gramiano τ={tau:.4e}: {panels} painéis, cond={cond:.3e}, resíduo={residual:.3e}")
    return GramianControl(sys, a, t0, t1, lam, residual, cond, panels)


def simulate_truncated(sys: GalerkinSystem, a: np.ndarray, t0: float, t1: float,
                       control: Optional[Callable[[float], np.ndarray]] = None,
                       source: Optional[Callable[[float], np.ndarray]] = None) -> np.ndarray:
    """Integra ċ = Dc + Bf(t) + S(t) com DOP853 (oráculo independente)."""
    def rhs(t, c):
        out = sys.a_diag * c
        if control is not None:
            out = out + sys.B @ np.ravel(control(t))
        if source is not None:
            out = out + np.ravel(source(t))
        return out

    scale = max(1.0, float(np.linalg.norm(a)))
    sol = solve_ivp(rhs, (t0, t1), np.asarray(a, dtype=float), method="DOP853",
                    rtol=1e-12, atol=1e-14 * scale)
    return sol.y[:, -1]


# =========================
# Método do termo fonte
# =========================

def source_term_grid(T: float, q: float, floor: Optional[float] = None) -> List[float]:
    """T_k = T(1 − q^{-k}) até T − T_K <= floor·T; o último ponto vira T."""
    if T <= 0:
        raise ValueError(f"horizonte T={T} deve ser positivo")
    if not 1.0 < q < math.sqrt(2.0):
        raise ValueError(f"q={q} fora de (1, √2)")
    floor = settings.grid_floor if floor is None else floor
    K = math.ceil(math.log(1.0 / floor) / math.log(q))
    times = [T * (1.0 - q ** (-k)) for k in range(K + 1)]
    times[-1] = T
    return times


@dataclass(frozen=True)
class SourceTermWeights:
    M: float
    p: float
    q: float
    T: float

    def __post_init__(self):
        if self.T <= 0 or self.M <= 0:
            raise ValueError("M e T devem ser positivos")
        if not 1.0 < self.q < math.sqrt(2.0):
            raise ValueError(f"q={self.q} fora de (1, √2)")
        if not self.p > self.q ** 2 / (2.0 - self.q ** 2):
            raise ValueError(f"p={self.p} deve exceder q²/(2−q²) = {self.q ** 2 / (2.0 - self.q ** 2):.4f}")

    @classmethod
    def default(cls, T: float) -> "SourceTermWeights":
        return cls(settings.source_term_M, settings.source_term_p, settings.source_term_q, T)

    def log_weights(self, t) -> Tuple[np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=float)
        if np.any(t >= self.T):
            raise AtHorizon(float(np.max(t)), self.T)
        gap = (self.q - 1.0) * (self.T - t)
        return -self.M * self.p / gap, -(1.0 + self.p) * self.q ** 2 * self.M / gap


def evaluate_weights(w: SourceTermWeights, t: float) -> Tuple[float, float]:
    log_rho0, log_rhos = w.log_weights(t)
    return float(np.exp(log_rho0)), float(np.exp(log_rhos))


def weight_identity_defects(w: SourceTermWeights, grid_times: Sequence[float]) -> List[float]:
    """|log ρ₀(T_{k+2}) − M/(T_{k+2}−T_{k+1}) − log ρ_S(T_k)| relativo, por k."""
    defects = []
    for k in range(len(grid_times) - 3):
        t0, t1, t2 = grid_times[k], grid_times[k + 1], grid_times[k + 2]
        lhs, _ = w.log_weights(t2)
        _, log_rhos = w.log_weights(t0)
        rhs = w.M / (t2 - t1) + log_rhos
        defects.append(abs(lhs - rhs) / max(1.0, abs(lhs)))
    return defects


@dataclass(frozen=True, eq=False)
class SampledSource:
    """Fonte S(t) em coeficientes de modo, linear por partes no tempo."""
    times: np.ndarray
    values: np.ndarray

    @classmethod
    def zero(cls, sys: GalerkinSystem, T: float) -> "SampledSource":
        return cls(np.array([0.0, T]), np.zeros((2, sys.size)))

    @classmethod
    def from_function(cls, times: np.ndarray, fn: Callable[[float], np.ndarray]) -> "SampledSource":
        times = np.asarray(times, dtype=float)
        return cls(times, np.array([np.asarray(fn(t), dtype=float) for t in times]))

    def at(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.times, self.values[:, j])
                         for j in range(self.values.shape[1])], axis=1)


def source_response(sys: GalerkinSystem, times: np.ndarray, S: np.ndarray) -> np.ndarray:
    """ĉ' = Dĉ + S com ĉ(times[0]) = 0, exato para S linear entre amostras."""
    d = sys.a_diag
    out = np.zeros((len(times), sys.size))
    for i in range(len(times) - 1):
        h = times[i + 1] - times[i]
        z = d * h
        out[i + 1] = (np.exp(z) * out[i] + h * _phi1(z) * S[i]
                      + h * _phi2(z) * (S[i + 1] - S[i]))
    return out


@dataclass(frozen=True, eq=False)
class IntervalSolution:
    t0: float
    t1: float
    control: GramianControl
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    source: np.ndarray


@dataclass(frozen=True, eq=False)
class GluedControl:
    sys: GalerkinSystem
    grid_times: Tuple[float, ...]
    intervals: Tuple[IntervalSolution, ...]

    @property
    def T(self) -> float:
        return self.grid_times[-1]

    @property
    def terminal_state(self) -> np.ndarray:
        return self.intervals[-1].states[-1]

    def times(self) -> np.ndarray:
        return np.concatenate([iv.times if i == 0 else iv.times[1:]
                               for i, iv in enumerate(self.intervals)])

    def states(self) -> np.ndarray:
        return np.concatenate([iv.states if i == 0 else iv.states[1:]
                               for i, iv in enumerate(self.intervals)])

    def sources(self) -> np.ndarray:
        return np.concatenate([iv.source if i == 0 else iv.source[1:]
                               for i, iv in enumerate(self.intervals)])

    def continuity_defects(self) -> List[float]:
        return [float(np.linalg.norm(a.states[-1] - b.states[0]))
                for a, b in zip(self.intervals, self.intervals[1:])]

    def to_schedule(self) -> ControlSchedule:
        """Controle constante por partes entre amostras, com médias exatas."""
        segs = []
        for iv in self.intervals:
            for a, b in zip(iv.times, iv.times[1:]):
                f = iv.control.average(a, b)
                payload = self.sys.control_field(f) if np.any(f) else None
                segs.append(Segment(float(a), float(b), payload, label="null-linear"))
        return ControlSchedule(tuple(segs))


@dataclass
class WeightedReport:
    state_weighted: float
    control_weighted: float
    source_weighted: float
    initial_norm: float
    terminal_norm: float
    max_continuity_defect: float
    max_residual: float
    intervals: int


def _sup_weighted(log_norms: np.ndarray, log_weights: np.ndarray) -> float:
    finite = np.isfinite(log_norms)
    if not finite.any():
        return 0.0
    top = float(np.max(log_norms[finite] - log_weights[finite]))
    if top > math.log(settings.weight_overflow):
        raise WeightOverflow(math.exp(min(top, 700.0)))
    return math.exp(top)


def _h_minus2(sys: GalerkinSystem, S: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(S * S / (1.0 + sys.k_squared[None, :]) ** 2, axis=1))


def weighted_source_norm(sys: GalerkinSystem, w: SourceTermWeights, times: np.ndarray,
                         values: np.ndarray) -> float:
    """‖S/ρ_S‖ em L²(0,T; H^{-2}) por trapézio nas amostras com t < T."""
    times = np.asarray(times, dtype=float)
    inside = times < w.T
    if inside.sum() < 2:
        return 0.0
    _, log_rhos = w.log_weights(times[inside])
    with np.errstate(divide="ignore"):
        log_src = np.log(_h_minus2(sys, np.asarray(values)[inside]))
    quotient = np.where(np.isfinite(log_src), np.exp(np.minimum(log_src - log_rhos, 700.0)), 0.0)
    if quotient.max() > settings.weight_overflow:
        raise WeightOverflow(float(quotient.max()))
    return float(math.sqrt(trapezoid(quotient ** 2, times[inside])))


def weighted_report(glued: GluedControl, w: SourceTermWeights, u0: np.ndarray) -> WeightedReport:
    sys = glued.sys
    times = glued.times()
    inside = times < w.T
    log_rho0, _ = w.log_weights(times[inside])

    with np.errstate(divide="ignore"):
        log_state = np.log(np.linalg.norm(glued.states()[inside], axis=1))
        ctrl = np.concatenate([iv.controls if i == 0 else iv.controls[1:]
                               for i, iv in enumerate(glued.intervals)])[inside]
        log_ctrl = np.log([sys.control_magnitude(f) for f in ctrl])

    state_w = _sup_weighted(log_state, log_rho0)
    control_w = _sup_weighted(log_ctrl, log_rho0)
    source_w = weighted_source_norm(sys, w, times, glued.sources())

    defects = glued.continuity_defects()
    return WeightedReport(
        state_weighted=state_w,
        control_weighted=control_w,
        source_weighted=source_w,
        initial_norm=float(np.linalg.norm(u0)),
        terminal_norm=float(np.linalg.norm(glued.terminal_state)),
        max_continuity_defect=max(defects, default=0.0),
        max_residual=max(iv.control.residual for iv in glued.intervals),
        intervals=len(glued.intervals),
    )


def null_control_with_source(sys: GalerkinSystem, u0: np.ndarray, S: Optional[SampledSource],
                             w: SourceTermWeights,
                             grid_times: Optional[Sequence[float]] = None) -> Tuple[GluedControl, WeightedReport]:
    """
    Em cada (T_k, T_{k+1}): û parte de zero só com a fonte e define a_{k+1} = û(T_{k+1});
    o controle de Gramiano leva a_k a zero. No último intervalo o controle absorve
    também û(T), deixando o estado final nulo.
    """
    grid_times = list(source_term_grid(w.T, w.q) if grid_times is None else grid_times)
    samples = sys.sample_times(grid_times)
    a = np.asarray(u0, dtype=float)
    last = len(samples) - 1
    intervals = []
    for k, ts in enumerate(samples):
        Svals = S.at(ts) if S is not None else np.zeros((len(ts), sys.size))
        hat = source_response(sys, ts, Svals)
        ctrl = gramian_control(sys, a, ts[0], ts[-1], offset=hat[-1] if k == last else None)
        states = ctrl.state(ts) + hat
        intervals.append(IntervalSolution(float(ts[0]), float(ts[-1]), ctrl, ts, states,
                                          ctrl.value(ts), Svals))
        a = hat[-1]

    glued = GluedControl(sys, tuple(grid_times), tuple(intervals))
    report = weighted_report(glued, w, u0)
    logger.info(f"🎯 Controle nulo linear: {report.intervals} intervalos, "
                f"‖u(T)‖ = {report.terminal_norm:.3e}, sup ‖u‖/ρ₀ = {report.state_weighted:.3e}")
    return glued, report


def export_control_csv(directory: str | Path, glued: GluedControl) -> List[Path]:
    """Um CSV por intervalo: t e o valor de 1_ω g em cada nó de ω; máscara ao lado."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sys = glued.sys
    flat_mask = sys.mask.ravel()
    node_ids = np.flatnonzero(flat_mask)
    paths = [write_mask(directory / "omega.mask", sys.mask)]
    for k, iv in enumerate(glued.intervals):
        path = directory / f"interval_{k:03d}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"node_{i}" for i in node_ids])
            for t, f in zip(iv.times, iv.controls):
                values = (f @ sys.basis)[flat_mask]
                writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in values])
        paths.append(path)
    logger.info(f"💾 Controle exportado em {directory} ({len(glued.intervals)} intervalos)")
    return paths


# =========================
# Observabilidade e custo
# =========================

@dataclass
class ObservabilityReport:
    T: float
    min_eigenvalue: float
    eigenvalues: np.ndarray
    closed_form_gap: float


def observability_probe(sys: GalerkinSystem, T: float) -> ObservabilityReport:
    """Gramiano O = ∫₀ᵀ e^{Ds} B e^{Ds} ds do adjunto observado por 1_ω."""
    closed = gramian_closed_form(sys, T, kernel=sys.B)
    panels = 1
    quad = gramian_quadrature(sys, T, panels, kernel=sys.B)
    for _ in range(settings.gramian_max_refinements):
        gap = float(np.abs(quad - closed).max()) / max(float(np.abs(closed).max()), 1e-300)
        if gap <= settings.gramian_residual_tol:
            break
        panels *= 2
        quad = gramian_quadrature(sys, T, panels, kernel=sys.B)
    gap = float(np.abs(quad - closed).max()) / max(float(np.abs(closed).max()), 1e-300)
    eig = eigvalsh(0.5 * (quad + quad.T))
    return ObservabilityReport(T, float(eig[0]), eig, gap)


def control_cost(sys: GalerkinSystem, a: np.ndarray, T: float) -> float:
    """‖f‖_{L²(0,T)} do controle mínimo: sqrt(bᵀ G⁻¹ b), b = e^{DT}a."""
    ctrl = gramian_control(sys, a, 0.0, T)
    G = gramian_closed_form(sys, T)
    return float(math.sqrt(max(float(ctrl.lam @ G @ ctrl.lam), 0.0)))


@dataclass
class CostTrendReport:
    horizons: List[float]
    costs: List[float]
    slope: float
    r_squared: float

    @property
    def increasing(self) -> bool:
        """Custo cresce quando T diminui."""
        order = np.argsort(self.horizons)[::-1]
        c = np.array(self.costs)[order]
        return bool(np.all(np.diff(c) > 0))


def control_cost_trend(sys: GalerkinSystem, a: np.ndarray,
                       horizons: Sequence[float] = (1.0, 0.5, 0.25)) -> CostTrendReport:
    costs = [control_cost(sys, a, T) for T in horizons]
    fit = linregress(1.0 / np.asarray(horizons), np.log(costs))
    return CostTrendReport(list(horizons), costs, float(fit.slope), float(fit.rvalue ** 2))


def telescoping_grid(T: float, terms: int) -> Tuple[float, List[float]]:
    """l = T/2, l₁ = 3T/4, l_{n+1} − l = (l₁ − l)/2ⁿ."""
    base = T / 2.0
    first = 3.0 * T / 4.0
    return base, [base + (first - base) / 2.0 ** n for n in range(terms)]


def telescoping_defects(T: float, terms: int) -> List[float]:
    """|2/(l_n − l_{n+1}) − 1/(l_{n+1} − l_{n+2})| relativo."""
    _, seq = telescoping_grid(T, terms)
    out = []
    for a, b, c in zip(seq, seq[1:], seq[2:]):
        lhs, rhs = 2.0 / (a - b), 1.0 / (b - c)
        out.append(abs(lhs - rhs) / rhs)
    return out


# =========================
# Desigualdade espectral
# =========================

@dataclass
class SpectralProbeReport:
    lambdas: List[float]
    ratios: List[float]
    slope: Optional[float]
    r_squared: Optional[float]
    # coeficientes na base real_basis(grid, λ) que atingem cada razão
    maximizers: List[np.ndarray] = field(default_factory=list)


def _ratio_fn(fine_basis: np.ndarray, omega_basis: np.ndarray, total: int):
    def ratio(c: np.ndarray) -> float:
        l1 = float(np.abs(c @ omega_basis).sum()) / total
        if l1 == 0.0:
            return 0.0
        return float(np.abs(c @ fine_basis).max()) / l1
    return ratio


def spectral_inequality_probe(grid: TorusGrid, mask: np.ndarray, lambdas: Sequence[float],
                              n_samples: Optional[int] = None, seed: int = 0) -> SpectralProbeReport:
    """
    Razão ‖φ‖_∞ / ‖φ‖_{L¹(ω)} maximizada sobre φ ∈ span{|k|² <= λ}.
    L¹(ω) = n^{-d} Σ_{ω}|φ| (medida normalizada por (2π)^d); sup numa malha refinada.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask()
    n_samples = settings.probe_samples if n_samples is None else n_samples
    if n_samples < 100:
        raise ValueError("n_samples deve ser >= 100")
    rng = np.random.default_rng(seed)
    fine = _fine_nodes(grid, settings.probe_upsample)
    omega_nodes = tuple(x[mask] for x in grid.nodes())

    ratios: List[float] = []
    maximizers: List[np.ndarray] = []
    best_c: Optional[np.ndarray] = None
    prev_modes: List[Mode] = []
    for lam in sorted(lambdas):
        modes = real_basis(grid, lam)
        if max((max(abs(c) for c in k) for k, _ in modes), default=0) > grid.max_frequency:
            raise GridTooCoarse(int(math.sqrt(lam)), grid.n)
        ratio = _ratio_fn(_basis_values(modes, fine), _basis_values(modes, omega_nodes), grid.size)
        m = len(modes)

        starts = [rng.standard_normal(m) for _ in range(n_samples)]
        if best_c is not None:
            warm = np.zeros(m)
            index = {mode: i for i, mode in enumerate(modes)}
            for mode, value in zip(prev_modes, best_c):
                warm[index[mode]] = value
            starts.append(warm)

        scored = sorted(starts, key=ratio, reverse=True)
        top_c, top_r = scored[0], ratio(scored[0])
        if m > 1:
            for c0 in scored[:5]:
                res = minimize(lambda c: -ratio(c), c0, method="Nelder-Mead",
                               options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000 * m})
                r = ratio(res.x)
                if r > top_r:
                    top_c, top_r = res.x, r
        ratios.append(top_r)
        maximizers.append(np.array(top_c, dtype=float))
        best_c, prev_modes = top_c / np.linalg.norm(top_c), modes
        logger.debug(f"sonda espectral λ={lam}: razão {top_r:.4f} ({m} modos)")

    slope = r2 = None
    if len(lambdas) >= 2:
        fit = linregress(np.sqrt(sorted(lambdas)), np.log(ratios))
        slope, r2 = float(fit.slope), float(fit.rvalue ** 2)
    return SpectralProbeReport(sorted(lambdas), ratios, slope, r2, maximizers)
