"""
Álgebra do espaço de controle ℋ₀ e geração construtiva de modos trigonométricos
por decomposições em cubos: pqr = f₁³ + f₂³ + f₃³ + f₄³ =: Q(p, q, r).

Os planos são simbólicos (coeficientes racionais exatos) e só viram campos
numéricos em realize_plan.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from config.logger import setup_logger
from config.settings import settings
from core.errors import GridTooCoarse, TruncationTooLossy
from core.schedule import H0Coefficients
from core.spectral_core import (
    SpectralField,
    TorusGrid,
    laplacian_of_cube,
    real_modes,
    restrict_band,
    sobolev_norm,
)

logger = setup_logger(__name__)

Scalar = Union[int, float, Fraction]
ModeKey = Tuple[Tuple[int, ...], str]
PHASES = ("sin", "cos")


def _exact(value: Scalar) -> Fraction:
    # Fraction(float) é a expansão binária exata
    return value if isinstance(value, Fraction) else Fraction(value)


def canonical_mode(p: Sequence[int], phase: str, amplitude: Scalar) -> Tuple[Tuple[int, ...], str, Fraction]:
    if phase not in PHASES:
        raise ValueError(f"fase desconhecida: {phase}")
    p = tuple(int(v) for v in p)
    amplitude = _exact(amplitude)
    nonzero = [v for v in p if v]
    if not nonzero:
        return p, "cos", amplitude if phase == "cos" else Fraction(0)
    if nonzero[0] < 0:
        p = tuple(-v for v in p)
        if phase == "sin":
            amplitude = -amplitude
    return p, phase, amplitude


@dataclass(frozen=True)
class TrigMode:
    """amplitude · sin(x·p) ou amplitude · cos(x·p), p na forma canônica."""
    p: Tuple[int, ...]
    phase: str
    amplitude: Fraction = Fraction(1)

    def __post_init__(self):
        p, phase, amp = canonical_mode(self.p, self.phase, self.amplitude)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "phase", phase)
        object.__setattr__(self, "amplitude", amp)

    @property
    def d(self) -> int:
        return len(self.p)

    @property
    def l1(self) -> int:
        return sum(abs(v) for v in self.p)

    @property
    def level(self) -> int:
        return max(0, self.l1 - 1)

    def to_poly(self) -> "TrigPoly":
        return TrigPoly.from_modes(self.d, [(self.p, self.phase, self.amplitude)])


class TrigPoly:
    """Polinômio trigonométrico real com coeficientes racionais exatos."""

    __slots__ = ("d", "_coeffs")

    def __init__(self, d: int, coeffs: Optional[Dict[ModeKey, Fraction]] = None):
        self.d = d
        self._coeffs = {k: v for k, v in (coeffs or {}).items() if v != 0}

    # --- construtores ---

    @classmethod
    def zero(cls, d: int) -> "TrigPoly":
        return cls(d)

    @classmethod
    def constant(cls, d: int, value: Scalar) -> "TrigPoly":
        return cls.from_modes(d, [((0,) * d, "cos", value)])

    @classmethod
    def mode(cls, p: Sequence[int], phase: str, amplitude: Scalar = 1) -> "TrigPoly":
        return cls.from_modes(len(p), [(p, phase, amplitude)])

    @classmethod
    def from_modes(cls, d: int, terms: Iterable[Tuple[Sequence[int], str, Scalar]]) -> "TrigPoly":
        coeffs: Dict[ModeKey, Fraction] = {}
        for p, phase, amp in terms:
            if len(p) != d:
                raise ValueError(f"vetor {tuple(p)} incompatível com d={d}")
            p, phase, amp = canonical_mode(p, phase, amp)
            coeffs[(p, phase)] = coeffs.get((p, phase), Fraction(0)) + amp
        return cls(d, coeffs)

    @classmethod
    def from_field(cls, u: SpectralField, tol: float = 0.0) -> "TrigPoly":
        return cls.from_modes(u.grid.d, real_modes(u, tol))

    # --- consulta ---

    def terms(self) -> Iterator[TrigMode]:
        for (p, phase), amp in sorted(self._coeffs.items()):
            yield TrigMode(p, phase, amp)

    def coefficient(self, p: Sequence[int], phase: str) -> Fraction:
        p, phase, sign = canonical_mode(p, phase, 1)
        return self._coeffs.get((p, phase), Fraction(0)) * sign

    def is_zero(self) -> bool:
        return not self._coeffs

    @property
    def max_frequency(self) -> int:
        return max((abs(v) for (p, _) in self._coeffs for v in p), default=0)

    @property
    def l1_level(self) -> int:
        return max((sum(abs(v) for v in p) for (p, _) in self._coeffs), default=0)

    def in_h0(self) -> bool:
        return self.l1_level <= 1

    def split_h0(self) -> Tuple["TrigPoly", "TrigPoly"]:
        """(parte em ℋ₀, resto)."""
        low = {k: v for k, v in self._coeffs.items() if sum(abs(x) for x in k[0]) <= 1}
        high = {k: v for k, v in self._coeffs.items() if k not in low}
        return TrigPoly(self.d, low), TrigPoly(self.d, high)

    def __eq__(self, other) -> bool:
        return isinstance(other, TrigPoly) and self.d == other.d and self._coeffs == other._coeffs

    def __hash__(self) -> int:
        return hash((self.d, frozenset(self._coeffs.items())))

    def __repr__(self) -> str:
        parts = [f"{m.amplitude}·{m.phase}{m.p}" for m in self.terms()]
        return "TrigPoly(" + (" + ".join(parts) or "0") + ")"

    # --- aritmética ---

    def _combine(self, other: "TrigPoly", sign: int) -> "TrigPoly":
        if not isinstance(other, TrigPoly):
            # constantes escalares (como o r = 1 de Q)
            other = TrigPoly.constant(self.d, other)
        coeffs = dict(self._coeffs)
        for k, v in other._coeffs.items():
            coeffs[k] = coeffs.get(k, Fraction(0)) + sign * v
        return TrigPoly(self.d, coeffs)

    def __add__(self, other) -> "TrigPoly":
        return self._combine(other, 1)

    __radd__ = __add__

    def __sub__(self, other) -> "TrigPoly":
        return self._combine(other, -1)

    def __rsub__(self, other) -> "TrigPoly":
        return (-self)._combine(other, 1)

    def __neg__(self) -> "TrigPoly":
        return TrigPoly(self.d, {k: -v for k, v in self._coeffs.items()})

    def __mul__(self, scalar: Scalar) -> "TrigPoly":
        s = _exact(scalar)
        return TrigPoly(self.d, {k: s * v for k, v in self._coeffs.items()})

    __rmul__ = __mul__

    def __truediv__(self, scalar: Scalar) -> "TrigPoly":
        s = _exact(scalar)
        return TrigPoly(self.d, {k: v / s for k, v in self._coeffs.items()})

    # --- avaliação ---

    def evaluate(self, grid: TorusGrid) -> np.ndarray:
        """Avaliação pontual direta nos nós da malha."""
        if grid.d != self.d:
            raise ValueError("dimensão incompatível com a malha")
        x = grid.nodes()
        out = np.zeros(grid.shape)
        for (p, phase), amp in self._coeffs.items():
            arg = sum(pi * xi for pi, xi in zip(p, x))
            out += float(amp) * (np.sin(arg) if phase == "sin" else np.cos(arg))
        return out

    def to_field(self, grid: TorusGrid) -> SpectralField:
        if self.max_frequency > grid.max_frequency:
            raise GridTooCoarse(self.max_frequency, grid.n)
        return SpectralField.from_modes(grid, ((m.p, m.phase, float(m.amplitude)) for m in self.terms()))

    def to_h0(self) -> H0Coefficients:
        if not self.in_h0():
            raise ValueError(f"{self!r} não pertence a ℋ₀")
        coeffs = [float(self.coefficient((0,) * self.d, "cos"))]
        for i in range(self.d):
            e = tuple(1 if j == i else 0 for j in range(self.d))
            coeffs += [float(self.coefficient(e, "sin")), float(self.coefficient(e, "cos"))]
        return H0Coefficients(tuple(coeffs))


# =========================
# Identidade Q
# =========================

@dataclass(frozen=True)
class CubeTriple:
    """Os quatro fatores f₁..f₄ com Σ f_i³ = pqr."""
    f1: object
    f2: object
    f3: object
    f4: object

    def __iter__(self):
        return iter((self.f1, self.f2, self.f3, self.f4))


def q_decompose(p, q, r) -> CubeTriple:
    """Vale para escalares, arrays, SpectralField ou TrigPoly (operações lineares apenas)."""
    return CubeTriple(
        p / 2 + q / 3 + r / 4,
        -(p / 2 + q / 3 - r / 4),
        -(p / 2 - q / 3 + r / 4),
        p / 2 - q / 3 - r / 4,
    )


def sum_of_cubes(triple: CubeTriple, grid: TorusGrid) -> np.ndarray:
    """Σ f_i³ avaliado ponto a ponto (fatores TrigPoly)."""
    return sum(f.evaluate(grid) ** 3 for f in triple)


# =========================
# Planos de geração
# =========================

@dataclass(frozen=True)
class AddEta:
    eta: TrigPoly


@dataclass(frozen=True)
class AddDeltaCube:
    """Contribui weight · Δ(ingredient³)."""
    ingredient: TrigPoly
    weight: Fraction


PlanStep = Union[AddEta, AddDeltaCube]


@dataclass(frozen=True)
class GenerationPlan:
    target: TrigMode
    steps: Tuple[PlanStep, ...]
    level: int

    @property
    def d(self) -> int:
        return self.target.d

    def cube_steps(self) -> List[AddDeltaCube]:
        return [s for s in self.steps if isinstance(s, AddDeltaCube)]

    def eta_part(self) -> TrigPoly:
        total = TrigPoly.zero(self.d)
        for s in self.steps:
            if isinstance(s, AddEta):
                total = total + s.eta
        return total

    def max_frequency(self) -> int:
        freqs = [self.target.to_poly().max_frequency]
        freqs += [s.ingredient.max_frequency for s in self.cube_steps()]
        freqs += [s.eta.max_frequency for s in self.steps if isinstance(s, AddEta)]
        return max(freqs)

    def sub_plans(self) -> List["GenerationPlan"]:
        """Planos dos modos fora de ℋ₀ que aparecem nos ingredientes."""
        seen = {}
        for s in self.cube_steps():
            for m in s.ingredient.terms():
                if m.l1 > 1:
                    key = (m.p, m.phase)
                    if key not in seen:
                        seen[key] = generate_mode_plan(TrigMode(m.p, m.phase, 1))
        return list(seen.values())

    def depth(self) -> int:
        """Profundidade da recursão até ℋ₀ (igual a |p|₁ − 1)."""
        if not self.cube_steps():
            return 0
        return 1 + max((sp.depth() for sp in self.sub_plans()), default=0)


def _q_cubes(p: TrigPoly, q: TrigPoly, r: Scalar, weight: Fraction) -> List[AddDeltaCube]:
    return [AddDeltaCube(f, weight) for f in q_decompose(p, q, TrigPoly.constant(p.d, r))]


def split_wavevector(p: Sequence[int]) -> Tuple[Tuple[int, ...], int, int]:
    """p = l + s·e_j: decrementa a coordenada de maior |p_i| (empate: menor índice)."""
    j = max(range(len(p)), key=lambda i: (abs(p[i]), -i))
    s = 1 if p[j] > 0 else -1
    l = tuple(v - s if i == j else v for i, v in enumerate(p))
    return l, j, s


def generate_mode_plan(target: TrigMode) -> GenerationPlan:
    d = target.d
    c = target.amplitude
    if target.l1 <= 1:
        return GenerationPlan(target, (AddEta(target.to_poly()),), 0)

    p = target.p
    l, j, s = split_wavevector(p)
    e = tuple(1 if i == j else 0 for i in range(d))
    sin_e, cos_e = TrigPoly.mode(e, "sin"), TrigPoly.mode(e, "cos")

    if l == e:
        # ângulo simples: −Δ(½ sin 2θ) = 2 sin 2θ e −Δ(cos²θ) = 2 cos 2θ
        weight = Fraction(-1, 2)
        first = c * (sin_e if target.phase == "sin" else cos_e)
        steps = _q_cubes(first, cos_e, 1, weight)
    else:
        weight = Fraction(-1, sum(v * v for v in p))
        sin_l, cos_l = TrigPoly.mode(l, "sin"), TrigPoly.mode(l, "cos")
        if target.phase == "sin":
            # sin(x·p) = sin(x·l)cos x_j + s·cos(x·l)sin x_j
            steps = _q_cubes(c * sin_l, cos_e, 1, weight) + _q_cubes(c * cos_l, sin_e, s, weight)
        else:
            # cos(x·p) = cos(x·l)cos x_j − s·sin(x·l)sin x_j
            steps = _q_cubes(c * cos_l, cos_e, 1, weight) + _q_cubes(c * sin_l, sin_e, -s, weight)
    return GenerationPlan(target, tuple(steps), target.level)


def realize_plan(plan: GenerationPlan, grid: TorusGrid) -> SpectralField:
    if plan.d != grid.d:
        raise ValueError("dimensão do plano incompatível com a malha")
    top = plan.max_frequency()
    if top > grid.max_frequency:
        raise GridTooCoarse(top, grid.n)
    out = SpectralField.zeros(grid)
    for s in plan.steps:
        if isinstance(s, AddEta):
            out = out + s.eta.to_field(grid)
        else:
            out = out + float(s.weight) * laplacian_of_cube(s.ingredient.to_field(grid))
    return out


# =========================
# Decomposição de alvos
# =========================

@dataclass(frozen=True)
class Move:
    """f₀ + Σ w_i Δ(f_i³) com f₀ ∈ ℋ₀."""
    eta: TrigPoly
    cubes: Tuple[Tuple[TrigPoly, Fraction], ...]
    level: int

    @property
    def is_cubic(self) -> bool:
        return bool(self.cubes)

    def realize(self, grid: TorusGrid) -> SpectralField:
        out = self.eta.to_field(grid)
        for f, w in self.cubes:
            out = out + float(w) * laplacian_of_cube(f.to_field(grid))
        return out


@dataclass(frozen=True, eq=False)
class Decomposition:
    moves: Tuple[Move, ...]
    retained: SpectralField
    tail: SpectralField
    tail_norm: float
    reconstruction_error: float
    level: int

    def __iter__(self):
        return iter(self.moves)

    def __len__(self) -> int:
        return len(self.moves)

    def __getitem__(self, i: int) -> Move:
        return self.moves[i]


def decompose_target(
    target: SpectralField,
    N: int,
    tol: float,
    k_reg: Optional[float] = None,
    mode_tol: float = 1e-13,
) -> Decomposition:
    if N < 0:
        raise ValueError("nível N deve ser não negativo")
    grid = target.grid
    k = settings.k_reg_for(grid.d) if k_reg is None else k_reg
    retained, tail = restrict_band(target, N)
    tail_norm = sobolev_norm(tail, k)
    if tail_norm > tol:
        raise TruncationTooLossy(tail_norm, tol)
    if tail_norm > 0:
        logger.warning(f"⚠️ cauda fora de A_I{N} descartada: {tail_norm:.3e}")

    eta = TrigPoly.zero(grid.d)
    plans: List[GenerationPlan] = []
    for p, phase, amp in real_modes(retained, mode_tol):
        mode = TrigMode(p, phase, amp)
        if mode.l1 <= 1:
            eta = eta + mode.to_poly()
        else:
            plans.append(generate_mode_plan(mode))

    moves: List[Move] = []
    if not eta.is_zero():
        moves.append(Move(eta, (), 0))
    for plan in sorted(plans, key=lambda pl: pl.level):
        cubes = tuple((s.ingredient, s.weight) for s in plan.cube_steps())
        moves.append(Move(plan.eta_part(), cubes, plan.level))

    rebuilt = SpectralField.zeros(grid)
    for mv in moves:
        rebuilt = rebuilt + mv.realize(grid)
    error = sobolev_norm(rebuilt - retained, k)
    logger.debug(f"decomposição: {len(moves)} movimentos, erro de reconstrução {error:.3e}")
    return Decomposition(tuple(moves), retained, tail, tail_norm, error, N)


# =========================
# Serialização de planos (JSON lines)
# =========================

class ModeTermRecord(BaseModel):
    p: List[int]
    phase: Literal["sin", "cos"]
    coefficient: str


class PlanStepRecord(BaseModel):
    op: Literal["plan", "eta", "cube"]
    weight: Optional[str] = None
    level: Optional[int] = None
    ingredients: List[ModeTermRecord] = []


def _poly_records(poly: TrigPoly) -> List[ModeTermRecord]:
    return [ModeTermRecord(p=list(m.p), phase=m.phase, coefficient=str(m.amplitude)) for m in poly.terms()]


def _poly_from_records(d: int, records: Sequence[ModeTermRecord]) -> TrigPoly:
    return TrigPoly.from_modes(d, ((r.p, r.phase, Fraction(r.coefficient)) for r in records))


def save_plan(path: str | Path, plan: GenerationPlan) -> Path:
    """Primeira linha: alvo e nível; depois um passo por linha."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = [PlanStepRecord(op="plan", level=plan.level, ingredients=_poly_records(plan.target.to_poly()))]
    for s in plan.steps:
        if isinstance(s, AddEta):
            records.append(PlanStepRecord(op="eta", ingredients=_poly_records(s.eta)))
        else:
            records.append(PlanStepRecord(op="cube", weight=str(s.weight), ingredients=_poly_records(s.ingredient)))
    path.write_text("\n".join(r.model_dump_json() for r in records) + "\n", encoding="utf-8")
    return path


def load_plan(path: str | Path) -> GenerationPlan:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    head = PlanStepRecord.model_validate_json(lines[0])
    if head.op != "plan" or len(head.ingredients) != 1:
        raise ValueError(f"{path}: cabeçalho de plano inválido")
    t = head.ingredients[0]
    target = TrigMode(tuple(t.p), t.phase, Fraction(t.coefficient))
    steps: List[PlanStep] = []
    for ln in lines[1:]:
        rec = PlanStepRecord.model_validate_json(ln)
        poly = _poly_from_records(target.d, rec.ingredients)
        if rec.op == "eta":
            steps.append(AddEta(poly))
        elif rec.op == "cube":
            steps.append(AddDeltaCube(poly, Fraction(rec.weight)))
        else:
            raise ValueError(f"{path}: passo desconhecido {rec.op}")
    return GenerationPlan(target, tuple(steps), head.level or 0)


# =========================
# Suíte de identidades
# =========================

@dataclass(frozen=True)
class IdentitySuiteReport:
    count: int
    max_relative_error: float
    max_antisymmetry_error: float

    def passed(self, tol: float = 1e-12) -> bool:
        return self.max_relative_error <= tol and self.max_antisymmetry_error <= tol


def _random_smooth(grid: TorusGrid, rng: np.random.Generator, max_level: int = 3) -> np.ndarray:
    x = grid.nodes()
    out = np.full(grid.shape, rng.normal())
    for _ in range(4):
        p = rng.integers(-max_level, max_level + 1, size=grid.d)
        arg = sum(pi * xi for pi, xi in zip(p, x))
        out += rng.normal() * np.sin(arg) + rng.normal() * np.cos(arg)
    return out


def verify_identity_suite(grid: TorusGrid, count: int = 100, seed: int = 0) -> IdentitySuiteReport:
    """Confere pqr = Σf_i³ e Q(p,q,−r) = −Q(p,q,r) em campos aleatórios suaves."""
    rng = np.random.default_rng(seed)
    worst, worst_anti = 0.0, 0.0
    for _ in range(count):
        p, q, r = (_random_smooth(grid, rng) for _ in range(3))
        product = p * q * r
        realized = sum(f ** 3 for f in q_decompose(p, q, r))
        flipped = sum(f ** 3 for f in q_decompose(p, q, -r))
        scale = max(float(np.abs(product).max()), 1e-300)
        worst = max(worst, float(np.abs(product - realized).max()) / scale)
        worst_anti = max(worst_anti, float(np.abs(flipped + realized).max()) / scale)
    logger.info(f"identidade Q: {count} amostras, erro relativo máximo {worst:.3e}, antissimetria {worst_anti:.3e}")
    return IdentitySuiteReport(count, worst, worst_anti)
