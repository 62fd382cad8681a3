"""
Executor de experimentos do chcontrol
Subcomandos: simulate, steer, null-linear, null-global, saturation-plan, verify {identity|asymptotic|energy|grid}

Cada execução grava os artefatos em --out e um manifest.json com a configuração
resolvida, a versão e o sha256 de cada arquivo.

Códigos de saída: 0 sucesso, 2 configuração inválida, 3 verificação reprovada,
4 falha numérica ou de controle.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from config.logger import setup_logger
from config.settings import settings
from control.linear_null import (
    SourceTermWeights,
    build_galerkin,
    export_control_csv,
    null_control_with_source,
)
from control.nonlinear_null import global_null_pipeline
from control.saturation import TrigPoly, generate_mode_plan, save_plan, verify_identity_suite
from control.steering import asymptotic_rate, compile_steering, steer_at_exact_time
from core.ch_dynamics import (
    EvolutionProblem,
    energy_increments,
    evolve,
    mass,
    richardson_order,
    trajectory_to_csv,
)
from core.errors import ConfigInvalid, ControlFailure, DomainError, NumericalFailure
from core.schedule import read_mask
from core.spectral_core import (
    SpectralField,
    TorusGrid,
    read_field_binary,
    real_modes,
    sobolev_norm,
    write_field_binary,
    write_spectrum_csv,
)

logger = setup_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_NUMERICAL = 4

SUITES = ("identity", "asymptotic", "energy", "grid")


# =========================
# Configuração
# =========================

class GridConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    d: Literal[1, 2] = 1
    n: int = 32


class ModeTerm(BaseModel):
    model_config = ConfigDict(extra="forbid")
    p: List[int]
    phase: Literal["sin", "cos"] = "sin"
    amplitude: float = 1.0


class ControlConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    T: float = Field(1.0, gt=0)
    dt: Optional[float] = Field(None, gt=0)
    scheme: Literal["etdrk2", "etdrk4"] = "etdrk2"
    eps: float = Field(0.05, gt=0)
    level: Optional[int] = Field(None, ge=0)
    T_max: float = Field(0.5, gt=0)
    exact_time: bool = False
    eps_t: float = Field(0.05, gt=0)
    delta_t: float = Field(0.5, gt=0)
    omega: List[Tuple[float, float]] = Field(default_factory=lambda: [(0.0, math.pi)])
    mask_file: Optional[str] = None
    lam_max: float = Field(16.0, ge=0)
    M: float = Field(default_factory=lambda: settings.source_term_M)
    p: float = Field(default_factory=lambda: settings.source_term_p)
    q: float = Field(default_factory=lambda: settings.source_term_q)
    radius: Optional[float] = Field(None, gt=0)
    deltas: List[float] = Field(default_factory=lambda: [1e-2, 3e-3, 1e-3, 3e-4, 1e-4])


class ToleranceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    identity: float = 1e-12
    identity_count: int = Field(100, ge=1)
    asymptotic_slope: float = 0.15
    energy_step: float = 1e-10
    mass_drift: float = 1e-12
    energy_seeds: int = Field(10, ge=1)
    richardson_order: float = 2.0
    # ordem observada = 2 + O(dt), com sinal da correção dependente do dado
    richardson_slack: float = Field(0.02, ge=0)
    grid_refinement: float = 1e-8
    linear_terminal: float = 1e-8
    terminal: float = 1e-4


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    schema_version: Literal[1] = 1
    kind: Optional[str] = None
    grid: GridConfig = Field(default_factory=GridConfig)
    initial: List[ModeTerm] = Field(default_factory=list)
    initial_file: Optional[str] = None
    target: List[ModeTerm] = Field(default_factory=list)
    eta: List[ModeTerm] = Field(default_factory=list)
    phi: List[ModeTerm] = Field(default_factory=list)
    control: ControlConfig = Field(default_factory=ControlConfig)
    tolerances: ToleranceConfig = Field(default_factory=ToleranceConfig)
    seed: int = 0
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _check_dimensions(self) -> "ExperimentConfig":
        for name in ("initial", "target", "eta", "phi"):
            for term in getattr(self, name):
                if len(term.p) != self.grid.d:
                    raise ValueError(f"{name}: vetor de onda {term.p} incompatível com d={self.grid.d}")
        c = self.control
        if not 0 < c.eps_t < c.delta_t < c.T:
            raise ValueError("control: exige 0 < eps_t < delta_t < T")
        return self


def load_config(path: Optional[str | Path]) -> ExperimentConfig:
    try:
        if path is None:
            return ExperimentConfig()
        text = Path(path).read_text(encoding="utf-8")
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigInvalid([f"{'.'.join(str(p) for p in e['loc']) or '<raiz>'}: {e['msg']}"
                             for e in exc.errors()]) from exc
    except OSError as exc:
        raise ConfigInvalid([f"{path}: {exc}"]) from exc


# =========================
# Construção de dados
# =========================

def make_grid(cfg: ExperimentConfig) -> TorusGrid:
    return TorusGrid(cfg.grid.d, cfg.grid.n)


def make_field(grid: TorusGrid, terms: List[ModeTerm]) -> SpectralField:
    return SpectralField.from_modes(grid, [(t.p, t.phase, t.amplitude) for t in terms])


def initial_field(cfg: ExperimentConfig, grid: TorusGrid) -> SpectralField:
    if cfg.initial_file:
        u = read_field_binary(cfg.initial_file)
        if u.grid != grid:
            raise ConfigInvalid([f"initial_file: malha {u.grid} difere de {grid}"])
        return u
    return make_field(grid, cfg.initial)


def build_mask(cfg: ExperimentConfig, grid: TorusGrid) -> np.ndarray:
    """ω como produto de intervalos [a, b) por eixo (eixos omitidos ficam inteiros) ou lista de nós."""
    if cfg.control.mask_file:
        return read_mask(cfg.control.mask_file, grid)
    mask = np.ones(grid.shape, dtype=bool)
    for x, (lo, hi) in zip(grid.nodes(), cfg.control.omega):
        mask &= (x >= lo) & (x < hi)
    return mask


# =========================
# Execução dos subcomandos
# =========================

class RunContext:
    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.artifacts: List[Path] = []
        self.summary: Dict[str, object] = {}

    def add(self, path: Path) -> Path:
        self.artifacts.append(Path(path))
        return path

    def write_json(self, name: str, payload: dict) -> Path:
        path = self.out / name
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=float), encoding="utf-8")
        return self.add(path)


def cmd_simulate(ctx: RunContext) -> int:
    cfg = ctx.cfg
    grid = make_grid(cfg)
    u0 = initial_field(cfg, grid)
    problem = EvolutionProblem(u0, cfg.control.T, dt=cfg.control.dt or settings.default_dt,
                               scheme=cfg.control.scheme, record_steps=True)
    traj = evolve(problem)
    ctx.add(trajectory_to_csv(ctx.out / "trajectory.csv", traj))
    ctx.add(write_field_binary(ctx.out / "final.chsf", traj.final))
    ctx.add(write_spectrum_csv(ctx.out / "final_spectrum.csv", traj.final))
    ctx.summary.update(steps=traj.steps, final_norm=float(traj.norms[-1]),
                       smoothing_integral=traj.smoothing_integral)
    return EXIT_OK


def cmd_steer(ctx: RunContext) -> int:
    cfg, c = ctx.cfg, ctx.cfg.control
    grid = make_grid(cfg)
    u0, u1 = initial_field(cfg, grid), make_field(grid, cfg.target)
    if c.exact_time:
        schedule, report = steer_at_exact_time(u0, u1, c.eps, c.T, N=c.level)
    else:
        schedule, report = compile_steering(u0, u1, c.eps, 1 if c.level is None else c.level, c.T_max)
    ctx.add(schedule.to_jsonl(ctx.out / "schedule.jsonl"))
    for path in sorted((ctx.out / "schedule").glob("*")) if (ctx.out / "schedule").exists() else []:
        ctx.add(path)
    if report.trajectory is not None:
        ctx.add(trajectory_to_csv(ctx.out / "trajectory.csv", report.trajectory))
    ctx.summary.update(achieved_error=report.achieved_error, total_time=report.total_time,
                       segments=report.segment_count, delta=report.delta_used, resteers=report.resteers,
                       kinds=sorted({s.kind for s in schedule.segments}))
    return EXIT_OK


def cmd_null_linear(ctx: RunContext) -> int:
    cfg, c = ctx.cfg, ctx.cfg.control
    grid = make_grid(cfg)
    sys_ = build_galerkin(grid, build_mask(cfg, grid), c.lam_max)
    a = sys_.from_field(initial_field(cfg, grid))
    w = SourceTermWeights(c.M, c.p, c.q, c.T)
    glued, report = null_control_with_source(sys_, a, None, w)
    ctx.artifacts.extend(export_control_csv(ctx.out / "control", glued))
    ctx.summary.update(vars(report))
    ctx.write_json("report.json", vars(report))
    scale = max(report.initial_norm, 1e-300)
    passed = report.terminal_norm <= cfg.tolerances.linear_terminal * scale
    return EXIT_OK if passed else EXIT_VERIFY


def cmd_null_global(ctx: RunContext) -> int:
    cfg, c = ctx.cfg, ctx.cfg.control
    grid = make_grid(cfg)
    u0 = initial_field(cfg, grid)
    weights = SourceTermWeights(c.M, c.p, c.q, c.T - c.delta_t)
    plan, traj = global_null_pipeline(u0, c.eps_t, c.delta_t, c.T, build_mask(cfg, grid),
                                      lam_max=c.lam_max, weights=weights, radius=c.radius)
    ctx.add(plan.to_report().write(ctx.out / "pipeline.json"))
    ctx.add(trajectory_to_csv(ctx.out / "trajectory.csv", traj))
    ctx.summary.update(terminal_norm=plan.terminal_norm, radius=plan.radius,
                       structure_ok=plan.stage_structure_ok())
    passed = plan.terminal_norm <= cfg.tolerances.terminal and plan.stage_structure_ok()
    return EXIT_OK if passed else EXIT_VERIFY


def cmd_saturation_plan(ctx: RunContext) -> int:
    cfg = ctx.cfg
    target = TrigPoly.from_modes(cfg.grid.d, [(t.p, t.phase, t.amplitude) for t in cfg.target])
    plans = 0
    for i, mode in enumerate(target.terms()):
        ctx.add(save_plan(ctx.out / f"plan_{i:03d}.jsonl", generate_mode_plan(mode)))
        plans += 1
    ctx.summary.update(plans=plans, max_level=target.l1_level)
    return EXIT_OK


def _verify_identity(ctx: RunContext) -> bool:
    cfg, tol = ctx.cfg, ctx.cfg.tolerances
    report = verify_identity_suite(make_grid(cfg), tol.identity_count, cfg.seed)
    ctx.summary.update(count=report.count, max_relative_error=report.max_relative_error,
                       max_antisymmetry_error=report.max_antisymmetry_error)
    print(f"identidade Q: resíduo máximo {report.max_relative_error:.3e}")
    return report.passed(tol.identity)


def _verify_asymptotic(ctx: RunContext) -> bool:
    cfg = ctx.cfg
    grid = make_grid(cfg)
    report = asymptotic_rate(initial_field(cfg, grid), make_field(grid, cfg.eta),
                             make_field(grid, cfg.phi), cfg.control.deltas)
    ctx.summary.update(deltas=list(report.deltas), errors=list(report.errors),
                       slope=report.slope, r_squared=report.r_squared)
    return report.monotone and report.slope >= cfg.tolerances.asymptotic_slope


def _random_field(grid: TorusGrid, rng: np.random.Generator, amplitude: float = 0.5) -> SpectralField:
    terms = []
    for k in range(1, 4):
        for i in range(grid.d):
            p = [0] * grid.d
            p[i] = k
            terms += [(p, "sin", amplitude * rng.standard_normal() / k ** 2),
                      (p, "cos", amplitude * rng.standard_normal() / k ** 2)]
    return SpectralField.from_modes(grid, terms) + SpectralField.constant(grid, 0.1 * rng.standard_normal())


def _verify_energy(ctx: RunContext) -> bool:
    cfg, tol = ctx.cfg, ctx.cfg.tolerances
    grid = make_grid(cfg)
    rng = np.random.default_rng(cfg.seed)
    worst_step, worst_mass = -math.inf, 0.0
    for _ in range(tol.energy_seeds):
        u0 = _random_field(grid, rng)
        traj = evolve(EvolutionProblem(u0, min(cfg.control.T, 0.1), record_steps=True))
        worst_step = max(worst_step, float(energy_increments(traj).max()))
        worst_mass = max(worst_mass, max(abs(mass(u) - mass(u0)) for u in traj.states))
    ctx.summary.update(max_energy_increment=worst_step, max_mass_drift=worst_mass)
    return worst_step <= tol.energy_step and worst_mass <= tol.mass_drift


def _verify_grid(ctx: RunContext) -> bool:
    """Ordem de Richardson em dt e refinamento espacial n → 2n."""
    cfg, tol = ctx.cfg, ctx.cfg.tolerances
    grid = make_grid(cfg)
    u0 = _random_field(grid, np.random.default_rng(cfg.seed))
    T = min(cfg.control.T, 0.1)
    rich = richardson_order(EvolutionProblem(u0, T, dt=1e-3, scheme=cfg.control.scheme))
    fine_grid = TorusGrid(grid.d, 2 * grid.n)
    coarse = evolve(EvolutionProblem(u0, T)).final
    fine = evolve(EvolutionProblem(SpectralField.from_modes(fine_grid, _modes_of(u0)), T)).final
    gap = sobolev_norm(SpectralField.from_modes(fine_grid, _modes_of(coarse)) - fine, 0.0)
    ctx.summary.update(richardson_order=rich.order, differences=list(rich.differences), refinement_gap=gap)
    return rich.order >= tol.richardson_order - tol.richardson_slack and gap <= tol.grid_refinement


def _modes_of(u: SpectralField):
    return list(real_modes(u))


VERIFIERS: Dict[str, Callable[[RunContext], bool]] = {
    "identity": _verify_identity,
    "asymptotic": _verify_asymptotic,
    "energy": _verify_energy,
    "grid": _verify_grid,
}


def cmd_verify(ctx: RunContext, suite: str) -> int:
    passed = VERIFIERS[suite](ctx)
    ctx.summary["passed"] = passed
    logger.info(f"{'✅' if passed else '❌'} verify {suite}")
    return EXIT_OK if passed else EXIT_VERIFY


COMMANDS: Dict[str, Callable[[RunContext], int]] = {
    "simulate": cmd_simulate,
    "steer": cmd_steer,
    "null-linear": cmd_null_linear,
    "null-global": cmd_null_global,
    "saturation-plan": cmd_saturation_plan,
}


# =========================
# Manifesto
# =========================

class ArtifactRecord(BaseModel):
    path: str
    sha256: str


class Manifest(BaseModel):
    schema_version: int = 1
    artifact_version: str
    command: str
    seed: int
    threads: int
    exit_code: int
    config: dict
    summary: dict
    artifacts: List[ArtifactRecord]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(ctx: RunContext, command: str, exit_code: int) -> Path:
    records = [ArtifactRecord(path=str(p.relative_to(ctx.out)), sha256=_sha256(p))
               for p in sorted(set(ctx.artifacts)) if p.is_file()]
    manifest = Manifest(
        artifact_version=settings.artifact_version,
        command=command,
        seed=ctx.cfg.seed,
        threads=settings.fft_workers,
        exit_code=exit_code,
        config=ctx.cfg.model_dump(mode="json"),
        summary=json.loads(json.dumps(ctx.summary, default=float)),
        artifacts=records,
    )
    path = ctx.out / "manifest.json"
    path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    return path


# =========================
# Entrada
# =========================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chcontrol", description="Experimentos de controlabilidade de Cahn–Hilliard")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="Configuração JSON (ExperimentConfig)")
    common.add_argument("--out", type=Path, default=None, help="Diretório de saída")
    common.add_argument("--seed", type=int, default=None, help="Semente (sobrescreve a configuração)")
    common.add_argument("--threads", type=int, default=None, help="Workers da FFT")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    verify = sub.add_parser("verify", parents=[common])
    verify.add_argument("suite", choices=SUITES)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    label = args.command if args.command != "verify" else f"verify-{args.suite}"
    try:
        cfg = load_config(args.config)
        updates = {"kind": cfg.kind or label}
        if args.seed is not None:
            updates["seed"] = args.seed
        cfg = cfg.model_copy(update=updates)
    except ConfigInvalid as exc:
        for line in exc.errors:
            logger.error(f"configuração inválida: {line}")
        return EXIT_CONFIG

    if args.threads is not None:
        settings.fft_workers = max(1, args.threads)
    out = Path(args.out or cfg.output_dir or f"runs/{label}")
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(cfg, out)
    logger.info(f"▶️ {label}: saída em {out}")

    try:
        if args.command == "verify":
            code = cmd_verify(ctx, args.suite)
        else:
            code = COMMANDS[args.command](ctx)
    except ConfigInvalid as exc:
        logger.error(f"configuração inválida: {exc.errors}")
        code = EXIT_CONFIG
    except DomainError as exc:
        logger.error(f"parâmetros fora do domínio: {exc}")
        code = EXIT_CONFIG
    except (NumericalFailure, ControlFailure) as exc:
        logger.error(f"falha em {label}: {type(exc).__name__}: {exc}")
        ctx.summary["failure"] = f"{type(exc).__name__}: {exc}"
        code = EXIT_NUMERICAL
    except ValueError as exc:
        logger.error(f"argumento inválido: {exc}")
        code = EXIT_CONFIG

    ctx.summary.setdefault("exit_code", code)
    write_manifest(ctx, label, code)
    logger.info(f"🏁 {label} terminou com código {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
