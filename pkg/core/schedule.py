"""
Agenda de controle constante por partes
Cada segmento carrega coeficientes de ℋ₀ (2d+1 reais), um campo localizado em ω
ou nada (controle nulo).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from config.logger import setup_logger
from core.spectral_core import (
    SpectralField,
    TorusGrid,
    indicator_multiply,
    read_field_binary,
    write_field_binary,
)

logger = setup_logger(__name__)

_TIME_TOL = 1e-12


def h0_dimension(d: int) -> int:
    return 2 * d + 1


@dataclass(frozen=True)
class H0Coefficients:
    """η ∈ ℋ₀ na ordem (1, sin x₁, cos x₁, …, sin x_d, cos x_d)."""
    coefficients: Tuple[float, ...]

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if len(coeffs) not in (3, 5):
            raise ValueError(f"ℋ₀ exige 2d+1 coeficientes, recebido {len(coeffs)}")
        if not all(np.isfinite(coeffs)):
            raise ValueError("coeficientes de ℋ₀ não finitos")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def d(self) -> int:
        return (len(self.coefficients) - 1) // 2

    @classmethod
    def zeros(cls, d: int) -> "H0Coefficients":
        return cls((0.0,) * h0_dimension(d))

    def terms(self):
        d = self.d
        yield (0,) * d, "cos", self.coefficients[0]
        for i in range(d):
            e = tuple(1 if j == i else 0 for j in range(d))
            yield e, "sin", self.coefficients[1 + 2 * i]
            yield e, "cos", self.coefficients[2 + 2 * i]

    def to_field(self, grid: TorusGrid) -> SpectralField:
        if grid.d != self.d:
            raise ValueError("dimensão de ℋ₀ incompatível com a malha")
        return SpectralField.from_modes(grid, self.terms())

    @classmethod
    def from_field(cls, u: SpectralField, tol: float = 1e-12) -> "H0Coefficients":
        """Extrai a parte em ℋ₀; falha se u tiver componente fora de ℋ₀."""
        d = u.grid.d
        coeffs = [u.mean]
        for i in range(d):
            e = tuple(1 if j == i else 0 for j in range(d))
            c = u.coefficient(e)
            coeffs += [-2.0 * c.imag, 2.0 * c.real]
        h = cls(tuple(coeffs))
        residual = np.abs((u - h.to_field(u.grid)).coeffs).max()
        if residual > tol * max(1.0, np.abs(u.coeffs).max()):
            raise ValueError(f"campo fora de ℋ₀ (resíduo {residual:.3e})")
        return h

    def __add__(self, other: "H0Coefficients") -> "H0Coefficients":
        return H0Coefficients(tuple(a + b for a, b in zip(self.coefficients, other.coefficients)))

    def __sub__(self, other: "H0Coefficients") -> "H0Coefficients":
        return H0Coefficients(tuple(a - b for a, b in zip(self.coefficients, other.coefficients)))

    def scaled(self, s: float) -> "H0Coefficients":
        return H0Coefficients(tuple(s * c for c in self.coefficients))

    def is_zero(self) -> bool:
        return not any(self.coefficients)


@dataclass(frozen=True, eq=False)
class LocalizedField:
    """Controle 1_ω g já multiplicado pela indicadora."""
    field: SpectralField
    mask: np.ndarray

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool)
        m.flags.writeable = False
        object.__setattr__(self, "mask", m)

    @classmethod
    def from_field(cls, g: SpectralField, mask: np.ndarray) -> "LocalizedField":
        return cls(indicator_multiply(g, mask), mask)

    def to_field(self, grid: TorusGrid) -> SpectralField:
        return self.field


Payload = Union[H0Coefficients, LocalizedField, None]


def payload_kind(payload: Payload) -> str:
    if payload is None:
        return "free"
    if isinstance(payload, H0Coefficients):
        return "h0"
    return "localized"


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    payload: Payload = None
    max_step: Optional[float] = None
    label: str = ""

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError(f"segmento degenerado [{self.t_start}, {self.t_end}]")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def kind(self) -> str:
        return payload_kind(self.payload)

    def forcing(self, grid: TorusGrid) -> Optional[SpectralField]:
        if self.payload is None:
            return None
        return self.payload.to_field(grid)


@dataclass(frozen=True)
class ControlSchedule:
    """Segmentos contíguos, sem lacunas nem sobreposições."""
    segments: Tuple[Segment, ...] = field(default_factory=tuple)

    def __post_init__(self):
        segs = tuple(self.segments)
        for a, b in zip(segs, segs[1:]):
            if abs(b.t_start - a.t_end) > _TIME_TOL * max(1.0, abs(a.t_end)):
                raise ValueError(f"segmentos não contíguos em t={a.t_end}")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def empty(cls) -> "ControlSchedule":
        return cls(())

    @classmethod
    def from_durations(cls, pieces: Sequence[Tuple[float, Payload, Optional[float]]], t0: float = 0.0,
                       label: str = "") -> "ControlSchedule":
        segs: List[Segment] = []
        t = t0
        for duration, payload, max_step in pieces:
            segs.append(Segment(t, t + duration, payload, max_step, label))
            t = t + duration
        return cls(tuple(segs))

    @property
    def start(self) -> float:
        return self.segments[0].t_start if self.segments else 0.0

    @property
    def end(self) -> float:
        return self.segments[-1].t_end if self.segments else 0.0

    @property
    def duration(self) -> float:
        return self.end - self.start

    def __len__(self) -> int:
        return len(self.segments)

    def boundaries(self) -> List[float]:
        if not self.segments:
            return []
        return [s.t_start for s in self.segments] + [self.segments[-1].t_end]

    def shifted(self, offset: float) -> "ControlSchedule":
        return ControlSchedule(tuple(replace(s, t_start=s.t_start + offset, t_end=s.t_end + offset)
                                     for s in self.segments))

    def then(self, other: "ControlSchedule") -> "ControlSchedule":
        """Concatena other logo após o fim desta agenda."""
        if not other.segments:
            return self
        if not self.segments:
            return other
        moved = other.shifted(self.end - other.start)
        first = replace(moved.segments[0], t_start=self.end)
        return ControlSchedule(self.segments + (first,) + moved.segments[1:])

    def window(self, a: float, b: float) -> "ControlSchedule":
        """Recorte de [a, b] reposicionado para começar em 0."""
        segs = []
        for s in self.segments:
            lo, hi = max(s.t_start, a), min(s.t_end, b)
            if hi > lo:
                segs.append(replace(s, t_start=lo - a, t_end=hi - a))
        return ControlSchedule(tuple(segs))

    def with_label(self, label: str) -> "ControlSchedule":
        return ControlSchedule(tuple(replace(s, label=label) for s in self.segments))

    def segment_at(self, t: float) -> Optional[Segment]:
        for s in self.segments:
            if s.t_start <= t < s.t_end:
                return s
        if self.segments and t == self.end:
            return self.segments[-1]
        return None

    def field_at(self, t: float, grid: TorusGrid) -> SpectralField:
        seg = self.segment_at(t)
        if seg is None or seg.payload is None:
            return SpectralField.zeros(grid)
        return seg.payload.to_field(grid)

    # --- serialização ---

    def to_jsonl(self, path: str | Path) -> Path:
        """Um registro por linha; campos localizados vão para arquivos binários ao lado."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        field_dir = path.with_suffix("")
        lines = []
        for i, seg in enumerate(self.segments):
            rec = SegmentRecord(t0=seg.t_start, t1=seg.t_end, kind=seg.kind,
                                max_step=seg.max_step, label=seg.label)
            if isinstance(seg.payload, H0Coefficients):
                rec.coefficients = list(seg.payload.coefficients)
            elif isinstance(seg.payload, LocalizedField):
                fpath = write_field_binary(field_dir / f"seg_{i:05d}.chsf", seg.payload.field)
                mpath = write_mask(field_dir / f"seg_{i:05d}.mask", seg.payload.mask)
                rec.field_file = str(fpath.relative_to(path.parent))
                rec.mask_file = str(mpath.relative_to(path.parent))
            lines.append(rec.model_dump_json())
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        logger.debug(f"Agenda com {len(lines)} segmentos salva em {path}")
        return path

    @classmethod
    def from_jsonl(cls, path: str | Path, grid: TorusGrid) -> "ControlSchedule":
        path = Path(path)
        segs = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = SegmentRecord.model_validate_json(line)
            payload: Payload = None
            if rec.kind == "h0":
                payload = H0Coefficients(tuple(rec.coefficients or ()))
            elif rec.kind == "localized":
                u = read_field_binary(path.parent / rec.field_file)
                mask = read_mask(path.parent / rec.mask_file, grid)
                payload = LocalizedField(u, mask)
            segs.append(Segment(rec.t0, rec.t1, payload, rec.max_step, rec.label))
        return cls(tuple(segs))


class SegmentRecord(BaseModel):
    t0: float
    t1: float
    kind: str
    coefficients: Optional[List[float]] = None
    field_file: Optional[str] = None
    mask_file: Optional[str] = None
    max_step: Optional[float] = None
    label: str = ""


def write_mask(path: str | Path, mask: np.ndarray) -> Path:
    """Formato: índice (linear, row-major) de cada nó de ω, um por linha."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    path.write_text("\n".join(str(int(i)) for i in idx) + "\n", encoding="utf-8")
    return path


def read_mask(path: str | Path, grid: TorusGrid) -> np.ndarray:
    mask = np.zeros(grid.size, dtype=bool)
    for line in Path(path).read_text(encoding="utf-8").split():
        mask[int(line)] = True
    return mask.reshape(grid.shape)
