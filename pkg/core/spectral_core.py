"""
Núcleo espectral: campos reais no toro 𝕋^d em coeficientes de Fourier
Normas de Sobolev, multiplicadores diferenciais, projeções espectrais e
produtos pontuais sem aliasing (zero-padding).

Convenção: u(x) = Σ u_k e^{i k·x}, com u_k = fftn(valores) / n^d.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Tuple

import numpy as np
import scipy.fft as sfft

from config.logger import setup_logger
from config.settings import settings
from core.errors import EmptyMask, GridTooCoarse, ProductOverflow

logger = setup_logger(__name__)

TWO_PI = 2.0 * np.pi

FIELD_MAGIC = b"CHSF"
FIELD_VERSION = 1
HEADER_DTYPE = np.dtype([
    ("magic", "S4"),
    ("version", "<u4"),
    ("d", "<u4"),
    ("n", "<u4"),
    ("dealias_num", "<u4"),
    ("dealias_den", "<u4"),
])


def _fftn(values: np.ndarray) -> np.ndarray:
    return sfft.fftn(values, workers=settings.fft_workers)


def _ifftn(coeffs: np.ndarray) -> np.ndarray:
    return sfft.ifftn(coeffs, workers=settings.fft_workers)


@dataclass(frozen=True)
class TorusGrid:
    """Malha uniforme de n nós por dimensão em [0, 2π)^d."""
    d: int
    n: int
    dealias_num: int = 2
    dealias_den: int = 1

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"dimensão d={self.d} não suportada (apenas 1 ou 2)")
        if self.n < 8 or self.n % 2 != 0 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"n={self.n} deve ser potência de dois e >= 8")
        if self.dealias_num * self.n % self.dealias_den != 0:
            raise ValueError("fração de dealiasing não gera malha inteira")
        if self.dealias_num < 2 * self.dealias_den:
            raise ValueError("produtos cúbicos exigem padding >= 2n por dimensão")

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n ** self.d

    @property
    def padded_n(self) -> int:
        return self.n * self.dealias_num // self.dealias_den

    @property
    def max_frequency(self) -> int:
        """Maior |k_i| representado (a linha de Nyquist é zerada)."""
        return self.n // 2 - 1

    @cached_property
    def axis_wavenumbers(self) -> np.ndarray:
        return np.rint(sfft.fftfreq(self.n) * self.n).astype(int)

    @cached_property
    def wavenumbers(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis_wavenumbers] * self.d), indexing="ij"))

    @cached_property
    def k_squared(self) -> np.ndarray:
        return sum(k.astype(float) ** 2 for k in self.wavenumbers)

    @cached_property
    def band_mask(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        for k in self.wavenumbers:
            mask &= np.abs(k) < self.n // 2
        return mask

    @cached_property
    def symbol_A(self) -> np.ndarray:
        """Multiplicador de 𝒜 = −Δ² − Δ: −(|k|⁴ − |k|²)."""
        k2 = self.k_squared
        return -(k2 ** 2 - k2)

    def nodes(self) -> Tuple[np.ndarray, ...]:
        x = TWO_PI * np.arange(self.n) / self.n
        return tuple(np.meshgrid(*([x] * self.d), indexing="ij"))

    def index_of(self, k: Sequence[int]) -> Tuple[int, ...]:
        if len(k) != self.d:
            raise ValueError(f"vetor de onda {tuple(k)} incompatível com d={self.d}")
        top = max(abs(int(c)) for c in k)
        if top > self.max_frequency:
            raise GridTooCoarse(top, self.n)
        return tuple(int(c) % self.n for c in k)

    def _pad_maps(self, m: int) -> Tuple[np.ndarray, np.ndarray]:
        # índices da banda (sem Nyquist) na malha pequena e na malha m
        k = self.axis_wavenumbers
        src = np.nonzero(np.abs(k) < self.n // 2)[0]
        dst = k[src] % m
        return src, dst


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Campo real em 𝕋^d guardado como coeficientes hermitianos."""
    grid: TorusGrid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != self.grid.shape:
            raise ValueError(f"coeficientes com forma {c.shape}, esperado {self.grid.shape}")
        c[~self.grid.band_mask] = 0.0
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    # --- construtores ---

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "SpectralField":
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "SpectralField":
        c = np.zeros(grid.shape, dtype=complex)
        c[(0,) * grid.d] = value
        return cls(grid, c)

    @classmethod
    def from_values(cls, grid: TorusGrid, values: np.ndarray) -> "SpectralField":
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"valores com forma {values.shape}, esperado {grid.shape}")
        return cls(grid, _fftn(values) / grid.size)

    @classmethod
    def from_modes(cls, grid: TorusGrid, terms: Iterable[Tuple[Sequence[int], str, float]]) -> "SpectralField":
        """Soma de termos (p, 'sin'|'cos', amplitude)."""
        c = np.zeros(grid.shape, dtype=complex)
        for p, phase, amp in terms:
            p = tuple(int(v) for v in p)
            if not any(p):
                if phase == "cos":
                    c[(0,) * grid.d] += amp
                continue
            ip = grid.index_of(p)
            im = grid.index_of(tuple(-v for v in p))
            if phase == "cos":
                c[ip] += 0.5 * amp
                c[im] += 0.5 * amp
            elif phase == "sin":
                c[ip] += -0.5j * amp
                c[im] += 0.5j * amp
            else:
                raise ValueError(f"fase desconhecida: {phase}")
        return cls(grid, c)

    # --- acesso ---

    def values(self) -> np.ndarray:
        return (_ifftn(self.coeffs) * self.grid.size).real

    def imaginary_defect(self) -> float:
        """max|Im| da transformada inversa relativo à amplitude máxima."""
        z = _ifftn(self.coeffs) * self.grid.size
        scale = max(float(np.abs(z).max()), 1e-300)
        return float(np.abs(z.imag).max()) / scale

    def hermitian_defect(self) -> float:
        c = self.coeffs
        idx = (-np.arange(self.grid.n)) % self.grid.n
        flipped = np.conj(c[np.ix_(*([idx] * self.grid.d))])
        return float(np.abs(c - flipped).max())

    def coefficient(self, k: Sequence[int]) -> complex:
        return complex(self.coeffs[self.grid.index_of(k)])

    @property
    def mean(self) -> float:
        return float(self.coeffs[(0,) * self.grid.d].real)

    def max_abs(self) -> float:
        return float(np.abs(self.values()).max())

    # --- aritmética ---

    def _check(self, other: "SpectralField"):
        if other.grid != self.grid:
            raise ValueError("campos em malhas diferentes")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.grid, -self.coeffs)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs / float(scalar))

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)


# =========================
# Operações
# =========================

def sobolev_norm(u: SpectralField, s: float) -> float:
    """‖u‖_{H^s} = (Σ |u_k|² (1+|k|²)^s)^{1/2}."""
    weight = (1.0 + u.grid.k_squared) ** s
    return float(np.sqrt(np.sum(np.abs(u.coeffs) ** 2 * weight)))


def apply_operator_A(u: SpectralField) -> SpectralField:
    return SpectralField(u.grid, u.coeffs * u.grid.symbol_A)


def apply_laplacian(u: SpectralField) -> SpectralField:
    return SpectralField(u.grid, -u.grid.k_squared * u.coeffs)


def padded_values(u: SpectralField) -> np.ndarray:
    """Valores físicos na malha estendida (m = padded_n nós por dimensão)."""
    grid = u.grid
    m = grid.padded_n
    src, dst = grid._pad_maps(m)
    big = np.zeros((m,) * grid.d, dtype=complex)
    big[np.ix_(*([dst] * grid.d))] = u.coeffs[np.ix_(*([src] * grid.d))]
    return (_ifftn(big) * m ** grid.d).real


def _from_padded(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    m = grid.padded_n
    big = _fftn(values) / m ** grid.d
    src, dst = grid._pad_maps(m)
    small = np.zeros(grid.shape, dtype=complex)
    small[np.ix_(*([src] * grid.d))] = big[np.ix_(*([dst] * grid.d))]
    return small


def cube(u: SpectralField) -> SpectralField:
    """u³ truncado à banda, sem aliasing."""
    vals = padded_values(u)
    if not np.all(np.isfinite(vals)):
        raise ProductOverflow("valores físicos não finitos antes do cubo")
    with np.errstate(over="ignore", invalid="ignore"):
        cubed = vals ** 3
    if not np.all(np.isfinite(cubed)):
        logger.error(f"❌ Overflow no cubo (max |u| = {np.nanmax(np.abs(vals)):.3e})")
        raise ProductOverflow("cubo não finito")
    return SpectralField(u.grid, _from_padded(u.grid, cubed))


def laplacian_of_cube(u: SpectralField) -> SpectralField:
    """Δ(u³) com zero-padding para 2n por dimensão."""
    c = cube(u)
    return SpectralField(u.grid, -u.grid.k_squared * c.coeffs)


def spectral_project(u: SpectralField, lam: float) -> Tuple[SpectralField, SpectralField]:
    """(E_λ u, E_λ^⊥ u) para os autovalores |k|² de −Δ."""
    if lam < 0:
        raise ValueError("λ deve ser não negativo")
    low = u.grid.k_squared <= lam
    return (
        SpectralField(u.grid, np.where(low, u.coeffs, 0.0)),
        SpectralField(u.grid, np.where(low, 0.0, u.coeffs)),
    )


def indicator_multiply(u: SpectralField, mask: np.ndarray) -> SpectralField:
    """u·1_ω no espaço físico, ω dado como máscara booleana de nós."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != u.grid.shape:
        raise ValueError(f"máscara com forma {mask.shape}, esperado {u.grid.shape}")
    if not mask.any():
        raise EmptyMask()
    return SpectralField.from_values(u.grid, u.values() * mask)


def l1_level(grid: TorusGrid) -> np.ndarray:
    """|k|₁ de cada coeficiente."""
    return sum(np.abs(k) for k in grid.wavenumbers)


def restrict_band(u: SpectralField, level: int) -> Tuple[SpectralField, SpectralField]:
    """(parte em span A_{I_N}, cauda) com I_N = {|p|₁ <= N+1}."""
    keep = l1_level(u.grid) <= level + 1
    return (
        SpectralField(u.grid, np.where(keep, u.coeffs, 0.0)),
        SpectralField(u.grid, np.where(keep, 0.0, u.coeffs)),
    )


def canonical_wavevectors(grid: TorusGrid) -> Iterator[Tuple[int, ...]]:
    """Vetores p ≠ 0 da banda com primeira entrada não nula positiva."""
    rng = range(-grid.max_frequency, grid.max_frequency + 1)
    if grid.d == 1:
        candidates = ((a,) for a in rng)
    else:
        candidates = ((a, b) for a in rng for b in rng)
    for p in candidates:
        nz = [v for v in p if v != 0]
        if nz and nz[0] > 0:
            yield p


def real_modes(u: SpectralField, tol: float = 0.0) -> Iterator[Tuple[Tuple[int, ...], str, float]]:
    """Decompõe u em termos (p, fase, amplitude) com p canônico (e p=0 para a média)."""
    zero = (0,) * u.grid.d
    if abs(u.mean) > tol:
        yield zero, "cos", u.mean
    for p in canonical_wavevectors(u.grid):
        c = u.coefficient(p)
        a, b = 2.0 * c.real, -2.0 * c.imag
        if abs(a) > tol:
            yield p, "cos", a
        if abs(b) > tol:
            yield p, "sin", b


# =========================
# Entrada/Saída
# =========================

def write_field_binary(path: str | Path, u: SpectralField) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    g = u.grid
    header = np.array([(FIELD_MAGIC, FIELD_VERSION, g.d, g.n, g.dealias_num, g.dealias_den)], dtype=HEADER_DTYPE)
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(u.values(), dtype="<f8").tobytes(order="C"))
    logger.debug(f"Campo salvo em {path} (d={g.d}, n={g.n})")
    return path


def read_field_binary(path: str | Path) -> SpectralField:
    raw = Path(path).read_bytes()
    header = np.frombuffer(raw[:HEADER_DTYPE.itemsize], dtype=HEADER_DTYPE)[0]
    if bytes(header["magic"]) != FIELD_MAGIC:
        raise ValueError(f"{path}: assinatura inválida")
    if int(header["version"]) != FIELD_VERSION:
        raise ValueError(f"{path}: versão {int(header['version'])} não suportada")
    grid = TorusGrid(int(header["d"]), int(header["n"]), int(header["dealias_num"]), int(header["dealias_den"]))
    values = np.frombuffer(raw[HEADER_DTYPE.itemsize:], dtype="<f8").reshape(grid.shape)
    return SpectralField.from_values(grid, values)


def write_spectrum_csv(path: str | Path, u: SpectralField) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    g = u.grid
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"k{i + 1}" for i in range(g.d)] + ["re", "im"])
        for idx in np.ndindex(*g.shape):
            if not g.band_mask[idx]:
                continue
            k = [int(g.wavenumbers[i][idx]) for i in range(g.d)]
            c = u.coeffs[idx]
            writer.writerow(k + [repr(float(c.real)), repr(float(c.imag))])
    return path
