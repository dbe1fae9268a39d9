"""Transmission spectra, transparency-window extraction and width sweeps."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy.signal import find_peaks

from .constants import AtomicData
from .doppler import QuadratureSpec, doppler_susceptibility
from .model import FieldConfig, LadderScheme, ModelError, VaporEnsemble, crossing_linewidth


class GridResolutionWarning(UserWarning):
    """Detuning grid too coarse to resolve the narrowest spectral scale."""


@dataclass(frozen=True)
class LineStack:
    """Independent probe lines sharing one control field and geometry.

    ``isotopes`` labels each line; ``abundances`` and ``masses`` (kg) are keyed
    by those labels. Lines whose isotope has no mass entry use the vapour mass.
    """

    lines: tuple[LadderScheme, ...]
    isotopes: tuple[str, ...] = ()
    abundances: Mapping[str, float] = field(default_factory=dict)
    masses: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        lines = tuple(self.lines)
        if not lines:
            raise ModelError("line stack is empty")
        isotopes = tuple(self.isotopes) or ("",) * len(lines)
        if len(isotopes) != len(lines):
            raise ModelError("one isotope label per line required")
        object.__setattr__(self, "lines", lines)
        object.__setattr__(self, "isotopes", isotopes)
        object.__setattr__(self, "abundances", dict(self.abundances))
        object.__setattr__(self, "masses", dict(self.masses))
        if any(a < 0 for a in self.abundances.values()):
            raise ModelError("abundances must be non-negative")
        if self.total_weight <= 0:
            raise ModelError("total line weight must be positive")

    @classmethod
    def single(cls, scheme: LadderScheme) -> "LineStack":
        return cls((scheme,))

    @classmethod
    def from_constants(cls, data: AtomicData, template: LadderScheme, isotopes=None,
                       gamma_extra: Mapping[str, float] | None = None) -> "LineStack":
        """One line per tabulated hyperfine component, based on ``template``.

        ``gamma_extra`` optionally sets the extra |2> decay per isotope.
        """
        gamma_extra = gamma_extra or {}
        lines, labels = [], []
        for hf in data.lines_for(isotopes):
            lines.append(replace(template, weight=hf.weight, detuning_offset=hf.offset,
                                 gamma_extra=gamma_extra.get(hf.isotope, template.gamma_extra)))
            labels.append(hf.isotope)
        used = set(labels)
        return cls(tuple(lines), tuple(labels),
                   {k: v.abundance for k, v in data.isotopes.items() if k in used},
                   {k: v.mass for k, v in data.isotopes.items() if k in used})

    def abundance(self, i: int) -> float:
        return self.abundances.get(self.isotopes[i], 1.0)

    @property
    def total_weight(self) -> float:
        return sum(ln.weight * self.abundance(i) for i, ln in enumerate(self.lines))

    def vapor_for(self, i: int, vapor: VaporEnsemble) -> VaporEnsemble:
        mass = self.masses.get(self.isotopes[i])
        return vapor if mass is None else replace(vapor, mass=mass)


@dataclass(frozen=True)
class ComplexSpectrum:
    grid: np.ndarray
    chi: np.ndarray
    length: float

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        chi = np.asarray(self.chi, dtype=complex)
        if grid.ndim != 1 or grid.shape != chi.shape:
            raise ModelError("grid and chi must be 1-D arrays of equal length")
        if grid.size > 1 and not np.all(np.diff(grid) > 0):
            raise ModelError("grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "chi", chi)

    @property
    def transmission(self) -> np.ndarray:
        """Intensity transmission exp(-2 Im chi L)."""
        return np.exp(-2.0 * self.chi.imag * self.length)

    @property
    def optical_depth(self) -> np.ndarray:
        return 2.0 * self.chi.imag * self.length


def check_grid(grid: np.ndarray, scheme: LadderScheme, fields: FieldConfig) -> None:
    scale = scheme.gamma2 if fields.omega_c == 0 else min(scheme.gamma2, fields.omega_c)
    if grid.size > 1 and np.max(np.diff(grid)) > scale / 8.0:
        warnings.warn(
            f"grid spacing {np.max(np.diff(grid)):.3g} rad/s exceeds 1/8 of "
            f"min(Gamma2, Omega_c) = {scale:.3g} rad/s",
            GridResolutionWarning, stacklevel=3)


def transmission_spectrum(stack: LineStack | LadderScheme, fields: FieldConfig,
                          vapor: VaporEnsemble, quad: QuadratureSpec | None = None,
                          grid: Sequence[float] = (), threads: int = 1) -> ComplexSpectrum:
    """Sum of weighted, offset single-line averages over ``grid`` (rad/s)."""
    if isinstance(stack, LadderScheme):
        stack = LineStack.single(stack)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ModelError("grid must be a non-empty 1-D sequence")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ModelError("grid must be strictly increasing")
    check_grid(grid, stack.lines[0], fields)
    total = np.zeros(grid.size, dtype=complex)
    for i, line in enumerate(stack.lines):
        w = line.weight * stack.abundance(i)
        if w == 0:
            continue
        chi = doppler_susceptibility(line, fields, stack.vapor_for(i, vapor), quad,
                                     delta_p=grid - line.detuning_offset, threads=threads)
        total += w * chi
    return ComplexSpectrum(grid, total, vapor.length)


class FormulaWidth(NamedTuple):
    width: float
    valid: bool


def width_formula(scheme: LadderScheme, fields: FieldConfig) -> FormulaWidth:
    """Approximate window width 4 Omega_c sqrt(k_p (k_c - k_p)) / k_c.

    ``valid`` is False (and the width 0) when k_c < k_p, where no avoided
    crossing exists.
    """
    kp, kc = scheme.k_p, scheme.k_c
    if kc < kp:
        return FormulaWidth(0.0, False)
    return FormulaWidth(4.0 * fields.omega_c * math.sqrt(kp * (kc - kp)) / kc, True)


@dataclass(frozen=True)
class WindowReport:
    left_edge: float
    right_edge: float
    width: float
    floor_absorption: float
    formula_width: float = math.nan
    gamma_crossing: float = math.nan

    @property
    def found(self) -> bool:
        return self.width > 0


def _crossing(x0, x1, r0, r1, level):
    if r1 == r0:
        return 0.5 * (x0 + x1)
    return x0 + (level - r0) * (x1 - x0) / (r1 - r0)


def extract_window(spec: ComplexSpectrum, background: ComplexSpectrum, center: float = 0.0,
                   threshold: float = 0.05, scheme: LadderScheme | None = None,
                   fields: FieldConfig | None = None) -> WindowReport:
    """Locate the transparency window around ``center``.

    The window is the contiguous run of grid points containing the point
    nearest ``center`` on which Im chi < (1 - threshold) Im chi_background.
    Edges are linearly interpolated to the threshold crossing; a run reaching
    the end of the grid stops there. No qualifying point gives a zero-width
    report. ``floor_absorption`` is the smallest Im chi / Im chi_background
    inside the window.
    """
    if spec.grid.shape != background.grid.shape or not np.array_equal(spec.grid, background.grid):
        raise ModelError("spectrum and background must share the same grid")
    if not 0 < threshold < 1:
        raise ModelError("threshold must lie in (0, 1)")
    formula = gamma = math.nan
    if scheme is not None and fields is not None:
        formula = width_formula(scheme, fields).width
        gamma = crossing_linewidth(scheme)
    x = spec.grid
    bg = background.chi.imag
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bg > 0, spec.chi.imag / bg, np.inf)
    level = 1.0 - threshold
    inside = ratio < level
    i0 = int(np.argmin(np.abs(x - center)))
    if not inside[i0]:
        return WindowReport(center, center, 0.0, math.nan, formula, gamma)
    hi = i0
    while hi + 1 < x.size and inside[hi + 1]:
        hi += 1
    lo = i0
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    left = x[lo] if lo == 0 else _crossing(x[lo - 1], x[lo], ratio[lo - 1], ratio[lo], level)
    right = (x[hi] if hi == x.size - 1
             else _crossing(x[hi], x[hi + 1], ratio[hi], ratio[hi + 1], level))
    floor = float(np.min(ratio[lo:hi + 1]))
    return WindowReport(float(left), float(right), float(right - left), floor, formula, gamma)


def thermal_two_photon_detuning(scheme: LadderScheme, fields: FieldConfig) -> float:
    """Probe detuning k_p v* at which the probe-resonant velocity class
    v* = Delta_c / (s k_c) is also on two-photon resonance.

    This is the centre of the avoided-crossing window; it equals -Delta_c only
    when Delta_c = 0 or k_c = k_p.
    """
    return scheme.k_p * fields.delta_c / (fields.sign * scheme.k_c)


def background_fields(fields: FieldConfig) -> FieldConfig:
    return replace(fields, omega_c=0.0)


def analyze_window(stack: LineStack | LadderScheme, fields: FieldConfig, vapor: VaporEnsemble,
                   quad: QuadratureSpec | None, grid, center: float | None = None,
                   threshold: float = 0.05, threads: int = 1):
    """Spectrum, Omega_c = 0 background and the window report in one call.

    ``center`` defaults to the thermal two-photon resonance of the first line
    (see :func:`thermal_two_photon_detuning`).
    """
    first = stack if isinstance(stack, LadderScheme) else stack.lines[0]
    if center is None:
        center = first.detuning_offset + thermal_two_photon_detuning(first, fields)
    spec = transmission_spectrum(stack, fields, vapor, quad, grid, threads)
    bg = transmission_spectrum(stack, background_fields(fields), vapor, quad, grid, threads)
    return spec, bg, extract_window(spec, bg, center, threshold, first, fields)


def transmission_maxima(spec: ComplexSpectrum, prominence: float = 1e-3) -> np.ndarray:
    """Detunings of local transmission maxima standing out by ``prominence``."""
    idx, _ = find_peaks(spec.transmission, prominence=prominence)
    return spec.grid[idx]


def eit_resonances(counter: ComplexSpectrum, co: ComplexSpectrum, tolerance: float,
                   prominence: float = 1e-3) -> np.ndarray:
    """Transmission maxima of ``counter`` with no ``co`` maximum within ``tolerance``.

    Maxima shared by both geometries are gaps between Doppler-broadened lines;
    the remainder are control-induced transparency resonances.
    """
    a = transmission_maxima(counter, prominence)
    b = transmission_maxima(co, prominence)
    if b.size == 0:
        return a
    keep = np.min(np.abs(a[:, None] - b[None, :]), axis=1) > tolerance
    return a[keep]


@dataclass(frozen=True)
class SweepRow:
    ratio: float
    fitted_width: float
    formula_width: float
    floor_absorption: float


def default_window_grid(scheme: LadderScheme, fields: FieldConfig, n: int = 1601) -> np.ndarray:
    """Symmetric grid about zero wide enough for any k_c/k_p at this Omega_c."""
    half = 3.0 * fields.omega_c + 4.0 * scheme.gamma2 + abs(fields.delta_c)
    if n % 2 == 0:
        n += 1
    return np.linspace(-half, half, n)


def ratio_sweep(base: LadderScheme, fields: FieldConfig, vapor: VaporEnsemble,
                quad: QuadratureSpec | None, ratios: Sequence[float], grid=None,
                threshold: float = 0.05, threads: int = 1) -> list[SweepRow]:
    """Fitted versus approximate window width as k_c is varied at fixed k_p."""
    ratios = [float(r) for r in ratios]
    if any(r <= 0 for r in ratios):
        raise ModelError("ratios must be positive")
    if ratios != sorted(ratios):
        raise ModelError("ratios must be sorted")
    if grid is None:
        grid = default_window_grid(base, fields)
    rows = []
    for r in ratios:
        scheme = base.with_ratio(r)
        _, _, rep = analyze_window(scheme, fields, vapor, quad, grid, None, threshold, threads)
        rows.append(SweepRow(r, rep.width, rep.formula_width, rep.floor_absorption))
    return rows
