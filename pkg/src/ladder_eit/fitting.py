"""Least-squares fitting of the thermal EIT model to measured transmission."""

from __future__ import annotations

import csv
import io
import math
import re
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import least_squares

from .constants import MHZ
from .doppler import ConvergenceError, QuadratureSpec
from .model import FieldConfig, Geometry, ModelError, VaporEnsemble
from .spectrum import GridResolutionWarning, LineStack, transmission_spectrum

DEFAULT_GAMMA2 = 2.0 * math.pi * 6.07e6
_UNIT_RE = re.compile(r"^delta_p_(MHz|Gamma2|rad_s)$")


class FitError(RuntimeError):
    pass


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class MeasuredSpectrum:
    """Normalised probe transmission on a detuning grid in rad/s.

    Values above 1 from normalisation noise are kept as they are.
    """

    grid: np.ndarray
    transmission: np.ndarray
    direction: Geometry = Geometry.COUNTER
    meta: Mapping[str, str] = field(default_factory=dict)
    reference: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        t = np.asarray(self.transmission, dtype=float)
        if grid.ndim != 1 or grid.shape != t.shape or grid.size == 0:
            raise DataFormatError("grid and transmission must be equal-length 1-D arrays")
        if grid.size > 1 and not np.all(np.diff(grid) > 0):
            raise DataFormatError("detuning grid must be strictly increasing")
        if not np.all(np.isfinite(t)) or np.any(t < 0):
            raise DataFormatError("transmission values must be finite and non-negative")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "transmission", t)
        object.__setattr__(self, "direction", Geometry.parse(self.direction))
        for name in ("reference", "weights"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.shape != grid.shape:
                    raise DataFormatError(f"{name} column has the wrong length")
                object.__setattr__(self, name, arr)


def load_measured(path, gamma2: float = DEFAULT_GAMMA2, direction=None) -> MeasuredSpectrum:
    """Read delimited text (comma or tab) with a unit-tagged header.

    Required columns: ``delta_p_<unit>`` with unit in {MHz, Gamma2, rad_s} and
    ``transmission``; optional ``reference`` and ``weight``. Leading lines of
    the form ``# key: value`` become metadata; ``direction`` there is used
    unless overridden.
    """
    text = Path(path).read_text(encoding="utf-8")
    meta: dict[str, str] = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if sep:
                meta[key.strip()] = value.strip()
            continue
        if line.strip():
            body.append(line)
    if not body:
        raise DataFormatError(f"{path}: no header row")
    delim = "\t" if "\t" in body[0] else ","
    rows = list(csv.reader(io.StringIO("\n".join(body)), delimiter=delim))
    header = [h.strip() for h in rows[0]]
    unit_cols = [(i, m.group(1)) for i, h in enumerate(header) if (m := _UNIT_RE.match(h))]
    if len(unit_cols) != 1:
        raise DataFormatError(
            f"{path}: header needs exactly one delta_p_<MHz|Gamma2|rad_s> column, got {header}")
    if "transmission" not in header:
        raise DataFormatError(f"{path}: header lacks a 'transmission' column")
    idx, unit = unit_cols[0]
    cols = {name: header.index(name) for name in ("transmission", "reference", "weight")
            if name in header}
    try:
        data = np.array([[float(r[j]) for j in range(len(header))] for r in rows[1:]],
                        dtype=float).reshape(-1, len(header))
    except (ValueError, IndexError) as exc:
        raise DataFormatError(f"{path}: malformed numeric row ({exc})") from exc
    scale = {"MHz": MHZ, "Gamma2": gamma2, "rad_s": 1.0}[unit]
    grid = data[:, idx] * scale
    order = np.argsort(grid, kind="stable")
    pick = lambda name: data[order, cols[name]] if name in cols else None
    meta["unit"] = unit
    return MeasuredSpectrum(
        grid=grid[order],
        transmission=pick("transmission"),
        direction=direction or meta.get("direction", "counter"),
        meta=meta,
        reference=pick("reference"),
        weights=pick("weight"),
    )


@dataclass(frozen=True)
class Parameter:
    value: float
    lower: float = -math.inf
    upper: float = math.inf
    free: bool = False


Model = Callable[[Mapping[str, float], np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FitProblem:
    """A transmission model with named parameters, some free within bounds."""

    model: Model
    parameters: Mapping[str, Parameter]

    def __post_init__(self) -> None:
        params = dict(self.parameters)
        object.__setattr__(self, "parameters", params)
        if not self.free_names:
            raise FitError("at least one parameter must be free")
        for name in self.free_names:
            p = params[name]
            if not (math.isfinite(p.lower) and math.isfinite(p.upper)):
                raise FitError(f"bounds for free parameter {name!r} must be finite")
            if not p.lower < p.upper:
                raise FitError(f"bounds for {name!r} need lower < upper")

    @property
    def free_names(self) -> list[str]:
        return [k for k, p in self.parameters.items() if p.free]

    def values(self, overrides: Mapping[str, float] | None = None) -> dict[str, float]:
        vals = {k: p.value for k, p in self.parameters.items()}
        vals.update(overrides or {})
        return vals

    def check_bounds(self, values: Mapping[str, float]) -> None:
        for name in self.free_names:
            p, v = self.parameters[name], values[name]
            if not p.lower <= v <= p.upper:
                raise FitError(f"{name}={v!r} outside bounds [{p.lower!r}, {p.upper!r}]")


@dataclass
class EITModel:
    """Transmission of a line stack as a function of fit parameters.

    Recognised parameters: ``omega_c``, ``delta_c``, ``gamma_extra`` (all
    lines), ``gamma_extra_<isotope>``, ``amplitude`` (multiplies the
    transmission) and ``offset`` (shift of the measured detuning axis, so the
    model is evaluated at delta - offset).
    """

    stack: LineStack
    fields: FieldConfig
    vapor: VaporEnsemble
    quad: QuadratureSpec | None = None
    threads: int = 1

    def __call__(self, params: Mapping[str, float], grid: np.ndarray) -> np.ndarray:
        fields = replace(self.fields,
                         omega_c=params.get("omega_c", self.fields.omega_c),
                         delta_c=params.get("delta_c", self.fields.delta_c))
        lines = []
        for line, iso in zip(self.stack.lines, self.stack.isotopes):
            g = params.get(f"gamma_extra_{iso}", params.get("gamma_extra", line.gamma_extra))
            lines.append(replace(line, gamma_extra=g))
        stack = replace(self.stack, lines=tuple(lines))
        grid = np.asarray(grid, dtype=float) - params.get("offset", 0.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GridResolutionWarning)
            spec = transmission_spectrum(stack, fields, self.vapor, self.quad, grid, self.threads)
        return params.get("amplitude", 1.0) * spec.transmission

    def problem(self, free: Mapping[str, tuple[float, float]],
                values: Mapping[str, float] | None = None,
                offset_bounds: tuple[float, float] | None = None) -> FitProblem:
        """Build a FitProblem; a free ``offset`` is always included.

        Starting values default to the model's own field and line settings,
        or the midpoint of the bounds.
        """
        values = dict(values or {})
        free = dict(free)
        if "offset" not in free:
            half = 10.0 * self.stack.lines[0].gamma2
            free["offset"] = offset_bounds or (-half, half)
        defaults = {
            "omega_c": self.fields.omega_c,
            "delta_c": self.fields.delta_c,
            "gamma_extra": self.stack.lines[0].gamma_extra,
            "amplitude": 1.0,
            "offset": 0.0,
        }
        for line, iso in zip(self.stack.lines, self.stack.isotopes):
            defaults.setdefault(f"gamma_extra_{iso}", line.gamma_extra)
        params = {}
        for name in set(free) | set(values):
            if name not in defaults:
                raise FitError(f"unknown fit parameter {name!r}")
        for name, (lo, hi) in free.items():
            v = values.get(name, defaults[name])
            if not lo <= v <= hi:
                v = 0.5 * (lo + hi)
            params[name] = Parameter(float(v), float(lo), float(hi), True)
        for name, v in values.items():
            if name not in free:
                params[name] = Parameter(float(v))
        return FitProblem(self, params)


def residuals(problem: FitProblem, params: Mapping[str, float], data: MeasuredSpectrum) -> np.ndarray:
    """Weighted model-minus-data transmission residuals."""
    values = problem.values(params)
    problem.check_bounds(values)
    try:
        model = np.asarray(problem.model(values, data.grid), dtype=float)
    except ConvergenceError as exc:
        raise ConvergenceError(f"{exc.message} at {values}", exc.achieved, exc.value) from exc
    except ModelError as exc:
        raise FitError(f"model evaluation failed at {values}: {exc}") from exc
    r = model - data.transmission
    if data.weights is not None:
        r = r * data.weights
    return r


@dataclass(frozen=True)
class FitResult:
    params: dict[str, float]
    stderr: dict[str, float]
    covariance: np.ndarray
    rms: float
    initial_rms: float
    iterations: int
    evaluations: int
    converged: bool
    message: str
    bounds_hit: list[str]

    def report(self) -> dict:
        return {
            "converged": self.converged,
            "message": self.message,
            "rms": self.rms,
            "initial_rms": self.initial_rms,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "params": self.params,
            "stderr": self.stderr,
            "covariance_diagonal": {k: float(v**2) for k, v in self.stderr.items()},
            "bounds_hit": self.bounds_hit,
        }


def _rms(r: np.ndarray) -> float:
    return float(np.sqrt(np.mean(r * r))) if r.size else 0.0


def fit(problem: FitProblem, data: MeasuredSpectrum, initial: Mapping[str, float] | None = None,
        max_iterations: int = 200, diff_step: float = 1e-6) -> FitResult:
    """Bounded trust-region least squares with finite-difference Jacobians.

    Free parameters are mapped onto [0, 1] by their bounds so that steps are
    comparable across quantities. Hitting ``max_iterations`` returns the best
    point flagged ``converged=False``; so does a Jacobian that vanishes
    identically (the data carry no information about the parameters).
    """
    names = problem.free_names
    start = problem.values(initial)
    problem.check_bounds(start)
    lo = np.array([problem.parameters[n].lower for n in names])
    hi = np.array([problem.parameters[n].upper for n in names])
    span = hi - lo

    def unpack(x):
        vals = dict(start)
        vals.update(zip(names, (lo + np.clip(x, 0.0, 1.0) * span).tolist()))
        return vals

    def fun(x):
        return residuals(problem, unpack(x), data)

    x0 = (np.array([start[n] for n in names]) - lo) / span
    r0 = fun(x0)
    sol = least_squares(fun, x0, bounds=(0.0, 1.0), method="trf", diff_step=diff_step,
                        x_scale=1.0, max_nfev=max_iterations, xtol=1e-12, ftol=1e-12,
                        gtol=1e-12)
    values = unpack(sol.x)
    r = sol.fun
    m, n = r.size, len(names)
    degenerate = not np.any(sol.jac)
    dof = max(m - n, 1)
    s2 = 2.0 * sol.cost / dof
    if degenerate:
        cov = np.full((n, n), np.nan)
    else:
        # invert in the normalised coordinates, where columns are commensurate
        cov_x = np.linalg.pinv(sol.jac.T @ sol.jac) * s2
        cov = cov_x * np.outer(span, span)
    stderr = {k: float(math.sqrt(cov[i, i])) if cov[i, i] >= 0 else math.nan
              for i, k in enumerate(names)}
    converged = sol.status > 0 and not degenerate
    message = "degenerate problem: residuals do not depend on the free parameters" \
        if degenerate else sol.message
    hit = [k for i, k in enumerate(names) if sol.active_mask[i] != 0]
    rms = _rms(r)
    initial_rms = _rms(r0)
    if rms > initial_rms:
        values, rms = start, initial_rms
    return FitResult(
        params={k: float(values[k]) for k in problem.parameters},
        stderr=stderr,
        covariance=cov,
        rms=rms,
        initial_rms=initial_rms,
        iterations=int(sol.njev or 0),
        evaluations=int(sol.nfev),
        converged=bool(converged),
        message=str(message),
        bounds_hit=hit,
    )


def synthetic_data(problem: FitProblem, truth: Mapping[str, float], grid: np.ndarray,
                   noise: float = 0.0, seed: int = 0,
                   direction: Geometry = Geometry.COUNTER) -> MeasuredSpectrum:
    """Model transmission at ``truth`` plus Gaussian noise of std ``noise``."""
    t = np.asarray(problem.model(problem.values(truth), grid), dtype=float)
    if noise:
        t = t + np.random.default_rng(seed).normal(0.0, noise, size=t.shape)
    return MeasuredSpectrum(grid, np.clip(t, 0.0, None), direction,
                            {"synthetic": "true", "seed": str(seed)})


def null_model_ratio(problem: FitProblem, params: Mapping[str, float],
                     data: MeasuredSpectrum) -> float:
    """RMS residual of the Omega_c = 0 model divided by that at ``params``."""
    full = _rms(residuals(problem, params, data))
    null = dict(problem.values(params), omega_c=0.0)
    base = _rms(np.asarray(problem.model(null, data.grid)) - data.transmission)
    return base / full if full > 0 else math.inf
