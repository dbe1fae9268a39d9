"""Scenario files: YAML description of a simulation run.

Frequency-valued entries carry an explicit unit tag, e.g. ``"1.5 Gamma2"``,
``"6.07 MHz"``, ``"26.5 kHz"`` or ``"3.8e7 rad_s"``. MHz and kHz denote
cyclic frequencies and are converted to angular (2 pi x value). ``Gamma2``
refers to the scenario's own ``scheme.gamma2``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from scipy.constants import atomic_mass

from .constants import AtomicData, load_constants
from .doppler import QuadratureSpec, Rule
from .model import FieldConfig, Geometry, LadderScheme, ModelError, VaporEnsemble

OUTPUTS = ("spectrum", "eigen_trace", "window", "sweep", "fit")
GRID_UNITS = ("Gamma2", "MHz", "rad_s")
_FREQ_RE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(Gamma2|MHz|kHz|rad_s)\s*$")
_YAML11_FLOAT = re.compile(r"^[-+]?(?:\d+\.?\d*|\.\d+)[eE]\d+$")
_CYCLIC = {"MHz": 2e6 * math.pi, "kHz": 2e3 * math.pi}


class ScenarioError(ValueError):
    """Parse or validation failure, with the offending field path and line."""

    def __init__(self, message: str, path: str = "", line: int | None = None):
        where = path or "<scenario>"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


def _line_map(text: str) -> dict[str, int]:
    """Dotted field path -> 1-based line for every node in a YAML document."""
    out: dict[str, int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, prefix):
        out[prefix] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                walk(v, f"{prefix}.{k.value}" if prefix else str(k.value))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, f"{prefix}[{i}]")

    if root is not None:
        walk(root, "")
    return out


def parse_frequency(value: Any, gamma2: float | None, path: str) -> float:
    """Tagged frequency -> rad/s."""
    if isinstance(value, dict) and set(value) == {"value", "unit"}:
        value = f"{value['value']} {value['unit']}"
    if isinstance(value, bool) or not isinstance(value, str):
        raise ScenarioError(f"expected a unit-tagged frequency such as '1.5 Gamma2', got {value!r}",
                            path)
    m = _FREQ_RE.match(value)
    if not m:
        raise ScenarioError(f"cannot parse frequency {value!r} (units: Gamma2, MHz, kHz, rad_s)",
                            path)
    number, unit = float(m.group(1)), m.group(2)
    if unit == "Gamma2":
        if gamma2 is None:
            raise ScenarioError("Gamma2 units are not allowed here", path)
        return number * gamma2
    return number * _CYCLIC.get(unit, 1.0)


def format_frequency(value: float) -> str:
    return f"{float(value)!r} rad_s"


@dataclass(frozen=True)
class GridSpec:
    min: float
    max: float
    n: int
    unit: str = "Gamma2"

    def scale(self, gamma2: float) -> float:
        return {"Gamma2": gamma2, "MHz": _CYCLIC["MHz"], "rad_s": 1.0}[self.unit]

    def values(self, gamma2: float) -> np.ndarray:
        return np.linspace(self.min, self.max, self.n) * self.scale(gamma2)


@dataclass(frozen=True)
class Scenario:
    name: str
    scheme: LadderScheme
    fields: FieldConfig
    geometries: tuple[Geometry, ...]
    vapor: VaporEnsemble
    quadrature: QuadratureSpec
    grid: GridSpec
    outputs: tuple[str, ...]
    description: str = ""
    isotope: str = "Rb87"
    line_isotopes: tuple[str, ...] | None = None  # None: a single ladder line
    line_gamma_extra: dict[str, float] = field(default_factory=dict)
    density_mode: str = "value"  # value | vapor_pressure | optical_depth
    optical_depth: float | None = None
    window_threshold: float = 0.05
    eigen: dict | None = None
    sweep: dict | None = None
    fit: dict | None = None

    @property
    def gamma2(self) -> float:
        return self.scheme.gamma2

    def to_dict(self) -> dict:
        """Canonical serialisable form; parses back to an equal Scenario."""
        s, f, v, q = self.scheme, self.fields, self.vapor, self.quadrature
        d: dict[str, Any] = {
            "name": self.name,
            "description": self.description,
            "outputs": list(self.outputs),
            "scheme": {
                "lambda_p_m": s.lambda_p,
                "lambda_c_m": s.lambda_c,
                "gamma2": format_frequency(s.gamma2),
                "gamma3": format_frequency(s.gamma3),
                "gamma_extra": format_frequency(s.gamma_extra),
            },
            "fields": {
                "delta_c": format_frequency(f.delta_c),
                "omega_c": format_frequency(f.omega_c),
                "geometry": [g.value for g in self.geometries],
            },
            "vapor": {
                "temperature_K": v.temperature,
                "isotope": self.isotope,
                "mass_kg": v.mass,
                "length_m": v.length,
            },
            "quadrature": {
                "rule": q.rule.value,
                "node_count": q.node_count,
                "velocity_cutoff": q.velocity_cutoff,
                "rel_tol": q.rel_tol,
                "max_doublings": q.max_doublings,
            },
            "grid": {"min": self.grid.min, "max": self.grid.max, "n": self.grid.n,
                     "unit": self.grid.unit},
            "window": {"threshold": self.window_threshold},
        }
        if self.density_mode == "vapor_pressure":
            d["vapor"]["density"] = "vapor_pressure"
        elif self.density_mode == "optical_depth":
            d["vapor"]["optical_depth"] = self.optical_depth
        else:
            d["vapor"]["density_m3"] = v.density
        if self.line_isotopes is not None:
            d["lines"] = {
                "isotopes": list(self.line_isotopes),
                "gamma_extra": {k: format_frequency(x) for k, x in self.line_gamma_extra.items()},
            }
        if self.eigen is not None:
            d["eigen_trace"] = _plain(self.eigen)
        if self.sweep is not None:
            d["sweep"] = _plain(self.sweep)
        if self.fit is not None:
            fmt = lambda k, x: x if k == "amplitude" else format_frequency(x)
            d["fit"] = {
                "free": {k: [fmt(k, lo), fmt(k, hi)] for k, (lo, hi) in self.fit["free"].items()},
                "initial": {k: fmt(k, x) for k, x in self.fit["initial"].items()},
                "max_iterations": self.fit["max_iterations"],
            }
            if "noise" in self.fit:
                d["fit"]["noise"] = self.fit["noise"]
        return d

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class _Reader:
    """Typed access into the raw mapping with path-aware errors."""

    def __init__(self, raw: dict, lines: dict[str, int]):
        self.raw = raw
        self.lines = lines

    def fail(self, message: str, path: str):
        line = self.lines.get(path)
        if line is None:
            parent = path.rsplit(".", 1)[0] if "." in path else ""
            line = self.lines.get(parent)
        raise ScenarioError(message, path, line)

    def section(self, key: str, required: bool = True) -> dict | None:
        val = self.raw.get(key)
        if val is None:
            if required:
                self.fail("missing required section", key)
            return None
        if not isinstance(val, dict):
            self.fail("must be a mapping", key)
        return val

    def number(self, sec: dict, key: str, path: str, default=None, positive=False,
               nonneg=False) -> float:
        full = f"{path}.{key}"
        if key not in sec:
            if default is None:
                self.fail("missing required field", full)
            return default
        val = sec[key]
        if isinstance(val, str) and _YAML11_FLOAT.match(val):
            val = float(val)  # YAML 1.1 reads 1.0e16 (no exponent sign) as a string
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
            self.fail(f"expected a finite number, got {val!r}", full)
        if positive and val <= 0:
            self.fail("must be positive", full)
        if nonneg and val < 0:
            self.fail("must be non-negative", full)
        return float(val)

    def freq(self, sec: dict, key: str, path: str, gamma2, default=None) -> float:
        full = f"{path}.{key}"
        if key not in sec:
            if default is None:
                self.fail("missing required field", full)
            return default
        try:
            return parse_frequency(sec[key], gamma2, full)
        except ScenarioError as exc:
            self.fail(str(exc).split(": ", 1)[-1], full)


def bundled_scenarios() -> dict[str, Path]:
    root = resources.files("ladder_eit") / "scenarios"
    return {Path(str(p)).stem: Path(str(p)) for p in root.iterdir() if str(p).endswith(".yaml")}


def resolve_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    bundled = bundled_scenarios()
    key = p.stem if p.suffix in (".yaml", ".yml") else name
    if key in bundled and p.parent == Path("."):
        return bundled[key]
    raise FileNotFoundError(f"scenario {name!r} not found (bundled: {sorted(bundled)})")


def load_scenario(path, constants: AtomicData | None = None) -> Scenario:
    text = Path(path).read_text(encoding="utf-8")
    return parse_scenario(text, constants, source=str(path))


def parse_scenario(text: str, constants: AtomicData | None = None, source: str = "") -> Scenario:
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ScenarioError(f"YAML syntax error: {exc.problem}", source, line) from exc
    if not isinstance(raw, dict):
        raise ScenarioError("top level must be a mapping", source)
    r = _Reader(raw, _line_map(text))
    try:
        return _build(r, constants)
    except ModelError as exc:
        raise ScenarioError(str(exc), source) from exc


def _build(r: _Reader, constants: AtomicData | None) -> Scenario:
    raw = r.raw
    known = {"name", "description", "outputs", "scheme", "lines", "fields", "vapor",
             "quadrature", "grid", "window", "eigen_trace", "sweep", "fit"}
    for key in raw:
        if key not in known:
            r.fail(f"unknown section (expected one of {sorted(known)})", str(key))

    outputs = raw.get("outputs")
    if not isinstance(outputs, list) or not outputs:
        r.fail("at least one output must be requested", "outputs")
    for i, o in enumerate(outputs):
        if o not in OUTPUTS:
            r.fail(f"unknown output {o!r}; choose from {list(OUTPUTS)}", f"outputs[{i}]")
    if len(set(outputs)) != len(outputs):
        r.fail("duplicate outputs", "outputs")

    sch = r.section("scheme")
    gamma2 = r.freq(sch, "gamma2", "scheme", None)
    if gamma2 <= 0:
        r.fail("must be positive", "scheme.gamma2")
    scheme = LadderScheme(
        lambda_p=_wavelength(r, sch, "lambda_p"),
        lambda_c=_wavelength(r, sch, "lambda_c"),
        gamma2=gamma2,
        gamma3=r.freq(sch, "gamma3", "scheme", gamma2, 0.0),
        gamma_extra=r.freq(sch, "gamma_extra", "scheme", gamma2, 0.0),
    )

    fs = r.section("fields")
    geo_raw = fs.get("geometry", "counter")
    geo_list = geo_raw if isinstance(geo_raw, list) else [geo_raw]
    geometries = []
    for i, g in enumerate(geo_list):
        try:
            geometries.append(Geometry.parse(g))
        except ModelError as exc:
            r.fail(str(exc), f"fields.geometry[{i}]" if isinstance(geo_raw, list)
                   else "fields.geometry")
    omega_c = r.freq(fs, "omega_c", "fields", gamma2)
    if omega_c < 0:
        r.fail("must be non-negative", "fields.omega_c")
    fields = FieldConfig(0.0, r.freq(fs, "delta_c", "fields", gamma2, 0.0), omega_c,
                         geometries[0])

    vraw = raw.get("vapor") if isinstance(raw.get("vapor"), dict) else {}
    need_constants = "lines" in raw or vraw.get("density") == "vapor_pressure" \
        or not ({"mass_kg", "mass_amu"} & set(vraw))
    if need_constants and constants is None:
        constants = load_constants()

    vs = r.section("vapor")
    isotope = vs.get("isotope", "Rb87")
    if "mass_kg" in vs:
        mass = r.number(vs, "mass_kg", "vapor", positive=True)
    elif "mass_amu" in vs:
        mass = r.number(vs, "mass_amu", "vapor", positive=True) * atomic_mass
    else:
        if isotope not in constants.isotopes:
            r.fail(f"unknown isotope {isotope!r}", "vapor.isotope")
        mass = constants.isotopes[isotope].mass
    temperature = r.number(vs, "temperature_K", "vapor", positive=True)
    if "length_m" in vs:
        length = r.number(vs, "length_m", "vapor", positive=True)
    else:
        length = r.number(vs, "length_cm", "vapor", positive=True) * 1e-2
    density_mode, od, density = "value", None, 0.0
    modes = [k for k in ("density_m3", "density", "optical_depth") if k in vs]
    if len(modes) != 1:
        r.fail("give exactly one of density_m3, density: vapor_pressure, optical_depth", "vapor")
    if modes[0] == "density_m3":
        density = r.number(vs, "density_m3", "vapor", nonneg=True)
    elif modes[0] == "density":
        if vs["density"] != "vapor_pressure":
            r.fail("only 'vapor_pressure' is accepted here; use density_m3 for a number",
                   "vapor.density")
        density_mode = "vapor_pressure"
        density = constants.number_density(temperature)
    else:
        density_mode = "optical_depth"
        od = r.number(vs, "optical_depth", "vapor", positive=True)
    vapor = VaporEnsemble(temperature, mass, density, length)

    qs = r.section("quadrature", required=False) or {}
    try:
        quad = QuadratureSpec(
            rule=Rule(qs.get("rule", Rule.POLE_PANELS.value)),
            node_count=int(r.number(qs, "node_count", "quadrature", 200)),
            velocity_cutoff=r.number(qs, "velocity_cutoff", "quadrature", 8.0),
            rel_tol=r.number(qs, "rel_tol", "quadrature", 1e-8),
            max_doublings=int(r.number(qs, "max_doublings", "quadrature", 8)),
        )
    except ValueError as exc:
        r.fail(str(exc), "quadrature")

    gs = r.section("grid")
    unit = gs.get("unit", "Gamma2")
    if unit not in GRID_UNITS:
        r.fail(f"unit must be one of {list(GRID_UNITS)}", "grid.unit")
    n = r.number(gs, "n", "grid")
    if n != int(n) or n < 16:
        r.fail("n must be an integer >= 16", "grid.n")
    grid = GridSpec(r.number(gs, "min", "grid"), r.number(gs, "max", "grid"), int(n), unit)
    if not grid.max > grid.min:
        r.fail("max must exceed min", "grid.max")

    line_isotopes, line_gamma = None, {}
    ls = r.section("lines", required=False)
    if ls is not None:
        isos = ls.get("isotopes", list(constants.isotopes))
        if not isinstance(isos, list) or not isos:
            r.fail("must be a non-empty list", "lines.isotopes")
        for i, iso in enumerate(isos):
            if iso not in constants.isotopes:
                r.fail(f"unknown isotope {iso!r}", f"lines.isotopes[{i}]")
        line_isotopes = tuple(isos)
        ge = ls.get("gamma_extra", {}) or {}
        if not isinstance(ge, dict):
            r.fail("must map isotope -> frequency", "lines.gamma_extra")
        line_gamma = {k: r.freq(ge, k, "lines.gamma_extra", gamma2) for k in ge}

    ws = r.section("window", required=False) or {}
    threshold = r.number(ws, "threshold", "window", 0.05)
    if not 0 < threshold < 1:
        r.fail("must lie in (0, 1)", "window.threshold")

    eigen = _eigen_section(r)
    sweep = _sweep_section(r, constants)
    fit = _fit_section(r, gamma2)
    for key, val in (("eigen_trace", eigen), ("sweep", sweep), ("fit", fit)):
        if key in outputs and val is None:
            r.fail(f"output {key!r} requested but section {key!r} is missing", "outputs")

    name = raw.get("name", "scenario")
    if not isinstance(name, str) or not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
        r.fail("name must be a plain identifier", "name")
    return Scenario(
        name=name,
        scheme=scheme,
        fields=fields,
        geometries=tuple(geometries),
        vapor=vapor,
        quadrature=quad,
        grid=grid,
        outputs=tuple(outputs),
        description=str(raw.get("description", "")),
        isotope=isotope,
        line_isotopes=line_isotopes,
        line_gamma_extra=line_gamma,
        density_mode=density_mode,
        optical_depth=od,
        window_threshold=threshold,
        eigen=eigen,
        sweep=sweep,
        fit=fit,
    )


def _wavelength(r: _Reader, sec: dict, stem: str) -> float:
    if f"{stem}_m" in sec:
        return r.number(sec, f"{stem}_m", "scheme", positive=True)
    return r.number(sec, f"{stem}_nm", "scheme", positive=True) * 1e-9


def _eigen_section(r: _Reader) -> dict | None:
    es = r.section("eigen_trace", required=False)
    if es is None:
        return None
    out = {
        "v_min": r.number(es, "v_min", "eigen_trace"),
        "v_max": r.number(es, "v_max", "eigen_trace"),
        "n": int(r.number(es, "n", "eigen_trace", 801)),
    }
    if not out["v_max"] > out["v_min"]:
        r.fail("v_max must exceed v_min", "eigen_trace.v_max")
    if out["n"] < 2:
        r.fail("n must be >= 2", "eigen_trace.n")
    ratios = es.get("ratios")
    if ratios is not None:
        if not isinstance(ratios, list) or not all(
                isinstance(x, (int, float)) and x > 0 for x in ratios):
            r.fail("must be a list of positive numbers", "eigen_trace.ratios")
        out["ratios"] = [float(x) for x in ratios]
    return out


def _sweep_section(r: _Reader, constants: AtomicData | None) -> dict | None:
    ss = r.section("sweep", required=False)
    if ss is None:
        return None
    out: dict[str, Any] = {}
    if "states" in ss:
        states = ss["states"]
        if not isinstance(states, list) or not states:
            r.fail("must be a non-empty list of upper-state labels", "sweep.states")
        constants = constants or load_constants()
        for i, st in enumerate(states):
            if st not in constants.upper_states:
                r.fail(f"unknown upper state {st!r}", f"sweep.states[{i}]")
        out["states"] = list(states)
    if "ratios" in ss:
        ratios = ss["ratios"]
        if not isinstance(ratios, list) or not all(
                isinstance(x, (int, float)) and x > 0 for x in ratios):
            r.fail("must be a list of positive numbers", "sweep.ratios")
        if list(ratios) != sorted(ratios):
            r.fail("must be sorted ascending", "sweep.ratios")
        out["ratios"] = [float(x) for x in ratios]
    if not out:
        r.fail("give 'ratios' and/or 'states'", "sweep")
    return out


def _fit_section(r: _Reader, gamma2: float) -> dict | None:
    fs = r.section("fit", required=False)
    if fs is None:
        return None
    free = fs.get("free")
    if not isinstance(free, dict) or not free:
        r.fail("must map parameter -> [lower, upper]", "fit.free")
    out_free = {}
    for name, bounds in free.items():
        path = f"fit.free.{name}"
        if not isinstance(bounds, list) or len(bounds) != 2:
            r.fail("bounds must be a two-element list", path)
        out_free[name] = [_fit_value(r, name, b, gamma2, path) for b in bounds]
        if not out_free[name][0] < out_free[name][1]:
            r.fail("lower bound must be below upper bound", path)
    initial = {}
    for name, v in (fs.get("initial") or {}).items():
        initial[name] = _fit_value(r, name, v, gamma2, f"fit.initial.{name}")
    out = {"free": out_free, "initial": initial,
           "max_iterations": int(r.number(fs, "max_iterations", "fit", 200))}
    if "noise" in fs:
        out["noise"] = r.number(fs, "noise", "fit", nonneg=True)
    return out


def _fit_value(r: _Reader, name: str, value, gamma2: float, path: str) -> float:
    if name == "amplitude":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            r.fail("amplitude bounds are plain numbers", path)
        return float(value)
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        r.fail("frequency parameters need a unit tag, e.g. '7 Gamma2'", path)
    try:
        return parse_frequency(value, gamma2, path)
    except ScenarioError as exc:
        r.fail(str(exc).split(": ", 1)[-1], path)
