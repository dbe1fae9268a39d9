"""Execute a parsed scenario and write its data products plus a manifest."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .constants import AtomicData, load_constants
from .fitting import EITModel, MeasuredSpectrum, fit, synthetic_data
from .model import Geometry, VaporEnsemble, eigen_trace
from .scenario import Scenario
from .spectrum import (LineStack, analyze_window, background_fields, ratio_sweep,
                       thermal_two_photon_detuning, transmission_spectrum)

log = logging.getLogger(__name__)

SPECTRUM_COLUMNS = ("delta_p_Gamma2", "re_chi", "im_chi", "transmission")
EIGEN_COLUMNS = ("v_z_m_per_s", "lambda_plus_Gamma2", "lambda_minus_Gamma2")
SWEEP_COLUMNS = ("ratio", "fitted_width_Gamma2", "formula_width_Gamma2")
FIT_COLUMNS = ("delta_p_Gamma2", "data", "model")


def build_stack(sc: Scenario, constants: AtomicData | None = None) -> LineStack:
    if sc.line_isotopes is None:
        return LineStack.single(sc.scheme)
    constants = constants or load_constants()
    return LineStack.from_constants(constants, sc.scheme, sc.line_isotopes, sc.line_gamma_extra)


def resolve_vapor(sc: Scenario, stack: LineStack) -> VaporEnsemble:
    """Vapour with the density fixed; optical-depth mode solves for it.

    In optical-depth mode the density makes the Omega_c = 0 optical depth
    2 Im chi L at zero probe detuning equal the requested value.
    """
    if sc.density_mode != "optical_depth":
        return sc.vapor
    unit = replace(sc.vapor, density=1.0)
    od = transmission_spectrum(stack, background_fields(sc.fields), unit, sc.quadrature,
                               [0.0]).optical_depth[0]
    return replace(sc.vapor, density=sc.optical_depth / od)


def _fmt(x: float) -> str:
    return repr(float(x))


class OutputWriter:
    """Writes tables (CSV or JSON) and tracks content checksums.

    CSV files start with a timestamp comment line and JSON tables carry a
    ``generated`` key; both are excluded from the checksum so reruns hash
    identically.
    """

    def __init__(self, out_dir: Path, fmt: str = "csv"):
        self.out_dir = Path(out_dir)
        self.fmt = fmt
        self.entries: list[dict] = []
        self.stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def table(self, stem: str, columns, rows) -> Path:
        rows = [[float(v) for v in r] for r in rows]
        if self.fmt == "json":
            body = {"columns": list(columns), "rows": rows}
            digest = _digest(json.dumps(body, sort_keys=True).encode())
            body = {"generated": self.stamp, **body}
            path = self.out_dir / f"{stem}.json"
            path.write_text(json.dumps(body, indent=1) + "\n", encoding="utf-8")
        else:
            lines = [",".join(columns)] + [",".join(_fmt(v) for v in r) for r in rows]
            content = "\n".join(lines) + "\n"
            digest = _digest(content.encode())
            path = self.out_dir / f"{stem}.csv"
            path.write_text(f"# generated {self.stamp} by ladder-eit {__version__}\n" + content,
                            encoding="utf-8")
        self.entries.append({"file": path.name, "sha256": digest, "rows": len(rows)})
        return path

    def document(self, stem: str, payload: dict) -> Path:
        text = json.dumps(payload, indent=1, sort_keys=True) + "\n"
        path = self.out_dir / f"{stem}.json"
        path.write_text(text, encoding="utf-8")
        self.entries.append({"file": path.name, "sha256": _digest(text.encode())})
        return path

    def extra(self, path: Path) -> None:
        self.entries.append({"file": path.name, "sha256": _digest(path.read_bytes())})

    def manifest(self, sc: Scenario, constants_checksum: str | None, seed: int) -> Path:
        payload = {
            "scenario": sc.name,
            "scenario_sha256": _digest(sc.dump().encode()),
            "constants": constants_checksum,
            "seed": seed,
            "generated": self.stamp,
            "version": __version__,
            "files": self.entries,
        }
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
        return path


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _plot(path: Path, x, ys, labels, xlabel, ylabel):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not available; skipping %s", path.name)
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    for y, lab in zip(ys, labels):
        ax.plot(x, y, label=lab)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if any(labels):
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def run_scenario(sc: Scenario, out_dir, outputs=None, threads: int = 1, fmt: str = "csv",
                 seed: int = 0, data: MeasuredSpectrum | None = None, plot: bool = False,
                 constants: AtomicData | None = None) -> dict:
    """Produce the requested outputs; returns a summary dict.

    ``outputs`` defaults to the scenario's own list. A ``fit`` without
    ``data`` fits synthetic data drawn from the scenario's parameters with
    the scenario's noise level and ``seed``.
    """
    outputs = tuple(outputs or sc.outputs)
    needs_constants = sc.line_isotopes is not None or sc.density_mode == "vapor_pressure" \
        or (sc.sweep or {}).get("states")
    if needs_constants and constants is None:
        constants = load_constants()
    w = OutputWriter(Path(out_dir), fmt)
    stack = build_stack(sc, constants)
    vapor = resolve_vapor(sc, stack)
    g2 = sc.gamma2
    grid = sc.grid.values(g2)
    summary: dict = {"scenario": sc.name, "density_m3": vapor.density, "files": []}

    if "spectrum" in outputs or "window" in outputs:
        windows = {}
        for geo in sc.geometries:
            fields = replace(sc.fields, geometry=geo)
            spec, bg, rep = analyze_window(stack, fields, vapor, sc.quadrature, grid,
                                           threshold=sc.window_threshold, threads=threads)
            if "spectrum" in outputs:
                w.table(f"spectrum_{geo.value}", SPECTRUM_COLUMNS,
                        zip(grid / g2, spec.chi.real, spec.chi.imag, spec.transmission))
                if plot:
                    p = _plot(w.out_dir / f"spectrum_{geo.value}.svg", grid / g2,
                              [spec.transmission, bg.transmission], ["Omega_c on", "Omega_c = 0"],
                              "probe detuning [Gamma2]", "transmission")
                    if p:
                        w.extra(p)
            if "window" in outputs:
                center = stack.lines[0].detuning_offset + thermal_two_photon_detuning(
                    stack.lines[0], fields)
                i0 = int(np.argmin(np.abs(grid - center)))
                doc = {
                    "geometry": geo.value,
                    "found": rep.found,
                    "left_edge_Gamma2": rep.left_edge / g2 + 0.0,
                    "right_edge_Gamma2": rep.right_edge / g2 + 0.0,
                    "width_Gamma2": rep.width / g2,
                    "floor_absorption": None if np.isnan(rep.floor_absorption)
                    else rep.floor_absorption,
                    "formula_width_Gamma2": rep.formula_width / g2,
                    "gamma_crossing_Gamma2": rep.gamma_crossing / g2,
                    "threshold": sc.window_threshold,
                    "center_Gamma2": center / g2,
                    "im_chi_at_center_over_background": float(spec.chi.imag[i0] / bg.chi.imag[i0]),
                }
                w.document(f"window_{geo.value}", doc)
                windows[geo.value] = doc
        summary["windows"] = windows

    if "eigen_trace" in outputs:
        e = sc.eigen
        v = np.linspace(e["v_min"], e["v_max"], e["n"])
        ratios = e.get("ratios") or [None]
        for geo in sc.geometries:
            fields = replace(sc.fields, geometry=geo)
            for r in ratios:
                scheme = sc.scheme if r is None else sc.scheme.with_ratio(r)
                tr = eigen_trace(scheme, fields, v)
                stem = f"eigen_trace_{geo.value}" + ("" if r is None else f"_r{r:g}")
                w.table(stem, EIGEN_COLUMNS, zip(v, tr.lambda_plus / g2, tr.lambda_minus / g2))
                if plot:
                    p = _plot(w.out_dir / f"{stem}.svg", v, [tr.lambda_plus / g2,
                              tr.lambda_minus / g2], ["lambda+", "lambda-"], "v_z [m/s]",
                              "eigenfrequency [Gamma2]")
                    if p:
                        w.extra(p)

    if "sweep" in outputs:
        ratios = list(sc.sweep.get("ratios", []))
        for st in sc.sweep.get("states", []):
            ratios.append(sc.scheme.lambda_p / constants.control_wavelength(st))
        ratios = sorted(ratios)
        fields = replace(sc.fields, geometry=Geometry.COUNTER)
        rows = ratio_sweep(sc.scheme, fields, vapor, sc.quadrature, ratios, grid,
                           sc.window_threshold, threads)
        w.table("sweep", SWEEP_COLUMNS,
                [(r.ratio, r.fitted_width / g2, r.formula_width / g2) for r in rows])
        summary["sweep"] = [(r.ratio, r.fitted_width / g2, r.formula_width / g2) for r in rows]
        if plot:
            p = _plot(w.out_dir / "sweep.svg", [r.ratio for r in rows],
                      [[r.fitted_width / g2 for r in rows], [r.formula_width / g2 for r in rows]],
                      ["extracted", "approximate formula"], "k_c / k_p", "window width [Gamma2]")
            if p:
                w.extra(p)

    if "fit" in outputs:
        summary["fit"] = _run_fit(sc, stack, vapor, w, data, seed, threads)

    w.manifest(sc, constants.checksum if constants else None, seed)
    summary["files"] = [e["file"] for e in w.entries] + ["manifest.json"]
    return summary


def _run_fit(sc, stack, vapor, w: OutputWriter, data, seed, threads):
    g2 = sc.gamma2
    geo = data.direction if data is not None else sc.geometries[0]
    model = EITModel(stack, replace(sc.fields, geometry=geo), vapor, sc.quadrature, threads)
    problem = model.problem({k: tuple(v) for k, v in sc.fit["free"].items()})
    if data is None:
        truth = problem.values()
        data = synthetic_data(problem, truth, sc.grid.values(g2), sc.fit.get("noise", 0.01),
                              seed, geo)
    result = fit(problem, data, sc.fit["initial"], sc.fit["max_iterations"])
    report = result.report()
    report["units"] = "rad/s for frequency parameters"
    report["params_Gamma2"] = {k: (v if k == "amplitude" else v / g2)
                               for k, v in result.params.items()}
    w.document("fit_report", report)
    curve = problem.model(result.params, data.grid)
    w.table("fit_curve", FIT_COLUMNS, zip(data.grid / g2, data.transmission, curve))
    return report
