"""Versioned atomic-data file: hyperfine lines, isotopes, vapour pressure.

The file is YAML with a ``checksum`` entry holding the SHA-256 of the
canonical JSON form of every other key. ``LADDER_EIT_CONSTANTS`` overrides
the bundled path.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import yaml
from scipy.constants import Boltzmann, atomic_mass, torr

ENV_VAR = "LADDER_EIT_CONSTANTS"
SCHEMA_VERSION = 1
MHZ = 2.0 * math.pi * 1e6


class ConstantsError(ValueError):
    pass


@dataclass(frozen=True)
class HyperfineLine:
    isotope: str
    line: str
    offset_MHz: float
    weight: float
    abundance: float

    @property
    def offset(self) -> float:
        """Line-centre offset in rad/s."""
        return self.offset_MHz * MHZ


@dataclass(frozen=True)
class Isotope:
    name: str
    mass_amu: float
    abundance: float

    @property
    def mass(self) -> float:
        return self.mass_amu * atomic_mass


@dataclass(frozen=True)
class AtomicData:
    version: int
    checksum: str
    path: str
    lines: tuple[HyperfineLine, ...]
    isotopes: dict[str, Isotope]
    upper_states: dict[str, float]  # control wavelength [m] from the intermediate level
    probe_wavelength: float
    vapor_pressure: dict

    def lines_for(self, isotopes=None) -> list[HyperfineLine]:
        if isotopes is None:
            return list(self.lines)
        wanted = set(isotopes)
        unknown = wanted - set(self.isotopes)
        if unknown:
            raise ConstantsError(f"unknown isotope(s): {sorted(unknown)}")
        return [ln for ln in self.lines if ln.isotope in wanted]

    def control_wavelength(self, state: str) -> float:
        try:
            return self.upper_states[state]
        except KeyError:
            raise ConstantsError(f"unknown upper state {state!r}") from None

    def ratio(self, state: str) -> float:
        """k_c / k_p for the named upper state."""
        return self.probe_wavelength / self.control_wavelength(state)

    def number_density(self, temperature: float) -> float:
        """Total number density [m^-3] from the tabulated vapour-pressure law."""
        vp = self.vapor_pressure
        phase = vp["solid"] if temperature < vp["melting_point_K"] else vp["liquid"]
        log10_p = phase["A"] - phase["B"] / temperature
        return 10.0**log10_p * torr / (Boltzmann * temperature)


def payload_checksum(payload: dict) -> str:
    body = {k: v for k, v in payload.items() if k != "checksum"}
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(canon.encode("utf-8")).hexdigest()


def default_path() -> Path:
    override = os.environ.get(ENV_VAR)
    if override:
        return Path(override)
    return Path(str(resources.files("ladder_eit") / "data" / "rb_constants.yaml"))


def load_constants(path: str | os.PathLike | None = None) -> AtomicData:
    """Parse and verify an atomic-data file (cached per resolved path)."""
    p = Path(path) if path is not None else default_path()
    return _load(str(p.resolve()))


@lru_cache(maxsize=8)
def _load(path: str) -> AtomicData:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConstantsError(f"cannot read constants file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConstantsError(f"{path}: top level must be a mapping")
    if raw.get("version") != SCHEMA_VERSION:
        raise ConstantsError(f"{path}: unsupported version {raw.get('version')!r}")
    expected = payload_checksum(raw)
    if raw.get("checksum") != expected:
        raise ConstantsError(f"{path}: checksum mismatch (file says {raw.get('checksum')!r})")

    isotopes = {
        name: Isotope(name, float(d["mass_amu"]), float(d["abundance"]))
        for name, d in raw["isotopes"].items()
    }
    lines = []
    for i, d in enumerate(raw["lines"]):
        missing = {"isotope", "line", "offset_MHz", "weight", "abundance"} - set(d)
        if missing:
            raise ConstantsError(f"{path}: lines[{i}] missing {sorted(missing)}")
        if d["isotope"] not in isotopes:
            raise ConstantsError(f"{path}: lines[{i}] has unknown isotope {d['isotope']!r}")
        lines.append(HyperfineLine(str(d["isotope"]), str(d["line"]), float(d["offset_MHz"]),
                                   float(d["weight"]), float(d["abundance"])))
    upper = {k: float(v) * 1e-9 for k, v in raw["upper_states_nm"].items()}
    return AtomicData(
        version=raw["version"],
        checksum=raw["checksum"],
        path=path,
        lines=tuple(lines),
        isotopes=isotopes,
        upper_states=upper,
        probe_wavelength=float(raw["probe_wavelength_nm"]) * 1e-9,
        vapor_pressure=raw["vapor_pressure"],
    )
