"""Physical types and the stationary-atom ladder susceptibility.

All frequencies and rates are angular (rad/s); lengths in metres.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.constants import Boltzmann, atomic_mass


class ModelError(ValueError):
    """Invalid physical input (bad parameter or singular evaluation)."""


class Geometry(str, enum.Enum):
    """Relative propagation direction of probe and control beams."""

    COUNTER = "counter"
    CO = "co"

    @property
    def sign(self) -> int:
        # k_c . v = sign * k_c * v_z
        return -1 if self is Geometry.COUNTER else 1

    @classmethod
    def parse(cls, value: "Geometry | str") -> "Geometry":
        if isinstance(value, Geometry):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ModelError(f"unknown geometry {value!r}; expected 'counter' or 'co'") from None


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ModelError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class LadderScheme:
    """One probe + control transition pair |1> -> |2> -> |3>."""

    lambda_p: float
    lambda_c: float
    gamma2: float
    gamma3: float = 0.0
    gamma_extra: float = 0.0
    weight: float = 1.0
    detuning_offset: float = 0.0

    def __post_init__(self) -> None:
        for name in ("lambda_p", "lambda_c", "gamma2", "gamma3", "gamma_extra", "weight",
                     "detuning_offset"):
            object.__setattr__(self, name, _finite(name, getattr(self, name)))
        if self.lambda_p <= 0 or self.lambda_c <= 0:
            raise ModelError("wavelengths must be positive")
        if self.gamma2 <= 0:
            raise ModelError("gamma2 must be positive")
        if self.gamma3 < 0 or self.gamma_extra < 0:
            raise ModelError("gamma3 and gamma_extra must be non-negative")
        if self.weight < 0:
            raise ModelError("weight must be non-negative")

    @property
    def k_p(self) -> float:
        return 2.0 * math.pi / self.lambda_p

    @property
    def k_c(self) -> float:
        return 2.0 * math.pi / self.lambda_c

    @property
    def ratio(self) -> float:
        """Wavenumber ratio k_c / k_p."""
        return self.lambda_p / self.lambda_c

    @property
    def gamma_probe(self) -> float:
        """Total decay of the |1>-|2> coherence, radiative plus extra."""
        return self.gamma2 + self.gamma_extra

    def prefactor(self, density: float) -> float:
        """3 n0 lambda_p^2 Gamma2 / (8 pi), in rad/s per metre."""
        return 3.0 * density * self.lambda_p**2 * self.gamma2 / (8.0 * math.pi)

    def with_ratio(self, ratio: float) -> "LadderScheme":
        """Copy with the control wavelength set so that k_c / k_p == ratio."""
        if ratio <= 0:
            raise ModelError("ratio must be positive")
        return replace(self, lambda_c=self.lambda_p / ratio)


@dataclass(frozen=True)
class FieldConfig:
    delta_p: float = 0.0
    delta_c: float = 0.0
    omega_c: float = 0.0
    geometry: Geometry = Geometry.COUNTER

    def __post_init__(self) -> None:
        for name in ("delta_p", "delta_c", "omega_c"):
            object.__setattr__(self, name, _finite(name, getattr(self, name)))
        if self.omega_c < 0:
            raise ModelError("omega_c must be non-negative")
        object.__setattr__(self, "geometry", Geometry.parse(self.geometry))

    @property
    def sign(self) -> int:
        return self.geometry.sign


@dataclass(frozen=True)
class VaporEnsemble:
    temperature: float
    mass: float
    density: float = 0.0
    length: float = 0.05

    def __post_init__(self) -> None:
        for name in ("temperature", "mass", "density", "length"):
            object.__setattr__(self, name, _finite(name, getattr(self, name)))
        if self.temperature <= 0 or self.mass <= 0 or self.length <= 0:
            raise ModelError("temperature, mass and length must be positive")
        if self.density < 0:
            raise ModelError("density must be non-negative")

    @property
    def v_th(self) -> float:
        """Most probable speed sqrt(2 k_B T / m)."""
        return math.sqrt(2.0 * Boltzmann * self.temperature / self.mass)

    @classmethod
    def from_amu(cls, temperature: float, mass_amu: float, density: float = 0.0,
                 length: float = 0.05) -> "VaporEnsemble":
        return cls(temperature, mass_amu * atomic_mass, density, length)


@dataclass(frozen=True)
class DressedPair:
    lambda_plus: float
    lambda_minus: float
    gamma_plus: float
    gamma_minus: float


def _resolvent(delta_p, delta_c, omega_c, gamma_probe, gamma3, doppler_p=0.0, doppler_2ph=0.0):
    """1 / (D2 - Omega^2 / D3) in the pole-free product form.

    ``doppler_p`` and ``doppler_2ph`` are the one- and two-photon Doppler shifts
    subtracted from the probe and two-photon detunings.
    """
    d2 = delta_p - doppler_p + 0.5j * gamma_probe
    if omega_c == 0:
        # two-level Lorentzian, kept bit-identical to the bare form
        return 1.0 / d2
    d3 = delta_p + delta_c - doppler_2ph + 0.5j * gamma3
    return d3 / (d2 * d3 - omega_c**2)


def stationary_susceptibility(scheme: LadderScheme, fields: FieldConfig, density: float,
                              delta_p=None):
    """Linear probe susceptibility of atoms at rest.

    Returns chi in units of rad/s per metre of propagation (the field obeys
    dE/dz = i chi E). ``delta_p`` defaults to ``fields.delta_p`` and may be an
    array, in which case an array is returned.
    """
    density = _finite("density", density)
    if density < 0:
        raise ModelError("density must be non-negative")
    dp = fields.delta_p if delta_p is None else delta_p
    dp_arr = np.asarray(dp, dtype=float)
    if not np.all(np.isfinite(dp_arr)):
        raise ModelError("delta_p must be finite")
    with np.errstate(divide="ignore", invalid="ignore"):
        r = _resolvent(dp_arr, fields.delta_c, fields.omega_c, scheme.gamma_probe, scheme.gamma3)
    if not np.all(np.isfinite(r)):
        raise ModelError("singular susceptibility: zero denominator at the requested detuning")
    chi = -scheme.prefactor(density) * r
    return complex(chi) if np.ndim(chi) == 0 else chi


def dressed_matrix(scheme: LadderScheme, fields: FieldConfig, v_z: float = 0.0,
                   phase: complex = 1.0) -> np.ndarray:
    """Excited-state Hamiltonian (rad/s) of the control-coupled {|2>, |3>} pair.

    ``phase`` is the unimodular spatial factor exp(i k_c.r) on the coupling.
    """
    s = fields.sign
    h11 = -fields.delta_p + scheme.k_p * v_z
    h22 = -fields.delta_p - fields.delta_c + scheme.k_p * v_z + s * scheme.k_c * v_z
    off = fields.omega_c * phase
    return np.array([[h11, np.conj(off)], [off, h22]], dtype=complex)


def _eigen_arrays(scheme, fields, v_z):
    s = fields.sign
    v = np.asarray(v_z, dtype=float)
    detune = fields.delta_c - s * scheme.k_c * v
    centre = -fields.delta_p + scheme.k_p * v - 0.5 * detune
    half_gap = 0.5 * np.hypot(detune, 2.0 * fields.omega_c)
    return centre + half_gap, centre - half_gap


def crossing_linewidth(scheme: LadderScheme) -> float:
    """Dressed-state linewidth (1 - k_p/k_c) Gamma2 at the avoided crossing.

    Only meaningful for k_c > k_p; negative values are clipped to zero.
    """
    return max(0.0, (1.0 - scheme.k_p / scheme.k_c) * scheme.gamma2)


def dressed_eigenvalues(scheme: LadderScheme, fields: FieldConfig, v_z: float) -> DressedPair:
    """Eigenfrequencies of the velocity-shifted dressed pair, with crossing linewidths."""
    v_z = _finite("v_z", v_z)
    lp, lm = _eigen_arrays(scheme, fields, v_z)
    g = crossing_linewidth(scheme)
    return DressedPair(float(lp), float(lm), g, g)


@dataclass(frozen=True)
class EigenTrace:
    v_z: np.ndarray
    lambda_plus: np.ndarray
    lambda_minus: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return self.lambda_plus - self.lambda_minus

    def rows(self):
        return zip(self.v_z.tolist(), self.lambda_plus.tolist(), self.lambda_minus.tolist())


def eigen_trace(scheme: LadderScheme, fields: FieldConfig, v_grid: Sequence[float]) -> EigenTrace:
    v = np.asarray(v_grid, dtype=float)
    if v.ndim != 1 or not np.all(np.isfinite(v)):
        raise ModelError("v_grid must be a finite 1-D sequence")
    dv = np.diff(v)
    if v.size > 1 and not (np.all(dv > 0) or np.all(dv < 0)):
        raise ModelError("v_grid must be strictly monotone")
    lp, lm = _eigen_arrays(scheme, fields, v)
    return EigenTrace(v, lp, lm)


def crossing_velocity(scheme: LadderScheme, fields: FieldConfig) -> float:
    """Velocity where the bare dressed energies cross (Delta_c = s k_c v_z)."""
    return fields.delta_c / (fields.sign * scheme.k_c)
