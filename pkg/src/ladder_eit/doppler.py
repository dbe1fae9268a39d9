"""Maxwell-Boltzmann averaging of the ladder susceptibility.

For collinear beams the transverse velocity integrals are unity, so the
average is one-dimensional in u = v_z / v_th with weight exp(-u^2)/sqrt(pi).
In u the integrand is a rational function,

    g(u) = (D3 - b u) / ((D2 - a u)(D3 - b u) - Omega_c^2),

with a = k_p v_th and b = (k_p + s k_c) v_th, so its two poles are known in
closed form. The default rule places Gauss-Legendre panels graded towards
those poles; Gauss-Hermite and the adaptive trapezoid are kept as
alternatives and cross-checks.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_hermite

from .model import FieldConfig, LadderScheme, ModelError, VaporEnsemble, _resolvent

SQRT_PI = math.sqrt(math.pi)
_HERMITE_NODE_CAP = 12800
_PANEL_STEP = 1.0
_GRADING = 4.0
_MAX_GRADING_LEVELS = 64


class ConvergenceError(ArithmeticError):
    """Quadrature failed to meet its tolerance within the refinement cap."""

    def __init__(self, message: str, achieved: float, value=None):
        super().__init__(f"{message} (achieved relative error {achieved:.3g})")
        self.message = message
        self.achieved = achieved
        self.value = value


class Rule(str, enum.Enum):
    POLE_PANELS = "pole_panels"
    GAUSS_HERMITE = "gauss_hermite"
    ADAPTIVE_TRAPEZOID = "adaptive_trapezoid"


@dataclass(frozen=True)
class QuadratureSpec:
    """Discretisation of the velocity average.

    ``node_count`` is the starting node count for Gauss-Hermite and the
    starting interval count for the trapezoid; the panel rule uses fixed
    12/24-point panels and ignores it. ``velocity_cutoff`` (in units of v_th)
    truncates the trapezoid and panel rules. Each rule refines at most
    ``max_doublings`` times before raising :class:`ConvergenceError`.
    """

    rule: Rule = Rule.POLE_PANELS
    node_count: int = 200
    velocity_cutoff: float = 8.0
    rel_tol: float = 1e-8
    max_doublings: int = 8

    def __post_init__(self) -> None:
        object.__setattr__(self, "rule", Rule(self.rule))
        if int(self.node_count) != self.node_count or self.node_count < 8:
            raise ModelError("node_count must be an integer >= 8")
        if not (0 < self.rel_tol <= 1e-2):
            raise ModelError("rel_tol must lie in (0, 1e-2]")
        if not self.velocity_cutoff >= 4:
            raise ModelError("velocity_cutoff must be >= 4 (units of v_th)")
        if self.max_doublings < 0:
            raise ModelError("max_doublings must be non-negative")


@dataclass(frozen=True)
class _Coefficients:
    a: float
    b: float
    delta_c: float
    omega_c: float
    gamma_probe: float
    gamma3: float

    @classmethod
    def build(cls, scheme: LadderScheme, fields: FieldConfig, v_th: float) -> "_Coefficients":
        return cls(
            a=scheme.k_p * v_th,
            b=(scheme.k_p + fields.sign * scheme.k_c) * v_th,
            delta_c=fields.delta_c,
            omega_c=fields.omega_c,
            gamma_probe=scheme.gamma_probe,
            gamma3=scheme.gamma3,
        )

    def integrand(self, dp: np.ndarray, u: np.ndarray) -> np.ndarray:
        """g(u) for detunings ``dp`` (column) and nodes ``u`` (broadcast)."""
        return _resolvent(dp, self.delta_c, self.omega_c, self.gamma_probe, self.gamma3,
                          doppler_p=self.a * u, doppler_2ph=self.b * u)

    def poles(self, dp: np.ndarray) -> np.ndarray:
        """Complex poles of g in the u-plane, shape (len(dp), 2); NaN where absent."""
        d2 = dp + 0.5j * self.gamma_probe
        out = np.full((dp.size, 2), np.nan + 0j)
        out[:, 0] = d2 / self.a
        if self.omega_c == 0:
            return out
        d3 = dp + self.delta_c + 0.5j * self.gamma3
        with np.errstate(divide="ignore", invalid="ignore"):
            if abs(self.b) <= 1e-12 * self.a:
                # linear in u: pole where D2 - a u = Omega^2 / D3
                out[:, 0] = (d2 - self.omega_c**2 / d3) / self.a
                return out
            A = self.a * self.b
            B = -(self.a * d3 + self.b * d2)
            C = d2 * d3 - self.omega_c**2
            root = np.sqrt(B * B - 4 * A * C)
            flip = np.real(np.conj(B) * root) < 0
            root = np.where(flip, -root, root)
            q = -0.5 * (B + root)
            out[:, 0] = q / A
            out[:, 1] = np.where(q != 0, C / q, q / A)
        return out


@lru_cache(maxsize=16)
def _hermite(n: int):
    x, w = roots_hermite(n)
    return x, w / SQRT_PI


@lru_cache(maxsize=8)
def _legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def _scale(values: np.ndarray) -> np.ndarray:
    mag = np.abs(values)
    return np.maximum(mag, 1e-6 * (mag.max() if mag.size else 0.0))


def _gauss_hermite(co: _Coefficients, dp: np.ndarray, quad: QuadratureSpec) -> np.ndarray:
    n = quad.node_count
    x, w = _hermite(n)
    prev = co.integrand(dp[:, None], x[None, :]) @ w
    err = np.inf
    for _ in range(quad.max_doublings):
        n *= 2
        if n > _HERMITE_NODE_CAP:
            break
        x, w = _hermite(n)
        cur = co.integrand(dp[:, None], x[None, :]) @ w
        err = float(np.max(np.abs(cur - prev) / _scale(cur)))
        if err <= quad.rel_tol:
            return cur
        prev = cur
    raise ConvergenceError("Gauss-Hermite quadrature did not converge", err, prev)


def _trapezoid(co: _Coefficients, dp: np.ndarray, quad: QuadratureSpec) -> np.ndarray:
    U = quad.velocity_cutoff
    n = quad.node_count
    u = np.linspace(-U, U, n + 1)
    weight = np.exp(-u * u) / SQRT_PI
    f = co.integrand(dp[:, None], u[None, :]) * weight
    h = 2 * U / n
    total = h * (f.sum(axis=1) - 0.5 * (f[:, 0] + f[:, -1]))
    result = total.copy()
    active = np.arange(dp.size)
    err = np.inf
    for _ in range(quad.max_doublings):
        mids = -U + h * (np.arange(n) + 0.5)
        w_mid = np.exp(-mids * mids) / SQRT_PI
        new = 0.5 * total + 0.5 * h * (co.integrand(dp[active, None], mids[None, :]) @ w_mid)
        n *= 2
        h *= 0.5
        delta = np.abs(new - total) / _scale(new)
        result[active] = new
        done = delta <= quad.rel_tol
        err = float(delta.max())
        active, total = active[~done], new[~done]
        if active.size == 0:
            return result
    raise ConvergenceError("adaptive trapezoid did not converge", err, result)


def _panel_breaks(co: _Coefficients, dp: np.ndarray, U: float) -> np.ndarray:
    poles = co.poles(dp)
    uniform = np.arange(-U, U + 0.5 * _PANEL_STEP, _PANEL_STEP)
    pieces = [np.broadcast_to(uniform, (dp.size, uniform.size))]
    for j in range(poles.shape[1]):
        p = poles[:, j]
        ok = np.isfinite(p)
        x = np.where(ok, p.real, 0.0)
        d = np.where(ok, np.maximum(np.abs(p.imag), 1e-15 * U), 2 * U)
        levels = int(np.clip(np.ceil(math.log(4 * U / d.min(), _GRADING)), 1, _MAX_GRADING_LEVELS))
        offs = d[:, None] * _GRADING ** np.arange(levels)[None, :]
        pieces += [x[:, None], x[:, None] + offs, x[:, None] - offs]
    breaks = np.clip(np.concatenate(pieces, axis=1), -U, U)
    return np.sort(breaks, axis=1)


def _panel_sum(co: _Coefficients, dp: np.ndarray, breaks: np.ndarray, order: int) -> np.ndarray:
    x, w = _legendre(order)
    lo, hi = breaks[:, :-1], breaks[:, 1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    u = mid[:, :, None] + half[:, :, None] * x[None, None, :]
    f = co.integrand(dp[:, None, None], u) * np.exp(-u * u) / SQRT_PI
    return np.einsum("rpk,k,rp->r", f, w, half)


def _pole_panels(co: _Coefficients, dp: np.ndarray, quad: QuadratureSpec) -> np.ndarray:
    breaks = _panel_breaks(co, dp, quad.velocity_cutoff)
    result = np.empty(dp.size, dtype=complex)
    active = np.arange(dp.size)
    err = np.inf
    for level in range(quad.max_doublings + 1):
        coarse = _panel_sum(co, dp[active], breaks, 12)
        fine = _panel_sum(co, dp[active], breaks, 24)
        result[active] = fine
        delta = np.abs(fine - coarse) / _scale(fine)
        err = float(delta.max())
        done = delta <= quad.rel_tol
        active, breaks = active[~done], breaks[~done]
        if active.size == 0:
            return result
        if level < quad.max_doublings:
            mids = 0.5 * (breaks[:, 1:] + breaks[:, :-1])
            breaks = np.sort(np.concatenate([breaks, mids], axis=1), axis=1)
    raise ConvergenceError("pole-panel quadrature did not converge", err, result)


_RULES = {
    Rule.POLE_PANELS: _pole_panels,
    Rule.GAUSS_HERMITE: _gauss_hermite,
    Rule.ADAPTIVE_TRAPEZOID: _trapezoid,
}


def velocity_average(scheme: LadderScheme, fields: FieldConfig, v_th: float,
                     delta_p, quad: QuadratureSpec | None = None, threads: int = 1,
                     chunk: int = 256) -> np.ndarray:
    """<g> over the 1-D Maxwell-Boltzmann distribution, without the prefactor."""
    quad = quad or QuadratureSpec()
    dp = np.atleast_1d(np.asarray(delta_p, dtype=float))
    if not np.all(np.isfinite(dp)):
        raise ModelError("delta_p must be finite")
    co = _Coefficients.build(scheme, fields, v_th)
    rule = _RULES[quad.rule]
    blocks = [dp[i:i + chunk] for i in range(0, dp.size, chunk)]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda blk: rule(co, blk, quad), blocks))
    else:
        parts = [rule(co, blk, quad) for blk in blocks]
    return np.concatenate(parts) if parts else np.empty(0, dtype=complex)


def doppler_susceptibility(scheme: LadderScheme, fields: FieldConfig, vapor: VaporEnsemble,
                           quad: QuadratureSpec | None = None, delta_p=None, threads: int = 1):
    """Thermally averaged susceptibility (rad/s per metre).

    ``delta_p`` defaults to ``fields.delta_p``; scalar input gives a complex
    scalar, array input an array.
    """
    dp = fields.delta_p if delta_p is None else delta_p
    avg = velocity_average(scheme, fields, vapor.v_th, dp, quad, threads=threads)
    chi = -scheme.prefactor(vapor.density) * avg
    return complex(chi[0]) if np.ndim(dp) == 0 else chi


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: complex
    stderr_real: float
    stderr_imag: float
    n_samples: int

    def within(self, reference: complex, n_sigma: float = 3.0) -> bool:
        d = self.value - reference
        return (abs(d.real) <= n_sigma * self.stderr_real
                and abs(d.imag) <= n_sigma * self.stderr_imag)


def doppler_susceptibility_mc(scheme: LadderScheme, fields: FieldConfig, vapor: VaporEnsemble,
                              n_samples: int = 10**6, seed: int = 0, delta_p=None,
                              chunk: int = 1 << 16) -> MonteCarloEstimate:
    """Monte-Carlo average over the full 3-D Maxwell-Boltzmann distribution.

    Velocities are drawn per chunk from Philox streams spawned off ``seed``,
    so the estimate does not depend on how chunks are scheduled.
    """
    if n_samples < 10**4:
        raise ModelError("n_samples must be at least 1e4")
    dp = fields.delta_p if delta_p is None else float(delta_p)
    sigma = vapor.v_th / math.sqrt(2.0)
    kp_vec = np.array([0.0, 0.0, scheme.k_p])
    kc_vec = np.array([0.0, 0.0, fields.sign * scheme.k_c])
    n_chunks = -(-n_samples // chunk)
    streams = np.random.SeedSequence(seed).spawn(n_chunks)
    s1 = 0j
    s2r = s2i = 0.0
    for i, ss in enumerate(streams):
        m = min(chunk, n_samples - i * chunk)
        v = np.random.Generator(np.random.Philox(ss)).normal(0.0, sigma, size=(m, 3))
        shift_p = v @ kp_vec
        shift_2ph = v @ (kp_vec + kc_vec)
        g = _resolvent(dp, fields.delta_c, fields.omega_c, scheme.gamma_probe, scheme.gamma3,
                       doppler_p=shift_p, doppler_2ph=shift_2ph)
        s1 += g.sum()
        s2r += float(np.sum(g.real**2))
        s2i += float(np.sum(g.imag**2))
    n = n_samples
    mean = s1 / n
    var_r = max(s2r / n - mean.real**2, 0.0) * n / (n - 1)
    var_i = max(s2i / n - mean.imag**2, 0.0) * n / (n - 1)
    pref = -scheme.prefactor(vapor.density)
    return MonteCarloEstimate(
        value=complex(pref * mean),
        stderr_real=abs(pref) * math.sqrt(var_r / n),
        stderr_imag=abs(pref) * math.sqrt(var_i / n),
        n_samples=n,
    )


def voigt_susceptibility(scheme: LadderScheme, vapor: VaporEnsemble, delta_p):
    """Two-level (Omega_c = 0) thermal susceptibility via the Faddeeva function.

    Independent closed form used to check the quadrature:
    chi = i sqrt(pi) * pref / (k_p v_th) * w((Delta_p + i Gamma'/2) / (k_p v_th)).
    """
    from scipy.special import wofz

    a = scheme.k_p * vapor.v_th
    z = (np.asarray(delta_p, dtype=float) + 0.5j * scheme.gamma_probe) / a
    return 1j * SQRT_PI * scheme.prefactor(vapor.density) / a * wofz(z)
