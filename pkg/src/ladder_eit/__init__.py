"""Doppler-averaged ladder EIT: susceptibility, window analysis and fitting."""

__version__ = "0.1.0"

from .model import (DressedPair, FieldConfig, Geometry, LadderScheme, ModelError,  # noqa: E402
                    VaporEnsemble, dressed_eigenvalues, eigen_trace, stationary_susceptibility)
from .doppler import (ConvergenceError, QuadratureSpec, Rule, doppler_susceptibility,  # noqa: E402
                      doppler_susceptibility_mc, voigt_susceptibility)
from .spectrum import (ComplexSpectrum, LineStack, WindowReport, extract_window,  # noqa: E402
                       ratio_sweep, transmission_spectrum, width_formula)

__all__ = [
    "ComplexSpectrum", "ConvergenceError", "DressedPair", "FieldConfig", "Geometry",
    "LadderScheme", "LineStack", "ModelError", "QuadratureSpec", "Rule", "VaporEnsemble",
    "WindowReport", "doppler_susceptibility", "doppler_susceptibility_mc", "dressed_eigenvalues",
    "eigen_trace", "extract_window", "ratio_sweep", "stationary_susceptibility",
    "transmission_spectrum", "voigt_susceptibility", "width_formula",
]
