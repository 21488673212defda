"""Tracer transport in Gaussian random velocity fields with OU time dependence.

Submodules: :mod:`spectrum_core`, :mod:`noise_modes`, :mod:`velocity_field`,
:mod:`tracer`, :mod:`diagrams`, :mod:`limit_processes`, :mod:`stats` and
:mod:`cli`.
"""
from .spectrum_core import ParameterError, SpectrumParams, scaling_exponents

__version__ = "0.1.0"
__all__ = ["ParameterError", "SpectrumParams", "scaling_exponents", "__version__"]
