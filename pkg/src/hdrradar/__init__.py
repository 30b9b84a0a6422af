"""HDR radar detection toolkit.

Synthesizes DDMA-MIMO FMCW range-Doppler maps, compresses their dynamic
range with a phase-preserving log-connect block, and compares a small
complex-valued detection network against CA-CFAR.
"""
from .errors import HdrRadarError
from .kernels import BACKEND
from .lcb import LcbParams, lcb_array, lcb_forward
from .numerics import ComplexFrame, DomainTag, SeededRng, fft2d
from .signal_model import RadarConfig, TargetSpec, predict_peaks, render_rdm

__version__ = "0.1.0"

__all__ = ["BACKEND", "ComplexFrame", "DomainTag", "HdrRadarError", "LcbParams", "RadarConfig",
           "SeededRng", "TargetSpec", "fft2d", "lcb_array", "lcb_forward", "predict_peaks", "render_rdm"]
