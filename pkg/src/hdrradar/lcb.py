"""Logarithmic connect function and its branch-free block form.

Magnitudes at or below the connection position ``w`` pass through; above it
the magnitude is replaced by ``w + ln(1 - w + |x|)`` while the phase is kept.
The two pieces meet with matching value and slope at ``|x| = w``.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, ParameterError
from .numerics import ComplexFrame, OpCounter, audit, counting


@dataclass(frozen=True)
class LcbParams:
    w: float
    epsilon: float = 1e-12

    def __post_init__(self):
        if not (self.w > 0 and math.isfinite(self.w)):
            raise ParameterError(f"w must be a positive finite amplitude, got {self.w}")
        if not (0 < self.epsilon <= 1e-6):
            raise ParameterError(f"epsilon must lie in (0, 1e-6], got {self.epsilon}")

    @classmethod
    def from_db(cls, level_db: float, noise_amplitude: float = 1.0, epsilon: float = 1e-12):
        """Place the junction ``level_db`` above a noise floor of the given RMS amplitude."""
        return cls(w_from_db(level_db, noise_amplitude), epsilon)


def w_from_db(level_db: float, noise_amplitude: float = 1.0) -> float:
    return float(noise_amplitude) * 10.0 ** (level_db / 20.0)


def lc_scalar(x: complex, p: LcbParams) -> complex:
    r = abs(x)
    if r <= p.w:
        return complex(x)
    return cmath.rect(p.w + math.log1p(r - p.w), cmath.phase(x))


def lc_magnitude(r, w):
    """Output magnitude as a function of input magnitude (vectorized)."""
    r = np.asarray(r, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        return np.where(r > w, w + np.log1p(np.maximum(r, w) - w), r)


def _forward_audited(x: np.ndarray, w: float, eps: float) -> np.ndarray:
    # Same steps as the production kernel, scheduled as fused multiply-adds so
    # that each counted unit is one multiply plus at most one add.
    xr, xi = x.real, x.imag
    r = audit.sqrt(audit.fma(xi, xi, audit.mul(xr, xr)))        # step 1: 2
    m = audit.greater(r, w)                                       # step 2
    p = audit.fma(m, r, audit.fma(m, -w, w))                      # step 3: 2
    lg = audit.add(audit.log1p(audit.add(p, -w)), w)              # step 4: 2
    t = audit.fma(lg, m, audit.fma(r, -m, r))                     # step 5: 2
    s = audit.div_add(t, r, eps)                                  # step 6: 1
    return audit.mul(s, xr) + 1j * audit.mul(s, xi)               # step 7: 2


def lcb_array(x, p: LcbParams) -> np.ndarray:
    return kernels.lcb_forward(np.asarray(x, dtype=np.complex128), p.w, p.epsilon)


def lcb_forward(X: ComplexFrame, p: LcbParams, counter: OpCounter | None = None) -> ComplexFrame:
    """Apply the block to every element of ``X``.

    With a ``counter`` the audited path runs and its operation counts are
    added to the counter; otherwise the uncounted kernel backend is used.
    """
    if counter is None:
        return X.with_data(lcb_array(X.data, p))
    with counting(counter):
        out = _forward_audited(X.data, p.w, p.epsilon)
    return X.with_data(out)


def lcb_backward_array(x, upstream, p: LcbParams) -> np.ndarray:
    return kernels.lcb_backward(np.asarray(x, dtype=np.complex128),
                                np.asarray(upstream, dtype=np.complex128), p.w, p.epsilon)


def lcb_backward(X: ComplexFrame, upstream_grad, p: LcbParams) -> np.ndarray:
    """Gradient w.r.t. the forward input, real and imaginary parts treated as
    independent reals.

    ``upstream_grad`` and the result pack (dL/dRe, dL/dIm) as ``re + 1j*im``.
    """
    g = upstream_grad.data if isinstance(upstream_grad, ComplexFrame) else upstream_grad
    if np.shape(g) != X.shape:
        raise DimensionError(f"gradient shape {np.shape(g)} != input shape {X.shape}")
    return lcb_backward_array(X.data, g, p)


def local_jacobian(x: complex, p: LcbParams) -> np.ndarray:
    """2x2 real Jacobian d(o_r, o_i)/d(x_r, x_i) at a single point."""
    cols = []
    for e in (1.0, 1j):
        g = lcb_backward_array(np.array([x]), np.array([e]), p)[0]
        cols.append((g.real, g.imag))
    # a unit upstream vector selects one row of the Jacobian
    return np.array(cols)
