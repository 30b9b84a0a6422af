"""Complex frames, 2D DFT, counter-based RNG streams and MAC auditing."""
from __future__ import annotations

import enum
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError, ParameterError, ScopeError

_MASK64 = (1 << 64) - 1


class DomainTag(enum.IntEnum):
    IFS = 0
    RDM = 1
    PROB_MAP = 2


@dataclass(frozen=True, eq=False)
class ComplexFrame:
    """Immutable M x N complex matrix (rows = pulses/Doppler, cols = range)."""

    data: np.ndarray
    domain_tag: DomainTag = DomainTag.IFS

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.complex128, copy=True)
        if arr.ndim != 2:
            raise DimensionError(f"frame must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("frame contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "domain_tag", DomainTag(self.domain_tag))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def with_data(self, data, domain_tag=None) -> "ComplexFrame":
        return ComplexFrame(data, self.domain_tag if domain_tag is None else domain_tag)

    def __eq__(self, other):
        if not isinstance(other, ComplexFrame):
            return NotImplemented
        return (self.domain_tag == other.domain_tag
                and self.shape == other.shape
                and np.array_equal(self.data, other.data))


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _exact_dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    # integer reduction keeps the twiddle angles exact for any size
    return np.exp(-2j * np.pi * ((np.outer(k, k) % n) / n))


def fft2d(frame: ComplexFrame, exact: bool = False) -> ComplexFrame:
    """Unnormalized forward 2D DFT (negative exponent).

    The fast path requires power-of-two dimensions. ``exact=True`` selects the
    matrix-product DFT, which accepts any size.
    """
    tag = DomainTag.RDM if frame.domain_tag == DomainTag.IFS else frame.domain_tag
    if exact:
        fm = _exact_dft_matrix(frame.rows)
        fn = _exact_dft_matrix(frame.cols)
        return ComplexFrame(fm @ frame.data @ fn.T, tag)
    if not (_is_pow2(frame.rows) and _is_pow2(frame.cols)):
        raise DimensionError(
            f"fft2d needs power-of-two dimensions, got {frame.rows}x{frame.cols}; "
            "pass exact=True for the direct DFT")
    return ComplexFrame(np.fft.fft2(frame.data), tag)


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class SeededRng:
    """A (seed, stream_id) key for a Philox counter-based stream.

    Every call to :meth:`generator` restarts the stream at counter zero, so a
    given key always yields the same draws regardless of which thread or in
    which order the streams are consumed.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *tags: int) -> "SeededRng":
        sid = self.stream_id
        for t in tags:
            sid = splitmix64(sid ^ splitmix64(int(t) & _MASK64))
        return SeededRng(self.seed, sid)


def complex_gaussian_noise(rng: SeededRng, rows: int, cols: int, sigma2: float,
                           domain_tag: DomainTag = DomainTag.IFS) -> ComplexFrame:
    if not sigma2 > 0:
        raise ParameterError(f"sigma2 must be > 0, got {sigma2}")
    g = rng.generator()
    parts = g.standard_normal((2, rows, cols))
    z = (parts[0] + 1j * parts[1]) * np.sqrt(sigma2 / 2.0)
    return ComplexFrame(z, domain_tag)


# --------------------------------------------------------------------------
# operation counting

@dataclass
class OpCounter:
    mul_adds: int = 0
    comparisons: int = 0
    transcendental_calls: int = 0

    def __add__(self, other: "OpCounter") -> "OpCounter":
        return OpCounter(self.mul_adds + other.mul_adds,
                         self.comparisons + other.comparisons,
                         self.transcendental_calls + other.transcendental_calls)

    def __sub__(self, other: "OpCounter") -> "OpCounter":
        return OpCounter(self.mul_adds - other.mul_adds,
                         self.comparisons - other.comparisons,
                         self.transcendental_calls - other.transcendental_calls)

    def copy(self) -> "OpCounter":
        return OpCounter(self.mul_adds, self.comparisons, self.transcendental_calls)


@dataclass
class _Scope:
    counter: OpCounter
    delta: OpCounter = field(default_factory=OpCounter)


_local = threading.local()


def _scopes() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def counting_active() -> bool:
    return bool(_scopes())


def tally(mul_adds: int = 0, comparisons: int = 0, transcendental: int = 0) -> None:
    for s in _scopes():
        s.delta.mul_adds += mul_adds
        s.delta.comparisons += comparisons
        s.delta.transcendental_calls += transcendental


@contextmanager
def counting(counter: OpCounter):
    """Context manager form of :func:`count_scope`; yields the live delta."""
    stack = _scopes()
    if any(s.counter is counter for s in stack):
        raise ScopeError("counter is already active in an enclosing scope")
    scope = _Scope(counter)
    stack.append(scope)
    try:
        yield scope.delta
    finally:
        stack.pop()
        counter.mul_adds += scope.delta.mul_adds
        counter.comparisons += scope.delta.comparisons
        counter.transcendental_calls += scope.delta.transcendental_calls


def count_scope(counter: OpCounter, op: Callable[[], object]) -> OpCounter:
    """Run ``op`` with auditing enabled and return the counts it produced.

    The delta is also accumulated into ``counter``. Nested scopes credit
    every enclosing scope, so totals compose additively; reusing a counter
    that is already active raises :class:`ScopeError`.
    """
    with counting(counter) as delta:
        op()
    return delta.copy()


class audit:
    """Elementwise primitives that report their cost to active scopes.

    One fused multiply-add, lone multiply, lone add or add-then-divide is one
    ``mul_adds`` unit; sqrt and log1p are transcendental calls.
    """

    @staticmethod
    def mul(a, b):
        out = np.multiply(a, b)
        tally(mul_adds=np.size(out))
        return out

    @staticmethod
    def add(a, b):
        out = np.add(a, b)
        tally(mul_adds=np.size(out))
        return out

    @staticmethod
    def fma(a, b, c):
        out = np.multiply(a, b) + c
        tally(mul_adds=np.size(out))
        return out

    @staticmethod
    def div_add(t, r, eps):
        """t / (r + eps)"""
        out = t / (r + eps)
        tally(mul_adds=np.size(out))
        return out

    @staticmethod
    def sqrt(a):
        out = np.sqrt(a)
        tally(transcendental=np.size(out))
        return out

    @staticmethod
    def log1p(a):
        out = np.log1p(a)
        tally(transcendental=np.size(out))
        return out

    @staticmethod
    def greater(a, w):
        out = (np.asarray(a) > w).astype(np.float64)
        tally(comparisons=np.size(out))
        return out


def hadamard(a, b):
    """Audited elementwise product."""
    return audit.mul(a, b)
