"""DDMA-MIMO LFMCW intermediate-frequency synthesis and range-Doppler maps."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import CalibrationError, DimensionError, ParameterError
from .numerics import ComplexFrame, DomainTag, SeededRng, fft2d

HDR_SPAN_DB = 30.0


@dataclass(frozen=True)
class RadarConfig:
    f_c: float = 77e9
    k: float = 2.9e13
    T_p: float = 45.6e-6
    f_s: float = 30e6
    M: int = 256
    N: int = 512
    c: float = 3e8
    tx_count: int = 6
    subband_count: int = 8
    subband_assignment: tuple = (0, 1, 2, 3, 4, 5)

    def __post_init__(self):
        object.__setattr__(self, "subband_assignment", tuple(int(s) for s in self.subband_assignment))
        if self.tx_count > self.subband_count:
            raise ParameterError("tx_count must not exceed subband_count")
        if len(self.subband_assignment) != self.tx_count:
            raise ParameterError("need exactly one sub-band index per transmitter")
        if len(set(self.subband_assignment)) != self.tx_count:
            raise ParameterError("sub-band assignment indices must be distinct")
        if any(not 0 <= s < self.subband_count for s in self.subband_assignment):
            raise ParameterError("sub-band index out of range")
        if self.M <= 0 or self.N <= 0:
            raise ParameterError("M and N must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.M, self.N)

    @property
    def max_range(self) -> float:
        """Unambiguous range for complex sampling at f_s."""
        return self.f_s * self.c / (2.0 * self.k)

    @property
    def range_resolution(self) -> float:
        return self.max_range / self.N

    @property
    def velocity_resolution(self) -> float:
        return self.c / (2.0 * self.f_c * self.T_p * self.M)

    @property
    def subband_spacing(self) -> int:
        return self.M // self.subband_count

    def ongrid_range(self, range_bin: int) -> float:
        return range_bin * self.range_resolution

    def ongrid_velocity(self, doppler_bin: int) -> float:
        return doppler_bin * self.velocity_resolution


@dataclass(frozen=True)
class TargetSpec:
    R0: float
    V: float
    gamma: float
    amplitude: complex = 1.0


@dataclass(frozen=True)
class PeakPrediction:
    range_bin: int
    doppler_bins: tuple
    straddle_loss_db: float
    range_frac: float = 0.0
    doppler_frac: float = 0.0

    def cells(self) -> list[tuple[int, int]]:
        return [(d, self.range_bin) for d in self.doppler_bins]


def _check_range(cfg: RadarConfig, t: TargetSpec):
    if not 0.0 <= t.R0 <= cfg.max_range:
        raise ParameterError(f"R0={t.R0} outside [0, {cfg.max_range:.3f}] m")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _base_phase(cfg: RadarConfig, t: TargetSpec) -> np.ndarray:
    """exp(j2pi(f_c tau_m + k tau_m t_n)) without the DDMA code (M x N)."""
    m = np.arange(cfg.M, dtype=np.float64)
    n = np.arange(cfg.N, dtype=np.float64)
    tau = 2.0 * (t.R0 + m * t.V * cfg.T_p) / cfg.c
    # slow-time phase in cycles, split so each part stays well inside float range
    slow = (2.0 * cfg.f_c * t.R0 / cfg.c) % 1.0 + (m * (2.0 * cfg.f_c * t.V * cfg.T_p / cfg.c)) % 1.0
    fast_rate = cfg.k * tau / cfg.f_s
    cycles = slow[:, None] + fast_rate[:, None] * n[None, :]
    cycles -= np.floor(cycles)
    return np.exp(2j * np.pi * cycles)


def ddma_code(cfg: RadarConfig, q: int) -> np.ndarray:
    """Per-pulse phase ramp exp(j2pi m s_q / K) of transmitter ``q``."""
    if not 0 <= q < cfg.tx_count:
        raise ParameterError(f"tx index {q} outside [0, {cfg.tx_count})")
    m = np.arange(cfg.M)
    s = cfg.subband_assignment[q]
    return np.exp(2j * np.pi * ((m * s) % cfg.subband_count) / cfg.subband_count)


def ddma_sum_code(cfg: RadarConfig) -> np.ndarray:
    return sum(ddma_code(cfg, q) for q in range(cfg.tx_count))


def synth_ifs(cfg: RadarConfig, targets: Sequence[TargetSpec], q: int,
              rng: SeededRng | None = None) -> ComplexFrame:
    """IF signal of transmitter ``q`` for the given targets, noise free.

    ``rng`` is accepted for interface symmetry with noisy generators; the
    signal model itself is deterministic.
    """
    code = ddma_code(cfg, q)
    out = np.zeros(cfg.shape, dtype=np.complex128)
    for t in targets:
        _check_range(cfg, t)
        out += t.amplitude * _base_phase(cfg, t)
    out *= code[:, None]
    return ComplexFrame(out, DomainTag.IFS)


def synth_sum(cfg: RadarConfig, targets: Sequence[TargetSpec]) -> np.ndarray:
    """Sum over all transmitters of the IF signals.

    The DDMA code only depends on the pulse index, so the transmitter sum
    factors into one row weight applied to the shared target phase.
    """
    out = np.zeros(cfg.shape, dtype=np.complex128)
    for t in targets:
        _check_range(cfg, t)
        out += t.amplitude * _base_phase(cfg, t)
    out *= ddma_sum_code(cfg)[:, None]
    return out


def form_rdm(cfg: RadarConfig, per_tx_frames: Sequence[ComplexFrame]) -> ComplexFrame:
    total = np.zeros(cfg.shape, dtype=np.complex128)
    for f in per_tx_frames:
        if f.shape != cfg.shape:
            raise DimensionError(f"frame shape {f.shape} != configured {cfg.shape}")
        total += f.data
    return fft2d(ComplexFrame(total, DomainTag.IFS))


def render_rdm(cfg: RadarConfig, targets: Sequence[TargetSpec]) -> ComplexFrame:
    """Noise-free RDM of all targets across all transmitters."""
    return fft2d(ComplexFrame(synth_sum(cfg, targets), DomainTag.IFS))


def dft_cells(ifs: np.ndarray, cells: Sequence[tuple[int, int]]) -> np.ndarray:
    """Selected bins of the unnormalized 2D DFT, evaluated directly."""
    M, N = ifs.shape
    out = np.empty(len(cells), dtype=np.complex128)
    by_col: dict[int, list[int]] = {}
    for i, (_, col) in enumerate(cells):
        by_col.setdefault(col, []).append(i)
    m = np.arange(M)
    n = np.arange(N)
    for col, idx in by_col.items():
        row_spec = ifs @ np.exp(-2j * np.pi * ((n * col) % N) / N)
        for i in idx:
            d = cells[i][0]
            out[i] = np.exp(-2j * np.pi * ((m * d) % M) / M) @ row_spec
    return out


def _dirichlet_gain(frac_offset: float, n: int) -> float:
    if abs(frac_offset) < 1e-12:
        return 1.0
    return abs(math.sin(math.pi * frac_offset) / (n * math.sin(math.pi * frac_offset / n)))


def predict_peaks(cfg: RadarConfig, t: TargetSpec) -> PeakPrediction:
    range_pos = cfg.N * (2.0 * cfg.k * t.R0 / cfg.c) / cfg.f_s
    doppler_pos = cfg.M * (2.0 * t.V * cfg.f_c / cfg.c) * cfg.T_p
    rb = _round_half_up(range_pos)
    base = _round_half_up(doppler_pos)
    spacing = cfg.subband_spacing
    bins = tuple((base + s * spacing) % cfg.M for s in cfg.subband_assignment)
    dr = range_pos - rb
    dd = doppler_pos - base
    gain = _dirichlet_gain(dr, cfg.N) * _dirichlet_gain(dd, cfg.M)
    return PeakPrediction(rb % cfg.N, bins, -20.0 * math.log10(max(gain, 1e-300)), dr, dd)


def _unit_ifs(cfg: RadarConfig, t: TargetSpec) -> np.ndarray:
    _check_range(cfg, t)
    return _base_phase(cfg, t) * ddma_sum_code(cfg)[:, None]


def _amplitude_for(cfg: RadarConfig, t: TargetSpec, unit_ifs: np.ndarray, sigma2: float) -> complex:
    if not sigma2 > 0:
        raise ParameterError("sigma2 must be > 0")
    peaks = predict_peaks(cfg, t)
    p1 = float(np.max(np.abs(dft_cells(unit_ifs, peaks.cells())) ** 2))
    if not p1 > 0 or not math.isfinite(p1):
        raise CalibrationError(f"degenerate render for target {t} (peak power {p1})")
    noise_cell = cfg.M * cfg.N * sigma2
    return complex(math.sqrt(10.0 ** (t.gamma / 10.0) * noise_cell / p1))


def calibrate_amplitude(cfg: RadarConfig, t: TargetSpec, sigma2: float) -> complex:
    """Amplitude that puts the strongest predicted peak ``t.gamma`` dB above the
    per-cell RDM noise power ``M*N*sigma2``.

    The target is rendered once with unit amplitude; the peak power is read
    from the DFT bins at the predicted peak cells.
    """
    if not sigma2 > 0:
        raise ParameterError("sigma2 must be > 0")
    return _amplitude_for(cfg, t, _unit_ifs(cfg, t), sigma2)


def synth_calibrated(cfg: RadarConfig, targets: Sequence[TargetSpec], sigma2: float):
    """Transmitter-summed IF signal with every target calibrated to its SNR.

    Returns ``(ifs, calibrated_targets)``; each target is rendered only once.
    """
    out = np.zeros(cfg.shape, dtype=np.complex128)
    cal = []
    for t in targets:
        u = _unit_ifs(cfg, t)
        a = _amplitude_for(cfg, t, u, sigma2)
        out += a * u
        cal.append(replace(t, amplitude=a))
    return out, cal


def calibrated(cfg: RadarConfig, t: TargetSpec, sigma2: float) -> TargetSpec:
    return replace(t, amplitude=calibrate_amplitude(cfg, t, sigma2))


def noise_region_mask(cfg: RadarConfig, peaks: Sequence[PeakPrediction], guard: int = 3) -> np.ndarray:
    """Cells at least ``guard`` bins (Chebyshev, Doppler wrapped) from every peak."""
    mask = np.ones(cfg.shape, dtype=bool)
    for p in peaks:
        cols = slice(max(p.range_bin - guard, 0), min(p.range_bin + guard + 1, cfg.N))
        for d in p.doppler_bins:
            rows = np.arange(d - guard, d + guard + 1) % cfg.M
            mask[rows, cols] = False
    return mask


def measure_snr(rdm: ComplexFrame | np.ndarray, cell: tuple[int, int], noise_region,
                noise_rdm: ComplexFrame | np.ndarray | None = None) -> float:
    """10 log10 of the cell power over the mean power of ``noise_region``.

    ``noise_region`` is a boolean mask or an iterable of (row, col) cells.
    If ``noise_rdm`` is given the noise power is read from it instead, which
    lets a noise-free render be compared against a separate noise frame.
    """
    data = rdm.data if isinstance(rdm, ComplexFrame) else np.asarray(rdm)
    ndata = data if noise_rdm is None else (
        noise_rdm.data if isinstance(noise_rdm, ComplexFrame) else np.asarray(noise_rdm))
    region = np.asarray(noise_region)
    if region.dtype == bool:
        vals = ndata[region]
    else:
        region = region.reshape(-1, 2) if region.size else region
        vals = ndata[tuple(region.T)] if region.size else np.empty(0)
    if vals.size == 0:
        raise ParameterError("noise region is empty")
    pn = float(np.mean(np.abs(vals) ** 2))
    ps = float(abs(data[cell]) ** 2)
    return 10.0 * math.log10(ps / pn)


def snr_span_db(gammas: Sequence[float]) -> float:
    return float(max(gammas) - min(gammas)) if len(gammas) else 0.0


def is_hdr(gammas: Sequence[float]) -> bool:
    return snr_span_db(gammas) > HDR_SPAN_DB
