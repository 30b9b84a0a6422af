"""Dual hybrid dataset construction.

Targets are drawn from a two-branch SNR mixture (strong above ``w_db``,
non-strong below), placed uniformly in range and velocity, calibrated to
their requested per-peak SNR and superimposed on white Gaussian noise.
"""
from __future__ import annotations

import csv
import enum
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import config as kv
from . import frame_io
from .errors import ChecksumError, ConfigError, FormatError, ParameterError, TruncatedFile, VersionMismatch
from .numerics import ComplexFrame, DomainTag, SeededRng, complex_gaussian_noise
from .signal_model import PeakPrediction, RadarConfig, TargetSpec, predict_peaks, synth_calibrated

MANIFEST_VERSION = 1


class Mode(enum.Enum):
    MM = "MM"
    NTM = "NTM"


class Split(enum.IntEnum):
    TRAIN = 1
    VAL = 2
    EVAL = 3
    NOISE = 4
    SWEEP = 5


@dataclass(frozen=True)
class DhdcParams:
    P_strong: float = 0.7
    w_db: float = 14.0
    gamma_min: float = 6.0
    gamma_max: float = 60.0
    R_max: float = 150.0
    V_min: float = -20.0
    V_max: float = 20.0
    n_min: int = 1
    n_max: int = 10
    frames: int = 300
    seed: int = 0
    # "prose": P_strong weights the strong branch; "equation": it weights gamma < w_db
    weight_reading: str = "prose"

    def __post_init__(self):
        if not 0.0 <= self.P_strong <= 1.0:
            raise ParameterError("P_strong must lie in [0, 1]")
        if not self.gamma_min < self.w_db < self.gamma_max:
            raise ParameterError("need gamma_min < w_db < gamma_max")
        if not self.V_min < self.V_max:
            raise ParameterError("need V_min < V_max")
        if not 1 <= self.n_min <= self.n_max:
            raise ParameterError("need 1 <= n_min <= n_max")
        if self.R_max <= 0:
            raise ParameterError("R_max must be positive")
        if self.frames < 0:
            raise ParameterError("frames must be >= 0")
        if self.weight_reading not in ("prose", "equation"):
            raise ParameterError("weight_reading must be 'prose' or 'equation'")

    @property
    def strong_probability(self) -> float:
        return self.P_strong if self.weight_reading == "prose" else 1.0 - self.P_strong


@dataclass(frozen=True)
class TargetTruth:
    spec: TargetSpec
    peaks: PeakPrediction
    is_strong: bool


@dataclass(eq=False)
class LabeledFrame:
    rdm: ComplexFrame
    truth: list
    mask: np.ndarray
    mode_tag: Mode = Mode.MM

    def __eq__(self, other):
        if not isinstance(other, LabeledFrame):
            return NotImplemented
        return (self.rdm == other.rdm and self.truth == other.truth
                and np.array_equal(self.mask, other.mask) and self.mode_tag == other.mode_tag)


def _gen(rng) -> np.random.Generator:
    return rng.generator() if isinstance(rng, SeededRng) else rng


def sample_gamma(p: DhdcParams, rng, size=None, mode: Mode = Mode.MM):
    """Draw target SNRs in dB.

    ``rng`` is a :class:`SeededRng` (fresh stream) or a numpy ``Generator``
    (continues its stream). NTM mode draws from the non-strong branch only.
    """
    g = _gen(rng)
    shape = () if size is None else size
    u = g.random(shape)
    weak = g.uniform(p.gamma_min, p.w_db, shape)
    if mode == Mode.NTM:
        out = weak
    else:
        strong = g.uniform(p.w_db, p.gamma_max, shape)
        out = np.where(u < p.strong_probability, strong, weak)
    return float(out) if size is None else out


def sample_scenario(p: DhdcParams, rng, mode: Mode = Mode.MM) -> list[TargetSpec]:
    g = _gen(rng)
    n = int(g.integers(p.n_min, p.n_max + 1))
    R = g.uniform(0.0, p.R_max, n)
    V = g.uniform(p.V_min, p.V_max, n)
    gam = sample_gamma(p, g, n, mode)
    return [TargetSpec(float(r), float(v), float(y)) for r, v, y in zip(R, V, gam)]


def truth_for(cfg: RadarConfig, spec: TargetSpec, w_db: float) -> TargetTruth:
    return TargetTruth(spec, predict_peaks(cfg, spec), bool(spec.gamma >= w_db))


def truth_mask(cfg: RadarConfig, truth: Sequence[TargetTruth]) -> np.ndarray:
    mask = np.zeros(cfg.shape, dtype=bool)
    for t in truth:
        for d, r in t.peaks.cells():
            mask[d, r] = True
    return mask


def build_frame(cfg: RadarConfig, specs: Sequence[TargetSpec], sigma2: float, rng: SeededRng,
                mode: Mode = Mode.MM, w_db: float = 14.0, noise_domain: str = "rdm",
                add_noise: bool = True) -> LabeledFrame:
    """Calibrate, render and label one frame.

    Noise defaults to the RDM domain with per-cell power ``M*N*sigma2``;
    ``noise_domain="ifs"`` adds ``sigma2`` noise before the FFT instead,
    which is identical in distribution.
    """
    ifs, cal = synth_calibrated(cfg, specs, sigma2)
    if add_noise and noise_domain == "ifs":
        ifs = ifs + complex_gaussian_noise(rng, cfg.M, cfg.N, sigma2).data
    rdm = np.fft.fft2(ifs)
    if add_noise and noise_domain == "rdm":
        rdm = rdm + complex_gaussian_noise(rng, cfg.M, cfg.N, cfg.M * cfg.N * sigma2).data
    elif noise_domain not in ("rdm", "ifs"):
        raise ParameterError(f"noise_domain must be 'rdm' or 'ifs', got {noise_domain!r}")
    truth = [truth_for(cfg, s, w_db) for s in cal]
    return LabeledFrame(ComplexFrame(rdm, DomainTag.RDM), truth, truth_mask(cfg, truth), mode)


# --------------------------------------------------------------------------
# dataset generation

@dataclass
class DatasetManifest:
    radar: RadarConfig = field(default_factory=RadarConfig)
    dhdc: DhdcParams = field(default_factory=DhdcParams)
    mode: Mode = Mode.MM
    split: str = "train"
    stream: int = int(Split.TRAIN)
    sigma2: float = 1.0
    noise_domain: str = "rdm"
    lcb_binding: str = "w = 10^(w_db/20) x noise RMS amplitude of the normalized RDM"
    version: int = MANIFEST_VERSION
    files: list = field(default_factory=list)  # (name, byte length, crc32, n_targets, labels crc32)
    extra: dict = field(default_factory=dict)

    def frame_rng(self, index: int) -> SeededRng:
        return SeededRng(self.dhdc.seed).child(self.stream, index)

    def to_text(self) -> str:
        cp = kv.new_parser()
        cp["dataset"] = {
            "format": "RDF1",
            "version": str(self.version),
            "mode": self.mode.value,
            "split": self.split,
            "stream": str(self.stream),
            "sigma2": repr(float(self.sigma2)),
            "noise_domain": self.noise_domain,
            "lcb_binding": self.lcb_binding,
            "frame_count": str(len(self.files)),
        }
        cp["radar"] = kv.dataclass_items(self.radar)
        cp["dhdc"] = kv.dataclass_items(self.dhdc)
        if self.extra:
            cp["extra"] = {k: str(v) for k, v in self.extra.items()}
        cp["frames"] = {name: f"{size} {crc:08x} {nt} {lcrc:08x}" for name, size, crc, nt, lcrc in self.files}
        return kv.dump(cp)

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        cp = kv.parse_text(text)
        try:
            ds = cp["dataset"]
            version = int(ds["version"])
        except KeyError as exc:
            raise ConfigError(f"manifest missing {exc}") from None
        if version != MANIFEST_VERSION:
            raise VersionMismatch(f"manifest version {version}, expected {MANIFEST_VERSION}")
        files = []
        if cp.has_section("frames"):
            for name, val in cp["frames"].items():
                try:
                    size, crc, nt, lcrc = val.split()
                    files.append((name, int(size), int(crc, 16), int(nt), int(lcrc, 16)))
                except ValueError:
                    raise FormatError(f"bad manifest entry for frame {name}: {val!r}") from None
        return cls(
            radar=kv.dataclass_from_items(RadarConfig, dict(cp["radar"]), section="radar"),
            dhdc=kv.dataclass_from_items(DhdcParams, dict(cp["dhdc"]), section="dhdc"),
            mode=Mode(ds["mode"]),
            split=ds["split"],
            stream=int(ds["stream"]),
            sigma2=float(ds["sigma2"]),
            noise_domain=ds["noise_domain"],
            lcb_binding=ds.get("lcb_binding", ""),
            version=version,
            files=files,
            extra=dict(cp["extra"]) if cp.has_section("extra") else {},
        )


def make_frame(manifest: DatasetManifest, index: int, quantized: bool = True) -> LabeledFrame:
    """Frame ``index`` of a dataset, a pure function of the manifest settings."""
    rng = manifest.frame_rng(index)
    specs = sample_scenario(manifest.dhdc, rng.child(0), manifest.mode)
    fr = build_frame(manifest.radar, specs, manifest.sigma2, rng.child(1), manifest.mode,
                     manifest.dhdc.w_db, manifest.noise_domain)
    if quantized:
        fr.rdm = ComplexFrame(frame_io.quantize(fr.rdm.data), DomainTag.RDM)
    return fr


def iter_frames(manifest: DatasetManifest, count: int | None = None, start: int = 0,
                workers: int = 1) -> Iterator[LabeledFrame]:
    count = manifest.dhdc.frames if count is None else count
    idx = range(start, start + count)
    if workers <= 1:
        for i in idx:
            yield make_frame(manifest, i)
        return
    with ThreadPoolExecutor(workers) as ex:
        yield from ex.map(lambda i: make_frame(manifest, i), idx)


def generate_dataset(manifest: DatasetManifest, workers: int = 1) -> list[LabeledFrame]:
    if manifest.dhdc.frames <= 0:
        raise ParameterError("dataset needs at least one frame")
    return list(iter_frames(manifest, workers=workers))


# --------------------------------------------------------------------------
# on-disk layout: manifest.txt, frames/NNNNNN.rdf, labels/NNNNNN.csv

LABEL_FIELDS = ["R0", "V", "gamma", "amp_re", "amp_im", "is_strong", "range_bin",
                "doppler_bins", "straddle_loss_db", "range_frac", "doppler_frac"]


def _label_rows(truth: Sequence[TargetTruth]):
    for t in truth:
        a = complex(t.spec.amplitude)
        yield {
            "R0": repr(t.spec.R0), "V": repr(t.spec.V), "gamma": repr(t.spec.gamma),
            "amp_re": repr(a.real), "amp_im": repr(a.imag), "is_strong": int(t.is_strong),
            "range_bin": t.peaks.range_bin,
            "doppler_bins": ";".join(str(d) for d in t.peaks.doppler_bins),
            "straddle_loss_db": repr(t.peaks.straddle_loss_db),
            "range_frac": repr(t.peaks.range_frac), "doppler_frac": repr(t.peaks.doppler_frac),
        }


def write_labels(path, truth: Sequence[TargetTruth]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LABEL_FIELDS)
        w.writeheader()
        w.writerows(_label_rows(truth))


def read_labels(path) -> list[TargetTruth]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            spec = TargetSpec(float(row["R0"]), float(row["V"]), float(row["gamma"]),
                              complex(float(row["amp_re"]), float(row["amp_im"])))
            bins = tuple(int(x) for x in row["doppler_bins"].split(";")) if row["doppler_bins"] else ()
            peaks = PeakPrediction(int(row["range_bin"]), bins, float(row["straddle_loss_db"]),
                                   float(row["range_frac"]), float(row["doppler_frac"]))
            out.append(TargetTruth(spec, peaks, bool(int(row["is_strong"]))))
    return out


def write_dataset(frames: Sequence[LabeledFrame], manifest: DatasetManifest, directory) -> DatasetManifest:
    d = Path(directory)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    (d / "labels").mkdir(parents=True, exist_ok=True)
    files = []
    for i, fr in enumerate(frames):
        name = f"{i:06d}"
        blob = frame_io.write_frame(d / "frames" / f"{name}.rdf", fr.rdm, fr.mask)
        lpath = d / "labels" / f"{name}.csv"
        write_labels(lpath, fr.truth)
        files.append((name, len(blob), zlib.crc32(blob[:-4]), len(fr.truth), zlib.crc32(lpath.read_bytes())))
    manifest.files = files
    (d / "manifest.txt").write_text(manifest.to_text(), encoding="utf-8")
    return manifest


def read_dataset(directory) -> tuple[list[LabeledFrame], DatasetManifest]:
    d = Path(directory)
    manifest = DatasetManifest.from_text((d / "manifest.txt").read_text(encoding="utf-8"))
    frames = []
    for i, (name, size, crc, _, lcrc) in enumerate(manifest.files):
        blob = (d / "frames" / f"{name}.rdf").read_bytes()
        if len(blob) < size:
            raise TruncatedFile(f"frame {i} ({name}.rdf) truncated: {len(blob)} < {size} bytes")
        if len(blob) != size or zlib.crc32(blob[:-4]) != crc:
            raise ChecksumError(f"checksum mismatch in frame {i} ({name}.rdf)", i)
        rdm, mask = frame_io.decode_frame(blob, i)
        lpath = d / "labels" / f"{name}.csv"
        if zlib.crc32(lpath.read_bytes()) != lcrc:
            raise ChecksumError(f"checksum mismatch in labels of frame {i} ({name}.csv)", i)
        truth = read_labels(lpath)
        frames.append(LabeledFrame(rdm, truth, mask, manifest.mode))
    return frames, manifest


def regenerate(manifest: DatasetManifest) -> list[LabeledFrame]:
    return [make_frame(manifest, i) for i in range(len(manifest.files) or manifest.dhdc.frames)]


def split_streams(manifest: DatasetManifest, count: int) -> set:
    """Stream ids of the first ``count`` frames (for split-disjointness checks)."""
    return {manifest.frame_rng(i).stream_id for i in range(count)}


def strong_fraction(gammas, w_db: float) -> float:
    g = np.asarray(gammas)
    return float(np.mean(g >= w_db)) if g.size else math.nan
