"""Desk-scale experiment protocol: train, calibrate, evaluate, report.

A run covers three training modes (MM, NTM, MM with an LCB input stage)
over a list of seeds. For each seed the MM and MM+LCB models see
identical training patches and every model is scored on the same
evaluation frames, so MM vs MM+LCB deltas come from the LCB alone.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import config as kv
from . import cvnet, detector
from .dhdc import DatasetManifest, DhdcParams, LabeledFrame, Mode, Split, build_frame, make_frame, sample_scenario
from .errors import ConfigError, ParameterError, TrainingDiverged
from .numerics import SeededRng
from .signal_model import RadarConfig, TargetSpec

PFA_BAND = (0.25, 4.0)
TABLE2_SNRS = (9.0, 10.0, 11.0, 12.0, 13.0, 14.0)
TABLE3_SNRS = (30.0, 40.0, 50.0, 60.0, 70.0)

# Scaled-down matrix that fits three seeds in about 25 min on one core.
ACCEPTANCE_OVERRIDES = dict(train_frames=240, val_frames=80, epochs=24, eval_frames=20, sweep_frames=10,
                            snr_sweep=(11.0, 12.0, 13.0, 30.0, 50.0, 70.0))


class TrainMode(enum.Enum):
    MM = "MM"
    NTM = "NTM"
    MM_LCB = "MM_LCB"

    @property
    def data_mode(self) -> Mode:
        return Mode.NTM if self is TrainMode.NTM else Mode.MM

    @property
    def use_lcb(self) -> bool:
        return self is TrainMode.MM_LCB


@dataclass(frozen=True)
class ExperimentPlan:
    mode: TrainMode = TrainMode.MM
    dhdc: DhdcParams = field(default_factory=DhdcParams)
    net: cvnet.NetConfig = None   # default NetConfig() when omitted
    alpha: float = 1e-4
    snr_sweep: tuple = ()
    seeds: tuple = (0, 1, 2)
    radar: RadarConfig = field(default_factory=RadarConfig)
    sigma2: float = 1.0
    train_frames: int = 300
    val_frames: int = 150
    eval_frames: int = 150
    sweep_frames: int = 20
    noise_frames: int = 0          # 0: the minimum that reaches 100/alpha cells
    patches_per_frame: int = 1
    epochs: int = 30
    lr: float = 1e-3
    batch: int = 8
    include_cfar: bool = True

    def __post_init__(self):
        if self.net is None:
            object.__setattr__(self, "net", cvnet.NetConfig())
        object.__setattr__(self, "snr_sweep", tuple(float(g) for g in self.snr_sweep))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ParameterError("plan needs at least one seed")
        if not 0 < self.alpha <= 0.1:
            raise ParameterError("alpha must lie in (0, 0.1]")
        if self.train_frames < 1 or self.val_frames < 1:
            raise ParameterError("need at least one training and one validation frame")
        if min(self.eval_frames, self.sweep_frames, self.noise_frames) < 0:
            raise ParameterError("frame counts must be non-negative")
        if self.epochs < 1 or self.batch < 1 or self.patches_per_frame < 1:
            raise ParameterError("epochs, batch and patches_per_frame must be >= 1")

    def net_for(self, mode: TrainMode) -> cvnet.NetConfig:
        return replace(self.net, use_lcb=mode.use_lcb)

    @property
    def calibration_frames(self) -> int:
        if self.noise_frames:
            return self.noise_frames
        return math.ceil(100.0 / self.alpha / (self.radar.M * self.radar.N))

    def hyper(self, seed: int) -> cvnet.TrainHyper:
        return cvnet.TrainHyper(lr=self.lr, epochs=self.epochs, batch=self.batch, seed=seed)



# --------------------------------------------------------------------------
# counting

@dataclass
class Tally:
    hits: int = 0
    targets: int = 0
    false_alarms: int = 0
    cells: int = 0

    def add(self, m: detector.MatchResult, keep=None) -> None:
        for h, t in zip(m.hits, keep if keep is not None else [True] * len(m.hits)):
            if t:
                self.targets += 1
                self.hits += int(h)
        self.false_alarms += m.false_alarms
        self.cells += m.non_truth_cells

    @property
    def pd(self) -> float:
        return self.hits / self.targets if self.targets else math.nan

    @property
    def pfa(self) -> float:
        return self.false_alarms / self.cells if self.cells else math.nan


@dataclass
class CellResult:
    """One (decider, seed) cell of the experiment matrix."""
    mode: str
    seed: int
    overall: Tally = field(default_factory=Tally)
    weak: Tally = field(default_factory=Tally)
    strong: Tally = field(default_factory=Tally)
    noise: Tally = field(default_factory=Tally)
    sweep: dict = field(default_factory=dict)       # gamma -> Tally
    threshold: float = math.nan
    degenerate: bool = False
    params: int = 0
    macs: int = 0
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    manifests: list = field(default_factory=list)

    def pfa_flag(self, alpha: float) -> bool:
        lo, hi = PFA_BAND
        p = self.noise.pfa
        return not (math.isfinite(p) and lo * alpha <= p <= hi * alpha)

    def pooled_sweep(self, gammas) -> Tally:
        out = Tally()
        for g in gammas:
            t = self.sweep.get(float(g))
            if t is not None:
                out.hits += t.hits
                out.targets += t.targets
                out.false_alarms += t.false_alarms
                out.cells += t.cells
        return out


@dataclass
class DetectionReport:
    alpha: float = 1e-4
    cells: list = field(default_factory=list)
    manifests: dict = field(default_factory=dict)   # name -> manifest text
    plan_text: str = ""
    notes: list = field(default_factory=list)

    def modes(self) -> list:
        seen = []
        for c in self.cells:
            if c.mode not in seen:
                seen.append(c.mode)
        return seen

    def for_mode(self, mode) -> list:
        name = mode.value if isinstance(mode, TrainMode) else str(mode)
        return [c for c in self.cells if c.mode == name]

    def sweep_gammas(self) -> list:
        return sorted({g for c in self.cells for g in c.sweep})


def mean_std(values) -> tuple[float, float]:
    v = np.asarray([x for x in values if math.isfinite(x)], dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else math.nan


# --------------------------------------------------------------------------
# frame sources

def dataset_manifest(plan: ExperimentPlan, seed: int, split: Split, mode: Mode = Mode.MM,
                     frames: int | None = None, stream: int | None = None, **extra) -> DatasetManifest:
    counts = {Split.TRAIN: plan.train_frames, Split.VAL: plan.val_frames, Split.EVAL: plan.eval_frames,
              Split.NOISE: 2 * plan.calibration_frames, Split.SWEEP: plan.sweep_frames}
    dh = replace(plan.dhdc, seed=seed, frames=counts[split] if frames is None else frames)
    return DatasetManifest(radar=plan.radar, dhdc=dh, mode=mode, split=split.name.lower(),
                           stream=int(split) if stream is None else stream, sigma2=plan.sigma2,
                           extra={k: str(v) for k, v in extra.items()})


def sweep_stream(gamma: float) -> int:
    """Stream id for fixed-SNR frames; distinct per gamma (0.01 dB resolution)."""
    return int(Split.SWEEP) * 100_000 + int(round(gamma * 100))


def fixed_snr_frame(manifest: DatasetManifest, index: int, gamma: float) -> LabeledFrame:
    """A scenario from the usual generator with every target set to ``gamma`` dB."""
    rng = manifest.frame_rng(index)
    specs = sample_scenario(manifest.dhdc, rng.child(0), Mode.MM)
    specs = [TargetSpec(s.R0, s.V, float(gamma)) for s in specs]
    return build_frame(manifest.radar, specs, manifest.sigma2, rng.child(1), Mode.MM,
                       manifest.dhdc.w_db, manifest.noise_domain)


def noise_frame(manifest: DatasetManifest, index: int) -> LabeledFrame:
    return build_frame(manifest.radar, [], manifest.sigma2, manifest.frame_rng(index).child(1),
                       Mode.MM, manifest.dhdc.w_db, manifest.noise_domain)


# --------------------------------------------------------------------------
# deciders

class NetDecider:
    def __init__(self, name, params, cfg: cvnet.NetConfig, sigma2: float):
        self.name = name
        self.params = params
        self.cfg = cfg
        self.sigma2 = sigma2
        self.threshold: detector.ProbThreshold | None = None

    def score(self, rdm) -> np.ndarray:
        return cvnet.predict_frame(self.params, self.cfg, rdm, self.sigma2)

    def calibrate(self, noise_frames: Iterable[LabeledFrame], alpha: float) -> detector.ProbThreshold:
        self.threshold = detector.calibrate_prob_threshold([self.score(f.rdm) for f in noise_frames], alpha)
        return self.threshold

    def detect(self, rdm) -> detector.DetectionSet:
        return detector.detect_prob_map(self.score(rdm), self.threshold)


class CfarDecider:
    name = "CFAR"

    def __init__(self, cfg: detector.CfarConfig):
        self.cfg = cfg
        self.threshold = None

    def calibrate(self, noise_frames, alpha):
        return None

    def detect(self, rdm) -> detector.DetectionSet:
        return detector.ca_cfar(rdm, self.cfg)


def _score_frame(deciders, results, frame: LabeledFrame, shape, pick: Callable[[CellResult], list]):
    strong_flags = [t.is_strong for t in frame.truth]
    for d, res in zip(deciders, results):
        m = detector.match_truth(d.detect(frame.rdm), frame.truth, shape=shape)
        for tally, keep in pick(res, strong_flags):
            tally.add(m, keep)


def snr_sweep_eval(decider, plan: ExperimentPlan, gamma: float, frames: int | None = None,
                   seed: int = 0) -> Tally:
    """Pd and Pfa of a calibrated decider on frames where every target has SNR ``gamma``."""
    frames = plan.sweep_frames if frames is None else frames
    man = dataset_manifest(plan, seed, Split.SWEEP, frames=frames, stream=sweep_stream(gamma))
    t = Tally()
    for i in range(frames):
        fr = fixed_snr_frame(man, i, gamma)
        t.add(detector.match_truth(decider.detect(fr.rdm), fr.truth, shape=plan.radar.shape))
    return t


# --------------------------------------------------------------------------
# training

def training_patches(plan: ExperimentPlan, seed: int, mode: Mode, split: Split, net: cvnet.NetConfig):
    """Patches for one split, streamed frame by frame so full frames never pile up."""
    man = dataset_manifest(plan, seed, split, mode)
    rng = SeededRng(seed, 0xC0).child(int(split), 0 if mode is Mode.MM else 1)
    g = rng.generator()
    sets = []
    for i in range(man.dhdc.frames):
        sets.append(cvnet.extract_patches([make_frame(man, i)], net, plan.sigma2, g, plan.patches_per_frame))
    return cvnet.concat_patches(sets), man


def run_matrix(plan: ExperimentPlan, modes: Sequence[TrainMode] = tuple(TrainMode),
               progress: Callable[[str], None] | None = None, workers: int = 1) -> DetectionReport:
    """Train and evaluate every mode for every seed of ``plan``.

    Seeds are independent and may run in ``workers`` processes; results are
    assembled in seed order, so the report does not depend on scheduling.
    With several workers ``progress`` only hears about finished seeds.
    """
    say = progress or (lambda msg: None)
    modes = [TrainMode(m) for m in modes]
    report = DetectionReport(alpha=plan.alpha, plan_text=plan_to_text(plan))
    if workers > 1 and len(plan.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(plan.seeds))) as pool:
            futures = [pool.submit(_run_seed, plan, modes, seed, None) for seed in plan.seeds]
            try:
                for seed, fut in zip(plan.seeds, futures):
                    cells, manifests = fut.result()
                    report.cells.extend(cells)
                    report.manifests.update(manifests)
                    say(f"seed {seed}: done")
            except TrainingDiverged as exc:
                exc.partial_report = report
                raise
        return report
    for seed in plan.seeds:
        try:
            cells, manifests = _run_seed(plan, modes, seed, say)
        except TrainingDiverged as exc:
            exc.partial_report = report
            raise
        report.cells.extend(cells)
        report.manifests.update(manifests)
    return report


def _run_seed(plan: ExperimentPlan, modes, seed: int, say) -> tuple[list, dict]:
    say = say or (lambda msg: None)
    shape = plan.radar.shape
    manifests = {}
    deciders, results = [], []
    patch_cache = {}
    for mode in modes:
        net = plan.net_for(mode)
        key = mode.data_mode
        if key not in patch_cache:
            say(f"seed {seed}: generating {key.value} train/val patches")
            tr, tr_man = training_patches(plan, seed, key, Split.TRAIN, net)
            va, va_man = training_patches(plan, seed, key, Split.VAL, net)
            patch_cache[key] = (tr, va, [tr_man, va_man])
        tr, va, mans = patch_cache[key]
        say(f"seed {seed}: training {mode.value} ({cvnet.parameter_count(net)} params)")
        params, log = cvnet.train(tr, net, plan.hyper(seed), va)
        res = CellResult(mode.value, seed, params=cvnet.parameter_count(net),
                         macs=sum(cvnet.mac_count(net, shape).values()),
                         train_loss=log.train_loss, val_loss=log.val_loss, best_epoch=log.best_epoch)
        for m in mans:
            name = f"seed{seed}_{m.mode.value}_{m.split}.txt"
            manifests[name] = m.to_text()
            res.manifests.append(name)
        deciders.append(NetDecider(mode.value, params, net, plan.sigma2))
        results.append(res)
    if plan.include_cfar:
        deciders.append(CfarDecider(detector.CfarConfig(alpha=plan.alpha)))
        results.append(CellResult("CFAR", seed))
    _evaluate(plan, seed, deciders, results, manifests, say)
    return results, manifests


def _evaluate(plan, seed, deciders, results, manifests, say):
    shape = plan.radar.shape
    nm = dataset_manifest(plan, seed, Split.NOISE)
    ncal = plan.calibration_frames
    say(f"seed {seed}: calibrating on {ncal} noise frames")
    cal = [noise_frame(nm, i) for i in range(ncal)]
    for d, res in zip(deciders, results):
        thr = d.calibrate(cal, plan.alpha)
        if thr is not None:
            res.threshold, res.degenerate = thr.value, thr.degenerate
    del cal
    names = [f"seed{seed}_noise.txt"]
    manifests[names[0]] = nm.to_text()
    for i in range(ncal, 2 * ncal):
        _score_frame(deciders, results, noise_frame(nm, i), shape, lambda r, s: [(r.noise, None)])
    if plan.eval_frames:
        em = dataset_manifest(plan, seed, Split.EVAL)
        manifests[f"seed{seed}_eval.txt"] = em.to_text()
        names.append(f"seed{seed}_eval.txt")
        say(f"seed {seed}: evaluating {plan.eval_frames} frames")
        for i in range(plan.eval_frames):
            _score_frame(deciders, results, make_frame(em, i), shape,
                         lambda r, s: [(r.overall, None), (r.weak, [not x for x in s]), (r.strong, s)])
    for gamma in plan.snr_sweep:
        sm = dataset_manifest(plan, seed, Split.SWEEP, stream=sweep_stream(gamma), gamma=gamma)
        name = f"seed{seed}_sweep_{gamma:g}dB.txt"
        manifests[name] = sm.to_text()
        names.append(name)
        say(f"seed {seed}: sweep at {gamma:g} dB")
        for res in results:
            res.sweep[gamma] = Tally()
        for i in range(plan.sweep_frames):
            _score_frame(deciders, results, fixed_snr_frame(sm, i, gamma), shape,
                         lambda r, s, g=gamma: [(r.sweep[g], None)])
    for res in results:
        res.manifests.extend(names)


def run_mode(plan: ExperimentPlan, progress=None, workers: int = 1) -> DetectionReport:
    return run_matrix(plan, (plan.mode,), progress, workers)


# --------------------------------------------------------------------------
# single-frame overfit

@dataclass
class OverfitResult:
    pd: float              # at the end of training
    first_full_step: int   # first checked step with every target detected, -1 if never
    steps: int
    threshold: float
    history: list          # (step, pd) at each check
    losses: list           # batch loss per step


def overfit_single_frame(radar: RadarConfig | None = None, net: cvnet.NetConfig | None = None,
                         alpha: float = 1e-2, steps: int = 500, check_every: int = 25,
                         gammas=(16.0, 30.0, 50.0), seed: int = 0, lr: float = 1e-2,
                         batch: int = 8) -> OverfitResult:
    """Fit one noise-free frame of strong targets for ``steps`` Adam steps.

    Detection is checked every ``check_every`` steps with the threshold
    recalibrated on one pure-noise frame, so the result reflects the same
    decision rule as the full evaluation.
    """
    radar = radar or RadarConfig()
    net = net or cvnet.NetConfig()
    rng = SeededRng(seed, 0x0F17)
    g = rng.child(0).generator()
    specs = [TargetSpec(float(g.uniform(5, 0.9 * radar.max_range)), float(g.uniform(-20, 20)), float(gm))
             for gm in gammas]
    frame = build_frame(radar, specs, 1.0, rng.child(1), add_noise=False)
    pool = cvnet.extract_patches([frame], net, 1.0, rng.child(2), per_frame=64, target_prob=0.75)
    noise = build_frame(radar, [], 1.0, rng.child(3))
    hp = cvnet.TrainHyper(lr=lr, batch=batch, seed=seed)
    params = cvnet.init_params(net, seed)
    opt = cvnet.Adam(len(params), hp)
    order = rng.child(4).generator()
    dec = NetDecider("overfit", params, net, 1.0)
    history, losses, first, thr = [], [], -1, None
    perm = order.permutation(len(pool))
    for step in range(steps + 1):
        if step % check_every == 0 or step == steps:
            thr = dec.calibrate([noise], alpha)
            m = detector.match_truth(dec.detect(frame.rdm), frame.truth, shape=radar.shape)
            history.append((step, m.pd))
            if m.pd == 1.0 and first < 0 and step > 0:
                first = step
        if step == steps:
            break
        if len(perm) < batch:
            perm = order.permutation(len(pool))
        idx, perm = perm[:batch], perm[batch:]
        value, grad = cvnet.loss_and_grad(params, net, pool.x[idx], pool.y[idx])
        if not (math.isfinite(value) and np.all(np.isfinite(grad))):
            raise TrainingDiverged(f"non-finite loss at step {step}", params.copy(), None)
        opt.step(params.flat, grad)
        losses.append(value)
    return OverfitResult(history[-1][1], first, steps, thr.value, history, losses)


# --------------------------------------------------------------------------
# trend check

@dataclass
class TrendResult:
    ntm_pfa: dict          # seed -> pooled Pfa on >= 30 dB sweep frames
    mm_pd: dict            # seed -> pooled Pd on 11..13 dB sweep frames
    lcb_pd: dict
    alpha: float

    @property
    def ntm_collapse(self) -> bool:
        return bool(self.ntm_pfa) and all(p > 10 * self.alpha for p in self.ntm_pfa.values())

    @property
    def lcb_wins(self) -> int:
        return sum(self.lcb_pd[s] >= self.mm_pd[s] for s in self.mm_pd if s in self.lcb_pd)

    @property
    def passed(self) -> bool:
        return self.ntm_collapse and self.lcb_wins >= 2


def trend_check(report: DetectionReport, weak=(11.0, 12.0, 13.0), strong_min: float = 30.0) -> TrendResult:
    strong = [g for g in report.sweep_gammas() if g >= strong_min]
    ntm = {c.seed: c.pooled_sweep(strong).pfa for c in report.for_mode(TrainMode.NTM)}
    mm = {c.seed: c.pooled_sweep(weak).pd for c in report.for_mode(TrainMode.MM)}
    lcb = {c.seed: c.pooled_sweep(weak).pd for c in report.for_mode(TrainMode.MM_LCB)}
    return TrendResult(ntm, mm, lcb, report.alpha)


# --------------------------------------------------------------------------
# plan (de)serialization

def plan_to_text(plan: ExperimentPlan) -> str:
    cp = kv.new_parser()
    items = kv.dataclass_items(plan)
    cp["plan"] = items
    cp["dhdc"] = kv.dataclass_items(plan.dhdc)
    cp["net"] = kv.dataclass_items(plan.net)
    cp["radar"] = kv.dataclass_items(plan.radar)
    return kv.dump(cp)


def plan_from_sections(sections: dict, base: ExperimentPlan | None = None) -> ExperimentPlan:
    """Build a plan from ``{section: {key: value}}`` string items."""
    base = base or ExperimentPlan()
    known = {"plan", "dhdc", "net", "radar"}
    for name in sections:
        if name not in known:
            raise ConfigError(f"unknown section [{name}]")
    dh = kv.dataclass_from_items(DhdcParams, sections.get("dhdc", {}), base.dhdc, "dhdc")
    net = kv.dataclass_from_items(cvnet.NetConfig, sections.get("net", {}), base.net, "net")
    radar = kv.dataclass_from_items(RadarConfig, sections.get("radar", {}), base.radar, "radar")
    base = replace(base, dhdc=dh, net=net, radar=radar)
    return kv.dataclass_from_items(ExperimentPlan, sections.get("plan", {}), base, "plan")


def report_to_json(report: DetectionReport) -> str:
    doc = asdict(report)
    for c in doc["cells"]:
        c["sweep"] = {repr(float(g)): t for g, t in c["sweep"].items()}
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=True)


def report_from_json(text: str) -> DetectionReport:
    doc = json.loads(text)
    cells = []
    for c in doc.pop("cells"):
        for k in ("overall", "weak", "strong", "noise"):
            c[k] = Tally(**c[k])
        c["sweep"] = {float(g): Tally(**t) for g, t in c["sweep"].items()}
        cells.append(CellResult(**c))
    return DetectionReport(cells=cells, **doc)


# --------------------------------------------------------------------------
# rendering

OVERALL_FIELDS = ["mode", "seed", "pd_overall_pct", "pd_non_strong_pct", "pd_strong_pct",
                  "pfa_eval_e4", "pfa_noise_e4", "pfa_flag", "threshold", "degenerate",
                  "params", "macs", "best_epoch"]
SWEEP_FIELDS = ["mode", "seed", "gamma_db", "pd_pct", "pfa_e4", "targets"]


def _pct(x):
    return 100.0 * x


def _e4(x):
    return 1e4 * x


def overall_rows(report: DetectionReport) -> list:
    rows = []
    for c in report.cells:
        rows.append([c.mode, c.seed, _pct(c.overall.pd), _pct(c.weak.pd), _pct(c.strong.pd),
                     _e4(c.overall.pfa), _e4(c.noise.pfa), int(c.pfa_flag(report.alpha)),
                     c.threshold, int(c.degenerate), c.params, c.macs, c.best_epoch])
    for mode in report.modes():
        cs = report.for_mode(mode)
        for stat in ("mean", "std"):
            row = [mode, stat]
            for getter in (lambda c: _pct(c.overall.pd), lambda c: _pct(c.weak.pd),
                           lambda c: _pct(c.strong.pd), lambda c: _e4(c.overall.pfa),
                           lambda c: _e4(c.noise.pfa)):
                ms = mean_std([getter(c) for c in cs])
                row.append(ms[0] if stat == "mean" else ms[1])
            rows.append(row + [""] * (len(OVERALL_FIELDS) - len(row)))
    return rows


def sweep_rows(report: DetectionReport, gammas) -> list:
    rows = []
    for c in report.cells:
        for g in gammas:
            t = c.sweep.get(g)
            if t is not None:
                rows.append([c.mode, c.seed, g, _pct(t.pd), _e4(t.pfa), t.targets])
    for mode in report.modes():
        for g in gammas:
            ts = [c.sweep[g] for c in report.for_mode(mode) if g in c.sweep]
            if ts:
                pd = mean_std([_pct(t.pd) for t in ts])
                pfa = mean_std([_e4(t.pfa) for t in ts])
                rows.append([mode, "mean", g, pd[0], pfa[0], sum(t.targets for t in ts)])
                rows.append([mode, "std", g, pd[1], pfa[1], ""])
    return rows


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def summary_text(report: DetectionReport) -> str:
    out = io.StringIO()
    out.write(f"alpha = {report.alpha:g}\n")
    out.write("mode      Pd overall %      Pd non-strong %   Pd strong %       Pfa noise (1e-4)\n")
    for mode in report.modes():
        cs = report.for_mode(mode)
        cols = []
        for getter in (lambda c: _pct(c.overall.pd), lambda c: _pct(c.weak.pd),
                       lambda c: _pct(c.strong.pd), lambda c: _e4(c.noise.pfa)):
            m, s = mean_std([getter(c) for c in cs])
            cols.append(f"{m:7.2f} +- {s:5.2f}" if math.isfinite(s) else f"{m:7.2f}         ")
        out.write(f"{mode:<9} " + "  ".join(cols) + "\n")
    flagged = [f"{c.mode}/seed{c.seed}" for c in report.cells if c.pfa_flag(report.alpha)]
    lo, hi = PFA_BAND
    out.write(f"Pfa outside [{lo:g}, {hi:g}] x alpha on held-out noise: {', '.join(flagged) or 'none'}\n")
    if any(c.sweep for c in report.cells):
        tr = trend_check(report)
        if tr.ntm_pfa:
            out.write("NTM Pfa on >= 30 dB frames (1e-4): "
                      + ", ".join(f"seed{s}={_e4(p):.1f}" for s, p in sorted(tr.ntm_pfa.items())) + "\n")
        if tr.mm_pd and tr.lcb_pd:
            out.write("Pd on 11-13 dB targets, MM vs MM+LCB (%): "
                      + ", ".join(f"seed{s}={_pct(tr.mm_pd[s]):.1f}/{_pct(tr.lcb_pd.get(s, math.nan)):.1f}"
                                  for s in sorted(tr.mm_pd)) + "\n")
    for note in report.notes:
        out.write(f"note: {note}\n")
    return out.getvalue()


def hdr_example(radar: RadarConfig, sigma2: float = 1.0, strong_db: float = 60.0, weak_db: float = 6.0,
                seed: int = 0):
    """Two-target frame (strong and weak) used for the LCB illustration."""
    man = DatasetManifest(radar=radar, sigma2=sigma2)
    n, m = radar.N, radar.M
    specs = [TargetSpec(radar.ongrid_range(int(0.4 * n)), radar.ongrid_velocity(m // 12), strong_db),
             TargetSpec(radar.ongrid_range(int(0.45 * n)), radar.ongrid_velocity(m // 6), weak_db)]
    return build_frame(radar, specs, sigma2, SeededRng(seed, 0xF1), Mode.MM, man.dhdc.w_db)


def render_figures(report: DetectionReport, fig_dir: Path, radar: RadarConfig, sigma2: float,
                   lcb_w: float) -> list:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from .lcb import LcbParams, lcb_array

    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []
    fr = hdr_example(radar, sigma2)
    x = cvnet.normalize_rdm(fr.rdm, sigma2)
    y = lcb_array(x, LcbParams(lcb_w))
    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    for ax, data, title in ((axes[0], np.abs(x), "|RDM| (noise RMS = 1)"),
                            (axes[1], np.abs(y), "|LCB(RDM)|")):
        im = ax.imshow(data, aspect="auto", origin="lower", cmap="viridis")
        ax.set_title(title)
        ax.set_xlabel("range bin")
        ax.set_ylabel("Doppler bin")
        fig.colorbar(im, ax=ax)
    fig.tight_layout()
    path = fig_dir / "hdr_example.png"
    fig.savefig(path, dpi=90)
    plt.close(fig)
    written.append(path)

    curves = [c for c in report.cells if c.val_loss]
    fig, ax = plt.subplots(figsize=(6, 4))
    for c in curves:
        ax.plot(c.val_loss, label=f"{c.mode} s{c.seed}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation loss")
    if curves:
        ax.legend(fontsize=7)
    fig.tight_layout()
    path = fig_dir / "validation_loss.png"
    fig.savefig(path, dpi=90)
    plt.close(fig)
    written.append(path)

    gammas = report.sweep_gammas()
    fig, ax = plt.subplots(figsize=(6, 4))
    for mode in report.modes():
        pts = [mean_std([_pct(c.sweep[g].pd) for c in report.for_mode(mode) if g in c.sweep])[0] for g in gammas]
        if gammas:
            ax.plot(gammas, pts, marker="o", label=mode)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("Pd (%)")
    if gammas:
        ax.legend()
    fig.tight_layout()
    path = fig_dir / "pd_vs_snr.png"
    fig.savefig(path, dpi=90)
    plt.close(fig)
    written.append(path)
    return written


def render_report(report: DetectionReport, directory, radar: RadarConfig | None = None,
                  sigma2: float = 1.0, lcb_w: float | None = None, figures: bool = True) -> list:
    """Write tables/*.csv, figures/*.png, summary.txt and manifests/ under ``directory``."""
    root = Path(directory)
    tables = root / "tables"
    mans = root / "manifests"
    tables.mkdir(parents=True, exist_ok=True)
    mans.mkdir(parents=True, exist_ok=True)
    written = []
    gammas = report.sweep_gammas()
    specs = [("table1_overall.csv", OVERALL_FIELDS, overall_rows(report)),
             ("table2_weak_sweep.csv", SWEEP_FIELDS, sweep_rows(report, [g for g in gammas if g < 30])),
             ("table3_strong_sweep.csv", SWEEP_FIELDS, sweep_rows(report, [g for g in gammas if g >= 30]))]
    for name, header, rows in specs:
        write_csv(tables / name, header, rows)
        written.append(tables / name)
    for name, text in report.manifests.items():
        (mans / name).write_text(text, encoding="utf-8")
        written.append(mans / name)
    if report.plan_text:
        (mans / "plan.ini").write_text(report.plan_text, encoding="utf-8")
        written.append(mans / "plan.ini")
    (root / "summary.txt").write_text(summary_text(report), encoding="utf-8")
    written.append(root / "summary.txt")
    if figures:
        radar = radar or RadarConfig()
        w = lcb_w if lcb_w is not None else cvnet.NetConfig().lcb_w
        written += render_figures(report, root / "figures", radar, sigma2, w)
    return written
