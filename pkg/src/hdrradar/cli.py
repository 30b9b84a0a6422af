"""``hdrradar`` command line.

Settings resolve in three layers: built-in defaults, then the INI file given
with ``--config``, then explicit flags. Unknown sections or keys in the file
are errors. Every command that writes outputs also writes the resolved
configuration next to them as ``config.ini``.

Exit codes: 0 success, 1 usage or configuration, 2 data integrity, 3 numeric.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import config as kv
from . import cvnet, detector, dhdc, frame_io, harness
from .errors import ConfigError, HdrRadarError, ParameterError, TrainingDiverged
from .lcb import LcbParams, lcb_array, w_from_db
from .numerics import SeededRng
from .signal_model import RadarConfig

SECTIONS = ("radar", "dhdc", "dataset", "lcb", "cfar", "net", "train", "plan")


@dataclass(frozen=True)
class DatasetOptions:
    mode: str = "MM"
    split: str = "train"
    sigma2: float = 1.0
    noise_domain: str = "rdm"


@dataclass(frozen=True)
class LcbOptions:
    w_db: float = 14.0        # used when w is not set; relative to the noise RMS amplitude
    w: float = 0.0            # absolute threshold in frame units; 0 means derive from w_db
    epsilon: float = 1e-12


@dataclass
class CliConfig:
    radar: RadarConfig = field(default_factory=RadarConfig)
    dhdc: dhdc.DhdcParams = field(default_factory=dhdc.DhdcParams)
    dataset: DatasetOptions = field(default_factory=DatasetOptions)
    lcb: LcbOptions = field(default_factory=LcbOptions)
    cfar: detector.CfarConfig = field(default_factory=detector.CfarConfig)
    net: cvnet.NetConfig = field(default_factory=cvnet.NetConfig)
    train: cvnet.TrainHyper = field(default_factory=cvnet.TrainHyper)
    plan: dict = field(default_factory=dict)   # raw [plan] items, resolved by the harness

    def to_text(self) -> str:
        cp = kv.new_parser()
        for name in SECTIONS[:-1]:
            cp[name] = kv.dataclass_items(getattr(self, name))
        cp["plan"] = kv.dataclass_items(self.experiment_plan())
        return kv.dump(cp)

    def experiment_plan(self, **overrides) -> harness.ExperimentPlan:
        base = harness.ExperimentPlan(dhdc=self.dhdc, net=self.net, radar=self.radar,
                                      sigma2=self.dataset.sigma2, alpha=self.cfar.alpha,
                                      epochs=self.train.epochs, lr=self.train.lr, batch=self.train.batch)
        plan = kv.dataclass_from_items(harness.ExperimentPlan, self.plan, base, "plan")
        try:
            return replace(plan, **overrides)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc


_SECTION_TYPES = {"radar": RadarConfig, "dhdc": dhdc.DhdcParams, "dataset": DatasetOptions,
                  "lcb": LcbOptions, "cfar": detector.CfarConfig, "net": cvnet.NetConfig,
                  "train": cvnet.TrainHyper}


def load_config(path) -> CliConfig:
    cfg = CliConfig()
    if path is None:
        return cfg
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cp = kv.parse_text(text)
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}] in {path}")
        items = dict(cp[name])
        if name == "plan":
            names = {f for f in harness.ExperimentPlan.__dataclass_fields__} - {"dhdc", "net", "radar"}
            bad = sorted(set(items) - names)
            if bad:
                raise ConfigError(f"unknown key {bad[0]!r} in section [plan]")
            cfg.plan = items
        else:
            setattr(cfg, name, kv.dataclass_from_items(_SECTION_TYPES[name], items, getattr(cfg, name), name))
    cfg.experiment_plan()   # surface plan errors early
    return cfg


def _override(cfg: CliConfig, section: str, **values) -> None:
    values = {k: v for k, v in values.items() if v is not None}
    if values:
        try:
            setattr(cfg, section, replace(getattr(cfg, section), **values))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid --{section} override: {exc}") from exc


def _write_config(cfg: CliConfig, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.ini").write_text(cfg.to_text(), encoding="utf-8")


def _mode(name: str) -> dhdc.Mode:
    try:
        return dhdc.Mode(name.upper())
    except ValueError:
        raise ConfigError(f"unknown dataset mode {name!r}; expected MM or NTM") from None


# --------------------------------------------------------------------------
# commands

def cmd_gen(args, cfg: CliConfig) -> int:
    _override(cfg, "dhdc", frames=args.frames, seed=args.seed)
    _override(cfg, "dataset", mode=args.mode, split=args.split)
    if cfg.dhdc.frames <= 0:
        raise ParameterError("--frames must be positive")
    split = cfg.dataset.split.lower()
    try:
        stream = int(dhdc.Split[split.upper()])
    except KeyError:
        raise ConfigError(f"unknown split {split!r}") from None
    man = dhdc.DatasetManifest(radar=cfg.radar, dhdc=cfg.dhdc, mode=_mode(cfg.dataset.mode), split=split,
                               stream=stream, sigma2=cfg.dataset.sigma2, noise_domain=cfg.dataset.noise_domain)
    frames = dhdc.generate_dataset(man, workers=args.workers)
    dhdc.write_dataset(frames, man, args.out)
    _write_config(cfg, args.out)
    print(f"wrote {len(frames)} frames to {args.out}")
    return 0


def lcb_params_for(cfg: CliConfig, shape) -> LcbParams:
    o = cfg.lcb
    if o.w > 0:
        return LcbParams(o.w, o.epsilon)
    m, n = shape
    return LcbParams(w_from_db(o.w_db, math.sqrt(m * n * cfg.dataset.sigma2)), o.epsilon)


def cmd_lcb(args, cfg: CliConfig) -> int:
    _override(cfg, "lcb", w=args.w, w_db=args.w_db, epsilon=args.epsilon)
    frame, mask = frame_io.read_frame(args.input)
    p = lcb_params_for(cfg, frame.shape)
    out = frame.with_data(lcb_array(frame.data, p))
    frame_io.write_frame(args.output, out, mask)
    print(f"w = {p.w!r}, epsilon = {p.epsilon!r}")
    return 0


def _frame_paths(paths) -> list:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            sub = p / "frames" if (p / "frames").is_dir() else p
            out += sorted(sub.glob("*.rdf"))
        else:
            out.append(p)
    if not out:
        raise ConfigError("no input frames")
    return out


def _labelled_frames(paths):
    """Yield (frame_id, rdm, truth or None) from dataset directories or RDF1 files."""
    fid = 0
    for p in map(Path, paths):
        if p.is_dir() and (p / "manifest.txt").is_file():
            frames, _ = dhdc.read_dataset(p)
            for fr in frames:
                yield fid, fr.rdm, fr.truth
                fid += 1
        else:
            for fp in _frame_paths([p]):
                rdm, _ = frame_io.read_frame(fp, fid)
                yield fid, rdm, None
                fid += 1


def _score_and_write(frames, decide, out_csv, shape_of):
    rows = []
    total = harness.Tally()
    labelled = False
    for fid, rdm, truth in frames:
        dets = decide(rdm)
        hit_flags = [False] * len(dets)
        if truth is not None:
            labelled = True
            m = detector.match_truth(dets, truth, shape=shape_of(rdm))
            total.add(m)
            hit_flags = m.det_is_hit
        rows += [(fid, r, c, s, h) for (r, c, s), h in zip(dets.cells, hit_flags)]
    if out_csv:
        detector.write_detections_csv(out_csv, rows)
    print(f"{len(rows)} detections")
    if labelled:
        print(f"Pd = {100 * total.pd:.2f} %  ({total.hits}/{total.targets})")
        print(f"Pfa = {1e4 * total.pfa:.3f} x 1e-4  ({total.false_alarms}/{total.cells})")
    return 0


def cmd_cfar(args, cfg: CliConfig) -> int:
    _override(cfg, "cfar", alpha=args.alpha,
              train_cells=tuple(args.train) if args.train else None,
              guard_cells=tuple(args.guard) if args.guard else None)
    return _score_and_write(_labelled_frames(args.inputs), lambda r: detector.ca_cfar(r, cfg.cfar),
                            args.out, lambda r: r.shape)


def _patches_from_dir(path, net, sigma2, seed, split, per_frame):
    frames, man = dhdc.read_dataset(path)
    rng = SeededRng(seed, 0xC0).child(int(split))
    return cvnet.extract_patches(frames, net, sigma2, rng, per_frame), man


def cmd_train(args, cfg: CliConfig) -> int:
    _override(cfg, "train", epochs=args.epochs, seed=args.seed, lr=args.lr, batch=args.batch)
    if args.lcb is not None:
        _override(cfg, "net", use_lcb=args.lcb)
    tr, man = _patches_from_dir(args.data, cfg.net, cfg.dataset.sigma2, cfg.train.seed, dhdc.Split.TRAIN, 1)
    va = _patches_from_dir(args.val, cfg.net, cfg.dataset.sigma2, cfg.train.seed, dhdc.Split.VAL, 1)[0] \
        if args.val else None
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    print(f"{cvnet.parameter_count(cfg.net)} parameters, {len(tr)} training patches")
    try:
        params, log = cvnet.train(tr, cfg.net, cfg.train, va,
                                  progress=lambda e, lg: print(f"epoch {e}: train {lg.train_loss[-1]:.6g}"
                                                               f" val {lg.val_loss[-1]:.6g}", flush=True))
    except TrainingDiverged as exc:
        if exc.last_params is not None:
            cvnet.save_checkpoint(args.out, exc.last_params, cfg.net)
        raise
    cvnet.save_checkpoint(args.out, params, cfg.net)
    out_dir = Path(args.out).parent
    harness.write_csv(out_dir / (Path(args.out).stem + "_log.csv"), ["epoch", "train_loss", "val_loss"],
                      [(i, a, b) for i, (a, b) in enumerate(zip(log.train_loss, log.val_loss))])
    _write_config(cfg, out_dir)
    print(f"best epoch {log.best_epoch}, checkpoint {args.out}")
    return 0


def cmd_eval(args, cfg: CliConfig) -> int:
    _override(cfg, "cfar", alpha=args.alpha)
    params, net = cvnet.load_checkpoint(args.ckpt)
    plan = cfg.experiment_plan(noise_frames=args.noise_frames or 0)
    dec = harness.NetDecider("net", params, net, cfg.dataset.sigma2)
    nm = harness.dataset_manifest(plan, args.seed, dhdc.Split.NOISE)
    thr = dec.calibrate([harness.noise_frame(nm, i) for i in range(plan.calibration_frames)], plan.alpha)
    print(f"threshold {thr.value!r} from {thr.n_cells} noise cells" + (" (degenerate)" if thr.degenerate else ""))
    return _score_and_write(_labelled_frames(args.inputs), dec.detect, args.out, lambda r: r.shape)


PRESETS = {
    "desk": {},
    "smoke": dict(seeds=(0,), train_frames=16, val_frames=4, eval_frames=2, sweep_frames=1, epochs=1,
                  snr_sweep=(12.0, 50.0)),
    "acceptance": harness.ACCEPTANCE_OVERRIDES,
}


def cmd_run(args, cfg: CliConfig) -> int:
    over = dict(PRESETS[args.preset])
    if args.seeds:
        over["seeds"] = tuple(args.seeds)
    if args.epochs:
        over["epochs"] = args.epochs
    if args.sweep:
        over["snr_sweep"] = tuple(args.sweep)
    plan = cfg.experiment_plan(**over)
    modes = list(harness.TrainMode) if args.mode == "all" else [harness.TrainMode(args.mode.upper())]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.plan = kv.dataclass_items(plan)
    _write_config(cfg, out / "manifests")
    try:
        report = harness.run_matrix(plan, modes, progress=lambda m: print(m, flush=True), workers=args.workers)
    except TrainingDiverged as exc:
        partial = getattr(exc, "partial_report", None)
        if partial is not None:
            partial.notes.append(f"aborted: {exc}")
            _save_report(partial, out, plan)
        raise
    _save_report(report, out, plan)
    print(harness.summary_text(report), end="")
    return 0


def _save_report(report, out: Path, plan) -> None:
    (out / "report.json").write_text(harness.report_to_json(report), encoding="utf-8")
    harness.render_report(report, out, plan.radar, plan.sigma2, plan.net.lcb_w)


def cmd_report(args, cfg: CliConfig) -> int:
    src = Path(args.input)
    path = src / "report.json" if src.is_dir() else src
    try:
        report = harness.report_from_json(path.read_text(encoding="utf-8"))
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"cannot load report {path}: {exc}") from None
    out = Path(args.out) if args.out else path.parent
    harness.render_report(report, out, cfg.radar, cfg.dataset.sigma2, cfg.net.lcb_w, figures=not args.no_figures)
    print(harness.summary_text(report), end="")
    return 0


# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hdrradar", description="HDR radar detection toolkit")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI file; flags override its keys")
        return p

    p = cmd("gen", "generate a labelled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["mm", "ntm", "MM", "NTM"])
    p.add_argument("--split", choices=[s.name.lower() for s in dhdc.Split])
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_gen)

    p = cmd("lcb", "apply the LC function to an RDF1 frame")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--w", type=float, help="absolute threshold (overrides --w-db)")
    p.add_argument("--w-db", type=float, dest="w_db", help="threshold in dB above the noise RMS amplitude")
    p.add_argument("--epsilon", type=float)
    p.set_defaults(func=cmd_lcb)

    p = cmd("cfar", "run CA-CFAR on frames or datasets")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", help="detections CSV")
    p.add_argument("--alpha", type=float)
    p.add_argument("--train", type=int, nargs=2, metavar=("DOPPLER", "RANGE"))
    p.add_argument("--guard", type=int, nargs=2, metavar=("DOPPLER", "RANGE"))
    p.set_defaults(func=cmd_cfar)

    p = cmd("train", "train the complex UNet on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--lcb", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_train)

    p = cmd("eval", "calibrate a checkpoint on noise and score frames")
    p.add_argument("--ckpt", required=True)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", help="detections CSV")
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int, default=0, help="seed of the calibration noise frames")
    p.add_argument("--noise-frames", type=int, dest="noise_frames")
    p.set_defaults(func=cmd_eval)

    p = cmd("run", "full MM / NTM / MM+LCB experiment matrix")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="all", choices=["all", "mm", "ntm", "mm_lcb"])
    p.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--epochs", type=int)
    p.add_argument("--sweep", type=float, nargs="+", help="fixed-SNR evaluation levels in dB")
    p.add_argument("--workers", type=int, default=1, help="seeds trained in parallel processes")
    p.set_defaults(func=cmd_run)

    p = cmd("report", "re-render tables and figures from report.json")
    p.add_argument("input", help="run directory or report.json")
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true", dest="no_figures")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except HdrRadarError as exc:
        print(f"hdrradar: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"hdrradar: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"hdrradar: numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
