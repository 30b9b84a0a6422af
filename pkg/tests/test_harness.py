import math

import numpy as np
import pytest

from hdrradar import cvnet, harness as H
from hdrradar.detector import CfarConfig
from hdrradar.errors import ConfigError, ParameterError
from hdrradar.signal_model import RadarConfig


def tiny_plan(**kw):
    base = dict(radar=RadarConfig(M=32, N=64), net=cvnet.NetConfig(patch=16), alpha=1e-2, seeds=(0,),
                train_frames=3, val_frames=2, eval_frames=2, sweep_frames=2, epochs=1, batch=4,
                snr_sweep=(12.0, 40.0))
    base.update(kw)
    return H.ExperimentPlan(**base)


@pytest.fixture(scope="module")
def tiny_report():
    return H.run_matrix(tiny_plan())


def test_plan_defaults_and_validation():
    p = H.ExperimentPlan()
    assert p.calibration_frames == 8
    assert p.net == cvnet.NetConfig()
    assert p.net_for(H.TrainMode.MM_LCB).use_lcb and not p.net_for(H.TrainMode.MM).use_lcb
    for bad in (dict(seeds=()), dict(alpha=0.5), dict(train_frames=0), dict(epochs=0), dict(sweep_frames=-1)):
        with pytest.raises(ParameterError):
            H.ExperimentPlan(**bad)


def test_tally_rates():
    t = H.Tally()
    assert math.isnan(t.pd) and math.isnan(t.pfa)
    t = H.Tally(hits=3, targets=4, false_alarms=1, cells=1000)
    assert t.pd == 0.75 and t.pfa == 1e-3


def test_mean_std():
    assert H.mean_std([1.0, 2.0, 3.0]) == (2.0, 1.0)
    m, s = H.mean_std([5.0, math.nan])
    assert m == 5.0 and math.isnan(s)


def test_pfa_flag_band():
    c = H.CellResult("MM", 0, noise=H.Tally(false_alarms=1, cells=10_000))
    assert not c.pfa_flag(1e-4)
    assert c.pfa_flag(1e-2)
    assert H.CellResult("MM", 0).pfa_flag(1e-4)


def test_run_matrix_structure(tiny_report):
    rep = tiny_report
    assert rep.modes() == ["MM", "NTM", "MM_LCB", "CFAR"]
    assert rep.sweep_gammas() == [12.0, 40.0]
    for c in rep.cells:
        assert c.noise.cells > 0 and c.overall.targets > 0
        assert c.overall.targets == c.weak.targets + c.strong.targets
        assert set(c.sweep) == {12.0, 40.0}
    mm, lcb = rep.for_mode("MM")[0], rep.for_mode(H.TrainMode.MM_LCB)[0]
    assert mm.params == lcb.params
    assert len(mm.val_loss) == 1
    assert any(name.endswith("_noise.txt") for name in rep.manifests)


def test_run_matrix_deterministic(tiny_report):
    again = H.run_matrix(tiny_plan())
    assert H.report_to_json(again) == H.report_to_json(tiny_report)


def test_parallel_seeds_match_sequential():
    plan = tiny_plan(seeds=(0, 1), snr_sweep=(12.0,))
    modes = (H.TrainMode.MM, H.TrainMode.MM_LCB)
    a = H.run_matrix(plan, modes)
    b = H.run_matrix(plan, modes, workers=2)
    assert H.report_to_json(a) == H.report_to_json(b)
    assert [c.seed for c in b.cells] == [0, 0, 0, 1, 1, 1]


def test_same_patches_for_mm_and_lcb():
    plan = tiny_plan()
    a, _ = H.training_patches(plan, 0, H.Mode.MM, H.Split.TRAIN, plan.net_for(H.TrainMode.MM))
    b, _ = H.training_patches(plan, 0, H.Mode.MM, H.Split.TRAIN, plan.net_for(H.TrainMode.MM_LCB))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_report_json_round_trip(tiny_report):
    # the CFAR threshold is NaN, so compare serialized forms
    text = H.report_to_json(tiny_report)
    back = H.report_from_json(text)
    assert H.report_to_json(back) == text
    assert back.cells[0].sweep.keys() == tiny_report.cells[0].sweep.keys()


def test_plan_text_round_trip():
    from hdrradar import config as kv
    plan = tiny_plan(snr_sweep=(11.0, 70.0), seeds=(4, 5))
    cp = kv.parse_text(H.plan_to_text(plan))
    back = H.plan_from_sections({s: dict(cp[s]) for s in cp.sections()})
    assert back == plan
    with pytest.raises(ConfigError):
        H.plan_from_sections({"planx": {}})


def test_csv_round_trip_and_empty_report(tmp_path, tiny_report):
    H.render_report(tiny_report, tmp_path / "a", figures=False)
    rows = H.read_csv(tmp_path / "a" / "tables" / "table1_overall.csv")
    assert [r["mode"] for r in rows[:4]] == ["MM", "NTM", "MM_LCB", "CFAR"]
    assert [r["seed"] for r in rows[4:6]] == ["mean", "std"]
    assert rows[0]["params"] == str(tiny_report.cells[0].params)
    sweep = H.read_csv(tmp_path / "a" / "tables" / "table3_strong_sweep.csv")
    assert {r["gamma_db"] for r in sweep} == {"40.0"}
    H.render_report(H.DetectionReport(), tmp_path / "b", figures=False)
    text = (tmp_path / "b" / "tables" / "table2_weak_sweep.csv").read_text().strip()
    assert text == ",".join(H.SWEEP_FIELDS)


def test_figures_written(tmp_path, tiny_report):
    out = H.render_report(tiny_report, tmp_path, radar=RadarConfig(M=32, N=64))
    pngs = sorted(p.name for p in out if p.suffix == ".png")
    assert pngs == ["hdr_example.png", "pd_vs_snr.png", "validation_loss.png"]
    assert all((tmp_path / "figures" / n).stat().st_size > 1000 for n in pngs)


def test_trend_check_logic():
    def cell(mode, seed, gamma, tally):
        return H.CellResult(mode, seed, sweep={gamma: tally})
    rep = H.DetectionReport(alpha=1e-4)
    for s in (0, 1, 2):
        rep.cells.append(cell("NTM", s, 40.0, H.Tally(false_alarms=20, cells=10_000)))
        rep.cells.append(cell("MM", s, 12.0, H.Tally(hits=5, targets=10)))
        rep.cells.append(cell("MM_LCB", s, 12.0, H.Tally(hits=6 if s else 4, targets=10)))
    tr = H.trend_check(rep)
    assert tr.ntm_collapse and tr.lcb_wins == 2 and tr.passed
    rep.cells[0].sweep[40.0] = H.Tally(false_alarms=1, cells=10_000)
    assert not H.trend_check(rep).passed


def test_cfar_detects_very_strong_targets():
    plan = tiny_plan(radar=RadarConfig(), alpha=1e-4)
    d = H.CfarDecider(CfarConfig(alpha=1e-4))
    t = H.snr_sweep_eval(d, plan, 60.0, frames=3)
    assert t.targets > 0 and t.pd >= 0.99


def test_sweep_frames_fix_snr():
    plan = tiny_plan()
    man = H.dataset_manifest(plan, 0, H.Split.SWEEP, stream=H.sweep_stream(13.0))
    fr = H.fixed_snr_frame(man, 0, 13.0)
    assert fr.truth and all(t.spec.gamma == 13.0 for t in fr.truth)
    assert H.sweep_stream(13.0) != H.sweep_stream(13.5)
    assert not H.noise_frame(man, 0).truth


def test_summary_mentions_modes(tiny_report):
    text = H.summary_text(tiny_report)
    for m in ("MM", "NTM", "MM_LCB", "CFAR"):
        assert m in text
    assert "alpha = 0.01" in text
