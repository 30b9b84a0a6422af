import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdrradar import cvnet
from hdrradar.errors import ChecksumError, DimensionError, FormatError, ParameterError, TruncatedFile, TrainingDiverged
from hdrradar.lcb import LcbParams, lc_magnitude

from conftest import cplx, fd_check


def _linear_probe(g, shape):
    c = cplx(g, *shape)
    return c, lambda y: float(np.sum(c.real * y.real + c.imag * y.imag))


def test_conv_gradients():
    g = np.random.default_rng(0)
    x, W, b = cplx(g, 3, 2, 6, 6), cplx(g, 4, 3, 3, 3), cplx(g, 4)
    c, L = _linear_probe(g, (4, 2, 6, 6))
    y, cache = cvnet.conv_forward(x, W, b)
    dx, dW, db = cvnet.conv_backward(c, cache)
    assert fd_check(lambda: L(cvnet.conv_forward(x, W, b)[0]), [x, W, b], [dx, dW, db], g) < 1e-5


def test_conv_matches_direct_sum():
    g = np.random.default_rng(1)
    x, W, b = cplx(g, 2, 1, 5, 4), cplx(g, 3, 2, 3, 3), cplx(g, 3)
    y, _ = cvnet.conv_forward(x, W, b)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for o in range(3):
        for i in range(5):
            for j in range(4):
                ref = b[o] + np.sum(W[o] * xp[:, 0, i:i + 3, j:j + 3])
                assert abs(y[o, 0, i, j] - ref) < 1e-12


def test_crelu_gradient_and_split():
    g = np.random.default_rng(2)
    x = cplx(g, 2, 1, 4, 4)
    y, cache = cvnet.crelu_forward(x)
    assert np.all(y.real >= 0) and np.all(y.imag >= 0)
    c, L = _linear_probe(g, x.shape)
    dx = cvnet.crelu_backward(c, cache)
    assert fd_check(lambda: L(cvnet.crelu_forward(x)[0]), [x], [dx], g) < 1e-5


def test_magpool_picks_largest_and_gradient():
    g = np.random.default_rng(3)
    x = cplx(g, 2, 1, 4, 6)
    y, cache = cvnet.magpool_forward(x)
    assert y.shape == (2, 1, 2, 3)
    blk = x[0, 0, 0:2, 2:4].ravel()
    assert y[0, 0, 0, 1] == blk[np.argmax(np.abs(blk))]
    c, L = _linear_probe(g, y.shape)
    dx = cvnet.magpool_backward(c, cache)
    assert fd_check(lambda: L(cvnet.magpool_forward(x)[0]), [x], [dx], g) < 1e-5


def test_upconv_gradient():
    g = np.random.default_rng(4)
    x, W, b = cplx(g, 3, 2, 3, 4), cplx(g, 3, 2, 2, 2), cplx(g, 2)
    y, cache = cvnet.upconv_forward(x, W, b)
    assert y.shape == (2, 2, 6, 8)
    assert abs(y[1, 0, 3, 4] - (b[1] + np.sum(x[:, 0, 1, 2] * W[:, 1, 1, 0]))) < 1e-12
    c, L = _linear_probe(g, y.shape)
    dx, dW, db = cvnet.upconv_backward(c, cache)
    assert fd_check(lambda: L(cvnet.upconv_forward(x, W, b)[0]), [x, W, b], [dx, dW, db], g) < 1e-5


def test_head_gradient():
    g = np.random.default_rng(5)
    x, W, b = cplx(g, 3, 2, 4, 4), cplx(g, 1, 3, 1, 1), cplx(g, 1)
    gain, off = np.array([0.7]), np.array([-0.2])
    c = g.normal(size=(2, 4, 4))
    s, cache = cvnet.head_forward(x, W, b, gain, off)
    dx, dW, db, dg, do = cvnet.head_backward(c, cache)
    L = lambda: float(np.sum(c * cvnet.head_forward(x, W, b, gain, off)[0]))
    assert fd_check(L, [x, W, b], [dx, dW, db], g) < 1e-5
    h = 1e-6
    gain[0] += h
    up = L()
    gain[0] -= 2 * h
    dn = L()
    gain[0] += h
    assert abs((up - dn) / (2 * h) - dg[0]) < 1e-6 * max(1, abs(dg[0]))


def test_crop_exact():
    x = np.arange(2 * 8 * 8).reshape(1, 2, 8, 8)
    c, offs = cvnet.crop_to(x, (4, 6))
    assert offs == (2, 1) and c.shape == (1, 2, 4, 6)
    with pytest.raises(DimensionError):
        cvnet.crop_to(x, (5, 6))
    with pytest.raises(DimensionError):
        cvnet.crop_to(x, (10, 6))


@pytest.mark.parametrize("depth,lcb,pos", [(1, False, "input"), (1, True, "input"), (2, True, "mid"), (2, False, "input")])
def test_network_gradient(depth, lcb, pos):
    cfg = cvnet.NetConfig(depth=depth, use_lcb=lcb, lcb_position=pos, lcb_w=1.5, patch=16)
    P = cvnet.init_params(cfg, 1)
    g = np.random.default_rng(depth)
    P.flat += g.normal(0, 0.05, len(P))
    x = 2 * cplx(g, 2, 16, 16)
    y = g.random((2, 16, 16)) < 0.05
    _, grad = cvnet.loss_and_grad(P, cfg, x, y)
    h = 1e-5
    for i in g.choice(len(P), 20, replace=False):
        Q = P.copy()
        Q.flat[i] += h
        lp = cvnet.loss_and_grad(Q, cfg, x, y)[0]
        Q.flat[i] -= 2 * h
        lm = cvnet.loss_and_grad(Q, cfg, x, y)[0]
        num = (lp - lm) / (2 * h)
        assert abs(num - grad[i]) <= 1e-4 * max(abs(num), abs(grad[i]), 1e-8)


def test_zero_input_gives_half():
    cfg = cvnet.NetConfig()
    p = cvnet.forward(cvnet.init_params(cfg), cfg, np.zeros((64, 64), complex))
    assert p.shape == (64, 64)
    assert np.all(p == 0.5)


@given(st.sampled_from([(16, 16), (32, 8), (8, 64)]), st.integers(0, 100), st.booleans())
def test_output_shape_and_range(shape, seed, lcb):
    cfg = cvnet.NetConfig(depth=2, use_lcb=lcb, patch=8)
    g = np.random.default_rng(seed)
    p = cvnet.forward(cvnet.init_params(cfg, seed), cfg, 100 * cplx(g, *shape))
    assert p.shape == shape
    assert np.all((p >= 0) & (p <= 1)) and np.all(np.isfinite(p))


def test_bad_shapes_rejected():
    cfg = cvnet.NetConfig(depth=2)
    with pytest.raises(DimensionError):
        cvnet.forward(cvnet.init_params(cfg), cfg, np.zeros((6, 8), complex))
    with pytest.raises(DimensionError):
        cvnet.loss_from_logits(np.zeros((2, 2)), np.zeros((3, 3)))


def test_config_validation():
    for bad in (dict(depth=3), dict(kernel=2), dict(lcb_position="end"), dict(patch=30, depth=2), dict(lcb_w=-1.0)):
        with pytest.raises(ParameterError):
            cvnet.NetConfig(**bad)


def test_lcb_is_plug_and_play():
    a, b = cvnet.NetConfig(use_lcb=False), cvnet.NetConfig(use_lcb=True)
    assert cvnet.parameter_count(a) == cvnet.parameter_count(b) == 1532
    assert 100 <= cvnet.parameter_count(a) <= 10_000


def test_lcb_bounds_input_span():
    # a 60 dB peak at the input is compressed to w + ln(1 - w + max|x|)
    w = cvnet.NetConfig().lcb_w
    x = np.ones((64, 64), complex)
    x[5, 5] = 1000.0
    y = cvnet.lcb_layer_forward(x[None, None], LcbParams(w))[0]
    assert np.abs(y).max() <= w + math.log(1 - w + 1000.0) + 1e-12
    assert np.abs(y).max() == pytest.approx(float(lc_magnitude(1000.0, w)))


def test_loss_values():
    m = np.zeros((4, 4), bool)
    m[1, 1] = True
    assert cvnet.loss(m.astype(float), m) == pytest.approx(0.0, abs=1e-10)
    assert cvnet.loss(np.full((4, 4), 0.5), m, pos_weight=1.0) == pytest.approx(math.log(2))
    assert cvnet.auto_pos_weight(m) == 16.0
    assert cvnet.auto_pos_weight(np.zeros((4, 4))) == 1.0
    big = np.zeros((100, 100), bool)
    big[0, 0] = True
    assert cvnet.auto_pos_weight(big) == 1000.0
    s = np.array([[-3.0, 40.0], [0.0, 2.0]])
    y = np.array([[False, True], [True, False]])
    p = 1 / (1 + np.exp(-s))
    assert cvnet.loss_from_logits(s, y)[0] == pytest.approx(cvnet.loss(p, y), rel=1e-9)


def test_loss_gradient_in_logits():
    g = np.random.default_rng(0)
    s = g.normal(size=(5, 5)) * 3
    y = g.random((5, 5)) < 0.2
    _, ds = cvnet.loss_from_logits(s, y)
    h = 1e-6
    for i, j in [(0, 0), (2, 3), (4, 4)]:
        sp, sm = s.copy(), s.copy()
        sp[i, j] += h
        sm[i, j] -= h
        num = (cvnet.loss_from_logits(sp, y)[0] - cvnet.loss_from_logits(sm, y)[0]) / (2 * h)
        assert num == pytest.approx(ds[i, j], rel=1e-5, abs=1e-10)


def _toy_patches(n=6, seed=0, patch=16):
    g = np.random.default_rng(seed)
    x = cplx(g, n, patch, patch) / math.sqrt(2)
    y = np.zeros((n, patch, patch), bool)
    for k in range(n):
        r, c = g.integers(patch, size=2)
        x[k, r, c] += 30.0
        y[k, r, c] = True
    return cvnet.PatchSet(x, y)


def test_training_deterministic_and_improves():
    cfg = cvnet.NetConfig(patch=16)
    hp = cvnet.TrainHyper(epochs=4, batch=3, seed=7, lr=1e-2)
    data = _toy_patches()
    p1, log1 = cvnet.train(data, cfg, hp)
    p2, log2 = cvnet.train(data, cfg, hp)
    assert np.array_equal(p1.flat, p2.flat)
    assert abs(log1.val_loss[-1] - log2.val_loss[-1]) <= 1e-12
    assert min(log1.val_loss) < log1.val_loss[0] or log1.best_epoch >= 0
    assert log1.val_loss[log1.best_epoch] == min(log1.val_loss)
    assert np.all(np.isfinite(p1.flat))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence_aborts():
    cfg = cvnet.NetConfig(patch=16)
    data = _toy_patches()
    data.x[0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged) as e:
        cvnet.train(data, cfg, cvnet.TrainHyper(epochs=1, batch=6))
    assert np.all(np.isfinite(e.value.last_params.flat))
    with pytest.raises(ParameterError):
        cvnet.train(cvnet.PatchSet(data.x[:0], data.y[:0]), cfg, cvnet.TrainHyper())


def test_extract_patches(ref_cfg):
    from hdrradar import dhdc
    from hdrradar.numerics import SeededRng
    from hdrradar.signal_model import TargetSpec
    fr = dhdc.build_frame(ref_cfg, [TargetSpec(ref_cfg.ongrid_range(3), ref_cfg.ongrid_velocity(1), 30.0)],
                          1.0, SeededRng(0))
    ps = cvnet.extract_patches([fr], cvnet.NetConfig(), 1.0, np.random.default_rng(0), per_frame=20, target_prob=1.0)
    assert ps.x.shape == (20, 64, 64) and ps.y.shape == (20, 64, 64)
    assert np.all(ps.y.reshape(20, -1).any(axis=1))
    # normalized input: the labelled cell carries the 30 dB peak
    assert np.all(np.abs(ps.x[ps.y]) > 10)


def test_checkpoint_round_trip_and_integrity(tmp_path):
    cfg = cvnet.NetConfig(depth=2, use_lcb=True)
    P = cvnet.init_params(cfg, 3)
    path = tmp_path / "m.ckpt"
    cvnet.save_checkpoint(path, P, cfg)
    Q, cfg2 = cvnet.load_checkpoint(path)
    assert cfg2 == cfg and np.array_equal(Q.flat, P.flat)
    blob = bytearray(path.read_bytes())
    blob[-30] ^= 1
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        cvnet.load_checkpoint(path)
    path.write_bytes(bytes(blob[:50]))
    with pytest.raises(TruncatedFile):
        cvnet.load_checkpoint(path)
    path.write_bytes(b"XXXXXXXX" + bytes(blob[8:]))
    with pytest.raises(FormatError):
        cvnet.load_checkpoint(path)


def test_mac_count_units():
    cfg = cvnet.NetConfig(use_lcb=True)
    macs = cvnet.mac_count(cfg, (64, 64))
    assert macs["lcb"] == 11 * 64 * 64
    assert macs["enc0"] == 4 * 64 * 64 * 4 * 9
    assert set(cvnet.mac_count(cvnet.NetConfig(depth=2))) == {"enc0", "enc1", "bott", "up1", "dec1", "up0", "dec0", "head"}
