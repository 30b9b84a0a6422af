"""Small complex-valued UNet with hand-written backpropagation.

Inputs are complex128 arrays shaped (batch, height, width). Internally
activations are laid out (channels, batch, height, width) so each
convolution is a single matrix product.
Gradients use the split-real convention: for a real loss L and complex
quantity z, the gradient is packed as dL/dRe(z) + 1j * dL/dIm(z). With
that packing a complex linear map y = W x back-propagates as
dW = G conj(x) and dx = conj(W) G.
"""
from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .errors import ChecksumError, DimensionError, FormatError, ParameterError, TruncatedFile, TrainingDiverged, VersionMismatch
from .lcb import LcbParams
from .numerics import SeededRng


@dataclass(frozen=True)
class NetConfig:
    depth: int = 1
    base_channels: int = 4
    kernel: int = 3
    use_lcb: bool = False
    lcb_w: float = 10.0 ** (14.0 / 20.0)
    lcb_epsilon: float = 1e-12
    lcb_position: str = "input"   # "input" or "mid" (after the first encoder stage)
    patch: int = 64

    def __post_init__(self):
        if self.depth not in (1, 2):
            raise ParameterError("depth must be 1 or 2")
        if self.base_channels < 1 or self.kernel < 1 or self.kernel % 2 == 0:
            raise ParameterError("need base_channels >= 1 and an odd kernel size")
        if self.lcb_position not in ("input", "mid"):
            raise ParameterError("lcb_position must be 'input' or 'mid'")
        if self.patch % (2 ** self.depth):
            raise ParameterError("patch must be divisible by 2**depth")
        LcbParams(self.lcb_w, self.lcb_epsilon)

    @property
    def lcb(self) -> LcbParams:
        return LcbParams(self.lcb_w, self.lcb_epsilon)


class NetworkParams:
    """Flat float64 store; complex tensors are interleaved (re, im) views."""

    def __init__(self, specs):
        self.registry = {}
        off = 0
        for name, shape, is_complex in specs:
            size = int(np.prod(shape)) * (2 if is_complex else 1)
            self.registry[name] = (off, tuple(shape), is_complex)
            off += size
        self.flat = np.zeros(off)

    def __len__(self):
        return self.flat.size

    def view(self, name, flat=None):
        flat = self.flat if flat is None else flat
        off, shape, is_complex = self.registry[name]
        if is_complex:
            n = int(np.prod(shape))
            return flat[off:off + 2 * n].view(np.complex128).reshape(shape)
        return flat[off:off + int(np.prod(shape))].reshape(shape)

    def __getitem__(self, name):
        return self.view(name)

    def slice_of(self, name) -> slice:
        off, shape, is_complex = self.registry[name]
        return slice(off, off + int(np.prod(shape)) * (2 if is_complex else 1))

    def copy(self) -> "NetworkParams":
        out = NetworkParams.__new__(NetworkParams)
        out.registry = dict(self.registry)
        out.flat = self.flat.copy()
        return out

    def layer_sizes(self) -> dict:
        return {k: (v[1], int(np.prod(v[1])) * (2 if v[2] else 1)) for k, v in self.registry.items()}


# --------------------------------------------------------------------------
# layers: each forward returns (output, cache); backward maps output
# gradients to (input gradient, {param name: gradient})

def conv_forward(x, W, b):
    """'Same' complex convolution as one GEMM over im2col columns."""
    k = W.shape[-1]
    p = k // 2
    C, B, H, Wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))                  # C,B,H,W,k,k
    cols = np.ascontiguousarray(win.transpose(0, 4, 5, 1, 2, 3)).reshape(C * k * k, -1)
    out = W.reshape(W.shape[0], -1) @ cols + b[:, None]
    return out.reshape(-1, B, H, Wd), (cols, x.shape, W)


def conv_backward(g, cache):
    cols, (C, B, H, Wd), W = cache
    cout, _, k, _ = W.shape
    p = k // 2
    g2 = g.reshape(cout, -1)
    dW = (cols @ g2.conj().T).conj().T.reshape(W.shape)
    dcols = (W.reshape(cout, -1).conj().T @ g2).reshape(C, k, k, B, H, Wd)
    dxp = np.zeros((C, B, H + 2 * p, Wd + 2 * p), dtype=np.complex128)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + H, j:j + Wd] += dcols[:, i, j]
    return dxp[:, :, p:p + H, p:p + Wd], dW, g2.sum(axis=1)


def crelu_forward(x):
    re_on = x.real > 0
    im_on = x.imag > 0
    return x.real * re_on + 1j * (x.imag * im_on), (re_on, im_on)


def crelu_backward(g, cache):
    re_on, im_on = cache
    return g.real * re_on + 1j * (g.imag * im_on)


def magpool_forward(x):
    """2x2 blocks -> the element of largest magnitude in each block."""
    C, B, H, W = x.shape
    blocks = x.reshape(C, B, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(C, B, H // 2, W // 2, 4)
    idx = np.argmax(np.abs(blocks), axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def magpool_backward(g, cache):
    idx, shape = cache
    C, B, H, W = shape
    blocks = np.zeros((C, B, H // 2, W // 2, 4), dtype=np.complex128)
    np.put_along_axis(blocks, idx[..., None], g[..., None], axis=-1)
    return blocks.reshape(C, B, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def upconv_forward(x, W, b):
    """2x2 stride-2 transposed convolution; W is (cin, cout, 2, 2)."""
    C, B, H, Wd = x.shape
    cout = W.shape[1]
    out = W.reshape(C, -1).T @ x.reshape(C, -1)                         # (cout*4, B*H*W)
    out = out.reshape(cout, 2, 2, B, H, Wd).transpose(0, 3, 4, 1, 5, 2).reshape(cout, B, 2 * H, 2 * Wd)
    return out + b[:, None, None, None], (x, W)


def upconv_backward(g, cache):
    x, W = cache
    C, B, H, Wd = x.shape
    cout = W.shape[1]
    g2 = g.reshape(cout, B, H, 2, Wd, 2).transpose(0, 3, 5, 1, 2, 4).reshape(cout * 4, -1)
    xf = x.reshape(C, -1)
    dW = (g2 @ xf.conj().T).T.reshape(W.shape)
    dx = (W.reshape(C, -1).conj() @ g2).reshape(x.shape)
    return dx, dW, g2.reshape(cout, -1).sum(axis=1)


def crop_to(skip, target_hw):
    """Centre crop of ``skip`` to spatial size ``target_hw``; returns (crop, offsets)."""
    H, W = skip.shape[-2:]
    th, tw = target_hw
    if th > H or tw > W:
        raise DimensionError(f"cannot crop {H}x{W} to {th}x{tw}")
    if (H - th) % 2 or (W - tw) % 2:
        raise DimensionError(f"crop {H}x{W} -> {th}x{tw} has no exact centre")
    oh, ow = (H - th) // 2, (W - tw) // 2
    return skip[..., oh:oh + th, ow:ow + tw], (oh, ow)


def lcb_layer_forward(x, p: LcbParams):
    return kernels.lcb_forward(x, p.w, p.epsilon), x


def lcb_layer_backward(g, cache, p: LcbParams):
    return kernels.lcb_backward(cache, g, p.w, p.epsilon)


def head_forward(x, Wh, bh, gain, offset):
    z, conv_cache = conv_forward(x, Wh, bh)                       # 1,B,H,W
    r = np.abs(z[0])
    s = gain[0] * r + offset[0]
    return s, (conv_cache, z[0], r, gain[0])


def head_backward(ds, cache):
    conv_cache, z, r, gain = cache
    dgain = np.array([np.sum(ds * r)])
    doffset = np.array([np.sum(ds)])
    dr = ds * gain
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(r > 0, z / np.where(r > 0, r, 1.0), 0.0)
    dz = (dr * unit)[None]
    dx, dW, db = conv_backward(dz, conv_cache)
    return dx, dW, db, dgain, doffset


def sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * s))


# --------------------------------------------------------------------------
# network

def _channels(cfg: NetConfig, level: int) -> int:
    return cfg.base_channels * 2 ** level


def param_specs(cfg: NetConfig):
    k = cfg.kernel
    specs = []
    cin = 1
    for lvl in range(cfg.depth):
        c = _channels(cfg, lvl)
        specs += [(f"enc{lvl}.W", (c, cin, k, k), True), (f"enc{lvl}.b", (c,), True)]
        cin = c
    cb = _channels(cfg, cfg.depth)
    specs += [("bott.W", (cb, cin, k, k), True), ("bott.b", (cb,), True)]
    cup = cb
    for lvl in reversed(range(cfg.depth)):
        c = _channels(cfg, lvl)
        specs += [(f"up{lvl}.W", (cup, c, 2, 2), True), (f"up{lvl}.b", (c,), True),
                  (f"dec{lvl}.W", (c, 2 * c, k, k), True), (f"dec{lvl}.b", (c,), True)]
        cup = c
    specs += [("head.W", (1, cfg.base_channels, 1, 1), True), ("head.b", (1,), True),
              ("head.gain", (1,), False), ("head.offset", (1,), False)]
    return specs


def init_params(cfg: NetConfig, seed: int = 0) -> NetworkParams:
    """He-style complex init (variance split between re and im); zero biases."""
    params = NetworkParams(param_specs(cfg))
    g = SeededRng(seed, 0x1A17).generator()
    for name, (off, shape, is_complex) in params.registry.items():
        v = params.view(name)
        if name.endswith(".W"):
            fan_in = int(np.prod(shape[1:])) if not name.startswith("up") else shape[0] * 4
            std = math.sqrt(1.0 / fan_in)
            v[...] = (g.standard_normal(shape) + 1j * g.standard_normal(shape)) * std
    params["head.gain"][...] = 1.0
    return params


def parameter_count(cfg: NetConfig) -> int:
    return len(NetworkParams(param_specs(cfg)))


def _as_batch(x) -> np.ndarray:
    x = np.asarray(getattr(x, "data", x), dtype=np.complex128)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    if x.ndim != 4 or x.shape[1] != 1:
        raise DimensionError(f"expected (H, W), (B, H, W) or (B, 1, H, W) input, got {x.shape}")
    return x.transpose(1, 0, 2, 3)      # internal layout is (C, B, H, W)


def forward_logits(params: NetworkParams, cfg: NetConfig, x, keep_cache: bool = True):
    """Logit map (B, H, W) and, if requested, the tape for :func:`backward`."""
    x = _as_batch(x)
    H, W = x.shape[-2:]
    if H % (2 ** cfg.depth) or W % (2 ** cfg.depth):
        raise DimensionError(f"input {H}x{W} not divisible by 2**{cfg.depth}")
    tape = []
    lp = cfg.lcb
    if cfg.use_lcb and cfg.lcb_position == "input":
        x, c = lcb_layer_forward(x, lp)
        tape.append(("lcb", c))
    skips = []
    for lvl in range(cfg.depth):
        x, c = conv_forward(x, params[f"enc{lvl}.W"], params[f"enc{lvl}.b"])
        tape.append(("conv", f"enc{lvl}", c))
        x, c = crelu_forward(x)
        tape.append(("crelu", c))
        if cfg.use_lcb and cfg.lcb_position == "mid" and lvl == 0:
            x, c = lcb_layer_forward(x, lp)
            tape.append(("lcb", c))
        skips.append(x)
        x, c = magpool_forward(x)
        tape.append(("pool", lvl, c))
    x, c = conv_forward(x, params["bott.W"], params["bott.b"])
    tape.append(("conv", "bott", c))
    x, c = crelu_forward(x)
    tape.append(("crelu", c))
    for lvl in reversed(range(cfg.depth)):
        x, c = upconv_forward(x, params[f"up{lvl}.W"], params[f"up{lvl}.b"])
        tape.append(("up", f"up{lvl}", c))
        skip, offs = crop_to(skips[lvl], x.shape[-2:])
        tape.append(("concat", lvl, (skips[lvl].shape, offs, skip.shape[0])))
        x = np.concatenate([skip, x], axis=0)
        x, c = conv_forward(x, params[f"dec{lvl}.W"], params[f"dec{lvl}.b"])
        tape.append(("conv", f"dec{lvl}", c))
        x, c = crelu_forward(x)
        tape.append(("crelu", c))
    s, c = head_forward(x, params["head.W"], params["head.b"], params["head.gain"], params["head.offset"])
    tape.append(("head", c))
    return s, (tape if keep_cache else None)


def forward(params: NetworkParams, cfg: NetConfig, x) -> np.ndarray:
    """Per-cell detection probability, same spatial shape as the input."""
    s, _ = forward_logits(params, cfg, x, keep_cache=False)
    p = sigmoid(s)
    return p[0] if np.ndim(getattr(x, "data", x)) == 2 else p


def backward(params: NetworkParams, cfg: NetConfig, tape, dlogits, return_input_grad: bool = False):
    """Flat parameter gradient for upstream logit gradient ``dlogits``."""
    grad = np.zeros(len(params))
    lp = cfg.lcb
    g = None
    skip_grads = {}
    for entry in reversed(tape):
        kind = entry[0]
        if kind == "head":
            g, dW, db, dgain, doff = head_backward(dlogits, entry[1])
            params.view("head.W", grad)[...] = dW
            params.view("head.b", grad)[...] = db
            params.view("head.gain", grad)[...] = dgain
            params.view("head.offset", grad)[...] = doff
        elif kind == "crelu":
            g = crelu_backward(g, entry[1])
        elif kind == "conv":
            g, dW, db = conv_backward(g, entry[2])
            params.view(f"{entry[1]}.W", grad)[...] += dW
            params.view(f"{entry[1]}.b", grad)[...] += db
        elif kind == "up":
            g, dW, db = upconv_backward(g, entry[2])
            params.view(f"{entry[1]}.W", grad)[...] += dW
            params.view(f"{entry[1]}.b", grad)[...] += db
        elif kind == "concat":
            full_shape, (oh, ow), cs = entry[2]
            dskip = np.zeros(full_shape, dtype=np.complex128)
            h, w = g.shape[-2:]
            dskip[..., oh:oh + h, ow:ow + w] = g[:cs]
            skip_grads[entry[1]] = dskip
            g = g[cs:]
        elif kind == "pool":
            # the pooled tensor was also saved as a skip; add its gradient here
            g = magpool_backward(g, entry[2]) + skip_grads.pop(entry[1])
        elif kind == "lcb":
            g = lcb_layer_backward(g, entry[1], lp)
    if return_input_grad:
        return grad, g[0]
    return grad


@dataclass
class PatchSet:
    x: np.ndarray       # (n, H, W) complex, noise-normalized
    y: np.ndarray       # (n, H, W) bool

    def __len__(self):
        return len(self.x)


def normalize_rdm(rdm, sigma2: float) -> np.ndarray:
    """Scale an RDM so noise has unit power per cell."""
    data = np.asarray(getattr(rdm, "data", rdm), dtype=np.complex128)
    m, n = data.shape[-2:]
    return data / math.sqrt(m * n * sigma2)


def predict_frame(params: NetworkParams, cfg: NetConfig, rdm, sigma2: float) -> np.ndarray:
    """Probability map for one full frame."""
    return forward(params, cfg, normalize_rdm(rdm, sigma2))


def mac_count(cfg: NetConfig, shape=None) -> dict:
    """Real multiply-accumulates per layer for one input of ``shape``.

    A complex MAC counts as four real ones; the LCB stage costs 11 per element.
    """
    H, W = shape if shape is not None else (cfg.patch, cfg.patch)
    k2 = cfg.kernel ** 2
    out = {}
    if cfg.use_lcb and cfg.lcb_position == "input":
        out["lcb"] = 11 * H * W
    cin, h, w = 1, H, W
    for lvl in range(cfg.depth):
        c = _channels(cfg, lvl)
        out[f"enc{lvl}"] = 4 * h * w * c * cin * k2
        if cfg.use_lcb and cfg.lcb_position == "mid" and lvl == 0:
            out["lcb"] = 11 * h * w * c
        cin, h, w = c, h // 2, w // 2
    cb = _channels(cfg, cfg.depth)
    out["bott"] = 4 * h * w * cb * cin * k2
    cup = cb
    for lvl in reversed(range(cfg.depth)):
        c = _channels(cfg, lvl)
        out[f"up{lvl}"] = 4 * h * w * cup * c * 4
        h, w = 2 * h, 2 * w
        out[f"dec{lvl}"] = 4 * h * w * c * 2 * c * k2
        cup = c
    out["head"] = 4 * h * w * cfg.base_channels
    return out


def extract_patches(frames, cfg: NetConfig, sigma2: float, rng, per_frame: int = 1,
                    target_prob: float = 0.9) -> PatchSet:
    """Square crops of normalized frames with their truth masks.

    With probability ``target_prob`` a crop is centred near a random truth
    peak (uniform jitter of a quarter patch), otherwise placed uniformly.
    Doppler wraps; range is clamped inside the frame.
    """
    g = rng.generator() if isinstance(rng, SeededRng) else rng
    P = cfg.patch
    xs, ys = [], []
    for fr in frames:
        data = normalize_rdm(fr.rdm, sigma2)
        m, n = data.shape
        if P > n:
            raise DimensionError(f"patch {P} wider than frame ({n} range bins)")
        cells = np.argwhere(fr.mask)
        for _ in range(per_frame):
            if len(cells) and g.random() < target_prob:
                d, r = cells[g.integers(len(cells))]
                j = g.integers(-(P // 4), P // 4 + 1, size=2)
                d0 = int(d + j[0] - P // 2)
                r0 = int(np.clip(r + j[1] - P // 2, 0, n - P))
            else:
                d0 = int(g.integers(m))
                r0 = int(g.integers(n - P + 1))
            rows = np.arange(d0, d0 + P) % m
            xs.append(data[rows, r0:r0 + P])
            ys.append(fr.mask[rows, r0:r0 + P])
    if not xs:
        return PatchSet(np.zeros((0, P, P), np.complex128), np.zeros((0, P, P), bool))
    return PatchSet(np.stack(xs), np.stack(ys))


def concat_patches(sets) -> PatchSet:
    sets = [s for s in sets if len(s)]
    if not sets:
        raise ParameterError("no patches to concatenate")
    return PatchSet(np.concatenate([s.x for s in sets]), np.concatenate([s.y for s in sets]))


# --------------------------------------------------------------------------
# loss

def _log_sigmoid(s):
    return -np.logaddexp(0.0, -s)


LOG_FLOOR = math.log(1e-12)


def auto_pos_weight(mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    npos = int(mask.sum())
    if npos == 0:
        return 1.0
    return float(np.clip(mask.size / npos, 1.0, 1000.0))


def loss_from_logits(s, mask, pos_weight="auto"):
    """Weighted binary cross-entropy (mean over cells) and dL/ds."""
    y = np.asarray(mask, dtype=np.float64)
    if np.shape(s) != y.shape:
        raise DimensionError(f"logit shape {np.shape(s)} != mask shape {y.shape}")
    pw = auto_pos_weight(mask) if isinstance(pos_weight, str) else float(pos_weight)
    logp = _log_sigmoid(s)
    log1mp = _log_sigmoid(-s)
    lp = np.maximum(logp, LOG_FLOOR)
    lq = np.maximum(log1mp, LOG_FLOOR)
    n = y.size
    loss = -np.sum(pw * y * lp + (1.0 - y) * lq) / n
    p = np.exp(logp)
    dlp = np.where(logp > LOG_FLOOR, 1.0 - p, 0.0)      # d log p / ds
    dlq = np.where(log1mp > LOG_FLOOR, -p, 0.0)          # d log(1-p) / ds
    ds = -(pw * y * dlp + (1.0 - y) * dlq) / n
    return float(loss), ds


def loss(prob, mask, pos_weight="auto") -> float:
    """Weighted BCE evaluated on probabilities, logs floored at 1e-12."""
    p = np.asarray(prob, dtype=np.float64)
    y = np.asarray(mask, dtype=np.float64)
    if p.shape != y.shape:
        raise DimensionError(f"prob shape {p.shape} != mask shape {y.shape}")
    pw = auto_pos_weight(mask) if isinstance(pos_weight, str) else float(pos_weight)
    lp = np.log(np.maximum(p, 1e-12))
    lq = np.log(np.maximum(1.0 - p, 1e-12))
    return float(-np.sum(pw * y * lp + (1.0 - y) * lq) / y.size)


def loss_and_grad(params: NetworkParams, cfg: NetConfig, x, mask, pos_weight="auto"):
    s, tape = forward_logits(params, cfg, x)
    mask = np.asarray(mask, dtype=bool).reshape(s.shape)
    value, ds = loss_from_logits(s, mask, pos_weight)
    return value, backward(params, cfg, tape, ds)


# --------------------------------------------------------------------------
# training

@dataclass
class TrainHyper:
    lr: float = 1e-3
    epochs: int = 30
    batch: int = 8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_steps: int | None = None


@dataclass
class TrainLog:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    steps: int = 0


class Adam:
    def __init__(self, n, hp: TrainHyper):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.hp = hp

    def step(self, theta, grad):
        hp = self.hp
        self.t += 1
        self.m = hp.beta1 * self.m + (1 - hp.beta1) * grad
        self.v = hp.beta2 * self.v + (1 - hp.beta2) * grad * grad
        mh = self.m / (1 - hp.beta1 ** self.t)
        vh = self.v / (1 - hp.beta2 ** self.t)
        theta -= hp.lr * mh / (np.sqrt(vh) + hp.adam_eps)


def evaluate_loss(params, cfg, data: PatchSet, batch: int = 16) -> float:
    total = 0.0
    for i in range(0, len(data), batch):
        s, _ = forward_logits(params, cfg, data.x[i:i + batch], keep_cache=False)
        # per-patch weighting, matching the training objective
        for j in range(s.shape[0]):
            total += loss_from_logits(s[j], data.y[i + j])[0]
    return total / max(len(data), 1)


def train(train_set: PatchSet, cfg: NetConfig, hp: TrainHyper, val_set: PatchSet | None = None,
          params: NetworkParams | None = None, progress=None):
    """Adam training; returns the lowest-validation-loss parameters and a log.

    Batches are drawn by a seeded permutation each epoch and per-sample
    gradients are reduced in a fixed order, so runs are reproducible.
    """
    if len(train_set) == 0:
        raise ParameterError("training set is empty")
    val_set = train_set if val_set is None else val_set
    params = init_params(cfg, hp.seed) if params is None else params.copy()
    opt = Adam(len(params), hp)
    log = TrainLog()
    best = params.copy()
    best_val = math.inf
    order_rng = SeededRng(hp.seed, 0xBA7C).generator()
    last_finite = params.copy()
    for epoch in range(hp.epochs):
        perm = order_rng.permutation(len(train_set))
        ep_loss = 0.0
        nb = 0
        for i in range(0, len(perm), hp.batch):
            idx = perm[i:i + hp.batch]
            s, tape = forward_logits(params, cfg, train_set.x[idx])
            ds = np.empty_like(s)
            lsum = 0.0
            for j in range(len(idx)):
                lj, ds[j] = loss_from_logits(s[j], train_set.y[idx[j]])
                lsum += lj
            ds /= len(idx)
            grad = backward(params, cfg, tape, ds)
            value = lsum / len(idx)
            if not (math.isfinite(value) and np.all(np.isfinite(grad))):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", last_finite, log)
            opt.step(params.flat, grad)
            if not np.all(np.isfinite(params.flat)):
                raise TrainingDiverged(f"non-finite parameters at epoch {epoch}", last_finite, log)
            last_finite = params.copy()
            ep_loss += value
            nb += 1
            log.steps += 1
            if hp.max_steps is not None and log.steps >= hp.max_steps:
                break
        log.train_loss.append(ep_loss / max(nb, 1))
        v = evaluate_loss(params, cfg, val_set)
        log.val_loss.append(v)
        if v < best_val:
            best_val = v
            best = params.copy()
            log.best_epoch = epoch
        if progress is not None:
            progress(epoch, log)
        if hp.max_steps is not None and log.steps >= hp.max_steps:
            break
    return best, log


# --------------------------------------------------------------------------
# CKPT1 checkpoints: magic, u32 version, u32 config length, config JSON,
# u64 parameter count, float64 parameters, u32 CRC-32 of all previous bytes

CKPT_MAGIC = b"CKPT1\0\0\0"
CKPT_VERSION = 1


def save_checkpoint(path, params: NetworkParams, cfg: NetConfig) -> None:
    cfg_json = json.dumps(asdict(cfg), sort_keys=True).encode("utf-8")
    blob = b"".join([CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(cfg_json)), cfg_json,
                     struct.pack("<Q", len(params)), params.flat.astype("<f8").tobytes()])
    Path(path).write_bytes(blob + struct.pack("<I", zlib.crc32(blob)))


def load_checkpoint(path):
    blob = Path(path).read_bytes()
    if len(blob) < 8 + 8 + 8 + 4:
        raise TruncatedFile("checkpoint shorter than its header")
    if blob[:8] != CKPT_MAGIC:
        raise FormatError("not a CKPT1 file")
    version, clen = struct.unpack_from("<II", blob, 8)
    if version != CKPT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CKPT_VERSION}")
    end_cfg = 16 + clen
    if len(blob) < end_cfg + 8 + 4:
        raise TruncatedFile("checkpoint truncated in config")
    (count,) = struct.unpack_from("<Q", blob, end_cfg)
    need = end_cfg + 8 + 8 * count + 4
    if len(blob) < need:
        raise TruncatedFile("checkpoint truncated in parameters")
    if len(blob) != need or zlib.crc32(blob[:-4]) != struct.unpack("<I", blob[-4:])[0]:
        raise ChecksumError("checkpoint CRC-32 mismatch")
    cfg = NetConfig(**json.loads(blob[16:end_cfg].decode("utf-8")))
    params = NetworkParams(param_specs(cfg))
    if len(params) != count:
        raise FormatError(f"checkpoint has {count} parameters, config implies {len(params)}")
    params.flat[:] = np.frombuffer(blob, dtype="<f8", count=count, offset=end_cfg + 8)
    return params, cfg
