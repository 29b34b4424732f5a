"""Toy-scale two-stream segmentation network with hand-rolled backprop.

An RGB encoder and an optical-flow encoder (identical topology, stride-2
3x3 convolutions behind a stride-2 stem) are fused at every scale by
channel concatenation plus a 1x1 reduction. The decoder runs five
stages, each a 3x3 convolution followed by a x2 transposed convolution,
with the fused maps injected at matching resolutions, and ends in a
single-channel logit head. Everything is float64 numpy so gradients can
be checked against central finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import Diverged, ShapeError

MAGIC = b"FUSENET v1\n"


# ---------------------------------------------------------------------------
# convolution primitives (single sample, channels-first, float64)

def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    c, h, w = xp.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = np.empty((c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(c * kh * kw, oh * ow)


def _col2im(cols: np.ndarray, shape: Tuple[int, int, int],
            kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    c, h, w = shape
    hp, wp = h + 2 * padding, w + 2 * padding
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    xp = np.zeros((c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, i, j]
    if padding:
        xp = xp[:, padding:-padding, padding:-padding]
    return xp


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None,
                   stride: int = 1, padding: int = 0) -> np.ndarray:
    """Standard cross-correlation: x (C,H,W), w (O,C,kh,kw) -> (O,H',W')."""
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[1]:
        raise ShapeError(f"conv2d: x {x.shape} vs w {w.shape}")
    if stride not in (1, 2):
        raise ShapeError(f"unsupported stride {stride}")
    o, _, kh, kw = w.shape
    xp = _pad(x, padding)
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise ShapeError(f"input {x.shape} smaller than kernel {(kh, kw)}")
    cols = _im2col(xp, kh, kw, stride)
    y = w.reshape(o, -1) @ cols
    if b is not None:
        y += b[:, None]
    oh = (xp.shape[1] - kh) // stride + 1
    ow = (xp.shape[2] - kw) // stride + 1
    return y.reshape(o, oh, ow)


def conv2d_backward(x: np.ndarray, w: np.ndarray, grad_y: np.ndarray,
                    stride: int = 1, padding: int = 0):
    """Gradients of conv2d_forward wrt (input, weights, bias)."""
    o, _, kh, kw = w.shape
    gy = grad_y.reshape(o, -1)
    cols = _im2col(_pad(x, padding), kh, kw, stride)
    gw = (gy @ cols.T).reshape(w.shape)
    gb = grad_y.sum(axis=(1, 2))
    gcols = w.reshape(o, -1).T @ gy
    gx = _col2im(gcols, x.shape, kh, kw, stride, padding)
    return gx, gw, gb


def tconv2d_forward(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None,
                    stride: int = 2, padding: int = 1) -> np.ndarray:
    """Transposed convolution: x (C_in,H,W), w (C_in,C_out,kh,kw).

    With the default stride 2 / kernel 4 / padding 1 the spatial
    dimensions exactly double. Implemented as the adjoint of the
    matching strided convolution.
    """
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[0]:
        raise ShapeError(f"tconv2d: x {x.shape} vs w {w.shape}")
    c_in, c_out, kh, kw = w.shape
    _, h, wd = x.shape
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (wd - 1) * stride - 2 * padding + kw
    gy = x.reshape(c_in, -1)
    gcols = w.reshape(c_in, -1).T @ gy
    y = _col2im(gcols, (c_out, oh, ow), kh, kw, stride, padding)
    if b is not None:
        y += b[:, None, None]
    return y


def tconv2d_backward(x: np.ndarray, w: np.ndarray, grad_y: np.ndarray,
                     stride: int = 2, padding: int = 1):
    """Gradients of tconv2d_forward wrt (input, weights, bias)."""
    c_in = w.shape[0]
    gx = conv2d_forward(grad_y, w, None, stride=stride, padding=padding)
    kh, kw = w.shape[2], w.shape[3]
    cols = _im2col(_pad(grad_y, padding), kh, kw, stride)
    gw = (x.reshape(c_in, -1) @ cols.T).reshape(w.shape)
    gb = grad_y.sum(axis=(1, 2))
    return gx, gw, gb


def _relu(x):
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# network definition

@dataclass(frozen=True)
class NetConfig:
    encoder_stages: int = 4
    base_channels: int = 4
    decoder_stages: int = 5  # fixed by the architecture
    input_size: Tuple[int, int] = (32, 32)

    def __post_init__(self):
        if self.decoder_stages != 5:
            raise ValueError("decoder_stages is fixed at 5")
        if self.encoder_stages + 1 != self.decoder_stages:
            raise ValueError("encoder_stages must be decoder_stages - 1")
        h, w = self.input_size
        down = 2 ** (self.encoder_stages + 1)  # stem + encoder stages
        if h % down or w % down:
            raise ShapeError(f"input_size must be divisible by {down}")


@dataclass(frozen=True)
class LossWeights:
    w_positive: float = 1.0
    w_negative: float = 1.0

    def __post_init__(self):
        if self.w_positive <= 0 or self.w_negative <= 0:
            raise ValueError("loss weights must be positive")


def _param_shapes(cfg: NetConfig) -> Dict[str, tuple]:
    c = cfg.base_channels
    shapes = {
        "rgb_stem_w": (c, 3, 3, 3), "rgb_stem_b": (c,),
        "flow_stem_w": (c, 2, 3, 3), "flow_stem_b": (c,),
    }
    for i in range(1, cfg.encoder_stages + 1):
        for stream in ("rgb", "flow"):
            shapes[f"{stream}_enc{i}_w"] = (c, c, 3, 3)
            shapes[f"{stream}_enc{i}_b"] = (c,)
    for s in range(1, cfg.encoder_stages + 2):
        shapes[f"fuse{s}_w"] = (c, 2 * c, 1, 1)
        shapes[f"fuse{s}_b"] = (c,)
    for s in range(1, cfg.decoder_stages + 1):
        cin = c if s == 1 else 2 * c
        shapes[f"dec{s}_conv_w"] = (c, cin, 3, 3)
        shapes[f"dec{s}_conv_b"] = (c,)
        shapes[f"dec{s}_tconv_w"] = (c, c, 4, 4)
        shapes[f"dec{s}_tconv_b"] = (c,)
    shapes["head_w"] = (1, c, 1, 1)
    shapes["head_b"] = (1,)
    return shapes


class Network:
    """Two-stream fusion network; parameters live in a name->array dict."""

    def __init__(self, cfg: NetConfig, params: Dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())


def build_network(cfg: NetConfig, seed: int = 0) -> Network:
    """Deterministic initialization: uniform +/- 1/sqrt(fan_in) per layer."""
    rng = np.random.default_rng(seed)
    params = {}
    shapes = _param_shapes(cfg)
    for name, shape in shapes.items():
        if name.endswith("_b"):
            w_shape = shapes[name[:-2] + "_w"]
        else:
            w_shape = shape
        if "tconv" in name:
            fan_in = w_shape[0] * w_shape[2] * w_shape[3]
        else:
            fan_in = w_shape[1] * w_shape[2] * w_shape[3]
        # biases also drawn nonzero so no pre-activation sits exactly on
        # the rectifier kink (keeps finite-difference checks meaningful)
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return Network(cfg, params)


def forward(net: Network, rgb: np.ndarray, flow: np.ndarray,
            return_cache: bool = False):
    """Run the network; returns (1, H, W) logits."""
    cfg = net.cfg
    h, w = cfg.input_size
    if rgb.shape != (3, h, w) or flow.shape != (2, h, w):
        raise ShapeError(f"expected rgb (3,{h},{w}) and flow (2,{h},{w}), "
                         f"got {rgb.shape} and {flow.shape}")
    p = net.params
    cache = {"rgb_in": rgb, "flow_in": flow}
    feats = {}
    for stream, x in (("rgb", rgb), ("flow", flow)):
        pre = conv2d_forward(x, p[f"{stream}_stem_w"], p[f"{stream}_stem_b"],
                             stride=2, padding=1)
        cache[f"{stream}_stem_pre"] = pre
        f = _relu(pre)
        feats[(stream, 1)] = f
        for i in range(1, cfg.encoder_stages + 1):
            pre = conv2d_forward(f, p[f"{stream}_enc{i}_w"], p[f"{stream}_enc{i}_b"],
                                 stride=2, padding=1)
            cache[f"{stream}_enc{i}_pre"] = pre
            f = _relu(pre)
            feats[(stream, i + 1)] = f
    n_scales = cfg.encoder_stages + 1
    fused = {}
    for s in range(1, n_scales + 1):
        cat = np.concatenate([feats[("rgb", s)], feats[("flow", s)]], axis=0)
        cache[f"fuse{s}_in"] = cat
        pre = conv2d_forward(cat, p[f"fuse{s}_w"], p[f"fuse{s}_b"])
        cache[f"fuse{s}_pre"] = pre
        fused[s] = _relu(pre)
    cache["feats"] = feats
    cache["fused"] = fused
    d = fused[n_scales]
    for s in range(1, cfg.decoder_stages + 1):
        if s == 1:
            inp = d
        else:
            skip = fused[n_scales + 1 - s]
            inp = np.concatenate([d, skip], axis=0)
        cache[f"dec{s}_in"] = inp
        pre = conv2d_forward(inp, p[f"dec{s}_conv_w"], p[f"dec{s}_conv_b"], padding=1)
        cache[f"dec{s}_conv_pre"] = pre
        a = _relu(pre)
        cache[f"dec{s}_conv_out"] = a
        pre2 = tconv2d_forward(a, p[f"dec{s}_tconv_w"], p[f"dec{s}_tconv_b"])
        cache[f"dec{s}_tconv_pre"] = pre2
        d = _relu(pre2)
        cache[f"dec{s}_out"] = d
    logits = conv2d_forward(d, p["head_w"], p["head_b"])
    if not np.all(np.isfinite(logits)):
        raise Diverged("non-finite logits")
    if return_cache:
        return logits, cache
    return logits


def backward(net: Network, cache: dict, grad_logits: np.ndarray) -> Dict[str, np.ndarray]:
    """Backpropagate a logit gradient; returns per-parameter gradients."""
    cfg = net.cfg
    p = net.params
    grads = {}
    n_scales = cfg.encoder_stages + 1
    c = cfg.base_channels

    gd, gw, gb = conv2d_backward(cache[f"dec{cfg.decoder_stages}_out"],
                                 p["head_w"], grad_logits)
    grads["head_w"], grads["head_b"] = gw, gb

    grad_fused = {s: None for s in range(1, n_scales + 1)}
    for s in range(cfg.decoder_stages, 0, -1):
        gd = gd * (cache[f"dec{s}_tconv_pre"] > 0)
        ga, gw, gb = tconv2d_backward(cache[f"dec{s}_conv_out"],
                                      p[f"dec{s}_tconv_w"], gd)
        grads[f"dec{s}_tconv_w"], grads[f"dec{s}_tconv_b"] = gw, gb
        ga = ga * (cache[f"dec{s}_conv_pre"] > 0)
        gin, gw, gb = conv2d_backward(cache[f"dec{s}_in"],
                                      p[f"dec{s}_conv_w"], ga, padding=1)
        grads[f"dec{s}_conv_w"], grads[f"dec{s}_conv_b"] = gw, gb
        if s == 1:
            skip_scale = n_scales
            contrib = gin
        else:
            skip_scale = n_scales + 1 - s
            gd, contrib = gin[:c], gin[c:]
        if grad_fused[skip_scale] is None:
            grad_fused[skip_scale] = contrib.copy()
        else:
            grad_fused[skip_scale] += contrib

    grad_feats = {}
    for s in range(1, n_scales + 1):
        gf = grad_fused[s]
        gf = gf * (cache[f"fuse{s}_pre"] > 0)
        gcat, gw, gb = conv2d_backward(cache[f"fuse{s}_in"], p[f"fuse{s}_w"], gf)
        grads[f"fuse{s}_w"], grads[f"fuse{s}_b"] = gw, gb
        grad_feats[("rgb", s)] = gcat[:c]
        grad_feats[("flow", s)] = gcat[c:]

    for stream in ("rgb", "flow"):
        g = None
        for i in range(cfg.encoder_stages, 0, -1):
            gf = grad_feats[(stream, i + 1)]
            if g is not None:
                gf = gf + g
            gf = gf * (cache[f"{stream}_enc{i}_pre"] > 0)
            g, gw, gb = conv2d_backward(cache["feats"][(stream, i)],
                                        p[f"{stream}_enc{i}_w"], gf,
                                        stride=2, padding=1)
            grads[f"{stream}_enc{i}_w"], grads[f"{stream}_enc{i}_b"] = gw, gb
        gf = grad_feats[(stream, 1)] + g
        gf = gf * (cache[f"{stream}_stem_pre"] > 0)
        _, gw, gb = conv2d_backward(cache[f"{stream}_in"],
                                    p[f"{stream}_stem_w"], gf,
                                    stride=2, padding=1)
        grads[f"{stream}_stem_w"], grads[f"{stream}_stem_b"] = gw, gb
    return grads


# ---------------------------------------------------------------------------
# loss, gradient check, training

def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def weighted_bce(logits: np.ndarray, target: np.ndarray,
                 weights: LossWeights = LossWeights()):
    """Per-pixel weighted binary cross-entropy, numerically stable.

    Returns (mean loss, gradient wrt logits).
    """
    if logits.shape != target.shape:
        raise ShapeError(f"logits {logits.shape} vs target {target.shape}")
    t = target
    wp, wn = weights.w_positive, weights.w_negative
    loss = wp * t * _softplus(-logits) + wn * (1.0 - t) * _softplus(logits)
    n = logits.size
    sig = _sigmoid(logits)
    grad = (wp * t * (sig - 1.0) + wn * (1.0 - t) * sig) / n
    return float(loss.mean()), grad


def sample_loss(net: Network, rgb, flow, target, weights=LossWeights()):
    """Forward + loss and the full parameter gradient for one sample."""
    logits, cache = forward(net, rgb, flow, return_cache=True)
    loss, grad_logits = weighted_bce(logits, target, weights)
    grads = backward(net, cache, grad_logits)
    return loss, grads


def grad_check(net: Network, rgb, flow, target,
               weights=LossWeights(), eps: float = 1e-5) -> float:
    """Max relative error of analytic gradients vs central differences."""
    loss, grads = sample_loss(net, rgb, flow, target, weights)
    worst = 0.0
    for name, arr in net.params.items():
        flat = arr.ravel()
        gflat = grads[name].ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            lp, _ = weighted_bce(forward(net, rgb, flow), target, weights)
            flat[k] = orig - eps
            lm, _ = weighted_bce(forward(net, rgb, flow), target, weights)
            flat[k] = orig
            numeric = (lp - lm) / (2.0 * eps)
            denom = max(abs(numeric) + abs(gflat[k]), 1e-6)
            worst = max(worst, abs(numeric - gflat[k]) / denom)
    return worst


def balanced_weights(target: np.ndarray) -> LossWeights:
    """Default class weighting: w+ = negative pixels / positive pixels."""
    pos = float(target.sum())
    neg = float(target.size - pos)
    if pos == 0 or neg == 0:
        return LossWeights()
    return LossWeights(w_positive=neg / pos, w_negative=1.0)


def train_step(net: Network, batch, lr: float,
               weights: Optional[LossWeights] = None,
               velocity: Optional[Dict[str, np.ndarray]] = None,
               momentum: float = 0.9) -> float:
    """One full-batch gradient descent step (optional momentum), in place."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    total = {name: np.zeros_like(v) for name, v in net.params.items()}
    total_loss = 0.0
    for rgb, flow, target in batch:
        w = weights if weights is not None else balanced_weights(target)
        loss, grads = sample_loss(net, rgb, flow, target, w)
        total_loss += loss
        for name in total:
            total[name] += grads[name]
    total_loss /= len(batch)
    if not np.isfinite(total_loss):
        raise Diverged(f"loss {total_loss}")
    for name in total:
        g = total[name] / len(batch)
        if velocity is not None:
            velocity[name] = momentum * velocity[name] + g
            g = velocity[name]
        net.params[name] -= lr * g
    return total_loss


def predict(net: Network, rgb, flow, threshold: float = 0.5) -> np.ndarray:
    """Binary moving mask: sigmoid(logits) > threshold."""
    return (_sigmoid(forward(net, rgb, flow)) > threshold)[0]


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(net: Network) -> bytes:
    cfg = net.cfg
    meta = {"encoder_stages": cfg.encoder_stages,
            "base_channels": cfg.base_channels,
            "decoder_stages": cfg.decoder_stages,
            "input_size": list(cfg.input_size)}
    blob = np.concatenate([net.params[name].ravel()
                           for name in sorted(_param_shapes(cfg))])
    return MAGIC + (json.dumps(meta) + "\n").encode() + blob.astype("<f8").tobytes()


def load_checkpoint(data: bytes, expect_cfg: Optional[NetConfig] = None) -> Network:
    if not data.startswith(MAGIC):
        raise ValueError("not a FUSENET v1 checkpoint")
    rest = data[len(MAGIC):]
    nl = rest.index(b"\n")
    meta = json.loads(rest[:nl])
    cfg = NetConfig(encoder_stages=meta["encoder_stages"],
                    base_channels=meta["base_channels"],
                    decoder_stages=meta["decoder_stages"],
                    input_size=tuple(meta["input_size"]))
    if expect_cfg is not None and cfg != expect_cfg:
        raise ValueError(f"checkpoint cfg {cfg} does not match expected {expect_cfg}")
    shapes = _param_shapes(cfg)
    flat = np.frombuffer(rest[nl + 1:], dtype="<f8")
    expected = sum(int(np.prod(s)) for s in shapes.values())
    if flat.size != expected:
        raise ValueError(f"checkpoint holds {flat.size} parameters, cfg needs {expected}")
    params = {}
    pos = 0
    for name in sorted(shapes):
        n = int(np.prod(shapes[name]))
        params[name] = flat[pos:pos + n].reshape(shapes[name]).copy()
        pos += n
    return Network(cfg, params)
