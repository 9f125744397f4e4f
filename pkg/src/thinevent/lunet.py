"""Small U-shaped encoder-decoder CNN with hand-written backpropagation.

Layout for ``depth`` levels with widths ``base * 2**i``:

* encoder level i: conv3x3 + ReLU, conv3x3 + ReLU, then 2x2 max-pool
  (no pool after the deepest level)
* decoder level i (deepest-1 .. 0): nearest 2x upsample, concatenate the
  encoder skip of level i, conv3x3 + ReLU, conv3x3 + ReLU
* head: conv1x1 + sigmoid to one channel

Tensors are ``(N, C, H, W)``; a single ``(C, H, W)`` input is accepted too.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidConfig, MalformedHeader, ShapeMismatch, TruncatedRecord

CHECKPOINT_MAGIC = b"LUNW"
CHECKPOINT_VERSION = 1
_CONFIG = struct.Struct("<HHHHQ")


@dataclass(frozen=True)
class LUnetConfig:
    in_channels: int = 2
    base_channels: int = 8
    depth: int = 2
    kernel_size: int = 3
    seed: int = 0

    def validate(self) -> None:
        if self.in_channels not in (1, 2):
            raise InvalidConfig("in_channels must be 1 or 2")
        if self.depth < 1:
            raise InvalidConfig("depth must be at least 1")
        if self.base_channels < 1:
            raise InvalidConfig("base_channels must be positive")
        if self.kernel_size != 3:
            raise InvalidConfig("only 3x3 kernels are supported")

    @property
    def widths(self) -> list[int]:
        return [self.base_channels * 2**i for i in range(self.depth)]

    def layer_table(self) -> list[tuple[str, int, int, int]]:
        """``(name, in_channels, out_channels, kernel)`` for every conv, in order."""
        w = self.widths
        layers = []
        cin = self.in_channels
        for i, c in enumerate(w):
            layers.append((f"enc{i}.conv0", cin, c, 3))
            layers.append((f"enc{i}.conv1", c, c, 3))
            cin = c
        for i in range(self.depth - 2, -1, -1):
            layers.append((f"dec{i}.conv0", w[i + 1] + w[i], w[i], 3))
            layers.append((f"dec{i}.conv1", w[i], w[i], 3))
        layers.append(("head", w[0], 1, 1))
        return layers

    def param_count(self) -> int:
        return sum(o * i * k * k + o for _, i, o, k in self.layer_table())


# -- primitive layers --------------------------------------------------------

def conv2d(x, w, b):
    """Same-size cross-correlation; ``w`` is ``(out, in, k, k)`` with k odd."""
    k = w.shape[-1]
    if k == 1:
        out = np.tensordot(w[:, :, 0, 0], x, axes=([1], [1])).transpose(1, 0, 2, 3)
        return out + b[None, :, None, None]
    r = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)))
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))  # N C H W k k
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # N H W O
    return out.transpose(0, 3, 1, 2) + b[None, :, None, None]


def conv2d_backward(x, w, dout):
    """Gradients ``(dx, dw, db)`` of :func:`conv2d`."""
    k = w.shape[-1]
    db = dout.sum(axis=(0, 2, 3))
    if k == 1:
        dw = np.tensordot(dout, x, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
        dx = np.tensordot(w[:, :, 0, 0], dout, axes=([0], [1])).transpose(1, 0, 2, 3)
        return dx, dw, db
    r = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)))
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))
    dw = np.tensordot(dout, cols, axes=([0, 2, 3], [0, 2, 3]))  # O C k k
    flipped = w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
    dx = conv2d(dout, np.ascontiguousarray(flipped), np.zeros(w.shape[1], dtype=w.dtype))
    return dx, dw, db


def maxpool2(x):
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0], idx


def maxpool2_backward(dout, idx):
    n, c, h2, w2 = dout.shape
    g = np.zeros((n, c, h2, w2, 4), dtype=dout.dtype)
    np.put_along_axis(g, idx[..., None], dout[..., None], axis=-1)
    return g.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)


def upsample2(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2_backward(dout):
    n, c, h, w = dout.shape
    return dout.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def sigmoid(z):
    # clip keeps the output strictly inside (0, 1); float32 rounds 1 - 1e-7 up to 1
    lim = 15.0 if z.dtype == np.float32 else 30.0
    return 1.0 / (1.0 + np.exp(-np.clip(z, -lim, lim)))


# -- model -------------------------------------------------------------------

class LUnetModel:
    def __init__(self, config: LUnetConfig, params: list[np.ndarray]):
        self.config = config
        self.params = params

    @property
    def names(self) -> list[str]:
        out = []
        for name, *_ in self.config.layer_table():
            out += [f"{name}.weight", f"{name}.bias"]
        return out

    @property
    def dtype(self):
        return self.params[0].dtype

    def astype(self, dtype) -> "LUnetModel":
        return LUnetModel(self.config, [p.astype(dtype) for p in self.params])

    def copy(self) -> "LUnetModel":
        return LUnetModel(self.config, [p.copy() for p in self.params])

    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def _prepare(self, x):
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeMismatch(
                f"expected (N, {self.config.in_channels}, H, W) input, got {np.shape(x)}"
            )
        mult = 2**self.config.depth
        h, w = x.shape[2:]
        ph, pw = -h % mult, -w % mult
        if ph or pw:
            x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)))
        return x, single, (h, w)

    def forward(self, x, return_cache: bool = False):
        """Heatmap in (0, 1) with the input's spatial size and one channel."""
        x, single, (h, w) = self._prepare(x)
        cfg = self.config
        it = iter(self.params)
        cache = {"input": x, "convs": [], "pools": [], "skips": []}

        def conv_relu(a):
            wt, b = next(it), next(it)
            z = conv2d(a, wt, b)
            cache["convs"].append((a, wt, z))
            return np.maximum(z, 0)

        a = x
        for i in range(cfg.depth):
            a = conv_relu(conv_relu(a))
            if i < cfg.depth - 1:
                cache["skips"].append(a)
                a, idx = maxpool2(a)
                cache["pools"].append(idx)
        for i in range(cfg.depth - 2, -1, -1):
            a = np.concatenate([upsample2(a), cache["skips"][i]], axis=1)
            a = conv_relu(conv_relu(a))
        wt, b = next(it), next(it)
        z = conv2d(a, wt, b)
        cache["head"] = (a, wt)
        p = sigmoid(z)
        cache["out"] = p
        cache["crop"] = (single, h, w)
        out = p[:, :, :h, :w]
        if single:
            out = out[0]
        return (out, cache) if return_cache else out

    def backward(self, cache, upstream):
        """Parameter gradients (declaration order) and the input gradient."""
        cfg = self.config
        single, h, w = cache["crop"]
        p = cache["out"]
        up = np.asarray(upstream, dtype=p.dtype)
        if single:
            up = up[None]
        if up.shape != (p.shape[0], 1, h, w):
            raise ShapeMismatch(f"upstream gradient shape {np.shape(upstream)} does not match output")
        g = np.zeros_like(p)
        g[:, :, :h, :w] = up
        dz = g * p * (1.0 - p)

        grads: list = [None] * len(self.params)
        a, wt = cache["head"]
        da, dw, db = conv2d_backward(a, wt, dz)
        grads[-2], grads[-1] = dw, db

        convs = cache["convs"]
        ci = len(convs) - 1

        def conv_relu_back(d):
            nonlocal ci
            a_in, wt_, z = convs[ci]
            dz_ = d * (z > 0)
            dx_, dw_, db_ = conv2d_backward(a_in, wt_, dz_)
            grads[2 * ci], grads[2 * ci + 1] = dw_, db_
            ci -= 1
            return dx_

        skip_grads = [None] * (cfg.depth - 1)
        for i in range(cfg.depth - 1):
            da = conv_relu_back(conv_relu_back(da))
            c_up = da.shape[1] - cache["skips"][i].shape[1]
            skip_grads[i] = da[:, c_up:]
            da = upsample2_backward(da[:, :c_up])
        for i in range(cfg.depth - 1, -1, -1):
            if i < cfg.depth - 1:
                da = maxpool2_backward(da, cache["pools"][i]) + skip_grads[i]
            da = conv_relu_back(conv_relu_back(da))
        dx = da[:, :, :h, :w]
        return grads, dx[0] if single else dx

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_bytes(encode_checkpoint(self))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "LUnetModel":
        return decode_checkpoint(Path(path).read_bytes())


def init_model(config: LUnetConfig = LUnetConfig(), dtype=np.float32) -> LUnetModel:
    """He-uniform kernels (bound ``sqrt(6 / fan_in)``) and zero biases."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = []
    for _, cin, cout, k in config.layer_table():
        bound = np.sqrt(6.0 / (cin * k * k))
        params.append(rng.uniform(-bound, bound, (cout, cin, k, k)).astype(dtype))
        params.append(np.zeros(cout, dtype=dtype))
    return LUnetModel(config, params)


def encode_checkpoint(model: LUnetModel) -> bytes:
    c = model.config
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<H", CHECKPOINT_VERSION),
        _CONFIG.pack(c.in_channels, c.base_channels, c.depth, c.kernel_size, c.seed),
    ]
    for p in model.params:
        parts.append(struct.pack(f"<I{p.ndim}I", p.ndim, *p.shape))
        parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> LUnetModel:
    if data[:4] != CHECKPOINT_MAGIC:
        raise MalformedHeader("not a LUNW checkpoint")
    if len(data) < 6 + _CONFIG.size:
        raise TruncatedRecord("checkpoint header truncated")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != CHECKPOINT_VERSION:
        raise MalformedHeader(f"unsupported checkpoint version {version}")
    config = LUnetConfig(*_CONFIG.unpack_from(data, 6))
    config.validate()
    off = 6 + _CONFIG.size
    params = []
    for _, cin, cout, k in config.layer_table():
        for expected in ((cout, cin, k, k), (cout,)):
            if off + 4 > len(data):
                raise TruncatedRecord("checkpoint ends before all tensors")
            (ndim,) = struct.unpack_from("<I", data, off)
            if off + 4 + 4 * ndim > len(data):
                raise TruncatedRecord("tensor header truncated")
            shape = struct.unpack_from(f"<{ndim}I", data, off + 4)
            off += 4 + 4 * ndim
            if tuple(shape) != expected:
                raise MalformedHeader(f"tensor shape {shape} does not match config ({expected})")
            nbytes = 4 * int(np.prod(shape))
            if off + nbytes > len(data):
                raise TruncatedRecord("tensor data truncated")
            params.append(np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape).astype(np.float32))
            off += nbytes
    if off != len(data):
        raise MalformedHeader("trailing bytes after last tensor")
    return LUnetModel(config, params)


# -- training ----------------------------------------------------------------

@dataclass
class TrainOptions:
    epochs: int = 40
    lr: float = 0.05
    lam: float = 0.1
    batch_size: int = 4
    seed: int = 0
    momentum: float = 0.9
    clip_norm: float | None = 1.0  # global gradient-norm clip; None disables
    crop: int | None = 64  # random square crops per step; None trains on full frames
    augment: bool = True  # random flips / 90-degree rotations
    schedule: str = "cosine"  # "cosine" decays lr to zero over the run; "constant" keeps it fixed
    # An epoch whose mean loss exceeds the best so far by this much is undone:
    # parameters return to the best epoch, momentum resets and the lr halves.
    # The contour term's gradient grows like 1/area, so a run that falls into
    # the all-background state does not climb back out on its own.
    rollback_tol: float | None = 0.25
    epsilon: float = 1e-6
    # One pixel of contour smoothing keeps the regularizer gradient bounded on
    # crops where the prediction is almost empty.
    delta: float = 1.0


def activation_pattern(cache) -> np.ndarray:
    """Flattened ReLU on/off states and pool choices of a cached forward pass."""
    parts = [(z > 0).ravel() for _, _, z in cache["convs"]]
    parts += [(idx.ravel() % 2).astype(bool) for idx in cache["pools"]]
    parts += [idx.ravel() >= 2 for idx in cache["pools"]]
    return np.concatenate(parts)


def _augment(x, g, rng):
    k = int(rng.integers(4))
    x = np.rot90(x, k, axes=(1, 2))
    g = np.rot90(g, k)
    if rng.random() < 0.5:
        x = x[:, :, ::-1]
        g = g[:, ::-1]
    return x, g


def _crop(x, g, size, rng):
    h, w = g.shape
    if size is None or (h <= size and w <= size):
        return x, g
    # bias crops towards the target so most steps see line pixels
    ys, xs = np.nonzero(g)
    if len(ys) and rng.random() < 0.8:
        k = int(rng.integers(len(ys)))
        y0 = int(np.clip(ys[k] - rng.integers(size), 0, h - size))
        x0 = int(np.clip(xs[k] - rng.integers(size), 0, w - size))
    else:
        y0 = int(rng.integers(h - size + 1))
        x0 = int(rng.integers(w - size + 1))
    return x[:, y0:y0 + size, x0:x0 + size], g[y0:y0 + size, x0:x0 + size]


def train(model: LUnetModel, dataset, opts: TrainOptions = TrainOptions(), log=None):
    """SGD with momentum on the dice + contour loss.

    ``dataset`` is a sequence of ``(channels, mask)`` pairs with channels of
    shape ``(C, H, W)``. Returns ``(trained_model, history)``; history holds
    one dict of mean loss terms per epoch. ``log`` is called with each dict.
    """
    from .errors import DivergedLoss, EmptyDataset
    from .loss import LossParams, loss_gradient, total_loss

    if len(dataset) == 0:
        raise EmptyDataset("training needs at least one sample")
    if opts.lr < 0:
        raise InvalidConfig("learning rate must be non-negative")
    if opts.schedule not in ("cosine", "constant"):
        raise InvalidConfig(f"unknown lr schedule {opts.schedule!r}")
    params = LossParams(opts.lam, opts.epsilon, opts.delta)
    model = model.copy()
    velocity = [np.zeros_like(p) for p in model.params]
    history = []
    best_loss, best_params = np.inf, [p.copy() for p in model.params]
    lr_scale = 1.0
    for epoch in range(opts.epochs):
        lr = opts.lr * lr_scale
        if opts.schedule == "cosine":
            lr *= 0.5 * (1.0 + np.cos(np.pi * epoch / opts.epochs))
        rng = np.random.default_rng([opts.seed, epoch])
        order = rng.permutation(len(dataset))
        sums = dict.fromkeys(("total", "dice", "reg", "area", "perimeter"), 0.0)
        for start in range(0, len(order), opts.batch_size):
            xs, gs = [], []
            for i in order[start:start + opts.batch_size]:
                x, g = dataset[i]
                x, g = _crop(np.asarray(x), np.asarray(g), opts.crop, rng)
                if opts.augment:
                    x, g = _augment(x, g, rng)
                xs.append(x)
                gs.append(g)
            shapes = {g.shape for g in gs}
            groups = [[j for j, g in enumerate(gs) if g.shape == s] for s in sorted(shapes)]
            grads = [np.zeros_like(p) for p in model.params]
            n = len(gs)
            for idx in groups:
                batch = np.stack([xs[j] for j in idx])
                p, cache = model.forward(batch, return_cache=True)
                up = np.empty_like(p)
                for k, j in enumerate(idx):
                    pk = p[k, 0].astype(np.float64)
                    br = total_loss(pk, gs[j], params)
                    if not np.isfinite(br.total):
                        raise DivergedLoss(f"non-finite loss at epoch {epoch}: {br}")
                    for key, val in br.as_dict().items():
                        sums[key] += val
                    up[k, 0] = loss_gradient(pk, gs[j], params) / n
                gi, _ = model.backward(cache, up)
                for acc, gk in zip(grads, gi):
                    acc += gk
            if opts.clip_norm is not None:
                norm = np.sqrt(sum(float(np.sum(gk.astype(np.float64) ** 2)) for gk in grads))
                if not np.isfinite(norm):
                    raise DivergedLoss(f"non-finite gradient at epoch {epoch}")
                if norm > opts.clip_norm:
                    grads = [gk * (opts.clip_norm / norm) for gk in grads]
            for p, v, gk in zip(model.params, velocity, grads):
                v *= opts.momentum
                v -= lr * gk
                p += v
        entry = {"epoch": epoch, "lr": float(lr), **{k: v / len(dataset) for k, v in sums.items()}}
        entry["rolled_back"] = False
        if opts.rollback_tol is not None and entry["total"] > best_loss + opts.rollback_tol:
            for p, b, v in zip(model.params, best_params, velocity):
                p[...] = b
                v[...] = 0
            lr_scale *= 0.5
            entry["rolled_back"] = True
        elif entry["total"] < best_loss:
            best_loss = entry["total"]
            best_params = [p.copy() for p in model.params]
        history.append(entry)
        if log is not None:
            log(entry)
    return model, history
