"""Dilated causal CNN feature extractor with a hand-written reverse pass.

Layer ``k`` (1-based) is a causal convolution with dilation ``2**(k-1)``,
left zero-padding ``(kernel_size - 1) * 2**(k-1)``, a weight-normalized kernel
``g * v / ||v||`` (norm per output channel), a bias and a leaky ReLU. The last
layer is max-pooled over time and mapped to ``feature_dim`` by an affine head.

Sequences in a batch may have different lengths: they are right-padded and
the pooling only looks at valid positions. Because every layer is causal,
padding never leaks into valid positions, so padded batches are exact.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .signal import IqFrame


@dataclass(frozen=True)
class EncoderConfig:
    depth: int = 10
    kernel_size: int = 3
    channels: int = 89
    feature_dim: int = 320
    leaky_slope: float = 0.01
    input_channels: int = 2

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.kernel_size < 2:
            raise ValueError("kernel_size must be at least 2")
        if self.channels < 1 or self.feature_dim < 1 or self.input_channels < 1:
            raise ValueError("channel counts and feature_dim must be positive")

    def dilation(self, layer: int) -> int:
        """Dilation of 0-based ``layer``."""
        return 2**layer

    def to_dict(self) -> dict:
        return asdict(self)

    def layer_shapes(self):
        """(out, in, kernel) for each convolution."""
        shapes = []
        c_in = self.input_channels
        for _ in range(self.depth):
            shapes.append((self.channels, c_in, self.kernel_size))
            c_in = self.channels
        return shapes


def receptive_field(config: EncoderConfig) -> int:
    return 1 + (config.kernel_size - 1) * (2**config.depth - 1)


def param_count(config: EncoderConfig) -> int:
    n = 0
    for out, c_in, k in config.layer_shapes():
        n += out * c_in * k + 2 * out
    return n + config.feature_dim * config.channels + config.feature_dim


def _layout(config: EncoderConfig):
    """Name -> (offset, shape) for every tensor in the flat vector."""
    entries = []
    offset = 0
    for i, shape in enumerate(config.layer_shapes()):
        out = shape[0]
        for name, shp in ((f"conv{i}.v", shape), (f"conv{i}.g", (out,)), (f"conv{i}.b", (out,))):
            size = int(np.prod(shp))
            entries.append((name, offset, shp))
            offset += size
    for name, shp in (("head.w", (config.feature_dim, config.channels)), ("head.b", (config.feature_dim,))):
        entries.append((name, offset, shp))
        offset += int(np.prod(shp))
    return entries


class EncoderParams:
    """All encoder weights backed by one contiguous float64 vector.

    Structured access (``params["conv0.v"]``, :meth:`layer`) returns views into
    ``flat``, so aggregation and quantization can work on the flat vector.
    """

    def __init__(self, config: EncoderConfig, flat: Optional[np.ndarray] = None):
        self.config = config
        n = param_count(config)
        if flat is None:
            flat = np.zeros(n)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (n,):
            raise ValueError(f"flat vector has shape {flat.shape}, config needs ({n},)")
        self.flat = flat
        self._index = {name: (off, shp) for name, off, shp in _layout(config)}

    def __getitem__(self, name: str) -> np.ndarray:
        off, shp = self._index[name]
        return self.flat[off : off + int(np.prod(shp))].reshape(shp)

    def names(self):
        return list(self._index)

    def segments(self) -> list[slice]:
        """Flat slices of each tensor (used for per-tensor quantization)."""
        return [slice(off, off + int(np.prod(shp))) for off, shp in self._index.values()]

    def layer(self, i: int):
        return self[f"conv{i}.v"], self[f"conv{i}.g"], self[f"conv{i}.b"]

    def structured(self) -> dict:
        return {name: self[name].copy() for name in self._index}

    @classmethod
    def from_structured(cls, config: EncoderConfig, tensors: dict) -> "EncoderParams":
        params = cls(config)
        for name in params.names():
            params[name][...] = tensors[name]
        return params

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, self.flat.copy())


def init_params(config: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    """Glorot-uniform kernels, unit weight-norm scales, zero biases."""
    params = EncoderParams(config)
    for i, (out, c_in, k) in enumerate(config.layer_shapes()):
        limit = np.sqrt(6.0 / (c_in * k + out * k))
        v, g, _ = params.layer(i)
        v[...] = rng.uniform(-limit, limit, size=v.shape)
        g[...] = 1.0
    limit = np.sqrt(6.0 / (config.channels + config.feature_dim))
    params["head.w"][...] = rng.uniform(-limit, limit, size=(config.feature_dim, config.channels))
    return params


def effective_kernel(v: np.ndarray, g: np.ndarray):
    norm = np.sqrt(np.sum(v * v, axis=(1, 2)))
    return g[:, None, None] * v / norm[:, None, None], norm


def _as_batch(x) -> np.ndarray:
    if isinstance(x, IqFrame):
        x = np.stack([x.samples.real, x.samples.imag])
    x = np.asarray(x)
    if np.iscomplexobj(x):
        x = np.stack([x.real, x.imag], axis=-2)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"expected (batch, channels, time) input, got shape {x.shape}")
    return x


def _columns(h: np.ndarray, k: int, dil: int) -> np.ndarray:
    """Stack the ``k`` causally shifted copies of channel-major ``h``.

    (C, B, T) -> (C*k, B*T); row ``c*k + j`` holds channel ``c`` delayed by
    ``(k-1-j) * dil`` samples, zero-filled on the left.
    """
    c, b, t = h.shape
    cols = np.zeros((c, k, b, t))
    for j in range(k):
        shift = (k - 1 - j) * dil
        if shift < t:
            cols[:, j, :, shift:] = h[:, :, : t - shift]
    return cols.reshape(c * k, b * t)


def _layer_forward(params: EncoderParams, i: int, h: np.ndarray):
    cfg = params.config
    v, g, bias = params.layer(i)
    w, norm = effective_kernel(v, g)
    c, b, t = h.shape
    cols = _columns(h, cfg.kernel_size, cfg.dilation(i))
    z = (w.reshape(w.shape[0], -1) @ cols + bias[:, None]).reshape(-1, b, t)
    return cols, z, w, norm


def encode(params: EncoderParams, x, lengths=None, keep_cache: bool = False):
    """Batched forward pass.

    Returns ``(features, cache)``; ``features`` has shape (B, feature_dim).
    ``lengths`` marks how many leading samples of each padded row are valid.
    """
    cfg = params.config
    x = _as_batch(x)
    b, c_in, t = x.shape
    if t == 0:
        raise ValueError("cannot encode an empty frame")
    if c_in != cfg.input_channels:
        raise ValueError(f"input has {c_in} channels, encoder expects {cfg.input_channels}")
    lengths = np.full(b, t) if lengths is None else np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (b,) or np.any(lengths < 1) or np.any(lengths > t):
        raise ValueError("sequence lengths must lie in [1, padded length]")

    slope = cfg.leaky_slope
    h = np.ascontiguousarray(x.transpose(1, 0, 2))
    layers = []
    for i in range(cfg.depth):
        cols, z, w, norm = _layer_forward(params, i, h)
        gain = np.where(z > 0, 1.0, slope)
        h = z * gain
        if keep_cache:
            layers.append((cols, gain, w, norm))

    valid = np.arange(t)[None, :] < lengths[:, None]
    arg = np.argmax(np.where(valid[None], h, -np.inf), axis=2)
    pooled = np.take_along_axis(h, arg[:, :, None], axis=2)[:, :, 0].T
    feats = pooled @ params["head.w"].T + params["head.b"]
    cache = None
    if keep_cache:
        cache = {"layers": layers, "arg": arg, "pooled": pooled, "shape": (b, t)}
    return feats, cache


def backward_batch(params: EncoderParams, cache: dict, upstream: np.ndarray) -> np.ndarray:
    """Gradient of ``sum_b upstream[b] . features[b]`` w.r.t. the flat parameters."""
    cfg = params.config
    upstream = np.asarray(upstream, dtype=np.float64)
    b, t = cache["shape"]
    if upstream.shape != (b, cfg.feature_dim):
        raise ValueError(f"upstream gradient shape {upstream.shape} != {(b, cfg.feature_dim)}")
    grad = EncoderParams(cfg)
    grad["head.w"][...] = upstream.T @ cache["pooled"]
    grad["head.b"][...] = upstream.sum(axis=0)

    d_pooled = (upstream @ params["head.w"]).T
    dh = np.zeros((cfg.channels, b, t))
    ci, bi = np.meshgrid(np.arange(cfg.channels), np.arange(b), indexing="ij")
    dh[ci, bi, cache["arg"]] = d_pooled

    k = cfg.kernel_size
    for i in reversed(range(cfg.depth)):
        cols, gain, w, norm = cache["layers"][i]
        v, g, _ = params.layer(i)
        dz = (dh * gain).reshape(gain.shape[0], -1)
        gv, gg, gb = grad.layer(i)
        gb[...] = dz.sum(axis=1)
        dw = (dz @ cols.T).reshape(w.shape)
        u = v / norm[:, None, None]
        gg[...] = np.sum(dw * u, axis=(1, 2))
        gv[...] = (g / norm)[:, None, None] * (dw - gg[:, None, None] * u)
        if i == 0:
            break
        dcols = (w.reshape(w.shape[0], -1).T @ dz).reshape(-1, k, b, t)
        dil = cfg.dilation(i)
        dh = np.zeros((dcols.shape[0], b, t))
        for j in range(k):
            shift = (k - 1 - j) * dil
            if shift < t:
                dh[:, :, : t - shift] += dcols[:, j, :, shift:]
    return grad.flat


def forward(params: EncoderParams, frame) -> np.ndarray:
    """Feature vector for a single frame (IqFrame, complex vector or (2, T) array)."""
    feats, _ = encode(params, frame)
    if feats.shape[0] != 1:
        raise ValueError("forward takes a single frame; use encode for batches")
    return feats[0]


def backward(params: EncoderParams, frame, upstream_grad) -> np.ndarray:
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != (params.config.feature_dim,):
        raise ValueError(f"upstream gradient must have shape ({params.config.feature_dim},)")
    _, cache = encode(params, frame, keep_cache=True)
    return backward_batch(params, cache, upstream_grad[None])


def activations(params: EncoderParams, x) -> list[dict]:
    """Per-layer pre-activations ``z`` and activations ``h`` (pre-pooling), each (B, C, T)."""
    cfg = params.config
    h = np.ascontiguousarray(_as_batch(x).transpose(1, 0, 2))
    out = []
    for i in range(cfg.depth):
        _, z, _, _ = _layer_forward(params, i, h)
        h = np.where(z > 0, z, cfg.leaky_slope * z)
        out.append({"z": z.transpose(1, 0, 2), "h": h.transpose(1, 0, 2)})
    return out


def forward_flops(config: EncoderConfig, length: int = 100) -> dict:
    """Multiply-add counts for one forward pass over ``length`` samples.

    Convolutions cost ``2 * out * in * kernel`` per output position (one
    multiply and one add per tap), the head ``2 * feature_dim * channels``.
    Bias adds, activations and pooling are counted as ``out`` each per
    position and reported separately.
    """
    conv = sum(2 * out * c_in * k * length for out, c_in, k in config.layer_shapes())
    head = 2 * config.feature_dim * config.channels
    elementwise = sum(3 * out * length for out, _, _ in config.layer_shapes())
    return {"conv": conv, "head": head, "elementwise": elementwise, "total": conv + head + elementwise}


def transform(params: EncoderParams, x, batch_size: int = 256) -> np.ndarray:
    """Features for many equal-length frames, encoded in chunks of ``batch_size``."""
    x = _as_batch(x)
    if x.shape[0] == 0:
        return np.zeros((0, params.config.feature_dim))
    return np.concatenate([encode(params, x[i : i + batch_size])[0] for i in range(0, x.shape[0], batch_size)])
