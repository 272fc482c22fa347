"""Triplet self-supervision on unlabeled frames.

A triplet is a reference window, a positive window nested inside it and K
negative windows cut from other frames. The loss is

    softplus(-f_ref . f_pos) + sum_k softplus(f_ref . f_neg_k)

which equals ``-log sigmoid(f_ref.f_pos) - sum_k log sigmoid(-f_ref.f_neg_k)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import EncoderParams, backward_batch, encode

MIN_WINDOW = 4
DEFAULT_NEGATIVES = 10


@dataclass(frozen=True)
class Window:
    frame: int
    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class Triplet:
    ref: Window
    pos: Window
    negs: tuple

    def __post_init__(self):
        if not (self.ref.frame == self.pos.frame and self.ref.start <= self.pos.start and self.pos.stop <= self.ref.stop):
            raise ValueError("positive window must lie inside the reference window")
        if not self.negs:
            raise ValueError("a triplet needs at least one negative")
        if any(n.frame == self.ref.frame for n in self.negs):
            raise ValueError("negatives must come from frames other than the reference frame")

    def windows(self):
        return (self.ref, self.pos, *self.negs)


def sample_triplet(pool_size: int, frame_length: int, negatives: int, rng: np.random.Generator, min_window: int = MIN_WINDOW) -> Triplet:
    """Draw window coordinates for one triplet over a pool of equal-length frames."""
    if pool_size < 2:
        raise ValueError("triplet sampling needs at least 2 frames in the pool")
    if frame_length < min_window:
        raise ValueError(f"frames of length {frame_length} are shorter than the minimum window {min_window}")
    if negatives < 1:
        raise ValueError("need at least one negative")
    t = frame_length
    ref_frame = int(rng.integers(pool_size))
    ref_len = int(rng.integers(min_window, t + 1))
    ref_start = int(rng.integers(0, t - ref_len + 1))
    pos_len = int(rng.integers(min_window, ref_len + 1))
    pos_start = ref_start + int(rng.integers(0, ref_len - pos_len + 1))
    # other frames: draw from pool_size - 1 candidates and skip the reference
    others = rng.integers(0, pool_size - 1, size=negatives)
    others = others + (others >= ref_frame)
    starts = rng.integers(0, t - pos_len + 1, size=negatives)
    negs = tuple(Window(int(f), int(s), pos_len) for f, s in zip(others, starts))
    return Triplet(Window(ref_frame, ref_start, ref_len), Window(ref_frame, pos_start, pos_len), negs)


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def triplet_loss(f_ref, f_pos, f_negs) -> float:
    f_ref = np.asarray(f_ref, dtype=np.float64)
    f_negs = np.asarray(f_negs, dtype=np.float64).reshape(-1, f_ref.size)
    loss = softplus(-(f_ref @ f_pos))
    if f_negs.shape[0]:
        loss = loss + np.sum(softplus(f_negs @ f_ref))
    return float(loss)


def triplet_loss_grad(f_ref, f_pos, f_negs):
    """Return ``(d_ref, d_pos, d_negs)``."""
    f_ref = np.asarray(f_ref, dtype=np.float64)
    f_pos = np.asarray(f_pos, dtype=np.float64)
    f_negs = np.asarray(f_negs, dtype=np.float64).reshape(-1, f_ref.size)
    a = sigmoid(-(f_ref @ f_pos))
    s = sigmoid(f_negs @ f_ref)
    d_pos = -a * f_ref
    d_negs = s[:, None] * f_ref[None, :]
    d_ref = -a * f_pos + s @ f_negs
    return d_ref, d_pos, d_negs


@dataclass
class AdamState:
    size: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)

    def update(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """One bias-corrected Adam step; returns the new parameter vector."""
        self.step += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.step)
        v_hat = self.v / (1 - self.beta2**self.step)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def copy(self) -> "AdamState":
        return AdamState(self.size, self.lr, self.beta1, self.beta2, self.eps, self.step, self.m.copy(), self.v.copy())


def gather_windows(pool: np.ndarray, windows) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad every window of ``pool`` (frames, 2, T) into one batch."""
    lengths = np.array([w.length for w in windows])
    batch = np.zeros((len(windows), pool.shape[1], lengths.max()))
    for i, w in enumerate(windows):
        batch[i, :, : w.length] = pool[w.frame, :, w.start : w.stop]
    return batch, lengths


def _length_buckets(lengths: np.ndarray, buckets: int) -> list[np.ndarray]:
    """Split window indices into groups of similar length (stable order)."""
    order = np.argsort(lengths, kind="stable")
    return [g for g in np.array_split(order, min(buckets, len(order))) if g.size]


def batch_loss_and_grad(params: EncoderParams, pool: np.ndarray, triplets, buckets: int = 3) -> tuple[float, np.ndarray]:
    """Mean triplet loss over ``triplets`` and its gradient w.r.t. the flat parameters.

    Windows are sorted by length into ``buckets`` padded batches; the causal
    encoder makes the padding exact. Gradients are reduced in bucket order.
    """
    windows = [w for tr in triplets for w in tr.windows()]
    lengths = np.array([w.length for w in windows])
    groups = _length_buckets(lengths, buckets)
    feats = np.empty((len(windows), params.config.feature_dim))
    caches = []
    for idx in groups:
        batch, lens = gather_windows(pool, [windows[i] for i in idx])
        f, cache = encode(params, batch, lens, keep_cache=True)
        feats[idx] = f
        caches.append(cache)

    upstream = np.zeros_like(feats)
    total = 0.0
    row = 0
    for tr in triplets:
        k = len(tr.negs)
        f_ref, f_pos, f_negs = feats[row], feats[row + 1], feats[row + 2 : row + 2 + k]
        total += triplet_loss(f_ref, f_pos, f_negs)
        d_ref, d_pos, d_negs = triplet_loss_grad(f_ref, f_pos, f_negs)
        upstream[row] = d_ref
        upstream[row + 1] = d_pos
        upstream[row + 2 : row + 2 + k] = d_negs
        row += 2 + k
    n = len(triplets)
    upstream /= n
    grad = np.zeros(params.flat.size)
    for idx, cache in zip(groups, caches):
        grad += backward_batch(params, cache, upstream[idx])
    return total / n, grad


def local_train(
    params: EncoderParams,
    pool: np.ndarray,
    steps: int,
    batch_size: int,
    adam: AdamState,
    rng: np.random.Generator,
    negatives: int = DEFAULT_NEGATIVES,
    min_window: int = MIN_WINDOW,
):
    """Run ``steps`` Adam updates on freshly sampled triplet batches.

    ``pool`` is the client's unlabeled data as a (frames, 2, T) array.
    Returns ``(params, adam, losses)``; inputs are not modified.
    """
    pool = np.asarray(pool, dtype=np.float64)
    params = params.copy()
    adam = adam.copy()
    losses = np.empty(steps)
    for s in range(steps):
        triplets = [sample_triplet(pool.shape[0], pool.shape[2], negatives, rng, min_window) for _ in range(batch_size)]
        loss, grad = batch_loss_and_grad(params, pool, triplets)
        params.flat[:] = adam.update(params.flat, grad)
        losses[s] = loss
    return params, adam, losses
