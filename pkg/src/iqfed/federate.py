"""Federated averaging of the encoder across clients.

Each round every client downloads the global parameters, runs local triplet
training on its unlabeled pool and uploads the result; the server takes the
example-weighted mean. Quantization is simulated at the communication
boundary only (download and upload); local math stays in float64.
"""
from __future__ import annotations

import enum
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._rng import substream
from .encoder import EncoderParams
from .ssl import DEFAULT_NEGATIVES, MIN_WINDOW, AdamState, local_train


class QuantizationLevel(enum.Enum):
    NONE = "none"
    F32 = "f32"
    F16 = "f16"
    INT8 = "int8"

    @classmethod
    def parse(cls, value) -> "QuantizationLevel":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("float", "f")
        for level in cls:
            if level.value == key or level.name.lower() == key:
                return level
        raise ValueError(f"unknown quantization level {value!r}")


# Client-specific precisions of the model-heterogeneity study.
HETEROGENEOUS_LEVELS = (QuantizationLevel.F32, QuantizationLevel.F16, QuantizationLevel.INT8, QuantizationLevel.INT8)


def _int8(w: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(w)) if w.size else 0.0
    if peak == 0.0:
        return np.zeros_like(w)
    scale = peak / 127.0
    return np.round(w / scale) * scale


def quantize_roundtrip(params, level, segments: Optional[Sequence[slice]] = None) -> np.ndarray:
    """Round ``params`` to the level's grid and return it in float64.

    INT8 is symmetric with one scale ``max|w| / 127`` per tensor; pass
    ``segments`` to quantize each tensor of a flat vector separately,
    otherwise the whole vector is one tensor.
    """
    level = QuantizationLevel.parse(level)
    w = np.asarray(params, dtype=np.float64)
    if level is QuantizationLevel.NONE:
        return w.copy()
    if level is QuantizationLevel.F32:
        return w.astype(np.float32).astype(np.float64)
    if level is QuantizationLevel.F16:
        return w.astype(np.float16).astype(np.float64)
    if segments is None:
        return _int8(w)
    out = np.empty_like(w)
    for seg in segments:
        out[seg] = _int8(w[seg])
    return out


def aggregate(client_params: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Weighted mean ``sum_c (n_c / n) theta_c``.

    Clients are reduced in a canonical order (by weight, then by the bytes of
    their vector), so any permutation of the input pairs gives the same bits.
    The sum is taken as offsets from the first vector in that order, which
    makes identical inputs a bitwise fixed point; the result is clipped to the
    per-coordinate client range so rounding never leaves the convex hull.
    """
    vecs = [np.asarray(p, dtype=np.float64) for p in client_params]
    w = np.asarray(weights, dtype=np.float64)
    if not vecs:
        raise ValueError("nothing to aggregate")
    if len(vecs) != w.size:
        raise ValueError(f"{len(vecs)} parameter vectors but {w.size} weights")
    if any(v.shape != vecs[0].shape for v in vecs):
        raise ValueError("client parameter vectors have different lengths")
    if np.any(w < 0) or not w.sum() > 0:
        raise ValueError("aggregation weights must be non-negative with a positive sum")

    order = sorted(range(len(vecs)), key=lambda c: (w[c], vecs[c].tobytes()))
    total = w.sum()
    ref = vecs[order[0]]
    acc = np.zeros_like(ref)
    for c in order[1:]:
        acc += (w[c] / total) * (vecs[c] - ref)
    out = ref + acc
    stack_min = np.minimum.reduce([vecs[c] for c in order])
    stack_max = np.maximum.reduce([vecs[c] for c in order])
    return np.clip(out, stack_min, stack_max)


@dataclass
class FedConfig:
    rounds: int = 10
    local_steps: int = 2500
    batch_size: int = 20
    lr: float = 1e-3
    seed: int = 0
    negatives: int = DEFAULT_NEGATIVES
    min_window: int = MIN_WINDOW
    quantization: Optional[Sequence] = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if self.local_steps < 0 or self.batch_size < 1:
            raise ValueError("local_steps must be >= 0 and batch_size >= 1")

    def level(self, client: int) -> QuantizationLevel:
        if not self.quantization:
            return QuantizationLevel.NONE
        return QuantizationLevel.parse(self.quantization[client])


@dataclass
class RoundState:
    round: int
    params: EncoderParams
    client_params: list = field(default_factory=list)
    client_counts: list = field(default_factory=list)


@dataclass
class ClientUpdate:
    client: int
    params: np.ndarray
    losses: np.ndarray
    wall_ms: float


def client_rng(seed: int, client: int, round_index: int) -> np.random.Generator:
    return substream(seed, "federate", client, round_index)


def client_update(global_params: EncoderParams, pool: np.ndarray, client: int, round_index: int, config: FedConfig) -> ClientUpdate:
    """Download, train locally, upload (quantizing at both boundaries)."""
    start = time.perf_counter()
    level = config.level(client)
    segments = global_params.segments()
    local = EncoderParams(global_params.config, quantize_roundtrip(global_params.flat, level, segments))
    adam = AdamState(local.flat.size, lr=config.lr)
    local, _, losses = local_train(
        local,
        pool,
        config.local_steps,
        config.batch_size,
        adam,
        client_rng(config.seed, client, round_index),
        negatives=config.negatives,
        min_window=config.min_window,
    )
    upload = quantize_roundtrip(local.flat, level, segments)
    return ClientUpdate(client, upload, losses, (time.perf_counter() - start) * 1e3)


def run_round(state: RoundState, pools: Sequence[np.ndarray], config: FedConfig, counts: Optional[Sequence[int]] = None):
    """One communication round; returns ``(new_state, updates)``.

    ``pools[c]`` is client ``c``'s unlabeled data as (frames, 2, T).
    Aggregation weights default to the unlabeled pool sizes.
    """
    counts = [len(p) for p in pools] if counts is None else list(counts)
    t = state.round + 1
    jobs = range(len(pools))
    if config.n_jobs > 1:
        with ThreadPoolExecutor(config.n_jobs) as ex:
            updates = list(ex.map(lambda c: client_update(state.params, pools[c], c, t, config), jobs))
    else:
        updates = [client_update(state.params, pools[c], c, t, config) for c in jobs]
    new_flat = aggregate([u.params for u in updates], counts)
    new_state = RoundState(t, EncoderParams(state.params.config, new_flat), [u.params for u in updates], counts)
    return new_state, updates


def run_training(initial: EncoderParams, pools: Sequence[np.ndarray], config: FedConfig, callback=None, start_round: int = 0):
    """Run rounds ``start_round + 1 .. config.rounds``.

    ``callback(state, updates)`` is invoked after each round (checkpointing,
    metrics). Returns ``(final_params, metrics)`` with one metrics row per
    (round, client).
    """
    state = RoundState(start_round, initial)
    metrics = []
    for _ in range(start_round, config.rounds):
        state, updates = run_round(state, pools, config)
        for u in updates:
            mean_loss = float(np.mean(u.losses)) if u.losses.size else float("nan")
            metrics.append({"round": state.round, "client": u.client, "mean_loss": mean_loss, "wall_ms": u.wall_ms})
        if callback is not None:
            callback(state, updates)
    return state.params, metrics
