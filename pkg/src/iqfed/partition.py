"""Splitting generated frames across simulated clients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .signal import FrameSet, Modulation

# Unlabeled counts per client, columns ordered [BPSK, QPSK, 8-PSK, 16-QAM].
NONIID_UNLABELED = np.array(
    [
        [6000, 6000, 1000, 1000],
        [1000, 6000, 6000, 1000],
        [1000, 1000, 6000, 6000],
        [6000, 1000, 1000, 6000],
    ]
)
NONIID_LABELED = NONIID_UNLABELED // 5


def noniid_tables(divisor: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """The four-client label-skew tables, optionally scaled down by ``divisor``."""
    return NONIID_UNLABELED // divisor, NONIID_LABELED // divisor


@dataclass
class ClientDataset:
    """One client's pools. Unlabeled frames carry no labels, so their per-class
    counts are tracked separately in ``unlabeled_counts``."""

    client_id: int
    unlabeled: FrameSet
    labeled: FrameSet
    test: FrameSet = field(default_factory=FrameSet.empty)
    num_classes: int = 4
    unlabeled_counts: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.unlabeled_counts is None:
            self.unlabeled_counts = np.zeros(self.num_classes, dtype=np.int64)
        self.unlabeled_counts = np.asarray(self.unlabeled_counts, dtype=np.int64)
        if int(self.unlabeled_counts.sum()) != len(self.unlabeled):
            raise ValueError("unlabeled per-class counts do not match the pool size")

    def counts(self) -> dict:
        return {
            "unlabeled": self.unlabeled_counts.tolist(),
            "labeled": self.labeled.class_counts(self.num_classes).tolist(),
            "test": self.test.class_counts(self.num_classes).tolist(),
        }


@dataclass(frozen=True)
class DirichletSpec:
    concentration: float
    num_clients: int
    num_classes: int = 4

    def __post_init__(self):
        if not self.concentration > 0:
            raise ValueError(f"Dirichlet concentration must be positive, got {self.concentration}")
        if self.num_clients < 1:
            raise ValueError("need at least one client")


def _take(pool: FrameSet, cursor: int, count: int) -> FrameSet:
    return pool.subset(slice(cursor, cursor + count))


def _split_by_counts(frames_by_class: Mapping[int, FrameSet], table: np.ndarray, start: Optional[dict] = None):
    """Carve consecutive runs of each class pool according to ``table`` (clients x classes)."""
    table = np.asarray(table, dtype=np.int64)
    cursor = dict(start or {})
    out = []
    for row in table:
        parts = []
        for k, count in enumerate(row):
            if count == 0:
                continue
            pos = cursor.get(k, 0)
            parts.append(_take(frames_by_class[k], pos, int(count)))
            cursor[k] = pos + int(count)
        out.append(FrameSet.concat(parts) if parts else FrameSet.empty(_frame_length(frames_by_class)))
    return out, cursor


def _frame_length(frames_by_class) -> int:
    for pool in frames_by_class.values():
        return pool.frame_length
    return 100


def fixed_partition(
    frames_by_class: Mapping[int, FrameSet],
    unlabeled_table,
    labeled_table,
) -> list[ClientDataset]:
    """Assign exact per-client, per-class counts; no frame is used twice.

    Unlabeled frames are drawn first from each class pool, labeled frames
    from the remainder.
    """
    unlabeled_table = np.asarray(unlabeled_table, dtype=np.int64)
    labeled_table = np.asarray(labeled_table, dtype=np.int64)
    if unlabeled_table.shape != labeled_table.shape:
        raise ValueError("unlabeled and labeled tables must have the same shape")
    if np.any(unlabeled_table < 0) or np.any(labeled_table < 0):
        raise ValueError("partition tables must be non-negative")
    num_classes = unlabeled_table.shape[1]
    need = unlabeled_table.sum(axis=0) + labeled_table.sum(axis=0)
    for k in range(num_classes):
        have = len(frames_by_class[k]) if k in frames_by_class else 0
        if have < need[k]:
            name = Modulation(k).name if k < len(Modulation) else str(k)
            raise ValueError(f"class {k} ({name}) has {have} frames but the table needs {need[k]}")

    unlabeled, cursor = _split_by_counts(frames_by_class, unlabeled_table)
    labeled, _ = _split_by_counts(frames_by_class, labeled_table, cursor)
    return [
        ClientDataset(c, u.unlabeled(), l, num_classes=num_classes, unlabeled_counts=unlabeled_table[c])
        for c, (u, l) in enumerate(zip(unlabeled, labeled))
    ]


def dirichlet_fractions(spec: DirichletSpec, rng: np.random.Generator) -> np.ndarray:
    """Per-class client shares, shape (classes, clients); each row sums to 1.

    Sampled as normalized Gamma draws. Rows whose draws all underflow to
    zero fall back to a single client picked uniformly.
    """
    alpha = np.full(spec.num_clients, float(spec.concentration))
    frac = np.empty((spec.num_classes, spec.num_clients))
    for k in range(spec.num_classes):
        g = rng.standard_gamma(alpha)
        total = g.sum()
        if total > 0:
            frac[k] = g / total
        else:
            frac[k] = 0.0
            frac[k, rng.integers(spec.num_clients)] = 1.0
    return frac


def integerize(fractions: np.ndarray, count: int) -> np.ndarray:
    """Largest-remainder rounding of ``fractions * count``; ties favour lower ids."""
    raw = np.asarray(fractions, dtype=float) * count
    base = np.floor(raw).astype(np.int64)
    short = int(count - base.sum())
    if short > 0:
        rem = raw - base
        # stable sort on -rem keeps lower client ids first among ties
        order = np.argsort(-rem, kind="stable")
        base[order[:short]] += 1
    return base


def dirichlet_tables(spec: DirichletSpec, unlabeled_per_class, labeled_per_class, rng):
    """Draw Dirichlet shares once per class and apply them to both pools."""
    frac = dirichlet_fractions(spec, rng)
    unlabeled_per_class = np.broadcast_to(np.asarray(unlabeled_per_class, dtype=np.int64), (spec.num_classes,))
    labeled_per_class = np.broadcast_to(np.asarray(labeled_per_class, dtype=np.int64), (spec.num_classes,))
    u = np.stack([integerize(frac[k], int(unlabeled_per_class[k])) for k in range(spec.num_classes)], axis=1)
    l = np.stack([integerize(frac[k], int(labeled_per_class[k])) for k in range(spec.num_classes)], axis=1)
    return frac, u, l


def dirichlet_partition(
    frames_by_class: Mapping[int, FrameSet],
    spec: DirichletSpec,
    rng: np.random.Generator,
    labeled_fraction: float = 1 / 6,
) -> list[ClientDataset]:
    """Split every class pool across clients with Dirichlet(concentration * 1) shares.

    Of each class pool, ``labeled_fraction`` is reserved for the labeled pools
    (one labeled frame per five unlabeled by default); both pools reuse the
    same per-class shares.
    """
    totals = np.array([len(frames_by_class.get(k, FrameSet.empty())) for k in range(spec.num_classes)])
    labeled_per_class = np.floor(totals * labeled_fraction).astype(np.int64)
    _, u, l = dirichlet_tables(spec, totals - labeled_per_class, labeled_per_class, rng)
    return fixed_partition(frames_by_class, u, l)


def make_test_split(
    labeled: FrameSet,
    generate: Callable[[int, int, np.random.Generator], FrameSet],
    rng: np.random.Generator,
    num_classes: int = 4,
    divisor: int = 10,
) -> tuple[FrameSet, FrameSet]:
    """Fresh test frames with per-class counts ``floor(train_count / divisor)``.

    ``generate(class_index, count, rng)`` must draw new frames from the same
    channel law as the labeled pool, so the test set is disjoint by
    construction.
    """
    if len(labeled) == 0:
        raise ValueError("labeled pool is empty")
    counts = labeled.class_counts(num_classes) // divisor
    parts = [generate(k, int(n), rng) for k, n in enumerate(counts) if n > 0]
    test = FrameSet.concat(parts) if parts else FrameSet.empty(labeled.frame_length)
    return labeled, test


def partition_manifest(clients: Sequence[ClientDataset], seeds: Optional[dict] = None) -> dict:
    return {
        "seeds": dict(seeds or {}),
        "clients": [{"client_id": c.client_id, **c.counts()} for c in clients],
    }
