"""Shared attack plumbing: observed gradients, IIP scoring, configs and outcomes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..she import EncryptionMask

PASSIVE = ("DLG", "Inverting")
ACTIVE = ("CAH", "RTF")
ATTACKS = PASSIVE + ACTIVE


@dataclass(frozen=True)
class ObservedGradient:
    """Gradient as reconstructed by the server; NaN marks hidden coordinates."""

    values: np.ndarray
    visible: np.ndarray
    sigma: float = 0.0
    phase: str = "auth"

    @property
    def n_visible(self) -> int:
        return int(self.visible.sum())


def infer_gradient(w_prev: np.ndarray, w_next: np.ndarray, lr: float,
                   mask: EncryptionMask | None = None, sigma: float = 0.0,
                   phase: str = "auth") -> ObservedGradient:
    """(w_prev - w_next) / lr on plaintext coordinates; masked ones stay unknown."""
    if lr == 0:
        raise ValueError("cannot infer a gradient from a zero learning rate")
    w_prev = np.asarray(w_prev, dtype=np.float64)
    w_next = np.asarray(w_next, dtype=np.float64)
    visible = np.ones(w_prev.shape, dtype=bool) if mask is None else ~mask.bits
    values = np.full(w_prev.shape, np.nan)
    values[visible] = (w_prev[visible] - w_next[visible]) / lr
    return ObservedGradient(values, visible, sigma, phase)


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    iterations: int | None = None
    tv_weight: float = 1e-3
    lr: float = 0.1
    bins: int = 32
    batch_size: int | None = None
    client_lr: float = 0.1
    restarts: int = 1

    def __post_init__(self):
        if self.kind not in ATTACKS:
            raise ValueError(f"unknown attack {self.kind!r}; choose from {ATTACKS}")
        if self.kind in PASSIVE and self.batch_size not in (None, 1):
            raise ValueError("passive attacks observe single-sample gradients")

    @property
    def budget(self) -> int:
        if self.iterations is not None:
            return self.iterations
        return {"DLG": 300, "Inverting": 1000}.get(self.kind, 0)

    @property
    def batch(self) -> int:
        if self.kind in PASSIVE:
            return 1
        return self.batch_size or 8


@dataclass
class AttackOutcome:
    reconstructions: np.ndarray          # (k, d)
    assigned: np.ndarray                 # (k,) target position each reconstruction is scored against, -1 if none
    matched: np.ndarray                  # (k,) nearest pool neighbour equals assigned target
    target_ids: np.ndarray               # pool indices of the batch
    recovered: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))  # per target, MSE <= 1e-8
    loss: float = float("nan")
    failed: bool = False
    seed: int = 0

    @property
    def success_rate(self) -> float:
        """IIP: fraction of reconstructions matched to their source image."""
        if len(self.matched) == 0:
            return 0.0
        return float(np.mean(self.matched))


def failed_outcome(target_ids, seed: int = 0, loss: float = float("nan")) -> AttackOutcome:
    target_ids = np.asarray(target_ids)
    return AttackOutcome(np.zeros((0, 0)), np.zeros(0, dtype=int), np.zeros(0, dtype=bool),
                         target_ids, np.zeros(len(target_ids), dtype=bool), loss, True, seed)


def nearest_neighbours(recs: np.ndarray, pool: np.ndarray) -> list[np.ndarray]:
    """For each reconstruction, every pool index attaining the minimal Euclidean distance."""
    recs = np.atleast_2d(recs)
    d2 = (np.square(recs).sum(1)[:, None] - 2 * recs @ pool.T + np.square(pool).sum(1)[None, :])
    out = []
    for row in d2:
        best = row.min()
        out.append(np.flatnonzero(row <= best + 1e-12 * max(1.0, abs(best))))
    return out


def match_flags(recs: np.ndarray, pool: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """``targets[k]`` is the pool index reconstruction k should identify (-1: none)."""
    if len(pool) == 0:
        raise ValueError("candidate pool is empty")
    if len(recs) == 0:
        return np.zeros(0, dtype=bool)
    nn = nearest_neighbours(recs, pool)
    return np.array([t >= 0 and t in set(ids.tolist()) for ids, t in zip(nn, targets)], dtype=bool)


def iip_score(reconstructions: np.ndarray, pool: np.ndarray, targets) -> float:
    """Fraction of reconstructions whose nearest pool image is their true source."""
    pool = np.asarray(pool, dtype=np.float64).reshape(len(pool), -1)
    recs = np.asarray(reconstructions, dtype=np.float64).reshape(-1, pool.shape[1]) if len(pool) else reconstructions
    flags = match_flags(recs, pool, np.asarray(targets))
    return float(flags.mean()) if len(flags) else 0.0
