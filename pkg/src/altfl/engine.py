"""FedAvg round loop with DP / selective-HE / synthetic-data interleaving schedules.

Rounds are numbered 1..R. Every random stream is derived from
``(seed, purpose, round, client)`` so that methods which reduce to one another
consume identical randomness and produce identical trajectories.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import dp as dpm
from . import model as mc
from . import she
from .data import AugmentationSpec, Dataset, mix_augment

log = logging.getLogger(__name__)

METHODS = ("FedAvg", "DP-only", "HE-only", "SI/DP", "SI/HE", "PI", "MP")
INTERLEAVED = ("SI/DP", "SI/HE", "PI")

_SHUFFLE, _NOISE, _WARMUP, _AUGMENT = 1, 2, 3, 4


class TrainingDiverged(RuntimeError):
    def __init__(self, round_index: int, cause: Exception, log_rows: list):
        super().__init__(f"training diverged in round {round_index}: {cause}")
        self.round_index = round_index
        self.cause = cause
        self.log_rows = log_rows

    def __reduce__(self):
        # workers send this back through a process pool
        return type(self), (self.round_index, self.cause, self.log_rows)


@dataclass(frozen=True)
class InterleaveRatio:
    syn: int
    tot: int

    def __post_init__(self):
        if self.tot <= 0 or self.syn < 0 or self.syn > self.tot:
            raise ValueError(f"invalid interleaving ratio {self.syn}/{self.tot}")
        g = math.gcd(self.syn, self.tot)
        object.__setattr__(self, "syn", self.syn // g)
        object.__setattr__(self, "tot", self.tot // g)

    @classmethod
    def parse(cls, value) -> "InterleaveRatio":
        if isinstance(value, InterleaveRatio):
            return value
        frac = Fraction(str(value)).limit_denominator(1000)
        return cls(frac.numerator, frac.denominator)

    @property
    def value(self) -> float:
        return self.syn / self.tot

    def __str__(self):
        return f"{self.syn}/{self.tot}"


def round_flag(t: int, ratio: InterleaveRatio) -> bool:
    """True for authentic rounds (SI/DP, SI/HE) and HE rounds (PI)."""
    if t < 1:
        raise ValueError("rounds start at 1")
    return t % ratio.tot < ratio.tot - ratio.syn


def fedavg_aggregate(models: Sequence[np.ndarray], sizes: Sequence[int]) -> np.ndarray:
    shapes = {np.shape(m) for m in models}
    if len(shapes) != 1:
        raise ValueError("client models differ in shape")
    if min(sizes) <= 0:
        raise ValueError("client sizes must be positive")
    return she.weighted_sum(models, fedavg_weights(sizes))


def fedavg_weights(sizes: Sequence[int]) -> list[float]:
    total = float(sum(sizes))
    return [s / total for s in sizes]


@dataclass(frozen=True)
class ConvergenceDetector:
    window: int = 10
    threshold: float = 0.001
    patience: int = 10

    def detect(self, history: Sequence[float]) -> int | None:
        """First 1-based round closing ``patience`` consecutive small moving-average gains."""
        h = np.asarray(history, dtype=np.float64)
        if len(h) < self.window + 1:
            return None
        ma = np.convolve(h, np.ones(self.window) / self.window, mode="valid")
        run = 0
        for k in range(1, len(ma)):
            run = run + 1 if ma[k] - ma[k - 1] < self.threshold else 0
            if run >= self.patience:
                return k + self.window
        return None


def window_for(method: str, ratio: InterleaveRatio | None) -> int:
    if method in INTERLEAVED and ratio is not None and ratio.value in (0.25, 0.75):
        return 8
    return 10


def trimmed_mean(values: Sequence[float]) -> float:
    """Mean after dropping one best and one worst value (plain mean below 3 values)."""
    v = sorted(values)
    if len(v) >= 3:
        v = v[1:-1]
    return float(np.mean(v))


@dataclass(frozen=True)
class ComputeModel:
    """Modeled training seconds per processed sample (per-sample gradients cost more)."""

    plain_seconds: float = 2.0e-5
    dp_seconds: float = 6.0e-5


@dataclass(frozen=True)
class TrainConfig:
    method: str = "FedAvg"
    sigma: float = 0.0
    clip: float = dpm.DEFAULT_CLIP
    eta: float = 0.0
    ratio: InterleaveRatio = InterleaveRatio(0, 1)
    rounds: int = 50
    lr: float = 0.1
    batch_size: int = 32
    local_epochs: int = 1
    local_steps: int | None = None
    seed: int = 0
    early_stop: bool = False
    window: int | None = None
    threshold: float = 0.001
    patience: int = 10
    augment: float = 0.0
    backend: str = "simulator"
    cost: she.HeCostModel = she.HeCostModel()
    compute: ComputeModel = ComputeModel()
    level: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        object.__setattr__(self, "ratio", InterleaveRatio.parse(self.ratio))
        if self.ratio.value == 1 and self.method in ("SI/DP", "SI/HE"):
            raise ValueError("rho = 1 is only valid for PI")
        if not 0 <= self.eta <= 1:
            raise ValueError("eta must lie in [0, 1]")
        if self.rounds < 1:
            raise ValueError("need at least one round")

    def detector(self) -> ConvergenceDetector:
        w = self.window or window_for(self.method, self.ratio)
        return ConvergenceDetector(w, self.threshold, self.patience)

    @property
    def uses_he(self) -> bool:
        if self.method in ("HE-only", "MP"):
            return True
        if self.method in ("SI/HE", "PI"):
            return any(self.round_kind(t)[2] for t in range(1, self.ratio.tot + 1))
        return False

    def round_kind(self, t: int) -> tuple[bool, bool, bool]:
        """(synthetic data, DP-SGD, S-HE) for round ``t``."""
        m = self.method
        flag = round_flag(t, self.ratio)
        dp_on = self.sigma > 0
        he_on = self.eta > 0 and self.backend != "none"
        if m == "FedAvg":
            return False, False, False
        if m == "DP-only":
            return False, dp_on, False
        if m == "HE-only":
            return False, False, he_on
        if m == "SI/DP":
            return (False, dp_on, False) if flag else (True, False, False)
        if m == "SI/HE":
            return (False, False, he_on) if flag else (True, False, False)
        if m == "PI":
            return (False, False, he_on) if flag else (False, dp_on, False)
        return False, dp_on, he_on  # MP

    def echo(self) -> dict:
        return {"method": self.method, "sigma": self.sigma, "clip": self.clip, "eta": self.eta,
                "rho": str(self.ratio), "rounds": self.rounds, "lr": self.lr,
                "batch_size": self.batch_size, "local_epochs": self.local_epochs,
                "local_steps": self.local_steps, "seed": self.seed, "augment": self.augment,
                "backend": self.backend, "level": self.level}


@dataclass
class Federation:
    arch: mc.ModelArch
    authentic: list[Dataset]
    test: Dataset
    synthetic: list[Dataset] | None = None

    @property
    def sizes(self) -> list[int]:
        return [len(d) for d in self.authentic]


@dataclass
class RunRecord:
    accuracy: float
    convergence_round: int
    converged: bool
    rounds_run: int
    comm_bytes: int
    compute_seconds: float
    epsilon: float
    seed: int
    config: dict
    wall_seconds: float = 0.0
    history: list[float] = field(default_factory=list, repr=False)
    log: list[dict] = field(default_factory=list, repr=False)
    final_params: np.ndarray | None = field(default=None, repr=False)

    def row(self) -> dict:
        return {**self.config, "accuracy": self.accuracy,
                "convergence_round": self.convergence_round, "converged": self.converged,
                "rounds_run": self.rounds_run, "comm_bytes": self.comm_bytes,
                "compute_seconds": self.compute_seconds, "epsilon": self.epsilon}


def _rng(seed: int, purpose: int, t: int, client: int) -> np.random.Generator:
    return np.random.default_rng([seed, purpose, t, client])


def local_train(arch, params, ds: Dataset, cfg: TrainConfig, dp_on: bool, t: int, client: int):
    """One client's local update. Returns (params, samples processed, DP steps)."""
    shuffle = _rng(cfg.seed, _SHUFFLE, t, client)
    noise = _rng(cfg.seed, _NOISE, t, client)
    dpp = dpm.DpParams(cfg.sigma, cfg.clip)
    n = len(ds)
    bsz = min(cfg.batch_size, n)
    batches = []
    if cfg.local_steps is not None:
        while len(batches) < cfg.local_steps:
            order = shuffle.permutation(n)
            batches += [order[s:s + bsz] for s in range(0, n, bsz)]
        batches = batches[:cfg.local_steps]
    else:
        for _ in range(cfg.local_epochs):
            order = shuffle.permutation(n)
            batches += [order[s:s + bsz] for s in range(0, n, bsz)]
    seen = 0
    for idx in batches:
        batch = mc.Batch(ds.samples[idx], ds.labels[idx])
        if dp_on:
            params = dpm.dp_sgd_step(arch, params, batch, dpp, cfg.lr, noise)
        else:
            _, g = mc.loss_and_gradient(arch, params, batch)
            params = mc.apply_step(params, g, cfg.lr)
        seen += len(idx)
    return params, seen, len(batches) if dp_on else 0


def sensitivity_scores(arch, params, ds: Dataset, cfg: TrainConfig, client: int) -> np.ndarray:
    """Mean |gradient| over one plain local epoch started from ``params``."""
    rng = _rng(cfg.seed, _WARMUP, 0, client)
    order = rng.permutation(len(ds))
    bsz = min(cfg.batch_size, len(ds))
    acc = np.zeros_like(params)
    steps = 0
    p = params
    for s in range(0, len(ds), bsz):
        idx = order[s:s + bsz]
        _, g = mc.loss_and_gradient(arch, p, mc.Batch(ds.samples[idx], ds.labels[idx]))
        acc += np.abs(g)
        p = mc.apply_step(p, g, cfg.lr)
        steps += 1
    return acc / steps


def warmup_mask(fed: Federation, params: np.ndarray, cfg: TrainConfig) -> she.EncryptionMask:
    scores = [sensitivity_scores(fed.arch, params, d, cfg, i) for i, d in enumerate(fed.authentic)]
    agg = she.aggregate_sensitivity(scores, fedavg_weights(fed.sizes))
    return she.build_mask(agg, cfg.eta, fed.arch.num_params)


def make_backend(cfg: TrainConfig) -> she.Backend:
    if cfg.backend == "ckks":
        return she.CkksBackend(cfg.cost)
    return she.SimulatorBackend(cfg.cost)


def run_training(cfg: TrainConfig, fed: Federation, params: np.ndarray | None = None) -> RunRecord:
    """Train for ``cfg.rounds`` rounds (or until convergence when early stopping)."""
    start = time.perf_counter()
    arch = fed.arch
    n_params = arch.num_params
    params = mc.init_model(arch, cfg.seed) if params is None else params.copy()
    sizes = fed.sizes
    n_clients = len(sizes)

    authentic = fed.authentic
    if cfg.augment > 0:
        if fed.synthetic is None:
            raise ValueError("augmentation needs synthetic client data")
        authentic = [mix_augment(d, s, AugmentationSpec(cfg.augment), int(_rng(cfg.seed, _AUGMENT, 0, i).integers(2 ** 31)))
                     for i, (d, s) in enumerate(zip(fed.authentic, fed.synthetic))]
    needs_syn = any(cfg.round_kind(t)[0] for t in range(1, cfg.ratio.tot + 1))
    if needs_syn and fed.synthetic is None:
        raise ValueError(f"{cfg.method} with rho={cfg.ratio} needs synthetic client data")

    backend = make_backend(cfg)
    comm = 0
    compute = 0.0
    mask = None
    if cfg.uses_he and cfg.eta > 0 and cfg.backend != "none":
        mask = warmup_mask(fed, params, cfg)
        compute += cfg.compute.plain_seconds * sum(sizes)
        comm += she.BYTES_PER_VALUE * n_params + math.ceil(n_params / 8)

    dp_steps = [0] * n_clients
    history: list[float] = []
    rows: list[dict] = []
    detector = cfg.detector()
    converged_at = None
    down_bytes = she.BYTES_PER_VALUE * n_params
    t = 0
    for t in range(1, cfg.rounds + 1):
        syn, dp_on, he_on = cfg.round_kind(t)
        phase = "syn" if syn else "auth" + ("+dp" if dp_on else "") + ("+he" if he_on else "")
        local, uploads = [], []
        up_bytes = 0
        try:
            for i in range(n_clients):
                ds = fed.synthetic[i] if syn else authentic[i]
                w_i, seen, steps = local_train(arch, params, ds, cfg, dp_on, t, i)
                compute += seen * (cfg.compute.dp_seconds if dp_on else cfg.compute.plain_seconds)
                dp_steps[i] += steps
                if he_on:
                    pu = she.protect(w_i, mask, backend)
                    uploads.append(pu)
                    up_bytes = pu.nbytes
                else:
                    local.append(w_i)
                    up_bytes = she.BYTES_PER_VALUE * n_params
            weights = [len(fed.synthetic[i]) if syn else len(authentic[i]) for i in range(n_clients)]
            if he_on:
                agg = she.he_aggregate(uploads, fedavg_weights(weights), mask)
                params = she.unprotect(agg)
                crypto = she.modeled_seconds(cfg.cost, mask.n_hidden, n_clients)
                compute += crypto["client"] * n_clients + crypto["server"]
                next_down = agg.nbytes
            else:
                params = fedavg_aggregate(local, weights)
                next_down = she.BYTES_PER_VALUE * n_params
            if not np.all(np.isfinite(params)):
                raise FloatingPointError("non-finite aggregate")
            acc = mc.accuracy(arch, params, fed.test.samples, fed.test.labels)
        except (FloatingPointError, mc.NonFiniteError) as exc:
            rows.append({"round": t, "phase": phase, "error": str(exc)})
            raise TrainingDiverged(t, exc, rows) from exc
        comm += down_bytes + up_bytes
        down_bytes = next_down
        history.append(acc)
        rows.append({"round": t, "phase": phase, "accuracy": acc,
                     "bytes_up": up_bytes, "bytes_down": down_bytes})
        if converged_at is None:
            converged_at = detector.detect(history)
            if converged_at is not None and cfg.early_stop:
                break

    eps = 0.0
    if any(dp_steps):
        eps = max(
            dpm.rdp_epsilon(dpm.DpParams(cfg.sigma, cfg.clip, min(1.0, cfg.batch_size / len(d))),
                            s, delta=1.0 / len(d)).epsilon
            for d, s in zip(authentic, dp_steps))
    rec = RunRecord(
        accuracy=max(history),
        convergence_round=converged_at if converged_at is not None else t,
        converged=converged_at is not None,
        rounds_run=t,
        comm_bytes=int(comm),
        compute_seconds=compute,
        epsilon=eps,
        seed=cfg.seed,
        config=cfg.echo(),
        wall_seconds=time.perf_counter() - start,
        history=history,
        log=rows,
        final_params=params,
    )
    log.debug("run %s done: acc=%.4f rounds=%d", cfg.echo(), rec.accuracy, t)
    return rec


def repeat_runs(cfg: TrainConfig, fed: Federation, seeds: Sequence[int]) -> list[RunRecord]:
    return [run_training(replace(cfg, seed=s), fed) for s in seeds]


def summarize(records: Sequence[RunRecord]) -> dict:
    """Trimmed means over repetitions of every reported metric."""
    keys = ("accuracy", "convergence_round", "comm_bytes", "compute_seconds", "epsilon")
    return {k: trimmed_mean([getattr(r, k) for r in records]) for k in keys}


def prepare_federation(ds: Dataset, arch: mc.ModelArch, num_clients: int, alpha: float,
                       data_seed: int = 0, test_fraction: float = 0.2,
                       synthetic: Dataset | None = None) -> Federation:
    """Hold out a test split, Dirichlet-partition the rest, and deal synthetic data IID.

    Without an explicit synthetic set a surrogate is fitted to the training split.
    Client ``i`` receives as many synthetic samples as it holds authentic ones.
    """
    from .data import PartitionSpec, dirichlet_partition, iid_split, surrogate_synthetic, train_test_split

    train, test = train_test_split(ds, test_fraction, data_seed)
    clients = dirichlet_partition(train, PartitionSpec(num_clients, alpha, data_seed, min_size=arch.num_classes))
    if synthetic is None:
        synthetic = surrogate_synthetic(train, data_seed + 1)
    syn = iid_split(synthetic, [len(c) for c in clients], data_seed + 2)
    return Federation(arch, clients, test, syn)
