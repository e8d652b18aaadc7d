"""Experiment orchestration and the results archive.

An experiment directory holds::

    records.csv          one row per training run (config echo + metrics)
    attacks.csv          attack success per (method configuration, level, attack)
    matrices/<attack>.csv
    levels.json, levels.txt
    selection/<rq>.txt, selection/<rq>.csv
    report.txt
    failures.json        present only when some task failed

Every row is keyed by its configuration, completed keys are skipped on rerun
and files are rewritten sorted by key, so an archive is a pure function of the
spec. Wall-clock timings go to the log only.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import data as dmod
from . import levels as lv
from . import model as mc
from . import selection as sel
from . import she
from .attacks.common import ATTACKS, AttackConfig
from .attacks.trials import AttackEnv, success_rate
from .engine import METHODS, ComputeModel, TrainConfig, TrainingDiverged, run_training, trimmed_mean

log = logging.getLogger(__name__)

ARCHIVE_ENV = "ALTFL_ARCHIVE"
SCHEMA_VERSION = 1
RECORD_COLUMNS = (
    "key", "schema", "method", "param", "value", "level", "alpha", "augment", "seed",
    "sigma", "eta", "rho", "clip", "rounds", "lr", "batch_size", "local_epochs", "backend",
    "clients", "dataset", "arch", "data_seed",
    "accuracy", "convergence_round", "converged", "rounds_run", "comm_bytes", "compute_seconds", "epsilon",
)
ATTACK_COLUMNS = ("key", "schema", "attack", "method", "param", "value", "level", "sigma", "eta", "rho",
                  "batch", "trials", "pool_size", "seed", "rate")
CANDIDATE_COLUMNS = ("method", "param", "value", "level", "alpha", "asr", "accuracy", "comm_bytes",
                     "compute_seconds", "convergence_round")
_PARAM = {"MP": "eta", "SI/DP": "rho", "SI/HE": "rho", "PI": "rho"}


class SpecError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    dataset: str = "digits8"
    shape: list | None = None                 # sample shape for CSV datasets
    arch: str | dict = "desk_mlp"
    clients: int = 3
    alphas: list = field(default_factory=lambda: [0.5])
    augment: list = field(default_factory=lambda: [0.0])
    methods: dict = field(default_factory=lambda: {"FedAvg": [{}]})
    levels: list = field(default_factory=list)
    levels_file: str | None = None
    seeds: list = field(default_factory=lambda: [0])
    data_seed: int = 0
    test_fraction: float = 0.2
    rounds: int = 50
    lr: float = 0.1
    batch_size: int = 32
    local_epochs: int = 1
    clip: float = 4.7
    early_stop: bool = False
    backend: str = "simulator"
    cost: dict = field(default_factory=dict)
    compute: dict = field(default_factory=dict)
    attacks: list = field(default_factory=lambda: list(ATTACKS))
    trials: int = 200
    attack_batch: int = 8
    bins: int = 32
    pool_size: int = 1000
    prior_size: int = 300
    attack_seed: int = 0
    sigma_grid: list = field(default_factory=lambda: list(lv.SIGMA_GRID))
    eta_grid: list = field(default_factory=lambda: list(lv.ETA_GRID))
    threshold: float = lv.THRESHOLD
    thresholds: dict = field(default_factory=lambda: {
        "rq2": {"t_asr": 0.005, "t_acc": 0.04, "t_sc": 0.5, "order": list(sel.RQ2_ORDER)},
        "rq3": {"t_asr": 0.005, "t_acc": 0.1, "t_sc": 0.5, "order": list(sel.RQ3_ORDER)},
    })
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise SpecError(f"unknown spec fields: {sorted(unknown)}")
        spec = cls(**d)
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self):
        for m, cfgs in self.methods.items():
            if m not in METHODS:
                raise SpecError(f"unknown method {m!r}")
            if not cfgs:
                raise SpecError(f"method {m} has an empty configuration list")
        for name, grid in (("alphas", self.alphas), ("seeds", self.seeds), ("augment", self.augment),
                           ("sigma_grid", self.sigma_grid), ("eta_grid", self.eta_grid)):
            if not grid:
                raise SpecError(f"{name} must be non-empty")
        bad = [a for a in self.attacks if a not in ATTACKS]
        if bad:
            raise SpecError(f"unknown attacks {bad}")
        if self.workers < 1:
            raise SpecError("workers must be >= 1")


# --- building blocks (cached per process) ---------------------------------------------

def build_arch(arch) -> mc.ModelArch:
    if isinstance(arch, dict):
        return mc.ModelArch.from_dict(arch)
    if arch == "desk_mlp":
        return mc.desk_mlp()
    if arch == "lenet5":
        return mc.lenet5()
    raise SpecError(f"unknown architecture {arch!r}")


@functools.lru_cache(maxsize=4)
def _dataset(name: str, shape: tuple | None) -> dmod.Dataset:
    if name == "digits8":
        return dmod.load_digits8()
    return dmod.load_dataset(name, shape)


def load_spec_dataset(spec: ExperimentSpec) -> dmod.Dataset:
    return _dataset(spec.dataset, tuple(spec.shape) if spec.shape else None)


@functools.lru_cache(maxsize=8)
def _federation(dataset, shape, arch_json, clients, alpha, data_seed, test_fraction):
    from .engine import prepare_federation
    arch = build_arch(json.loads(arch_json))
    return prepare_federation(_dataset(dataset, shape), arch, clients, alpha, data_seed, test_fraction)


def federation_for(spec: ExperimentSpec, alpha: float):
    return _federation(spec.dataset, tuple(spec.shape) if spec.shape else None, json.dumps(spec.arch),
                       spec.clients, float(alpha), spec.data_seed, spec.test_fraction)


@functools.lru_cache(maxsize=2)
def _attack_env(dataset, shape, arch_json, pool_size, prior_size, seed, clip):
    arch = build_arch(json.loads(arch_json))
    return AttackEnv.from_dataset(_dataset(dataset, shape), arch, pool_size, prior_size, seed=seed, clip=clip)


def attack_env(spec: ExperimentSpec) -> AttackEnv:
    return _attack_env(spec.dataset, tuple(spec.shape) if spec.shape else None, json.dumps(spec.arch),
                       spec.pool_size, spec.prior_size, spec.attack_seed, spec.clip)


# --- task expansion -----------------------------------------------------------------

@dataclass(frozen=True)
class Protection:
    """One method configuration with its DP / HE parameters resolved."""
    method: str
    param: str
    value: str
    level: str
    sigma: float
    eta: float
    rho: str

    @property
    def key(self) -> str:
        cfg = f"{self.param}={self.value}" if self.param else "-"
        return f"{self.method}|{cfg}|{self.level or 'custom'}|sigma={self.sigma!r}|eta={self.eta!r}|rho={self.rho}"


def _fmt(v) -> str:
    return f"{float(v):g}"


def resolve(method: str, cfg: dict, level: lv.PrivacyLevel | None) -> Protection | None:
    """DP / HE parameters for one configuration at one level; None if not applicable there."""
    param = _PARAM.get(method, "")
    rho = str(Fraction(str(cfg.get("rho", 0))).limit_denominator(1000))
    value = ""
    if param == "eta":
        value = _fmt(cfg.get("eta", 0.0))
    elif param == "rho":
        value = rho
    if level is None:
        return Protection(method, param, value, "", float(cfg.get("sigma", 0.0)), float(cfg.get("eta", 0.0)), rho)
    if method == "FedAvg":
        return Protection(method, param, value, level.name, 0.0, 0.0, rho)
    if method == "SI/HE" and level.fixed is not None:
        return None
    he_eta = level.he_eta
    dp_sigma = level.sigma_at(0.0)
    if method == "MP":
        eta = float(cfg.get("eta", 0.0))
        sigma = level.sigma_at(eta)
    else:
        eta = he_eta if method in ("HE-only", "SI/HE", "PI") else 0.0
        sigma = dp_sigma if method in ("DP-only", "SI/DP", "PI") else 0.0
    if method == "PI":
        ratio = Fraction(rho)
        if (ratio > 0 and sigma is None) or (ratio < 1 and eta is None):
            return None
        sigma = sigma or 0.0
        eta = eta or 0.0
    if sigma is None or eta is None:
        return None
    return Protection(method, param, value, level.name, float(sigma), float(eta), rho)


def protections(spec: ExperimentSpec, levels: list[lv.PrivacyLevel] | None) -> list[Protection]:
    out = []
    chosen = [None] if not spec.levels else [_level(levels, n) for n in spec.levels]
    for level in chosen:
        for method in METHODS:
            for cfg in spec.methods.get(method, []):
                p = resolve(method, cfg, level)
                if p is not None and p not in out:
                    out.append(p)
    return out


def _level(levels, name):
    if levels is None:
        raise SpecError("spec names privacy levels but no levels are available; run `levels` or set levels_file")
    for x in levels:
        if x.name == name:
            return x
    raise SpecError(f"level {name!r} is not defined")


@dataclass(frozen=True)
class TrainTask:
    key: str
    protection: Protection
    alpha: float
    augment: float
    seed: int


def train_tasks(spec: ExperimentSpec, levels=None) -> list[TrainTask]:
    tasks = []
    for p in protections(spec, levels):
        for a in spec.alphas:
            for r in spec.augment:
                for s in spec.seeds:
                    key = f"{p.key}|alpha={float(a)!r}|r={float(r)!r}|seed={int(s)}"
                    tasks.append(TrainTask(key, p, float(a), float(r), int(s)))
    return tasks


def train_config(spec: ExperimentSpec, task: TrainTask) -> TrainConfig:
    p = task.protection
    return TrainConfig(
        method=p.method, sigma=p.sigma, clip=spec.clip, eta=p.eta, ratio=p.rho, rounds=spec.rounds,
        lr=spec.lr, batch_size=spec.batch_size, local_epochs=spec.local_epochs, seed=task.seed,
        early_stop=spec.early_stop, augment=task.augment, backend=spec.backend,
        cost=she.HeCostModel(**spec.cost), compute=ComputeModel(**spec.compute), level=p.level)


def _train_job(spec_dict: dict, task: TrainTask) -> dict:
    spec = ExperimentSpec.from_dict(spec_dict)
    cfg = train_config(spec, task)
    rec = run_training(cfg, federation_for(spec, task.alpha))
    log.info("trained %s in %.2fs", task.key, rec.wall_seconds)
    p = task.protection
    return {
        "key": task.key, "schema": SCHEMA_VERSION, "method": p.method, "param": p.param, "value": p.value,
        "level": p.level, "alpha": task.alpha, "augment": task.augment, "seed": task.seed,
        "sigma": p.sigma, "eta": p.eta, "rho": p.rho, "clip": spec.clip, "rounds": spec.rounds, "lr": spec.lr,
        "batch_size": spec.batch_size, "local_epochs": spec.local_epochs, "backend": spec.backend,
        "clients": spec.clients, "dataset": spec.dataset, "arch": json.dumps(spec.arch, sort_keys=True),
        "data_seed": spec.data_seed, "accuracy": rec.accuracy, "convergence_round": rec.convergence_round,
        "converged": rec.converged, "rounds_run": rec.rounds_run, "comm_bytes": rec.comm_bytes,
        "compute_seconds": rec.compute_seconds, "epsilon": rec.epsilon,
    }


# --- archive ------------------------------------------------------------------------

def archive_dir(spec: ExperimentSpec, root=None) -> Path:
    root = root or os.environ.get(ARCHIVE_ENV) or "results"
    return Path(root) / spec.name


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(path: Path, columns, rows) -> None:
    rows = sorted(rows, key=lambda r: r["key"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r[c]) for c in columns])
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(buf.getvalue())
    tmp.replace(path)


def read_rows(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_failures(out: Path, stage: str, failures: dict) -> None:
    path = out / "failures.json"
    current = json.loads(path.read_text()) if path.exists() else {}
    current.pop(stage, None)
    if failures:
        current[stage] = dict(sorted(failures.items()))
    if current:
        path.write_text(json.dumps(current, indent=2, sort_keys=True) + "\n")
    elif path.exists():
        path.unlink()


def _run_pool(fn, jobs, workers):
    """Yield (job key, result or exception) as jobs finish."""
    if workers <= 1:
        for key, args in jobs:
            try:
                yield key, fn(*args)
            except Exception as exc:  # recorded per key, the sweep continues
                yield key, exc
        return
    with ProcessPoolExecutor(workers) as ex:
        futs = {ex.submit(fn, *args): key for key, args in jobs}
        for f in as_completed(futs):
            try:
                yield futs[f], f.result()
            except Exception as exc:
                yield futs[f], exc


def _describe(exc: Exception) -> str:
    if isinstance(exc, TrainingDiverged):
        return f"diverged at round {exc.round_index}: {exc.cause}"
    return f"{type(exc).__name__}: {exc}"


def load_levels(spec: ExperimentSpec, out: Path):
    if spec.levels_file:
        return lv.read_levels(spec.levels_file)
    if (out / "levels.json").exists():
        return lv.read_levels(out / "levels.json")
    return None


def run_train(spec: ExperimentSpec, out: Path) -> dict:
    """Train every pending (configuration, alpha, r, seed). Returns failures by key."""
    levels = load_levels(spec, out) if spec.levels else None
    path = out / "records.csv"
    done = {r["key"]: r for r in read_rows(path)}
    pending = [t for t in train_tasks(spec, levels) if t.key not in done]
    spec_dict = spec.to_dict()
    failures = {}
    rows = list(done.values())
    for key, res in _run_pool(_train_job, [(t.key, (spec_dict, t)) for t in pending], spec.workers):
        if isinstance(res, Exception):
            failures[key] = _describe(res)
            log.warning("task %s failed: %s", key, failures[key])
        else:
            rows.append(res)
            write_rows(path, RECORD_COLUMNS, rows)
    if not path.exists():
        write_rows(path, RECORD_COLUMNS, rows)
    _write_failures(out, "train", failures)
    return failures


def _attack_cfg(spec, kind):
    return AttackConfig(kind, bins=spec.bins, batch_size=None if kind in ("DLG", "Inverting") else spec.attack_batch)


def run_attack(spec: ExperimentSpec, out: Path) -> dict:
    """Attack success for every (configuration, level, attack); alpha and r do not enter trials."""
    levels = load_levels(spec, out) if spec.levels else None
    path = out / "attacks.csv"
    done = {r["key"]: r for r in read_rows(path)}
    rows = list(done.values())
    failures = {}
    env = attack_env(spec)
    for p in protections(spec, levels):
        for kind in spec.attacks:
            key = f"{kind}|{p.key}"
            if key in done:
                continue
            cfg = _attack_cfg(spec, kind)
            try:
                rate = success_rate(env, cfg, p.method, p.sigma, p.eta, p.rho, spec.trials,
                                    spec.attack_seed, spec.workers)
            except Exception as exc:
                failures[key] = _describe(exc)
                continue
            rows.append({"key": key, "schema": SCHEMA_VERSION, "attack": kind, "method": p.method,
                         "param": p.param, "value": p.value, "level": p.level, "sigma": p.sigma,
                         "eta": p.eta, "rho": p.rho, "batch": cfg.batch, "trials": spec.trials,
                         "pool_size": len(env.pool), "seed": spec.attack_seed, "rate": rate})
            write_rows(path, ATTACK_COLUMNS, rows)
    if not path.exists():
        write_rows(path, ATTACK_COLUMNS, rows)
    _write_failures(out, "attack", failures)
    return failures


def run_matrix(spec: ExperimentSpec, out: Path) -> dict:
    env = attack_env(spec)
    for kind in spec.attacks:
        path = out / "matrices" / f"{kind}.csv"
        if path.exists():
            continue
        m = lv.build_matrix(env, _attack_cfg(spec, kind), tuple(sorted(spec.sigma_grid)),
                            tuple(sorted(spec.eta_grid)), spec.trials, spec.attack_seed, spec.workers)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(m.to_csv())
    return {}


def run_levels(spec: ExperimentSpec, out: Path, source: str | None = None) -> list[lv.PrivacyLevel]:
    """Derive levels from the archive's matrices, or from a JSON file of attack rows / levels."""
    if source:
        raw = json.loads(Path(source).read_text())
        raw = raw.get("attacks", raw)
        rows = {a: raw[a] for a in ATTACKS if a in raw}
        levels = lv.derive_levels(rows, spec.threshold)
    else:
        mats = {}
        for a in ATTACKS:
            p = out / "matrices" / f"{a}.csv"
            if not p.exists():
                raise SpecError(f"missing matrix {p}; run `matrix` with all four attacks first")
            mats[a] = lv.SuccessMatrix.from_csv(p.read_text(), a)
        levels = lv.derive_levels(mats, spec.threshold)
    out.mkdir(parents=True, exist_ok=True)
    (out / "levels.json").write_text(lv.levels_to_json(levels))
    (out / "levels.txt").write_text(lv.format_levels(levels))
    return levels


def _num(x) -> float:
    return float(x) if x not in ("", None) else math.nan


def candidates(out: Path) -> list[sel.Candidate]:
    """Join training records (trimmed means over seeds) with attack success per level."""
    recs = read_rows(out / "records.csv")
    atts = read_rows(out / "attacks.csv")
    if not recs:
        raise SpecError("no training records; run `train` first")
    groups = {}
    for r in recs:
        k = (r["method"], r["param"], r["value"], r["level"], r["sigma"], r["eta"], r["rho"],
             r["alpha"], r["augment"])
        groups.setdefault(k, []).append(r)
    asr = {}
    for a in atts:
        k = (a["method"], a["param"], a["value"], a["level"], a["sigma"], a["eta"], a["rho"])
        asr.setdefault(k, {})[a["attack"]] = float(a["rate"])
    out_c = []
    for k in sorted(groups):
        rows = groups[k]
        rates = asr.get(k[:7], {})
        level = k[3]
        if level in ATTACKS:
            rate = rates.get(level, math.nan)
        else:
            rate = max(rates.values()) if rates else math.nan
        out_c.append(sel.Candidate(
            method=k[0], param=k[1], value=k[2], level=level or "custom", alpha=float(k[7]), asr=rate,
            accuracy=trimmed_mean([_num(r["accuracy"]) for r in rows]),
            comm_bytes=trimmed_mean([_num(r["comm_bytes"]) for r in rows]),
            compute_seconds=trimmed_mean([_num(r["compute_seconds"]) for r in rows]),
            convergence_round=trimmed_mean([_num(r["convergence_round"]) for r in rows])))
    return out_c


def read_candidates(path) -> list[sel.Candidate]:
    out = []
    for r in read_rows(Path(path)):
        out.append(sel.Candidate(r["method"], r.get("param", ""), r.get("value", ""), r.get("level", ""),
                                 float(r.get("alpha") or 0), float(r["asr"]), float(r["accuracy"]),
                                 float(r["comm_bytes"]), float(r["compute_seconds"]),
                                 float(r["convergence_round"]) if r.get("convergence_round") else math.inf))
    return out


def run_select(spec: ExperimentSpec, out: Path, input_path=None) -> dict:
    cands = read_candidates(input_path) if input_path else candidates(out)
    missing = [c.label for c in cands if math.isnan(c.asr)]
    if missing:
        raise SpecError(f"no attack success rate for {len(missing)} candidates (e.g. {missing[0]}); run `attack`")
    order = list(lv.LEVEL_ORDER)
    result = {}
    for rq, t in sorted(spec.thresholds.items()):
        ts = sel.ThresholdSet(t.get("t_asr", 0.005), t.get("t_acc", 0.04), t.get("t_sc", 0.5),
                              tuple(t.get("order", sel.RQ2_ORDER)))
        groups = sel.select(cands, ts)
        header = f"# {rq}: order={','.join(ts.order)} t_asr={ts.t_asr} t_acc={ts.t_acc} t_sc={ts.t_sc}\n"
        text = header + sel.render_table(groups, row_order=order)
        d = out / "selection"
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{rq}.txt").write_text(text)
        rows = [{"key": f"{g.key[0]}|{g.key[1]!r}|{c.label}", "level": g.key[0], "alpha": g.key[1],
                 "method": c.method, "param": c.param, "value": c.value}
                for g in groups for c in g.survivors]
        write_rows(d / f"{rq}.csv", ("key", "level", "alpha", "method", "param", "value"), rows)
        result[rq] = groups
    return result


def run_report(spec: ExperimentSpec, out: Path) -> str:
    recs = read_rows(out / "records.csv")
    groups = {}
    for r in recs:
        k = (r["level"] or "custom", r["method"], r["param"], r["value"], r["alpha"], r["augment"])
        groups.setdefault(k, []).append(r)
    lines = [f"experiment {spec.name}: {len(recs)} runs",
             "level | method | config | alpha | r | runs | accuracy | conv. round | comm MB | compute s | epsilon"]
    for k in sorted(groups):
        rows = groups[k]
        m = {c: trimmed_mean([_num(r[c]) for r in rows])
             for c in ("accuracy", "convergence_round", "comm_bytes", "compute_seconds", "epsilon")}
        cfg = f"{k[2]}={k[3]}" if k[2] else "-"
        lines.append(f"{k[0]} | {k[1]} | {cfg} | {k[4]} | {k[5]} | {len(rows)} | {m['accuracy']:.4f} | "
                     f"{m['convergence_round']:.1f} | {m['comm_bytes'] / 1e6:.3f} | {m['compute_seconds']:.3f} | "
                     f"{m['epsilon']:.4g}")
    if (out / "levels.txt").exists():
        lines += ["", "privacy levels (sigma per eta):", (out / "levels.txt").read_text().rstrip()]
    for rq in sorted(spec.thresholds):
        p = out / "selection" / f"{rq}.txt"
        if p.exists():
            lines += ["", p.read_text().rstrip()]
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    return text


def run_experiment(spec: ExperimentSpec, root=None) -> tuple[Path, dict]:
    """All stages in order; returns (archive dir, failures by stage)."""
    out = archive_dir(spec, root)
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    failures = {}
    if spec.levels and not spec.levels_file:
        run_matrix(spec, out)
        if not (out / "levels.json").exists():
            run_levels(spec, out)
    failures["train"] = run_train(spec, out)
    failures["attack"] = run_attack(spec, out)
    if (out / "attacks.csv").exists() and read_rows(out / "attacks.csv"):
        run_select(spec, out)
    run_report(spec, out)
    return out, {k: v for k, v in failures.items() if v}


def bench_he(sizes=(1000, 10000), repeats: int = 3, backend: str = "simulator") -> dict:
    """Measured per-coordinate crypto timings, for calibrating the cost model."""
    import time
    be = she.CkksBackend() if backend == "ckks" else she.SimulatorBackend()
    out = {"backend": backend, "sizes": {}}
    rng = np.random.default_rng(0)
    for n in sizes:
        v = rng.normal(size=n)
        mask = she.EncryptionMask(np.ones(n, dtype=bool))
        t0 = time.perf_counter()
        for _ in range(repeats):
            pu = she.protect(v, mask, be)
        t1 = time.perf_counter()
        for _ in range(repeats):
            agg = she.he_aggregate([pu, pu], [0.5, 0.5], mask)
        t2 = time.perf_counter()
        for _ in range(repeats):
            she.unprotect(agg)
        t3 = time.perf_counter()
        out["sizes"][str(n)] = {"encrypt_seconds": (t1 - t0) / repeats / n,
                                "aggregate_seconds": (t2 - t1) / repeats / n,
                                "decrypt_seconds": (t3 - t2) / repeats / n,
                                "bytes": pu.nbytes}
    return out
