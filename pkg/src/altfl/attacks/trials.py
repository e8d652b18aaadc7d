"""Attack trials and success rates under DP / selective-HE protection.

A trial builds a fresh model state, lets one client take a single local step
on its batch (with DP-SGD and/or a frozen encryption mask), infers the
gradient from the plaintext part of the update and runs the attack. Each
reconstruction is scored against its ground-truth source by nearest-neighbour
search in the candidate pool (IIP).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import dp as dpm
from .. import model as mc
from .. import she
from ..data import Dataset
from ..engine import InterleaveRatio
from . import active, passive
from .common import AttackConfig, AttackOutcome, failed_outcome, infer_gradient, match_flags

RECOVERY_MSE = 1e-8


@dataclass(frozen=True)
class AttackEnv:
    arch: mc.ModelArch
    pool: np.ndarray            # (n, d) candidate images; trial targets are drawn from here
    pool_labels: np.ndarray
    prior: np.ndarray           # attacker's auxiliary images (trap / bin calibration, fill values)
    warmup: mc.Batch            # client data used for the sensitivity warm-up of the mask
    clip: float = dpm.DEFAULT_CLIP

    @classmethod
    def from_dataset(cls, ds: Dataset, arch: mc.ModelArch, pool_size: int = 1000,
                     prior_size: int = 300, warmup_size: int = 64, seed: int = 0,
                     clip: float = dpm.DEFAULT_CLIP) -> "AttackEnv":
        order = np.random.default_rng(seed).permutation(len(ds))
        flat = ds.flat()
        pool = order[:pool_size]
        rest = order[pool_size:]
        if len(rest) < warmup_size + 2:
            raise ValueError("dataset too small for the requested pool size")
        prior = rest[:min(prior_size, len(rest) - warmup_size)]
        warm = rest[len(prior):len(prior) + warmup_size]
        return cls(arch, flat[pool], ds.labels[pool], flat[prior],
                   mc.Batch(flat[warm], ds.labels[warm]), clip)

    @property
    def fill(self) -> np.ndarray:
        return self.prior.mean(axis=0)


def sensitivity(arch: mc.ModelArch, params: np.ndarray, data: mc.Batch, batch: int = 8) -> np.ndarray:
    """Mean absolute mini-batch gradient at ``params``."""
    acc = np.zeros_like(params)
    n = 0
    for s in range(0, len(data), batch):
        _, g = mc.loss_and_gradient(arch, params, mc.Batch(data.inputs[s:s + batch], data.labels[s:s + batch]))
        acc += np.abs(g)
        n += 1
    return acc / n


def client_step(arch, params, x, y, sigma, clip, lr, rng):
    """One local step. Returns (new params, per-sample gradients as they enter the sum)."""
    _, per = mc.loss_and_per_sample_gradients(arch, params, mc.Batch(x, y))
    if sigma > 0:
        dp = dpm.DpParams(sigma, clip)
        update = dpm.noisy_clipped_mean(per, dp, rng)
        per = dpm.clip(per, clip)
    else:
        update = per.mean(axis=0)
    return mc.apply_step(params, update, lr), per / len(per)


def _score(recs, sources, target_ids, pool):
    assigned = np.array([target_ids[s] if s >= 0 else -1 for s in sources], dtype=int)
    matched = match_flags(recs, pool, assigned)
    if len(recs):
        truth = pool[target_ids]
        mse = ((recs[:, None, :] - truth[None, :, :]) ** 2).mean(axis=2)
        recovered = mse.min(axis=0) <= RECOVERY_MSE
    else:
        recovered = np.zeros(len(target_ids), dtype=bool)
    return assigned, matched, recovered


def cah_attack(arch, params, x, y, mask_eta, sigma, env: AttackEnv, cfg: AttackConfig,
               rng: np.random.Generator, target_ids=None) -> AttackOutcome:
    """Install trap weights, observe one client step, invert the first dense layer."""
    b = len(x)
    target_ids = np.arange(b) if target_ids is None else np.asarray(target_ids)
    params = active.install_trap_weights(arch, params, env.prior, b, rng)
    return _active(arch, params, x, y, mask_eta, sigma, env, cfg, rng, target_ids, "CAH")


def rtf_attack(arch, params, x, y, mask_eta, sigma, env: AttackEnv, cfg: AttackConfig,
               rng: np.random.Generator, target_ids=None, thresholds_prior=None) -> AttackOutcome:
    """Prepend an imprint block, observe one client step, difference adjacent bins."""
    b = len(x)
    target_ids = np.arange(b) if target_ids is None else np.asarray(target_ids)
    prior = env.prior if thresholds_prior is None else thresholds_prior
    arch, params, _ = active.imprint_model(arch, params, prior, cfg.bins, rng)
    return _active(arch, params, x, y, mask_eta, sigma, env, cfg, rng, target_ids, "RTF")


def _mask(arch, params, eta, env):
    if eta <= 0:
        return None
    return she.build_mask(sensitivity(arch, params, env.warmup), eta)


def _active(arch, params, x, y, eta, sigma, env, cfg, rng, target_ids, kind):
    mask = _mask(arch, params, eta, env)
    w_next, contrib = client_step(arch, params, x, y, sigma, env.clip, cfg.client_lr, rng)
    obs = infer_gradient(params, w_next, cfg.client_lr, mask, sigma)
    b = len(x)
    spread = 3.0 * sigma * env.clip / b
    if kind == "CAH":
        layer = active.first_dense(arch)
        recs, ids = active.recover_rows(obs, arch, env.fill, spread, layer)
        _, sb = arch.offsets()[layer]
        bias = contrib[:, sb]
    else:
        recs, ids = active.recover_bins(obs, arch, env.fill, spread * np.sqrt(2.0), 0)
        _, sb = arch.offsets()[0]
        bias = contrib[:, sb]
        bias = bias - np.hstack([bias[:, 1:], np.zeros((b, 1))])
    if len(recs) == 0:
        out = failed_outcome(target_ids)
        out.failed = False
        return out
    sources = active.row_sources(bias, ids)
    assigned, matched, recovered = _score(recs, sources, target_ids, env.pool)
    return AttackOutcome(recs, assigned, matched, target_ids, recovered)


def run_trial(env: AttackEnv, cfg: AttackConfig, sigma: float, eta: float, seed: int) -> AttackOutcome:
    rng = np.random.default_rng(seed)
    params = mc.init_model(env.arch, seed)
    ids = rng.choice(len(env.pool), size=cfg.batch, replace=False)
    x, y = env.pool[ids], env.pool_labels[ids]
    if cfg.kind == "CAH":
        out = cah_attack(env.arch, params, x, y, eta, sigma, env, cfg, rng, ids)
    elif cfg.kind == "RTF":
        out = rtf_attack(env.arch, params, x, y, eta, sigma, env, cfg, rng, ids)
    else:
        mask = _mask(env.arch, params, eta, env)
        w_next, _ = client_step(env.arch, params, x, y, sigma, env.clip, cfg.client_lr, rng)
        obs = infer_gradient(params, w_next, cfg.client_lr, mask, sigma)
        fn = passive.dlg_attack if cfg.kind == "DLG" else passive.inverting_attack
        out = fn(obs, env.arch, params, cfg, rng, ids)
        if not out.failed:
            assigned, matched, recovered = _score(out.reconstructions, np.zeros(1, dtype=int), ids, env.pool)
            out.assigned, out.matched, out.recovered = assigned, matched, recovered
    out.seed = seed
    return out


# --- success rates ---------------------------------------------------------------

def trial_plan(method: str, sigma: float, eta: float, rho, trials: int) -> list[tuple[float, float]]:
    """(sigma, eta) in force for each trial of a method configuration.

    PI applies DP in round(trials * rho) trials and S-HE in the rest; the
    synthetic-interleaving methods are attacked on authentic rounds only.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    if method in ("MP",):
        return [(sigma, eta)] * trials
    if method in ("DP-only", "SI/DP"):
        return [(sigma, 0.0)] * trials
    if method in ("HE-only", "SI/HE"):
        return [(0.0, eta)] * trials
    if method == "PI":
        n_dp = int(round(trials * InterleaveRatio.parse(rho).value))
        return [(sigma, 0.0)] * n_dp + [(0.0, eta)] * (trials - n_dp)
    if method == "FedAvg":
        return [(0.0, 0.0)] * trials
    raise ValueError(f"unknown method {method!r}")


def _one(args):
    env, cfg, sigma, eta, seed = args
    return run_trial(env, cfg, sigma, eta, seed).success_rate


def trial_rates(env: AttackEnv, cfg: AttackConfig, plan, seed: int = 0, workers: int = 1,
                seeds=None) -> np.ndarray:
    """IIP of each trial in ``plan``; trial i uses ``seeds[i]`` (default ``seed + i``)."""
    seeds = [seed + i for i in range(len(plan))] if seeds is None else list(seeds)
    jobs = [(env, cfg, s, e, k) for (s, e), k in zip(plan, seeds)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return np.array(list(ex.map(_one, jobs, chunksize=max(1, len(jobs) // (4 * workers)))))
    return np.array([_one(j) for j in jobs])


def success_rate(env: AttackEnv, cfg: AttackConfig, method: str, sigma: float = 0.0, eta: float = 0.0,
                 rho=0, trials: int = 200, seed: int = 0, workers: int = 1) -> float:
    """Mean IIP over ``trials`` seeded trials of one method configuration."""
    plan = trial_plan(method, sigma, eta, rho, trials)
    return float(trial_rates(env, cfg, plan, seed, workers).mean())
