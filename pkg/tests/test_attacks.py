import numpy as np
import pytest

from altfl import model as mc, she
from altfl.attacks import active, passive, trials
from altfl.attacks.common import (AttackConfig, failed_outcome, iip_score, infer_gradient, match_flags)


def test_infer_gradient_examples():
    obs = infer_gradient(np.array([1.0, 2.0]), np.array([0.9, 2.2]), 0.1)
    assert np.allclose(obs.values, [1.0, -2.0])
    m = she.EncryptionMask(np.array([False, True]))
    obs = infer_gradient(np.array([1.0, 2.0]), np.array([0.9, 2.2]), 0.1, m)
    assert np.isclose(obs.values[0], 1.0) and np.isnan(obs.values[1])
    assert obs.visible.tolist() == [True, False]
    with pytest.raises(ValueError):
        infer_gradient(np.zeros(2), np.zeros(2), 0.0)


def test_attack_config():
    assert AttackConfig("DLG").budget == 300 and AttackConfig("Inverting").budget == 1000
    assert AttackConfig("DLG").batch == 1 and AttackConfig("CAH").batch == 8
    with pytest.raises(ValueError):
        AttackConfig("DLG", batch_size=4)
    with pytest.raises(ValueError):
        AttackConfig("STG")


def test_iip_examples(rng):
    pool = rng.uniform(size=(200, 64))
    assert iip_score(pool[:10], pool, np.arange(10)) == 1.0
    recs = pool[:4].copy()
    recs[3] = pool[50]
    assert iip_score(recs, pool, np.arange(4)) == 0.75
    noise = [iip_score(rng.uniform(size=(1, 64)), pool, [rng.integers(200)]) for _ in range(400)]
    assert np.mean(noise) <= 0.05
    with pytest.raises(ValueError):
        match_flags(recs, np.zeros((0, 64)), np.arange(4))
    assert failed_outcome([3]).success_rate == 0.0


def test_pullback_matches_finite_differences(desk, rng):
    params = mc.init_model(desk, 0)
    gm = passive.GradientModel(desk, params)
    x = rng.uniform(size=64)
    y = rng.dirichlet(np.ones(10))
    cot = rng.normal(size=desk.num_params)
    g, dx, _ = gm.grad_and_pullback(x, y, cot)
    _, per = mc.loss_and_per_sample_gradients(desk, params, mc.Batch(np.repeat(x[None], 10, 0), np.arange(10)))
    assert np.allclose(g, y @ per, atol=1e-12)
    for i in rng.choice(64, 8, replace=False):
        e = np.zeros(64)
        e[i] = 1e-6
        fd = (cot @ gm.grad(x + e, y) - cot @ gm.grad(x - e, y)) / 2e-6
        assert abs(fd - dx[i]) <= 1e-5 + 1e-4 * abs(fd)


def _single_obs(env, seed, sigma=0.0, eta=0.0):
    rng = np.random.default_rng(seed)
    params = mc.init_model(env.arch, seed)
    i = int(rng.integers(len(env.pool)))
    mask = trials._mask(env.arch, params, eta, env)
    w, _ = trials.client_step(env.arch, params, env.pool[i:i + 1], env.pool_labels[i:i + 1], sigma, env.clip, 0.1, rng)
    return params, infer_gradient(params, w, 0.1, mask, sigma), i


def test_dlg_unprotected_exact(attack_env):
    params, obs, i = _single_obs(attack_env, 11)
    out = passive.dlg_attack(obs, attack_env.arch, params, AttackConfig("DLG"), np.random.default_rng(0), [i])
    assert out.loss <= 1e-4
    assert match_flags(out.reconstructions, attack_env.pool, [i]).all()


def test_inverting_unprotected(attack_env):
    out = trials.run_trial(attack_env, AttackConfig("Inverting"), 0.0, 0.0, 5)
    assert out.success_rate == 1.0


def test_passive_fallback_on_convolutional_model(rng):
    arch = mc.ModelArch((1, 4, 4), (mc.Conv2d(1, 1, 3, padding=1), mc.Dense(16, 3, "none")), 3)
    params = mc.init_model(arch, 0)
    x = rng.uniform(size=(1, 1, 4, 4))
    w, _ = trials.client_step(arch, params, x, np.array([1]), 0.0, 4.7, 0.1, rng)
    obs = infer_gradient(params, w, 0.1)
    out = passive.dlg_attack(obs, arch, params, AttackConfig("DLG", iterations=30), rng)
    assert out.reconstructions.shape == (1, 16)


@pytest.mark.parametrize("kind", ["DLG", "Inverting", "CAH", "RTF"])
def test_full_encryption_defeats_every_attack(attack_env, kind):
    for seed in range(3):
        out = trials.run_trial(attack_env, AttackConfig(kind), 0.0, 1.0, seed)
        assert out.success_rate == 0.0


def test_cah_single_sample_exact(attack_env):
    rng = np.random.default_rng(0)
    arch = attack_env.arch
    params = mc.init_model(arch, 0)
    x, y = attack_env.pool[7:8], attack_env.pool_labels[7:8]
    out = trials.cah_attack(arch, params, x, y, 0.0, 0.0, attack_env, AttackConfig("CAH", batch_size=1), rng, [7])
    assert out.recovered.all()
    best = min(np.mean((r - x[0]) ** 2) for r in out.reconstructions)
    assert best <= 1e-8


def test_cah_batch_of_eight(attack_env):
    rec = [trials.run_trial(attack_env, AttackConfig("CAH"), 0.0, 0.0, s).recovered.mean() for s in range(20)]
    assert np.mean(rec) >= 0.5


def test_rtf_single_bin_exact(attack_env, rng):
    arch = attack_env.arch
    params = mc.init_model(arch, 0)
    x, y = attack_env.pool[3:4], attack_env.pool_labels[3:4]
    out = trials.rtf_attack(arch, params, x, y, 0.0, 0.0, attack_env, AttackConfig("RTF", batch_size=1), rng, [3])
    assert len(out.reconstructions) == 1
    assert np.mean((out.reconstructions[0] - x[0]) ** 2) <= 1e-8
    assert out.success_rate == 1.0


def test_rtf_thresholds_follow_prior(attack_env, rng):
    arch, params, t = active.imprint_model(attack_env.arch, mc.init_model(attack_env.arch, 0),
                                           attack_env.prior, 32, rng)
    assert len(t) == 32 and np.all(np.diff(t) >= 0)
    assert t[0] < active.brightness(attack_env.prior).min()
    assert arch.layers[2:] == attack_env.arch.layers


def test_rtf_unprotected_rate(attack_env):
    rate = trials.success_rate(attack_env, AttackConfig("RTF"), "FedAvg", trials=200)
    assert rate >= 0.9


def test_trap_rows_fire_sparsely(attack_env, rng):
    arch = attack_env.arch
    params = active.install_trap_weights(arch, mc.init_model(arch, 0), attack_env.prior, 8, rng)
    w, b = arch.unpack(params)[0]
    assert np.all(b == 0)
    neg = (w < 0).mean(axis=1)
    assert np.all(np.abs(neg - 0.5) <= 0.02)
    fire = (attack_env.pool @ w.T > 0).mean()
    assert 0.05 <= fire <= 0.25


def test_pi_mixture_identity(attack_env):
    cfg = AttackConfig("DLG", iterations=50)
    n = 10
    pi = trials.success_rate(attack_env, cfg, "PI", sigma=0.05, eta=0.2, rho="1/2", trials=n, seed=100)
    dp_half = trials.trial_rates(attack_env, cfg, [(0.05, 0.0)] * 5, seed=100)
    he_half = trials.trial_rates(attack_env, cfg, [(0.0, 0.2)] * 5, seed=105)
    assert pi == pytest.approx((dp_half.sum() + he_half.sum()) / n, abs=1e-15)


def test_trial_plan():
    assert trials.trial_plan("PI", 0.1, 0.4, "1/4", 200).count((0.1, 0.0)) == 50
    assert trials.trial_plan("MP", 0.1, 0.4, 0, 3) == [(0.1, 0.4)] * 3
    assert trials.trial_plan("SI/HE", 0.1, 0.4, "1/2", 2) == [(0.0, 0.4)] * 2
    with pytest.raises(ValueError):
        trials.trial_plan("MP", 0, 0, 0, 0)


def test_trials_are_deterministic(attack_env):
    a = trials.run_trial(attack_env, AttackConfig("DLG"), 0.05, 0.2, 9)
    b = trials.run_trial(attack_env, AttackConfig("DLG"), 0.05, 0.2, 9)
    assert np.array_equal(a.reconstructions, b.reconstructions)
