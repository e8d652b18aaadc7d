from dataclasses import replace

import numpy as np
import pytest

from altfl import engine as en
from altfl.engine import ConvergenceDetector, InterleaveRatio, TrainConfig, round_flag

RHOS = ["0", "1/4", "2/5", "1/2", "3/5", "3/4"]


def test_round_flag_examples():
    q = InterleaveRatio.parse("1/4")
    assert [round_flag(t, q) for t in (1, 2, 3, 4)] == [True, True, False, True]
    assert all(round_flag(t, InterleaveRatio.parse(0)) for t in range(1, 30))
    assert not any(round_flag(t, InterleaveRatio.parse(1)) for t in range(1, 30))
    r = InterleaveRatio.parse("3/5")
    assert [t for t in range(1, 11) if round_flag(t, r)] == [1, 5, 6, 10]
    with pytest.raises(ValueError):
        round_flag(0, r)


@pytest.mark.parametrize("rho", RHOS + ["1"])
def test_schedule_ratio(rho):
    r = InterleaveRatio.parse(rho)
    for k in (1, 3, 20):
        n = sum(not round_flag(t, r) for t in range(1, k * r.tot + 1))
        assert n == k * r.syn


def test_ratio_parsing():
    assert str(InterleaveRatio.parse("2/4")) == "1/2"
    assert InterleaveRatio.parse(0.75) == InterleaveRatio(3, 4)
    with pytest.raises(ValueError):
        InterleaveRatio(3, 2)


def test_fedavg_examples():
    assert np.array_equal(en.fedavg_aggregate([np.array([0.0]), np.array([4.0])], [5, 5]), [2.0])
    assert np.array_equal(en.fedavg_aggregate([np.array([0.0]), np.array([4.0])], [1, 3]), [3.0])
    x = np.random.default_rng(0).normal(size=9)
    assert np.array_equal(en.fedavg_aggregate([x], [7]), x)
    assert np.array_equal(en.fedavg_aggregate([x, x, x], [1, 2, 3]), x)
    with pytest.raises(ValueError):
        en.fedavg_aggregate([x, x[:3]], [1, 1])


def test_detector():
    for w in (8, 10):
        d = ConvergenceDetector(window=w)
        assert d.detect([0.5] * 100) == w + 10
        assert d.detect([0.5] * (w + 9)) is None
    assert ConvergenceDetector().detect([0.01 * t for t in range(100)]) is None
    h = [0.01 * t for t in range(30)] + [0.3] * 40
    hit = ConvergenceDetector().detect(h)
    assert hit is not None and hit > 30


def test_window_choice():
    assert TrainConfig("SI/DP", ratio="1/4").detector().window == 8
    assert TrainConfig("PI", ratio="3/4").detector().window == 8
    assert TrainConfig("SI/HE", ratio="1/2").detector().window == 10
    assert TrainConfig("MP").detector().window == 10


def test_trimmed_mean():
    assert en.trimmed_mean([1, 2, 3, 100, -50]) == 2.0
    assert en.trimmed_mean([4.0, 6.0]) == 5.0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig("FedProx")
    with pytest.raises(ValueError):
        TrainConfig("SI/DP", ratio=1)
    with pytest.raises(ValueError):
        TrainConfig("MP", eta=1.5)


def _traj(cfg, fed):
    rec = en.run_training(cfg, fed)
    return rec.history, rec.final_params


def _same(a, b, fed):
    ha, pa = _traj(a, fed)
    hb, pb = _traj(b, fed)
    return ha == hb and np.array_equal(pa, pb)


def test_reductions_short(federation):
    base = TrainConfig(rounds=4, sigma=0.1, eta=0.4, seed=3)
    dp_only = replace(base, method="DP-only")
    he_only = replace(base, method="HE-only")
    assert _same(replace(base, method="SI/DP", ratio=0), dp_only, federation)
    assert _same(replace(base, method="PI", ratio=1), dp_only, federation)
    assert _same(replace(base, method="MP", eta=0.0), dp_only, federation)
    assert _same(replace(base, method="MP", sigma=0.0), he_only, federation)
    plain = replace(base, method="FedAvg")
    assert _same(replace(base, method="SI/DP", ratio=0, sigma=0.0), plain, federation)


def test_simulated_he_equals_plaintext_rerun(federation):
    cfg = TrainConfig("SI/HE", ratio="1/2", eta=0.6, rounds=6, seed=1)
    a = en.run_training(cfg, federation)
    b = en.run_training(replace(cfg, backend="none"), federation)
    assert np.array_equal(a.final_params, b.final_params)
    assert a.comm_bytes > b.comm_bytes


def test_run_record_contents(federation):
    cfg = TrainConfig("PI", sigma=0.5, eta=0.2, ratio="1/2", rounds=6, seed=0)
    rec = en.run_training(cfg, federation)
    assert rec.rounds_run == 6 and len(rec.history) == 6
    assert rec.accuracy == max(rec.history)
    assert rec.epsilon > 0 and np.isfinite(rec.epsilon)
    assert rec.config["method"] == "PI" and rec.config["rho"] == "1/2"
    phases = [r["phase"] for r in rec.log]
    assert phases == ["auth+dp", "auth+he"] * 3  # t mod 2 < 1 only on even rounds
    assert set(rec.row()) >= {"accuracy", "comm_bytes", "compute_seconds", "epsilon", "method", "seed"}


def test_communication_grows_with_eta(federation):
    rows = []
    for eta in (0.0, 0.2, 0.6, 1.0):
        rec = en.run_training(TrainConfig("HE-only", eta=eta, rounds=2), federation)
        rows.append(max(r["bytes_up"] for r in rec.log))
    assert rows == sorted(rows) and rows[0] < rows[-1]


def test_early_stop_and_determinism(federation):
    cfg = TrainConfig("FedAvg", rounds=60, early_stop=True, lr=0.0)
    rec = en.run_training(cfg, federation)
    assert rec.converged and rec.convergence_round == 20 and rec.rounds_run == 20
    a = en.run_training(TrainConfig("SI/DP", sigma=0.3, ratio="1/4", rounds=5), federation)
    b = en.run_training(TrainConfig("SI/DP", sigma=0.3, ratio="1/4", rounds=5), federation)
    assert a.history == b.history and a.comm_bytes == b.comm_bytes and a.epsilon == b.epsilon


def test_augmentation_keeps_sizes(federation):
    rec = en.run_training(TrainConfig("FedAvg", augment=0.25, rounds=2), federation)
    assert rec.rounds_run == 2


def test_divergence_is_reported(federation):
    with pytest.raises(en.TrainingDiverged) as err:
        en.run_training(TrainConfig("FedAvg", lr=1e300, rounds=5), federation)
    assert err.value.round_index >= 1
    assert err.value.log_rows[-1]["error"]


def test_repeat_and_summarize(federation):
    recs = en.repeat_runs(TrainConfig("FedAvg", rounds=2), federation, [0, 1, 2])
    s = en.summarize(recs)
    assert s["accuracy"] == sorted(r.accuracy for r in recs)[1]
