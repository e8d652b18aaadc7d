import numpy as np
import pytest

from altfl import she
from altfl.engine import fedavg_aggregate

SIM = she.SimulatorBackend()


def test_build_mask_examples():
    assert she.build_mask([0.9, 0.1, 0.5, 0.7], 0.5).bits.tolist() == [True, False, False, True]
    assert she.build_mask([0.5, 0.5, 0.1, 0.1], 0.25).bits.tolist() == [True, False, False, False]
    s = np.random.default_rng(0).uniform(size=37)
    assert she.build_mask(s, 1.0).bits.all()
    assert not she.build_mask(s, 0.0).bits.any()


def test_mask_cardinality_and_top_k():
    rng = np.random.default_rng(1)
    for n in (1, 7, 100, 2410):
        s = rng.uniform(size=n)
        for eta in (0.05, 0.2, 0.4, 0.6, 0.7, 0.8):
            m = she.build_mask(s, eta)
            assert m.n_hidden == int(np.floor(eta * n + 0.5))
            assert abs(m.eta - eta) <= 1 / n
            if 0 < m.n_hidden < n:
                assert s[m.bits].min() >= s[~m.bits].max()
    with pytest.raises(ValueError):
        she.build_mask([1.0, 2.0], 1.5)


def test_mask_serialisation():
    m = she.build_mask(np.random.default_rng(2).uniform(size=45), 0.4)
    assert she.EncryptionMask.from_dict(m.to_dict()) == m


def test_aggregate_sensitivity_examples():
    assert np.allclose(she.aggregate_sensitivity([np.array([3.0, 1.0])], [1.0]), [3, 1])
    assert np.allclose(she.aggregate_sensitivity([np.array([1.0, 0]), np.array([0, 1.0])], [0.5, 0.5]), [0.5, 0.5])
    assert np.allclose(she.aggregate_sensitivity([np.array([4.0, 0]), np.array([0, 4.0])], [0.25, 0.75]), [1, 3])
    with pytest.raises(ValueError):
        she.aggregate_sensitivity([np.ones(2), np.ones(2)], [0.5, 0.6])


def test_message_sizes():
    n = 2410
    w = np.random.default_rng(0).normal(size=n)
    assert she.protect(w, she.EncryptionMask.none(n), SIM).nbytes == 4 * n
    full = she.protect(w, she.EncryptionMask(np.ones(n, bool)), SIM)
    assert full.nbytes == 1024 + 40 * n
    sizes = [she.protect(w, she.build_mask(np.arange(n), e), SIM).nbytes for e in (0, 0.05, 0.2, 0.6, 1)]
    assert sizes == sorted(sizes)


def test_roundtrip_and_linearity():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=50), rng.normal(size=50)
    m = she.build_mask(rng.uniform(size=50), 0.4)
    assert np.array_equal(she.unprotect(she.protect(a, m, SIM)), a)
    agg = she.he_aggregate([she.protect(a, m, SIM), she.protect(b, m, SIM)], [0.5, 0.5])
    assert np.array_equal(she.unprotect(agg), 0.5 * a + 0.5 * b)
    single = she.he_aggregate([she.protect(a, m, SIM)], [1.0])
    assert np.array_equal(she.unprotect(single), a)


def test_three_client_fedavg_oracle():
    rng = np.random.default_rng(4)
    models = [rng.normal(size=30) for _ in range(3)]
    sizes = [1, 2, 3]
    m = she.build_mask(rng.uniform(size=30), 0.6)
    agg = she.he_aggregate([she.protect(x, m, SIM) for x in models], [1 / 6, 2 / 6, 3 / 6])
    assert np.array_equal(she.unprotect(agg), fedavg_aggregate(models, sizes))
    mean = sum(s * x for s, x in zip(sizes, models)) / 6
    assert np.allclose(she.unprotect(agg), mean, rtol=0, atol=1e-14)


def test_aggregate_rejects_mismatched_masks_and_weights():
    rng = np.random.default_rng(5)
    a = rng.normal(size=10)
    m1 = she.build_mask(np.arange(10), 0.3)
    m2 = she.build_mask(-np.arange(10.0), 0.3)
    with pytest.raises(she.HeError):
        she.he_aggregate([she.protect(a, m1, SIM), she.protect(a, m2, SIM)], [0.5, 0.5])
    with pytest.raises(ValueError):
        she.he_aggregate([she.protect(a, m1, SIM)], [0.7])


def test_attacker_view_hides_masked_values():
    rng = np.random.default_rng(6)
    m = she.build_mask(rng.uniform(size=40), 0.5)
    a = rng.normal(size=40)
    b = a.copy()
    b[m.bits] = rng.normal(size=m.n_hidden) * 1e6
    va = she.protect(a, m, SIM).attacker_view()
    vb = she.protect(b, m, SIM).attacker_view()
    assert np.all(np.isnan(va.values[m.bits]))
    assert np.array_equal(va.values[~m.bits], a[~m.bits])
    assert np.array_equal(va.visible, vb.visible) and np.array_equal(va.values[~m.bits], vb.values[~m.bits])
    assert len(va.blob) == len(vb.blob)
    assert not np.isin(a[m.bits], np.frombuffer(va.blob[: len(va.blob) // 8 * 8], dtype=np.float64)).any()


def test_cost_model_validation():
    with pytest.raises(ValueError):
        she.HeCostModel(expansion=-1)
    t = she.modeled_seconds(she.HeCostModel(), 100, 3)
    assert t["client"] > 0 and t["server"] > 0


def test_ckks_backend_within_tolerance():
    pytest.importorskip("tenseal")
    be = she.CkksBackend()
    rng = np.random.default_rng(7)
    models = [rng.normal(size=300) for _ in range(3)]
    m = she.build_mask(rng.uniform(size=300), 0.5)
    ups = [she.protect(x, m, be) for x in models]
    assert np.max(np.abs(she.unprotect(ups[0]) - models[0])) <= 1e-3
    agg = she.he_aggregate(ups, [1 / 6, 2 / 6, 3 / 6])
    assert np.max(np.abs(she.unprotect(agg) - fedavg_aggregate(models, [1, 2, 3]))) <= 1e-3
    assert ups[0].nbytes > 4 * 300
