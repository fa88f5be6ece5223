import numpy as np
import pytest

from timestate import (BenchmarkConfig, CallSet, FitConfig, PathSet, REFERENCE_STATE,
                       evaluate_calls, pairwise_baseline, run_benchmark, simulate_dataset,
                       validate_dataset)
from timestate.inference import encode_states
from timestate.simulation import MetricsReport, replication_seed


def test_shape(sim_params):
    ds, truth = simulate_dataset(sim_params, 4000, (4, 4, 4, 4), seed=1)
    assert ds.values.shape == (4000, 16)
    assert truth.true_means.shape == (4000, 4)


def test_regeneration_is_bit_exact(sim_params):
    a, ta = simulate_dataset(sim_params, 300, (3, 4, 3, 4), seed=77)
    b, tb = simulate_dataset(sim_params, 300, (3, 4, 3, 4), seed=77)
    assert a.values.tobytes() == b.values.tobytes()
    assert np.array_equal(ta.path_index, tb.path_index)
    c, _ = simulate_dataset(sim_params, 300, (3, 4, 3, 4), seed=78)
    assert not np.array_equal(a.values, c.values)


def test_first_period_same_frequency(sim_params):
    _, truth = simulate_dataset(sim_params, 4000, (4, 4, 4, 4), seed=2)
    freq = np.mean(truth.states[:, 0] == 0)
    p = REFERENCE_STATE.initial[0]
    assert abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / 4000)


def test_increments_honour_states(sim_params):
    _, truth = simulate_dataset(sim_params, 3000, (4, 4, 4, 4), seed=3)
    inc = np.diff(truth.true_means, axis=1)
    s = truth.states
    assert np.all(inc[s == 1] > 0)
    assert np.all(inc[s == 2] < 0)
    assert np.all(inc[s == 0] == 0.0)


def test_transitions_frequency(sim_params):
    _, truth = simulate_dataset(sim_params, 20000, (4, 4, 4, 4), seed=8)
    s = truth.states
    up = s[:, 0] == 1
    freq = np.mean(s[up, 1] == 2)
    p = REFERENCE_STATE.transitions[0, 1, 2]
    assert abs(freq - p) <= 3.5 * np.sqrt(p * (1 - p) / up.sum())


def _cs(states):
    states = np.asarray(states)
    return CallSet(tuple(f"g{i}" for i in range(len(states))), PathSet(states.shape[1] + 1),
                   encode_states(states), "mmp")


def test_perfect_calls():
    truth = np.array([[0, 1, 2], [1, 0, 0], [0, 0, 0], [2, 2, 1]])
    r = evaluate_calls(truth, _cs(truth))
    assert np.all(r.sensitivity == 1) and np.all(r.specificity == 1)
    assert np.all(r.fdr == 0) and np.all(r.mr == 0) and r.smr[0] == 0


def test_smr_direct_count():
    truth = np.array([[0, 1, 2], [1, 0, 0], [0, 0, 0], [2, 2, 1]])
    calls = truth.copy()
    calls[3, 2] = 2
    assert evaluate_calls(truth, _cs(calls)).smr[0] == 0.25


def _confusion_oracle(truth, calls):
    """Per-period rates from an explicit 2x2 confusion table."""
    out = []
    for t in range(truth.shape[1]):
        tp = fp = tn = fn = 0
        for a, b in zip(truth[:, t], calls[:, t]):
            if a != 0 and b != 0:
                tp += 1
            elif a == 0 and b != 0:
                fp += 1
            elif a == 0 and b == 0:
                tn += 1
            else:
                fn += 1
        sens = tp / (tp + fn) if tp + fn else np.nan
        spec = tn / (tn + fp) if tn + fp else np.nan
        fdr = fp / (tp + fp) if tp + fp else np.nan
        out.append((sens, spec, fdr))
    return np.array(out)


def test_rates_match_confusion_oracle(rng):
    for _ in range(1000):
        G = int(rng.integers(1, 12))
        truth = rng.integers(0, 3, size=(G, 3))
        calls = rng.integers(0, 3, size=(G, 3))
        r = evaluate_calls(truth, _cs(calls))
        ref = _confusion_oracle(truth, calls)
        np.testing.assert_array_equal(r.sensitivity[0], ref[:, 0])
        np.testing.assert_array_equal(r.specificity[0], ref[:, 1])
        np.testing.assert_array_equal(r.fdr[0], ref[:, 2])
        for arr in (r.sensitivity, r.specificity, r.fdr, r.mr, r.smr):
            v = arr[~np.isnan(arr)]
            assert np.all((v >= 0) & (v <= 1))


def test_gene_order_invariance(rng):
    truth = rng.integers(0, 3, size=(50, 3))
    calls = rng.integers(0, 3, size=(50, 3))
    perm = rng.permutation(50)
    a = evaluate_calls(truth, _cs(calls))
    b = evaluate_calls(truth[perm], _cs(calls[perm]))
    for k in ("sensitivity", "specificity", "fdr", "mr", "smr"):
        np.testing.assert_allclose(getattr(a, k), getattr(b, k), rtol=0, atol=1e-15)


def test_mismatched_gene_sets():
    with pytest.raises(ValueError):
        evaluate_calls(np.zeros((3, 3), int), _cs(np.zeros((4, 3), int)))


def test_pairwise_null_gene(small_sim):
    ds, _ = small_sim
    flat = validate_dataset(np.vstack([ds.values, 8.0 + 1e-6 * (np.arange(16) % 3)]),
                            ds.design, list(ds.gene_ids) + ["flat"])
    cs = pairwise_baseline(flat)
    assert cs.labels()[-1] == "start,=,=,="


def test_pairwise_locality(small_sim):
    ds, _ = small_sim
    rng = np.random.default_rng(0)
    v = ds.values.copy()
    # scramble time 4 across genes: period 1 (t1 -> t2) only sees times 1 and 2
    v[:, 12:] = v[rng.permutation(ds.G), 12:]
    other = validate_dataset(v, ds.design, ds.gene_ids)
    a = pairwise_baseline(ds).states[:, 0]
    b = pairwise_baseline(other).states[:, 0]
    assert np.array_equal(a, b)


def test_benchmark_shape():
    cfg = BenchmarkConfig(replications=2, G=300, seed=5, fit=FitConfig(rel_tol=1e-5))
    res = run_benchmark(cfg)
    rows = res.table()
    assert [r["method"] for r in rows] == ["first", "zero", "pairwise"]
    for r in rows:
        assert "smr" in r and all(f"{m}_{t}" in r for m in ("sensitivity", "specificity",
                                                            "fdr", "mr") for t in (2, 3, 4))
    assert res.reports["first"].replications == 2
    assert len(set(res.seeds)) == 2


def test_replication_seeds_are_stable():
    assert replication_seed(2007, 3) == replication_seed(2007, 3)
    assert replication_seed(2007, 3) != replication_seed(2007, 4)


def test_metrics_combine_mean_sd():
    a = MetricsReport(*(np.array([[0.2, 0.4]]),) * 4, smr=np.array([0.1]))
    b = MetricsReport(*(np.array([[0.4, 0.8]]),) * 4, smr=np.array([0.3]))
    c = MetricsReport.combine([a, b])
    assert np.allclose(c.mean("sensitivity"), [0.3, 0.6])
    assert c.sd("smr") == pytest.approx(np.std([0.1, 0.3], ddof=1))
    assert np.isnan(a.sd("smr"))


def test_benchmark_rejects_unknown_method():
    with pytest.raises(ValueError):
        BenchmarkConfig(methods=("first", "bogus"))
