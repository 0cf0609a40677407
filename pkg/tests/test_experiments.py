import math

import numpy as np
import pytest

from ppr.core import prefix_size_bound
from ppr.experiments import (
    CSV_FIELDS,
    CsvFormatError,
    DmeConfig,
    ExperimentRecord,
    LaplaceExpConfig,
    TimingConfig,
    budget_search,
    config_metadata,
    dme_comm_bound,
    gen_clients,
    laplace_ppr_samples,
    min_comm_bound,
    read_csv,
    run_dme,
    run_laplace_experiment,
    run_timing,
    write_csv,
)
from ppr.privacy import PrivacyBudget, gaussian_sigma_for_dp
from ppr.rng import SampleStream, SharedSeed

ROOT = SharedSeed.from_int(5)


def small_dme(**kw):
    base = dict(n=5, d=4, trials=60, chunk_dim=2, record_timing=False, seed=3)
    base.update(kw)
    return DmeConfig(**base)


def test_gen_clients():
    ones = gen_clients(DmeConfig(n=3, d=4, bernoulli_p=1.0), SampleStream(ROOT))
    assert np.array_equal(ones, np.ones((3, 4)))
    cfg = DmeConfig(n=500, d=200)
    x = gen_clients(cfg, SampleStream(ROOT))
    assert set(np.unique(x)) == {-1.0, 1.0}
    assert abs(np.mean(x == 1.0) - 0.8) < 0.005
    assert np.array_equal(x, gen_clients(cfg, SampleStream(ROOT)))


def test_config_validation():
    with pytest.raises(ValueError):
        DmeConfig(n=0)
    with pytest.raises(ValueError):
        DmeConfig(bernoulli_p=0.0)
    with pytest.raises(ValueError):
        DmeConfig(schemes=["ppr_laplace"])
    with pytest.raises(ValueError):
        DmeConfig(chunk_dim=None)
    with pytest.raises(ValueError):
        DmeConfig.from_dict({"bogus": 1})
    cfg = DmeConfig.from_dict({"bit_budgets": ["inf", 50]})
    assert cfg.bit_budgets == [math.inf, 50.0]
    assert cfg.C == pytest.approx(math.sqrt(20))
    big = DmeConfig.paper_scale()
    assert (big.n, big.d, big.chunk_dim) == (500, 1000, 50)
    assert config_metadata(cfg)["C"] == cfg.C


def test_budget_search():
    args = (0.5, 1e-5, math.sqrt(20), 50, 20, 2.0)
    assert budget_search(*args, math.inf) == 0.5
    sigma = gaussian_sigma_for_dp(math.sqrt(20), PrivacyBudget(0.5, 1e-5))
    exact = dme_comm_bound(math.sqrt(20), 50, 20, sigma, 2.0)
    assert budget_search(*args, exact) == pytest.approx(0.5, abs=1e-6)
    prev = 0.0
    for budget in np.linspace(min_comm_bound(20, 2.0) + 0.5, exact + 5, 25):
        e = budget_search(*args, budget)
        assert e >= prev - 1e-12 and e <= 0.5
        prev = e
    with pytest.raises(ValueError, match="never drops below"):
        budget_search(*args, min_comm_bound(20, 2.0) - 0.1)


def test_sliced_budget_search_uses_chunk_bounds():
    e_sliced = budget_search(0.5, 1e-5, math.sqrt(20), 50, 20, 2.0, 40.0, chunk_dim=10)
    sigma = gaussian_sigma_for_dp(math.sqrt(20), PrivacyBudget(e_sliced, 1e-5))
    assert dme_comm_bound(math.sqrt(20), 50, 20, sigma, 2.0, 10) <= 40.0 + 1e-9


def test_run_dme_small():
    cfg = small_dme()
    recs = run_dme(cfg)
    assert [r.scheme for r in recs] == ["uncompressed_gaussian", "ppr_gaussian", "sliced_ppr"]
    for r in recs:
        errs = r.extra["errors"]
        se = errs.std(axis=0, ddof=1) / math.sqrt(len(errs))
        assert np.all(np.abs(errs.mean(axis=0)) < 5 * se)
        assert r.trials == 60 and r.wall_time_seconds == 0.0
        assert r.extra["theory_mse"] == pytest.approx(r.extra["sigma"] ** 2 * 4 / 25)
    unc, ppr, sliced = recs
    assert unc.bits_used == 64 * 4
    assert ppr.bits_used <= prefix_size_bound(ppr.extra["mean_log2_k"]) + 1
    assert ppr.extra["bound_violations"] == 0


def test_run_dme_noise_free_limit():
    cfg = small_dme(clip=1e-6, schemes=["uncompressed_gaussian"])
    assert run_dme(cfg)[0].mse < 1e-9


def test_dme_deterministic_and_thread_independent(tmp_path, monkeypatch):
    cfg = small_dme(trials=10)
    write_csv(run_dme(cfg), tmp_path / "a.csv")
    monkeypatch.setenv("PPR_THREADS", "3")
    write_csv(run_dme(cfg), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_dme_budget_records():
    cfg = small_dme(trials=5, bit_budgets=[math.inf, 30.0], schemes=["ppr_gaussian"])
    recs = run_dme(cfg)
    assert len(recs) == 2
    assert recs[1].extra["epsilon_used"] <= recs[0].extra["epsilon_used"]
    assert recs[1].extra["comm_bound"] <= 30.0 + 1e-9


def test_laplace_experiment_small():
    cfg = LaplaceExpConfig(d=5, C=10.0, epsilon_grid=[1.0], bit_budgets=[40], trials=200, record_timing=False)
    recs = run_laplace_experiment(cfg)
    ppr = [r for r in recs if r.scheme == "ppr_laplace"][0]
    dl = [r for r in recs if r.scheme == "discrete_laplace"][0]
    assert ppr.mse == 30.0
    assert dl.bits_used <= 40 and dl.trials == 200
    assert recs == run_laplace_experiment(cfg)


def test_laplace_ppr_samples_smoke():
    z, res = laplace_ppr_samples(np.array([0.2, 0.1]), 1.0, 1.0, 2.0, 3, n_points=1000)
    assert z.shape == (3, 2) and all(r.metadata["truncated"] for r in res)


def test_run_timing_small():
    recs = run_timing(TimingConfig(chunk_dims=[1, 4], trials=5, total_dim=10))
    assert [r.chunk_dim for r in recs] == [1, 4]
    for r in recs:
        assert r.mean_seconds > 0 and r.stderr_seconds >= 0 and r.mean_points >= 1
        assert r.extrapolated_vector_seconds == pytest.approx(math.ceil(10 / r.chunk_dim) * r.mean_seconds)
    with pytest.raises(ValueError):
        TimingConfig(trials=1)


def test_csv_empty_and_round_trip(tmp_path):
    p = tmp_path / "e.csv"
    write_csv([], p)
    assert p.read_text() == ",".join(CSV_FIELDS) + "\n"
    assert read_csv(p) == []
    recs = [
        ExperimentRecord("ppr_gaussian", 0.1, 123.456789012345678, 1 / 3, 2.5e-7, 10),
        ExperimentRecord("sliced_ppr", 0.5, 0.0, math.pi, 0.0, 1),
        ExperimentRecord("discrete_laplace", 4.0, 80.0, 1e-300, 12.0, 5000),
    ]
    write_csv(recs, p, {"note": "x", "budget": math.inf})
    assert read_csv(p) == recs
    assert (tmp_path / "e.csv.meta.json").exists()


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("scheme,epsilon,bits_used,mse,trials\nppr_gaussian,1,2,3,4\n")
    with pytest.raises(CsvFormatError, match="wall_time_seconds"):
        read_csv(p)
    p.write_text(",".join(CSV_FIELDS) + "\nppr_gaussian,1,2,3,4,5\nppr_gaussian,1,2\n")
    with pytest.raises(CsvFormatError, match="line 3"):
        read_csv(p)
    p.write_text(",".join(CSV_FIELDS) + "\nppr_gaussian,x,2,3,4,5\n")
    with pytest.raises(CsvFormatError, match="line 2"):
        read_csv(p)
    p.write_text("")
    with pytest.raises(CsvFormatError, match="line 1"):
        read_csv(p)


def test_record_validation():
    with pytest.raises(ValueError):
        ExperimentRecord("bogus", 1, 1, 1, 0, 1)
    with pytest.raises(ValueError):
        ExperimentRecord("ppr_gaussian", 1, 1, -1, 0, 1)
    with pytest.raises(ValueError):
        ExperimentRecord("ppr_gaussian", 1, -1, 1, 0, 1)
