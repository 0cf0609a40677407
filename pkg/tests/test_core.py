import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.integrate import quad
from scipy.special import gammaln

from ppr.core import (
    EncodeError,
    PprParams,
    TargetSpec,
    _refined_term,
    _unseen_mean,
    conditional_selection_logprobs,
    decode,
    decode_sequential,
    encode,
    encode_truncated,
    log_k_bound,
    pfr_encode,
    prefix_size_bound,
    refined_overhead,
    simple_overhead,
)
from ppr.mechanisms import GaussianMechSpec, GaussianProposalSpec, gaussian_kl, gaussian_proposal, gaussian_target
from ppr.rng import SampleStream, SharedSeed

ROOT = SharedSeed.from_int(7)
PROP = GaussianProposalSpec(1.04, 1)
Q1 = PROP.proposal()
P1 = gaussian_target(GaussianMechSpec(np.array([0.5]), 0.04), PROP)
KL1 = gaussian_kl(GaussianMechSpec(np.array([0.5]), 0.04), PROP)
SAME = TargetSpec(lambda z: np.zeros(len(z)), 0.0)


def seeds(label, i):
    return ROOT.derive(label, "shared", i), SampleStream(ROOT.derive(label, "local", i))


def run(label, n, alpha=2.0, target=P1, **kw):
    ks, zs = [], []
    for i in range(n):
        shared, local = seeds(label, i)
        res = encode(PprParams(alpha), Q1, target, shared, local, **kw)
        ks.append(res.k)
        zs.append(res.point[0])
    return np.array(ks), np.array(zs)


def test_same_target_gives_proposal_law():
    ks, zs = run("same", 3000, target=SAME)
    assert ks.min() >= 1
    assert stats.kstest(zs, stats.norm(0, math.sqrt(1.04)).cdf).pvalue > 0.001


@pytest.mark.parametrize("alpha", [1.5, 2.0, 4.0])
def test_gaussian_benchmark_law(alpha):
    ks, zs = run(f"bench{alpha}", 3000, alpha)
    assert stats.kstest(zs, stats.norm(0.5, 0.2).cdf).pvalue > 0.001
    assert abs(zs.mean() - 0.5) < 5 * 0.2 / math.sqrt(zs.size)
    mean_log = np.log(ks).mean()
    se = np.log(ks).std(ddof=1) / math.sqrt(ks.size)
    assert mean_log <= KL1 + simple_overhead(alpha) + 3 * se


# the pure scan has finite mean running time only for alpha > 2
@pytest.mark.parametrize("alpha", [2.5, 4.0])
def test_scan_mode_matches_resolve_mode(alpha):
    ks_r, zs_r = run(f"modes{alpha}", 2000, alpha)
    ks_s, zs_s = run(f"modes-scan{alpha}", 2000, alpha, resolve_queue=False)
    assert stats.ks_2samp(zs_r, zs_s).pvalue > 0.001
    assert stats.ks_2samp(ks_r, ks_s).pvalue > 0.001


def test_termination_is_sound():
    for i in range(200):
        shared, local = seeds("overrun", i)
        encode(PprParams(2.0), Q1, P1, shared, local, resolve_queue=False, overrun_check=10.0)


def _k_hist(ks, top=100):
    ks = np.minimum(ks, top + 1)
    return np.bincount(ks, minlength=top + 2)[1:] / ks.size


def test_exact_and_truncated_agree_given_shared_stream():
    # with the proposal samples fixed, both encoders target the same law of K
    shared = ROOT.derive("fixed-shared")
    m = 4000
    exact, trunc = [], []
    for i in range(m):
        exact.append(encode(PprParams(2.0), Q1, P1, shared, SampleStream(ROOT.derive("fx", i))).k)
        trunc.append(encode_truncated(PprParams(2.0), Q1, P1, shared, SampleStream(ROOT.derive("ft", i)), 3000).k)
    tv = 0.5 * np.abs(_k_hist(np.array(exact)) - _k_hist(np.array(trunc))).sum()
    assert tv < 0.05


def test_truncated_converges_with_more_points():
    shared = ROOT.derive("conv-shared")
    m = 3000
    ref = [encode(PprParams(2.0), Q1, P1, shared, SampleStream(ROOT.derive("cx", i))).k for i in range(m)]
    tvs = []
    for n_points in (10, 30, 3000):
        ks = [encode_truncated(PprParams(2.0), Q1, P1, shared, SampleStream(ROOT.derive("ct", n_points, i)),
                               n_points).k for i in range(m)]
        tvs.append(0.5 * np.abs(_k_hist(np.array(ref)) - _k_hist(np.array(ks))).sum())
    assert tvs[0] > tvs[1] > tvs[2]


def test_decode_round_trip_is_bit_exact():
    for i in range(50):
        shared, local = seeds("rt", i)
        res = encode(PprParams(2.0), Q1, P1, shared, local)
        assert np.array_equal(decode(Q1, res.k, shared), res.point)
        assert res.points_examined >= res.k >= 1


def test_decode_random_access_matches_sequential():
    q = gaussian_proposal(3, 2.0)
    shared = ROOT.derive("jump")
    seq = q.sample(SampleStream(shared), 300)
    for k in (1, 2, 3, 17, 150, 300):
        assert np.array_equal(decode(q, k, shared), seq[k - 1])
        assert np.array_equal(decode_sequential(q, k, shared), seq[k - 1])
    assert np.array_equal(q.sample_at(shared, [5, 1, 300]), seq[[4, 0, 299]])
    with pytest.raises(ValueError):
        decode(q, 0, shared)


def test_truncated_single_point():
    for i in range(20):
        shared, local = seeds("single", i)
        assert encode_truncated(PprParams(2.0), Q1, P1, shared, local, 1).k == 1


def test_truncated_same_target_law():
    zs = []
    for i in range(2000):
        shared, local = seeds("tsame", i)
        res = encode_truncated(PprParams(2.0), Q1, SAME, shared, local, 1000)
        zs.append(res.point[0])
    assert stats.kstest(zs, stats.norm(0, math.sqrt(1.04)).cdf).pvalue > 0.001


def test_truncated_zero_ratio_errors():
    zero = TargetSpec(lambda z: np.full(len(z), -np.inf), 0.0)
    shared, local = seeds("zero", 0)
    with pytest.raises(EncodeError):
        encode_truncated(PprParams(2.0), Q1, zero, shared, local, 50)
    with pytest.raises(ValueError):
        encode_truncated(PprParams(2.0), Q1, zero, shared, local, 0)


def test_pfr():
    shared, local = seeds("pfr-same", 0)
    assert pfr_encode(Q1, SAME, shared, local).k == 1
    zs, logs = [], []
    for i in range(3000):
        shared, local = seeds("pfr", i)
        res = pfr_encode(Q1, P1, shared, local)
        zs.append(res.point[0])
        logs.append(math.log2(res.k))
    zs, logs = np.array(zs), np.array(logs)
    assert stats.kstest(zs, stats.norm(0.5, 0.2).cdf).pvalue > 0.001
    kl_bits = KL1 / math.log(2)
    assert logs.mean() <= kl_bits + 1.0 + 3 * logs.std(ddof=1) / math.sqrt(logs.size)


def test_pfr_invariant_to_cap():
    for i in range(30):
        shared, local = seeds("pfr-cap", i)
        a = pfr_encode(Q1, P1, shared, local)
        b = pfr_encode(Q1, P1, shared, SampleStream(ROOT.derive("pfr-cap", "local", i)),
                       max_points=a.points_examined)
        assert (a.k, a.winning_log_weight) == (b.k, b.winning_log_weight)
    with pytest.raises(EncodeError):
        shared, local = seeds("pfr-cap", 99)
        pfr_encode(Q1, TargetSpec(lambda z: np.zeros(len(z)), 30.0), shared, local, max_points=100)


def test_encode_errors():
    shared, local = seeds("err", 0)
    with pytest.raises(ValueError):
        PprParams(1.0)
    with pytest.raises(ValueError):
        encode(PprParams(2.0), Q1, TargetSpec(SAME.log_density_ratio, math.inf), shared, local)
    with pytest.raises(EncodeError):
        encode(PprParams(2.0), Q1, TargetSpec(lambda z: np.full(len(z), np.nan), 0.0), shared, local)
    with pytest.raises(EncodeError) as info:
        encode(PprParams(2.0, max_points=1000), Q1, TargetSpec(lambda z: np.zeros(len(z)), 40.0),
               shared, local, resolve_queue=False)
    assert "points_examined" in info.value.partial
    with pytest.raises(ValueError):
        encode(PprParams(2.0), Q1, P1, shared, local, overrun_check=1.0)


def test_bound_violations_counted():
    # a bound below the true supremum is reported, not silently trusted
    low = TargetSpec(P1.log_density_ratio, 0.0)
    total = 0
    for i in range(20):
        shared, local = seeds("viol", i)
        total += encode(PprParams(2.0), Q1, low, shared, local).bound_violations
    assert total > 0


def test_encode_deterministic():
    a = encode(PprParams(2.0), Q1, P1, *seeds("det", 3))
    b = encode(PprParams(2.0), Q1, P1, *seeds("det", 3))
    assert (a.k, a.winning_log_weight) == (b.k, b.winning_log_weight)


def test_unseen_mean_matches_quadrature():
    alpha, level = 2.5, math.log(40.0)
    L = math.exp(level)
    ell = L ** (1 / alpha)
    for t in (ell * 1.01, ell * 2, ell * 10):
        ref = quad(lambda s: math.exp(-L * s ** -alpha), ell, t, epsrel=1e-12)[0]
        got = _unseen_mean(np.array([math.log(t)]), level, alpha)[0]
        assert got == pytest.approx(ref, rel=1e-8, abs=1e-10)


def test_selection_logprobs_examples():
    assert np.allclose(np.exp(conditional_selection_logprobs(2.0, [0.3, 0.3])), [0.5, 0.5])
    assert np.allclose(np.exp(conditional_selection_logprobs(2.0, [0.0, math.inf])), [1.0, 0.0])
    with pytest.raises(ValueError):
        conditional_selection_logprobs(2.0, [math.inf, math.inf])
    with pytest.raises(ValueError):
        conditional_selection_logprobs(2.0, [])


@settings(max_examples=200)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=30), st.floats(1.01, 10),
       st.floats(0, 2), st.randoms(use_true_random=False))
def test_selection_ratio_bounded(lt, alpha, eps, rnd):
    pert = [v + rnd.uniform(-eps, eps) for v in lt]
    a = conditional_selection_logprobs(alpha, lt)
    b = conditional_selection_logprobs(alpha, pert)
    assert np.max(np.abs(a - b)) <= 2 * alpha * eps + 1e-9


def brute_refined(alpha):
    hi = min(1.0, alpha - 1.0)
    eta = np.linspace(hi * 1e-5, hi, 200_001)
    if alpha <= 2.0:
        eta = eta[:-1]
    lr = gammaln(1 - (eta + 1) / alpha) + gammaln(eta + 1) - (eta + 1) * gammaln(1 - 1 / alpha)
    return float(np.min(np.logaddexp(0.0, lr) / eta))


@pytest.mark.parametrize("alpha", [1.2, 1.5, 2.0, 2.5, 4.0, 10.0, 100.0])
def test_refined_overhead_matches_grid_minimum(alpha):
    value, eta = refined_overhead(alpha)
    ref = brute_refined(alpha)
    assert value <= ref + 1e-7
    assert value >= ref - 1e-4


def test_log_k_bound_examples():
    assert log_k_bound(2.0, 0.0) <= 2 * math.log(3.56) + 1e-12
    assert simple_overhead(2.0) == pytest.approx(2 * math.log(3.56))
    assert log_k_bound(3.0, 5.0) <= 5 + math.log(3.56) + 1e-12
    assert simple_overhead(3.0) == pytest.approx(math.log(3.56))
    assert _refined_term(1e6, 1.0) == pytest.approx(math.log(2), abs=1e-5)
    with pytest.raises(ValueError):
        log_k_bound(1.0, 0.0)
    with pytest.raises(ValueError):
        log_k_bound(2.0, -1.0)


def test_prefix_size_bound():
    assert prefix_size_bound(0, "elias_delta") == 1
    assert prefix_size_bound(7, "huffman") == 12
    assert prefix_size_bound(7, "elias_delta") == 14
    with pytest.raises(ValueError):
        prefix_size_bound(-1)
    with pytest.raises(ValueError):
        prefix_size_bound(1, "gamma")
