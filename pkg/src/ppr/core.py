"""Poisson private representation: encoder, decoder and size bounds.

The exact encoder scans the marked Poisson process in increasing order of
``B = T**alpha * min(V, 1)`` and keeps every weight in log form,
``log w = alpha * (log T - log r(Z)) + log V``. Points are generated in
vectorised blocks; a point receives its proposal index (its rank in T) once
the B-level passes ``T**alpha``, because no later point can have a smaller T.
Queued points that could still win when the scan stops are ranked by
counting, see ``encode``.

Natural logarithms throughout; bit-valued helpers say so in their name.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammainc

from .rng import SampleStream, SharedSeed
from .special import log_gamma, log_sum_exp, lower_incomplete_gamma

LOG_3_56 = math.log(3.56)
DEFAULT_MAX_POINTS = 10**8
_MAX_BATCH = 1 << 16
_MAX_RANK = 1 << 63


class EncodeError(RuntimeError):
    """Encoding failed; ``partial`` holds diagnostics gathered so far."""

    def __init__(self, message: str, partial: dict | None = None):
        super().__init__(message)
        self.partial = partial or {}


@dataclass(frozen=True)
class PprParams:
    alpha: float
    max_points: int | None = DEFAULT_MAX_POINTS

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if self.max_points is not None and self.max_points < 1:
            raise ValueError("max_points must be positive")


@dataclass
class ProposalSpec:
    """Shared proposal Q.

    Sample k (1-based) is ``transform(u, seed, starts)`` applied to the
    ``draws_per_sample`` uniforms that start at draw ``(k - 1) * draws_per_sample``
    of the shared stream. ``u`` has one row per sample and ``starts`` holds
    each row's first draw position.
    """

    dimension: int
    draws_per_sample: int
    transform: Callable[[np.ndarray, SharedSeed, np.ndarray], np.ndarray]
    description: dict = field(default_factory=dict)

    def _apply(self, u, seed, starts) -> np.ndarray:
        out = np.asarray(self.transform(u, seed, starts), dtype=float)
        return out.reshape(len(u), self.dimension)

    def sample(self, stream: SampleStream, count: int) -> np.ndarray:
        """The next ``count`` samples of ``stream``."""
        per = self.draws_per_sample
        starts = stream.counter + per * np.arange(count, dtype=np.int64)
        u = stream.uniform(count * per).reshape(count, per)
        return self._apply(u, stream.seed, starts)

    def sample_at(self, shared: SharedSeed, ks) -> np.ndarray:
        """Samples with 1-based indices ``ks``, by random access."""
        ks = np.asarray(ks, dtype=np.uint64).reshape(-1)
        per = np.uint64(self.draws_per_sample)
        starts = (ks - np.uint64(1)) * per
        idx = starts[:, None] + np.arange(self.draws_per_sample, dtype=np.uint64)[None, :]
        u = SampleStream(shared).uniform_at(idx.reshape(-1)).reshape(ks.size, self.draws_per_sample)
        return self._apply(u, SharedSeed.parse(shared), starts)


@dataclass
class TargetSpec:
    """Mechanism output law P as ``log dP/dQ`` plus a bound on it.

    ``log_density_ratio`` maps an ``(m, d)`` array to ``m`` log ratios
    (``-inf`` allowed).
    """

    log_density_ratio: Callable[[np.ndarray], np.ndarray]
    log_r_star: float
    metadata: dict = field(default_factory=dict)


@dataclass
class EncodeResult:
    """``points_examined`` counts proposal indices settled by the encoder;
    ``metadata["ratio_evaluations"]`` (exact encoder) counts density-ratio calls."""

    k: int
    winning_log_weight: float
    points_examined: int
    point: np.ndarray | None = None
    bound_violations: int = 0
    metadata: dict = field(default_factory=dict)


def _eval_log_ratio(target: TargetSpec, z: np.ndarray, partial: dict) -> np.ndarray:
    lr = np.asarray(target.log_density_ratio(z), dtype=float).reshape(len(z))
    if np.isnan(lr).any():
        raise EncodeError("log_density_ratio returned NaN", partial)
    return lr


def _count_violations(lr: np.ndarray, log_r_star: float) -> int:
    slack = 1e-9 * max(1.0, abs(log_r_star))
    return int(np.count_nonzero(lr > log_r_star + slack))


@lru_cache(maxsize=256)
def _bpoint_constants(alpha: float) -> tuple[float, float, float]:
    shape = 1.0 - 1.0 / alpha
    c = math.exp(-1.0) + lower_incomplete_gamma(shape, 1.0)
    return shape, math.exp(-1.0) / c, math.log(alpha) - math.log(c)


class _BPoints:
    """Blocks of points (log B, log T, log V) in increasing B, from local randomness."""

    def __init__(self, alpha: float, local: SampleStream):
        self.alpha = alpha
        self.local = local
        # log b = alpha * (log u + log_scale)
        self.shape, self.p_first, self.log_scale = _bpoint_constants(alpha)
        self.u = 0.0
        self.generated = 0

    def next(self, n: int):
        u = self.u + np.cumsum(self.local.exponential(n))
        self.u = float(u[-1])
        self.generated += n
        log_b = self.alpha * (np.log(u) + self.log_scale)
        first = self.local.uniform(n) < self.p_first
        n_first = int(first.sum())
        v = np.empty(n)
        v[first] = 1.0 + self.local.exponential(n_first)
        v[~first] = self.local.truncated_gamma01(self.shape, n - n_first)
        log_v = np.log(v)
        log_t = np.where(first, log_b, log_b - log_v) / self.alpha
        return log_b, log_t, log_v

    def log_u_for_level(self, log_b: float) -> float:
        return log_b / self.alpha - self.log_scale


def _next_batch(log_u_needed: float, u_now: float, generated: int = 0) -> int:
    # arrivals come at unit rate in u; never more than double the work so far
    cap = min(max(generated, 8), _MAX_BATCH)
    if log_u_needed > math.log(_MAX_BATCH):
        return cap
    extra = math.exp(log_u_needed) - u_now
    return int(min(max(1.25 * extra + 8, 8), cap))


def _unseen_mean(lt: np.ndarray, level: float, alpha: float) -> np.ndarray:
    """Expected number of unseen points with T below ``exp(lt)``.

    Once every point with ``B <= exp(level)`` has been generated, the rest
    form a Poisson process whose T-intensity is ``exp(-L * s**-alpha)`` on
    ``s > L**(1/alpha)``; this is its integral, via incomplete gammas.
    """
    shape = 1.0 - 1.0 / alpha
    ell = math.exp(level / alpha)
    w = np.exp(level - alpha * lt)
    gamma1 = lower_incomplete_gamma(shape, 1.0)
    low_w = gammainc(shape, w) * math.gamma(shape)
    return np.maximum(np.exp(lt - w) - ell * (math.exp(-1.0) + gamma1) + ell * low_w, 0.0)


def encode(
    params: PprParams,
    proposal: ProposalSpec,
    target: TargetSpec,
    shared: SharedSeed,
    local: SampleStream,
    resolve_queue: bool = True,
    overrun_check: float = 0.0,
) -> EncodeResult:
    """Exact PPR encoder.

    Returns the index K whose law, given the shared proposal samples, is
    proportional to ``T~_k ** -alpha``.

    The B-scan stops once ``B * r*^-alpha`` passes the running minimum. Queued
    points (generated, T not yet reached) that could still win are then
    ranked directly: their rank adds a Poisson count of the not-yet-generated
    points below them in T, and their proposal sample is fetched by random
    access. With ``resolve_queue=False`` the scan instead continues until
    the queue empties, which is exact too but has a heavy-tailed running
    time. ``overrun_check > 0`` (scan mode only) keeps scanning that many
    times the points already generated and raises if any would have won.
    """
    alpha = float(params.alpha)
    if not math.isfinite(alpha):
        raise ValueError("alpha = inf is handled by pfr_encode")
    log_r_star = float(target.log_r_star)
    if not math.isfinite(log_r_star):
        raise ValueError("exact encode needs a finite log_r_star; use encode_truncated")
    if overrun_check > 0 and resolve_queue:
        raise ValueError("overrun_check needs resolve_queue=False")
    shared = SharedSeed.parse(shared)
    cap = params.max_points

    points = _BPoints(alpha, local)
    zs = SampleStream(shared)
    best_lw, best_k, best_point = math.inf, 0, None
    k = 0
    violations = 0
    pend_lt = np.empty(0)
    pend_lv = np.empty(0)

    def partial():
        return {"k": best_k, "winning_log_weight": best_lw, "points_examined": k,
                "points_generated": points.generated}

    # expected stopping level is about c/alpha * r* / Gamma(1 - 1/alpha) arrivals
    guess = log_r_star - points.log_scale - log_gamma(points.shape) + math.log(0.3)
    batch = _next_batch(guess, 0.0, _MAX_BATCH)
    while True:
        log_b, lt, lv = points.next(batch)
        level = float(log_b[-1])
        all_lt = np.concatenate([pend_lt, lt])
        all_lv = np.concatenate([pend_lv, lv])
        ready = all_lt <= level / alpha
        if ready.any():
            idx = np.flatnonzero(ready)
            order = idx[np.argsort(all_lt[idx], kind="stable")]
            m = order.size
            if cap is not None and k + m > cap:
                raise EncodeError(f"max_points={cap} exceeded; is log_r_star right?", partial())
            z = proposal.sample(zs, m)
            lr = _eval_log_ratio(target, z, partial())
            violations += _count_violations(lr, log_r_star)
            with np.errstate(invalid="ignore"):
                lw = alpha * (all_lt[order] - lr) + all_lv[order]
            j = int(np.argmin(lw))
            if lw[j] < best_lw:
                best_lw, best_k, best_point = float(lw[j]), k + j + 1, z[j].copy()
            k += m
        pend_lt = all_lt[~ready]
        pend_lv = all_lv[~ready]

        if math.isfinite(best_lw):
            reached = level - alpha * log_r_star >= best_lw
            possible = alpha * (pend_lt - log_r_star) + pend_lv < best_lw
            if reached and not possible.any():
                break
            if reached and resolve_queue:
                break
            need = points.log_u_for_level(best_lw + alpha * log_r_star)
            if possible.any() and not resolve_queue:
                need = max(need, points.log_u_for_level(alpha * float(pend_lt[possible].max())))
            batch = _next_batch(need, points.u, points.generated)
        else:
            batch = min(2 * batch, _MAX_BATCH)
        if cap is not None and points.generated > cap:
            raise EncodeError(f"max_points={cap} exceeded; is log_r_star right?", partial())

    resolved = 0
    q_lt = np.empty(0)
    ranks = np.empty(0, dtype=np.int64)
    if resolve_queue and pend_lt.size:
        order = np.argsort(pend_lt, kind="stable")
        q_lt, q_lv = pend_lt[order], pend_lv[order]
        # the best weight only falls from here, so later queue entries are moot
        alive = np.flatnonzero(alpha * (q_lt - log_r_star) + q_lv < best_lw)
        last = int(alive[-1]) + 1 if alive.size else 0
        q_lt, q_lv = q_lt[:last], q_lv[:last]
    if resolve_queue and q_lt.size:
        mu = _unseen_mean(q_lt, level, alpha)
        if mu[-1] >= _MAX_RANK // proposal.draws_per_sample:
            raise EncodeError("a contending queued point has rank beyond 2**63", partial())
        # two local draws key the Poisson counts, so consumption stays fixed
        counts = np.random.Generator(np.random.Philox(key=local.raw(2))).poisson(
            np.diff(mu, prepend=0.0).clip(min=0.0))
        ranks = k + np.arange(1, q_lt.size + 1) + np.cumsum(counts)
        if ranks[-1] >= _MAX_RANK // proposal.draws_per_sample:
            raise EncodeError("a contending queued point has rank beyond 2**63", partial())
        for lo in range(0, q_lt.size, 4096):
            sl = slice(lo, lo + 4096)
            cand = np.flatnonzero(alpha * (q_lt[sl] - log_r_star) + q_lv[sl] < best_lw) + lo
            if not cand.size:
                continue
            z = proposal.sample_at(shared, ranks[cand])
            lr = _eval_log_ratio(target, z, partial())
            violations += _count_violations(lr, log_r_star)
            resolved += cand.size
            with np.errstate(invalid="ignore"):
                lw = alpha * (q_lt[cand] - lr) + q_lv[cand]
            j = int(np.argmin(lw))
            if lw[j] < best_lw:
                best_lw, best_k, best_point = float(lw[j]), int(ranks[cand[j]]), z[j].copy()

    if overrun_check > 0:
        extra = int(math.ceil(overrun_check * points.generated))
        log_b, lt, lv = points.next(extra)
        all_lt = np.concatenate([pend_lt, lt])
        all_lv = np.concatenate([pend_lv, lv])
        ready = all_lt <= float(log_b[-1]) / alpha
        idx = np.flatnonzero(ready)
        order = idx[np.argsort(all_lt[idx], kind="stable")]
        z = proposal.sample(zs, order.size)
        lr = _eval_log_ratio(target, z, partial())
        lw = alpha * (all_lt[order] - lr) + all_lv[order]
        if order.size and lw.min() < best_lw:
            raise EncodeError("termination unsound: a later point beats the winner", partial())

    # every index up to the last ranked contender is settled: evaluated, or
    # counted as an unseen point that cannot beat the winner
    settled = max(k, int(ranks[-1])) if resolved else k
    return EncodeResult(best_k, best_lw, settled, best_point, violations,
                        {"points_generated": points.generated, "queue_resolved": resolved,
                         "ratio_evaluations": k + resolved})


def decode(proposal: ProposalSpec, k: int, shared: SharedSeed) -> np.ndarray:
    """The k-th proposal sample of the shared stream (1-based)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    stream = SampleStream(SharedSeed.parse(shared))
    stream.jump_to((k - 1) * proposal.draws_per_sample)
    return proposal.sample(stream, 1)[0]


def decode_sequential(proposal: ProposalSpec, k: int, shared: SharedSeed) -> np.ndarray:
    """Reference decoder that regenerates all k samples in order."""
    stream = SampleStream(SharedSeed.parse(shared))
    z = None
    for _ in range(k):
        z = proposal.sample(stream, 1)[0]
    return z


def encode_truncated(
    params: PprParams,
    proposal: ProposalSpec,
    target: TargetSpec,
    shared: SharedSeed,
    local: SampleStream,
    n_points: int,
    chunk: int = 1 << 15,
) -> EncodeResult:
    """Pick K among the first ``n_points`` samples with weight ``T~_k ** -alpha``.

    Selection is Gumbel-max over ``-alpha * log T~``; each point consumes one
    local draw for its arrival gap and one for its Gumbel noise. The
    reported weight is ``alpha * log T~_K``.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    alpha = float(params.alpha)
    zs = SampleStream(SharedSeed.parse(shared))
    t_last = 0.0
    best_score, best_k, best_lw, best_point = -math.inf, 0, math.inf, None
    violations = 0
    for start in range(0, n_points, chunk):
        m = min(chunk, n_points - start)
        t = t_last + np.cumsum(local.exponential(m))
        t_last = float(t[-1])
        u = local.uniform(m)
        z = proposal.sample(zs, m)
        lr = _eval_log_ratio(target, z, {"points_examined": start})
        if math.isfinite(target.log_r_star):
            violations += _count_violations(lr, target.log_r_star)
        lw = alpha * (np.log(t) - lr)
        with np.errstate(divide="ignore"):
            score = -lw - np.log(-np.log(u))
        j = int(np.argmax(score))
        if score[j] > best_score:
            best_score, best_k, best_lw, best_point = float(score[j]), start + j + 1, float(lw[j]), z[j].copy()
    if best_k == 0 or not math.isfinite(best_lw):
        raise EncodeError("every candidate has zero density ratio", {"points_examined": n_points})
    return EncodeResult(best_k, best_lw, n_points, best_point, violations,
                        {"truncated": True, "n_points": n_points})


def pfr_encode(
    proposal: ProposalSpec,
    target: TargetSpec,
    shared: SharedSeed,
    local: SampleStream,
    max_points: int | None = DEFAULT_MAX_POINTS,
) -> EncodeResult:
    """Poisson functional representation (alpha = inf): K = argmin_i T_i / r(Z_i).

    Arrival times use one local draw each, so the result does not depend on
    the internal batch sizes or on ``max_points`` when the scan ends under it.
    """
    log_r_star = float(target.log_r_star)
    if not math.isfinite(log_r_star):
        raise ValueError("pfr_encode needs a finite log_r_star")
    zs = SampleStream(SharedSeed.parse(shared))
    t_last = 0.0
    best, best_k, best_point = math.inf, 0, None
    seen = 0
    violations = 0
    batch = 16
    while True:
        t = t_last + np.cumsum(local.exponential(batch))
        t_last = float(t[-1])
        z = proposal.sample(zs, batch)
        lr = _eval_log_ratio(target, z, {"k": best_k, "points_examined": seen})
        log_t = np.log(t)
        lt_tilde = log_t - lr
        # running minimum over earlier points, including previous blocks
        prior = np.minimum.accumulate(np.concatenate([[best], lt_tilde[:-1]]))
        stop = np.flatnonzero(log_t - log_r_star >= prior)
        end = int(stop[0]) if stop.size else batch
        if end:
            violations += _count_violations(lr[:end], log_r_star)
            j = int(np.argmin(lt_tilde[:end]))
            if lt_tilde[j] < best:
                best, best_k, best_point = float(lt_tilde[j]), seen + j + 1, z[j].copy()
        seen += end
        if max_points is not None and seen > max_points:
            raise EncodeError(f"max_points={max_points} exceeded",
                              {"k": best_k, "points_examined": seen})
        if stop.size:
            break
        need = best + log_r_star
        if math.isfinite(need) and need < math.log(_MAX_BATCH):
            batch = int(min(max(1.25 * (math.exp(need) - t_last) + 8, 8), _MAX_BATCH))
        else:
            batch = min(2 * batch, _MAX_BATCH)
    return EncodeResult(best_k, best, seen, best_point, violations)


def conditional_selection_logprobs(alpha: float, log_ttilde) -> np.ndarray:
    """``log Pr(K = k)`` for ``Pr(K = k)`` proportional to ``T~_k ** -alpha``.

    Entries of ``+inf`` (zero density ratio) get probability 0.
    """
    lt = np.asarray(log_ttilde, dtype=float)
    if lt.size == 0:
        raise ValueError("need at least one entry")
    if np.any(np.isnan(lt)) or np.any(lt == -np.inf):
        raise ValueError("entries must be finite or +inf")
    if np.all(lt == np.inf):
        raise ValueError("all weights are zero")
    logits = -alpha * lt
    return logits - log_sum_exp(logits)


# Size bounds ---------------------------------------------------------------

def simple_overhead(alpha: float) -> float:
    """``log(3.56) / min((alpha - 1) / 2, 1)`` nats."""
    if not alpha > 1.0:
        raise ValueError("alpha must exceed 1")
    return LOG_3_56 / min((alpha - 1.0) / 2.0, 1.0)


def _refined_term(alpha: float, eta: float) -> float:
    if math.isinf(alpha):
        log_ratio = log_gamma(eta + 1.0)
    else:
        arg = 1.0 - (eta + 1.0) / alpha
        if arg <= 0.0:
            return math.inf
        log_ratio = log_gamma(arg) + log_gamma(eta + 1.0) - (eta + 1.0) * log_gamma(1.0 - 1.0 / alpha)
    return math.log1p(math.exp(log_ratio)) / eta if log_ratio < 700 else (log_ratio) / eta


def refined_overhead(alpha: float, tol: float = 1e-8) -> tuple[float, float]:
    """Infimum over eta in (0, 1] and (0, alpha - 1) of the eta-form overhead.

    Returns ``(value_nats, eta)``.
    """
    if not alpha > 1.0:
        raise ValueError("alpha must exceed 1")
    hi = min(1.0, alpha - 1.0)
    closed = alpha > 2.0  # eta = 1 itself is admissible
    grid = np.linspace(0.0, hi, 65)[1:] if closed else np.linspace(0.0, hi, 66)[1:-1]
    vals = [_refined_term(alpha, float(e)) for e in grid]
    i = int(np.argmin(vals))
    lo_b = float(grid[i - 1]) if i > 0 else hi * 1e-6
    hi_b = float(grid[i + 1]) if i + 1 < len(grid) else hi * (1.0 if closed else 1.0 - 1e-12)
    res = minimize_scalar(lambda e: _refined_term(alpha, e), bounds=(lo_b, hi_b),
                          method="bounded", options={"xatol": tol})
    best_eta, best = float(res.x), float(res.fun)
    if vals[i] < best:
        best_eta, best = float(grid[i]), vals[i]
    if closed:
        at_one = _refined_term(alpha, 1.0)
        if at_one <= best:
            best_eta, best = 1.0, at_one
    return best, best_eta


def log_k_bound(alpha: float, kl: float) -> float:
    """Upper bound on E[log K] (nats) given D(P||Q) = ``kl`` nats."""
    if not alpha > 1.0:
        raise ValueError("alpha must exceed 1")
    if kl < 0:
        raise ValueError("kl must be nonnegative")
    simple = LOG_3_56 if math.isinf(alpha) else simple_overhead(alpha)
    return kl + min(simple, refined_overhead(alpha)[0])


def prefix_size_bound(mean_log2_k: float, code: str = "elias_delta") -> float:
    """Expected prefix-code length (bits) given E[log2 K]."""
    m = float(mean_log2_k)
    if m < 0:
        raise ValueError("mean_log2_k must be nonnegative")
    if code == "elias_delta":
        return m + 2.0 * math.log2(m + 1.0) + 1.0
    if code == "huffman":
        return m + math.log2(m + 1.0) + 2.0
    raise ValueError(f"unknown code {code!r}")
