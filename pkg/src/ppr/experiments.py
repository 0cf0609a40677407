"""Reproduction harnesses: distributed mean estimation, metric privacy, timing.

Every random quantity is keyed by its role and indices (trial, client,
epsilon, budget), so results do not depend on execution order or on
``PPR_THREADS``.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .codec import elias_delta_length
from .core import PprParams, decode, encode, encode_truncated
from .mechanisms import (
    DiscreteLaplaceConfig,
    GaussianMechSpec,
    GaussianProposalSpec,
    LaplaceMechSpec,
    SlicedConfig,
    discrete_laplace_baseline,
    discrete_laplace_bits,
    discrete_laplace_step,
    gaussian_chunk_factory,
    gaussian_target,
    laplace_proposal_variance,
    laplace_target,
    sample_laplace_noise,
    sliced_decode,
    sliced_encode,
)
from .privacy import PrivacyBudget, comm_bound_gaussian, comm_bound_laplace, eta_alpha, gaussian_sigma_for_dp
from .rng import SampleStream, SharedSeed

CSV_FIELDS = ["scheme", "epsilon", "bits_used", "mse", "wall_time_seconds", "trials"]
SCHEMES = ("ppr_gaussian", "sliced_ppr", "uncompressed_gaussian", "ppr_laplace", "discrete_laplace")
FLOAT_BITS = 64


class CsvFormatError(ValueError):
    pass


@dataclass
class ExperimentRecord:
    scheme: str
    epsilon: float
    bits_used: float
    mse: float
    wall_time_seconds: float
    trials: int
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.mse >= 0:
            raise ValueError("mse must be >= 0")
        if not self.bits_used >= 0:
            raise ValueError("bits_used must be >= 0")


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("PPR_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    w = _workers()
    if w == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=w) as pool:
        return list(pool.map(fn, items))


# Distributed mean estimation ----------------------------------------------

@dataclass
class DmeConfig:
    n: int = 50
    d: int = 20
    bernoulli_p: float = 0.8
    delta: float = 1e-5
    epsilon_grid: list = field(default_factory=lambda: [0.5])
    alpha: float = 2.0
    bit_budgets: list = field(default_factory=lambda: [math.inf])
    chunk_dim: int | None = 10
    trials: int = 1000
    seed: int = 0
    schemes: list = field(default_factory=lambda: ["uncompressed_gaussian", "ppr_gaussian", "sliced_ppr"])
    # None: exact bound on the density ratio; otherwise the tail-mass bound
    tail_mass: float | None = 1e-12
    clip: float | None = None  # defaults to sqrt(d)
    record_timing: bool = True

    def __post_init__(self):
        if self.n < 1 or self.d < 1 or self.trials < 1:
            raise ValueError("n, d and trials must be >= 1")
        if not 0.0 < self.bernoulli_p <= 1.0:
            raise ValueError("bernoulli_p must lie in (0, 1]")
        for s in self.schemes:
            if s not in ("uncompressed_gaussian", "ppr_gaussian", "sliced_ppr"):
                raise ValueError(f"scheme {s!r} is not a mean-estimation scheme")
        if "sliced_ppr" in self.schemes and self.chunk_dim is None:
            raise ValueError("sliced_ppr needs chunk_dim")
        self.epsilon_grid = [float(e) for e in self.epsilon_grid]
        self.bit_budgets = [float(b) for b in self.bit_budgets]

    @property
    def C(self) -> float:
        return float(self.clip) if self.clip is not None else math.sqrt(self.d)

    @classmethod
    def paper_scale(cls, **overrides) -> "DmeConfig":
        base = dict(n=500, d=1000, delta=1e-6, epsilon_grid=[0.05, 0.1, 0.2, 0.5],
                    bit_budgets=[math.inf], chunk_dim=50, trials=5,
                    schemes=["uncompressed_gaussian", "sliced_ppr"])
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, data: dict) -> "DmeConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        data = dict(data)
        if "bit_budgets" in data:
            data["bit_budgets"] = [math.inf if b in (None, "inf") else b for b in data["bit_budgets"]]
        return cls(**data)


def gen_clients(cfg: DmeConfig, stream: SampleStream) -> np.ndarray:
    """``n x d`` matrix with i.i.d. entries, +1 with probability ``bernoulli_p`` and -1 otherwise."""
    u = stream.uniform(cfg.n * cfg.d).reshape(cfg.n, cfg.d)
    return np.where(u < cfg.bernoulli_p, 1.0, -1.0)


def _chunk_dims(d: int, chunk_dim: int | None) -> list[int]:
    if chunk_dim is None:
        return [d]
    return [s.stop - s.start for s in SlicedConfig(chunk_dim, d).slices()]


def dme_comm_bound(C: float, n: int, d: int, sigma: float, alpha: float,
                   chunk_dim: int | None = None) -> float:
    """Per-client bit bound; chunks of a sliced encoding each get their share of C^2."""
    return sum(comm_bound_gaussian(C * math.sqrt(dj / d), n, dj, sigma, alpha)
               for dj in _chunk_dims(d, chunk_dim))


def min_comm_bound(d: int, alpha: float, chunk_dim: int | None = None) -> float:
    """Infimum of ``dme_comm_bound`` as epsilon tends to 0."""
    eta = eta_alpha(alpha)
    return len(_chunk_dims(d, chunk_dim)) * (eta + math.log2(eta + 1.0) + 2.0)


def budget_search(epsilon: float, delta: float, C: float, n: int, d: int, alpha: float,
                  bit_budget: float, chunk_dim: int | None = None, tol: float = 1e-6) -> float:
    """Largest eps' <= epsilon whose calibrated Gaussian mechanism fits ``bit_budget`` bits."""

    def bits(e):
        sigma = gaussian_sigma_for_dp(C, PrivacyBudget(e, delta))
        return dme_comm_bound(C, n, d, sigma, alpha, chunk_dim)

    if math.isinf(bit_budget) or bits(epsilon) <= bit_budget:
        return epsilon
    floor = min_comm_bound(d, alpha, chunk_dim)
    if bit_budget <= floor:
        raise ValueError(f"bit budget {bit_budget} is infeasible; the bound never drops below {floor:.6g} bits")
    lo, hi = 0.0, epsilon
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if bits(mid) <= bit_budget:
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise ValueError(f"bit budget {bit_budget} is infeasible at tolerance {tol}")
    return lo


def _dme_trial(cfg: DmeConfig, scheme: str, e_idx: int, b_idx: int, trial: int, sigma: float):
    base = SharedSeed.from_int(cfg.seed)
    x = gen_clients(cfg, SampleStream(base.derive("clients", trial)))
    mu = x.mean(axis=0)
    sp = sigma * sigma / cfg.n
    sq = cfg.C * cfg.C / cfg.d + sp
    log2k, bits, violations = [], [], 0
    if scheme == "uncompressed_gaussian":
        noise = SampleStream(base.derive("noise", e_idx, trial)).isotropic_gaussian(cfg.d, sp, cfg.n)
        z = x + noise
    else:
        params = PprParams(cfg.alpha)
        z = np.empty_like(x)
        for i in range(cfg.n):
            shared = base.derive("shared", scheme, e_idx, b_idx, trial, i)
            local = SampleStream(base.derive("local", scheme, e_idx, b_idx, trial, i))
            if scheme == "ppr_gaussian":
                prop = GaussianProposalSpec(sq, cfg.d)
                res = encode(params, prop.proposal(), gaussian_target(GaussianMechSpec(x[i], sp), prop, cfg.tail_mass),
                             shared, local)
                z[i] = decode(prop.proposal(), res.k, shared)
                results = [res]
            else:
                sc = SlicedConfig(cfg.chunk_dim, cfg.d)
                results = sliced_encode(x[i], gaussian_chunk_factory(sp, sq, cfg.tail_mass), sc, params, shared, local)
                z[i] = sliced_decode([r.k for r in results],
                                     lambda m: GaussianProposalSpec(sq, m).proposal(), sc, shared)
            log2k.append(sum(math.log2(r.k) for r in results))
            bits.append(sum(elias_delta_length(r.k) for r in results))
            violations += sum(r.bound_violations for r in results)
    err = z.mean(axis=0) - mu
    return err, log2k, bits, violations


def run_dme(cfg: DmeConfig) -> list[ExperimentRecord]:
    records = []
    C = cfg.C
    for e_idx, eps in enumerate(cfg.epsilon_grid):
        for scheme in cfg.schemes:
            budgets = [math.inf] if scheme == "uncompressed_gaussian" else cfg.bit_budgets
            for b_idx, budget in enumerate(budgets):
                chunk = cfg.chunk_dim if scheme == "sliced_ppr" else None
                eps_used = budget_search(eps, cfg.delta, C, cfg.n, cfg.d, cfg.alpha, budget, chunk)
                sigma = gaussian_sigma_for_dp(C, PrivacyBudget(eps_used, cfg.delta))
                start = time.perf_counter()
                out = _map(lambda t: _dme_trial(cfg, scheme, e_idx, b_idx, t, sigma), range(cfg.trials))
                elapsed = time.perf_counter() - start if cfg.record_timing else 0.0
                errors = np.array([o[0] for o in out])
                sq_err = (errors ** 2).sum(axis=1)
                if scheme == "uncompressed_gaussian":
                    bits_used, mean_log2k = float(FLOAT_BITS * cfg.d), None
                else:
                    bits_used = float(np.mean([b for o in out for b in o[2]]))
                    mean_log2k = float(np.mean([v for o in out for v in o[1]]))
                extra = {
                    "epsilon_used": eps_used, "sigma": sigma, "C": C, "bit_budget": budget,
                    "sq_errors": sq_err, "errors": errors, "mean_log2_k": mean_log2k,
                    "bound_violations": int(sum(o[3] for o in out)),
                    "theory_mse": sigma * sigma * cfg.d / cfg.n ** 2,
                    "comm_bound": None if scheme == "uncompressed_gaussian"
                    else dme_comm_bound(C, cfg.n, cfg.d, sigma, cfg.alpha, chunk),
                }
                records.append(ExperimentRecord(scheme, eps, bits_used, float(sq_err.mean()),
                                                elapsed, cfg.trials, extra))
    return records


# Metric privacy: PPR-Laplace against discrete Laplace ---------------------

@dataclass
class LaplaceExpConfig:
    d: int = 10
    C: float = 10.0
    epsilon_grid: list = field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0])
    bit_budgets: list = field(default_factory=lambda: [40, 60, 80])
    alpha: float = 2.0
    trials: int = 5000
    seed: int = 0
    record_timing: bool = True

    def __post_init__(self):
        if self.d < 1 or self.trials < 1 or not self.C > 0:
            raise ValueError("need d, trials >= 1 and C > 0")

    @classmethod
    def paper_scale(cls, **overrides) -> "LaplaceExpConfig":
        base = dict(d=500, C=10000.0, epsilon_grid=[0.5, 1.0, 2.0, 4.0, 8.0],
                    bit_budgets=[500, 1000, 1500])
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, data: dict) -> "LaplaceExpConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


def uniform_in_ball(stream: SampleStream, d: int, C: float) -> np.ndarray:
    direction = stream.sphere(d, 1.0)[0]
    return direction * C * stream.uniform(1)[0] ** (1.0 / d)


def run_laplace_experiment(cfg: LaplaceExpConfig) -> list[ExperimentRecord]:
    """PPR-Laplace MSE from its closed form (the output law is exact) and bits
    from the size bound; discrete Laplace by Monte Carlo at the largest step
    that fits each budget."""
    records = []
    base = SharedSeed.from_int(cfg.seed)
    d = cfg.d
    for e_idx, eps in enumerate(cfg.epsilon_grid):
        for b_idx, budget in enumerate(cfg.bit_budgets):
            ppr_bits = comm_bound_laplace(cfg.C, d, eps, cfg.alpha)
            records.append(ExperimentRecord(
                "ppr_laplace", eps, ppr_bits, d * (d + 1) / eps ** 2, 0.0, 0,
                {"bit_budget": budget, "fits_budget": ppr_bits <= budget, "closed_form": True}))

            start = time.perf_counter()
            step = discrete_laplace_step(cfg.C, d, budget)
            dl = DiscreteLaplaceConfig(eps, cfg.C, d, step)
            bits = discrete_laplace_bits(dl)
            errs = np.empty((cfg.trials, d))
            for t in range(cfg.trials):
                xs = SampleStream(base.derive("laplace-x", e_idx, b_idx, t))
                x = uniform_in_ball(xs, d, cfg.C)
                z, _ = discrete_laplace_baseline(x, dl, SampleStream(base.derive("laplace-noise", e_idx, b_idx, t)))
                errs[t] = z - x
            sq = (errs ** 2).sum(axis=1)
            elapsed = time.perf_counter() - start if cfg.record_timing else 0.0
            records.append(ExperimentRecord(
                "discrete_laplace", eps, float(bits), float(sq.mean()), elapsed, cfg.trials,
                {"bit_budget": budget, "step": step, "sq_errors": sq, "errors": errs,
                 "cv_of_mean": float(sq.std(ddof=1) / math.sqrt(cfg.trials) / sq.mean())}))
    return records


def laplace_ppr_samples(x, epsilon: float, C: float, alpha: float, count: int, seed: int = 0,
                        n_points: int | None = None) -> tuple[np.ndarray, list]:
    """Decoded outputs of truncated PPR simulating the Laplace mechanism at ``x``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    d = x.size
    prop = GaussianProposalSpec(laplace_proposal_variance(C, d, epsilon), d)
    target = laplace_target(LaplaceMechSpec(x, epsilon, C), prop)
    n_points = n_points or target.metadata["n_points"]
    base = SharedSeed.from_int(seed)
    out = np.empty((count, d))
    results = []
    for t in range(count):
        shared = base.derive("laplace-shared", t)
        res = encode_truncated(PprParams(alpha), prop.proposal(), target, shared,
                               SampleStream(base.derive("laplace-local", t)), n_points)
        out[t] = decode(prop.proposal(), res.k, shared)
        results.append(res)
    return out, results


def laplace_direct_samples(x, epsilon: float, count: int, seed: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    stream = SampleStream(SharedSeed.from_int(seed).derive("laplace-direct"))
    return x + sample_laplace_noise(stream, x.size, epsilon, count)


# Timing -------------------------------------------------------------------

@dataclass
class TimingConfig:
    chunk_dims: list = field(default_factory=lambda: [10, 20, 40])
    trials: int = 100
    n: int = 500
    sigma_tilde: float = 1.0917
    bernoulli_p: float = 0.8
    alpha: float = 2.0
    total_dim: int = 1000
    tail_mass: float | None = 1e-12
    seed: int = 0

    def __post_init__(self):
        if self.trials < 2:
            raise ValueError("timing needs at least 2 trials")


@dataclass
class TimingRecord:
    chunk_dim: int
    mean_seconds: float
    stderr_seconds: float
    trials: int
    mean_points: float  # density-ratio evaluations per encode
    extrapolated_vector_seconds: float


def run_timing(cfg: TimingConfig) -> list[TimingRecord]:
    """Per-chunk encode time for one client at noise N(0, n sigma~^2 I)."""
    sp = cfg.n * cfg.sigma_tilde ** 2
    sq = 1.0 + sp  # C^2/d = 1 for +-1 data
    base = SharedSeed.from_int(cfg.seed)
    params = PprParams(cfg.alpha)
    out = []
    for dc in cfg.chunk_dims:
        prop = GaussianProposalSpec(sq, dc)
        # untimed warm-up so one-off import and compile costs stay out of the figures
        SampleStream(base).raw_at([0])
        encode(params, prop.proposal(), gaussian_target(GaussianMechSpec(np.ones(dc), sp), prop, cfg.tail_mass),
               base.derive("timing-warmup", dc), SampleStream(base.derive("timing-warmup-local", dc)))
        times, pts = [], []
        for t in range(cfg.trials):
            u = SampleStream(base.derive("timing-x", dc, t)).uniform(dc)
            xc = np.where(u < cfg.bernoulli_p, 1.0, -1.0)
            target = gaussian_target(GaussianMechSpec(xc, sp), prop, cfg.tail_mass)
            start = time.perf_counter()
            res = encode(params, prop.proposal(), target, base.derive("timing-shared", dc, t),
                         SampleStream(base.derive("timing-local", dc, t)))
            times.append(time.perf_counter() - start)
            pts.append(res.metadata["ratio_evaluations"])
        times = np.array(times)
        mean = float(times.mean())
        out.append(TimingRecord(dc, mean, float(times.std(ddof=1) / math.sqrt(cfg.trials)), cfg.trials,
                                float(np.mean(pts)), math.ceil(cfg.total_dim / dc) * mean))
    return out


# CSV ----------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v)) if math.isfinite(float(v)) else str(float(v))


def write_csv(records, path, metadata: dict | None = None):
    """Write records; ``metadata`` (if any) goes to ``<path>.meta.json``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in records:
            w.writerow([r.scheme, _fmt(r.epsilon), _fmt(r.bits_used), _fmt(r.mse),
                        _fmt(r.wall_time_seconds), _fmt(int(r.trials))])
    if metadata is not None:
        with open(str(path) + ".meta.json", "w") as fh:
            json.dump(metadata, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")


def _json_default(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def read_csv(path) -> list[ExperimentRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: line 1: empty file") from None
        missing = [c for c in CSV_FIELDS if c not in header]
        if missing:
            raise CsvFormatError(f"{path}: line 1: missing column(s) {', '.join(missing)}")
        pos = {c: header.index(c) for c in CSV_FIELDS}
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                out.append(ExperimentRecord(
                    row[pos["scheme"]], float(row[pos["epsilon"]]), float(row[pos["bits_used"]]),
                    float(row[pos["mse"]]), float(row[pos["wall_time_seconds"]]), int(row[pos["trials"]])))
            except ValueError as exc:
                raise CsvFormatError(f"{path}: line {lineno}: {exc}") from None
    return out


def config_metadata(cfg) -> dict:
    meta = asdict(cfg)
    if isinstance(cfg, DmeConfig):
        meta["C"] = cfg.C
        meta["C_rule"] = "sqrt(d) unless clip is set"
        meta["noise_calibration"] = "sigma = C sqrt(2 ln(1.25/delta)) / eps; client noise N(0, sigma^2/n I)"
    return meta
