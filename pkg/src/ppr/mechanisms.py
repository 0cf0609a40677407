"""Concrete mechanisms expressed as (proposal, target) pairs for the encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import betainc
from scipy.stats import norm

from .core import (
    EncodeResult,
    PprParams,
    ProposalSpec,
    TargetSpec,
    decode,
    encode,
    encode_truncated,
)
from .rng import (
    SampleStream,
    SharedSeed,
    draws_for_gaussian,
    normals_from_uniforms,
    sphere_from_uniforms,
)

LAPLACE_DEFAULT_POINTS = 200_000


# Proposals ---------------------------------------------------------------

def gaussian_proposal(dimension: int, variance: float) -> ProposalSpec:
    if dimension < 1 or not variance > 0:
        raise ValueError("need dimension >= 1 and variance > 0")
    return ProposalSpec(
        dimension,
        draws_for_gaussian(dimension),
        lambda u, seed, starts: normals_from_uniforms(u, dimension) * math.sqrt(variance),
        {"type": "gaussian", "dimension": dimension, "variance": variance},
    )


def sphere_proposal(dimension: int, radius: float) -> ProposalSpec:
    if dimension < 1 or not radius > 0:
        raise ValueError("need dimension >= 1 and radius > 0")
    return ProposalSpec(
        dimension,
        draws_for_gaussian(dimension),
        lambda u, seed, starts: sphere_from_uniforms(u, dimension, radius, seed, starts),
        {"type": "sphere", "dimension": dimension, "radius": radius},
    )


def proposal_from_dict(desc: dict) -> ProposalSpec:
    kind = desc.get("type")
    if kind == "gaussian":
        return gaussian_proposal(int(desc["dimension"]), float(desc["variance"]))
    if kind == "sphere":
        return sphere_proposal(int(desc["dimension"]), float(desc["radius"]))
    raise ValueError(f"unknown proposal type {kind!r}")


# Gaussian mechanism --------------------------------------------------------

@dataclass(frozen=True)
class GaussianMechSpec:
    center: np.ndarray
    noise_variance: float

    @property
    def dimension(self) -> int:
        return int(np.size(self.center))


@dataclass(frozen=True)
class GaussianProposalSpec:
    variance: float
    dimension: int

    def proposal(self) -> ProposalSpec:
        return gaussian_proposal(self.dimension, self.variance)


def gaussian_target(spec: GaussianMechSpec, proposal: GaussianProposalSpec,
                    tail_mass: float | None = None) -> TargetSpec:
    """log dP/dQ for P = N(x, s_p I) against Q = N(0, s_q I).

    The supremum sits at ``x * s_q / (s_q - s_p)``. When ``tail_mass`` is
    given, the bound is lowered to one that ``log r(Z)`` exceeds with
    Q-probability at most ``tail_mass``; the encoder then runs faster but
    is no longer exact on that event.
    """
    x = np.asarray(spec.center, dtype=float).reshape(-1)
    sp, sq, d = float(spec.noise_variance), float(proposal.variance), x.size
    if d != proposal.dimension:
        raise ValueError("dimension mismatch between mechanism and proposal")
    if not sq > sp:
        raise ValueError("proposal variance must exceed noise variance (ratio unbounded)")
    const = 0.5 * d * math.log(sq / sp)
    xx = float(x @ x)

    def log_ratio(z):
        z = np.asarray(z, dtype=float).reshape(-1, d)
        diff = z - x
        return const + np.einsum("ij,ij->i", z, z) / (2 * sq) - np.einsum("ij,ij->i", diff, diff) / (2 * sp)

    log_r_star = const + xx / (2 * (sq - sp))
    meta = {"exact_bound": True}
    if tail_mass is not None:
        # drop the negative quadratic term; z.x ~ N(0, s_q |x|^2) under Q
        t = float(norm.isf(tail_mass))
        relaxed = const - xx / (2 * sp) + t * math.sqrt(sq * xx) / sp
        if relaxed < log_r_star:
            log_r_star = relaxed
            meta = {"exact_bound": False, "tail_mass": tail_mass}
    return TargetSpec(log_ratio, log_r_star, meta)


def gaussian_kl(spec: GaussianMechSpec, proposal: GaussianProposalSpec) -> float:
    """D(N(x, s_p I) || N(0, s_q I)) in nats."""
    x = np.asarray(spec.center, dtype=float).reshape(-1)
    sp, sq, d = float(spec.noise_variance), float(proposal.variance), x.size
    return 0.5 * (d * sp / sq + float(x @ x) / sq - d + d * math.log(sq / sp))


def gaussian_kl_bound(C: float, n: int, d: int, sigma: float) -> float:
    """``(d/2) log2(C^2 n / (d sigma^2) + 1)`` bits, valid for every |x| <= C."""
    return 0.5 * d * math.log2(C * C * n / (d * sigma * sigma) + 1.0)


# Laplace mechanism (metric privacy) ---------------------------------------

@dataclass(frozen=True)
class LaplaceMechSpec:
    center: np.ndarray
    epsilon_metric: float
    ball_radius: float

    @property
    def dimension(self) -> int:
        return int(np.size(self.center))


def laplace_proposal_variance(C: float, d: int, epsilon: float) -> float:
    return C * C / d + (d + 1) / (epsilon * epsilon)


def laplace_log_normalizer(d: int) -> float:
    """log c_d with density c_d eps^d exp(-eps |z - x|)."""
    return math.lgamma(d / 2 + 1) - math.log(d) - math.lgamma(d) - 0.5 * d * math.log(math.pi)


def laplace_target(spec: LaplaceMechSpec, proposal: GaussianProposalSpec) -> TargetSpec:
    """Multivariate Laplace against a Gaussian proposal.

    The ratio is unbounded in the tails, so ``log_r_star`` is ``+inf`` and
    only ``encode_truncated`` accepts this target.
    """
    x = np.asarray(spec.center, dtype=float).reshape(-1)
    d, eps, C = x.size, float(spec.epsilon_metric), float(spec.ball_radius)
    if float(np.linalg.norm(x)) > C * (1 + 1e-12):
        raise ValueError("center lies outside the ball of radius C")
    sq = float(proposal.variance)
    want = laplace_proposal_variance(C, d, eps)
    if not math.isclose(sq, want, rel_tol=1e-9):
        raise ValueError(f"proposal variance must be C^2/d + (d+1)/eps^2 = {want}")
    log_p0 = laplace_log_normalizer(d) + d * math.log(eps)
    log_q0 = -0.5 * d * math.log(2 * math.pi * sq)

    def log_ratio(z):
        z = np.asarray(z, dtype=float).reshape(-1, d)
        dist = np.linalg.norm(z - x, axis=1)
        return log_p0 - eps * dist - log_q0 + np.einsum("ij,ij->i", z, z) / (2 * sq)

    return TargetSpec(log_ratio, math.inf, {"truncated_only": True,
                                            "n_points": LAPLACE_DEFAULT_POINTS})


def sample_laplace_noise(stream: SampleStream, d: int, epsilon: float, count: int = 1) -> np.ndarray:
    """Rows with density proportional to exp(-eps |y|): Gamma(d, 1/eps) radius, uniform direction."""
    radius = stream.exponential(d * count).reshape(count, d).sum(axis=1) / epsilon
    return stream.sphere(d, 1.0, count) * radius[:, None]


# Spherical cap (privUnit-style) --------------------------------------------

@dataclass(frozen=True)
class CapMechSpec:
    direction: np.ndarray
    cap_threshold: float
    inside_prob: float
    sphere_radius: float


def cap_mass(d: int, threshold: float) -> float:
    """Uniform-sphere probability of {u : <u, e> >= threshold} in R^d."""
    if not -1.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (-1, 1)")
    if d == 1:
        return 0.5
    if d == 2:
        return math.acos(threshold) / math.pi
    half = 0.5 * float(betainc((d - 1) / 2, 0.5, 1.0 - threshold * threshold))
    return half if threshold >= 0 else 1.0 - half


def cap_target(spec: CapMechSpec) -> tuple[ProposalSpec, TargetSpec]:
    """Two-valued density ratio against the uniform sphere of radius ``sphere_radius``."""
    e = np.asarray(spec.direction, dtype=float).reshape(-1)
    d = e.size
    e = e / np.linalg.norm(e)
    gam, p = float(spec.cap_threshold), float(spec.inside_prob)
    if not 0.0 < p < 1.0:
        raise ValueError("inside_prob must lie in (0, 1)")
    a_in = cap_mass(d, gam)
    if not 0.0 < a_in < 1.0:
        raise ValueError("degenerate cap")
    log_in = math.log(p / a_in)
    log_out = math.log((1.0 - p) / (1.0 - a_in))

    def log_ratio(z):
        z = np.asarray(z, dtype=float).reshape(-1, d)
        cos = (z @ e) / np.linalg.norm(z, axis=1)
        return np.where(cos >= gam, log_in, log_out)

    target = TargetSpec(log_ratio, max(log_in, log_out), {"cap_mass": a_in})
    return sphere_proposal(d, spec.sphere_radius), target


# Sliced PPR ---------------------------------------------------------------

@dataclass(frozen=True)
class SlicedConfig:
    chunk_dim: int
    total_dim: int

    def __post_init__(self):
        if not 1 <= self.chunk_dim <= self.total_dim:
            raise ValueError("need 1 <= chunk_dim <= total_dim")

    def slices(self) -> list[slice]:
        return [slice(s, min(s + self.chunk_dim, self.total_dim))
                for s in range(0, self.total_dim, self.chunk_dim)]


ChunkFactory = Callable[[np.ndarray], tuple[ProposalSpec, TargetSpec]]


def chunk_seeds(shared: SharedSeed, local: SampleStream, cfg: SlicedConfig, j: int):
    n_chunks = len(cfg.slices())
    if n_chunks == 1:
        return shared, local
    return shared.derive("chunk", j), SampleStream(local.seed.derive("chunk", j))


def sliced_encode(x, factory: ChunkFactory, cfg: SlicedConfig, params: PprParams,
                  shared: SharedSeed, local: SampleStream,
                  truncated_points: int | None = None) -> list[EncodeResult]:
    """Encode each contiguous chunk of ``x`` with its own PPR instance.

    A single chunk uses ``shared``/``local`` unchanged, so it matches a
    plain ``encode`` call.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != cfg.total_dim:
        raise ValueError("vector length differs from total_dim")
    out = []
    for j, sl in enumerate(cfg.slices()):
        proposal, target = factory(x[sl])
        s, l = chunk_seeds(shared, local, cfg, j)
        if truncated_points is None:
            out.append(encode(params, proposal, target, s, l))
        else:
            out.append(encode_truncated(params, proposal, target, s, l, truncated_points))
    return out


def sliced_decode(ks, proposal_for: Callable[[int], ProposalSpec], cfg: SlicedConfig,
                  shared: SharedSeed) -> np.ndarray:
    """Inverse of ``sliced_encode``; needs only the proposal for each chunk length."""
    sl = cfg.slices()
    if len(ks) != len(sl):
        raise ValueError(f"expected {len(sl)} indices, got {len(ks)}")
    parts = []
    for j, (k, s) in enumerate(zip(ks, sl)):
        seed = shared if len(sl) == 1 else shared.derive("chunk", j)
        parts.append(decode(proposal_for(s.stop - s.start), int(k), seed))
    return np.concatenate(parts)


def gaussian_chunk_factory(noise_variance: float, proposal_variance: float,
                           tail_mass: float | None = None) -> ChunkFactory:
    def factory(xc):
        prop = GaussianProposalSpec(proposal_variance, xc.size)
        return prop.proposal(), gaussian_target(GaussianMechSpec(xc, noise_variance), prop, tail_mass)
    return factory


# Discrete Laplace baseline -------------------------------------------------

@dataclass(frozen=True)
class DiscreteLaplaceConfig:
    epsilon_metric: float
    ball_radius: float
    dimension: int
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")


def log2_ball_volume(d: int, C: float) -> float:
    return (0.5 * d * math.log(math.pi) - math.lgamma(d / 2 + 1) + d * math.log(C)) / math.log(2)


def discrete_laplace_bits(cfg: DiscreteLaplaceConfig) -> int:
    raw = log2_ball_volume(cfg.dimension, cfg.ball_radius) - cfg.dimension * math.log2(cfg.step)
    bits = math.ceil(raw - 1e-9)
    if bits <= 0:
        raise ValueError("step too large: quantizer needs no bits")
    return bits


def discrete_laplace_step(C: float, d: int, bits: float) -> float:
    """Largest step whose cell count fits in ``bits``."""
    return 2.0 ** ((log2_ball_volume(d, C) - bits) / d)


def discrete_laplace_baseline(x, cfg: DiscreteLaplaceConfig, local: SampleStream):
    """Laplace noise, projection onto the ball, per-coordinate rounding to the step grid."""
    x = np.asarray(x, dtype=float).reshape(-1)
    C = cfg.ball_radius
    if float(np.linalg.norm(x)) > C * (1 + 1e-12):
        raise ValueError("x lies outside the ball of radius C")
    bits = discrete_laplace_bits(cfg)
    z = x + sample_laplace_noise(local, x.size, cfg.epsilon_metric)[0]
    nz = float(np.linalg.norm(z))
    if nz > C:
        z = z * (C / nz)
    return cfg.step * np.round(z / cfg.step), bits
