import json
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from errors import DivergenceError, DomainError
from global_settings import MIN_MC_SAMPLES, SIGNIFICANCE_FACTOR
from grid_domain import ball_rearrangement, rasterize
from logging_functions import log_action

CHUNK_CYCLES = 100_000
STREAM_DOMAIN = 0
STREAM_BALL = 1


def make_rng(seed, stream=0):
    """
    Seedable generator: PCG64 fed by SeedSequence([seed, stream]).

    PCG64 and SeedSequence are specified bit-for-bit by numpy, so one
    (seed, stream) pair gives the same stream on every platform.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))


def cycle_variance_finite(params, s):
    """
    Whether the cycle product has a finite second moment.

    Its square is a cycle of s kernels |x|^(2(alpha - d)), a Riesz kernel of
    order 2 alpha - d: locally integrable only for 2 alpha > d, and the cyclic
    integral of s of them converges only for s (2 alpha - d) > d.
    """
    order = 2.0 * params.alpha - params.dim
    return order > 0 and s * order > params.dim


def _sample_points(domain, rng, size):
    cells = rng.integers(0, domain.n_cells, size=size)
    offsets = rng.random(size=(size, domain.dim))
    return domain.origin + domain.h * (domain.indices[cells] + offsets)


def sample_point(domain, rng):
    """Uniform point of the union of cells: a uniform cell, then a uniform point inside it."""
    return _sample_points(domain, rng, 1)[0]


class TraceMCEstimate:
    """
    Monte Carlo estimate of the cyclic trace integral over Omega^s.

    Attributes:
        s (int): Cycle length.
        estimate (float): Estimated trace, units length^(alpha * s).
        std_error (float): Standard error of the estimate.
        n_samples (int): Number of cycles drawn.
        seed (int): Base seed.
        stream (int): Stream id derived from the seed.
        lanes (int): Number of independent lanes (part of the reproducibility key).
        rejections (int): Cycles redrawn because two consecutive points coincided.
        domain_hash (str): Fingerprint of the sampled domain.
        finite_variance (bool): Whether the per-cycle product has finite variance.
    """

    def __init__(self, s, estimate, std_error, n_samples, seed, stream, lanes, rejections,
                 domain_hash, finite_variance):
        self.s = s
        self.estimate = estimate
        self.std_error = std_error
        self.n_samples = n_samples
        self.seed = seed
        self.stream = stream
        self.lanes = lanes
        self.rejections = rejections
        self.domain_hash = domain_hash
        self.finite_variance = finite_variance

    def scaled(self, factor):
        return TraceMCEstimate(
            self.s, self.estimate * factor, self.std_error * factor, self.n_samples, self.seed,
            self.stream, self.lanes, self.rejections, self.domain_hash, self.finite_variance,
        )

    def to_dict(self):
        return {
            "s": self.s,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "stream": self.stream,
            "lanes": self.lanes,
            "rejections": self.rejections,
            "domain_hash": self.domain_hash,
            "finite_variance": self.finite_variance,
        }

    def save_to_file(self, filename):
        with open(filename, "w") as file:
            json.dump(self.to_dict(), file, indent=4)


def _combine(left, right):
    # (count, mean, sum of squared deviations), Chan et al. pairwise update
    n_a, mean_a, m2_a = left
    n_b, mean_b, m2_b = right
    n = n_a + n_b
    delta = mean_b - mean_a
    return n, mean_a + delta * n_b / n, m2_a + m2_b + delta * delta * n_a * n_b / n


def _cycle_products(params, domain, s, rng, size):
    points = _sample_points(domain, rng, size * s).reshape(size, s, domain.dim)
    rejections = 0
    while True:
        gaps = np.linalg.norm(points - np.roll(points, -1, axis=1), axis=2)
        clash = np.any(gaps == 0.0, axis=1)
        if not clash.any():
            break
        k = int(clash.sum())
        rejections += k
        points[clash] = _sample_points(domain, rng, k * s).reshape(k, s, domain.dim)
    log_products = s * math.log(params.c) + (params.alpha - params.dim) * np.sum(np.log(gaps), axis=1)
    return np.exp(log_products), rejections


def _run_lane(params, domain, s, size, seed_sequence):
    rng = np.random.Generator(np.random.PCG64(seed_sequence))
    stats = (0, 0.0, 0.0)
    rejections = 0
    remaining = size
    while remaining > 0:
        chunk = min(CHUNK_CYCLES, remaining)
        products, rejected = _cycle_products(params, domain, s, rng, chunk)
        mean = float(products.mean())
        stats = _combine(stats, (chunk, mean, float(np.sum((products - mean) ** 2))))
        rejections += rejected
        remaining -= chunk
    return stats, rejections


def trace_cycle_mc(params, domain, s, n_samples, seed, stream=STREAM_DOMAIN, lanes=1, threads=1):
    """
    Estimate sum_j lambda_j^s as the integral over Omega^s of the kernel cycle product.

    Cycles of s iid uniform points are drawn on `lanes` independent streams
    (SeedSequence([seed, stream]).spawn(lanes)); products are formed in log
    space; lane statistics are merged in lane order, so the result is
    bit-identical for a fixed (seed, stream, lanes, n_samples).

    Args:
        params (RieszParams): Kernel parameters.
        domain (GridDomain): Sampling domain.
        s (int): Cycle length, an integer > p0 = d / alpha.
        n_samples (int): Number of cycles (>= MIN_MC_SAMPLES).
        seed (int): Base seed.
        stream (int): Stream id for paired runs.
        lanes (int): Number of lanes.
        threads (int): Worker threads used to run the lanes.

    Returns:
        TraceMCEstimate: Estimate scaled by |Omega|^s with its standard error.

    Raises:
        DomainError: If s is not an integer >= 2 or n_samples is too small.
        DivergenceError: If s <= p0.
    """
    if int(s) != s or s < 2:
        raise DomainError(f"cycle length must be an integer >= 2, got {s}")
    s = int(s)
    if not s > params.p0:
        raise DivergenceError(f"cyclic trace integral diverges for s <= p0 = {params.p0:g}, got s={s}")
    if n_samples < MIN_MC_SAMPLES:
        raise DomainError(f"need at least {MIN_MC_SAMPLES} samples, got {n_samples}")
    if lanes < 1:
        raise DomainError(f"lanes must be >= 1, got {lanes}")

    finite_variance = cycle_variance_finite(params, s)
    if not finite_variance:
        log_action(
            f"alpha={params.alpha}, d={params.dim}, s={s}: cycle products have infinite variance, "
            "std_error is indicative only",
            action_type="TRACE_MC",
        )
    sizes = [n_samples // lanes + (1 if i < n_samples % lanes else 0) for i in range(lanes)]
    children = np.random.SeedSequence([int(seed), int(stream)]).spawn(lanes)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(lambda job: _run_lane(params, domain, s, *job), zip(sizes, children)))

    stats = (0, 0.0, 0.0)
    rejections = 0
    for lane_stats, lane_rejections in results:
        if lane_stats[0]:
            stats = _combine(stats, lane_stats)
        rejections += lane_rejections
    count, mean, m2 = stats
    volume = domain.measure() ** s
    std_error = volume * math.sqrt(m2 / (count - 1)) / math.sqrt(count)
    estimate = TraceMCEstimate(
        s, volume * mean, std_error, n_samples, int(seed), int(stream), lanes, rejections,
        domain.fingerprint, finite_variance,
    )
    log_action(
        f"trace s={s} on {domain.fingerprint}: {estimate.estimate:.10g} +- {std_error:.3g} "
        f"(n={n_samples}, seed={seed}, stream={stream}, lanes={lanes}, rejections={rejections})",
        action_type="TRACE_MC",
    )
    return estimate


class BLLReport:
    """
    Paired estimates for a domain and its equal-measure ball.

    The ball estimate is normalized to the domain's measure by the dilation
    law (factor (|Omega| / |Omega*_raster|)^(alpha s / d)) before comparing.
    """

    def __init__(self, domain_estimate, ball_estimate, normalization, vacuous):
        self.domain_estimate = domain_estimate
        self.ball_estimate = ball_estimate
        self.normalization = normalization
        self.vacuous = vacuous

    @property
    def normalized_ball_estimate(self):
        return self.ball_estimate.scaled(self.normalization)

    @property
    def difference(self):
        return self.normalized_ball_estimate.estimate - self.domain_estimate.estimate

    @property
    def combined_error(self):
        return math.hypot(self.normalized_ball_estimate.std_error, self.domain_estimate.std_error)

    @property
    def holds(self):
        return self.difference > -SIGNIFICANCE_FACTOR * self.combined_error

    @property
    def significant(self):
        return self.difference > SIGNIFICANCE_FACTOR * self.combined_error

    def to_dict(self):
        return {
            "domain": self.domain_estimate.to_dict(),
            "ball": self.ball_estimate.to_dict(),
            "normalization": self.normalization,
            "difference": self.difference,
            "combined_error": self.combined_error,
            "holds": self.holds,
            "significant": self.significant,
            "vacuous": self.vacuous,
            "rule": f"ball - domain > -{SIGNIFICANCE_FACTOR:g} x combined std_error",
        }


def bll_compare(params, domain, s, n_samples, seed, lanes=1, threads=1):
    """
    Compare the cyclic trace of a domain with that of its ball rearrangement.

    The ball is rasterized at the same h; the two estimates use streams 0 and
    1 of the given seed so their noise is independent.

    Returns:
        BLLReport: Both estimates, the normalization and the 3-sigma flags.
    """
    ball_domain = rasterize(ball_rearrangement(domain), domain.h)
    vacuous = ball_domain.fingerprint == domain.fingerprint
    domain_estimate = trace_cycle_mc(params, domain, s, n_samples, seed, STREAM_DOMAIN, lanes, threads)
    ball_estimate = trace_cycle_mc(params, ball_domain, s, n_samples, seed, STREAM_BALL, lanes, threads)
    normalization = (domain.measure() / ball_domain.measure()) ** (params.alpha * s / params.dim)
    report = BLLReport(domain_estimate, ball_estimate, normalization, vacuous)
    log_action(
        f"BLL s={s}: ball - domain = {report.difference:.6g} +- {report.combined_error:.3g}, "
        f"holds={report.holds}, significant={report.significant}",
        action_type="VERDICT",
    )
    return report


def interval_frobenius_trace(params, length=1.0):
    """Exact sum of lambda_j^2 on an interval: c^2 L^(2a) 2 / ((2a - 1) 2a), for a > 1/2."""
    if params.dim != 1:
        raise DomainError("closed-form Hilbert-Schmidt trace is for intervals (dim 1)")
    a = params.alpha
    if not a > 0.5:
        raise DivergenceError(f"Hilbert-Schmidt norm on an interval is infinite for alpha <= 1/2, got {a}")
    return params.c**2 * length ** (2 * a) * 2.0 / ((2 * a - 1.0) * 2 * a)


def eigensum(spectrum, s):
    return float(np.sum(np.clip(spectrum.eigenvalues, 0.0, None) ** s))
