import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from errors import DivergenceError, DomainError, SingularityError, UnsupportedError
from logging_functions import log_action

PROBE_TOLERANCE_FLOOR = 1e-6


def riesz_constant(alpha, dim):
    """
    Normalizing constant of the Riesz kernel, 2^(a-d) pi^(-d/2) G(a/2) / G((d-a)/2).

    Args:
        alpha (float): Order of the potential, 0 < alpha < dim.
        dim (int): Ambient dimension.

    Returns:
        float: The constant c_{alpha,d} (> 0).

    Raises:
        DomainError: If alpha <= 0 or alpha >= dim.
    """
    if not alpha > 0:
        raise DomainError(f"alpha must be > 0, got {alpha}")
    if not alpha < dim:
        raise DomainError(f"alpha must be < dim = {dim}, got {alpha}")
    return float(
        2.0 ** (alpha - dim)
        * math.pi ** (-dim / 2.0)
        * special.gamma(alpha / 2.0)
        / special.gamma((dim - alpha) / 2.0)
    )


def ball_volume(dim):
    return float(math.pi ** (dim / 2.0) / special.gamma(dim / 2.0 + 1.0))


def sphere_area(dim):
    # surface measure of the unit sphere in R^dim (2 for dim = 1)
    return float(2.0 * math.pi ** (dim / 2.0) / special.gamma(dim / 2.0))


@dataclass(frozen=True)
class RieszParams:
    """
    Order and dimension of a Riesz potential, with its kernel constant.

    Attributes:
        alpha (float): Order of the potential.
        dim (int): Ambient dimension.
        constant (float | None): Optional override of c (e.g. 1.0 for
            convention-independent runs). None uses riesz_constant.
        c (float): Kernel constant actually used, computed at construction.
    """

    alpha: float
    dim: int
    constant: float = None
    c: float = field(init=False)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise DomainError(f"dim must be an integer >= 1, got {self.dim}")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "dim", int(self.dim))
        c = riesz_constant(self.alpha, self.dim)
        if self.constant is not None:
            if not self.constant > 0:
                raise DomainError(f"constant override must be > 0, got {self.constant}")
            c = float(self.constant)
        object.__setattr__(self, "c", c)

    @property
    def p0(self):
        return self.dim / self.alpha

    @property
    def theta(self):
        return self.alpha / self.dim

    def to_dict(self):
        return {"alpha": self.alpha, "dim": self.dim, "constant": self.constant, "c": self.c}


def kernel_eval(params, r):
    """
    Evaluate c * r^(alpha - d) for scalar or array r > 0.

    Raises:
        SingularityError: If any r <= 0; coincident points need the self-term rule.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(~(r_arr > 0)):
        raise SingularityError("Riesz kernel diverges at r <= 0; use the self-term rule")
    value = params.c * np.power(r_arr, params.alpha - params.dim)
    if np.ndim(r) == 0:
        return float(value)
    return value


def newton_params(m, dim):
    """Polyharmonic Newton potential of order m: the alpha = 2m Riesz potential."""
    if int(m) != m or m < 1:
        raise DomainError(f"m must be an integer >= 1, got {m}")
    if not 2 * m < dim:
        raise DomainError(f"Newton potential needs 2m < dim, got m={m}, dim={dim}")
    return RieszParams(alpha=2.0 * m, dim=dim)


class ProbeResult:
    """
    Outcome of convolution_ratio_probe.

    Attributes:
        alpha1, alpha2 (float): Orders of the convolved kernels.
        dim (int): Dimension.
        rows (list[tuple[float, float]]): (r, ratio) pairs.
        tolerance (float): Relative quadrature tolerance the ratios are held to.
        tail_bound (float): Largest analytic bound on the truncated tails,
            relative to the integral (the tails are integrated, this is the
            size of what was integrated beyond the truncation radius).
    """

    def __init__(self, alpha1, alpha2, dim, rows, tolerance, tail_bound):
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.dim = dim
        self.rows = rows
        self.tolerance = tolerance
        self.tail_bound = tail_bound

    @property
    def ratios(self):
        return [ratio for _, ratio in self.rows]

    @property
    def spread(self):
        ratios = np.array(self.ratios)
        return float((ratios.max() - ratios.min()) / abs(ratios.mean()))

    def to_dict(self):
        return {
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "dim": self.dim,
            "rows": [{"r": r, "ratio": ratio} for r, ratio in self.rows],
            "tolerance": self.tolerance,
            "spread": self.spread,
            "tail_bound": self.tail_bound,
        }


def _quad(func, a, b, limit, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return integrate.quad(func, a, b, limit=limit, epsabs=0.0, epsrel=1e-10, **kwargs)


def _convolution_1d(k1, k2, r, radius, limit):
    a1, a2 = k1.alpha, k2.alpha
    cc = k1.c * k2.c
    # x = 0, y = r; power-law factors handled by algebraic endpoint weights
    pieces = [
        _quad(lambda z: cc, 0.0, r, limit, weight="alg", wvar=(a1 - 1.0, a2 - 1.0)),
        _quad(lambda z: cc * z ** (a1 - 1.0), r, radius, limit, weight="alg", wvar=(a2 - 1.0, 0.0)),
        _quad(lambda z: cc * (r - z) ** (a2 - 1.0), -radius, 0.0, limit, weight="alg", wvar=(0.0, a1 - 1.0)),
        _quad(lambda z: cc * z ** (a1 - 1.0) * (z - r) ** (a2 - 1.0), radius, np.inf, limit),
        _quad(lambda z: cc * (-z) ** (a1 - 1.0) * (r - z) ** (a2 - 1.0), -np.inf, -radius, limit),
    ]
    value = sum(p[0] for p in pieces)
    error = sum(p[1] for p in pieces)
    tail = 2.0 * cc * (radius - r) ** (a1 + a2 - 1.0) / (1.0 - a1 - a2)
    return value, error, tail


def _convolution_2d(k1, k2, r, radius, limit):
    a1, a2 = k1.alpha, k2.alpha
    worst = 0.0

    def angular(rho):
        # integral over the circle |z| = rho of eps2(|z - y|), |y| = r
        nonlocal worst

        def integrand(phi):
            dist2 = (rho - r) ** 2 + 4.0 * rho * r * math.sin(phi / 2.0) ** 2
            return dist2 ** ((a2 - 2.0) / 2.0)

        # peak at phi = 0 of width |rho - r| / sqrt(rho r), power-law decay after it
        width = abs(rho - r) / math.sqrt(rho * r)
        breaks = [float(p) for p in width * np.logspace(0.0, 8.0, 9) if 0.0 < p < math.pi]
        value, error = _quad(integrand, 0.0, math.pi, limit, points=breaks or None)
        worst = max(worst, error / value)
        return 2.0 * k2.c * value

    def radial(rho):
        return rho * k1.c * rho ** (a1 - 2.0) * angular(rho)

    inner = _quad(radial, 0.0, radius, limit, points=[r])
    outer = _quad(radial, radius, np.inf, limit)
    tail = 2.0 * math.pi * k1.c * k2.c * (radius - r) ** (a1 + a2 - 2.0) / (2.0 - a1 - a2)
    value = inner[0] + outer[0]
    # every angular value is within `worst` relative and the integrand is positive
    return value, inner[1] + outer[1] + worst * value, tail


def convolution_ratio_probe(alpha1, alpha2, dim, r_values, truncation_radius, quad_points=200):
    """
    Measure the constant in eps_{a1} * eps_{a2} = K * eps_{a1+a2} numerically.

    For each r the full-space convolution at |x - y| = r is integrated by
    adaptive quadrature split at the two singular points (algebraic endpoint
    weights in 1D, polar coordinates about x in 2D), and divided by
    eps_{a1+a2,d}(r). Homogeneity makes the exact ratio independent of r.

    Args:
        alpha1 (float): Order of the first kernel.
        alpha2 (float): Order of the second kernel.
        dim (int): 1 or 2.
        r_values (list[float]): Positive separations.
        truncation_radius (float): Split point between the near field and the
            integrated tail; must be at least 16 * max(r_values).
        quad_points (int): Subinterval limit for each adaptive quadrature.

    Returns:
        ProbeResult: (r, ratio) rows with the tolerance they agree to.

    Raises:
        DivergenceError: If alpha1 + alpha2 >= dim.
        UnsupportedError: If dim is not 1 or 2.
        DomainError: For non-positive orders, separations or a short radius.
    """
    if not (alpha1 > 0 and alpha2 > 0):
        raise DomainError(f"orders must be positive, got {alpha1}, {alpha2}")
    if not alpha1 + alpha2 < dim:
        raise DivergenceError(
            f"convolution diverges unless alpha1 + alpha2 < dim = {dim}, got {alpha1 + alpha2}"
        )
    if dim not in (1, 2):
        raise UnsupportedError(f"convolution probe supports dim 1 or 2, got {dim}")
    if not r_values or min(r_values) <= 0:
        raise DomainError("r_values must be a non-empty list of positive separations")
    if truncation_radius < 16 * max(r_values):
        raise DomainError(
            f"truncation_radius must be >= 16 * max(r) = {16 * max(r_values)}, got {truncation_radius}"
        )

    k1 = RieszParams(alpha1, dim)
    k2 = RieszParams(alpha2, dim)
    k12 = RieszParams(alpha1 + alpha2, dim)
    convolve = _convolution_1d if dim == 1 else _convolution_2d

    rows = []
    budget = 0.0
    tail_bound = 0.0
    for r in r_values:
        value, error, tail = convolve(k1, k2, float(r), float(truncation_radius), quad_points)
        rows.append((float(r), value / kernel_eval(k12, r)))
        budget = max(budget, error / abs(value))
        tail_bound = max(tail_bound, tail / abs(value))
    result = ProbeResult(alpha1, alpha2, dim, rows, max(budget, PROBE_TOLERANCE_FLOOR), tail_bound)
    log_action(
        f"convolution probe a1={alpha1} a2={alpha2} d={dim}: spread {result.spread:.3e}, "
        f"tolerance {result.tolerance:.1e}",
        action_type="PROBE",
    )
    return result


def convolution_ratio_exact(alpha1, alpha2, dim):
    """
    Closed-form ratio in any dimension from the composition of Riesz potentials.

    The integral of |x - z|^(a-d) |z - y|^(b-d) over z is
    pi^(d/2) G(a/2) G(b/2) G((d-a-b)/2) / (G((d-a)/2) G((d-b)/2) G((a+b)/2)) |x - y|^(a+b-d).
    """
    a, b, d = alpha1, alpha2, dim
    if not (a > 0 and b > 0):
        raise DomainError(f"orders must be positive, got {a}, {b}")
    if not a + b < d:
        raise DivergenceError(f"convolution diverges unless alpha1 + alpha2 < dim = {d}, got {a + b}")
    log_integral = (
        0.5 * d * math.log(math.pi)
        + special.gammaln(a / 2) + special.gammaln(b / 2) + special.gammaln((d - a - b) / 2)
        - special.gammaln((d - a) / 2) - special.gammaln((d - b) / 2) - special.gammaln((a + b) / 2)
    )
    return riesz_constant(a, d) * riesz_constant(b, d) * math.exp(log_integral) / riesz_constant(a + b, d)


def convolution_ratio_exact_1d(alpha1, alpha2):
    """Closed-form 1D ratio through Beta functions, used as a reference for the probe."""
    a, b = alpha1, alpha2
    if not a + b < 1:
        raise DivergenceError(f"convolution diverges unless alpha1 + alpha2 < 1, got {a + b}")
    integral = special.beta(a, 1 - a - b) + special.beta(b, 1 - a - b) + special.beta(a, b)
    return riesz_constant(a, 1) * riesz_constant(b, 1) * integral / riesz_constant(a + b, 1)
