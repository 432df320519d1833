import numpy as np
import pandas as pd

from errors import DomainError
from global_settings import RIESZ_CHECK_TOLERANCE
from grid_domain import ball_cells
from logging_functions import log_action
from matrix_builder import assemble
from trace_estimator import make_rng


class GridFunction:
    """
    Real values attached to the cells of a grid domain, in the domain's cell order.

    Attributes:
        domain (GridDomain): Carrier of the function.
        values (numpy.ndarray): One value per cell.
    """

    def __init__(self, domain, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (domain.n_cells,):
            raise DomainError(f"expected {domain.n_cells} values, got shape {values.shape}")
        values.flags.writeable = False
        self.domain = domain
        self.values = values


def distance_order(domain):
    """Cells sorted by distance of their centers from the origin, ties lexicographic."""
    dist2 = np.sum((2 * domain.indices + 1) ** 2, axis=1)
    keys = tuple(domain.indices[:, j] for j in reversed(range(domain.dim))) + (dist2,)
    return np.lexsort(keys)


def rearrange_function(f):
    """
    Symmetric-decreasing rearrangement on the lattice.

    The target carrier is the set of the n cells nearest to the origin
    (n = cell count of f, same h); the values of f, sorted descending, are
    laid out from the center outward.

    Raises:
        DomainError: If f has a negative value.
    """
    if np.any(f.values < 0):
        raise DomainError("rearrangement is defined for nonnegative functions only")
    target, ordered = ball_cells(f.domain.dim, f.domain.h, f.domain.n_cells)
    descending = np.sort(f.values, kind="stable")[::-1]
    # target.indices is the lexicographic sort of `ordered`
    lexicographic = np.lexsort(tuple(ordered[:, j] for j in reversed(range(f.domain.dim))))
    return GridFunction(target, descending[lexicographic])


def layer_cake(values):
    """
    Rebuild nonnegative values from their super-level sets.

    Returns:
        tuple[numpy.ndarray, list[tuple[float, numpy.ndarray]]]: The
        reconstruction sum_k (t_k - t_{k-1}) * chi{u >= t_k} and the list of
        (t_k, level-set mask) pairs, t_k ascending over the positive values.
    """
    values = np.asarray(values, dtype=float)
    levels = np.unique(values[values > 0])
    rebuilt = np.zeros_like(values)
    sets = []
    previous = 0.0
    for t in levels:
        mask = values >= t
        rebuilt += (t - previous) * mask
        sets.append((float(t), mask))
        previous = t
    return rebuilt, sets


def level_sets_nested(f, f_star):
    """
    Check that every super-level set of f_star is a distance-order prefix of
    the same size as the matching super-level set of f.
    """
    order = distance_order(f_star.domain)
    for t, mask in layer_cake(f_star.values)[1]:
        count = int(mask.sum())
        if count != int(np.sum(f.values >= t)):
            return False
        if not np.all(mask[order[:count]]):
            return False
    return True


def quadratic_form(params, f, matrix=None):
    """
    Discrete double integral of f(x) eps(|x - y|) f(y), self term on the diagonal.

    Args:
        params (RieszParams): Kernel parameters.
        f (GridFunction): Function to evaluate.
        matrix (OperatorMatrix, optional): Pre-assembled matrix of f.domain.

    Returns:
        float: v^T A v.
    """
    if matrix is None:
        matrix = assemble(params, f.domain)
    return float(f.values @ matrix.entries @ f.values)


class RieszCheckReport:
    def __init__(self, q, q_star, seed=None):
        self.q = q
        self.q_star = q_star
        self.seed = seed
        self.tolerance = RIESZ_CHECK_TOLERANCE * max(abs(q), abs(q_star))

    @property
    def gap(self):
        return self.q_star - self.q

    @property
    def passed(self):
        return self.q_star >= self.q - self.tolerance

    def to_dict(self):
        return {
            "seed": self.seed,
            "Q": self.q,
            "Q_star": self.q_star,
            "gap": self.gap,
            "pass": self.passed,
        }


def riesz_rearrangement_check(params, f, matrix=None, matrix_star=None, seed=None):
    """Compare the quadratic form of f with that of its rearrangement."""
    f_star = rearrange_function(f)
    q = quadratic_form(params, f, matrix)
    q_star = quadratic_form(params, f_star, matrix_star)
    report = RieszCheckReport(q, q_star, seed)
    if not report.passed:
        log_action(f"Riesz surrogate failed: {report.to_dict()}", action_type="VERDICT")
    return report


def riesz_sweep(params, domain, n_functions, seed):
    """
    Riesz check over seeded random nonnegative functions on one domain.

    Function i draws uniform [0, 1) values from the stream (seed, i).

    Returns:
        pd.DataFrame: Columns seed, stream, Q, Q_star, gap, pass.
    """
    matrix = assemble(params, domain)
    target, _ = ball_cells(domain.dim, domain.h, domain.n_cells)
    matrix_star = assemble(params, target)
    rows = []
    for stream in range(n_functions):
        rng = make_rng(seed, stream)
        f = GridFunction(domain, rng.random(domain.n_cells))
        report = riesz_rearrangement_check(params, f, matrix, matrix_star, seed)
        row = report.to_dict()
        row["stream"] = stream
        rows.append(row)
    df = pd.DataFrame(rows, columns=["seed", "stream", "Q", "Q_star", "gap", "pass"])
    log_action(
        f"Riesz sweep on {domain.fingerprint}: {int(df['pass'].sum())}/{n_functions} passed",
        action_type="REARRANGE",
    )
    return df
