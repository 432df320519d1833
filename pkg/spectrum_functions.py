import json
import math

import numpy as np
import pandas as pd
import scipy.linalg

from errors import DataError, DomainError, UsageError
from global_settings import NONNEGATIVITY_TOLERANCE, SIMPLICITY_TOLERANCE
from grid_domain import ball_of_measure, rasterize
from logging_functions import log_action
from matrix_builder import OperatorMatrix, assemble


class Spectrum:
    """
    Descending eigenvalues of a discretized Riesz potential, optionally with eigenvectors.

    Attributes:
        eigenvalues (numpy.ndarray): Descending, units length^alpha.
        eigenvectors (numpy.ndarray | None): Orthonormal columns aligned with
            eigenvalues; each column's largest-magnitude entry is positive.
        params (RieszParams | None): Kernel parameters of the source matrix.
        source (dict): Fingerprint of the source domain (h, n_cells, fingerprint).
    """

    def __init__(self, eigenvalues, eigenvectors=None, params=None, source=None):
        self.eigenvalues = np.asarray(eigenvalues, dtype=float)
        self.eigenvectors = eigenvectors
        self.params = params
        self.source = source or {}

    def __len__(self):
        return len(self.eigenvalues)

    @property
    def lambda1(self):
        return float(self.eigenvalues[0])

    @property
    def lambda2(self):
        return float(self.eigenvalues[1]) if len(self) > 1 else float("nan")

    def to_dict(self, envelope=None, jentsch=None):
        return {
            "params": self.params.to_dict() if self.params is not None else None,
            "domain_hash": self.source.get("fingerprint"),
            "h": self.source.get("h"),
            "eigenvalues": self.eigenvalues.tolist(),
            "envelope": envelope,
            "jentsch": jentsch.to_dict() if jentsch is not None else None,
        }

    def save_to_file(self, filename, envelope=None, jentsch=None):
        with open(filename, "w") as file:
            json.dump(self.to_dict(envelope, jentsch), file, indent=4)

    def save_to_csv(self, filename):
        df = pd.DataFrame(
            {
                "j": pd.Series(np.arange(1, len(self) + 1), dtype="int"),
                "eigenvalue": pd.Series(self.eigenvalues, dtype="float"),
            }
        )
        df.to_csv(filename, index=False, float_format="%.17g")


def eigen_sym(matrix, with_vectors=False):
    """
    Full dense decomposition of a symmetric matrix, eigenvalues descending.

    Args:
        matrix (OperatorMatrix | numpy.ndarray): Symmetric input.
        with_vectors (bool): Also return orthonormal eigenvectors.

    Returns:
        Spectrum: Deterministic for identical input (LAPACK syevr, no random start).

    Raises:
        DataError: If the matrix has non-finite entries or is not square.
    """
    if isinstance(matrix, OperatorMatrix):
        entries, params, source = matrix.entries, matrix.params, matrix.domain_ref
    else:
        entries, params, source = np.asarray(matrix, dtype=float), None, {}
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise DataError(f"expected a square matrix, got shape {entries.shape}")
    if not np.all(np.isfinite(entries)):
        raise DataError("matrix has non-finite entries")

    if with_vectors:
        values, vectors = scipy.linalg.eigh(entries)
        values, vectors = values[::-1], vectors[:, ::-1]
        pivots = np.argmax(np.abs(vectors), axis=0)
        signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
        vectors = vectors * np.where(signs == 0, 1.0, signs)
    else:
        values, vectors = scipy.linalg.eigh(entries, eigvals_only=True)[::-1], None
    log_action(
        f"eigendecomposition n={len(values)} lambda1={values[0]:.12g} vectors={with_vectors}",
        action_type="EIGEN",
    )
    return Spectrum(values.copy(), vectors, params, source)


class SchattenReport:
    def __init__(self, p, value, p0, below_threshold_flag, clipped_mass):
        self.p = p
        self.value = value
        self.p0 = p0
        self.below_threshold_flag = below_threshold_flag
        self.clipped_mass = clipped_mass

    def to_dict(self):
        return {
            "p": "inf" if math.isinf(self.p) else self.p,
            "value": self.value,
            "p0": self.p0,
            "below_threshold": self.below_threshold_flag,
            "clipped_mass": self.clipped_mass,
        }


def schatten_norm(spectrum, p, params=None):
    """
    Schatten p-norm of a nonnegative spectrum; p = inf gives lambda_1.

    Negative eigenvalues (discretization artifacts) are clipped at 0 and their
    total magnitude reported as clipped_mass. The flag marks p <= p0 = d/alpha,
    where the discrete value is finite but does not converge under refinement.

    Raises:
        DomainError: If p < 1.
    """
    p = float(p)
    if not p >= 1:
        raise DomainError(f"Schatten exponent must be >= 1, got {p}")
    params = params or spectrum.params
    p0 = params.p0 if params is not None else float("nan")
    values = spectrum.eigenvalues
    clipped = np.clip(values, 0.0, None)
    clipped_mass = float(-values[values < 0].sum())
    top = float(clipped.max()) if len(clipped) else 0.0
    if math.isinf(p) or top == 0.0:
        value = top
    else:
        value = top * float(np.sum((clipped / top) ** p)) ** (1.0 / p)
    return SchattenReport(p, value, p0, bool(p <= p0), clipped_mass)


def decay_envelope(spectrum, params, measure, n_terms=None):
    """
    Empirical constant of lambda_j <= C |Omega|^theta j^(-theta).

    Returns:
        tuple[float, int]: max_j lambda_j j^theta / |Omega|^theta and the
        1-based j attaining it, over the first n_terms eigenvalues.
    """
    if not measure > 0:
        raise DomainError(f"measure must be > 0, got {measure}")
    values = np.clip(spectrum.eigenvalues[:n_terms], 0.0, None)
    if len(values) == 0:
        raise DomainError("decay envelope of an empty spectrum")
    j = np.arange(1, len(values) + 1)
    scaled = values * j**params.theta / measure**params.theta
    best = int(np.argmax(scaled))
    return float(scaled[best]), best + 1


class JentschReport:
    """Positivity and simplicity of the top eigenpair on a connected domain."""

    def __init__(self, status, gap, relative_gap, simple, u1_positive, u2_sign_changing):
        self.status = status
        self.gap = gap
        self.relative_gap = relative_gap
        self.simple = simple
        self.u1_positive = u1_positive
        self.u2_sign_changing = u2_sign_changing

    @property
    def passed(self):
        return self.status in ("pass", "skipped")

    def to_dict(self):
        return {
            "status": self.status,
            "gap": self.gap,
            "relative_gap": self.relative_gap,
            "simple": self.simple,
            "u1_positive": self.u1_positive,
            "u2_sign_changing": self.u2_sign_changing,
        }


def jentsch_check(spectrum, connected):
    """
    Check that lambda_1 is simple with a positive eigenvector and u_2 changes sign.

    Disconnected domains are reported as skipped with the near-degeneracy
    lambda_1 - lambda_2 recorded.

    Raises:
        UsageError: If the spectrum carries no eigenvectors.
    """
    if spectrum.eigenvectors is None:
        raise UsageError("jentsch_check needs eigenvectors; decompose with with_vectors=True")
    if len(spectrum) == 1:
        return JentschReport("pass", float("nan"), float("nan"), True, bool(spectrum.eigenvectors[0, 0] > 0), None)
    gap = spectrum.lambda1 - spectrum.lambda2
    relative_gap = gap / spectrum.lambda1
    if not connected:
        return JentschReport("skipped", gap, relative_gap, None, None, None)

    u1 = spectrum.eigenvectors[:, 0]
    u1 = u1 if u1[np.argmax(np.abs(u1))] > 0 else -u1
    u2 = spectrum.eigenvectors[:, 1]
    simple = bool(relative_gap > SIMPLICITY_TOLERANCE)
    u1_positive = bool(np.all(u1 > 0))
    u2_sign_changing = bool(np.any(u2 > 0) and np.any(u2 < 0))
    status = "pass" if (simple and u1_positive and u2_sign_changing) else "fail"
    log_action(
        f"jentsch {status}: relative gap {relative_gap:.3e}, u1>0 {u1_positive}, "
        f"u2 changes sign {u2_sign_changing}",
        action_type="VERDICT",
    )
    return JentschReport(status, gap, relative_gap, simple, u1_positive, u2_sign_changing)


def spectral_checks(matrix, spectrum):
    """
    Linear-algebra anchors of a decomposition.

    Returns:
        dict: min_ratio (lambda_min / lambda_1) and the nonnegative flag, the
        relative errors of sum(lambda) = trace and sum(lambda^2) = ||A||_F^2.
    """
    entries = matrix.entries if isinstance(matrix, OperatorMatrix) else np.asarray(matrix)
    values = spectrum.eigenvalues
    trace = float(np.trace(entries))
    frobenius2 = float(np.sum(entries * entries))
    min_ratio = float(values[-1] / values[0])
    return {
        "min_ratio": min_ratio,
        "nonnegative": bool(min_ratio >= -NONNEGATIVITY_TOLERANCE),
        "trace_error": abs(float(values.sum()) - trace) / abs(trace),
        "frobenius_error": abs(float(np.sum(values * values)) - frobenius2) / frobenius2,
    }


class NodalReport:
    def __init__(self, lambda2, lambda1_parts, lambda1_balls, measures):
        self.lambda2 = lambda2
        self.lambda1_parts = lambda1_parts
        self.lambda1_balls = lambda1_balls
        self.measures = measures

    @property
    def parts_dominate(self):
        # exact at the discrete level, up to rounding
        return all(v >= self.lambda2 * (1.0 - 1e-10) for v in self.lambda1_parts)

    @property
    def balls_dominate(self):
        return all(b >= v for b, v in zip(self.lambda1_balls, self.lambda1_parts))

    def to_dict(self):
        return {
            "lambda2": self.lambda2,
            "lambda1_plus": self.lambda1_parts[0],
            "lambda1_minus": self.lambda1_parts[1],
            "lambda1_ball_plus": self.lambda1_balls[0],
            "lambda1_ball_minus": self.lambda1_balls[1],
            "measure_plus": self.measures[0],
            "measure_minus": self.measures[1],
            "parts_dominate": self.parts_dominate,
            "balls_dominate": self.balls_dominate,
        }


def nodal_domain_check(matrix, domain, spectrum):
    """
    Split the domain by the sign of u_2 and compare lambda_2 with both parts.

    For each part Omega+/- the operator restricted to it has
    lambda_1(Omega+/-) >= lambda_2(Omega); the equal-measure ball B+/- of each
    part, rasterized at the same h and normalized to the part's measure by the
    dilation law, is reported next to it.
    """
    if spectrum.eigenvectors is None or len(spectrum) < 2:
        raise UsageError("nodal_domain_check needs at least two eigenpairs with vectors")
    u2 = spectrum.eigenvectors[:, 1]
    params = matrix.params
    parts, balls, measures = [], [], []
    for mask in (u2 > 0, u2 < 0):
        part = domain.subset(mask)
        restricted = matrix.restrict(mask, part)
        parts.append(float(scipy.linalg.eigh(restricted.entries, eigvals_only=True)[-1]))
        ball_domain = rasterize(ball_of_measure(part.measure(), domain.dim), domain.h)
        ball_matrix = assemble(params, ball_domain, diagonal_rule=matrix.diagonal_rule)
        top = float(scipy.linalg.eigh(ball_matrix.entries, eigvals_only=True)[-1])
        balls.append(top * (part.measure() / ball_domain.measure()) ** params.theta)
        measures.append(part.measure())
    report = NodalReport(spectrum.lambda2, parts, balls, measures)
    log_action(f"nodal domains: {report.to_dict()}", action_type="VERDICT")
    return report
