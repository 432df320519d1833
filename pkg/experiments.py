import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from errors import ConfigError
from global_settings import RIESZ_CHECK_TOLERANCE, SIGNIFICANCE_FACTOR
from grid_domain import ball_of_measure, is_ball, rasterize, two_balls
from logging_functions import log_action
from matrix_builder import assemble
from rearrangement import GridFunction, level_sets_nested, rearrange_function, riesz_sweep
from results import ExperimentResult, RunManifest, Verdict, check_verdict, classify, write_outputs
from riesz_kernel import convolution_ratio_exact, convolution_ratio_probe
from spectrum_functions import (
    decay_envelope,
    eigen_sym,
    jentsch_check,
    nodal_domain_check,
    schatten_norm,
    spectral_checks,
)
from trace_estimator import bll_compare, eigensum, interval_frobenius_trace, make_rng, trace_cycle_mc

GEOMETRIC_TOLERANCE = 1e-9


# Jobs


@dataclass
class SpectrumRun:
    label: str
    h: float
    domain: object
    spectrum: object
    matrix: object = None


def ordered_map(func, jobs, threads=1):
    """Apply func to every job; results come back in job order whatever the completion order."""
    if threads <= 1:
        return [func(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, jobs))


def decompose_shape(params, label, shape, h, diagonal_rule="ball", with_vectors=False, keep_matrix=False):
    domain = rasterize(shape, h)
    matrix = assemble(params, domain, diagonal_rule=diagonal_rule)
    spectrum = eigen_sym(matrix, with_vectors=with_vectors)
    return SpectrumRun(label, h, domain, spectrum, matrix if keep_matrix else None)


def spectra_grid(config, params, shapes, resolutions, with_vectors=False, keep_matrix=False):
    """Decompose every (shape, h) pair, shapes outer, h inner; keyed by (label, h)."""
    jobs = [(label, shape, h) for label, shape in shapes for h in resolutions]

    def run(job):
        label, shape, h = job
        return decompose_shape(params, label, shape, h, config.diagonal_rule, with_vectors, keep_matrix)

    runs = ordered_map(run, jobs, config.threads)
    return {(run.label, run.h): run for run in runs}


def resolution_plan(resolutions, companion=False):
    """
    Cell sizes to compute and the neighbour each reported h is compared with.

    With one reported h and companion=True, 2h is added so that the
    two-resolution error estimate exists; without a companion a single h has
    no neighbour.

    Returns:
        tuple[list[float], dict[float, float | None]]
    """
    hs = list(resolutions)
    if len(hs) == 1:
        if not companion:
            return hs, {hs[0]: None}
        return [2.0 * hs[0], hs[0]], {hs[0]: 2.0 * hs[0]}
    return hs, {h: hs[i - 1] if i > 0 else hs[1] for i, h in enumerate(hs)}


def normalize(value, nominal, actual, power):
    """Rescale a value computed on a raster of measure `actual` to the nominal measure by dilation."""
    return value * (nominal / actual) ** power


def shift_error(values, key, neighbour):
    """|v(h) - v(h')| for key = (label, h, quantity); nan when there is no neighbour."""
    label, _, quantity = key
    other = (label, neighbour, quantity)
    if neighbour is None or other not in values or key not in values:
        return float("nan")
    return abs(values[key] - values[other])


def emit_rows(result, values, labels, resolutions, neighbours, quantities, seed=None):
    """Add rows for every (label, h, quantity) present in values, in that nesting order."""
    for label in labels:
        for h in resolutions:
            for quantity in quantities:
                key = (label, h, quantity)
                if key in values:
                    error = shift_error(values, key, neighbours.get(h))
                    result.table.add(label, h, quantity, values[key], error, seed)


def emit_gap(result, values, shape_label, reference_label, h, neighbour, quantity, gap_quantity, reference=False,
             status=None):
    """
    Comparison row and verdict for gap = value(reference) - value(shape).

    The error estimate is the shift of the gap itself between h and its
    neighbouring resolution.
    """
    gap = values[(reference_label, h, quantity)] - values[(shape_label, h, quantity)]
    if neighbour is not None and (shape_label, neighbour, quantity) in values:
        other = values[(reference_label, neighbour, quantity)] - values[(shape_label, neighbour, quantity)]
        error = abs(gap - other)
    else:
        error = float("nan")
    result.table.add(shape_label, h, gap_quantity, gap, error)
    result.add_verdict(
        Verdict(
            result.experiment, shape_label, float(h), gap_quantity, gap, error,
            status or classify(gap, error, reference),
        )
    )
    return gap, error


def p_label(p):
    return "inf" if math.isinf(p) else f"{p:g}"


def _nominal(config):
    nominal = config.nominal_measure()
    if nominal is None:
        raise ConfigError(f"{config.kind} needs at least one shape")
    return nominal


# Sweeps


def rfk_sweep(config):
    """
    Compare lambda_1 of every shape with the equal-measure ball at each h.

    Rows: lambda1, lambda1_normalized and measure_actual per (shape, h) and a
    lambda1_gap comparison row per non-ball shape. Verdicts use the
    normalized values.

    Raises:
        ConfigError: If no shape is a ball.
    """
    params = config.params()
    ball_label = next((label for label, shape in config.shapes if is_ball(shape)), None)
    if ball_label is None:
        raise ConfigError("rfk needs the ball of the common measure among the shapes")
    nominal = _nominal(config)
    hs, neighbours = resolution_plan(config.resolutions, companion=True)
    runs = spectra_grid(config, params, config.shapes, hs)

    values = {}
    for (label, h), run in runs.items():
        actual = run.domain.measure()
        values[(label, h, "lambda1")] = run.spectrum.lambda1
        values[(label, h, "lambda1_normalized")] = normalize(run.spectrum.lambda1, nominal, actual, params.theta)
        values[(label, h, "measure_actual")] = actual

    result = ExperimentResult("rfk")
    emit_rows(
        result, values, config.labels, config.resolutions, neighbours,
        ["lambda1", "lambda1_normalized", "measure_actual"],
    )
    for label, shape in config.shapes:
        if label == ball_label:
            continue
        for h in config.resolutions:
            emit_gap(
                result, values, label, ball_label, h, neighbours[h],
                "lambda1_normalized", "lambda1_gap", reference=is_ball(shape),
            )
    return result


def check_schatten_exponents(config, params):
    """
    Split p values into asserted and exploratory ones.

    Raises:
        ConfigError: If a p is not an integer > p0 (or inf) and the
            configuration is not marked exploratory.
    """
    if not config.p_values:
        raise ConfigError("schatten needs at least one p")
    exploratory = []
    for p in config.p_values:
        if math.isinf(p) or (float(p).is_integer() and p > params.p0):
            continue
        if not config.exploratory:
            raise ConfigError(
                f"p={p:g} is not covered: Schatten comparisons are asserted for integers p > p0 = d/alpha "
                f"= {params.p0:g} and p = inf; set exploratory: true to run it anyway"
            )
        exploratory.append(p)
    if exploratory:
        log_action(
            f"EXPLORATORY exponents {exploratory}: results are reported without asserted verdicts",
            action_type="CONFIG",
        )
    return exploratory


def schatten_sweep(config):
    """
    Schatten norms of every shape against the equal-measure ball.

    The ball is taken from the shapes when present, else added as
    `ball_star`. Optional Monte Carlo cross-check (mc.cross_check) compares
    the cyclic trace at s = p with sum lambda^s at the finest h, within
    3 std_error plus the two-resolution allowance of the eigensum.
    """
    params = config.params()
    exploratory = check_schatten_exponents(config, params)
    nominal = _nominal(config)
    shapes = list(config.shapes)
    ball_label = next((label for label, shape in shapes if is_ball(shape)), None)
    if ball_label is None:
        ball_label = "ball_star"
        shapes.append((ball_label, ball_of_measure(nominal, config.dim)))
    labels = [label for label, _ in shapes]
    hs, neighbours = resolution_plan(config.resolutions, companion=True)
    runs = spectra_grid(config, params, shapes, hs)

    values = {}
    quantities = []
    for p in config.p_values:
        quantities += [f"schatten_{p_label(p)}", f"schatten_{p_label(p)}_normalized"]
    for (label, h), run in runs.items():
        actual = run.domain.measure()
        for p in config.p_values:
            value = schatten_norm(run.spectrum, p, params).value
            values[(label, h, f"schatten_{p_label(p)}")] = value
            values[(label, h, f"schatten_{p_label(p)}_normalized")] = normalize(value, nominal, actual, params.theta)
        values[(label, h, "measure_actual")] = actual

    result = ExperimentResult("schatten")
    result.notes["exploratory_p"] = list(exploratory)
    emit_rows(result, values, labels, config.resolutions, neighbours, quantities + ["measure_actual"])
    for label, shape in shapes:
        if label == ball_label:
            continue
        for p in config.p_values:
            for h in config.resolutions:
                emit_gap(
                    result, values, label, ball_label, h, neighbours[h],
                    f"schatten_{p_label(p)}_normalized", f"schatten_{p_label(p)}_gap", reference=is_ball(shape),
                    status="exploratory" if p in exploratory else None,
                )

    if config.mc.cross_check:
        _trace_cross_check(config, params, shapes, runs, neighbours, result)
    return result


def _trace_cross_check(config, params, shapes, runs, neighbours, result):
    h = config.resolutions[-1]
    neighbour = neighbours[h]
    orders = [int(p) for p in config.p_values if not math.isinf(p) and float(p).is_integer() and p > params.p0]
    stream = 0
    for label, _ in shapes:
        run = runs[(label, h)]
        for s in orders:
            estimate = trace_cycle_mc(
                params, run.domain, s, config.mc.n_samples, config.mc.seed, stream,
                config.mc.lanes, config.threads,
            )
            stream += 1
            exact = eigensum(run.spectrum, s)
            allowance = abs(exact - eigensum(runs[(label, neighbour)].spectrum, s))
            result.table.add(label, h, f"trace_mc_{s}", estimate.estimate, estimate.std_error, config.mc.seed)
            result.table.add(label, h, f"eigensum_{s}", exact, allowance)
            _agreement_verdict(result, label, h, f"trace_mc_agreement_{s}", estimate, exact, allowance)


def _agreement_verdict(result, label, h, quantity, estimate, reference, allowance):
    deviation = abs(estimate.estimate - reference)
    bound = SIGNIFICANCE_FACTOR * estimate.std_error + allowance
    if not estimate.finite_variance:
        result.add_verdict(Verdict(result.experiment, label, float(h), quantity, deviation, bound, "skipped"))
        return
    result.add_verdict(check_verdict(result.experiment, label, h, quantity, deviation <= bound, deviation, bound))


def two_ball_test_function(matrix, domain, spectrum):
    """
    Rayleigh quotient of the two-ball test function and its cross term.

    v is the top eigenvector of the left ball's block on the left cells and
    gamma times that of the right ball's block on the right cells, with gamma
    chosen so that v is orthogonal to u_1; its Rayleigh quotient is a lower
    bound for lambda_2. The cross term is the off-block part of the quotient
    and vanishes as the balls separate.

    Returns:
        tuple[float, float]: (quotient, cross_term)
    """
    entries = matrix.entries
    left = domain.centers[:, 0] < 0
    right = ~left
    blocks = []
    for mask in (left, right):
        block = entries[np.ix_(mask, mask)]
        n = block.shape[0]
        _, vector = scipy.linalg.eigh(block, subset_by_index=[n - 1, n - 1])
        vector = vector[:, 0]
        blocks.append(vector if vector.sum() > 0 else -vector)
    u_plus, u_minus = blocks
    u1 = spectrum.eigenvectors[:, 0]
    gamma = -(u1[left] @ u_plus) / (u1[right] @ u_minus)
    v = np.zeros(domain.n_cells)
    v[left] = u_plus
    v[right] = gamma * u_minus
    norm2 = float(v @ v)
    quotient = float(v @ entries @ v) / norm2
    cross = 2.0 * gamma * float(u_plus @ entries[np.ix_(left, right)] @ u_minus) / norm2
    return quotient, cross


def _two_ball_label(distance):
    return f"two_balls(l={distance!r})"


def hks_sweep(config):
    """
    lambda_2 of two equal balls at growing distance, its limit, and comparison shapes.

    For each h and distance l: lambda1, lambda2 (raw and normalized to the
    total measure), the two-ball test quotient and cross term. The limits
    are lambda_1 of the half-measure ball raster (lambda2_limit) and
    2^(-alpha/d) lambda_1 of the full ball (lambda2_limit_continuum). Each
    comparison shape gets a lambda2_gap against sup_l lambda_2(two balls).
    The trend in l is reported in the manifest notes, not asserted.

    Raises:
        ConfigError: Fewer than three distances, or distances not ascending.
    """
    params = config.params()
    distances = list(config.hks.distances)
    if len(distances) < 3:
        raise ConfigError(f"hks needs at least 3 distances to report a trend, got {len(distances)}")
    if any(a >= b for a, b in zip(distances, distances[1:])):
        raise ConfigError(f"hks distances must be ascending, got {distances}")
    total = config.hks.total_measure
    if config.shapes:
        nominal = config.nominal_measure()
        if abs(nominal - total) > 1e-12 * total:
            raise ConfigError(f"comparison shapes have measure {nominal!r}, expected the total measure {total!r}")
    hs, neighbours = resolution_plan(config.resolutions, companion=True)

    pair_shapes = [(_two_ball_label(l), two_balls(total, l, config.dim)) for l in distances]
    pair_runs = spectra_grid(config, params, pair_shapes, hs, with_vectors=True, keep_matrix=True)
    limit_shapes = [
        ("limit_half_ball", ball_of_measure(total / 2.0, config.dim)),
        ("limit_ball", ball_of_measure(total, config.dim)),
    ]
    other_runs = spectra_grid(config, params, limit_shapes + list(config.shapes), hs)

    values = {}
    for (label, h), run in pair_runs.items():
        actual = run.domain.measure()
        spectrum = run.spectrum
        quotient, cross = two_ball_test_function(run.matrix, run.domain, spectrum)
        run.matrix = None
        values[(label, h, "lambda1")] = spectrum.lambda1
        values[(label, h, "lambda2")] = spectrum.lambda2
        values[(label, h, "lambda2_normalized")] = normalize(spectrum.lambda2, total, actual, params.theta)
        values[(label, h, "test_quotient")] = quotient
        values[(label, h, "cross_term")] = cross
        values[(label, h, "near_degeneracy")] = (spectrum.lambda1 - spectrum.lambda2) / spectrum.lambda1
        values[(label, h, "measure_actual")] = actual
    for (label, h), run in other_runs.items():
        actual = run.domain.measure()
        if label == "limit_half_ball":
            values[(label, h, "lambda2_limit")] = normalize(run.spectrum.lambda1, total / 2.0, actual, params.theta)
        elif label == "limit_ball":
            full = normalize(run.spectrum.lambda1, total, actual, params.theta)
            values[(label, h, "lambda2_limit_continuum")] = 2.0 ** (-params.theta) * full
        else:
            values[(label, h, "lambda2_normalized")] = normalize(run.spectrum.lambda2, total, actual, params.theta)
            values[(label, h, "measure_actual")] = actual

    result = ExperimentResult("hks")
    pair_labels = [label for label, _ in pair_shapes]
    emit_rows(
        result, values, pair_labels, config.resolutions, neighbours,
        ["lambda1", "lambda2", "lambda2_normalized", "test_quotient", "cross_term", "measure_actual"],
    )
    emit_rows(
        result, values, ["limit_half_ball", "limit_ball"], config.resolutions, neighbours,
        ["lambda2_limit", "lambda2_limit_continuum"],
    )
    farthest = pair_labels[-1]
    emit_rows(result, values, [farthest], config.resolutions, neighbours, ["near_degeneracy"])

    trend = {}
    for h in hs:
        sup_label = max(pair_labels, key=lambda label: values[(label, h, "lambda2_normalized")])
        values[("sup_two_balls", h, "lambda2_normalized")] = values[(sup_label, h, "lambda2_normalized")]
        series = [values[(label, h, "lambda2_normalized")] for label in pair_labels]
        limit = values[("limit_half_ball", h, "lambda2_limit")]
        values[(farthest, h, "limit_deviation")] = (series[-1] - limit) / limit
        if h in config.resolutions:
            trend[repr(h)] = {
                "lambda2_normalized": series,
                "non_decreasing": bool(all(a <= b for a, b in zip(series, series[1:]))),
                "sup_at": sup_label,
            }
    emit_rows(result, values, [farthest], config.resolutions, neighbours, ["limit_deviation"])
    result.notes["lambda2_trend"] = trend

    emit_rows(result, values, config.labels, config.resolutions, neighbours, ["lambda2_normalized", "measure_actual"])
    for label, _ in config.shapes:
        for h in config.resolutions:
            emit_gap(result, values, label, "sup_two_balls", h, neighbours[h], "lambda2_normalized", "lambda2_gap")
    return result


def richardson_extrapolate(values, ratio):
    """
    Fit an order from three successive values and extrapolate the limit.

    With v1, v2, v3 at h, h/r, h/r^2: q = log(|v1 - v2| / |v2 - v3|) / log r
    and v_inf = v3 + (v3 - v2) / (r^q - 1).

    Returns:
        tuple[float, float]: (q, v_inf); q is nan and v_inf = v3 when the
        differences vanish.
    """
    v1, v2, v3 = values[-3:]
    d1, d2 = v1 - v2, v2 - v3
    if d1 == 0.0 or d2 == 0.0:
        return float("nan"), float(v3)
    q = math.log(abs(d1 / d2)) / math.log(ratio)
    if q == 0.0:
        return q, float(v3)
    return q, float(v3 + (v3 - v2) / (ratio**q - 1.0))


def check_geometric(resolutions):
    if len(resolutions) < 3:
        raise ConfigError(f"converge needs at least 3 resolutions, got {len(resolutions)}")
    ratios = [a / b for a, b in zip(resolutions, resolutions[1:])]
    if any(abs(r - ratios[0]) > GEOMETRIC_TOLERANCE * ratios[0] for r in ratios):
        raise ConfigError(f"resolutions must form a geometric progression, got ratios {ratios}")
    return ratios[0]


def convergence_study(config):
    """
    Refinement study of one shape: normalized lambda1, lambda2 and Schatten norms per h.

    For each quantity: successive differences, the order q fitted on the
    three finest values, the Richardson limit and the distance of every h to
    that limit.
    """
    if len(config.shapes) != 1:
        raise ConfigError(f"converge runs on exactly one shape, got {len(config.shapes)}")
    ratio = check_geometric(config.resolutions)
    params = config.params()
    nominal = _nominal(config)
    label = config.labels[0]
    runs = spectra_grid(config, params, config.shapes, config.resolutions)
    hs = list(config.resolutions)

    series = {"lambda1": [], "lambda2": []}
    for p in config.p_values:
        if not math.isinf(p) and p > params.p0:
            series[f"schatten_{p_label(p)}"] = []
    for h in hs:
        run = runs[(label, h)]
        actual = run.domain.measure()
        series["lambda1"].append(normalize(run.spectrum.lambda1, nominal, actual, params.theta))
        series["lambda2"].append(normalize(run.spectrum.lambda2, nominal, actual, params.theta))
        for quantity in series:
            if quantity.startswith("schatten_"):
                p = float(quantity.split("_")[1])
                value = schatten_norm(run.spectrum, p, params).value
                series[quantity].append(normalize(value, nominal, actual, params.theta))

    result = ExperimentResult("converge")
    fits = {}
    for quantity, vals in series.items():
        if any(math.isnan(v) for v in vals):
            continue
        order, limit = richardson_extrapolate(vals, ratio)
        previous = richardson_extrapolate(vals[:-1], ratio)[0] if len(vals) > 3 else float("nan")
        limit_error = abs(limit - vals[-1])
        for i, h in enumerate(hs):
            neighbour_value = vals[i - 1] if i > 0 else vals[1]
            result.table.add(label, h, quantity, vals[i], abs(vals[i] - neighbour_value))
        for i in range(1, len(hs)):
            result.table.add(label, hs[i], f"{quantity}_difference", abs(vals[i - 1] - vals[i]), limit_error)
        result.table.add(label, hs[-1], f"{quantity}_order", order, abs(order - previous))
        result.table.add(label, hs[-1], f"{quantity}_extrapolated", limit, limit_error)
        for i, h in enumerate(hs):
            result.table.add(label, h, f"{quantity}_discretization_error", abs(vals[i] - limit), limit_error)
        differences = [abs(a - b) for a, b in zip(vals, vals[1:])]
        fits[quantity] = {
            "order": order,
            "limit": limit,
            "differences_shrink": bool(all(a > b for a, b in zip(differences, differences[1:]))),
        }
    result.notes["fits"] = fits
    log_action(f"convergence of {label}: {fits}", action_type="VERDICT")
    return result


# Runners behind the remaining subcommands


def run_spectrum(config):
    """
    Full spectra with linear-algebra anchors, decay envelope, positivity and nodal checks.

    Side outputs: one eigenvalue CSV and one JSON summary per (shape, h).
    """
    params = config.params()
    hs, neighbours = resolution_plan(config.resolutions)
    runs = spectra_grid(config, params, config.shapes, hs, with_vectors=True, keep_matrix=True)
    result = ExperimentResult("spectrum")

    values = {}
    for index, ((label, h), run) in enumerate(runs.items()):
        spectrum = run.spectrum
        checks = spectral_checks(run.matrix, spectrum)
        envelope, j_max = decay_envelope(spectrum, params, run.domain.measure(), config.envelope_terms)
        jentsch = jentsch_check(spectrum, run.domain.connected)
        values[(label, h, "lambda1")] = spectrum.lambda1
        values[(label, h, "lambda2")] = spectrum.lambda2
        values[(label, h, "envelope")] = envelope
        values[(label, h, "measure_actual")] = run.domain.measure()
        values[(label, h, "min_ratio")] = checks["min_ratio"]

        result.add_verdict(check_verdict("spectrum", label, h, "nonnegative", checks["nonnegative"], checks["min_ratio"]))
        result.add_verdict(
            check_verdict(
                "spectrum", label, h, "trace_anchors",
                max(checks["trace_error"], checks["frobenius_error"]) <= 1e-10,
                checks["trace_error"], checks["frobenius_error"],
            )
        )
        if jentsch.status == "skipped":
            result.add_verdict(Verdict("spectrum", label, float(h), "jentsch", jentsch.gap, 0.0, "skipped"))
        else:
            result.add_verdict(check_verdict("spectrum", label, h, "jentsch", jentsch.passed, jentsch.relative_gap))
        if run.domain.connected and len(spectrum) > 2:
            nodal = nodal_domain_check(run.matrix, run.domain, spectrum)
            result.add_verdict(check_verdict("spectrum", label, h, "nodal_parts_dominate", nodal.parts_dominate))
            values[(label, h, "lambda1_nodal_plus")] = nodal.lambda1_parts[0]
            values[(label, h, "lambda1_nodal_minus")] = nodal.lambda1_parts[1]
        run.matrix = None

        summary = {"envelope": envelope, "envelope_j": j_max, "checks": checks}
        result.artifacts[f"spectrum_{label}_{index}.csv"] = lambda path, spectrum=spectrum: spectrum.save_to_csv(path)
        result.artifacts[f"spectrum_{label}_{index}.json"] = (
            lambda path, spectrum=spectrum, summary=summary, jentsch=jentsch: spectrum.save_to_file(path, summary, jentsch)
        )

    emit_rows(
        result, values, config.labels, config.resolutions, neighbours,
        ["lambda1", "lambda2", "envelope", "measure_actual", "min_ratio", "lambda1_nodal_plus", "lambda1_nodal_minus"],
    )
    return result


def run_trace_mc(config):
    """
    Cyclic trace estimates at the finest h against sum lambda^s of the same raster.

    In dimension 1 with s = 2 the exact Hilbert-Schmidt trace of the
    rasterized interval is reported and checked as well.
    """
    params = config.params()
    s = config.mc.s
    hs, neighbours = resolution_plan(config.resolutions, companion=True)
    h = config.resolutions[-1]
    runs = spectra_grid(config, params, config.shapes, [h, neighbours[h]])
    result = ExperimentResult("trace-mc")
    variance = {}
    for stream, (label, _) in enumerate(config.shapes):
        run = runs[(label, h)]
        estimate = trace_cycle_mc(
            params, run.domain, s, config.mc.n_samples, config.mc.seed, stream, config.mc.lanes, config.threads
        )
        exact = eigensum(run.spectrum, s)
        allowance = abs(exact - eigensum(runs[(label, neighbours[h])].spectrum, s))
        result.table.add(label, h, "trace_mc", estimate.estimate, estimate.std_error, config.mc.seed)
        result.table.add(label, h, "eigensum", exact, allowance)
        _agreement_verdict(result, label, h, "trace_mc_vs_eigensum", estimate, exact, allowance)
        if config.dim == 1 and s == 2 and run.domain.connected and params.alpha > 0.5:
            oracle = interval_frobenius_trace(params, run.domain.measure())
            result.table.add(label, h, "trace_exact", oracle, 0.0)
            _agreement_verdict(result, label, h, "trace_mc_vs_exact", estimate, oracle, 0.0)
        variance[label] = estimate.finite_variance
        result.artifacts[f"trace_{label}.json"] = lambda path, estimate=estimate: estimate.save_to_file(path)
    result.notes["finite_variance"] = variance
    return result


def run_bll(config):
    """Cyclic trace of each shape against its equal-measure ball raster, at the finest h."""
    params = config.params()
    h = config.resolutions[-1]
    result = ExperimentResult("bll")
    for label, shape in config.shapes:
        domain = rasterize(shape, h)
        report = bll_compare(
            params, domain, config.mc.s, config.mc.n_samples, config.mc.seed, config.mc.lanes, config.threads
        )
        seed = config.mc.seed
        ball = report.normalized_ball_estimate
        result.table.add(label, h, "trace_mc", report.domain_estimate.estimate, report.domain_estimate.std_error, seed)
        result.table.add(label, h, "trace_mc_ball_normalized", ball.estimate, ball.std_error, seed)
        result.table.add(label, h, "bll_gap", report.difference, report.combined_error, seed)
        status = classify(report.difference, report.combined_error, reference=report.vacuous or is_ball(shape))
        if not report.domain_estimate.finite_variance and status != "reference":
            status = "skipped"
        result.add_verdict(
            Verdict("bll", label, float(h), "bll_gap", report.difference, report.combined_error, status)
        )
        result.artifacts[f"bll_{label}.json"] = lambda path, report=report: _save_json(report.to_dict(), path)
    return result


def _save_json(data, path):
    with open(path, "w") as file:
        json.dump(data, file, indent=4)


def run_rearrange_check(config):
    """
    Riesz check over n_functions seeded functions per shape at the finest h,
    plus exact checks (multiset, l2 norm, idempotence, nested level sets)
    on the first function.
    """
    params = config.params()
    h = config.resolutions[-1]
    seed = config.mc.seed
    result = ExperimentResult("rearrange-check")
    for label, shape in config.shapes:
        domain = rasterize(shape, h)
        df = riesz_sweep(params, domain, config.n_functions, seed)
        for record in df.to_dict("records"):
            tolerance = RIESZ_CHECK_TOLERANCE * max(abs(record["Q"]), abs(record["Q_star"]))
            result.table.add(f"{label}/f{record['stream']:03d}", h, "riesz_gap", record["gap"], tolerance, seed)
        result.add_verdict(
            check_verdict(
                "rearrange-check", label, h, "riesz_inequality", bool(df["pass"].all()), float(df["gap"].min())
            )
        )

        rng = make_rng(seed)
        f = GridFunction(domain, rng.random(domain.n_cells))
        f_star = rearrange_function(f)
        f_star_star = rearrange_function(f_star)
        checks = {
            "multiset": np.array_equal(np.sort(f.values), np.sort(f_star.values)),
            "l2_norm": float(np.sum(np.sort(f.values) ** 2)) == float(np.sum(np.sort(f_star.values) ** 2)),
            "idempotence": np.array_equal(f_star.domain.indices, f_star_star.domain.indices)
            and np.array_equal(f_star.values, f_star_star.values),
            "level_sets_nested": level_sets_nested(f, f_star),
        }
        for name, passed in checks.items():
            result.add_verdict(check_verdict("rearrange-check", label, h, name, bool(passed)))
        result.artifacts[f"riesz_{label}.csv"] = lambda path, df=df: df.to_csv(path, index=False, float_format="%.17g")
    return result


def run_probe(config):
    """Convolution identity probe, checked for constancy in r and against the closed-form ratio."""
    params = config.params()
    settings = config.probe
    probe = convolution_ratio_probe(
        params.alpha, settings.alpha2, config.dim, list(settings.r_values),
        settings.truncation_radius, settings.quad_points,
    )
    result = ExperimentResult("probe-convolution")
    for r, ratio in probe.rows:
        result.table.add(f"r={r!r}", 0.0, "convolution_ratio", ratio, probe.tolerance * abs(ratio))
    result.add_verdict(
        check_verdict(
            "probe-convolution", "full_space", 0.0, "ratio_constant",
            probe.spread <= 2.0 * probe.tolerance, probe.spread, 2.0 * probe.tolerance,
        )
    )
    exact = convolution_ratio_exact(params.alpha, settings.alpha2, config.dim)
    deviation = max(abs(ratio - exact) / exact for ratio in probe.ratios)
    result.table.add("exact", 0.0, "convolution_ratio", exact, 0.0)
    result.add_verdict(
        check_verdict(
            "probe-convolution", "full_space", 0.0, "ratio_vs_exact",
            deviation <= probe.tolerance, deviation, probe.tolerance,
        )
    )
    result.notes["probe"] = probe.to_dict()
    return result


RUNNERS = {
    "spectrum": run_spectrum,
    "schatten": schatten_sweep,
    "rfk": rfk_sweep,
    "hks": hks_sweep,
    "trace-mc": run_trace_mc,
    "bll": run_bll,
    "rearrange-check": run_rearrange_check,
    "converge": convergence_study,
    "probe-convolution": run_probe,
}


def run_experiment(config, write=True):
    """
    Run the experiment named by config.kind and write its outputs.

    Returns:
        tuple[ExperimentResult, list[str]]: The result and the files written
        (CSV, side artifacts, manifest), empty when write is False.
    """
    manifest = RunManifest(config.to_dict())
    log_action(f"running {config.kind} with {len(config.shapes)} shape(s)", action_type="CONFIG")
    result = RUNNERS[config.kind](config)
    written = write_outputs(result, manifest, config.output_dir) if write else []
    log_action(
        f"{config.kind} finished: {len(result.table)} rows, {len(result.verdicts)} verdicts, "
        f"exit code {result.exit_code}",
        action_type="OUTPUT",
    )
    return result, written
