import math

import numpy as np
import pytest

from errors import CapacityError, DomainError
from grid_domain import Box, GridDomain, rasterize, scale_domain
from matrix_builder import (
    OperatorMatrix,
    assemble,
    assemble_interval_exact,
    self_term,
    self_term_subdivided,
)
from riesz_kernel import RieszParams, kernel_eval
from spectrum_functions import eigen_sym


def test_self_term_is_exact_in_1d(interval_params):
    h = 1 / 32
    exact = interval_params.c * 2.0 * (h / 2) ** 0.5 / 0.5
    assert self_term(interval_params, h) == pytest.approx(exact, rel=1e-12)


def test_self_term_planar(planar):
    h = 1 / 16
    assert self_term(planar, h) == pytest.approx(h / math.sqrt(math.pi), rel=1e-12)


def test_subdivided_self_term_close_to_exact(interval_params):
    h = 1 / 8
    ratio = self_term_subdivided(interval_params, h) / self_term(interval_params, h)
    assert 0.95 < ratio <= 1.0


def test_two_cell_matrix(planar):
    h = 1 / 8
    domain = GridDomain(2, h, [[0, 0], [1, 0]])
    matrix = assemble(planar, domain)
    assert matrix.entries[0, 1] == pytest.approx(planar.c * h**planar.alpha, rel=1e-12)
    assert matrix.entries[0, 1] == matrix.entries[1, 0]
    assert matrix.entries[0, 0] == pytest.approx(self_term(planar, h), rel=1e-15)
    assert matrix.domain_ref["fingerprint"] == domain.fingerprint


def test_matrix_is_symmetric_and_positive(planar, l_domain):
    matrix = assemble(planar, l_domain)
    np.testing.assert_array_equal(matrix.entries, matrix.entries.T)
    assert np.all(matrix.entries > 0)
    assert not matrix.entries.flags.writeable


def test_assemble_errors(planar):
    domain = rasterize(Box([0.0, 0.0], [1.0, 1.0]), 1 / 4)
    with pytest.raises(CapacityError):
        assemble(planar, domain, max_cells=10)
    with pytest.raises(DomainError):
        assemble(RieszParams(0.5, 1), domain)
    with pytest.raises(DomainError, match="diagonal rule"):
        assemble(planar, domain, diagonal_rule="trapezoid")


def test_nystrom_matches_exact_interval(interval_params, unit_interval):
    h = 1 / 64
    domain = rasterize(unit_interval, h)
    nystrom = assemble(interval_params, domain)
    exact = assemble_interval_exact(interval_params, domain.n_cells, h)
    np.testing.assert_allclose(np.diag(nystrom.entries), np.diag(exact.entries), rtol=1e-12)
    # far entries: midpoint rule against the exact cell integral
    assert nystrom.entries[0, 40] == pytest.approx(exact.entries[0, 40], rel=1e-3)
    assert eigen_sym(nystrom).lambda1 == pytest.approx(eigen_sym(exact).lambda1, rel=1e-2)


def test_exact_interval_neighbour_entry(interval_params):
    h = 1 / 16
    exact = assemble_interval_exact(interval_params, 4, h)
    expected = interval_params.c / 0.5 * ((1.5 * h) ** 0.5 - (0.5 * h) ** 0.5)
    assert exact.entries[0, 1] == pytest.approx(expected, rel=1e-12)
    with pytest.raises(DomainError):
        assemble_interval_exact(RieszParams(1.0, 2), 4, h)


@pytest.mark.parametrize("t", [0.5, 2.0])
def test_dilation_law(t):
    params = RieszParams(0.7, 2)
    domain = rasterize(Box([0.0, 0.0], [1.0, 1.0]), 1 / 8)
    base = assemble(params, domain)
    scaled = assemble(params, scale_domain(domain, t))
    np.testing.assert_allclose(scaled.entries, t**params.alpha * base.entries, rtol=1e-12)
    assert eigen_sym(scaled).lambda1 == pytest.approx(t**params.alpha * eigen_sym(base).lambda1, rel=1e-10)


def test_restrict_is_principal_submatrix(planar, l_domain):
    matrix = assemble(planar, l_domain)
    mask = l_domain.indices[:, 0] < 4
    part = l_domain.subset(mask)
    restricted = matrix.restrict(mask, part)
    np.testing.assert_array_equal(restricted.entries, assemble(planar, part).entries)
    assert restricted.domain_ref["fingerprint"] == part.fingerprint


def test_dump_round_trip(tmp_path, planar):
    domain = rasterize(Box([0.0, 0.0], [1.0, 1.0]), 1 / 4)
    matrix = assemble(planar, domain)
    path = str(tmp_path / "matrix")
    matrix.dump(path)
    loaded = OperatorMatrix.load_dump(path, planar)
    np.testing.assert_array_equal(loaded.entries, matrix.entries)
    assert loaded.header() == matrix.header()
    assert (tmp_path / "matrix.bin").stat().st_size == 16 * 16 * 8


def test_off_diagonal_uses_kernel(planar):
    h = 1 / 4
    domain = GridDomain(2, h, [[0, 0], [3, 4]])
    matrix = assemble(planar, domain)
    assert matrix.entries[0, 1] == pytest.approx(kernel_eval(planar, 5 * h) * h**2, rel=1e-12)


def test_relabeling_conjugates_the_matrix(planar, l_domain):
    mirrored = GridDomain(2, l_domain.h, l_domain.indices * [-1, 1] - [1, 0])
    position = {tuple(k): i for i, k in enumerate(l_domain.indices.tolist())}
    perm = [position[(-k[0] - 1, k[1])] for k in mirrored.indices.tolist()]
    assert sorted(perm) == list(range(l_domain.n_cells))
    assert perm != list(range(l_domain.n_cells))

    original = assemble(planar, l_domain).entries
    relabeled = assemble(planar, mirrored).entries
    np.testing.assert_allclose(relabeled, original[np.ix_(perm, perm)], rtol=1e-14)
    np.testing.assert_allclose(
        eigen_sym(relabeled).eigenvalues, eigen_sym(original).eigenvalues, rtol=1e-10, atol=0
    )
