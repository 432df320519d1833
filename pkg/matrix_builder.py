import json

import numpy as np
from scipy.linalg import toeplitz
from scipy.spatial.distance import pdist, squareform

from errors import CapacityError, DomainError
from global_settings import MAX_CELLS
from logging_functions import log_action
from riesz_kernel import ball_volume, kernel_eval, sphere_area

DIAGONAL_RULES = ("ball", "subdivided")


def self_term(params, h):
    """
    Equal-volume-ball approximation of the kernel integral over a cell about its center.

    With rho the radius of the ball of volume h^d and omega the unit sphere
    area, returns c * omega * rho^alpha / alpha (exact for the 1D cell).
    """
    if not h > 0:
        raise DomainError(f"cell size h must be > 0, got {h}")
    d = params.dim
    rho = (h**d / ball_volume(d)) ** (1.0 / d)
    return params.c * sphere_area(d) * rho**params.alpha / params.alpha


def self_term_subdivided(params, h):
    # inner (h/2)-block by the ball rule, remaining 4^d - 2^d sub-cells by midpoint
    d = params.dim
    q = h / 4.0
    offsets = np.arange(-2, 2) + 0.5
    grid = np.stack(np.meshgrid(*([offsets] * d), indexing="ij"), axis=-1).reshape(-1, d)
    outer = grid[np.any(np.abs(grid) > 1.0, axis=1)]
    far = kernel_eval(params, q * np.linalg.norm(outer, axis=1)).sum() * q**d
    return self_term(params, h / 2.0) + float(far)


class OperatorMatrix:
    """
    Dense symmetric discretization of the Riesz potential on a grid domain.

    Attributes:
        entries (numpy.ndarray): Read-only (n, n) matrix, units length^alpha.
        params (RieszParams): Kernel parameters.
        domain_ref (dict): h, cell count and fingerprint of the source domain.
        diagonal_rule (str): "ball" or "subdivided".
    """

    def __init__(self, entries, params, domain_ref, diagonal_rule="ball"):
        entries = np.asarray(entries, dtype=float)
        entries.flags.writeable = False
        self.entries = entries
        self.params = params
        self.domain_ref = domain_ref
        self.diagonal_rule = diagonal_rule

    @property
    def n(self):
        return self.entries.shape[0]

    def restrict(self, mask, subdomain=None):
        """Principal sub-matrix on the cells selected by mask (the operator on a subset)."""
        mask = np.asarray(mask, dtype=bool)
        ref = dict(self.domain_ref)
        ref["n_cells"] = int(mask.sum())
        if subdomain is not None:
            ref["fingerprint"] = subdomain.fingerprint
        return OperatorMatrix(self.entries[np.ix_(mask, mask)], self.params, ref, self.diagonal_rule)

    def header(self):
        return {
            "n": self.n,
            "h": self.domain_ref["h"],
            "alpha": self.params.alpha,
            "dim": self.params.dim,
            "domain_hash": self.domain_ref["fingerprint"],
            "diagonal_rule": self.diagonal_rule,
            "dtype": "<f8",
            "order": "row-major",
        }

    def dump(self, path):
        """Write `<path>.json` (header) and `<path>.bin` (little-endian float64, row-major)."""
        with open(f"{path}.json", "w") as file:
            json.dump(self.header(), file, indent=4)
        np.ascontiguousarray(self.entries, dtype="<f8").tofile(f"{path}.bin")
        log_action(f"matrix n={self.n} dumped to {path}.bin", action_type="OUTPUT")

    @classmethod
    def load_dump(cls, path, params):
        with open(f"{path}.json", "r") as file:
            header = json.load(file)
        entries = np.fromfile(f"{path}.bin", dtype="<f8").reshape(header["n"], header["n"])
        ref = {"h": header["h"], "n_cells": header["n"], "fingerprint": header["domain_hash"]}
        return cls(entries, params, ref, header["diagonal_rule"])


def assemble(params, domain, max_cells=MAX_CELLS, diagonal_rule="ball"):
    """
    Nystrom matrix of the Riesz potential with a corrected diagonal.

    Off-diagonal entries are kernel_eval(|x_i - x_j|) * h^d, each unordered
    pair computed once; the diagonal is the self term of one cell.

    Args:
        params (RieszParams): Kernel parameters.
        domain (GridDomain): Cells to collocate on.
        max_cells (int): Dense allocation guard.
        diagonal_rule (str): "ball" (default) or "subdivided".

    Returns:
        OperatorMatrix: Symmetric, strictly positive matrix.

    Raises:
        DomainError: On a dimension mismatch or unknown diagonal rule.
        CapacityError: If the domain has more than max_cells cells.
    """
    if params.dim != domain.dim:
        raise DomainError(f"params dim {params.dim} does not match domain dim {domain.dim}")
    if diagonal_rule not in DIAGONAL_RULES:
        raise DomainError(f"unknown diagonal rule {diagonal_rule!r}, expected one of {DIAGONAL_RULES}")
    n = domain.n_cells
    if n > max_cells:
        raise CapacityError(f"{n} cells exceed the dense assembly limit of {max_cells}")

    weight = domain.h**domain.dim
    entries = np.empty((n, n))
    if n > 1:
        pair_values = kernel_eval(params, pdist(domain.centers)) * weight
        entries = squareform(pair_values, checks=False)
    if diagonal_rule == "ball":
        diagonal = self_term(params, domain.h)
    else:
        diagonal = self_term_subdivided(params, domain.h)
    np.fill_diagonal(entries, diagonal)

    ref = {"h": domain.h, "n_cells": n, "fingerprint": domain.fingerprint}
    log_action(
        f"assembled n={n} alpha={params.alpha} d={params.dim} h={domain.h:g} "
        f"domain={ref['fingerprint']} rule={diagonal_rule}",
        action_type="ASSEMBLE",
    )
    return OperatorMatrix(entries, params, ref, diagonal_rule)


def assemble_interval_exact(params, n, h):
    """
    1D reference matrix with every cell integral taken exactly (antiderivative r^alpha / alpha).

    Entry (i, j) is the integral of the kernel over cell j seen from the
    center of cell i; on a uniform grid it depends on |i - j| only.
    """
    if params.dim != 1:
        raise DomainError("the exact-integration reference matrix is one-dimensional")
    a = params.alpha
    k = np.arange(n, dtype=float)
    column = params.c / a * (((k + 0.5) * h) ** a - (np.abs(k - 0.5) * h) ** a)
    column[0] = params.c * 2.0 * (h / 2.0) ** a / a  # both half-cells
    entries = toeplitz(column)
    ref = {"h": h, "n_cells": n, "fingerprint": "interval-exact"}
    return OperatorMatrix(entries, params, ref, "exact")
