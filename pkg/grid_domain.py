import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from errors import DomainError, EmptyDomainError, UnsupportedError
from riesz_kernel import ball_volume

OVERLAP_LATTICE_POINTS = 2**18


def _vec(values):
    return tuple(float(v) for v in values)


def _members_overlap(first, second):
    lo = np.maximum(first.bounds()[0], second.bounds()[0])
    hi = np.minimum(first.bounds()[1], second.bounds()[1])
    if not np.all(hi > lo):
        return False
    n = max(8, int(OVERLAP_LATTICE_POINTS ** (1.0 / len(lo))))
    axes = [a + (b - a) * (np.arange(n) + 0.5) / n for a, b in zip(lo, hi)]
    points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
    return bool(np.any(first.contains(points) & second.contains(points)))


def _fmt(values):
    return "[" + ", ".join(repr(float(v)) for v in values) + "]"


# Shapes


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise DomainError(f"ball radius must be > 0, got {self.radius}")

    @property
    def dim(self):
        return len(self.center)

    def contains(self, points):
        return np.sum((points - np.array(self.center)) ** 2, axis=1) < self.radius**2

    def bounds(self):
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def nominal_measure(self):
        return ball_volume(self.dim) * self.radius**self.dim

    def to_expression(self):
        return f"ball(center={_fmt(self.center)}, radius={self.radius!r})"


@dataclass(frozen=True)
class Box:
    corner: tuple
    sides: tuple

    def __post_init__(self):
        object.__setattr__(self, "corner", _vec(self.corner))
        object.__setattr__(self, "sides", _vec(self.sides))
        if len(self.corner) != len(self.sides):
            raise DomainError("box corner and sides must have the same length")
        if min(self.sides) <= 0:
            raise DomainError(f"box sides must be > 0, got {self.sides}")

    @property
    def dim(self):
        return len(self.corner)

    def contains(self, points):
        lo, hi = self.bounds()
        return np.all((points > lo) & (points < hi), axis=1)

    def bounds(self):
        lo = np.array(self.corner)
        return lo, lo + np.array(self.sides)

    def nominal_measure(self):
        return float(np.prod(self.sides))

    def to_expression(self):
        return f"box(corner={_fmt(self.corner)}, sides={_fmt(self.sides)})"


@dataclass(frozen=True)
class Ellipse:
    center: tuple
    semi_axes: tuple

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "semi_axes", _vec(self.semi_axes))
        if len(self.center) != 2 or len(self.semi_axes) != 2:
            raise DomainError("ellipse is defined in dimension 2 only")
        if min(self.semi_axes) <= 0:
            raise DomainError(f"ellipse semi-axes must be > 0, got {self.semi_axes}")

    @property
    def dim(self):
        return 2

    def contains(self, points):
        scaled = (points - np.array(self.center)) / np.array(self.semi_axes)
        return np.sum(scaled**2, axis=1) < 1.0

    def bounds(self):
        c, a = np.array(self.center), np.array(self.semi_axes)
        return c - a, c + a

    def nominal_measure(self):
        return math.pi * self.semi_axes[0] * self.semi_axes[1]

    def to_expression(self):
        return f"ellipse(center={_fmt(self.center)}, semi_axes={_fmt(self.semi_axes)})"


@dataclass(frozen=True)
class Annulus:
    center: tuple
    inner: float
    outer: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "inner", float(self.inner))
        object.__setattr__(self, "outer", float(self.outer))
        if not 0 < self.inner < self.outer:
            raise DomainError(f"annulus needs 0 < inner < outer, got {self.inner}, {self.outer}")

    @property
    def dim(self):
        return len(self.center)

    def contains(self, points):
        r2 = np.sum((points - np.array(self.center)) ** 2, axis=1)
        return (r2 >= self.inner**2) & (r2 < self.outer**2)

    def bounds(self):
        c = np.array(self.center)
        return c - self.outer, c + self.outer

    def nominal_measure(self):
        return ball_volume(self.dim) * (self.outer**self.dim - self.inner**self.dim)

    def to_expression(self):
        return f"annulus(center={_fmt(self.center)}, inner={self.inner!r}, outer={self.outer!r})"


@dataclass(frozen=True)
class Union:
    members: tuple

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise DomainError("union needs at least one member")
        if len({m.dim for m in self.members}) != 1:
            raise DomainError("union members must share one dimension")

    @property
    def dim(self):
        return self.members[0].dim

    def contains(self, points):
        inside = np.zeros(len(points), dtype=bool)
        for member in self.members:
            inside |= member.contains(points)
        return inside

    def bounds(self):
        los, his = zip(*(m.bounds() for m in self.members))
        return np.min(los, axis=0), np.max(his, axis=0)

    def nominal_measure(self):
        """
        Sum of the member measures, for members that do not overlap.

        Overlap is decided by membership on a midpoint lattice of the shared
        bounding box, so members may nest (a ball in an annulus hole) or sit
        diagonally. An overlap thinner than the lattice spacing goes unseen.
        """
        for i, first in enumerate(self.members):
            for second in self.members[i + 1:]:
                if _members_overlap(first, second):
                    raise UnsupportedError("nominal measure of a union with overlapping members")
        return sum(m.nominal_measure() for m in self.members)

    def to_expression(self):
        return "union(" + ", ".join(m.to_expression() for m in self.members) + ")"


@dataclass(frozen=True)
class Translate:
    shape: object
    offset: tuple

    def __post_init__(self):
        object.__setattr__(self, "offset", _vec(self.offset))
        if len(self.offset) != self.shape.dim:
            raise DomainError("translation offset must match the shape dimension")

    @property
    def dim(self):
        return self.shape.dim

    def contains(self, points):
        return self.shape.contains(points - np.array(self.offset))

    def bounds(self):
        lo, hi = self.shape.bounds()
        return lo + np.array(self.offset), hi + np.array(self.offset)

    def nominal_measure(self):
        return self.shape.nominal_measure()

    def to_expression(self):
        return f"translate({self.shape.to_expression()}, offset={_fmt(self.offset)})"


def is_ball(shape):
    while isinstance(shape, Translate):
        shape = shape.shape
    return isinstance(shape, Ball)


def ball_of_measure(measure, dim, center=None):
    radius = (measure / ball_volume(dim)) ** (1.0 / dim)
    return Ball(center if center is not None else [0.0] * dim, radius)


def box_of_measure(measure, dim, aspect=1.0, corner=None):
    """Box of the given measure whose first side is `aspect` times the others."""
    side = (measure / aspect) ** (1.0 / dim)
    sides = [side * aspect] + [side] * (dim - 1)
    return Box(corner if corner is not None else [0.0] * dim, sides)


def l_shape(measure):
    """Planar L made of three equal squares: a tall a x 2a bar plus an a x a foot."""
    a = math.sqrt(measure / 3.0)
    return Union((Box([0.0, 0.0], [a, 2.0 * a]), Box([a, 0.0], [a, a])))


def two_balls(total_measure, distance, dim):
    """
    Two balls of measure total_measure / 2 each, with gap `distance` between them.

    The centers sit on the first axis symmetric about the origin, so on the
    origin-anchored lattice both balls rasterize to mirror images.
    """
    if not total_measure > 0:
        raise DomainError(f"total measure must be > 0, got {total_measure}")
    if distance < 0:
        raise DomainError(f"distance must be >= 0, got {distance}")
    half = ball_of_measure(total_measure / 2.0, dim)
    shift = half.radius + distance / 2.0
    left = [0.0] * dim
    right = [0.0] * dim
    left[0], right[0] = -shift, shift
    return Union((Ball(left, half.radius), Ball(right, half.radius)))


# Grids


class GridDomain:
    """
    Rasterized finite-measure set on the lattice origin + h * (k + 1/2).

    Cells are stored as integer multi-indices in lexicographic order; the
    instance is immutable after construction.

    Attributes:
        dim (int): Ambient dimension.
        h (float): Cell side.
        origin (numpy.ndarray): Lattice anchor (zeros for rasterized shapes).
        indices (numpy.ndarray): (n, dim) integer multi-indices.
    """

    def __init__(self, dim, h, indices, origin=None):
        if not h > 0:
            raise DomainError(f"cell size h must be > 0, got {h}")
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, dim)
        if len(indices):
            indices = np.unique(indices, axis=0)
        indices.flags.writeable = False
        origin = np.zeros(dim) if origin is None else np.array(origin, dtype=float)
        origin.flags.writeable = False
        self.dim = int(dim)
        self.h = float(h)
        self.indices = indices
        self.origin = origin
        self._connected = None

    @property
    def n_cells(self):
        return len(self.indices)

    @property
    def centers(self):
        return self.origin + self.h * (self.indices + 0.5)

    def measure(self):
        if self.n_cells == 0:
            raise DomainError("measure of an empty grid domain")
        return self.n_cells * self.h**self.dim

    @property
    def bounding_box(self):
        lo = self.indices.min(axis=0) - 1
        hi = self.indices.max(axis=0) + 2
        return self.origin + self.h * lo, self.h * (hi - lo).astype(float)

    @property
    def connected(self):
        """Face-adjacency connectivity of the occupied cells."""
        if self._connected is None:
            lo = self.indices.min(axis=0)
            occupied = np.zeros(tuple(self.indices.max(axis=0) - lo + 1), dtype=bool)
            occupied[tuple((self.indices - lo).T)] = True
            _, n_components = ndimage.label(occupied)
            self._connected = n_components == 1
        return self._connected

    @property
    def fingerprint(self):
        digest = hashlib.sha256()
        digest.update(np.array([self.dim, self.h], dtype=float).tobytes())
        digest.update(np.ascontiguousarray(self.origin).tobytes())
        digest.update(np.ascontiguousarray(self.indices).tobytes())
        return digest.hexdigest()[:16]

    def subset(self, mask):
        return GridDomain(self.dim, self.h, self.indices[np.asarray(mask, dtype=bool)], self.origin)

    def to_dict(self):
        corner, sides = self.bounding_box
        return {
            "dim": self.dim,
            "h": self.h,
            "origin": self.origin.tolist(),
            "bounding_box": {"corner": corner.tolist(), "side_lengths": sides.tolist()},
            "cell_indices": self.indices.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["dim"], data["h"], data["cell_indices"], data.get("origin"))

    def save_to_file(self, filename):
        with open(filename, "w") as file:
            json.dump(self.to_dict(), file)

    @classmethod
    def load_from_file(cls, filename):
        with open(filename, "r") as file:
            return cls.from_dict(json.load(file))


def _shape_indices(shape, h):
    if isinstance(shape, Union):
        parts = [_shape_indices(m, h) for m in shape.members]
        return np.concatenate(parts, axis=0)
    if isinstance(shape, Translate) and isinstance(shape.shape, Union):
        moved = Union(tuple(Translate(m, shape.offset) for m in shape.shape.members))
        return _shape_indices(moved, h)
    lo, hi = shape.bounds()
    k_lo = np.ceil(lo / h - 0.5).astype(np.int64)
    k_hi = np.floor(hi / h - 0.5).astype(np.int64)
    if np.any(k_hi < k_lo):
        return np.empty((0, shape.dim), dtype=np.int64)
    axes = [np.arange(a, b + 1) for a, b in zip(k_lo, k_hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, shape.dim)
    return grid[shape.contains(h * (grid + 0.5))]


def rasterize(shape, h):
    """
    Select the lattice cells whose centers lie inside the shape.

    Args:
        shape: Any shape object (Ball, Box, Ellipse, Annulus, Union, Translate).
        h (float): Cell side.

    Returns:
        GridDomain: Cells in lexicographic multi-index order.

    Raises:
        EmptyDomainError: If no cell center falls inside the shape.
    """
    if not h > 0:
        raise DomainError(f"cell size h must be > 0, got {h}")
    indices = _shape_indices(shape, float(h))
    if len(indices) == 0:
        raise EmptyDomainError(f"no cell center of the h={h} lattice lies inside {shape.to_expression()}")
    return GridDomain(shape.dim, h, indices)


def measure(domain):
    return domain.measure()


def ball_rearrangement(domain):
    return ball_of_measure(domain.measure(), domain.dim)


def scale_domain(domain, t):
    return GridDomain(domain.dim, domain.h * t, domain.indices, domain.origin * t)


def ball_cells(dim, h, count):
    """
    The `count` lattice cells nearest to the origin.

    Returns:
        tuple[GridDomain, numpy.ndarray]: The domain (lexicographic order) and
        the (count, dim) multi-indices in distance order, ties broken
        lexicographically.
    """
    if count < 1:
        raise DomainError(f"cell count must be >= 1, got {count}")
    half_width = int(math.ceil((count / ball_volume(dim)) ** (1.0 / dim) + math.sqrt(dim))) + 2
    while True:
        axis = np.arange(-half_width, half_width)
        grid = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
        # squared distance of the centers in units of (h/2)^2: exact integers
        dist2 = np.sum((2 * grid + 1) ** 2, axis=1)
        keys = tuple(grid[:, j] for j in reversed(range(dim))) + (dist2,)
        order = np.lexsort(keys)[:count]
        if dist2[order[-1]] < (2 * half_width - 1) ** 2:
            break
        half_width *= 2
    ordered = grid[order]
    return GridDomain(dim, h, ordered), ordered
