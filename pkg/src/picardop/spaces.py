"""Discretized function spaces: interval grids, grid functions, direct sums, and norms.

All values are immutable after construction and all operations are pure, so
they can be shared freely across threads. Arithmetic is 64-bit floating point.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from .errors import NonFiniteError

NORM_KINDS = ("discrete-L2", "sup", "direct-sum")


def _require_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what} must be finite (no NaN/Inf)")


class Grid:
    """Quadrature grid on an interval: strictly increasing points, positive weights.

    The weights must sum to the interval length (within 1e-12 relative), so that
    ``sum(w_j * y_j)`` approximates the integral of ``y`` over ``[a, b]``.
    """

    def __init__(self, points, weights, rule: str | None = None):
        points = np.array(points, dtype=float)
        weights = np.array(weights, dtype=float)
        if points.ndim != 1 or weights.ndim != 1 or points.size != weights.size:
            raise ValueError("points and weights must be 1-D arrays of equal length")
        if points.size < 2:
            raise ValueError("grid needs at least 2 points")
        _require_finite(points, "grid points")
        _require_finite(weights, "grid weights")
        if not np.all(np.diff(points) > 0):
            raise ValueError("grid points must be strictly increasing")
        if not np.all(weights > 0):
            raise ValueError("grid weights must be positive")
        span = float(points[-1] - points[0])
        if abs(float(weights.sum()) - span) > 1e-12 * max(abs(span), 1.0):
            raise ValueError("grid weights must sum to b - a")
        points.setflags(write=False)
        weights.setflags(write=False)
        self.points = points
        self.weights = weights
        self.rule = rule

    @property
    def a(self) -> float:
        return float(self.points[0])

    @property
    def b(self) -> float:
        return float(self.points[-1])

    @property
    def n(self) -> int:
        return int(self.points.size)

    def __len__(self) -> int:
        return self.points.size

    def matches(self, other: "Grid") -> bool:
        return self is other or (
            self.points.size == other.points.size
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    def __repr__(self) -> str:
        return f"Grid(a={self.a}, b={self.b}, n={self.n}, rule={self.rule!r})"


def grid_uniform(a: float, b: float, n: int, rule: str = "trapezoid") -> Grid:
    """Equispaced grid on [a, b] with composite trapezoid or Simpson weights.

    Trapezoid weights are h/2 at the endpoints and h in the interior; Simpson
    weights are h/3 * [1, 4, 2, 4, ..., 4, 1] and need an odd point count.
    """
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    if n < 2:
        raise ValueError(f"need n >= 2 grid points, got {n}")
    points = np.linspace(a, b, n)
    h = (b - a) / (n - 1)
    if rule == "trapezoid":
        weights = np.full(n, h)
        weights[0] = weights[-1] = h / 2
    elif rule == "simpson":
        if n < 3 or n % 2 == 0:
            raise ValueError("simpson rule needs an odd number of points (>= 3)")
        weights = np.full(n, 2 * h / 3)
        weights[1::2] = 4 * h / 3
        weights[0] = weights[-1] = h / 3
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    return Grid(points, weights, rule=rule)


def grid_to_json(grid: Grid) -> dict:
    """Serialize a uniform grid as ``{a, b, n, rule}``."""
    if grid.rule is None:
        raise ValueError("only grids built by grid_uniform serialize to {a, b, n, rule}")
    return {"a": grid.a, "b": grid.b, "n": grid.n, "rule": grid.rule}


def grid_from_json(obj: dict) -> Grid:
    return grid_uniform(float(obj["a"]), float(obj["b"]), int(obj["n"]),
                        rule=obj.get("rule", "trapezoid"))


class GridFunction:
    """A function sampled on a grid: one finite value per grid point."""

    def __init__(self, grid: Grid, values):
        values = np.array(values, dtype=float)
        if values.ndim != 1 or values.size != grid.n:
            raise ValueError(f"expected {grid.n} values on the grid, got shape {values.shape}")
        _require_finite(values, "grid function values")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def __repr__(self) -> str:
        return f"GridFunction(n={self.grid.n}, values={self.values!r})"


class DirectSumVector:
    """Element of a direct sum of component spaces, stored as per-block vectors.

    The direct-sum norm is the *sum* of the component L2 norms, so that for
    disjoint block concatenation the norm is additive.
    """

    def __init__(self, blocks: Sequence, block_dims: Sequence[int] | None = None):
        arrs = [np.array(b, dtype=float) for b in blocks]
        if not arrs:
            raise ValueError("need at least one block")
        for b in arrs:
            if b.ndim != 1:
                raise ValueError("blocks must be 1-D vectors")
            _require_finite(b, "block values")
            b.setflags(write=False)
        dims = tuple(b.size for b in arrs)
        if block_dims is not None and tuple(block_dims) != dims:
            raise ValueError(f"block_dims {tuple(block_dims)} do not match actual dims {dims}")
        self.blocks = tuple(arrs)
        self.block_dims = dims

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def total_dim(self) -> int:
        return sum(self.block_dims)

    def is_uniform(self) -> bool:
        return len(set(self.block_dims)) == 1

    def stacked(self) -> np.ndarray:
        """Blocks as an (n_blocks, d) matrix; requires uniform block dims."""
        if not self.is_uniform():
            raise ValueError("blocks have mixed dimensions")
        return np.stack(self.blocks)

    @classmethod
    def from_matrix(cls, M) -> "DirectSumVector":
        M = np.asarray(M, dtype=float)
        if M.ndim != 2:
            raise ValueError("expected a 2-D matrix, one row per block")
        return cls(list(M))

    def __repr__(self) -> str:
        return f"DirectSumVector(n_blocks={self.n_blocks}, block_dims={self.block_dims})"


VectorLike = Union[np.ndarray, GridFunction, DirectSumVector]


def norm(x, kind: str = "discrete-L2") -> float:
    """Norm of a vector-like value.

    discrete-L2 is sqrt(sum of squares), sup is the max absolute entry, and
    direct-sum is the sum of per-block L2 norms (a plain vector counts as a
    single block).
    """
    if kind not in NORM_KINDS:
        raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")
    if isinstance(x, DirectSumVector):
        if kind == "direct-sum":
            return float(sum(np.linalg.norm(b) for b in x.blocks))
        flat = np.concatenate(x.blocks)
        if kind == "sup":
            return float(np.max(np.abs(flat)))
        return float(np.linalg.norm(flat))
    values = x.values if isinstance(x, GridFunction) else np.asarray(x, dtype=float)
    if kind == "sup":
        return float(np.max(np.abs(values))) if values.size else 0.0
    return float(np.linalg.norm(values.ravel()))


def direct_sum_norm(x: DirectSumVector) -> float:
    """Sum of the per-block L2 norms."""
    return norm(x, "direct-sum")


def lincomb(a: float, x, b: float, y):
    """Elementwise a*x + b*y for two vector-like values of matching shape."""
    if isinstance(x, GridFunction) or isinstance(y, GridFunction):
        if not (isinstance(x, GridFunction) and isinstance(y, GridFunction)
                and x.grid.matches(y.grid)):
            raise ValueError("grid functions must live on the same grid")
        return GridFunction(x.grid, a * x.values + b * y.values)
    if isinstance(x, DirectSumVector) or isinstance(y, DirectSumVector):
        if not (isinstance(x, DirectSumVector) and isinstance(y, DirectSumVector)
                and x.block_dims == y.block_dims):
            raise ValueError("direct-sum vectors must share block structure")
        return DirectSumVector([a * bx + b * by for bx, by in zip(x.blocks, y.blocks)])
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape:
        raise ValueError(f"shape mismatch: {xa.shape} vs {ya.shape}")
    out = a * xa + b * ya
    _require_finite(out, "linear combination")
    return out


def zero_like(x):
    """The zero element of the space x lives in."""
    if isinstance(x, GridFunction):
        return GridFunction(x.grid, np.zeros(x.grid.n))
    if isinstance(x, DirectSumVector):
        return DirectSumVector([np.zeros(d) for d in x.block_dims])
    return np.zeros_like(np.asarray(x, dtype=float))


def flatten_values(x) -> np.ndarray:
    """All numeric entries of a vector-like value as one flat array."""
    if isinstance(x, GridFunction):
        return x.values
    if isinstance(x, DirectSumVector):
        return np.concatenate(x.blocks)
    return np.asarray(x, dtype=float).ravel()


def unflatten_like(template, flat):
    """Rebuild a vector-like value with the template's structure from flat entries."""
    flat = np.asarray(flat, dtype=float)
    if isinstance(template, GridFunction):
        return template.with_values(flat)
    if isinstance(template, DirectSumVector):
        blocks, start = [], 0
        for d in template.block_dims:
            blocks.append(flat[start:start + d])
            start += d
        return DirectSumVector(blocks)
    return flat.reshape(np.asarray(template).shape)


def load_matrix_text(path) -> np.ndarray:
    """Read a numeric matrix: whitespace- or comma-separated values, one row per line."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(tok) for tok in line.replace(",", " ").split()])
    if not rows:
        raise ValueError(f"no numeric rows in {path}")
    if len({len(r) for r in rows}) != 1:
        raise ValueError(f"ragged rows in {path}")
    return np.array(rows, dtype=float)


def load_vector_text(path) -> np.ndarray:
    """Read a numeric vector from text; accepts one value per line or one row."""
    return load_matrix_text(path).ravel()
