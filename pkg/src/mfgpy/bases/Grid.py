"""Uniform periodic grids on the unit torus and the discrete operators living on them.

Fields are stored as numpy arrays of shape ``grid.shape`` (``(n,)`` or ``(n, n)``),
axis ``k`` being the coordinate ``x_k``. Vector fields carry a leading component
axis, matrix fields two. All arrays are copied and frozen on construction.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from mfgpy.common.errors import ValidationError


SUPPORTED_DIMS = (1, 2)
MIN_POINTS = 8


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in SUPPORTED_DIMS:
            raise ValidationError(f"unsupported dimension: {self.dim} (allowed: {SUPPORTED_DIMS})")
        if not isinstance(self.n, (int, np.integer)) or self.n < MIN_POINTS or self.n % 2:
            raise ValidationError(f"n must be even and ≥ {MIN_POINTS}, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    def axis(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    def coordinates(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*(self.axis(),) * self.dim, indexing="ij"))

    def index_array(self) -> np.ndarray:
        return np.arange(self.size).reshape(self.shape)

    def unravel(self, flat_index: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(flat_index, self.shape))

    def offset_distance(self, offsets: np.ndarray) -> np.ndarray:
        """Torus distance of integer offsets (last axis = dim), each axis wrapped to ≤ 1/2."""
        frac = np.abs(np.asarray(offsets, dtype=float)) * self.h % 1.0
        frac = np.minimum(frac, 1.0 - frac)
        return np.sqrt(np.sum(frac ** 2, axis=-1))


def make_grid(dim: int, n: int) -> TorusGrid:
    return TorusGrid(dim=dim, n=n)


def _freeze(values: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{name} values must be finite")
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape:
            if values.size != self.grid.size:
                raise ValidationError(
                    f"scalar field has {values.size} values, grid has {self.grid.size} points")
            values = values.reshape(self.grid.shape)
        object.__setattr__(self, "values", _freeze(values, "scalar field"))

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        expected = (self.grid.dim, *self.grid.shape)
        if values.shape != expected:
            raise ValidationError(f"vector field shape {values.shape} does not match {expected}")
        object.__setattr__(self, "values", _freeze(values, "vector field"))

    def norm_squared(self) -> np.ndarray:
        return np.sum(self.values ** 2, axis=0)


@dataclass(frozen=True, eq=False)
class MatrixField:
    """Symmetric d×d matrix per grid point; ingestion replaces A by (A + Aᵀ)/2."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        dim, shape = self.grid.dim, self.grid.shape
        if dim == 1 and values.shape == shape:
            values = values.reshape((1, 1, *shape))
        if values.ndim == 2 and values.shape == (dim, dim):
            values = np.broadcast_to(values.reshape(dim, dim, *(1,) * dim), (dim, dim, *shape))
        if values.shape != (dim, dim, *shape):
            raise ValidationError(f"matrix field shape {values.shape} does not match {(dim, dim, *shape)}")
        values = 0.5 * (values + np.swapaxes(values, 0, 1))
        object.__setattr__(self, "values", _freeze(values, "matrix field"))

    @classmethod
    def identity(cls, grid: TorusGrid) -> "MatrixField":
        return cls(grid, np.eye(grid.dim))

    def pointwise(self) -> np.ndarray:
        """Matrices moved to the trailing axes, shape (*grid.shape, d, d)."""
        return np.moveaxis(self.values, (0, 1), (-2, -1))

    def quadratic_form(self, p: np.ndarray) -> np.ndarray:
        """p A pᵀ pointwise for p of shape (d, *grid.shape)."""
        return np.einsum("i...,ij...,j...->...", p, self.values, p)

    def apply(self, p: np.ndarray) -> np.ndarray:
        """A p pointwise for p of shape (d, *grid.shape)."""
        return np.einsum("ij...,j...->i...", self.values, p)


def _check_same_grid(*fields) -> TorusGrid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise ValidationError("fields live on different grids")
    return grid


def _shift(a: np.ndarray, step: int, axis: int) -> np.ndarray:
    """Value at index i + step along axis (periodic)."""
    return np.roll(a, -step, axis=axis)


def gradient(u: ScalarField) -> VectorField:
    grid = u.grid
    comps = [(_shift(u.values, 1, k) - _shift(u.values, -1, k)) / (2 * grid.h) for k in range(grid.dim)]
    return VectorField(grid, np.stack(comps))


def _corner_average(a: np.ndarray, dim: int) -> np.ndarray:
    """Average over the 2^d nodes of the cell whose lowest corner is the index."""
    for k in range(dim):
        a = 0.5 * (a + _shift(a, 1, k))
    return a


def _edge_weight(corner: np.ndarray, k: int, dim: int) -> np.ndarray:
    """Mean of the corner averages touching the edge from index i to i + e_k."""
    for other in range(dim):
        if other != k:
            corner = 0.5 * (corner + _shift(corner, -1, other))
    return corner


def div_A_grad(u: ScalarField, A: MatrixField, weight: ScalarField | None = None) -> ScalarField:
    """div(A Duᵀ) in conservative flux form; the caller negates.

    With ``weight`` the flux becomes w A Duᵀ, w taken as the mean of its two
    endpoint values on each edge and as the cell average at corners.
    """
    grid = _check_same_grid(u, A) if weight is None else _check_same_grid(u, A, weight)
    dim, h = grid.dim, grid.h
    corners = {(k, l): _corner_average(A.values[k, l], dim) for k in range(dim) for l in range(dim)}
    jumps = [_shift(u.values, 1, k) - u.values for k in range(dim)]
    w = np.ones(grid.shape) if weight is None else weight.values
    w_corner = _corner_average(w, dim)

    out = np.zeros(grid.shape)
    for k in range(dim):
        w_edge = 0.5 * (w + _shift(w, 1, k))
        flux = w_edge * _edge_weight(corners[k, k], k, dim) * jumps[k] / h
        for l in range(dim):
            if l == k:
                continue
            # derivative along l at the corners, then averaged back onto the k-edge
            corner_slope = (jumps[l] + _shift(jumps[l], 1, k)) / (2 * h)
            cross = w_corner * corners[k, l] * corner_slope
            flux = flux + 0.5 * (cross + _shift(cross, -1, l))
        out += (flux - _shift(flux, -1, k)) / h
    return ScalarField(grid, out)


def div_A_grad_matrix(A: MatrixField) -> sp.csr_matrix:
    """Sparse matrix L with L @ u.flat == div_A_grad(u, A).flat."""
    grid = A.grid
    dim, h = grid.dim, grid.h
    idx = grid.index_array()
    corners = {(k, l): _corner_average(A.values[k, l], dim) for k in range(dim) for l in range(dim)}

    rows, cols, data = [], [], []

    def push(r, c, w):
        rows.append(r.ravel())
        cols.append(c.ravel())
        data.append(np.broadcast_to(w, r.shape).ravel())

    for k in range(dim):
        a, b = idx, _shift(idx, 1, k)
        w = _edge_weight(corners[k, k], k, dim)
        push(a, a, w)
        push(b, b, w)
        push(a, b, -w)
        push(b, a, -w)

    if dim == 2:
        n00 = idx
        n10 = _shift(idx, 1, 0)
        n01 = _shift(idx, 1, 1)
        n11 = _shift(n10, 1, 1)
        nodes = (n00, n10, n01, n11)
        sx = (-1.0, 1.0, -1.0, 1.0)
        sy = (-1.0, -1.0, 1.0, 1.0)
        c12 = corners[0, 1]
        for p, node_p in enumerate(nodes):
            for q, node_q in enumerate(nodes):
                coef = 0.25 * (sx[p] * sy[q] + sy[p] * sx[q])
                if coef:
                    push(node_p, node_q, coef * c12)

    stiffness = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size),
    ).tocsr()
    return -stiffness / h ** 2


def gradient_matrices(grid: TorusGrid) -> list[sp.csr_matrix]:
    """Central-difference matrices G_k with G_k @ u.flat == gradient(u).values[k].flat."""
    idx = grid.index_array().ravel()
    mats = []
    for k in range(grid.dim):
        fwd = _shift(grid.index_array(), 1, k).ravel()
        bwd = _shift(grid.index_array(), -1, k).ravel()
        rows = np.concatenate([idx, idx])
        cols = np.concatenate([fwd, bwd])
        vals = np.concatenate([np.full(grid.size, 1.0), np.full(grid.size, -1.0)]) / (2 * grid.h)
        mats.append(sp.csr_matrix((vals, (rows, cols)), shape=(grid.size, grid.size)))
    return mats


def integrate(f: ScalarField) -> float:
    return float(f.grid.cell_volume * np.sum(f.values))


def linf_norm(f: ScalarField | VectorField) -> float:
    return float(np.max(np.abs(f.values)))


def l2_norm(f: ScalarField) -> float:
    return float(np.sqrt(integrate(f.with_values(f.values ** 2))))
