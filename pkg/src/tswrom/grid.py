"""Periodic uniform grid and sparse centered-difference operators.

Scalar fields live on an n-by-n doubly periodic grid and are stored as flat
vectors of length N = n^2 ordered bottom-to-top within each column of nodes,
columns left to right: entry m = i*n + j holds w(x_i, y_j), so the y index j
is the fastest. With that ordering the x derivative couples whole blocks and
the y derivative acts inside blocks,

    Dx = (1 / 2dx) (C_n kron I_n),   Dy = (1 / 2dy) (I_n kron C_n),

where C_n is the circulant centered-difference stencil (+1 super-, -1
subdiagonal, wrapped corners). Both operators are exactly skew-symmetric and
annihilate constants, which the conservation results downstream rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = ["Grid", "DiffOps", "build_grid", "build_diff_ops", "apply_dx", "apply_dy"]


@dataclass(frozen=True)
class Grid:
    """Uniform n-by-n periodic grid on the rectangle [a, b) x [c, d)."""

    n: int
    extent: tuple[float, float, float, float]

    @property
    def N(self) -> int:
        return self.n * self.n

    @property
    def lx(self) -> float:
        return self.extent[1] - self.extent[0]

    @property
    def ly(self) -> float:
        return self.extent[3] - self.extent[2]

    @property
    def dx(self) -> float:
        return self.lx / self.n

    @property
    def dy(self) -> float:
        return self.ly / self.n

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def x(self) -> np.ndarray:
        """Node x coordinates, length n."""
        return self.extent[0] + self.dx * np.arange(self.n)

    @property
    def y(self) -> np.ndarray:
        """Node y coordinates, length n."""
        return self.extent[2] + self.dy * np.arange(self.n)

    def meshcoords(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat coordinate vectors (length N) in grid ordering."""
        return np.repeat(self.x, self.n), np.tile(self.y, self.n)


@dataclass(frozen=True)
class DiffOps:
    """CSR centered-difference operators bound to their grid."""

    grid: Grid
    dx_op: sp.csr_matrix
    dy_op: sp.csr_matrix


def build_grid(n: int, extent: tuple[float, float, float, float]) -> Grid:
    if n < 3:
        raise ValueError(f"need n >= 3 for a centered periodic stencil, got n={n}")
    a, b, c, d = extent
    if not (b > a and d > c):
        raise ValueError(f"degenerate extent {extent}")
    return Grid(n=int(n), extent=(float(a), float(b), float(c), float(d)))


def _circulant_stencil(n: int) -> sp.csr_matrix:
    # +1 at (i, i+1 mod n), -1 at (i, i-1 mod n): exactly skew-symmetric.
    idx = np.arange(n)
    rows = np.repeat(idx, 2)
    cols = np.empty(2 * n, dtype=np.int64)
    vals = np.empty(2 * n)
    cols[0::2] = (idx + 1) % n
    vals[0::2] = 1.0
    cols[1::2] = (idx - 1) % n
    vals[1::2] = -1.0
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def build_diff_ops(grid: Grid) -> DiffOps:
    """Assemble the sparse x/y derivative operators for a grid."""
    stencil = _circulant_stencil(grid.n)
    eye = sp.identity(grid.n, format="csr")
    dx_op = (sp.kron(stencil, eye) / (2.0 * grid.dx)).tocsr()
    dy_op = (sp.kron(eye, stencil) / (2.0 * grid.dy)).tocsr()
    dx_op.sort_indices()
    dy_op.sort_indices()
    return DiffOps(grid=grid, dx_op=dx_op, dy_op=dy_op)


def _checked(ops: DiffOps, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w)
    if w.shape[0] != ops.grid.N:
        raise ValueError(f"field has length {w.shape[0]}, grid has N={ops.grid.N}")
    return w


def apply_dx(ops: DiffOps, w: np.ndarray) -> np.ndarray:
    """Centered periodic x derivative of a flat field (O(N))."""
    return ops.dx_op @ _checked(ops, w)


def apply_dy(ops: DiffOps, w: np.ndarray) -> np.ndarray:
    """Centered periodic y derivative of a flat field (O(N))."""
    return ops.dy_op @ _checked(ops, w)
