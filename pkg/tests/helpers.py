"""Shared builders for the test suite.

Random states are band-limited trigonometric fields, so they are exactly
periodic on the grid and smooth enough that finite-difference cross-checks
are meaningful. Everything O(1)-scaled: structural identities (skewness,
gradient consistency, dual evaluation routes) are checked away from the
geophysical magnitudes, where float64 cancellation would mask real defects.
"""

import numpy as np

from tswrom.fom import Physics, State
from tswrom.grid import build_diff_ops, build_grid

SEED = 20260815


def small_setup(n=8, length=2.0 * np.pi):
    """Grid and difference operators on [0, length)^2."""
    grid = build_grid(n, (0.0, length, 0.0, length))
    return grid, build_diff_ops(grid)


def smooth_field(grid, rng, amplitude=1.0, modes=3):
    """Random band-limited doubly periodic field, O(amplitude)."""
    xx, yy = grid.meshcoords()
    kx = 2.0 * np.pi / grid.lx
    ky = 2.0 * np.pi / grid.ly
    out = np.zeros(grid.N)
    for _ in range(modes):
        ax, ay = rng.integers(1, 4, size=2)
        px, py = rng.uniform(0.0, 2.0 * np.pi, size=2)
        out += rng.normal() * np.cos(ax * kx * xx + px) * np.cos(ay * ky * yy + py)
    return amplitude * out / modes


def random_state(grid, rng, depth=2.0):
    """Positive-depth O(1) state with smooth random fields."""
    h = depth + smooth_field(grid, rng, 0.6)
    u = smooth_field(grid, rng, 1.0)
    v = smooth_field(grid, rng, 1.0)
    s = 3.0 + smooth_field(grid, rng, 0.8)
    return State.from_fields(h, u, v, s)


def random_physics(grid, rng, flat=False):
    """O(1) physics; a gentle bottom profile unless flat is requested."""
    b = np.zeros(grid.N) if flat else 0.3 + smooth_field(grid, rng, 0.2)
    return Physics(f=0.83, g=1.37, b=b)
