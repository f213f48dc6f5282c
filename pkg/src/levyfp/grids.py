"""Periodic grids and grid-sampled fields.

Everything downstream lives on a uniform periodic lattice over [-L, L)^d.
Fields are immutable value objects: solvers return new fields instead of
mutating in place, so snapshots can be shared across threads or processes
without copies.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "Grid",
    "ScalarField",
    "DensityField",
    "write_field_csv",
    "read_field_csv",
]


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice on [-L, L)^d, d in {1, 2}.

    Nodes are x_i = -L + i*dx with dx = 2L/N, so index N wraps back to
    index 0.  Angular wavenumbers are xi_j = pi*j/L in FFT ordering, which
    makes exp(i*xi_j*x) exactly periodic on the box.
    """

    dim: int
    n: int
    half_width: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 8 or not _is_power_of_two(int(self.n)):
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")
        if not (np.isfinite(self.half_width) and self.half_width > 0):
            raise ValueError(f"half_width must be a positive finite number, got {self.half_width}")

    @property
    def dx(self) -> float:
        # N is a power of two, so dx * N == 2 * half_width exactly in binary fp.
        return 2.0 * self.half_width / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates: shape (n,) for d=1, (n, n, 2) for d=2."""
        axis = -self.half_width + self.dx * np.arange(self.n)
        if self.dim == 1:
            return axis
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        return np.stack([xx, yy], axis=-1)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers xi_j = pi*j/L in numpy FFT ordering."""
        axis = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)
        if self.dim == 1:
            return axis
        kx, ky = np.meshgrid(axis, axis, indexing="ij")
        return np.stack([kx, ky], axis=-1)

    @cached_property
    def wavenumber_magnitude(self) -> np.ndarray:
        if self.dim == 1:
            return np.abs(self.wavenumbers)
        return np.sqrt(np.sum(self.wavenumbers**2, axis=-1))

    @cached_property
    def radii(self) -> np.ndarray:
        """Euclidean distance of each node from the origin."""
        if self.dim == 1:
            return np.abs(self.nodes)
        return np.sqrt(np.sum(self.nodes**2, axis=-1))

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    def boundary_band(self, fraction: float = 0.05) -> np.ndarray:
        """Boolean mask of the ceil(fraction*n) cells nearest each box edge."""
        width = int(np.ceil(fraction * self.n))
        idx = np.arange(self.n)
        near = (idx < width) | (idx >= self.n - width)
        if self.dim == 1:
            return near
        return near[:, None] | near[None, :]


def _as_values(grid: Grid, values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != grid.shape:
        raise ValueError(f"values shape {arr.shape} does not match grid shape {grid.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field values must be finite")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScalarField:
    """Grid sample of a scalar function, tagged with a timestamp."""

    grid: Grid
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", _as_values(self.grid, self.values))

    def with_values(self, values, t: float | None = None) -> "ScalarField":
        return ScalarField(self.grid, values, self.t if t is None else t)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class DensityField:
    """Grid sample of a (possibly signed) density, tagged with a timestamp."""

    grid: Grid
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", _as_values(self.grid, self.values))

    def with_values(self, values, t: float | None = None) -> "DensityField":
        return DensityField(self.grid, values, self.t if t is None else t)

    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    def moment(self, k: float) -> float:
        """Integral of |x|^k against the density."""
        return float(np.sum(self.grid.radii**k * self.values) * self.grid.cell_volume)

    def variance(self) -> float:
        m = self.mass()
        if abs(m) < 1e-300:
            raise ValueError("variance undefined for zero-mass density")
        if self.grid.dim != 1:
            raise NotImplementedError("variance only implemented for d=1")
        x = self.grid.nodes
        mean = float(np.sum(x * self.values) * self.grid.cell_volume) / m
        return float(np.sum((x - mean) ** 2 * self.values) * self.grid.cell_volume) / m

    def min_value(self) -> float:
        return float(np.min(self.values))

    def boundary_mass(self, fraction: float = 0.05) -> float:
        band = self.grid.boundary_band(fraction)
        return float(np.sum(np.abs(self.values[band])) * self.grid.cell_volume)

    def is_probability(self, tol: float = 1e-6) -> bool:
        return abs(self.mass() - 1.0) <= tol and self.min_value() >= -1e-12


FLOAT_FMT = "%.17g"


def write_field_csv(field, path) -> None:
    """Write a field as CSV with header x,value (x,y,value for d=2)."""
    grid = field.grid
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if grid.dim == 1:
            writer.writerow(["x", "value"])
            for x, v in zip(grid.nodes, field.values):
                writer.writerow([FLOAT_FMT % x, FLOAT_FMT % v])
        else:
            writer.writerow(["x", "y", "value"])
            nodes = grid.nodes.reshape(-1, 2)
            for (x, y), v in zip(nodes, field.values.reshape(-1)):
                writer.writerow([FLOAT_FMT % x, FLOAT_FMT % y, FLOAT_FMT % v])


def read_field_csv(path, kind: str = "density", t: float = 0.0):
    """Read a field CSV written by write_field_csv, reconstructing the grid."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(c) for c in row] for row in reader])
    if header[:2] == ["x", "value"]:
        x, v = rows[:, 0], rows[:, 1]
        n = x.size
        dx = x[1] - x[0]
        if not np.allclose(np.diff(x), dx, rtol=0, atol=1e-12 * abs(dx)):
            raise ValueError("non-uniform x column")
        grid = Grid(1, n, -x[0])
        values = v
    elif header[:3] == ["x", "y", "value"]:
        n = int(round(np.sqrt(rows.shape[0])))
        x = rows[:, 0].reshape(n, n)
        grid = Grid(2, n, -x[0, 0])
        values = rows[:, 2].reshape(n, n)
    else:
        raise ValueError(f"unrecognized field CSV header: {header}")
    cls = DensityField if kind == "density" else ScalarField
    return cls(grid, values, t)
