"""Uniform grids, discrete Dirichlet Laplacian eigenbases and quadrature.

Two kinds of domain are supported: axis-aligned boxes (any dimension), whose
eigenpairs are tensor products of discrete sine vectors and are applied with
the fast sine transform, and 2D masks (a boolean raster of interior nodes),
whose eigenpairs come from a dense symmetric eigensolver.

Grid functions are plain 1D float arrays with one value per interior node in
the grid's node order; coefficient vectors are ordered by ascending eigenvalue.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse

DENSE_EIG_CAP = 6000


class GridError(ValueError):
    """Invalid grid or mask configuration."""


class BasisMismatch(ValueError):
    """A field or coefficient vector does not belong to the given basis."""


@dataclass(frozen=True, eq=False)
class DomainGrid:
    """Interior nodes of a uniform grid with zero Dirichlet data outside.

    For ``kind == "box"`` nodes are stored in C order over ``shape``.  For
    ``kind == "mask2d"`` they are the True cells of ``mask`` in C order, with
    raster cell ``(i, j)`` located at ``origin + ((i + 1) h, (j + 1) h)``.
    """

    kind: str
    bounds: tuple
    h: tuple
    shape: tuple
    points: np.ndarray
    cells: np.ndarray = field(repr=False)
    flat: np.ndarray = field(repr=False)
    mask: np.ndarray | None = None
    origin: tuple = (0.0, 0.0)

    @property
    def ndim(self) -> int:
        return len(self.h)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def weight(self) -> float:
        """Quadrature weight (cell volume) shared by every node."""
        return float(np.prod(self.h))

    @property
    def diameter(self) -> float:
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return float(np.linalg.norm(hi - lo))

    def raster(self, u: np.ndarray) -> np.ndarray:
        """Embed a grid function into its full raster (zeros outside the domain)."""
        u = np.asarray(u)
        if self.kind == "box":
            return u.reshape(self.shape)
        out = np.zeros(self.mask.shape, dtype=u.dtype)
        out[self.mask] = u
        return out

    def node_index(self, multi_index) -> int:
        """Flat node number of a raster multi-index; raises if it is not interior."""
        multi_index = tuple(int(i) for i in multi_index)
        if any(i < 0 or i >= n for i, n in zip(multi_index, self.flat.shape)) or self.flat[multi_index] < 0:
            raise GridError(f"{multi_index} is not an interior node")
        return int(self.flat[multi_index])

    def multi_index(self, node: int) -> tuple:
        return tuple(int(i) for i in self.cells[node])

    def nearest_node(self, x) -> int:
        d = np.linalg.norm(self.points - np.asarray(x, dtype=float)[None, :], axis=1)
        return int(np.argmin(d))

    def neighbor(self, node: int, axis: int, step: int) -> int | None:
        """Node ``step`` cells away along ``axis`` or None if that is outside."""
        idx = list(self.multi_index(node))
        idx[axis] += step
        try:
            return self.node_index(idx)
        except GridError:
            return None

    def boundary_distance(self, node: int) -> int:
        """Number of interior cells between ``node`` and the nearest exterior cell along grid lines."""
        if self.kind == "box":
            idx = self.cells[node]
            return int(min(np.minimum(idx + 1, np.asarray(self.shape) - idx)))
        dist = 10**9
        for axis in range(self.ndim):
            for step in (1, -1):
                k = 0
                cur = node
                while cur is not None:
                    k += 1
                    cur = self.neighbor(node, axis, step * k)
                dist = min(dist, k)
        return dist


def box_grid(bounds, h) -> DomainGrid:
    """Grid on the box ``prod [a_i, b_i]`` with spacing ``h`` (scalar or per axis)."""
    bounds = tuple((float(a), float(b)) for a, b in bounds)
    hs = np.broadcast_to(np.asarray(h, dtype=float), (len(bounds),))
    if np.any(hs <= 0):
        raise GridError("spacing must be positive")
    shape = []
    for (a, b), hi in zip(bounds, hs):
        if not b > a:
            raise GridError(f"empty interval ({a}, {b})")
        cells = (b - a) / hi
        m = int(round(cells))
        if abs(cells - m) > 1e-9 * max(1.0, cells):
            raise GridError(f"spacing {hi} does not divide the side ({a}, {b})")
        if m < 2:
            raise GridError("need at least one interior node per axis")
        shape.append(m - 1)
    shape = tuple(shape)
    cells = np.stack([g.ravel() for g in np.meshgrid(*[np.arange(m) for m in shape], indexing="ij")], axis=1)
    points = np.array([a for a, _ in bounds]) + (cells + 1) * hs
    flat = np.arange(cells.shape[0]).reshape(shape)
    return DomainGrid("box", bounds, tuple(float(x) for x in hs), shape, points, cells, flat)


def _components(mask: np.ndarray) -> int:
    seen = np.zeros_like(mask, dtype=bool)
    count = 0
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        count += 1
        seen[start] = True
        queue = deque([start])
        while queue:
            i, j = queue.popleft()
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                a, b = i + di, j + dj
                if 0 <= a < mask.shape[0] and 0 <= b < mask.shape[1] and mask[a, b] and not seen[a, b]:
                    seen[a, b] = True
                    queue.append((a, b))
    return count


def is_connected(mask: np.ndarray) -> bool:
    """Edge-connectivity of the True cells, by flood fill."""
    mask = np.asarray(mask, dtype=bool)
    return mask.any() and _components(mask) == 1


def mask_grid(mask, h: float, origin=(0.0, 0.0)) -> DomainGrid:
    mask = np.array(mask, dtype=bool)
    if mask.ndim != 2:
        raise GridError("mask must be a 2D raster")
    if h <= 0:
        raise GridError("spacing must be positive")
    if not is_connected(mask):
        raise GridError("mask is empty or not edge-connected")
    cells = np.stack(np.nonzero(mask), axis=1)
    points = np.asarray(origin, dtype=float) + (cells + 1) * h
    flat = -np.ones(mask.shape, dtype=np.int64)
    flat[mask] = np.arange(cells.shape[0])
    bounds = (
        (origin[0], origin[0] + (mask.shape[0] + 1) * h),
        (origin[1], origin[1] + (mask.shape[1] + 1) * h),
    )
    return DomainGrid("mask2d", bounds, (float(h), float(h)), mask.shape, points, cells, flat, mask, tuple(origin))


def read_mask(path) -> tuple[np.ndarray, float]:
    """Read a 0/1 raster whose first line is ``rows cols h``."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise GridError("mask header must be 'rows cols h'")
        rows, cols, h = int(header[0]), int(header[1]), float(header[2])
        body = [line.strip() for line in fh if line.strip()]
    data = np.array([[int(c) for c in line.replace(" ", "")] for line in body], dtype=int)
    if data.shape != (rows, cols):
        raise GridError(f"mask body is {data.shape}, header says {(rows, cols)}")
    return data.astype(bool), h


def write_mask(path, mask: np.ndarray, h: float) -> None:
    mask = np.asarray(mask, dtype=bool)
    with open(path, "w") as fh:
        fh.write(f"{mask.shape[0]} {mask.shape[1]} {h!r}\n")
        for row in mask.astype(int):
            fh.write("".join(str(v) for v in row) + "\n")


def stencil_matrix(grid: DomainGrid) -> scipy.sparse.csr_matrix:
    """Second-order finite-difference -Laplacian on the interior nodes."""
    n = grid.size
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.full(n, sum(2.0 / hi**2 for hi in grid.h))]
    for axis, hi in enumerate(grid.h):
        lo = [slice(None)] * grid.ndim
        up = [slice(None)] * grid.ndim
        lo[axis] = slice(None, -1)
        up[axis] = slice(1, None)
        a = grid.flat[tuple(lo)].ravel()
        b = grid.flat[tuple(up)].ravel()
        keep = (a >= 0) & (b >= 0)
        a, b = a[keep], b[keep]
        rows += [a, b]
        cols += [b, a]
        vals += [np.full(a.size, -1.0 / hi**2)] * 2
    return scipy.sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def apply_stencil(grid: DomainGrid, u: np.ndarray) -> np.ndarray:
    """Apply the -Laplacian stencil (zero values outside the domain)."""
    full = np.pad(grid.raster(np.asarray(u, dtype=float)), 1)
    out = np.zeros_like(full)
    core = tuple(slice(1, -1) for _ in range(grid.ndim))
    for axis, hi in enumerate(grid.h):
        fwd = list(core)
        bwd = list(core)
        fwd[axis] = slice(2, None)
        bwd[axis] = slice(None, -2)
        out[core] += (2.0 * full[core] - full[tuple(fwd)] - full[tuple(bwd)]) / hi**2
    out = out[core]
    return out.ravel() if grid.kind == "box" else out[grid.mask]


class SpectralBasis:
    """Eigenpairs of the discrete Dirichlet Laplacian on a grid.

    Eigenvectors are normalized in the weighted inner product
    ``<u, v> = sum_i w u_i v_i``.  Subclasses implement the forward/backward
    transforms; everything else is expressed through them.
    """

    grid: DomainGrid
    eigenvalues: np.ndarray
    orthonormality_tol = 1e-10

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    def _check_field(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.grid.size,):
            raise BasisMismatch(f"field of shape {u.shape} does not match {self.grid.size} nodes")
        return u

    def _check_coeffs(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if a.shape != (self.size,):
            raise BasisMismatch(f"coefficients of shape {a.shape} do not match {self.size} modes")
        return a

    def analyze(self, u) -> np.ndarray:
        """Weighted projections a_k = <u, phi_k>."""
        return self._analyze(self._check_field(u))

    def synthesize(self, a) -> np.ndarray:
        """Grid function sum_k a_k phi_k."""
        return self._synthesize(self._check_coeffs(a))

    def apply_spectral(self, u, multiplier) -> np.ndarray:
        """Apply the matrix function with eigenvalue multipliers ``multiplier``."""
        return self._synthesize(self._analyze(self._check_field(u)) * multiplier)

    def eigenvector(self, k: int) -> np.ndarray:
        e = np.zeros(self.size)
        e[k] = 1.0
        return self._synthesize(e)

    def eigenvectors(self) -> np.ndarray:
        """Dense matrix whose columns are the eigenvectors (small grids only)."""
        return self._synthesize_many(np.eye(self.size))

    def inner(self, u, v) -> float:
        return float(self.grid.weight * np.dot(u, v))

    def _synthesize_many(self, coeffs: np.ndarray) -> np.ndarray:
        return np.stack([self._synthesize(c) for c in coeffs.T], axis=1)


class BoxBasis(SpectralBasis):
    """Analytic sine basis of a box; transforms are fast type-I sine transforms."""

    def __init__(self, grid: DomainGrid):
        if grid.kind != "box":
            raise GridError("BoxBasis needs a box grid")
        self.grid = grid
        per_axis = []
        for n_int, hi in zip(grid.shape, grid.h):
            k = np.arange(1, n_int + 1)
            per_axis.append((4.0 / hi**2) * np.sin(k * np.pi / (2 * (n_int + 1))) ** 2)
        self.axis_eigenvalues = per_axis
        lam = per_axis[0]
        for extra in per_axis[1:]:
            lam = np.add.outer(lam, extra)
        lam = np.asarray(lam).ravel()
        self._order = np.argsort(lam, kind="stable")
        self._inverse = np.empty_like(self._order)
        self._inverse[self._order] = np.arange(self._order.size)
        self.eigenvalues = lam[self._order]
        self._sqrt_w = np.sqrt(grid.weight)

    def _analyze(self, u):
        c = scipy.fft.dstn(u.reshape(self.grid.shape), type=1, norm="ortho").ravel()
        return c[self._order] * self._sqrt_w

    def _synthesize(self, a):
        c = np.empty_like(a)
        c[self._order] = a
        return scipy.fft.idstn(c.reshape(self.grid.shape), type=1, norm="ortho").ravel() / self._sqrt_w

    def _synthesize_many(self, coeffs):
        k = coeffs.shape[1]
        c = np.empty_like(coeffs)
        c[self._order] = coeffs
        c = c.reshape(self.grid.shape + (k,))
        axes = tuple(range(self.grid.ndim))
        return scipy.fft.idstn(c, type=1, norm="ortho", axes=axes).reshape(self.grid.size, k) / self._sqrt_w

    def mode_numbers(self) -> np.ndarray:
        """Per-axis wave numbers (1-based) of each eigenvector, in ascending-eigenvalue order."""
        idx = np.stack(np.unravel_index(self._order, self.grid.shape), axis=1)
        return idx + 1

    def eigenvalue_diagonal(self, values) -> np.ndarray:
        """sum_k values_k phi_k(x_i)^2 for every node i, using separability."""
        vals = np.empty_like(np.asarray(values, dtype=float))
        vals[self._order] = values
        vals = vals.reshape(self.grid.shape)
        out = vals
        for axis, n_int in enumerate(self.grid.shape):
            k = np.arange(1, n_int + 1)
            j = np.arange(1, n_int + 1)
            sq = (2.0 / (n_int + 1)) * np.sin(np.outer(j, k) * np.pi / (n_int + 1)) ** 2
            out = np.moveaxis(np.tensordot(sq, np.moveaxis(out, axis, 0), axes=(1, 0)), 0, axis)
        return out.ravel() / self.grid.weight


class MaskBasis(SpectralBasis):
    """Dense eigendecomposition of the 5-point stencil restricted to a mask."""

    def __init__(self, grid: DomainGrid, cap: int = DENSE_EIG_CAP):
        if grid.size > cap:
            raise GridError(f"{grid.size} interior nodes exceed the dense eigensolver cap {cap}; use a coarser grid")
        self.grid = grid
        mat = stencil_matrix(grid).toarray()
        lam, vec = scipy.linalg.eigh(mat, driver="evd")
        self.eigenvalues = lam
        self._vec = vec
        self._sqrt_w = np.sqrt(grid.weight)

    def _analyze(self, u):
        return (self._vec.T @ u) * self._sqrt_w

    def _synthesize(self, a):
        return (self._vec @ a) / self._sqrt_w

    def _synthesize_many(self, coeffs):
        return (self._vec @ coeffs) / self._sqrt_w

    def eigenvalue_diagonal(self, values) -> np.ndarray:
        return (self._vec**2 @ np.asarray(values, dtype=float)) / self.grid.weight


def build_box_basis(bounds, h) -> BoxBasis:
    return BoxBasis(box_grid(bounds, h))


def build_masked_basis(mask, h: float, origin=(0.0, 0.0), cap: int = DENSE_EIG_CAP) -> MaskBasis:
    return MaskBasis(mask_grid(mask, h, origin), cap=cap)


def spectral_transform(basis: SpectralBasis, u, direction: str = "analyze") -> np.ndarray:
    """``analyze`` maps a grid function to coefficients, ``synthesize`` the reverse."""
    if direction == "analyze":
        return basis.analyze(u)
    if direction == "synthesize":
        return basis.synthesize(u)
    raise ValueError(f"unknown direction {direction!r}")


def lp_norm(grid: DomainGrid, u, q: float) -> float:
    """Discrete L^q norm ``(sum_i w |u_i|^q)^(1/q)``; ``q = inf`` gives max |u_i|."""
    u = np.asarray(u, dtype=float)
    if q == np.inf:
        return float(np.max(np.abs(u)))
    if q < 1:
        raise ValueError(f"exponent q={q} must be >= 1")
    return float((grid.weight * np.sum(np.abs(u) ** q)) ** (1.0 / q))
