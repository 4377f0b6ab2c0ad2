"""Radial grids, finite-difference calculus per angular sector, quadrature.

Functions on R^d of the form f(r) Y_l(omega) are stored through their radial
part f sampled at the cell centres r_i = (i - 1/2) h, i = 1..N, N = r_max/h.
There is no node at the origin.  The ghost cell at r = -h/2 is the mirror of
the first cell (even sectors) or its negative (odd sectors), and the Dirichlet
wall sits exactly at the last cell face r_max (odd mirror ghost).

Two diagonal weightings are carried by a grid:

* ``mass``: cell volumes in which every stencil built here is exactly
  symmetric (Laplacian) or antisymmetric (dilation generator).  All operator
  inner products use it.
* ``weights``: a high-order (endpoint-corrected trapezoid) quadrature for
  integrals of smooth functions against r^(d-1) dr.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

PARITY_NAMES = {"even": 0, "odd": 1, "radial": 0}
D_MAX = 10
D_EXTENDED = 12


class GridError(ValueError):
    pass


def _sector_index(d, sector):
    if isinstance(sector, str):
        if sector not in PARITY_NAMES:
            raise GridError(f"unknown sector {sector!r}")
        sector = PARITY_NAMES[sector]
    sector = int(sector)
    if sector < 0:
        raise GridError("sector index must be >= 0")
    if d == 1 and sector > 1:
        raise GridError("d = 1 only has the even (0) and odd (1) sectors")
    return sector


@lru_cache(maxsize=None)
def _bernoulli(n):
    b = [Fraction(1)]
    for m in range(1, n + 1):
        s = sum(Fraction(_binom(m + 1, k)) * b[k] for k in range(m))
        b.append(-s / (m + 1))
    return tuple(b)


def _binom(n, k):
    from math import comb
    return comb(n, k)


@lru_cache(maxsize=None)
def gregory_corrections(m):
    """Endpoint corrections c_0..c_{m-1} added to the midpoint-rule weights.

    With these at both ends the rule integrates polynomials of degree < m
    exactly on a cell-centred mesh of at least 2m cells.
    """
    bern = _bernoulli(m + 1)
    rhs = [Fraction(0)] * m
    for j in range(1, m, 2):
        # Euler-Maclaurin end term for the midpoint rule uses B_n(1/2)
        rhs[j] = (Fraction(2) ** (-j) - 1) * bern[j + 1] / (j + 1)
    # exact Vandermonde solve, sum_k c_k (k + 1/2)^j = rhs_j
    a = [[(Fraction(k) + Fraction(1, 2)) ** j for k in range(m)] for j in range(m)]
    for col in range(m):
        piv = next(r for r in range(col, m) if a[r][col] != 0)
        a[col], a[piv] = a[piv], a[col]
        rhs[col], rhs[piv] = rhs[piv], rhs[col]
        for r in range(m):
            if r != col and a[r][col] != 0:
                f = a[r][col] / a[col][col]
                a[r] = [x - f * y for x, y in zip(a[r], a[col])]
                rhs[r] -= f * rhs[col]
    return np.array([float(rhs[k] / a[k][k]) for k in range(m)])


@dataclass(frozen=True, eq=False)
class RadialGrid:
    d: int
    sector: int
    h: float
    r_max: float
    n: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)
    boundary: str = "dirichlet"
    kappa: float = 0.0

    @property
    def r_wall(self):
        return self.n * self.h

    @property
    def parity(self):
        return "even" if self.sector % 2 == 0 else "odd"

    @property
    def centrifugal(self):
        return self.sector * (self.sector + self.d - 2)

    def descriptor(self):
        return {"d": self.d, "sector": self.sector, "h": self.h, "r_max": self.r_max,
                "n": self.n, "boundary": self.boundary, "kappa": self.kappa}

    def with_sector(self, sector):
        return make_grid(self.d, sector, self.h, self.r_max, self.boundary, self.kappa,
                         extended=self.d > D_MAX)

    def same_mesh(self, other):
        return (self.d == other.d and self.n == other.n and self.h == other.h)

    # inner products in the stencil (mass) weighting
    def inner(self, f, g):
        return np.sum(self.mass * np.conj(g) * f)

    def norm(self, f):
        return float(np.sqrt(np.sum(self.mass * np.abs(f) ** 2)))

    def integrate(self, f):
        return np.sum(self.weights * f)


def make_grid(d, sector, h, r_max, boundary="dirichlet", kappa=0.0, extended=False):
    """Staggered grid r_i = (i - 1/2) h on one sector.

    ``extended`` admits d up to D_EXTENDED for out-of-range comparison rows.
    """
    top = D_EXTENDED if extended else D_MAX
    if not isinstance(d, (int, np.integer)) or not 1 <= d <= top:
        raise GridError(f"d must be an integer in [1, {top}], got {d!r}")
    if not h > 0:
        raise GridError("h must be positive")
    if not r_max >= 10 * h * (1 - 1e-12):
        raise GridError("r_max must be at least 10 h")
    if boundary not in ("dirichlet", "robin"):
        raise GridError(f"unknown boundary {boundary!r}")
    d = int(d)
    ell = _sector_index(d, sector)
    n = int(round(r_max / h))
    nodes = h * (np.arange(1, n + 1, dtype=float) - 0.5)
    return RadialGrid(d, ell, float(h), float(r_max), n, nodes,
                      _quadrature_weights(d, h, n), _mass(d, h, nodes),
                      boundary, float(kappa))


def _quadrature_weights(d, h, n):
    m = min(12, n // 2)
    c = gregory_corrections(m)
    w = np.ones(n)
    w[:m] += c
    w[n - m:] += c[::-1]
    r = h * (np.arange(1, n + 1) - 0.5)
    return h * w * r ** (d - 1)


def _mass(d, h, nodes):
    # finite-volume cells [r_i - h/2, r_i + h/2]
    return ((nodes + h / 2) ** d - (nodes - h / 2) ** d) / d


def faces(grid):
    """Cell faces 0, h, ..., N h."""
    return grid.h * np.arange(grid.n + 1, dtype=float)


@dataclass(eq=False)
class RadialFunction:
    grid: RadialGrid
    values: np.ndarray
    tail: dict | None = None
    real: bool = True

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.grid.n,):
            raise GridError(f"expected {self.grid.n} values, got {v.shape}")
        if self.real:
            if np.iscomplexobj(v):
                if np.any(v.imag != 0):
                    raise GridError("real-flagged function has imaginary part")
                v = v.real
            v = v.astype(float)
        else:
            v = v.astype(complex)
        self.values = v

    @property
    def r(self):
        return self.grid.nodes


@dataclass(eq=False)
class OperatorMatrix:
    """Scalar (1x1) or 2x2 arrangement of sparse banded blocks on one sector."""
    grid: RadialGrid
    blocks: list
    hermitian_flag: bool = False
    antisymmetric_flag: bool = False
    bandwidth: int = 1
    label: str = ""

    @property
    def shape_blocks(self):
        return len(self.blocks)

    @property
    def matrix(self):
        if len(self.blocks) == 1:
            return sp.csr_matrix(self.blocks[0][0])
        return sp.bmat(self.blocks, format="csr")

    def dense(self):
        return self.matrix.toarray()

    def weight(self):
        return np.tile(self.grid.mass, len(self.blocks))

    def __matmul__(self, v):
        return self.matrix @ v

    def adjoint(self):
        """Adjoint in the mass-weighted pairing, M^-1 A^H M."""
        w = self.weight()
        a = sp.diags(1 / w) @ self.matrix.conj().T @ sp.diags(w)
        return sp.csr_matrix(a)

    def symmetry_defect(self):
        """max |A - A*| / max |A| in the weighted pairing."""
        a = self.matrix
        diff = a - self.adjoint()
        if self.antisymmetric_flag:
            diff = a + self.adjoint()
        big = abs(a).max()
        return float(abs(diff).max() / big) if big else 0.0


def _diag_op(grid, values, **kw):
    return OperatorMatrix(grid, [[sp.diags(np.asarray(values), 0, format="csr")]], **kw)


def stiffness(grid):
    """Symmetric matrix S with (-Delta u, u)_mass = u^T S u (sector term included)."""
    d, h = grid.d, grid.h
    area = faces(grid) ** (d - 1)
    left = area[:-1].copy()
    right = area[1:].copy()
    # origin face: odd mirror ghost gives a Dirichlet flux, even mirror none
    left[0] = 2 * left[0] if grid.sector % 2 else 0.0
    # wall face: odd mirror (Dirichlet) or Robin ghost
    if grid.boundary == "robin":
        right[-1] = right[-1] * grid.kappa * h / (1 + grid.kappa * h / 2)
    else:
        right[-1] = 2 * right[-1]
    diag = (left + right) / h
    off = -area[1:-1] / h
    s = sp.diags([off, diag, off], [-1, 0, 1], format="csr")
    if grid.centrifugal:
        # weights that make the regular solution r^l discretely harmonic at every
        # node; mass / r^2 agrees to O(h^2) far out but leaves an O(1/h) defect
        # near the origin for d >= 3
        ell = grid.sector
        r = grid.nodes
        rf = faces(grid)
        out = rf[1:] ** (d - 1) * ((r + h) ** ell - r ** ell)
        inn = rf[:-1] ** (d - 1) * (r ** ell - (r - h) ** ell)
        w = (out - inn) / (h * grid.centrifugal * r ** ell)
        s = s + sp.diags(grid.centrifugal * w)
    return sp.csr_matrix(s)


def laplacian(grid):
    s = stiffness(grid)
    a = -sp.diags(1 / grid.mass) @ s
    return OperatorMatrix(grid, [[sp.csr_matrix(a)]], hermitian_flag=True, label="laplacian")


def _flux_antisym(grid, flux):
    """M^-1 K with K antisymmetric, K[i, i+1] = flux at the shared face.

    Ghost couplings through the origin and wall faces are dropped, which keeps
    K exactly antisymmetric (the origin face has zero flux anyway for d >= 2).
    """
    up = flux[1:-1]
    k = sp.diags([-up, up], [-1, 1], format="csr")
    return sp.csr_matrix(sp.diags(1 / grid.mass) @ k)


def lambda0(grid, s_c=0.0):
    """Dilation generator d/2 + r d/dr (minus s_c if given), exactly antisymmetric."""
    flux = 0.5 * faces(grid) ** grid.d
    a = _flux_antisym(grid, flux)
    if s_c:
        a = sp.csr_matrix(a - s_c * sp.identity(grid.n))
    return OperatorMatrix(grid, [[a]], antisymmetric_flag=not s_c, label="lambda0")


def lambda_phi(grid, chi):
    """chi Lambda0 + (r chi')/2, the symmetrised dilation with profile r chi(r)."""
    rf = faces(grid)
    flux = 0.5 * chi(rf) * rf ** grid.d
    return OperatorMatrix(grid, [[_flux_antisym(grid, flux)]], antisymmetric_flag=True,
                          label="lambda_R")


def multiply(grid, values):
    return _diag_op(grid, values, hermitian_flag=bool(np.isrealobj(values)))


def radial_derivative(grid, values):
    """Second-order central d/dr with the sector ghost at the origin."""
    u = np.asarray(values)
    h = grid.h
    ext = np.zeros(u.size + 2, dtype=u.dtype)
    ext[1:-1] = u
    ext[0] = -u[0] if grid.sector % 2 else u[0]
    return (ext[2:] - ext[:-2]) / (2 * h)


def identity(grid):
    return sp.identity(grid.n, format="csr")


def resample(f: RadialFunction, target: RadialGrid) -> RadialFunction:
    src = f.grid
    if target.r_max > src.r_max * (1 + 1e-12):
        raise GridError("resample would extrapolate beyond the source domain")
    if target.sector % 2 != src.sector % 2:
        raise GridError("parity mismatch between source and target sectors")
    if src.same_mesh(target) and src.r_max == target.r_max:
        return RadialFunction(target, f.values.copy(), f.tail, f.real)
    sign = 1.0 if src.sector % 2 == 0 else -1.0
    r = np.concatenate([-src.nodes[::-1], src.nodes])
    v = f.values
    vals = np.concatenate([sign * v[::-1], v])
    if f.real:
        out = CubicSpline(r, vals)(target.nodes)
    else:
        out = CubicSpline(r, vals.real)(target.nodes) + 1j * CubicSpline(r, vals.imag)(target.nodes)
    return RadialFunction(target, out, None, f.real)


def schrodinger(grid, potential, shift=1.0):
    """-Delta + shift - potential on one sector (real potential -> hermitian)."""
    s = stiffness(grid)
    pot = np.broadcast_to(np.asarray(potential), (grid.n,))
    a = sp.diags(1 / grid.mass) @ s + sp.diags(shift - pot)
    return OperatorMatrix(grid, [[sp.csr_matrix(a)]],
                          hermitian_flag=bool(np.isrealobj(pot)))
