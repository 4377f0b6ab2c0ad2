"""Constrained Rayleigh quotients for L+-, L1, L2 on the ground state."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .ground_state import GroundStatePack, ground_state_pack
from .radial_core import RadialGrid, schrodinger, stiffness

OPERATORS = ("L+", "L-", "L1", "L2")

# orthogonality families, split by sector (0 radial, 1 for l = 1)
ORTHO = {
    "ortho1": {"L+": {0: ("Q", "x2Q"), 1: ("xQ",)},
               "L-": {0: ("Q1", "rho"), 1: ()}},
    "ortho2": {"L+": {0: ("Q", "Q1"), 1: ("xQ",)},
               "L-": {0: ("Q1", "Q2"), 1: ("dQ",)}},
}
ORTHO["ortho1"]["L1"] = ORTHO["ortho2"]["L+"]
ORTHO["ortho1"]["L2"] = ORTHO["ortho2"]["L-"]
ORTHO["ortho2"]["L1"] = ORTHO["ortho2"]["L+"]
ORTHO["ortho2"]["L2"] = ORTHO["ortho2"]["L-"]


def mu_d(d, sector=0):
    """Weight exponent: 11/10 only for the radial sector in d = 2."""
    return 1.1 if d == 2 and sector == 0 else 1.0


class CoercivityError(RuntimeError):
    pass


@dataclass
class CoercivitySpec:
    operator: str
    d: int
    sectors: tuple = (0, 1)
    constraints: str = "ortho2"
    norm: str | None = None          # "H1" or "H1dot+weighted"; default by operator

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ValueError(f"unknown operator {self.operator}")
        if self.norm is None:
            self.norm = "H1" if self.operator in ("L+", "L-") else "H1dot+weighted"

    def names(self, sector):
        if self.constraints == "none":
            return ()
        table = ORTHO[self.constraints][self.operator]
        return table.get(min(sector, 1), ()) if sector <= 1 else ()


@dataclass
class SectorResult:
    sector: int
    lam_min: float
    lam_unconstrained: float
    b_min: float
    kkt: float
    minimizer: np.ndarray = field(repr=False)
    n: int = 0


@dataclass
class MinReport:
    spec: CoercivitySpec
    h: float
    sectors: dict
    drift: dict = field(default_factory=dict)

    def lam(self, sector):
        return self.sectors[sector].lam_min


def operator_form(gs: GroundStatePack, op, grid: RadialGrid):
    """Symmetric matrix of the quadratic form (A u, u) in the mass pairing."""
    p = gs.p
    q = gs.Q.values
    qp = q ** (p - 1)
    if op == "L+":
        m = schrodinger(grid, p * qp)
    elif op == "L-":
        m = schrodinger(grid, qp)
    else:
        dq = gs.dQ.values
        # r Q' Q^(p-2) = r (Q'/Q) Q^(p-1)
        v = 0.5 * (p - 1) * grid.nodes * dq / q * qp
        m = schrodinger(grid, -(p if op == "L1" else 1.0) * v, shift=0.0)
    a = (np.diag(grid.mass) @ m.dense())
    return 0.5 * (a + a.T)


def norm_form(grid: RadialGrid, kind):
    s = stiffness(grid).toarray()
    if kind == "H1":
        w = grid.mass
    else:
        w = grid.mass * (1 + grid.nodes ** 2) ** (-mu_d(grid.d, grid.sector))
    return s + np.diag(w)


def weighted_norm_form(grid: RadialGrid):
    return np.diag(grid.mass * (1 + grid.nodes ** 2) ** (-mu_d(grid.d, grid.sector)))


def _constraint_matrix(gs, names, grid):
    """Columns M c_i, so that <u, c_i> = u . (M c_i)."""
    cols = []
    for nm in names:
        f = getattr(gs, nm)
        if f is None:
            raise CoercivityError(f"profile {nm} missing from the ground-state pack")
        if f.grid.sector % 2 != grid.sector % 2:
            raise CoercivityError(f"profile {nm} lives in another sector")
        cols.append(grid.mass * f.values)
    return np.column_stack(cols) if cols else np.zeros((grid.n, 0))


def _complement(g):
    """Orthonormal basis of the Euclidean complement of range(g)."""
    n, k = g.shape
    if k == 0:
        return np.eye(n)
    qf, rf = np.linalg.qr(g, mode="complete")
    sv = np.abs(np.diag(rf))
    if sv.min() < 1e-10 * sv.max():
        raise CoercivityError("constraint Gram matrix is numerically singular")
    return qf[:, k:]


def _min_pencil(a, b):
    w, v = sla.eigh(a, b, subset_by_index=[0, 0])
    return float(w[0]), v[:, 0]


def sector_min(gs: GroundStatePack, spec: CoercivitySpec, sector):
    grid = gs.grid.with_sector(sector)
    a = operator_form(gs, spec.operator, grid)
    b = norm_form(grid, spec.norm)
    # Jacobi scaling u = s y before projecting: the cell masses span r^(d-1)
    s = 1 / np.sqrt(np.diag(b))
    a_s = s[:, None] * a * s
    b_s = s[:, None] * b * s
    b_min = float(sla.eigh(b_s, eigvals_only=True, subset_by_index=[0, 0])[0])
    if b_min <= 0:
        raise CoercivityError("norm Gram matrix is not positive definite")
    g = _constraint_matrix(gs, spec.names(sector), grid)
    z = _complement(s[:, None] * g)
    lam, y = _min_pencil(z.T @ a_s @ z, z.T @ b_s @ z)
    u = s * (z @ y)
    lam0, _ = _min_pencil(a_s, b_s)
    # KKT: (A - lam B) u lies in the constraint span
    r = (a - lam * b) @ u
    if g.shape[1]:
        coef, *_ = np.linalg.lstsq(g, r, rcond=None)
        r = r - g @ coef
    kkt = float(np.linalg.norm(r) / np.linalg.norm(a @ u))
    return SectorResult(sector, lam, lam0, b_min, kkt, u, grid.n)


def constrained_min(spec: CoercivitySpec, packs):
    """Smallest constrained generalized eigenvalue per sector on a grid ladder.

    ``packs`` is a list of complete ground-state packs, coarse first; the
    report is for the finest one and carries the relative drift to the next
    coarser rung.
    """
    results = []
    for gs in packs:
        sectors = {s: sector_min(gs, spec, s) for s in spec.sectors if _has_sector(gs.d, s)}
        results.append(sectors)
    fine = results[-1]
    drift = {}
    if len(results) > 1:
        for s, res in fine.items():
            coarse = results[-2][s].lam_min
            drift[s] = abs(coarse - res.lam_min) / abs(res.lam_min)
    return MinReport(spec, packs[-1].grid.h, fine, drift)


def _has_sector(d, sector):
    return sector <= 1 or d >= 2


def _margin_bound(lam0, beta, kappa, alpha1, alpha2, delta):
    e = kappa * delta
    if beta * e >= 1:
        return -np.inf
    return (lam0 * (1 - beta * e) ** 2 - 2 * alpha1 * e * (1 + beta * e)
            - alpha2 * e * e)


def robustness_margin(gs: GroundStatePack, spec: CoercivitySpec, sector, lam0=None,
                      iters=60):
    """Largest delta for which the almost-orthogonal bound keeps half of lam0.

    For |<u, c_i>| <= delta ||u||_w (and ||u||_w <= ||u||_B) split u = z + y
    with y = sum a_j B^-1 M c_j chosen so that z meets the hard constraints.
    With C = (c_i . M B^-1 M c_j), |a| <= kappa delta ||u||_B for
    kappa = sqrt(k) ||C^-1||, and

      (Au, u) >= lam0 (1 - beta kappa delta)^2 - 2 alpha1 kappa delta (1 + beta kappa delta)
                 - alpha2 (kappa delta)^2

    in units of ||u||_B^2, where beta = ||Y||_(l2 -> B),
    alpha1 = ||B^-1/2 A Y|| and alpha2 = ||Y^T A Y||.
    """
    grid = gs.grid.with_sector(sector)
    if lam0 is None:
        lam0 = sector_min(gs, spec, sector).lam_min
    if lam0 <= 0:
        raise CoercivityError("base constrained minimum is not positive")
    g = _constraint_matrix(gs, spec.names(sector), grid)
    k = g.shape[1]
    if k == 0:
        return {"delta": np.inf, "lam0": lam0, "k": 0}
    a = operator_form(gs, spec.operator, grid)
    b = norm_form(grid, spec.norm)
    cb = sla.cho_factor(b)
    y = sla.cho_solve(cb, g)
    cmat = g.T @ y
    kappa = np.sqrt(k) * np.linalg.norm(np.linalg.inv(cmat), 2)
    beta = np.sqrt(np.linalg.eigvalsh(y.T @ b @ y).max())
    ay = a @ y
    alpha1 = np.sqrt(max(np.linalg.eigvalsh(ay.T @ sla.cho_solve(cb, ay)).max(), 0.0))
    alpha2 = np.abs(np.linalg.eigvalsh(0.5 * (y.T @ ay + ay.T @ y))).max()
    lo, hi = 0.0, 1.0 / (beta * kappa)
    target = 0.5 * lam0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _margin_bound(lam0, beta, kappa, alpha1, alpha2, mid) >= target:
            lo = mid
        else:
            hi = mid
    return {"delta": float(lo), "lam0": float(lam0), "k": k, "kappa": float(kappa),
            "beta": float(beta), "alpha1": float(alpha1), "alpha2": float(alpha2),
            "bound_at_zero": float(_margin_bound(lam0, beta, kappa, alpha1, alpha2, 0.0))}


def coercivity_sweep(d_list=range(1, 11), operators=("L1", "L2"), h=0.05, r_max=20.0,
                     sectors=(0, 1, 2), margin_dims=(1, 2, 3), extra_d=(11,), drift_tol=0.05):
    """Table of lam_min per (d, operator, sector) with refinement drift and PASS flag."""
    rows = []
    for d in list(d_list) + list(extra_d):
        ext = d > 10
        packs = [ground_state_pack(d, h=h, r_max=r_max, extended=ext),
                 ground_state_pack(d, h=h / 2, r_max=r_max, extended=ext)]
        for op in operators:
            spec = CoercivitySpec(op, d, tuple(s for s in sectors if _has_sector(d, s)))
            rep = constrained_min(spec, packs)
            for s, res in rep.sectors.items():
                delta = float("nan")
                if d in margin_dims and res.lam_min > 0 and spec.names(s):
                    delta = robustness_margin(packs[-1], spec, s, res.lam_min)["delta"]
                drift = rep.drift.get(s, float("nan"))
                ok = res.lam_min > 0 and drift <= drift_tol
                rows.append({"d": d, "operator": op, "sector": s, "lam_min": res.lam_min,
                             "lam_unconstrained": res.lam_unconstrained, "delta_margin": delta,
                             "drift": drift, "status": "PASS" if ok else "FAIL",
                             "scope": "in" if d <= 10 else "outside verified range",
                             "kkt": res.kkt})
    return rows


SWEEP_FIELDS = ("d", "operator", "sector", "lam_min", "delta_margin", "drift", "status", "scope")


def sweep_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_FIELDS)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in SWEEP_FIELDS])
    return buf.getvalue()


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)
