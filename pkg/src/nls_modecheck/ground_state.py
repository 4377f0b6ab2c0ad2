"""Ground state of Delta Q - Q + Q^p = 0 and the profiles derived from it."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp
from scipy.special import kve

from .radial_core import (GridError, RadialFunction, RadialGrid, lambda0, make_grid,
                          radial_derivative, schrodinger)

PACK_VERSION = 1
RTOL = 1e-12


class ShootingError(RuntimeError):
    def __init__(self, msg, bracket=None):
        super().__init__(msg if bracket is None else f"{msg}; last bracket {bracket}")
        self.bracket = bracket


def critical_power(d):
    return 1.0 + 4.0 / d


@dataclass(eq=False)
class GroundStatePack:
    d: int
    p: float
    Q: RadialFunction
    dQ: RadialFunction | None = None      # radial part of grad Q, l = 1 sector
    Q1: RadialFunction | None = None
    Q2: RadialFunction | None = None
    xQ: RadialFunction | None = None
    x2Q: RadialFunction | None = None
    rho: RadialFunction | None = None
    shoot_value: float = float("nan")
    residual: float = float("nan")
    trace: dict = field(default_factory=dict)

    @property
    def grid(self) -> RadialGrid:
        return self.Q.grid

    @property
    def complete(self):
        return self.rho is not None

    def to_json(self):
        return json.dumps(pack_record(self), indent=1)

    @classmethod
    def from_json(cls, text):
        return pack_from_record(json.loads(text))


def _rhs(d, p):
    def f(r, y):
        q, dq = y
        return [dq, q - q * abs(q) ** (p - 1) - (d - 1) / r * dq]
    return f


def _start(d, p, a, r0):
    c2 = (a - a ** p) / (2 * d)
    c4 = c2 * (1 - p * a ** (p - 1)) / (4 * (d + 2))
    return [a + c2 * r0 ** 2 + c4 * r0 ** 4, 2 * c2 * r0 + 4 * c4 * r0 ** 3]


def _outward(d, p, a, r_end, dense=False, r0=1e-3):
    def crossing(r, y):
        return y[0]
    crossing.terminal = True
    crossing.direction = -1

    def turning(r, y):
        return y[1]
    turning.terminal = True
    turning.direction = 1

    return solve_ivp(_rhs(d, p), (r0, r_end), _start(d, p, a, r0), method="DOP853",
                     rtol=RTOL, atol=1e-300, events=[crossing, turning],
                     dense_output=dense)


def _classify(sol):
    """+1: overshoot (sign change), -1: undershoot (turns up), 0: neither."""
    if sol.t_events[0].size:
        return 1
    if sol.t_events[1].size:
        return -1
    return 0


def _bracket(d, p, r_end):
    lo = 1.0
    hi = 2.0
    while _classify(_outward(d, p, hi, r_end)) != 1:
        lo = hi
        hi *= 2
        if hi > 1e8:
            raise ShootingError("no overshooting initial value found", (lo, hi))
    if _classify(_outward(d, p, lo, r_end)) != -1:
        raise ShootingError("lower shooting value does not undershoot", (lo, hi))
    return lo, hi


def _bisect(d, p, r_end, maxiter=200):
    lo, hi = _bracket(d, p, r_end)
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        kind = _classify(_outward(d, p, mid, r_end))
        if kind == 1:
            hi = mid
        elif kind == -1:
            lo = mid
        else:
            return mid, (lo, hi)
    return 0.5 * (lo + hi), (lo, hi)


def _decaying_branch(d, r):
    """r^(1-d/2) K_{d/2-1}(r) e^r and its log-derivative (free decaying solution)."""
    nu = d / 2 - 1
    k = r ** (-nu) * kve(nu, r)
    # d/dr [r^-nu K_nu(r)] = -r^-nu K_{nu+1}(r)
    dk = -r ** (-nu) * kve(nu + 1, r)
    return k, dk / k


def _inward(d, p, log_c, r_end, r_match):
    k, dlog = _decaying_branch(d, r_end)
    q = np.exp(log_c - r_end) * k
    return solve_ivp(_rhs(d, p), (r_end, r_match), [q, q * dlog], method="DOP853",
                     rtol=RTOL, atol=1e-300, dense_output=True)


def solve_ground_state(d, p=None, grid=None, tol=1e-10, r_end=None):
    """Positive radial decaying solution sampled on ``grid`` (radial sector).

    Bisection on Q(0) between overshooting and undershooting trajectories, then a
    two-sided Newton polish: the outward solution is matched at r_match to an
    inward solution launched on the free decaying branch far beyond r_max.
    """
    p = critical_power(d) if p is None else float(p)
    if p <= 1:
        raise ValueError("p must exceed 1")
    if grid is None:
        grid = make_grid(d, 0, 0.01, 30.0)
    if grid.sector != 0 or grid.d != d:
        raise GridError("ground state needs the radial sector of the same dimension")
    if tol < 1e-12:
        raise ValueError("tol must be >= 1e-12")
    r_end = max(grid.r_wall + 1.0, 40.0) if r_end is None else r_end

    a, bracket = _bisect(d, p, r_end)
    probe = _outward(d, p, bracket[0], r_end, dense=True)
    # match where Q has dropped by two decades: far enough out that the inward
    # solution is launched deep in the linear regime, close enough that the
    # outward shot is insensitive to Newton steps in Q(0)
    rs = np.linspace(probe.t[0], probe.t[-1], 4000)
    qs = probe.sol(rs)[0]
    below = np.nonzero(qs <= 1e-2 * a)[0]
    r_match = float(rs[below[0]]) if below.size else float(rs[-1])
    q_m = probe.sol(r_match)[0]
    k, _ = _decaying_branch(d, r_match)
    log_c = float(np.log(q_m / k) + r_match)

    def mismatch(x):
        a_, lc = x
        out = _outward(d, p, a_, r_match, dense=True)
        if out.status != 0 or out.t[-1] < r_match:
            raise ShootingError("outward trajectory terminated before matching point",
                                bracket)
        inn = _inward(d, p, lc, r_end, r_match)
        yo, yi = out.y[:, -1], inn.y[:, -1]
        scale = abs(yo[0]) + abs(yo[1])
        return np.array([(yo[0] - yi[0]) / scale, (yo[1] - yi[1]) / scale]), out, inn

    x = np.array([a, log_c])
    history = []
    for _ in range(30):
        f, out, inn = mismatch(x)
        err = float(np.max(np.abs(f)))
        history.append(err)
        if err <= tol:
            break
        jac = np.empty((2, 2))
        for j, step in enumerate((1e-7 * x[0], 1e-7)):
            xp = x.copy()
            xp[j] += step
            jac[:, j] = (mismatch(xp)[0] - f) / step
        dx = np.linalg.solve(jac, -f)
        x = x + dx
    else:
        raise ShootingError("Newton stagnation in two-sided matching", bracket)

    r = grid.nodes
    q = np.empty(grid.n)
    dq = np.empty(grid.n)
    left = r <= r_match
    q[left], dq[left] = out.sol(r[left])
    if not left.all():
        q[~left], dq[~left] = inn.sol(r[~left])
    trace = {"bracket": list(bracket), "r_match": r_match, "r_end": r_end,
             "newton_history": history}
    Q = RadialFunction(grid, q)
    pack = GroundStatePack(d, p, Q, dQ=RadialFunction(grid.with_sector(1), dq),
                           shoot_value=float(x[0]), residual=history[-1], trace=trace)
    return pack


def discrete_residual(pack):
    """||Delta_h Q - Q + Q^p|| / ||Q|| in the grid pairing."""
    g = pack.grid
    q = pack.Q.values
    res = -(schrodinger(g, 0.0) @ q) + q * np.abs(q) ** (pack.p - 1)
    return g.norm(res) / g.norm(q)


def l_plus(pack, grid=None):
    grid = pack.grid if grid is None else grid
    q = pack.Q.values
    return schrodinger(grid, pack.p * np.abs(q) ** (pack.p - 1))


def l_minus(pack, grid=None):
    grid = pack.grid if grid is None else grid
    q = pack.Q.values
    return schrodinger(grid, np.abs(q) ** (pack.p - 1))


def derive_profiles(pack: GroundStatePack) -> GroundStatePack:
    g = pack.grid
    q = pack.Q.values
    r = g.nodes
    lam = lambda0(g)
    q1 = lam @ q
    q2 = lam @ q1
    g1 = g.with_sector(1)
    pack.Q1 = RadialFunction(g, q1)
    pack.Q2 = RadialFunction(g, q2)
    pack.xQ = RadialFunction(g1, r * q)
    pack.x2Q = RadialFunction(g, r ** 2 * q)
    if pack.dQ is None:
        pack.dQ = RadialFunction(g1, radial_derivative(g, q))
    a = l_plus(pack).matrix.tocsc()
    lu = spla.splu(a)
    rho = lu.solve(r ** 2 * q)
    # one step of refinement and a cheap condition estimate
    rho += lu.solve(r ** 2 * q - a @ rho)
    cond = spla.onenormest(a) * spla.onenormest(spla.LinearOperator(
        a.shape, matvec=lu.solve, rmatvec=lambda v: lu.solve(v, trans="T")))
    if not np.all(np.isfinite(rho)):
        raise np.linalg.LinAlgError(f"L+ solve failed, condition estimate {cond:.3e}")
    pack.rho = RadialFunction(g, rho)
    pack.trace["lplus_condition"] = float(cond)
    return pack


def ground_state_pack(d, h=0.01, r_max=30.0, tol=1e-10, extended=False):
    """Convenience: solve at the critical power and derive every profile."""
    grid = make_grid(d, 0, h, r_max, extended=extended)
    return derive_profiles(solve_ground_state(d, None, grid, tol))


def fit_tail(f, window=None):
    """Least-squares fit log|f| = c - kappa r - beta log r on a window of radii."""
    g = f.grid
    lo, hi = window if window is not None else (0.6 * g.r_max, 0.9 * g.r_max)
    r = g.nodes
    sel = (r >= lo) & (r <= hi)
    if sel.sum() < 10:
        raise ValueError("tail window shorter than 10 nodes")
    v = f.values[sel]
    if np.iscomplexobj(v):
        mag = np.abs(v)
    else:
        if np.any(np.sign(v) != np.sign(v[0])):
            raise ValueError("sign change inside tail window")
        mag = np.abs(v)
    if np.any(mag == 0):
        raise ValueError("function vanishes inside tail window")
    rs = r[sel]
    a = np.column_stack([np.ones_like(rs), -rs, -np.log(rs)])
    coef, *_ = np.linalg.lstsq(a, np.log(mag), rcond=None)
    resid = float(np.sqrt(np.mean((a @ coef - np.log(mag)) ** 2)))
    return {"kappa": float(coef[1]), "beta": float(coef[2]), "c": float(coef[0]),
            "residual": resid, "window": [float(lo), float(hi)]}


def pohozaev_gradient_check(pack):
    """||grad Q||^2 from the -Delta quadratic form and from a gradient quadrature."""
    g = pack.grid
    q = pack.Q.values
    form = float(g.inner(schrodinger(g, 0.0, shift=0.0) @ q, q).real)
    grad = radial_derivative(g, q)
    quad = float(g.integrate(grad ** 2))
    return form, quad


# serialization ------------------------------------------------------------

def _fn_record(f):
    if f is None:
        return None
    rec = {"sector": f.grid.sector, "real": f.real}
    if f.real:
        rec["values"] = [repr(float(x)) for x in f.values]
    else:
        rec["re"] = [repr(float(x)) for x in f.values.real]
        rec["im"] = [repr(float(x)) for x in f.values.imag]
    return rec


def _fn_from(rec, grid):
    if rec is None:
        return None
    g = grid if rec["sector"] == grid.sector else grid.with_sector(rec["sector"])
    if rec["real"]:
        vals = np.array([float(x) for x in rec["values"]])
    else:
        vals = np.array([float(x) for x in rec["re"]]) + 1j * np.array(
            [float(x) for x in rec["im"]])
    return RadialFunction(g, vals, real=rec["real"])


def pack_record(pack):
    g = pack.grid
    trace = dict(pack.trace)
    return {
        "kind": "GroundStatePack", "version": PACK_VERSION,
        "grid": g.descriptor(), "d": pack.d, "p": repr(pack.p),
        "shoot_value": repr(pack.shoot_value), "residual": repr(pack.residual),
        "trace": json.loads(json.dumps(trace, default=float)),
        "functions": {name: _fn_record(getattr(pack, name))
                      for name in ("Q", "dQ", "Q1", "Q2", "xQ", "x2Q", "rho")},
    }


def pack_from_record(rec):
    if rec.get("kind") != "GroundStatePack" or rec.get("version") != PACK_VERSION:
        raise ValueError("not a supported GroundStatePack record")
    gd = rec["grid"]
    grid = make_grid(gd["d"], gd["sector"], gd["h"], gd["r_max"], gd["boundary"], gd["kappa"],
                     extended=gd["d"] > 10)
    fns = {k: _fn_from(v, grid) for k, v in rec["functions"].items()}
    return GroundStatePack(rec["d"], float(rec["p"]), shoot_value=float(rec["shoot_value"]),
                           residual=float(rec["residual"]), trace=rec["trace"], **fns)
