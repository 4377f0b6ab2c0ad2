"""Self-similar profile Q_b by two-parameter shooting, plus WKB helpers."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .ground_state import (GroundStatePack, _fn_from, _fn_record, critical_power,
                           solve_ground_state)
from .radial_core import (GridError, RadialFunction, RadialGrid, lambda0, make_grid,
                          resample, schrodinger)

PROFILE_VERSION = 1
RTOL = 1e-12
R0 = 1e-3
# nodes next to the wall left out of residuals: the power tail of Q_b does not
# vanish there, so the Dirichlet ghost and the truncated dilation flux are
# artefacts of the box, not of the profile
WALL_LAYER = 3


class ProfileError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or {}


def critical_exponent(d, p):
    """s_c = d/2 - 2/(p-1)."""
    return d / 2 - 2 / (p - 1)


def wkb_envelope(b, r):
    """S_b(r): integral of sqrt(1 - b^2 s^2/4) from min(r, 2/b) to 2/b.

    With s = (2/b) sin(t) the integral is (1/b)(pi/2 - t - sin t cos t).
    """
    if b <= 0:
        raise ValueError("b must be positive")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be nonnegative")
    x = np.clip(b * r / 2, 0.0, 1.0)
    t = np.arcsin(x)
    out = (np.pi / 2 - t - x * np.sqrt(1 - x * x)) / b
    return out if out.ndim else float(out)


# ---------------------------------------------------------------- ODE pieces

def _rhs(d, p, b):
    g = 2 / (p - 1)

    def f(r, y):
        q = y[0] + 1j * y[1]
        dq = y[2] + 1j * y[3]
        ddq = (-(d - 1) / r * dq + q - 1j * b * (g * q + r * dq)
               - q * abs(q) ** (p - 1))
        return [dq.real, dq.imag, ddq.real, ddq.imag]
    return f


def _series(d, p, a, b):
    """Taylor coefficients of Q = a + c2 r^2 + c4 r^4 at the origin."""
    g = 2 / (p - 1)
    c2 = (a - a ** p - 1j * b * g * a) / (2 * d)
    c4 = (c2 - 1j * b * c2 * (g + 2)
          - a ** (p - 1) * (c2 + (p - 1) * c2.real)) / (4 * (d + 2))
    return c2, c4


def _start(d, p, a, b, r0=R0):
    c2, c4 = _series(d, p, a, b)
    q = a + c2 * r0 ** 2 + c4 * r0 ** 4
    dq = 2 * c2 * r0 + 4 * c4 * r0 ** 3
    return [q.real, q.imag, dq.real, dq.imag]


def _outward(d, p, a, b, r_end, dense=False):
    return solve_ivp(_rhs(d, p, b), (R0, r_end), _start(d, p, a, b), method="DOP853",
                     rtol=RTOL, atol=1e-14, dense_output=dense)


def wkb_frame(d, p, b, r, nterm=12):
    """Admissible (power) branch V1 and oscillatory branch V2 with derivatives.

    V1 = r^al sum c_k r^-2k,  al = -2/(p-1) - i/b
    V2 = e^{-i b r^2/2} r^be sum e_k r^-2k,  be = -d + 2/(p-1) + i/b
    Both asymptotic series are cut at their smallest term.
    """
    al = -2 / (p - 1) - 1j / b
    be = -d + 2 / (p - 1) + 1j / b

    def sums(expo, sign):
        val = dval = 0j
        coef = 1.0 + 0j
        prev = np.inf
        for k in range(nterm):
            if k:
                coef = sign * coef * (expo - 2 * k + 2) * (expo - 2 * k + d) / (2j * b * k)
            term = coef * r ** (expo - 2 * k)
            if abs(term) > prev:
                break
            val += term
            dval += coef * (expo - 2 * k) * r ** (expo - 2 * k - 1)
            prev = abs(term)
            if prev < 1e-17 * abs(val):
                break
        return val, dval

    v1, dv1 = sums(al, 1.0)
    g, dg = sums(be, -1.0)
    ph = np.exp(-0.5j * b * r * r)
    return v1, dv1, ph * g, ph * (dg - 1j * b * r * g)


def matching_functional(d, p, a0, b, r_match):
    """Non-admissible amplitude at r_match, relative to the admissible part.

    Returns (F, c1, c2) with (Q, Q') = c1 (V1, V1') + c2 (V2, V2').
    """
    sol = _outward(d, p, a0, b, r_match)
    if sol.status != 0:
        raise ProfileError(f"outward integration failed: {sol.message}")
    y = sol.y[:, -1]
    q, dq = y[0] + 1j * y[1], y[2] + 1j * y[3]
    v1, dv1, v2, dv2 = wkb_frame(d, p, b, r_match)
    c1, c2 = np.linalg.solve(np.array([[v1, v2], [dv1, dv2]]), [q, dq])
    return c2 * v2 / abs(c1 * v1), c1, c2


# ---------------------------------------------------------------- types

@dataclass(eq=False)
class ProfileB:
    d: int
    p: float
    b: float
    a0: float
    Qb: RadialFunction
    residual: float = float("nan")
    tail_fit: dict = field(default_factory=dict)
    trace: dict = field(default_factory=dict)
    dQb: RadialFunction | None = None     # Q_b' from the ODE, l = 1 sector

    @property
    def s_c(self):
        return critical_exponent(self.d, self.p)

    @property
    def grid(self) -> RadialGrid:
        return self.Qb.grid

    def to_json(self):
        return json.dumps(profile_record(self), indent=1)

    @classmethod
    def from_json(cls, text):
        return profile_from_record(json.loads(text))


@dataclass(eq=False)
class PotentialSetB:
    W1b: RadialFunction
    W2b: RadialFunction
    Wplus: RadialFunction
    Wminus: RadialFunction
    Nb: RadialFunction


def potentials(profile: ProfileB) -> PotentialSetB:
    g, p = profile.grid, profile.p
    q = profile.Qb.values
    m = np.abs(q)
    w1 = 0.5 * (p + 1) * m ** (p - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        w2 = np.where(m > 0, 0.5 * (p - 1) * m ** (p - 3) * q * q, 0.0)
    return PotentialSetB(RadialFunction(g, w1), RadialFunction(g, w2, real=False),
                         RadialFunction(g, w1 + w2.real), RadialFunction(g, w1 - w2.real),
                         RadialFunction(g, w2.imag))


# ---------------------------------------------------------------- solver

def profile_residual(profile: ProfileB):
    """Relative grid defect of Delta Q - Q + ib(Lambda0 - s_c)Q + Q|Q|^(p-1).

    The last WALL_LAYER nodes are left out.
    """
    g = profile.grid
    q = profile.Qb.values
    res = (-(schrodinger(g, 0.0) @ q)
           + 1j * profile.b * (lambda0(g, profile.s_c) @ q)
           + q * np.abs(q) ** (profile.p - 1))
    res[-WALL_LAYER:] = 0.0
    qq = q.copy()
    qq[-WALL_LAYER:] = 0.0
    return g.norm(res) / g.norm(qq)


# eighth-order central stencils
_D1 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])
_D2 = np.array([-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315,
                -1 / 560])


def continuum_defect(d, p, a0, b, r_hi, step=0.02):
    """Max defect of the shooting solution in the profile ODE on [0, r_hi].

    Samples the integrated solution on an even-mirrored uniform mesh and
    differentiates with eighth-order stencils, so the number reflects the
    accuracy of the continuum profile rather than of a grid operator.
    """
    m = int(np.ceil(r_hi / step))
    r = step * np.arange(1, m + 5)
    sol = _outward(d, p, a0, b, r[-1] + step, dense=True)
    y = sol.sol(r)
    q = y[0] + 1j * y[1]
    ext = np.concatenate([q[3::-1], [a0], q])
    dq = np.convolve(ext, _D1[::-1], mode="valid") / step
    ddq = np.convolve(ext, _D2[::-1], mode="valid") / step ** 2
    qi = ext[4:-4]
    ri = step * np.arange(0, qi.size)
    lap = ddq.copy()
    lap[1:] += (d - 1) / ri[1:] * dq[1:]
    lap[0] *= d   # (d-1)/r Q' -> (d-1) Q'' at the origin
    res = (lap - qi + 1j * b * (2 / (p - 1) * qi + ri * dq)
           + qi * np.abs(qi) ** (p - 1))
    sel = ri <= r_hi
    return float(np.max(np.abs(res[sel])) / abs(a0))


def fit_power_tail(f: RadialFunction, window):
    """Least-squares fit log|f| = c + beta log r + gamma / r^2 on a radial window.

    The gamma term absorbs the leading correction of the asymptotic series,
    which is still a few percent of the slope at r ~ 6/b.
    """
    r = f.grid.nodes
    lo, hi = window
    sel = (r >= lo) & (r <= hi)
    if sel.sum() < 10:
        raise ValueError("tail window shorter than 10 nodes")
    mag = np.abs(f.values[sel])
    if np.any(mag == 0):
        raise ValueError("function vanishes inside tail window")
    a = np.column_stack([np.ones(sel.sum()), np.log(r[sel]), r[sel] ** -2.0])
    coef, *_ = np.linalg.lstsq(a, np.log(mag), rcond=None)
    resid = float(np.sqrt(np.mean((a @ coef - np.log(mag)) ** 2)))
    return {"power": float(coef[1]), "c": float(coef[0]), "gamma": float(coef[2]),
            "residual": resid,
            "window": [float(lo), float(hi)]}


def _sample(d, p, a0, b, grid):
    r = grid.nodes
    q = np.empty(grid.n, dtype=complex)
    dq = np.empty(grid.n, dtype=complex)
    near = r < R0
    c2, c4 = _series(d, p, a0, b)
    q[near] = a0 + c2 * r[near] ** 2 + c4 * r[near] ** 4
    dq[near] = 2 * c2 * r[near] + 4 * c4 * r[near] ** 3
    sol = _outward(d, p, a0, b, grid.r_wall, dense=True)
    if sol.status != 0:
        raise ProfileError(f"sampling integration failed: {sol.message}")
    y = sol.sol(r[~near])
    q[~near] = y[0] + 1j * y[1]
    dq[~near] = y[2] + 1j * y[3]
    return q, dq


def _ground_state_profile(d, grid, tol):
    gs = solve_ground_state(d, None, grid, max(tol, 1e-12))
    prof = ProfileB(d, gs.p, 0.0, gs.shoot_value,
                    RadialFunction(grid, gs.Q.values.astype(complex), real=False),
                    dQb=RadialFunction(grid.with_sector(1), gs.dQ.values.astype(complex),
                                       real=False),
                    trace={"critical": True, "ground_state_trace": gs.trace})
    # outward shooting at b = 0 is unstable far out, so check the core only
    prof.residual = continuum_defect(d, gs.p, gs.shoot_value, 0.0, 8.0)
    prof.trace["grid_residual"] = profile_residual(prof)
    return prof


def solve_profile(d, p, b_guess, a0_guess, grid: RadialGrid, tol=1e-10, r_match=None,
                  maxiter=40):
    """Newton shooting on (a0, b) so that Q_b carries no e^{-ibr^2/2} branch.

    ``tol`` bounds both real components of the matching functional.  At the
    critical power the ground state is returned with b = 0.
    """
    if grid.sector != 0 or grid.d != d:
        raise GridError("profile needs the radial sector of the same dimension")
    p0 = critical_power(d)
    if abs(p - p0) <= 1e-14 * p0:
        return _ground_state_profile(d, grid, tol)
    if p < p0:
        raise ValueError("p must be at least 1 + 4/d")
    if b_guess <= 0 or a0_guess <= 0:
        raise ValueError("seeds must be positive")
    if grid.r_wall < 8 / b_guess:
        raise GridError(f"r_max = {grid.r_wall} below 8/b = {8 / b_guess:.4g}")
    # local wavenumber b r of the oscillatory branch at the wall
    if grid.h * b_guess * grid.r_wall > 0.5:
        raise GridError("grid too coarse for the oscillatory tail (h b r_max > 0.5)")

    def rm(b):
        return 6 / b if r_match is None else r_match

    def fun(x):
        f, _, _ = matching_functional(d, p, x[0], x[1], rm(x[1]))
        return np.array([f.real, f.imag])

    x = np.array([a0_guess, b_guess], dtype=float)
    history = []
    for it in range(maxiter):
        f = fun(x)
        err = float(np.max(np.abs(f)))
        history.append([float(x[0]), float(x[1]), err])
        if err <= tol:
            break
        jac = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = 1e-7 * x[j]
            jac[:, j] = (fun(x + e) - fun(x - e)) / (2 * e[j])
        dx = np.linalg.solve(jac, -f)
        lam = 1.0
        while lam > 1e-4:
            xn = x + lam * dx
            if xn[0] > 0 and xn[1] > 0:
                try:
                    if np.linalg.norm(fun(xn)) < np.linalg.norm(f):
                        break
                except ProfileError:
                    pass
            lam /= 2
        else:
            raise ProfileError("Newton line search failed", {"history": history})
        x = xn
    else:
        raise ProfileError("Newton did not converge", {"history": history})

    a0, b = float(x[0]), float(x[1])
    if grid.r_wall < 4 / b or rm(b) < 4 / b:
        raise GridError("matching radius or r_max below 4/b after convergence")
    q, dq = _sample(d, p, a0, b, grid)
    Qb = RadialFunction(grid, q, real=False)
    window = (max(rm(b), 0.5 * grid.r_wall), 0.95 * grid.r_wall)
    Qb.tail = fit_power_tail(Qb, window)
    _, c1, c2 = matching_functional(d, p, a0, b, rm(b))
    prof = ProfileB(d, p, b, a0, Qb, tail_fit=Qb.tail,
                    dQb=RadialFunction(grid.with_sector(1), dq, real=False),
                    trace={"history": history, "r_match": rm(b),
                           "functional": history[-1][2],
                           "c1": [float(c1.real), float(c1.imag)],
                           "c2": [float(c2.real), float(c2.imag)]})
    prof.residual = continuum_defect(d, p, a0, b, rm(b))
    prof.trace["grid_residual"] = profile_residual(prof)
    return prof


def profile_on_grid(profile: ProfileB, grid: RadialGrid) -> ProfileB:
    """Same (a0, b) sampled from the ODE on another radial grid."""
    if grid.sector != 0 or grid.d != profile.d:
        raise GridError("profile needs the radial sector of the same dimension")
    if profile.b == 0:
        return _ground_state_profile(profile.d, grid, 1e-10)
    q, dq = _sample(profile.d, profile.p, profile.a0, profile.b, grid)
    out = ProfileB(profile.d, profile.p, profile.b, profile.a0,
                   RadialFunction(grid, q, real=False), profile.residual,
                   dict(profile.tail_fit), dict(profile.trace),
                   RadialFunction(grid.with_sector(1), dq, real=False))
    out.trace["grid_residual"] = profile_residual(out)
    return out


def regauge(values):
    """Rotate a complex profile so that its origin value is real positive."""
    v = np.asarray(values, dtype=complex)
    return v * np.exp(-1j * np.angle(v[0]))


def profile_sweep(d, p_list, b_seed, a0_seed, h=0.01, r_factor=8.0, tol=1e-10):
    """Continuation in p: each converged (a0, b) seeds the next solve."""
    out = []
    a0, b = a0_seed, b_seed
    for p in p_list:
        # 5% headroom: the wall sits on a node at or below r_max
        grid = make_grid(d, 0, h, 1.05 * r_factor / b)
        prof = solve_profile(d, p, b, a0, grid, tol)
        out.append(prof)
        a0, b = prof.a0, prof.b
    return out


def profile_at_b(d, b_target, p_seed, b_seed, a0_seed, h=0.02, r_max=30.0, step=0.02,
                 btol=1e-9, maxiter=20):
    """Profile whose eigenvalue b equals b_target: continuation in p, then secant on b(p)."""
    grid = make_grid(d, 0, h, r_max)
    prev = solve_profile(d, p_seed, b_seed, a0_seed, grid)
    sign = 1.0 if b_target > prev.b else -1.0
    cur = prev
    for _ in range(maxiter):
        if (cur.b - b_target) * sign >= 0 and cur is not prev:
            break
        prev = cur
        cur = solve_profile(d, prev.p + sign * step, prev.b, prev.a0, grid)
    else:
        raise ProfileError("continuation did not bracket the target b")
    lo, hi = prev, cur
    for _ in range(maxiter):
        if abs(hi.b - b_target) <= btol:
            return hi
        p_new = hi.p + (b_target - hi.b) * (hi.p - lo.p) / (hi.b - lo.b)
        lo, hi = hi, solve_profile(d, p_new, hi.b, hi.a0, grid)
    raise ProfileError("secant on b(p) did not converge")


def scaling_law_check(d, p_list, b_seed, a0_seed, h=0.01):
    """Table of (p, s_c, b, log s_c + pi/b + log b) and a monotonicity flag."""
    profs = profile_sweep(d, sorted(p_list), b_seed, a0_seed, h=h)
    rows = []
    for pr in profs:
        s = pr.s_c
        rows.append({"p": pr.p, "s_c": s, "b": pr.b,
                     "constant": float(np.log(s) + np.pi / pr.b + np.log(pr.b))})
    bs = [r["b"] for r in rows]
    consts = [r["constant"] for r in rows]
    return {"rows": rows, "monotone": bool(np.all(np.diff(bs) > 0)),
            "spread": float(max(consts) - min(consts)) if consts else 0.0}


def compare_potentials(profile: ProfileB, gs: GroundStatePack):
    """sup over r <= b^(-1/3) of |W_jb - W_j| / (b^(1/3) |Q_b|^(p-1)), j = 1, 2."""
    g = profile.grid
    q0 = gs.Q if gs.grid.same_mesh(g) and gs.grid.r_max == g.r_max else resample(gs.Q, g)
    p0 = gs.p
    w1 = 0.5 * (p0 + 1) * np.abs(q0.values) ** (p0 - 1)
    w2 = 0.5 * (p0 - 1) * np.abs(q0.values) ** (p0 - 1)
    pot = potentials(profile)
    mag = np.abs(profile.Qb.values) ** (profile.p - 1)
    if profile.b == 0:
        return {"C1": 0.0, "C2": 0.0,
                "max_abs_diff": float(max(np.max(np.abs(pot.W1b.values - w1)),
                                          np.max(np.abs(pot.W2b.values - w2))))}
    sel = g.nodes <= profile.b ** (-1 / 3)
    if np.any(mag[sel] == 0):
        raise ValueError("|Q_b| vanishes inside the comparison window")
    scale = profile.b ** (1 / 3) * mag[sel]
    c1 = np.max(np.abs(pot.W1b.values[sel] - w1[sel]) / scale)
    c2 = np.max(np.abs(pot.W2b.values[sel] - w2[sel]) / scale)
    return {"C1": float(c1), "C2": float(c2), "window": float(profile.b ** (-1 / 3)),
            "max_abs_diff": float(max(np.max(np.abs(pot.W1b.values[sel] - w1[sel])),
                                      np.max(np.abs(pot.W2b.values[sel] - w2[sel]))))}


# ---------------------------------------------------------------- serialization

def profile_record(prof: ProfileB):
    return {"kind": "ProfileB", "version": PROFILE_VERSION,
            "grid": prof.grid.descriptor(), "d": prof.d, "p": repr(prof.p),
            "b": repr(prof.b), "a0": repr(prof.a0), "residual": repr(prof.residual),
            "tail_fit": prof.tail_fit,
            "trace": json.loads(json.dumps(prof.trace, default=float)),
            "Qb": _fn_record(prof.Qb), "dQb": _fn_record(prof.dQb)}


def profile_from_record(rec):
    if rec.get("kind") != "ProfileB" or rec.get("version") != PROFILE_VERSION:
        raise ValueError("not a supported ProfileB record")
    gd = rec["grid"]
    grid = make_grid(gd["d"], gd["sector"], gd["h"], gd["r_max"], gd["boundary"], gd["kappa"])
    qb = _fn_from(rec["Qb"], grid)
    qb.tail = rec["tail_fit"] or None
    return ProfileB(rec["d"], float(rec["p"]), float(rec["b"]), float(rec["a0"]), qb,
                    float(rec["residual"]), rec["tail_fit"], rec["trace"],
                    _fn_from(rec.get("dQb"), grid))
