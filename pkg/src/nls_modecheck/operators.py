"""Linearized operators around Q and Q_b on one angular sector, and their modes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .ground_state import GroundStatePack, critical_power
from .radial_core import (GridError, OperatorMatrix, RadialGrid, identity, lambda0,
                          laplacian, radial_derivative, schrodinger)
from .ssprofile import WALL_LAYER, ProfileB, potentials

SIGMA3 = np.array([1.0, -1.0])


@dataclass(eq=False)
class Mode:
    """Two-component vector (top, bottom) on one sector grid."""
    grid: RadialGrid
    top: np.ndarray
    bottom: np.ndarray
    name: str = ""

    @property
    def vector(self):
        return np.concatenate([self.top, self.bottom]).astype(complex)

    @classmethod
    def from_vector(cls, grid, v, name=""):
        return cls(grid, v[:grid.n], v[grid.n:], name)

    def norm(self):
        return float(np.sqrt(self.grid.norm(self.top) ** 2 + self.grid.norm(self.bottom) ** 2))

    def __add__(self, other):
        _check_sector(self.grid, other.grid)
        return Mode(self.grid, self.top + other.top, self.bottom + other.bottom)

    def __rmul__(self, c):
        return Mode(self.grid, c * self.top, c * self.bottom, self.name)

    def sigma3(self):
        return Mode(self.grid, self.top, -self.bottom, self.name)


def _check_sector(a: RadialGrid, b: RadialGrid):
    if a.sector != b.sector or not a.same_mesh(b) or a.r_max != b.r_max:
        raise GridError(f"sector/grid mismatch: {a.descriptor()} vs {b.descriptor()}")


def apply(op: OperatorMatrix, mode: Mode) -> Mode:
    if op.shape_blocks != 2:
        raise GridError("mode operators are 2x2 block matrices")
    _check_sector(op.grid, mode.grid)
    return Mode.from_vector(mode.grid, op @ mode.vector)


def vec_norm(grid, v):
    w = np.tile(grid.mass, v.size // grid.n)
    return float(np.sqrt(np.sum(w * np.abs(v) ** 2)))


def _sector_grid(base: RadialGrid, sector):
    g = base.with_sector(sector)
    if g.d != base.d:
        raise GridError("dimension mismatch")
    return g


def _block(grid, rows, label, **kw):
    blocks = [[sp.csr_matrix(b) for b in row] for row in rows]
    return OperatorMatrix(grid, blocks, label=label, **kw)


# ---------------------------------------------------------------- H_0

@dataclass(eq=False)
class OperatorSet0:
    d: int
    gs: GroundStatePack
    grid: RadialGrid
    W1: np.ndarray
    W2: np.ndarray
    Lp: OperatorMatrix
    Lm: OperatorMatrix
    L1: OperatorMatrix
    L2: OperatorMatrix
    H0: OperatorMatrix


def assemble_H0(gs: GroundStatePack, sector=0) -> OperatorSet0:
    """L+-, L1 = [L+, Lambda0]/2, L2 = [L-, Lambda0]/2 and H_0 on one sector.

    L1 and L2 are built from their potentials, -Delta + (r/2) d/dr(p Q^(p-1))
    and -Delta + (r/2) d/dr(Q^(p-1)); the matrix commutator is only a check.
    """
    d = gs.d
    if abs(gs.p - critical_power(d)) > 1e-12:
        raise ValueError("H_0 is assembled at the critical power")
    g = _sector_grid(gs.grid, sector)
    p = gs.p
    q = gs.Q.values
    r = g.nodes
    qp = q ** (p - 1)
    w1 = 0.5 * (p + 1) * qp
    w2 = 0.5 * (p - 1) * qp
    dq = gs.dQ.values if gs.dQ is not None else radial_derivative(gs.grid, q)
    # r Q' Q^(p-2) written as r (Q'/Q) Q^(p-1): Q^(p-2) is singular-looking for d > 4
    rq = r * dq / q * qp
    v2 = 0.5 * (p - 1) * rq
    lp = schrodinger(g, w1 + w2)
    lm = schrodinger(g, w1 - w2)
    l1 = schrodinger(g, -p * v2, shift=0.0)
    l2 = schrodinger(g, -v2, shift=0.0)
    for op, name in ((lp, "L+"), (lm, "L-"), (l1, "L1"), (l2, "L2")):
        op.label = name
    lap = laplacian(g).matrix
    one = identity(g)
    top = lap - one + sp.diags(w1)
    h0 = _block(g, [[top, sp.diags(w2)], [-sp.diags(w2), -top]], "H0")
    return OperatorSet0(d, gs, g, w1, w2, lp, lm, l1, l2, h0)


def commutator_check(set0: OperatorSet0, funcs):
    """max ||2 L1 f - [L+, Lambda0] f|| / ||f|| over test functions f."""
    g = set0.grid
    lam = lambda0(g).matrix
    lp = set0.Lp.matrix
    lm = set0.Lm.matrix
    out = {"L1": 0.0, "L2": 0.0}
    for f in funcs:
        v = f(g.nodes)
        n = g.norm(v)
        c1 = lp @ (lam @ v) - lam @ (lp @ v)
        c2 = lm @ (lam @ v) - lam @ (lm @ v)
        out["L1"] = max(out["L1"], g.norm(2 * (set0.L1 @ v) - c1) / n)
        out["L2"] = max(out["L2"], g.norm(2 * (set0.L2 @ v) - c2) / n)
    return out


def h0_modes(gs: GroundStatePack):
    """Generalized kernel of H_0: xi_0..xi_3 (radial) and zeta_0, zeta_1 (l = 1)."""
    if not gs.complete:
        raise ValueError("ground-state pack lacks derived profiles")
    g0 = gs.grid
    g1 = g0.with_sector(1)
    q, q1, r2q, rho = gs.Q.values, gs.Q1.values, gs.x2Q.values, gs.rho.values
    dq, xq = gs.dQ.values, gs.xQ.values
    return {
        "xi0": Mode(g0, 1j * q, -1j * q, "xi0"),
        "xi1": Mode(g0, 0.5 * q1, 0.5 * q1, "xi1"),
        "xi2": Mode(g0, -1j / 8 * r2q, 1j / 8 * r2q, "xi2"),
        "xi3": Mode(g0, rho / 8, rho / 8, "xi3"),
        "zeta0": Mode(g1, dq, dq, "zeta0"),
        "zeta1": Mode(g1, -0.5j * xq, 0.5j * xq, "zeta1"),
    }


CHAIN = [("xi0", None), ("xi1", "xi0"), ("xi2", "xi1"), ("xi3", "xi2"),
         ("zeta0", None), ("zeta1", "zeta0")]


def jordan_chain_residuals(sets: dict, modes: dict):
    """||H0 m_k + i m_(k-1)|| / ||m_k|| for the six generalized-kernel vectors.

    ``sets`` maps sector -> OperatorSet0.  The entries ``display_*`` hold
    ||H0 m_k + i m_k|| / ||m_k||, the eigenvalue reading of the chain, which
    is expected to be O(1).
    """
    out = {}
    for name, prev in CHAIN:
        m = modes[name]
        h = sets[m.grid.sector].H0
        hm = apply(h, m)
        lhs = hm if prev is None else hm + (1j * modes[prev])
        out[name] = lhs.norm() / m.norm()
        if prev is not None and name.startswith("xi"):
            out["display_" + name] = (hm + (1j * m)).norm() / m.norm()
    return out


def scalar_identities(set0: OperatorSet0):
    """Radial-sector scalar forms of the chain, relative to the right-hand side."""
    gs = set0.gs
    g = set0.grid
    q, q1, r2q, rho = gs.Q.values, gs.Q1.values, gs.x2Q.values, gs.rho.values
    return {
        "Lm_Q": g.norm(set0.Lm @ q) / g.norm(q),
        "Lp_Q1": g.norm(set0.Lp @ q1 + 2 * q) / g.norm(2 * q),
        "Lm_r2Q": g.norm(set0.Lm @ r2q + 4 * q1) / g.norm(4 * q1),
        "Lp_rho": g.norm(set0.Lp @ rho - r2q) / g.norm(r2q),
    }


def duality_defect(op: OperatorMatrix, rng, trials=5):
    """max |(Hx, y) - (x, s3 H s3 y)| / (||x|| ||y||) over random vectors."""
    g = op.grid
    w = op.weight()
    s3 = np.concatenate([np.ones(g.n), -np.ones(g.n)])
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(2 * g.n) + 1j * rng.standard_normal(2 * g.n)
        y = rng.standard_normal(2 * g.n) + 1j * rng.standard_normal(2 * g.n)
        lhs = np.sum(w * (op @ x) * y.conj())
        rhs = np.sum(w * x * (s3 * (op @ (s3 * y))).conj())
        worst = max(worst, abs(lhs - rhs) / (vec_norm(g, x) * vec_norm(g, y)))
    return float(worst)


# ---------------------------------------------------------------- H_b

@dataclass(eq=False)
class OperatorSetB:
    profile: ProfileB
    grid: RadialGrid
    Lpb: OperatorMatrix
    Lmb: OperatorMatrix
    Nb: np.ndarray
    Hb: OperatorMatrix


def assemble_Hb(profile: ProfileB, sector=0) -> OperatorSetB:
    g = _sector_grid(profile.grid, sector)
    b, sc = profile.b, profile.s_c
    pots = potentials(profile)
    w1 = pots.W1b.values
    w2 = pots.W2b.values
    lap = laplacian(g).matrix
    lam = lambda0(g).matrix
    one = identity(g)
    top = lap + 1j * b * lam - one - 1j * b * sc * one + sp.diags(w1)
    bot = -lap + 1j * b * lam + one - 1j * b * sc * one - sp.diags(w1)
    hb = _block(g, [[top, sp.diags(w2)], [-sp.diags(w2.conj()), bot]], "Hb")
    lpb = schrodinger(g, pots.Wplus.values)
    lmb = schrodinger(g, pots.Wminus.values)
    lpb.label, lmb.label = "L+b", "L-b"
    return OperatorSetB(profile, g, lpb, lmb, pots.Nb.values, hb)


def adjoint_relation_defect(setB: OperatorSetB):
    """max |H_b^* - s3 (H_b + 2 i b s_c) s3| / max |H_b| in the mass pairing."""
    h = setB.Hb
    n = setB.grid.n
    s3 = sp.diags(np.concatenate([np.ones(n), -np.ones(n)]))
    shift = 2j * setB.profile.b * setB.profile.s_c * sp.identity(2 * n)
    diff = h.adjoint() - s3 @ (h.matrix + shift) @ s3
    return float(abs(diff).max() / abs(h.matrix).max())


def hb_modes(profile: ProfileB):
    """Modes built from Q_b: xi_0b, xi_1b, xi_2b, eta_b (radial), zeta_0b, zeta_1b (l = 1)."""
    g0 = profile.grid
    g1 = g0.with_sector(1)
    q = profile.Qb.values
    r = g0.nodes
    # pointwise from the ODE data: applying grid derivatives to the sampled
    # profile would amplify its interpolation noise by 1/h
    dq = profile.dQb.values if profile.dQb is not None else radial_derivative(g0, q)
    lq = 2 / (profile.p - 1) * q + r * dq
    return {
        "xi0b": Mode(g0, 1j * q, -1j * q.conj(), "xi0b"),
        "xi1b": Mode(g0, 0.5 * lq, 0.5 * lq.conj(), "xi1b"),
        "xi2b": Mode(g0, -1j / 8 * r ** 2 * q, 1j / 8 * r ** 2 * q.conj(), "xi2b"),
        "etab": Mode(g0, q, q.conj(), "etab"),
        "zeta0b": Mode(g1, dq, dq.conj(), "zeta0b"),
        "zeta1b": Mode(g1, -0.5j * r * q, 0.5j * r * q.conj(), "zeta1b"),
    }


def _trim(m: Mode):
    """Zero the wall layer, where the power tail meets the Dirichlet ghost."""
    t, bt = m.top.copy(), m.bottom.copy()
    t[-WALL_LAYER:] = bt[-WALL_LAYER:] = 0.0
    return Mode(m.grid, t, bt, m.name)


def hb_mode_residuals(sets: dict, modes: dict):
    """Relative residuals of the five H_b eigen-relations (wall layer excluded)."""
    b = sets[0].profile.b
    sc = sets[0].profile.s_c
    x0, x1, x2, eta = modes["xi0b"], modes["xi1b"], modes["xi2b"], modes["etab"]
    z0, z1 = modes["zeta0b"], modes["zeta1b"]
    h0, h1 = sets[0].Hb, sets[z0.grid.sector].Hb

    def rel(h, v, lam, rhs=None):
        res = apply(h, v) + ((-lam) * v)
        if rhs is not None:
            res = res + ((-1) * rhs)
        return _trim(res).norm() / _trim(v).norm()

    return {
        "xi0b": rel(h0, x0, 0.0),
        "xi0b+2b xi1b": rel(h0, x0 + ((2 * b) * x1), -2j * b),
        "xi0b-2b xi1b+8b^2 xi2b": rel(h0, x0 + ((-2 * b) * x1) + ((8 * b * b) * x2), 2j * b,
                                      (-4j * b * b * sc) * eta),
        "zeta0b": rel(h1, z0, -1j * b),
        "zeta0b-2b zeta1b": rel(h1, z0 + ((-2 * b) * z1), 1j * b),
    }


def scalar_relations(setB: OperatorSetB):
    """Real forms of the xi_0b, xi_1b relations with Lambda = Lambda0 - s_c."""
    prof = setB.profile
    g = setB.grid
    b = prof.b
    q = prof.Qb.values
    lam = lambda0(g, prof.s_c)
    dq = prof.dQb.values if prof.dQb is not None else radial_derivative(g, q)
    q1 = 2 / (prof.p - 1) * q + g.nodes * dq
    u, v = q.real, q.imag
    u1, v1 = q1.real, q1.imag
    nb = setB.Nb
    lp, lm = setB.Lpb, setB.Lmb
    res = {
        "rel1": lm @ u + b * (lam @ v) + nb * v,
        "rel2": lp @ v - b * (lam @ u) + nb * u,
        "rel3": lp @ u1 + b * (lam @ v1) - nb * v1 + 2 * u + 2 * b * v1,
        "rel4": lm @ v1 - b * (lam @ u1) - nb * u1 + 2 * v - 2 * b * u1,
    }
    qn = g.norm(np.abs(q))
    out = {}
    for k, r_ in res.items():
        r_ = np.real(r_).copy()
        r_[-WALL_LAYER:] = 0.0
        out[k] = g.norm(r_) / qn
    return out


# ---------------------------------------------------------------- export

def export_banded(op: OperatorMatrix, path=None, bandwidth=None):
    """Banded complex text format: header line, then one line per block row entry.

    Header: ``d sector n bandwidth nblocks``.  Each following line is
    ``I J i`` (block row, block column, row) and 2(2 bw + 1) numbers giving
    re/im of columns i - bw .. i + bw (zero outside the matrix).
    """
    g = op.grid
    bw = op.bandwidth if bandwidth is None else bandwidth
    k = op.shape_blocks
    lines = [f"{g.d} {g.sector} {g.n} {bw} {k}"]
    for bi in range(k):
        for bj in range(k):
            blk = sp.csr_matrix(op.blocks[bi][bj], dtype=complex)
            dense_band = np.zeros((g.n, 2 * bw + 1), dtype=complex)
            coo = blk.tocoo()
            off = coo.col - coo.row
            if np.any(np.abs(off) > bw):
                raise ValueError("entries outside the declared bandwidth")
            np.add.at(dense_band, (coo.row, off + bw), coo.data)
            for i in range(g.n):
                nums = " ".join(f"{repr(float(z.real))} {repr(float(z.imag))}"
                                for z in dense_band[i])
                lines.append(f"{bi} {bj} {i} {nums}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def import_banded(text):
    """Inverse of export_banded: returns (header dict, scipy sparse matrix)."""
    rows = text.strip().splitlines()
    d, sector, n, bw, k = (int(x) for x in rows[0].split())
    mats = [[sp.lil_matrix((n, n), dtype=complex) for _ in range(k)] for _ in range(k)]
    for line in rows[1:]:
        parts = line.split()
        bi, bj, i = int(parts[0]), int(parts[1]), int(parts[2])
        vals = np.array([float(x) for x in parts[3:]])
        z = vals[0::2] + 1j * vals[1::2]
        for c, val in enumerate(z):
            j = i + c - bw
            if 0 <= j < n and val != 0:
                mats[bi][bj][i, j] = val
    a = sp.bmat([[m.tocsr() for m in row] for row in mats], format="csr")
    return {"d": d, "sector": sector, "n": n, "bandwidth": bw, "blocks": k}, a
