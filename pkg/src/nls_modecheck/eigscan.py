"""Full discrete spectra of H_0 and H_b, eigenpair classification and mode-stability verdicts."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .ground_state import ground_state_pack
from .operators import assemble_H0, assemble_Hb
from .radial_core import OperatorMatrix, RadialFunction, make_grid
from .ssprofile import ProfileB, fit_power_tail, profile_on_grid

DENSE_LIMIT = 4000
SCORE_MIN = 0.95
DRIFT_TOL = 1e-3
WALL_FRACTION = 0.5
RESID_TOL = 1e-8
ZERO_TOL = 1e-3
SYM_IDENT = 0.1     # radius (in units of b) for identifying a symmetry eigenvalue
CLASSES = ("localized", "continuum-artifact", "boundary-artifact")

# algebraic multiplicity of 0 for H_0 per sector: phase/scaling chain in the
# radial sector, translation/Galilean pair in l = 1
H0_ZERO_MULT = {0: 4, 1: 2}


class EigscanError(RuntimeError):
    pass


@dataclass
class ScanWindow:
    """Region {|z| >= delta, im_floor <= Im z < sigma_gap, |Re z| <= re_bound}."""
    delta: float = 0.1
    sigma_gap: float = 0.0
    M: float = 10.0
    b: float = 0.0
    d: int = 1

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.M <= 0:
            raise ValueError("M must be positive")

    @classmethod
    def for_profile(cls, b, d, delta=0.1, M=10.0, sigma_gap=None):
        # default sigma_gap = b * b^(d+4): the top of the admissible sigma range
        gap = b * b ** (d + 4) if sigma_gap is None else sigma_gap
        return cls(delta, gap, M, b, d)

    @property
    def re_bound(self):
        return self.M * self.b ** (-self.d - 1) if self.b > 0 else np.inf

    @property
    def im_floor(self):
        return -self.M

    def in_box(self, lam):
        return self.im_floor <= lam.imag and abs(lam.real) <= self.re_bound

    def contains(self, lam):
        return (abs(lam) >= self.delta and lam.imag < self.sigma_gap and self.in_box(lam))

    @property
    def empty(self):
        # the box minus the delta disk is empty when every box corner lies inside the disk
        far_im = max(abs(self.im_floor), abs(self.sigma_gap))
        return np.hypot(self.re_bound, far_im) < self.delta

    def record(self):
        return {"delta": self.delta, "sigma_gap": self.sigma_gap, "M": self.M,
                "re_bound": self.re_bound, "im_floor": self.im_floor, "b": self.b, "d": self.d}


# ---------------------------------------------------------------- linear algebra

def _as_matrix(op):
    if isinstance(op, OperatorMatrix):
        return op.matrix, op.shape_blocks, op.weight()
    a = sp.csr_matrix(op)
    return a, 1, np.ones(a.shape[0])


def full_spectrum(op, dense_limit=DENSE_LIMIT, vectors=True):
    """All eigenvalues (and right eigenvectors) by a dense reduction.

    Operators that are hermitian in the mass pairing go through eigh on
    W^1/2 A W^-1/2, so their spectrum comes out exactly real.
    """
    a, nb, w = _as_matrix(op)
    if a.shape[0] // nb > dense_limit:
        raise EigscanError(f"block size {a.shape[0] // nb} exceeds dense limit {dense_limit}")
    herm = isinstance(op, OperatorMatrix) and op.hermitian_flag and op.symmetry_defect() < 1e-12
    if herm:
        sw = np.sqrt(w)
        s = (sp.diags(sw) @ a @ sp.diags(1 / sw)).toarray()
        s = 0.5 * (s + s.conj().T)
        if vectors:
            lam, u = sla.eigh(s)
            return lam.astype(complex), u / sw[:, None]
        return sla.eigvalsh(s).astype(complex), None
    dense = a.toarray()
    if vectors:
        lam, v = sla.eig(dense, overwrite_a=True, check_finite=False)
        return lam, v
    return sla.eigvals(dense, overwrite_a=True, check_finite=False), None


def op_norm(a):
    return float(spla.norm(a, np.inf))


def polish(op, lam, v0=None, tol=RESID_TOL, maxiter=60):
    """Inverse iteration at a fixed shift next to lam; returns (lam, v, rel. residual).

    The residual is ||(A - lam) v|| / (||A|| ||v||); stagnation above tol raises.
    """
    a, _, _ = _as_matrix(op)
    n = a.shape[0]
    anorm = op_norm(a)
    shift = complex(lam) + 1e-10 * (1 + abs(lam)) * (1 + 1j)
    lu = spla.splu(sp.csc_matrix(a - shift * sp.identity(n, dtype=complex, format="csc")))
    v = np.ones(n, dtype=complex) if v0 is None else np.asarray(v0, dtype=complex).copy()
    v /= np.linalg.norm(v)
    res = np.inf
    for _ in range(maxiter):
        v = lu.solve(v)
        v /= np.linalg.norm(v)
        av = a @ v
        lam = np.vdot(v, av)
        res = np.linalg.norm(av - lam * v) / anorm
        if res <= tol:
            return complex(lam), v, float(res)
    raise EigscanError(f"inverse iteration stagnated at residual {res:.3e} near {lam:.6g}")


# ---------------------------------------------------------------- eigenvector diagnostics

def _density(grid, v, nb):
    v = np.asarray(v).reshape(nb, grid.n)
    return grid.mass * np.sum(np.abs(v) ** 2, axis=0)


def localization_score(grid, v, nb=1):
    """||v||_{L2(r <= r_max/2)} / ||v||_{L2}, both components together."""
    rho = _density(grid, v, nb)
    tot = rho.sum()
    return float(np.sqrt(rho[grid.nodes <= 0.5 * grid.r_max].sum() / tot)) if tot else 0.0


def wall_fraction(grid, v, nb=1):
    rho = _density(grid, v, nb)
    tot = rho.sum()
    return float(np.sqrt(rho[grid.nodes >= 0.9 * grid.r_max].sum() / tot)) if tot else 0.0


def tail_fit(grid, v, nb=1, window=None):
    """Power fit of the pointwise modulus on (r_max/4, r_max/2); None if degenerate."""
    mag = np.sqrt(_density(grid, v, nb) / grid.mass)
    window = window or (0.25 * grid.r_max, 0.5 * grid.r_max)
    try:
        return fit_power_tail(RadialFunction(grid, mag), window)
    except ValueError:
        return None


def classify(lam, score, wall, drift_h=None, drift_r=None, score_min=SCORE_MIN,
             drift_tol=DRIFT_TOL):
    """localized / boundary-artifact / continuum-artifact for one eigenpair."""
    if score >= score_min:
        if drift_h is None or drift_r is None:
            raise EigscanError("missing refinement data for a well-localized eigenpair")
        tol = drift_tol * (1 + abs(lam))
        if drift_h <= tol and drift_r <= tol:
            return "localized"
    if wall >= WALL_FRACTION:
        return "boundary-artifact"
    return "continuum-artifact"


def profile_match(g1, v1, g2, v2, nb=1):
    """1 - relative L2 distance of the normalized moduli on the common radii."""
    r_hi = min(g1.r_max, g2.r_max)
    r = g1.nodes[g1.nodes <= r_hi]
    m1 = np.sqrt(_density(g1, v1, nb) / g1.mass)[: r.size]
    m2 = np.interp(r, g2.nodes, np.sqrt(_density(g2, v2, nb) / g2.mass))
    w = g1.mass[: r.size]
    n1, n2 = np.sqrt(np.sum(w * m1 ** 2)), np.sqrt(np.sum(w * m2 ** 2))
    if n1 == 0 or n2 == 0:
        return 0.0
    return float(1 - np.sqrt(np.sum(w * (m1 / n1 - m2 / n2) ** 2)))


def _tracked_drift(g1, nb, lam, v, g2, lam2, vecs2, match_min=0.9, candidates=6):
    """Distance to the nearest partner eigenvalue whose eigenvector has the same profile.

    Plain nearest-neighbour matching would pair grid modes with whatever
    eigenvalue of the denser partner spectrum happens to be close.
    """
    order = np.argsort(np.abs(lam2 - lam))[:candidates]
    for k in order:
        if profile_match(g1, v, g2, vecs2[:, k], nb) >= match_min:
            return float(abs(lam2[k] - lam))
    return np.inf


# ---------------------------------------------------------------- refinement ladder

LADDER = ((0, 0), (1, 0), (0, 1), (1, 1))      # (h-level, r-level)


def _partners(key):
    i, j = key
    return (1 - i, j), (i, 1 - j)


@dataclass
class SpectrumReport:
    operator: str
    sector: int
    d: int
    h: float
    r_max: float
    eigenvalues: np.ndarray = field(repr=False)
    records: list = field(repr=False)
    verdict: str = ""
    notes: dict = field(default_factory=dict)

    def localized(self):
        return [r for r in self.records if r["class"] == "localized"]

    def record(self):
        return {"operator": self.operator, "sector": self.sector, "d": self.d, "h": self.h,
                "r_max": self.r_max, "verdict": self.verdict, "notes": _jsonable(self.notes),
                "eigenpairs": [_jsonable(r) for r in self.records]}


class Ladder:
    """Operators on (h, h/2) x (r_max, 1.5 r_max), built lazily and cached."""

    def __init__(self, build, h, r_max, label):
        self.build = build
        self.h = h
        self.r_max = r_max
        self.label = label
        self._ops = {}
        self._spec = {}

    def params(self, key):
        return self.h / 2 ** key[0], self.r_max * 1.5 ** key[1]

    def op(self, key, sector):
        if (key, sector) not in self._ops:
            self._ops[key, sector] = self.build(*self.params(key), sector)
        return self._ops[key, sector]

    def spectrum(self, key, sector):
        if (key, sector) not in self._spec:
            self._spec[key, sector] = full_spectrum(self.op(key, sector))
        return self._spec[key, sector]


def scan_sector(ladder: Ladder, key, sector, cluster=0):
    """Classified spectrum of one sector on one rung of the ladder.

    ``cluster`` eigenvalues closest to 0 are split off as the discretized
    zero Jordan block; they are tracked by their centroid, which converges
    at the stencil order while the members spread like a root of it.
    """
    op = ladder.op(key, sector)
    grid = op.grid
    nb = op.shape_blocks
    lam, vecs = ladder.spectrum(key, sector)
    vecs = vecs.astype(complex)
    order = np.argsort(np.abs(lam))
    in_cluster = set(order[:cluster].tolist())
    cen = complex(np.mean(lam[order[:cluster]])) if cluster else 0j
    cdrift = [None, None]
    if cluster:
        for i, other in enumerate(_partners(key)):
            lo = ladder.spectrum(other, sector)[0]
            cdrift[i] = abs(complex(np.mean(lo[np.argsort(np.abs(lo))[:cluster]])) - cen)
    records = []
    for k, mu in enumerate(lam):
        v = vecs[:, k]
        score = localization_score(grid, v, nb)
        wall = wall_fraction(grid, v, nb)
        rec = {"lam": complex(mu), "score": score, "wall": wall, "drift_h": None,
               "drift_r": None, "tail": None, "cluster": k in in_cluster, "residual": None}
        if score >= SCORE_MIN and k not in in_cluster:
            rec["drift_h"], rec["drift_r"] = (
                _tracked_drift(grid, nb, mu, v, ladder.op(o, sector).grid,
                               *ladder.spectrum(o, sector)) for o in _partners(key))
        elif k in in_cluster:
            rec["drift_h"], rec["drift_r"] = cdrift
        rec["class"] = classify(rec["lam"], score, wall, rec["drift_h"], rec["drift_r"])
        if rec["class"] == "localized" and not rec["cluster"]:
            mu2, v2, rec["residual"] = polish(op, mu, v)
            rec["lam"] = mu2
            vecs[:, k] = v2
            rec["tail"] = tail_fit(grid, v2, nb)
        records.append(rec)
    notes = {}
    if cluster:
        idx = order[:cluster]
        # the centroid vanishes by the -conj symmetry; the geometric mean of |lam|
        # measures the splitting of the discretized Jordan block
        notes["zero_cluster"] = {"size": cluster, "centroid": cen, "drift_h": cdrift[0],
                                 "geo_mean": float(np.exp(np.mean(np.log(np.abs(lam[idx]) + 1e-300)))),
                                 "drift_r": cdrift[1],
                                 "spread": float(np.max(np.abs(lam[idx] - cen))),
                                 "members": [complex(x) for x in lam[idx]],
                                 "score": localization_score(grid, vecs[:, idx].sum(axis=1), nb)}
    h, r_max = ladder.params(key)
    return SpectrumReport(ladder.label, sector, grid.d, h, r_max, lam, records, "", notes)


# ---------------------------------------------------------------- H_0

def h0_builder(d, well=0.0, width=1.0):
    """Operator factory for H_0; ``well`` adds a Gaussian dip of that depth to L+-."""
    cache = {}

    def build(h, r_max, sector):
        if (h, r_max) not in cache:
            cache[h, r_max] = ground_state_pack(d, h=h, r_max=r_max)
        op = assemble_H0(cache[h, r_max], sector).H0
        if well:
            g = op.grid
            dip = sp.diags(well * np.exp(-(g.nodes / width) ** 2))
            # L+- -> L+- - dip; the top block of H_0 is -L-like, the bottom +L-like
            blocks = [[op.blocks[0][0] + dip, op.blocks[0][1]],
                      [op.blocks[1][0], op.blocks[1][1] - dip]]
            op = OperatorMatrix(g, blocks, label="H0+well")
        return op
    return build


def _sectors(d, sectors=(0, 1, 2)):
    return tuple(s for s in sectors if s <= 1 or d >= 2)


def h0_mode_stability(d, h=0.05, r_max=12.0, sectors=(0, 1, 2), well=0.0, width=1.0):
    """Linear-stability verdict for H0 on every rung of the (h, r_max) ladder.

    A rung passes iff every localized eigenvalue lies within ZERO_TOL of 0
    (the zero Jordan cluster counts through its centroid).  Embedded
    candidates (|Re| >= 1) and resonance candidates (within 1e-2 of +-1 and
    slowly decaying) are reported.
    """
    ladder = Ladder(h0_builder(d, well, width), h, r_max, "H0")
    rungs = {}
    for key in LADDER:
        reports = []
        for s in _sectors(d, sectors):
            k = H0_ZERO_MULT.get(s, 0) if not well else 0
            rep = scan_sector(ladder, key, s, cluster=k)
            reports.append(rep)
        rungs[key] = _h0_rung_verdict(reports)
    verdicts = {r["verdict"] for r in rungs.values()}
    verdict = rungs[0, 0]["verdict"] if len(verdicts) == 1 else "UNSTABLE"
    return {"operator": "H0", "d": d, "h": h, "r_max": r_max, "well": well,
            "verdict": verdict, "stable": len(verdicts) == 1,
            "rungs": {f"h/{2 ** i},r*{1.5 ** j:g}": v for (i, j), v in rungs.items()}}


def _h0_rung_verdict(reports):
    bad, embedded, resonance, gap, clusters = [], [], [], [], []
    for rep in reports:
        for rec in rep.localized():
            lam = rec["lam"]
            if rec["cluster"]:
                continue
            if abs(lam) > ZERO_TOL:
                bad.append((rep.sector, lam))
            if abs(lam.real) >= 1:
                embedded.append((rep.sector, lam))
            elif abs(lam) > ZERO_TOL:
                gap.append((rep.sector, lam))
        for rec in rep.records:
            lam = rec["lam"]
            # slow decay: neither a bound state nor spread like a box mode
            if abs(abs(lam.real) - 1) <= 1e-2 and abs(lam.imag) <= 1e-2 and rec["score"] >= 0.8:
                resonance.append((rep.sector, lam, rec["score"]))
        zc = rep.notes.get("zero_cluster")
        if zc:
            clusters.append({"sector": rep.sector, **zc})
            if abs(zc["centroid"]) > ZERO_TOL:
                bad.append((rep.sector, zc["centroid"]))
    return {"verdict": "FAIL" if bad else "PASS", "violations": bad, "embedded": embedded,
            "resonance": resonance, "gap_count": len(gap), "zero_clusters": clusters,
            "reports": reports}


# ---------------------------------------------------------------- H_b

def hb_builder(profile: ProfileB):
    cache = {}

    def build(h, r_max, sector):
        if (h, r_max) not in cache:
            grid = make_grid(profile.d, 0, h, r_max)
            cache[h, r_max] = profile_on_grid(profile, grid)
        return assemble_Hb(cache[h, r_max], sector).Hb
    return build


def hb_mode_stability(profile: ProfileB, window: ScanWindow, h=0.05, r_max=30.0,
                      sectors=(0, 1, 2)):
    """Linear-stability verdict for H_b of a converged profile on the ladder.

    A rung passes iff no localized eigenvalue lies in the window.  The
    eigenvalues 0, -bi, -2bi come from symmetries and are excluded; +bi and
    +2bi are reported without being counted.  Near-origin localized
    eigenvalues (|z| < delta, or within 1e-3 b of a symmetry value) are
    listed with their distance to the symmetry set of their sector.
    """
    b = profile.b
    if b == 0:
        raise EigscanError("b = 0: use h0_mode_stability")
    ladder = Ladder(hb_builder(profile), h, r_max, "Hb")
    targets = {0: (0.0, -2j * b), 1: (-1j * b,)}
    upper = (1j * b, 2j * b)
    rungs = {}
    for key in LADDER:
        reports, bad, near, sym, above = [], [], [], [], []
        for s in _sectors(profile.d, sectors):
            rep = scan_sector(ladder, key, s)
            reports.append(rep)
            lam_all = rep.eigenvalues
            # one eigenvalue per symmetry value, identified by proximity; the
            # reported distance is what the 1e-3 b tolerance is judged on
            taken = set()
            for t in targets.get(s, ()):
                k = int(np.argmin(np.abs(lam_all - t)))
                if abs(lam_all[k] - t) <= SYM_IDENT * b:
                    taken.add(k)
                rec = rep.records[k]
                sym.append({"sector": s, "target": t, "nearest": rec["lam"],
                            "distance": abs(rec["lam"] - t), "class": rec["class"],
                            "within_tol": abs(rec["lam"] - t) <= 1e-3 * b})
            for t in upper:
                k = int(np.argmin(np.abs(lam_all - t)))
                if abs(lam_all[k] - t) <= SYM_IDENT * b:
                    taken.add(k)
                    above.append({"sector": s, "target": t, "lam": rep.records[k]["lam"],
                                  "class": rep.records[k]["class"]})
            for k, rec in enumerate(rep.records):
                if rec["class"] != "localized" or k in taken:
                    continue
                lam = rec["lam"]
                if abs(lam) < window.delta:
                    near.append({"sector": s, "lam": lam})
                if window.contains(lam):
                    bad.append({"sector": s, "lam": lam, "lam_over_b": lam / b,
                                "score": rec["score"], "tail": rec["tail"]})
        rungs[key] = {"verdict": "FAIL" if bad else "PASS", "violations": bad,
                      "near_origin": near, "symmetry": sym, "upper": above,
                      "reports": reports}
    verdicts = {r["verdict"] for r in rungs.values()}
    verdict = rungs[0, 0]["verdict"] if len(verdicts) == 1 else "UNSTABLE"
    return {"operator": "Hb", "d": profile.d, "p": profile.p, "b": b, "h": h, "r_max": r_max,
            "window": window.record(), "verdict": verdict, "stable": len(verdicts) == 1,
            "empty_window": window.empty,
            "rungs": {f"h/{2 ** i},r*{1.5 ** j:g}": v for (i, j), v in rungs.items()}}


def near_origin_check(rung, b, tol=1e-3):
    """Symmetry eigenvalues -2bi (radial) and -bi (l = 1) located within tol*b.

    The nearest eigenvalue is judged whatever its class: near the origin the
    refinement drift of a genuine mode is comparable to tol*b, so a class
    filter would leave nothing to test.  The value 0 is skipped (its
    eigenfunction, proportional to Q_b, is not square integrable), and any
    other localized eigenvalue with |z| < delta counts against the check.
    """
    judged = [x for x in rung["symmetry"] if x["target"] != 0]
    dist = {f"s{x['sector']}:{x['target'].imag / b:+.0f}bi": x["distance"] for x in judged}
    stray = [x["lam"] for x in rung["near_origin"]]
    ok = not stray and all(v <= tol * b for v in dist.values())
    return {"pass": ok, "distances": dist, "stray": stray}


# ---------------------------------------------------------------- output

def _jsonable(x):
    if isinstance(x, complex) or isinstance(x, np.complexfloating):
        return [float(np.real(x)), float(np.imag(x))]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, SpectrumReport):
        return x.record()
    return x


def scan_json(result):
    return json.dumps(_jsonable(result), indent=1, sort_keys=True, allow_nan=True)


EIG_FIELDS = ("operator", "d", "sector", "h", "r_max", "re", "im", "score", "wall", "class")


def eig_csv(result):
    """One row per eigenvalue on every rung of a scan result."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EIG_FIELDS)
    for rung in result["rungs"].values():
        for rep in rung["reports"]:
            for rec in rep.records:
                w.writerow([rep.operator, rep.d, rep.sector, f"{rep.h:.17g}", f"{rep.r_max:.17g}",
                            f"{rec['lam'].real:.17g}", f"{rec['lam'].imag:.17g}",
                            f"{rec['score']:.17g}", f"{rec['wall']:.17g}", rec["class"]])
    return buf.getvalue()
