"""Multi-scale analysis engine: scales, resonant sets, blocks, roots, audits.

All small quantities delta_s are carried as log10 values. Sites are doubled
integer coordinates throughout (see :mod:`qplab.lattice`), so the shifted
lattices Z^d + l/2 are exact.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Sequence

import mpmath
import numpy as np

from .lattice import SiteSet, align_enlarge, box2, diam, dist
from .model import ModelConfig, assemble_T, solve_theta0, torus_norm
from .opalgebra import (LatticeOperator, NearResonanceError, invert, log_sobolev_norm, logdet,
                        schur, sobolev_norm)

LN10 = math.log(10.0)


class ScheduleInvalid(ValueError):
    pass


class GeometryViolation(RuntimeError):
    def __init__(self, msg, certificate=None):
        super().__init__(msg)
        self.certificate = certificate or {}


class NoRootError(RuntimeError):
    pass


class ContourContaminationError(RuntimeError):
    pass


class AlternativeConflict(RuntimeError):
    """Both half-shift alternatives fired in a C2 step."""


# ---------------------------------------------------------------------------
# schedule


@dataclass
class ScaleSchedule:
    entries: list  # (s, N_s, log10 delta_s); N_0 is 0 (no block scale at s = 0)
    mode: str = "paper"
    gamma: float = 1.0
    tau: float = 2.0

    def __len__(self):
        return len(self.entries)

    def N(self, s: int) -> int:
        return int(self.entries[s][1])

    def log10_delta(self, s: int) -> float:
        return float(self.entries[s][2])

    @property
    def s_max(self) -> int:
        return len(self.entries) - 1

    def rows(self):
        return [(int(s), int(n), float(ld)) for s, n, ld in self.entries]


def schedule(gamma: float, tau: float, *, epsilon0: float | None = None, delta0: float | None = None,
             log10_delta0: float | None = None, s_max: int = 3, mode: str = "paper",
             table: Sequence | None = None) -> ScaleSchedule:
    """Scale table N_{s+1} = [(gamma/delta_s)^(1/(30 tau))], gamma/delta_{s+1} = (gamma/delta_s)^30.

    In exploration mode ``table`` (rows s, N_s, log10 delta_s) is validated
    and returned as is.
    """
    if mode == "exploration":
        if table is None:
            raise ScheduleInvalid("exploration mode needs a table")
        rows = [(int(r[0]), int(r[1]), float(r[2])) for r in table]
        for i, (s, n, ld) in enumerate(rows):
            if s != i:
                raise ScheduleInvalid(f"row {i} has s={s}")
            if not ld < 0:
                raise ScheduleInvalid("delta_s must lie in (0, 1)")
            if i and not (n > rows[i - 1][1] and ld < rows[i - 1][2]):
                raise ScheduleInvalid(f"row {i}: N must increase and delta decrease")
        return ScaleSchedule(rows, "exploration", gamma, tau)
    if mode != "paper":
        raise ScheduleInvalid(f"unknown mode {mode!r}")
    with mpmath.workdps(60):
        if log10_delta0 is not None:
            ld = mpmath.mpf(log10_delta0)
        elif delta0 is not None:
            ld = mpmath.log10(mpmath.mpf(str(delta0)))
        elif epsilon0 is not None:
            ld = mpmath.log10(mpmath.mpf(str(epsilon0))) / 30
        else:
            raise ScheduleInvalid("need epsilon0 or delta0")
        if not ld < 0:
            raise ScheduleInvalid("delta0 must lie in (0, 1)")
        lg = mpmath.log10(mpmath.mpf(str(gamma)))
        L = lg - ld  # log10(gamma / delta_s)
        # (gamma/delta_0)^30 is rational whenever the inputs are decimals
        B = None
        if log10_delta0 is None:
            g = Fraction(str(gamma))
            B = g ** 30 / Fraction(str(delta0)) ** 30 if delta0 is not None else g ** 30 / Fraction(str(epsilon0))
        t = Fraction(str(tau))
        rows = [(0, 0, float(ld))]
        for s in range(1, s_max + 1):
            expo = L / (30 * mpmath.mpf(tau))
            with mpmath.workdps(int(max(expo, 0)) + 40):
                n = int(mpmath.floor(mpmath.power(10, expo)))
            if B is not None:
                # N_s = floor(B^e) with e = 30^(s-2) / (30 tau)
                e = Fraction(30) ** (s - 2) / (30 * t)
                n = _certify_floor(n, B, e)
            L = 30 * L
            rows.append((s, n, float(lg - L)))
    return ScaleSchedule(rows, "paper", gamma, tau)


def _certify_floor(n: int, base: Fraction, e: Fraction, max_digits: int = 2_000_000) -> int:
    """Correct an approximate floor(base^e) with exact integer comparisons."""
    u, v = base.numerator, base.denominator
    a, b = e.numerator, e.denominator
    if a * max(len(str(u)), len(str(v))) > max_digits:
        return n
    ua, va = u ** a, v ** a
    n = max(n, 0)
    while (n + 1) ** b * va <= ua:
        n += 1
    while n > 0 and n ** b * va > ua:
        n -= 1
    return n


# ---------------------------------------------------------------------------
# generation state


@dataclass
class RootCertificate:
    theta: complex
    center: complex
    contour_radius: float
    winding: int
    residual: float
    paired: bool
    roots: list = field(default_factory=list)
    alternative: str | None = None
    shift_ok: bool | None = None
    n_points: int = 0

    def to_json(self):
        return {
            "theta": [self.theta.real, self.theta.imag],
            "center": [self.center.real, self.center.imag],
            "contour_radius": self.contour_radius,
            "winding": self.winding,
            "residual": self.residual,
            "paired": self.paired,
            "roots": [[r.real, r.imag] for r in self.roots],
            "alternative": self.alternative,
            "shift_ok": self.shift_ok,
        }


@dataclass
class Generation:
    """Data of MSA step s restricted to a finite window."""

    s: int
    window: SiteSet
    P: SiteSet
    shift2: np.ndarray  # doubled lattice shift of P_s modulo 2
    t_omega: SiteSet  # Omega_k - k
    t_tilde: SiteSet  # tilde Omega_k - k
    t_A: SiteSet  # A_k - k
    case: str | None = None  # case of the step s-1 -> s
    l2: np.ndarray | None = None  # doubled l_{s-1}
    theta_s: complex | None = None
    log10_delta: float | None = None
    N: int = 0
    certificate: RootCertificate | None = None
    Qplus: SiteSet | None = None
    Qminus: SiteSet | None = None
    Qt_plus: SiteSet | None = None
    Qt_minus: SiteSet | None = None
    truncated: set = field(default_factory=set)
    parent: dict = field(default_factory=dict)
    owner: dict = field(default_factory=dict)  # previous resonant site -> centre in P
    flags: list = field(default_factory=list)

    @property
    def Q(self) -> SiteSet:
        return self.Qplus | self.Qminus

    @property
    def Qtilde(self) -> SiteSet:
        return self.Qt_plus | self.Qt_minus

    @property
    def zeta(self) -> float:
        return diam(self.t_omega)

    @property
    def zeta_tilde(self) -> float:
        return diam(self.t_tilde)

    def _block(self, template: SiteSet, k2) -> SiteSet:
        b = template.translate2(k2)
        return b & self.window

    def omega(self, k2) -> SiteSet:
        return self._block(self.t_omega, k2)

    def omega_tilde(self, k2) -> SiteSet:
        return self._block(self.t_tilde, k2)

    def A(self, k2) -> SiteSet:
        return self._block(self.t_A, k2)

    def is_truncated(self, k2) -> bool:
        return tuple(int(c) for c in k2) in self.truncated

    def to_json(self) -> dict:
        out = {
            "s": self.s,
            "case": self.case,
            "l_s": None if self.l2 is None else [int(c) // 2 for c in self.l2],
            "theta_s": None if self.theta_s is None else [self.theta_s.real, self.theta_s.imag],
            "log10_delta": self.log10_delta,
            "N": self.N,
            "P_s": self.P.to_json() if self.s > 0 else "window",
            "Q_s": self.Q.to_json() if self.Qplus is not None else None,
            "blocks": {
                "omega_minus_k": self.t_omega.to_json(),
                "omega_tilde_minus_k": self.t_tilde.to_json(),
                "A_minus_k": self.t_A.to_json(),
                "truncated": sorted([list(k) for k in self.truncated]),
            },
            "certificates": None if self.certificate is None else self.certificate.to_json(),
            "flags": list(self.flags),
        }
        return out


def _phases(cfg: ModelConfig, sites: SiteSet, theta) -> np.ndarray:
    return theta + sites.sites @ cfg.omega_arr


def _below(x, log10_thr: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log10(x) < log10_thr


def resonant_sets(gen: Generation, cfg: ModelConfig, theta=None) -> Generation:
    """Fill Q^+-, tilde Q^+- of gen from theta_s and delta_s."""
    theta = cfg.theta if theta is None else theta
    ph = _phases(cfg, gen.P, theta)
    ld = gen.log10_delta
    p, m = torus_norm(ph + gen.theta_s), torus_norm(ph - gen.theta_s)
    p, m = np.atleast_1d(p), np.atleast_1d(m)
    pts = gen.P.pts2
    d = gen.P.d
    mk = lambda mask: SiteSet(pts[mask], d=d, _canonical=True)
    gen.Qplus, gen.Qminus = mk(_below(p, ld)), mk(_below(m, ld))
    gen.Qt_plus, gen.Qt_minus = mk(_below(p, 2 * ld / 3)), mk(_below(m, 2 * ld / 3))
    return gen


def initial_generation(cfg: ModelConfig, Lambda: SiteSet, log10_delta0: float,
                       theta0: complex | None = None) -> Generation:
    """Generation 0: P_0 is the (integer part of the) window, blocks are singletons."""
    theta0 = solve_theta0(cfg) if theta0 is None else complex(theta0)
    win = Lambda.integer_part()
    origin = SiteSet(np.zeros((1, win.d), dtype=np.int64), d=win.d, _canonical=True)
    gen = Generation(0, win, win, np.zeros(win.d, dtype=np.int64), origin, origin, origin,
                     theta_s=theta0, log10_delta=float(log10_delta0))
    return resonant_sets(gen, cfg)


def _pair_min(a: SiteSet, b: SiteSet):
    """(distance, lexicographically smallest minimizing pair) between a and b."""
    if len(a) == 0 or len(b) == 0:
        return math.inf, None
    pa, pb = a.pts2, b.pts2
    dd = np.abs(pa[:, None, :] - pb[None, :, :]).max(axis=2)
    m = dd.min()
    ii, jj = np.nonzero(dd == m)
    # a and b are sorted, so the first hit is the lexicographic minimum
    return m / 2.0, (pa[ii[0]], pb[jj[0]])


def classify_case(gen: Generation, N_next: int):
    """(case, l2): C1 when dist(tilde Q^-, Q^+) > 100 N^3, else C2 with l = i - j."""
    dmin, pair = _pair_min(gen.Qplus, gen.Qt_minus)
    if pair is None or dmin > 100 * N_next ** 3:
        return "C1", np.zeros(gen.P.d, dtype=np.int64)
    i2, j2 = pair
    return "C2", (i2 - j2).astype(np.int64)


def mirrored_distances(gen: Generation) -> tuple[float, float]:
    """dist(tilde Q^-, Q^+) and dist(tilde Q^+, Q^-)."""
    return _pair_min(gen.Qplus, gen.Qt_minus)[0], _pair_min(gen.Qminus, gen.Qt_plus)[0]


def _rel_box(k2, radius: int) -> SiteSet:
    k2 = np.asarray(k2, dtype=np.int64)
    return box2(k2, radius).translate2(-k2)


def _symmetrize(t: SiteSet) -> SiteSet:
    return t | t.negate()


def _templates(P2: np.ndarray, core_o: SiteSet, core_t: SiteSet, prev: list, max_iter: int = 50):
    """Symmetric, translation-invariant templates closed under block absorption."""
    To = _symmetrize(core_o)
    Tt = _symmetrize(core_t) | To
    for _ in range(max_iter):
        new_o, new_t = To, Tt
        if prev:
            for k2 in P2:
                new_o = new_o | align_enlarge(To.translate2(k2), prev).translate2(-k2)
                new_t = new_t | align_enlarge(Tt.translate2(k2), prev).translate2(-k2)
        new_o = _symmetrize(new_o)
        new_t = _symmetrize(new_t) | new_o
        if new_o == To and new_t == Tt:
            return To, Tt
        To, Tt = new_o, new_t
    raise GeometryViolation("template enlargement did not stabilise")


def _assign_parents(parent: dict):
    """Map each previous resonant site to one new centre (nearest, then lexicographic).

    Returns the map and the sites that had more than one candidate at equal distance.
    """
    cands: dict = {}
    for p, sites in parent.items():
        for o in sites:
            cands.setdefault(o, []).append(p)
    owner, ties = {}, []
    for o, ps in sorted(cands.items()):
        dist2 = [max(abs(a - b) for a, b in zip(o, p)) for p in ps]
        m = min(dist2)
        best = sorted(p for p, dd in zip(ps, dist2) if dd == m)
        owner[o] = best[0]
        if len(best) > 1:
            ties.append(o)
    return owner, ties


def build_generation(generations: list, sched: ScaleSchedule, cfg: ModelConfig,
                     case: tuple | None = None) -> Generation:
    """Generation s+1 (without theta_{s+1}) from the last entry of ``generations``."""
    g = generations[-1]
    s1 = g.s + 1
    N = sched.N(s1)
    tag, l2 = classify_case(g, N) if case is None else case
    d = g.P.d
    win = g.window
    parent = {}
    if tag == "C1":
        P2 = g.Q.pts2.copy()
        shift2 = g.shift2.copy()
        t_A = g.t_A
        for k2 in P2:
            parent[tuple(int(c) for c in k2)] = [tuple(int(c) for c in k2)]
    else:
        half = (l2 // 2).astype(np.int64)  # l/2 in doubled units
        O = g.Qminus | g.Qplus.translate2(-l2)
        P2 = O.pts2 + half[None, :] if len(O) else np.zeros((0, d), dtype=np.int64)
        shift2 = (g.shift2 + half) % 2
        t_A = g.t_A.translate2(-half) | g.t_A.translate2(half)
        for o2 in O.pts2:
            parent[tuple(int(c) for c in o2 + half)] = [tuple(int(c) for c in o2),
                                                         tuple(int(c) for c in o2 + l2)]
    P = SiteSet(P2, d=d) if len(P2) else SiteSet.empty(d)
    owner, ties = _assign_parents(parent)
    gen = Generation(s1, win, P, shift2, g.t_omega, g.t_tilde, t_A, case=tag, l2=np.asarray(l2),
                     N=N, log10_delta=sched.log10_delta(s1) if s1 <= sched.s_max else None)
    gen.parent = parent
    gen.owner = owner
    gen.flags += [f"covering-tie at {list(site)}" for site in ties]
    if len(P) == 0:
        return gen
    ref = P.pts2[0]
    if tag == "C1":
        core_o = _rel_box(ref, N)
        core_t = _rel_box(ref, N ** 3)
    else:
        half = (l2 // 2).astype(np.int64)
        core_o = _rel_box(ref, N ** 3) | g.t_tilde.translate2(-half) | g.t_tilde.translate2(half)
        core_t = _rel_box(ref, N ** 5) | core_o
    prev = []
    for h in generations[1:]:
        prev += [h.t_tilde.translate2(k2) for k2 in h.P.pts2]
    To, Tt = _templates(P.pts2, core_o, core_t, prev)
    gen.t_omega, gen.t_tilde = To, Tt
    margin = 50 * (sched.N(g.s) ** 5 if g.s > 0 else 0)
    for k2 in P.pts2:
        if not Tt.translate2(k2).issubset(win):
            gen.truncated.add(tuple(int(c) for c in k2))
    if gen.truncated:
        gen.flags.append("boundary-truncated")
    _check_generation(gen, generations, margin, core_t)
    return gen


def _check_generation(gen: Generation, generations: list, margin: float, core_t: SiteSet):
    cert = {"s": gen.s}
    if not gen.t_A.issubset(gen.t_omega) or not gen.t_omega.issubset(gen.t_tilde):
        raise GeometryViolation("A, Omega, tilde Omega not nested", cert)
    if len(gen.t_A) > 2 ** gen.s:
        raise GeometryViolation(f"#A = {len(gen.t_A)} > 2^s", cert)
    for t in (gen.t_tilde, gen.t_A, gen.t_omega):
        if not t.is_symmetric():
            raise GeometryViolation("template not symmetric", cert)
    if len(gen.t_tilde) > len(core_t):
        # enlargement must stay in the allowed margin around the core
        extra = gen.t_tilde - core_t
        if len(extra) and dist(extra, core_t) > margin:
            raise GeometryViolation("enlargement exceeds the 50 N^5 margin", cert)
    P2 = gen.P.pts2
    dm = diam(gen.t_tilde)
    for a in range(len(P2)):
        for b in range(a + 1, len(P2)):
            ba = gen.t_tilde.translate2(P2[a])
            bb = gen.t_tilde.translate2(P2[b])
            dd = dist(ba, bb)
            if not dd > 10 * dm:
                raise GeometryViolation(
                    f"blocks at {P2[a] / 2} and {P2[b] / 2} are {dd} apart, need > {10 * dm}",
                    {"s": gen.s, "k": (P2[a] / 2).tolist(), "k_prime": (P2[b] / 2).tolist(),
                     "dist": dd, "diam": dm})
    # covering of the previous resonant set
    prev = generations[-1]
    if prev.Qplus is not None:
        for k2 in prev.Q.pts2:
            blk = prev.t_tilde.translate2(k2)
            if not any(blk.issubset(gen.t_omega.translate2(p)) for p in P2):
                raise GeometryViolation(f"Q_{prev.s} site {k2 / 2} not covered", cert)


# ---------------------------------------------------------------------------
# root location


def block_matrix(gen: Generation, cfg: ModelConfig):
    """z -> M(z) = T on tilde Omega - k."""
    return lambda z: assemble_T(gen.t_tilde, cfg, theta=z)


def _logderiv(gen: Generation, cfg: ModelConfig, z: complex):
    """(d/dz log det M(z), LogDet of M(z))."""
    M = assemble_T(gen.t_tilde, cfg, theta=z)
    inv = invert(M)
    dv = cfg.potential.derivative(z + gen.t_tilde.sites @ cfg.omega_arr)
    return complex(np.sum(np.diag(inv.inverse.entries) * dv)), inv.log_det


def _contour(gen, cfg, center, radius, tol=1e-6, n0=64, n_max=1 << 14):
    n = n0
    prev = None
    while True:
        t = 2 * np.pi * np.arange(n) / n
        w = radius * np.exp(1j * t)
        vals = np.empty(n, dtype=np.complex128)
        logs = np.empty(n)
        for i, wi in enumerate(w):
            g, ld = _logderiv(gen, cfg, center + wi)
            vals[i] = g
            logs[i] = ld.logabs
        # (1/2 pi i) oint (z-c)^m f'/f dz as a trapezoid mean
        sums = [complex(np.mean(vals * w ** (m + 1))) for m in range(3)]
        wind = sums[0].real
        if prev is not None and abs(wind - prev) < tol and abs(wind - round(wind)) < tol:
            return int(round(wind)), sums, float(logs.max()), n
        if n >= n_max:
            raise ContourContaminationError(f"winding did not stabilise ({wind:.6f})")
        prev = wind
        n *= 2


def _newton(gen, cfg, z, steps=30):
    for _ in range(steps):
        try:
            g, _ = _logderiv(gen, cfg, z)
        except NearResonanceError:
            break  # landed on the zero itself
        if g == 0 or not np.isfinite(g):
            break
        dz = 1.0 / g
        z = z - dz
        if abs(dz) < 1e-15 * max(1.0, abs(z)):
            break
    return z


def _det_logabs(gen, cfg, z) -> float:
    return logdet(assemble_T(gen.t_tilde, cfg, theta=z)).logabs


def locate_theta(gen: Generation, cfg: ModelConfig, prev: Generation, pair_tol: float = 1e-8) -> RootCertificate:
    """Count and polish the zeros of det M_{s+1}(z) in the case-specific disc."""
    ld = prev.log10_delta
    delta = 10.0 ** ld
    alternative = None
    if gen.case == "C1":
        center = complex(prev.theta_s)
        radius = 10.0 ** (ld * 18 / 19)
    else:
        half_l = (gen.l2 / 2.0) / 2.0  # l/2 in lattice units
        x = float(half_l @ cfg.omega_arr)
        a0 = torus_norm(x + prev.theta_s)
        a1 = torus_norm(x + prev.theta_s - 0.5)
        thr = 10.0 ** (2 * ld / 3)
        if a0 < thr and a1 < thr:
            raise AlternativeConflict("both half-shift alternatives hold")
        alternative = "l01" if a0 <= a1 else "l02"
        center = 0j if alternative == "l01" else 0.5 + 0j
        radius = 10.0 ** (ld * 5 / 8)
    r = radius
    for attempt in range(2):
        wind, sums, logmax, npts = _contour(gen, cfg, center, r)
        if wind == 0:
            raise NoRootError(f"no zero of det M inside |z - {center:.6g}| < {r:.3g}")
        if wind <= 2:
            break
        if attempt == 0:
            r *= 0.5
            continue
        raise ContourContaminationError(f"winding {wind} > 2 inside radius {r:.3g}")
    if wind == 1:
        seeds = [sums[1]]
    else:
        p1, p2 = sums[1], sums[2]
        e2 = (p1 * p1 - p2) / 2
        disc = np.sqrt(complex(p1 * p1 - 4 * e2))
        seeds = [(p1 + disc) / 2, (p1 - disc) / 2]
    roots = [_newton(gen, cfg, center + s) for s in seeds]
    # theta_{s+1}: nearest root in C1, larger real part (then imaginary) in C2
    if gen.case == "C1":
        theta = min(roots, key=lambda z: abs(z - center))
    else:
        theta = max(roots, key=lambda z: ((z - center).real, (z - center).imag))
    lres = _det_logabs(gen, cfg, theta) - logmax
    lres_m = _det_logabs(gen, cfg, -theta) - logmax
    residual = math.exp(lres) if lres > -700 else 0.0
    residual_m = math.exp(lres_m) if lres_m > -700 else 0.0
    paired = residual < pair_tol and residual_m < pair_tol
    if gen.case == "C1":
        bound = abs(cfg.epsilon) if prev.s == 0 else delta ** 1.5
        shift_ok = abs(theta - prev.theta_s) < bound if bound > 0 else abs(theta - prev.theta_s) < 1e-12
    else:
        shift_ok = None
    return RootCertificate(complex(theta), center, r, wind, residual, paired, [complex(z) for z in roots],
                           alternative, shift_ok, npts)


def contour_winding(gen: Generation, cfg: ModelConfig, center: complex, radius: float) -> int:
    return _contour(gen, cfg, center, radius)[0]


# ---------------------------------------------------------------------------
# driver


@dataclass
class MsaTrace:
    generations: list
    status: str = "ok"
    error: str | None = None
    certificate: dict | None = None

    def to_json(self) -> dict:
        return {"status": self.status, "error": self.error, "geometry": self.certificate,
                "generations": [g.to_json() for g in self.generations]}


def run_msa(cfg: ModelConfig, sched: ScaleSchedule, Lambda: SiteSet, s_max: int | None = None,
            theta0: complex | None = None) -> MsaTrace:
    """Iterate generations until Q_s is empty, s_max is reached or a check fails."""
    s_max = sched.s_max if s_max is None else min(s_max, sched.s_max)
    gens = [initial_generation(cfg, Lambda, sched.log10_delta(0), theta0)]
    trace = MsaTrace(gens)
    while gens[-1].s < s_max:
        g = gens[-1]
        if len(g.Q) == 0:
            trace.status = "terminated-empty"
            break
        try:
            new = build_generation(gens, sched, cfg)
        except GeometryViolation as exc:
            trace.status, trace.error, trace.certificate = "geometry-violation", str(exc), exc.certificate
            break
        try:
            cert = locate_theta(new, cfg, g)
        except (NoRootError, ContourContaminationError, AlternativeConflict, NearResonanceError) as exc:
            gens.append(new)
            trace.status, trace.error = type(exc).__name__, str(exc)
            break
        new.certificate = cert
        new.theta_s = cert.theta
        resonant_sets(new, cfg)
        gens.append(new)
    else:
        trace.status = "s-max"
    return trace


# ---------------------------------------------------------------------------
# good sets and Green's functions


def is_good(Lambda: SiteSet, generations: list, s: int):
    """(ok, certificate) for the two-clause s-goodness of Lambda."""
    for sp in range(s):
        g, nxt = generations[sp], generations[sp + 1]
        for k2 in g.Q.pts2:
            blk = g.omega_tilde(k2) if sp > 0 else SiteSet(k2[None, :], d=g.P.d, _canonical=True)
            if not blk.issubset(Lambda):
                continue
            for p2 in nxt.P.pts2:
                if blk.issubset(nxt.omega(p2)) and not nxt.omega_tilde(p2).issubset(Lambda):
                    return False, {"clause": 1, "s_prime": sp, "site": (k2 / 2).tolist(),
                                   "parent": (p2 / 2).tolist()}
    g = generations[s]
    if s == 0:
        bad = Lambda & g.Q
        if len(bad):
            return False, {"clause": 2, "s_prime": 0, "site": (bad.pts2[0] / 2).tolist()}
        return True, None
    for k2 in g.Q.pts2:
        if g.omega_tilde(k2).issubset(Lambda):
            return False, {"clause": 2, "s_prime": s, "site": (k2 / 2).tolist()}
    return True, None


@dataclass
class GreenResult:
    inverse: LatticeOperator
    norms: dict
    log10_norms: dict
    cond: float
    decay_exponent: float
    profile: tuple


def green(Lambda: SiteSet, cfg: ModelConfig, alphas=(0.0,), theta=None, E=None) -> GreenResult:
    """T_Lambda^{-1} with its Sobolev norms and an off-diagonal decay summary."""
    from .opalgebra import offset_profile

    T = assemble_T(Lambda, cfg, theta=theta, E=E)
    inv = invert(T)
    G = inv.inverse
    norms, lnorms = {}, {}
    for a in sorted(set([0.0] + [float(x) for x in alphas])):
        ln = log_sobolev_norm(G, a)
        lnorms[a] = ln / LN10
        norms[a] = math.exp(ln) if ln < 700 else math.inf
    r, sup = offset_profile(G)
    order = np.argsort(r)
    r, sup = r[order], sup[order]
    # aggregate the sup over all offsets of equal sup-norm
    ur = np.unique(r)
    us = np.array([sup[r == x].max() for x in ur])
    ok = (ur > 0) & (us > 0)
    if ok.sum() >= 2:
        slope = np.polyfit(np.log1p(ur[ok]), np.log(us[ok]), 1)[0]
        expo = float(-slope)
    else:
        expo = math.inf
    return GreenResult(G, norms, lnorms, inv.cond, expo, (ur, us))


def schur_at(gen: Generation, cfg: ModelConfig, z: complex):
    """Schur complement S_s(z) of M_s(z) onto A - k."""
    return schur(assemble_T(gen.t_tilde, cfg, theta=z), gen.t_A)


# ---------------------------------------------------------------------------
# audits


@dataclass
class AuditRow:
    s: int
    bound_id: str
    lhs_log10: float
    rhs_log10: float
    ratio_log10: float
    passed: bool
    truncated: bool = False
    info: str = ""

    def csv_row(self):
        return [self.s, self.bound_id, self.lhs_log10, self.rhs_log10, self.ratio_log10,
                "true" if self.passed else "false"]


def _upper(s, bid, lhs, rhs, budget, truncated=False, info=""):
    ratio = lhs - rhs
    return AuditRow(s, bid, lhs, rhs, ratio, bool(ratio < math.log10(budget)), truncated, info)


def _lower(s, bid, lhs, rhs, budget, truncated=False, info=""):
    # ratio is oriented so that positive values mean violation
    ratio = rhs - lhs
    return AuditRow(s, bid, lhs, rhs, ratio, bool(ratio < math.log10(budget)), truncated, info)


def _lt(x):
    return math.log10(x) if x > 0 else -math.inf


def audit_bounds(generations: list, cfg: ModelConfig, Lambda_samples: Sequence = (), alphas=(1.0,),
                 hard_budget: float = 1.0, soft_budget: float = 10.0, z_samples: int = 8,
                 theta=None) -> list[AuditRow]:
    """Rows (s, bound_id, lhs, rhs, ratio, pass) for the block and good-set bounds.

    Hard-constant bounds use ``hard_budget``; bounds with implicit constants
    use ``soft_budget``. For lower bounds the ratio is rhs - lhs.
    """
    theta = cfg.theta if theta is None else theta
    rows: list[AuditRow] = []
    hop = cfg.hopping
    for g in generations[1:]:
        if g.theta_s is None:
            continue
        s, ld = g.s, g.log10_delta
        for k2 in g.P.pts2:
            trunc = g.is_truncated(k2)
            blk = g.omega_tilde(k2)
            ph = complex(theta + (k2 / 2.0) @ cfg.omega_arr)
            lp = _lt(torus_norm(ph - g.theta_s)) + _lt(torus_norm(ph + g.theta_s))
            tag = f"k={(k2 / 2).tolist()}"
            try:
                G = invert(assemble_T(blk, cfg, theta=theta)).inverse
            except NearResonanceError:
                rows.append(AuditRow(s, "tb0", math.inf, -ld / 15 - lp, math.inf, False, trunc, tag + " singular"))
                continue
            rows.append(_upper(s, "tb0", log_sobolev_norm(G, 0) / LN10, -ld / 15 - lp, hard_budget, trunc, tag))
            if not g.Q.contains2(k2[None, :])[0]:
                for a in alphas:
                    rhs = a * _lt(g.zeta) - 7 * ld / 3
                    rows.append(_upper(s, f"tba@{a:g}", log_sobolev_norm(G, a) / LN10, rhs, soft_budget, trunc, tag))
        # Schur complement window bounds on a ring around theta_s
        vR = cfg.potential.sup_norm()
        rad = 0.5 * 10.0 ** (ld / 2)
        for j in range(z_samples):
            z = g.theta_s + rad * np.exp(2j * np.pi * (j + 0.5) / z_samples)
            try:
                sd = schur_at(g, cfg, z)
            except NearResonanceError:
                continue
            rows.append(_upper(s, "ss", log_sobolev_norm(sd.complement, 0) / LN10, _lt(4 * vR), hard_budget))
            rhs = 2 * ld / 75 + _lt(torus_norm(z - g.theta_s)) + _lt(torus_norm(z + g.theta_s))
            rows.append(_lower(s, "detss", sd.log_det_s.log10abs, rhs, soft_budget))
    top = generations[-1] if generations[-1].theta_s is not None else generations[-2]
    for Lam in Lambda_samples:
        ok, _ = is_good(Lam, generations, top.s)
        if not ok:
            continue
        s, ld = top.s, top.log10_delta
        try:
            G = invert(assemble_T(Lam, cfg, theta=theta)).inverse
        except NearResonanceError:
            rows.append(AuditRow(s, "tsg01", math.inf, -32 * ld / 15, math.inf, False, False, "singular"))
            continue
        l0 = log_sobolev_norm(G, 0) / LN10
        if s == 0:
            a = hop.alpha1 + hop.alpha0
            rows.append(_upper(0, "0g", log_sobolev_norm(G, a) / LN10, -2 * ld, soft_budget))
            continue
        inside = [k2 for k2 in top.P.pts2 if top.omega_tilde(k2).issubset(Lam)]
        if inside:
            worst = -math.inf
            for k2 in inside:
                ph = complex(theta + (k2 / 2.0) @ cfg.omega_arr)
                worst = max(worst, -_lt(torus_norm(ph - top.theta_s)) - _lt(torus_norm(ph + top.theta_s)))
            rows.append(_upper(s, "tsg01a", l0, -2 * ld / 15 + worst, hard_budget))
        rows.append(_upper(s, "tsg01", l0, -32 * ld / 15, hard_budget))
        for a in alphas:
            rows.append(_upper(s, f"tsg1@{a:g}", log_sobolev_norm(G, a) / LN10,
                               a * _lt(top.zeta) - 14 * ld / 3, soft_budget))
    return rows


def fs_violations(gen: Generation, cfg: ModelConfig, theta=None) -> list:
    """Shifted-lattice window sites within 10 delta^(2/3) of -+theta_s missing from P_s."""
    theta = cfg.theta if theta is None else theta
    win2 = gen.window.pts2 + gen.shift2[None, :]
    cand = SiteSet(win2, d=gen.P.d)
    ph = _phases(cfg, cand, theta)
    thr = math.log10(10.0) + 2 * gen.log10_delta / 3
    close = _below(np.minimum(np.atleast_1d(torus_norm(ph + gen.theta_s)),
                              np.atleast_1d(torus_norm(ph - gen.theta_s))), thr)
    miss = cand.pts2[close & ~gen.P.contains2(cand.pts2)]
    return [(m / 2).tolist() for m in miss]
