"""Finite lattice operators and the weighted-l1 Sobolev norm calculus."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.special import logsumexp, zeta

from . import kernels
from .lattice import SiteSet


class CompositionError(ValueError):
    pass


class NearResonanceError(ArithmeticError):
    """Matrix singular to working precision."""

    def __init__(self, msg, pivot=0.0):
        super().__init__(msg)
        self.pivot = pivot


class SchurDegenerateError(NearResonanceError):
    pass


class ComplexityRefusal(ValueError):
    pass


class PerturbationOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class LogDet:
    """Determinant as log|det| plus phase (radians)."""

    logabs: float
    phase: float = 0.0

    @classmethod
    def of(cls, z: complex) -> "LogDet":
        z = complex(z)
        if z == 0:
            return cls(-math.inf, 0.0)
        return cls(math.log(abs(z)), math.atan2(z.imag, z.real))

    def __mul__(self, other: "LogDet") -> "LogDet":
        return LogDet(self.logabs + other.logabs, _wrap(self.phase + other.phase))

    def __truediv__(self, other: "LogDet") -> "LogDet":
        return LogDet(self.logabs - other.logabs, _wrap(self.phase - other.phase))

    @property
    def value(self) -> complex:
        return complex(math.exp(self.logabs) * np.exp(1j * self.phase)) if self.logabs > -math.inf else 0j

    @property
    def log10abs(self) -> float:
        return self.logabs / math.log(10.0)

    def discrepancy(self, other: "LogDet") -> tuple[float, float]:
        return abs(self.logabs - other.logabs), abs(_wrap(self.phase - other.phase))


def _wrap(p: float) -> float:
    return float((p + math.pi) % (2 * math.pi) - math.pi)


class LatticeOperator:
    """Dense complex matrix indexed by (rows, cols) SiteSets."""

    __slots__ = ("rows", "cols", "entries")

    def __init__(self, rows: SiteSet, cols: SiteSet, entries):
        m = np.asarray(entries, dtype=np.complex128)
        if m.shape != (len(rows), len(cols)):
            raise ValueError(f"entries shape {m.shape} does not match ({len(rows)}, {len(cols)})")
        self.rows = rows
        self.cols = cols
        self.entries = m

    @classmethod
    def identity(cls, sites: SiteSet) -> "LatticeOperator":
        return cls(sites, sites, np.eye(len(sites), dtype=np.complex128))

    @classmethod
    def zeros(cls, rows: SiteSet, cols: SiteSet) -> "LatticeOperator":
        return cls(rows, cols, np.zeros((len(rows), len(cols)), dtype=np.complex128))

    @property
    def shape(self):
        return self.entries.shape

    @property
    def is_square(self) -> bool:
        return self.rows == self.cols

    def restrict(self, rows: SiteSet, cols: SiteSet | None = None) -> "LatticeOperator":
        """R_rows M R_cols; the new index sets must be subsets."""
        cols = rows if cols is None else cols
        ri = self.rows.index_of(rows.pts2)
        ci = self.cols.index_of(cols.pts2)
        if (ri < 0).any() or (ci < 0).any():
            raise CompositionError("restriction outside the index sets")
        return LatticeOperator(rows, cols, self.entries[np.ix_(ri, ci)])

    def translate2(self, shift2) -> "LatticeOperator":
        return LatticeOperator(self.rows.translate2(shift2), self.cols.translate2(shift2), self.entries)

    def dagger(self) -> "LatticeOperator":
        return LatticeOperator(self.cols, self.rows, self.entries.conj().T)

    def __matmul__(self, other: "LatticeOperator") -> "LatticeOperator":
        return compose(self, other)

    def _check_same(self, other):
        if self.rows != other.rows or self.cols != other.cols:
            raise CompositionError("index sets differ")

    def __add__(self, other: "LatticeOperator") -> "LatticeOperator":
        self._check_same(other)
        return LatticeOperator(self.rows, self.cols, self.entries + other.entries)

    def __sub__(self, other: "LatticeOperator") -> "LatticeOperator":
        self._check_same(other)
        return LatticeOperator(self.rows, self.cols, self.entries - other.entries)

    def __mul__(self, c) -> "LatticeOperator":
        return LatticeOperator(self.rows, self.cols, self.entries * c)

    __rmul__ = __mul__

    def to_json(self) -> dict:
        return {
            "rows": self.rows.to_json(),
            "cols": self.cols.to_json(),
            "entries": [[float(z.real), float(z.imag)] for z in self.entries.ravel()],
        }

    @classmethod
    def from_json(cls, data: dict, d: int = 1) -> "LatticeOperator":
        rows = SiteSet.from_json(data["rows"], d)
        cols = SiteSet.from_json(data["cols"], d)
        e = np.asarray(data["entries"], dtype=np.float64).reshape(-1, 2)
        m = (e[:, 0] + 1j * e[:, 1]).reshape(len(rows), len(cols))
        return cls(rows, cols, m)


# ---------------------------------------------------------------------------
# norms


def offset_profile(M: LatticeOperator):
    """Occurring offsets k (sup-norm, as floats) and sup_l |M(k+l, l)|."""
    keys, sups = kernels.offset_profile(M.rows.pts2, M.cols.pts2, np.abs(M.entries))
    radii = np.abs(keys).max(axis=1) / 2.0 if len(keys) else np.zeros(0)
    return radii, sups


def sobolev_norm(M: LatticeOperator, alpha: float = 0.0) -> float:
    r, s = offset_profile(M)
    if alpha == 0:
        return float(s.sum())
    return float(np.sum(s * (1.0 + r) ** alpha))


def log_sobolev_norm(M: LatticeOperator, alpha: float = 0.0) -> float:
    """Natural log of the Sobolev norm, safe for huge alpha."""
    r, s = offset_profile(M)
    ok = s > 0
    if not ok.any():
        return -math.inf
    return float(logsumexp(np.log(s[ok]) + alpha * np.log1p(r[ok])))


def norm_profile(M: LatticeOperator, alphas) -> np.ndarray:
    r, s = offset_profile(M)
    w = np.log1p(r)
    return np.array([float(np.sum(s * np.exp(a * w))) for a in alphas])


def vector_norm(psi, sites: SiteSet, alpha: float = 0.0) -> float:
    """sum |psi(k)| (1+||k||)^alpha."""
    r = np.abs(sites.pts2).max(axis=1) / 2.0
    return float(np.sum(np.abs(psi) * (1.0 + r) ** alpha))


def tame_constant(n: int, alpha: float) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return float(n) ** max(0.0, alpha - 1.0)


def b1_constant(alpha0: float, d: int) -> float:
    """sum over Z^d of (1+||k||)^(-alpha0), requires alpha0 > d."""
    if alpha0 <= d:
        raise ValueError("alpha0 must exceed d")
    # shell r >= 1 has (2r+1)^d - (2r-1)^d points; with m = r+1 this is a
    # polynomial in m and the sum reduces to Hurwitz/Riemann zeta values
    p1 = np.polynomial.Polynomial([-1.0, 2.0]) ** d
    p3 = np.polynomial.Polynomial([-3.0, 2.0]) ** d
    c = (p1 - p3).coef
    total = 1.0
    for j, cj in enumerate(c):
        if cj != 0:
            total += cj * (zeta(alpha0 - j, 2))
    return float(total)


def b2_constant(alpha: float, tol: float = 1e-12) -> float:
    """K(2,a) * (3 + sum_i K(2i,a)/2^(i-1)), summed to a certified tail."""
    beta = max(0.0, alpha - 1.0)
    s = 0.0
    i = 1
    while True:
        term = (2.0 * i) ** beta / 2.0 ** (i - 1)
        s += term
        q = ((i + 1) / i) ** beta / 2.0
        nxt = term * q
        if q < 1 and nxt / (1 - q) < tol * s:
            break
        i += 1
    return tame_constant(2, alpha) * (3.0 + s)


# ---------------------------------------------------------------------------
# algebra


def compose(a: LatticeOperator, b: LatticeOperator) -> LatticeOperator:
    if a.cols != b.rows:
        raise CompositionError("a.cols must equal b.rows")
    return LatticeOperator(a.rows, b.cols, a.entries @ b.entries)


@dataclass
class Inverse:
    inverse: LatticeOperator
    log_det: LogDet
    cond: float


def _lu(m):
    # exact zero pivots are reported through our own errors
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        return sla.lu_factor(m, check_finite=False)


def lu_logdet(m: np.ndarray) -> LogDet:
    if m.shape[0] == 0:
        return LogDet(0.0, 0.0)
    lu, piv = _lu(m)
    return _logdet_from_lu(lu, piv)


def _logdet_from_lu(lu, piv) -> LogDet:
    dg = np.diag(lu)
    if np.any(dg == 0):
        return LogDet(-math.inf, 0.0)
    swaps = int(np.sum(piv != np.arange(len(piv))))
    ph = float(np.sum(np.angle(dg))) + (math.pi if swaps % 2 else 0.0)
    return LogDet(float(np.sum(np.log(np.abs(dg)))), _wrap(ph))


def invert(M: LatticeOperator, rtol: float = 1e-14) -> Inverse:
    """Dense LU inverse with log-determinant and 1-norm condition estimate."""
    if M.rows != M.cols:
        raise CompositionError("invert needs a square operator")
    n = len(M.rows)
    if n == 0:
        return Inverse(M, LogDet(0.0), 1.0)
    m = M.entries
    if not np.all(np.isfinite(m)):
        raise NearResonanceError("non-finite entries", 0.0)
    lu, piv = _lu(m)
    dg = np.abs(np.diag(lu))
    pmin = float(dg.min())
    scale = float(np.abs(m).max())
    if pmin <= rtol * scale * n or pmin == 0.0:
        raise NearResonanceError(f"smallest pivot {pmin:.3e}", pmin)
    inv = sla.lu_solve((lu, piv), np.eye(n, dtype=np.complex128), check_finite=False)
    cond = float(np.abs(m).sum(axis=0).max() * np.abs(inv).sum(axis=0).max())
    return Inverse(LatticeOperator(M.cols, M.rows, inv), _logdet_from_lu(lu, piv), cond)


def logdet(M: LatticeOperator) -> LogDet:
    return lu_logdet(M.entries)


def adjugate(M: LatticeOperator, cap: int = 12) -> LatticeOperator:
    """Cofactor-transpose S* with M S* = det(M) I."""
    n = M.shape[0]
    if M.shape[0] != M.shape[1]:
        raise CompositionError("adjugate needs a square operator")
    if n > cap:
        raise ComplexityRefusal(f"adjugate size {n} exceeds cap {cap}")
    m = M.entries
    if n == 1:
        return LatticeOperator(M.cols, M.rows, np.ones((1, 1), dtype=np.complex128))
    adj = np.empty((n, n), dtype=np.complex128)
    idx = np.arange(n)
    for i in range(n):
        for j in range(n):
            minor = m[np.ix_(idx != i, idx != j)]
            adj[j, i] = (-1) ** (i + j) * np.linalg.det(minor)
    return LatticeOperator(M.cols, M.rows, adj)


def cofactor(M: LatticeOperator, i: int, j: int) -> complex:
    """(i, j) cofactor through an LU determinant (no size cap)."""
    n = M.shape[0]
    idx = np.arange(n)
    minor = M.entries[np.ix_(idx != i, idx != j)]
    return (-1) ** (i + j) * lu_logdet(minor).value


@dataclass
class SchurData:
    a_block: LatticeOperator
    b_block: LatticeOperator
    c_block: LatticeOperator
    d_block: LatticeOperator
    complement: LatticeOperator
    log_det_a: LogDet
    log_det_s: LogDet
    a_inverse: LatticeOperator | None = field(default=None, repr=False)

    def assemble_inverse(self, full: SiteSet) -> LatticeOperator:
        """M^{-1} from the block formula, in the canonical order of ``full``."""
        outer, inner = self.a_block.rows, self.d_block.rows
        ai = self.a_inverse.entries
        b, c = self.b_block.entries, self.c_block.entries
        si = invert(self.complement).inverse.entries
        aib = ai @ b
        cai = c @ ai
        top_left = ai + aib @ si @ cai
        top_right = -aib @ si
        bot_left = -si @ cai
        out = np.zeros((len(full), len(full)), dtype=np.complex128)
        io = full.index_of(outer.pts2)
        ii = full.index_of(inner.pts2)
        out[np.ix_(io, io)] = top_left
        out[np.ix_(io, ii)] = top_right
        out[np.ix_(ii, io)] = bot_left
        out[np.ix_(ii, ii)] = si
        return LatticeOperator(full, full, out)


def schur(M: LatticeOperator, inner: SiteSet) -> SchurData:
    """S = D - C A^{-1} B with A on the complement of ``inner``."""
    if M.rows != M.cols:
        raise CompositionError("schur needs a square operator")
    if not inner.issubset(M.rows):
        raise CompositionError("inner set not contained in the index set")
    outer = M.rows - inner
    A = M.restrict(outer, outer)
    B = M.restrict(outer, inner)
    C = M.restrict(inner, outer)
    D = M.restrict(inner, inner)
    if len(outer) == 0:
        return SchurData(A, B, C, D, D, LogDet(0.0), logdet(D), A)
    try:
        ai = invert(A)
    except NearResonanceError as exc:
        raise SchurDegenerateError(f"A block singular: {exc}", exc.pivot) from exc
    S = LatticeOperator(inner, inner, D.entries - C.entries @ ai.inverse.entries @ B.entries)
    return SchurData(A, B, C, D, S, ai.log_det, logdet(S), ai.inverse)


def perturb_left_inverse(N: LatticeOperator, P: LatticeOperator) -> LatticeOperator:
    """N_P = (I + N P)^{-1} N, a left inverse of M + P when N M = I."""
    n0 = sobolev_norm(N, 0.0)
    p0 = sobolev_norm(P, 0.0)
    if n0 * p0 > 0.5 * (1 + 1e-12):
        raise PerturbationOutOfRange(f"||N||_0 ||P||_0 = {n0 * p0:.4g} > 1/2")
    NP = compose(N, P)
    k = NP.entries.shape[0]
    sol = np.linalg.solve(np.eye(k) + NP.entries, N.entries)
    return LatticeOperator(N.rows, N.cols, sol)


# ---------------------------------------------------------------------------
# inequality audits


@dataclass
class AuditEntry:
    name: str
    alpha: float
    lhs: float
    rhs: float
    slack: float = 1e-10

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + self.slack) + 1e-300


def band_split(M: LatticeOperator, cut: int):
    """(near, far): entries with ||k-k'|| < cut and the rest."""
    dd = np.abs(M.rows.pts2[:, None, :] - M.cols.pts2[None, :, :]).max(axis=2) / 2.0
    near = np.where(dd < cut, M.entries, 0)
    far = np.where(dd < cut, 0, M.entries)
    return LatticeOperator(M.rows, M.cols, near), LatticeOperator(M.rows, M.cols, far)


def row_operator(M: LatticeOperator, i: int) -> LatticeOperator:
    rows = SiteSet(M.rows.pts2[i:i + 1], d=M.rows.d, _canonical=True)
    return LatticeOperator(rows, M.cols, M.entries[i:i + 1])


def audit_norm_inequalities(M: LatticeOperator, alphas, cut: int, alpha0: float | None = None,
                            rng: np.random.Generator | None = None, slack: float = 1e-10,
                            n_power: int = 4) -> list[AuditEntry]:
    """Smoothing, rows estimate and power inequality checks on M.

    The far part (zero for ||k-k'|| <= cut) is used for the first smoothing
    inequality, the near part (zero for ||k-k'|| >= cut) for the second.
    """
    alphas = sorted(float(a) for a in alphas)
    d = M.rows.d
    alpha0 = d + 0.5 if alpha0 is None else alpha0
    rng = np.random.default_rng(0) if rng is None else rng
    out: list[AuditEntry] = []
    near, _ = band_split(M, cut)
    _, far = band_split(M, cut + 1)
    prof_far = norm_profile(far, alphas)
    prof_near = norm_profile(near, alphas)
    for i, a in enumerate(alphas):
        for j in range(i + 1):
            ap = alphas[j]
            out.append(AuditEntry("smo1", a, prof_far[j], (1.0 + cut) ** (-(a - ap)) * prof_far[i], slack))
            out.append(AuditEntry("smo2", a, prof_near[i], (1.0 + cut) ** (a - ap) * prof_near[j], slack))
    b1 = b1_constant(alpha0, d)
    for a in alphas:
        rmax = max(sobolev_norm(row_operator(M, i), a + alpha0) for i in range(M.shape[0]))
        out.append(AuditEntry("rows", a, sobolev_norm(M, a), b1 * rmax, slack))
    for a in alphas:
        x = rng.random(n_power) * rng.choice([1e-3, 1.0, 1e3])
        out.append(AuditEntry("kn", a, float(x.sum() ** a), tame_constant(n_power, a) * float(np.sum(x ** a)), slack))
    return out
