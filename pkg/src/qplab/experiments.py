"""Finite-volume spectral experiments: localization, dynamics, IDS, dual model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .lattice import SiteSet, box
from .model import ModelConfig, aubry_dual, assemble_H, assemble_T, hopping_operator, torus_norm
from .opalgebra import LatticeOperator, invert, logdet


class NotHermitianError(ValueError):
    pass


# ---------------------------------------------------------------------------
# eigensystems


@dataclass
class EigenSystem:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, rows follow ``sites``
    sites: SiteSet

    def residual(self, H: LatticeOperator) -> float:
        r = H.entries @ self.eigenvectors - self.eigenvectors * self.eigenvalues[None, :]
        return float(np.linalg.norm(r, axis=0).max()) if r.size else 0.0

    def gram_residual(self) -> float:
        V = self.eigenvectors
        return float(np.abs(V.conj().T @ V - np.eye(V.shape[1])).max()) if V.size else 0.0


def eigensolve(H: LatticeOperator, rtol: float = 1e-12) -> EigenSystem:
    """Full decomposition of a Hermitian operator (eigenvalues ascending)."""
    m = H.entries
    scale = max(float(np.abs(m).max()), 1e-300) if m.size else 1.0
    if float(np.abs(m - m.conj().T).max(initial=0.0)) > rtol * scale:
        raise NotHermitianError("eigensolve needs a Hermitian operator")
    off = m - np.diag(np.diag(m))
    if not np.any(off):
        # diagonal input: keep the exact values and coordinate vectors
        dg = np.diag(m).real
        order = np.argsort(dg, kind="stable")
        V = np.zeros(m.shape, dtype=np.complex128)
        V[order, np.arange(len(order))] = 1.0
        return EigenSystem(dg[order], V, H.rows)
    w, V = sla.eigh(m)
    return EigenSystem(w, V, H.rows)


# ---------------------------------------------------------------------------
# decay fits


@dataclass
class DecayFit:
    exponent: float
    r2: float
    tail_start: float
    peak: tuple = ()
    n_points: int = 0


def fit_decay(psi, sites: SiteSet, tail_start: float | None = None, floor: float = 1e-14) -> DecayFit:
    """Power-law fit of the tail of psi around its peak site n0.

    The envelope is the least nonincreasing majorant of
    r -> max_{||n-n0||=r} |psi(n)| for r >= tail_start (the quantity an upper
    bound C(1+r)^(-a) controls), fitted in log-log coordinates.
    Shells below ``floor`` times the peak are dropped,
    since a dense eigensolver does not resolve components below roughly
    machine precision times ||H||. A vector with fewer than two resolved tail
    shells gets exponent +inf.
    """
    a = np.abs(np.asarray(psi))
    i0 = int(np.argmax(a))
    p0 = sites.pts2[i0]
    r = np.abs(sites.pts2 - p0[None, :]).max(axis=1) / 2.0
    if tail_start is None:
        tail_start = max(1.0, sites_diam(sites) / 10.0)
    peak = tuple((p0 / 2.0).tolist())
    sel = r >= tail_start
    if not sel.any():
        return DecayFit(math.inf, 1.0, tail_start, peak, 0)
    ri = np.round(r[sel] * 2).astype(np.int64)
    shells, inv = np.unique(ri, return_inverse=True)
    env = np.zeros(len(shells))
    np.maximum.at(env, inv, a[sel])
    env = np.maximum.accumulate(env[::-1])[::-1]
    ok = env > floor * a[i0]
    if ok.sum() < 2:
        return DecayFit(math.inf, 1.0, tail_start, peak, int(ok.sum()))
    x = np.log1p(shells[ok] / 2.0)
    y = np.log(env[ok])
    slope, icpt = np.polyfit(x, y, 1)
    yhat = slope * x + icpt
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(-slope), float(min(max(r2, 0.0), 1.0)), tail_start, peak, int(ok.sum()))


def sites_diam(sites: SiteSet) -> float:
    p = sites.pts2
    return float((p.max(axis=0) - p.min(axis=0)).max()) / 2.0 if len(p) else 0.0


def theta_class(theta: float, omega, tau1: float, A: float = 0.1, window: int = 100) -> tuple[str, list]:
    """'exceptional' when ||2 theta + n.omega|| <= A/||n||^tau1 for some 0 < ||n|| <= window.

    'generic' means theta passes the finite-window version of the Theta*
    condition; the witnesses n are returned either way.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=np.float64))
    d = len(omega)
    ax = np.arange(-window, window + 1)
    g = np.stack(np.meshgrid(*[ax] * d, indexing="ij"), -1).reshape(-1, d)
    nn = np.abs(g).max(axis=1)
    g, nn = g[nn > 0], nn[nn > 0]
    hit = torus_norm(2 * theta + g @ omega) <= A / nn.astype(np.float64) ** tau1
    wit = [tuple(int(c) for c in row) for row in g[hit]]
    return ("exceptional" if wit else "generic"), wit


@dataclass
class ScanRow:
    theta: float
    theta_class: str
    fits: list
    median_exponent: float
    median_r2: float


def localization_scan(cfg: ModelConfig, N: int, theta_samples: Sequence[float], tau1: float | None = None,
                      A: float = 0.1, window: int | None = None, tail_start: float | None = None) -> list[ScanRow]:
    """Eigenvector decay fits of H on the box of radius N for each theta."""
    tau1 = (cfg.d + cfg.tau) / 2 if tau1 is None else tau1
    window = 10 * N if window is None else window
    Lam = box(np.zeros(cfg.d), N)
    ts = N / 5 if tail_start is None else tail_start
    out = []
    for th in theta_samples:
        es = eigensolve(assemble_H(Lam, cfg, theta=float(th)))
        fits = [fit_decay(es.eigenvectors[:, q], Lam, ts) for q in range(len(es.eigenvalues))]
        cls, _ = theta_class(float(th), cfg.omega_arr, tau1, A, min(window, 2000 if cfg.d == 1 else 50))
        ex = np.array([f.exponent for f in fits])
        r2 = np.array([f.r2 for f in fits])
        out.append(ScanRow(float(th), cls, fits, float(np.median(ex)), float(np.median(r2))))
    return out


# ---------------------------------------------------------------------------
# Poisson identity


def poisson_residual(psi, E: float, inner: SiteSet, outer: SiteSet, cfg: ModelConfig, theta=None,
                     core: SiteSet | None = None, with_cond: bool = False):
    """max over core(inner) of |psi(n) + eps sum T_inner^{-1}(n,n') W(n',n'') psi(n'')|.

    n' runs over inner and n'' over outer minus inner. With ``with_cond`` the
    condition estimate of T_inner is returned too; when E is resonant in
    inner the identity is numerically void and the residual is large.
    """
    psi = np.asarray(psi)
    if not inner.issubset(outer):
        raise ValueError("inner must be contained in outer")
    rest = outer - inner
    io, ir = outer.index_of(inner.pts2), outer.index_of(rest.pts2)
    inv = invert(assemble_T(inner, cfg, theta=theta, E=E))
    Ginv = inv.inverse.entries
    W = hopping_operator(outer, cfg.hopping).entries
    rhs = -cfg.epsilon * Ginv @ (W[np.ix_(io, ir)] @ psi[ir])
    diff = np.abs(psi[io] - rhs)
    if core is not None:
        diff = diff[core.contains2(inner.pts2)]
    res = float(diff.max()) if diff.size else 0.0
    return (res, inv.cond) if with_cond else res


# ---------------------------------------------------------------------------
# dynamics


@dataclass
class DynamicsResult:
    sup_value: float
    times: np.ndarray
    moments: np.ndarray
    unitarity_error: float
    refinements: int


def _moment_series(es: EigenSystem, i0: int, weights: np.ndarray, times: np.ndarray):
    V = es.eigenvectors
    # rotating by the dominant phase leaves |amplitude| unchanged and keeps
    # the single-mode case free of rounding
    q0 = int(np.argmax(np.abs(V[i0])))
    c = V[i0, :][None, :] * V.conj()  # c[n, q] = phi_q(0) conj(phi_q(n))
    dE = es.eigenvalues - es.eigenvalues[q0]
    mom = np.empty(len(times))
    uerr = 0.0
    for j, t in enumerate(times):
        ph = np.exp(1j * t * dE)
        ph[q0] = 1.0
        amp = c @ ph
        a = np.abs(amp)
        mom[j] = float(np.sum(weights * a))
        uerr = max(uerr, abs(float(np.sum(a * a)) - 1.0))
    return mom, uerr


def dynamics_moment(cfg: ModelConfig, N: int, p: float, t_grid, theta=None, rel_tol: float = 0.01,
                    max_refine: int = 6) -> DynamicsResult:
    """sup_t sum (1+||n||)^p |<e^{itH} delta_0, delta_n>| on the box of radius N.

    The time grid is refined by doubling over the same range until the sup
    moves by less than ``rel_tol``.
    """
    Lam = box(np.zeros(cfg.d), N)
    es = eigensolve(assemble_H(Lam, cfg, theta=theta))
    i0 = int(Lam.index_of(np.zeros((1, cfg.d), dtype=np.int64))[0])
    weights = (1.0 + np.abs(Lam.pts2).max(axis=1) / 2.0) ** p
    times = np.asarray(t_grid, dtype=np.float64)
    mom, uerr = _moment_series(es, i0, weights, times)
    sup = float(mom.max())
    k = 0
    for k in range(1, max_refine + 1):
        t2 = np.linspace(times.min(), times.max(), 2 * len(times) - 1)
        m2, u2 = _moment_series(es, i0, weights, t2)
        s2 = float(m2.max())
        times, mom, uerr = t2, m2, max(uerr, u2)
        if abs(s2 - sup) <= rel_tol * sup:
            sup = s2
            break
        sup = s2
    return DynamicsResult(sup, times, mom, uerr, k)


def dynamics_reference(A: float, eps0: float, p: float, d: int, tau: float) -> float:
    """max(A, eps0)^(-29(p+2d)/tau), the scale in the moment bound."""
    e = -29.0 * (p + 2 * d) / tau
    logs = [e * math.log10(x) for x in (A, eps0) if x > 0]
    top = max(logs)
    return 10.0 ** top if top < 308 else math.inf


# ---------------------------------------------------------------------------
# integrated density of states


@dataclass
class IdsCurve:
    energies: np.ndarray
    counts: np.ndarray
    N: int
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))


def ids_curve(cfg: ModelConfig, N: int, E_grid=None, theta=None) -> IdsCurve:
    Lam = box(np.zeros(cfg.d), N)
    ev = eigensolve(assemble_H(Lam, cfg, theta=theta)).eigenvalues
    E = ev if E_grid is None else np.asarray(E_grid, dtype=np.float64)
    counts = np.searchsorted(ev, E, side="right") / len(ev)
    return IdsCurve(np.asarray(E), counts, N, ev)


def window_counts(eigenvalues, eta: float) -> float:
    """sup_E (N(E+eta) - N(E-eta)) = max #{E-eta < lam <= E+eta} / #Lambda."""
    ev = np.sort(np.asarray(eigenvalues))
    hi = np.searchsorted(ev, ev + 2 * eta, side="right")
    return float((hi - np.arange(len(ev))).max()) / len(ev)


@dataclass
class HolderFit:
    exponent: float
    r2: float
    etas: np.ndarray
    moduli: np.ndarray

    @property
    def mu(self) -> float:
        return 0.5 - self.exponent


def holder_modulus(curves, eta_grid) -> HolderFit:
    """Log-log slope of eta -> sup over E (and over the given curves) of the window count."""
    if isinstance(curves, IdsCurve):
        curves = [curves]
    etas = np.asarray(eta_grid, dtype=np.float64)
    mods = np.array([max(window_counts(c.eigenvalues, e) for c in curves) for e in etas])
    x, y = np.log(etas), np.log(mods)
    slope, icpt = np.polyfit(x, y, 1)
    yhat = slope * x + icpt
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return HolderFit(float(slope), r2, etas, mods)


# ---------------------------------------------------------------------------
# even determinant and the dual model


def even_det_residual(S: SiteSet, cfg: ModelConfig, z: complex) -> float:
    """|det T_S(z) - det T_S(-z)| / |det T_S(z)| for a block S symmetric about 0."""
    a = logdet(assemble_T(S, cfg, theta=z))
    b = logdet(assemble_T(S, cfg, theta=-z))
    r = b / a
    return float(abs(1.0 - np.exp(r.logabs + 1j * r.phase)))


@dataclass
class DualRow:
    x: float
    M: int
    self_adjoint: bool
    median_ipr: float
    median_boundary_weight: float
    min_singular: float | None = None


def dual_localization_proxy(cfg: ModelConfig, band_cut: int, M: int, x_samples: Sequence[float],
                            doublings: int = 2) -> list[DualRow]:
    """Inverse participation ratios and boundary weights of dual eigenvectors.

    Weight on |l| > M/2 that stays away from 0 as M doubles indicates
    extended states; this is a finite-volume surrogate only. Non-Hermitian
    duals get the smallest singular value instead.
    """
    dual = aubry_dual(cfg, band_cut)
    rows = []
    for x in x_samples:
        for j in range(doublings + 1):
            m = M * 2 ** j
            H = dual.assemble(x, m)
            l = np.arange(-m, m + 1)
            try:
                es = eigensolve(H, rtol=1e-10)
            except NotHermitianError:
                sv = sla.svdvals(H.entries)
                rows.append(DualRow(float(x), m, False, math.nan, math.nan, float(sv.min())))
                continue
            P = np.abs(es.eigenvectors) ** 2
            ipr = np.sum(P * P, axis=0)
            bw = np.sqrt(np.sum(P[np.abs(l) > m / 2], axis=0))
            rows.append(DualRow(float(x), m, True, float(np.median(ipr)), float(np.median(bw))))
    return rows
