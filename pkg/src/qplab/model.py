"""Cosine-type potentials, Toeplitz hopping, frequencies and T_Lambda(E; theta)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.special import zeta

from . import kernels
from .lattice import SiteSet
from .opalgebra import LatticeOperator, sobolev_norm


class NotCosineType(ValueError):
    pass


class EnergyOutOfRange(ValueError):
    pass


class BandCutTooSmall(ValueError):
    pass


def torus_norm(z):
    """||z||_T = sqrt(dist(Re z, Z)^2 + (Im z)^2), elementwise."""
    z = np.asarray(z, dtype=np.complex128)
    re = z.real - np.round(z.real)
    out = np.sqrt(re * re + z.imag * z.imag)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# potentials

POTENTIAL_KINDS = ("cosine", "polynomial", "cosine_even")


@dataclass(frozen=True)
class PotentialSpec:
    """v(z) on the strip |Im z| <= R.

    polynomial: cos 2pi z + sum_k lambda_k cos^k 2pi z, lambda = (l_2, ..., l_n).
    cosine_even: cos 2pi z + eps_f * sum_m f_cos[m] cos 2pi m z (an even f).
    """

    kind: str = "cosine"
    R: float = 0.1
    lam: tuple = ()
    eps_f: float = 0.0
    f_cos: tuple = ()
    kappa1: float | None = None
    kappa2: float | None = None

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.R <= 0:
            raise ValueError("R must be positive")
        if self.kind == "polynomial":
            s = sum((k + 2) * abs(c) for k, c in enumerate(self.lam))
            if s >= 1:
                raise ValueError(f"polynomial needs sum k|lambda_k| < 1, got {s}")
        if self.kappa1 is not None and self.kappa2 is not None and self.kappa1 > self.kappa2:
            raise ValueError("kappa1 must not exceed kappa2")

    def _poly(self):
        # coefficients of p(c) with v = p(cos 2 pi z), lowest degree first
        return np.array([0.0, 1.0] + [float(c) for c in self.lam])

    def __call__(self, z):
        z = np.asarray(z, dtype=np.complex128)
        c = np.cos(2 * np.pi * z)
        if self.kind == "polynomial" and self.lam:
            return np.polynomial.polynomial.polyval(c, self._poly())
        out = c
        if self.kind == "cosine_even" and self.f_cos:
            out = out + self.eps_f * sum(fm * np.cos(2 * np.pi * m * z) for m, fm in enumerate(self.f_cos))
        return out

    def derivative(self, z):
        z = np.asarray(z, dtype=np.complex128)
        c = np.cos(2 * np.pi * z)
        dc = -2 * np.pi * np.sin(2 * np.pi * z)
        if self.kind == "polynomial" and self.lam:
            dp = np.polynomial.polynomial.polyder(self._poly())
            return np.polynomial.polynomial.polyval(c, dp) * dc
        out = dc
        if self.kind == "cosine_even" and self.f_cos:
            out = out - self.eps_f * sum(
                fm * 2 * np.pi * m * np.sin(2 * np.pi * m * z) for m, fm in enumerate(self.f_cos))
        return out

    def sup_norm(self, R: float | None = None, n: int = 2048) -> float:
        """|v|_R; by periodicity and maximum modulus the edges |Im z| = R suffice."""
        R = self.R if R is None else R
        x = np.arange(n) / n
        z = np.concatenate([x + 1j * R, x - 1j * R])
        return float(np.abs(self(z)).max())


def certify_potential(spec: PotentialSpec, grid_density: int = 128, R: float | None = None):
    """Empirical (kappa1, kappa2) over a grid of the strip of width R.

    Pairs closer than one grid cell in either ||z1 -+ z2||_T are skipped.
    """
    if grid_density < 64:
        raise ValueError("grid_density must be at least 64")
    R = spec.R if R is None else R
    h = 1.0 / grid_density
    xs = np.arange(grid_density) * h
    ny = max(1, int(round(R * grid_density)))
    ys = np.linspace(-R, R, 2 * ny + 1)
    z = (xs[None, :] + 1j * ys[:, None]).ravel()
    k1, k2 = kernels.pair_ratio_extrema(z, spec(z), h * (1 - 1e-9))
    if not k1 > 1e-12 * max(k2, 1.0):
        raise NotCosineType(f"ratio collapses: kappa1_hat = {k1:.3e}")
    return float(k1), float(k2)


# ---------------------------------------------------------------------------
# hopping

HOPPING_KINDS = ("nearest", "power", "nearest_power", "table")


def shell_tail(alpha: float, d: int, r0: int) -> float:
    """sum over ||n|| > r0 of (1+||n||)^(-alpha); needs alpha > d."""
    if alpha <= d:
        return math.inf
    p1 = np.polynomial.Polynomial([-1.0, 2.0]) ** d
    p3 = np.polynomial.Polynomial([-3.0, 2.0]) ** d
    c = (p1 - p3).coef
    return float(sum(cj * zeta(alpha - j, r0 + 2) for j, cj in enumerate(c) if cj != 0))


@dataclass(frozen=True)
class HoppingSpec:
    """Toeplitz hopping phi on Z^d.

    nearest: phi(+-e_i) = 1.  power: phi(n) = amp (1+||n||)^-alpha_decay for
    0 < ||n|| <= radius.  nearest_power: the two combined (power part from
    ||n|| >= 2).  table: explicit rows [offset..., re, im].
    """

    kind: str = "nearest"
    d: int = 1
    alpha_decay: float = 6.0
    alpha0: float = 1.5
    alpha1: float = 10.0
    radius: int = 20
    amp: float = 1.0
    table: tuple = ()

    def __post_init__(self):
        if self.kind not in HOPPING_KINDS:
            raise ValueError(f"unknown hopping kind {self.kind!r}")
        if self.alpha_decay <= 0:
            raise ValueError("alpha_decay must be positive")

    def phi(self, offsets) -> np.ndarray:
        """phi at integer offsets (array of shape (m, d)); zero at the origin."""
        n = np.asarray(offsets, dtype=np.float64).reshape(-1, self.d)
        r = np.abs(n).max(axis=1) if len(n) else np.zeros(0)
        out = np.zeros(len(n), dtype=np.complex128)
        if self.kind in ("nearest", "nearest_power"):
            out[(r == 1) & (np.abs(n).sum(axis=1) == 1)] = 1.0
        if self.kind in ("power", "nearest_power"):
            lo = 1 if self.kind == "power" else 2
            m = (r >= lo) & (r <= self.radius)
            out[m] = self.amp * (1.0 + r[m]) ** (-self.alpha_decay)
        if self.kind == "table":
            for row in self.table:
                off = np.asarray(row[: self.d], dtype=np.float64)
                hit = np.all(n == off[None, :], axis=1)
                out[hit] = complex(row[self.d], row[self.d + 1])
            out[r == 0] = 0.0
        return out

    @property
    def reach(self) -> int:
        if self.kind == "nearest":
            return 1
        if self.kind == "table":
            return int(max((max(abs(c) for c in row[: self.d]) for row in self.table), default=0))
        return int(self.radius)

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Nonzero offsets and their amplitudes."""
        R = self.reach
        ax = np.arange(-R, R + 1)
        g = np.stack(np.meshgrid(*[ax] * self.d, indexing="ij"), -1).reshape(-1, self.d)
        v = self.phi(g)
        nz = v != 0
        return g[nz], v[nz]

    def envelope_constant(self) -> float:
        """max |phi(n)| (1+||n||)^alpha_decay; the envelope asks for <= 1."""
        g, v = self.support()
        if len(g) == 0:
            return 0.0
        r = np.abs(g).max(axis=1)
        return float((np.abs(v) * (1.0 + r) ** self.alpha_decay).max())

    def truncation_error(self) -> float:
        """Envelope bound on the discarded tail beyond the table radius (0-norm)."""
        if self.kind in ("nearest", "table"):
            return 0.0
        return self.amp * shell_tail(self.alpha_decay, self.d, self.radius)

    def is_hermitian(self) -> bool:
        g, v = self.support()
        return bool(np.allclose(self.phi(-g), np.conj(v), atol=0, rtol=1e-15))

    def violations(self, tau: float) -> list[str]:
        out = []
        if not (self.d < self.alpha0 < tau):
            out.append(f"alpha0={self.alpha0} outside (d, tau)=({self.d}, {tau})")
        if not self.alpha1 > 2200 * tau:
            out.append(f"alpha1={self.alpha1} <= 2200 tau={2200 * tau}")
        if self.envelope_constant() > 1 + 1e-12:
            out.append(f"|phi| envelope constant {self.envelope_constant():.4g} > 1")
        return out


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class ModelConfig:
    d: int = 1
    tau: float = 2.0
    gamma: float = 0.1
    omega: tuple = ((math.sqrt(5) - 1) / 2,)
    epsilon: float = 1e-3
    theta: complex = 0.0
    E: complex = 0.0
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    hopping: HoppingSpec = field(default_factory=HoppingSpec)

    def __post_init__(self):
        if len(self.omega) != self.d:
            raise ValueError("omega must have d components")
        if self.hopping.d != self.d:
            raise ValueError("hopping dimension differs from d")

    @property
    def omega_arr(self) -> np.ndarray:
        return np.asarray(self.omega, dtype=np.float64)

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def flags(self) -> list[str]:
        out = list(self.hopping.violations(self.tau))
        if not self.tau > self.d:
            out.append(f"tau={self.tau} <= d={self.d}")
        return out


def certify_diophantine(omega, tau: float, gamma: float, n_max: int):
    """(ok, witness) for ||n.omega||_T >= gamma/||n||^tau over 0 < ||n|| <= n_max."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    w, _ = kernels.diophantine_scan(np.atleast_1d(np.asarray(omega, dtype=np.float64)), tau, gamma, n_max)
    return w is None, w


def empirical_gamma(omega, tau: float, n_max: int) -> float:
    """min over 0 < ||n|| <= n_max of ||n.omega||_T ||n||^tau."""
    _, g = kernels.diophantine_scan(np.atleast_1d(np.asarray(omega, dtype=np.float64)), tau, 0.0, n_max)
    return float(g)


@lru_cache(maxsize=64)
def _hopping_matrix(hop: HoppingSpec, key: bytes, n: int, d: int) -> np.ndarray:
    pts2 = np.frombuffer(key, dtype=np.int64).reshape(n, d)
    off2 = pts2[:, None, :] - pts2[None, :, :]
    off = (off2 // 2).reshape(-1, d)
    if hop.kind != "table":
        r = np.abs(off).max(axis=1)
        w = np.zeros(len(off), dtype=np.complex128)
        m = (r > 0) & (r <= hop.reach)
        w[m] = hop.phi(off[m])
        return w.reshape(n, n)
    return hop.phi(off).reshape(n, n)


def hopping_operator(Lambda: SiteSet, hop: HoppingSpec) -> LatticeOperator:
    n, d = Lambda.pts2.shape
    m = _hopping_matrix(hop, Lambda.pts2.tobytes(), n, d).copy()
    return LatticeOperator(Lambda, Lambda, m)


def diagonal_values(Lambda: SiteSet, cfg: ModelConfig, theta=None, E=None) -> np.ndarray:
    theta = cfg.theta if theta is None else theta
    E = cfg.E if E is None else E
    phase = theta + Lambda.sites @ cfg.omega_arr
    return cfg.potential(phase) - E


def assemble_T(Lambda: SiteSet, cfg: ModelConfig, theta=None, E=None) -> LatticeOperator:
    """T_Lambda(E; theta) = D + eps W_phi restricted to Lambda."""
    diag = diagonal_values(Lambda, cfg, theta, E)
    if cfg.epsilon == 0:
        return LatticeOperator(Lambda, Lambda, np.diag(diag.astype(np.complex128)))
    W = hopping_operator(Lambda, cfg.hopping).entries
    m = cfg.epsilon * W
    m = m + np.diag(diag)
    return LatticeOperator(Lambda, Lambda, m)


def assemble_H(Lambda: SiteSet, cfg: ModelConfig, theta=None) -> LatticeOperator:
    return assemble_T(Lambda, cfg, theta=theta, E=0.0)


def hopping_norm(Lambda: SiteSet, hop: HoppingSpec, alpha: float) -> float:
    return sobolev_norm(hopping_operator(Lambda, hop), alpha)


def solve_theta0(cfg: ModelConfig, tol: float = 1e-12, max_iter: int = 60) -> complex:
    """theta_0 in the half strip with v(theta_0) = E (Newton from an arccos seed)."""
    pot = cfg.potential
    E = complex(cfg.E)
    target = tol * (1 + abs(E))
    seeds = []
    if pot.kind == "polynomial" and pot.lam:
        coef = pot._poly().astype(np.complex128)
        coef[0] -= E
        roots = np.polynomial.polynomial.polyroots(coef)
        roots = roots[np.argsort(np.abs(roots - E))]
        seeds += [np.arccos(complex(c)) / (2 * np.pi) for c in roots]
    else:
        seeds.append(np.arccos(E) / (2 * np.pi))
    # coarse scan of the half strip as a fallback seed source
    xs = np.linspace(0, 0.5, 257)
    ys = np.linspace(-pot.R / 2, pot.R / 2, 33)
    g = (xs[None, :] + 1j * ys[:, None]).ravel()
    seeds.append(complex(g[np.argmin(np.abs(pot(g) - E))]))
    best = None
    for z in seeds:
        z = complex(z)
        for _ in range(max_iter):
            f = complex(pot(z)) - E
            if abs(f) < target:
                break
            dv = complex(pot.derivative(z))
            if dv == 0:
                break
            z = z - f / dv
        z = complex(z.real - math.floor(z.real + 0.5), z.imag)
        if z.real < 0:
            z = -z
        res = abs(complex(pot(z)) - E)
        if res < target and abs(z.imag) <= pot.R / 2 + 1e-15:
            if best is None or res < best[1]:
                best = (z, res)
        if best is not None and best[1] == 0:
            break
    if best is None:
        raise EnergyOutOfRange(f"E={E} has no preimage in the strip |Im z| <= {pot.R / 2}")
    return best[0]


# ---------------------------------------------------------------------------
# dual model


@dataclass
class DualModel:
    vhat: np.ndarray  # index n + band_cut
    band_cut: int
    cfg: ModelConfig
    tail: float

    def u(self, x):
        """u(x) = sum phi(n) e^{2 pi i n.x} over the tabulated support."""
        g, v = self.cfg.hopping.support()
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return (np.exp(2j * np.pi * x @ g.T.astype(np.float64)) @ v).squeeze()

    def assemble(self, x, M: int) -> LatticeOperator:
        """Dual operator on the one-dimensional box [-M, M]."""
        from .lattice import box

        L = box(0, M)
        l = np.arange(-M, M + 1)
        diff = l[:, None] - l[None, :]
        m = np.zeros(diff.shape, dtype=np.complex128)
        ok = np.abs(diff) <= self.band_cut
        m[ok] = self.vhat[diff[ok] + self.band_cut]
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        pts = x[None, :] + l[:, None] * self.cfg.omega_arr[None, :]
        m[np.diag_indices_from(m)] += self.cfg.epsilon * np.atleast_1d(self.u(pts))
        return LatticeOperator(L, L, m)


def fourier_coefficients(f, band_cut: int, tol: float = 1e-12, q_max: int = 1 << 16):
    """hat f(n) for |n| <= band_cut by trapezoid/FFT, refined until stable.

    Returns (coefficients, tail) where tail = sum of |hat f(n)| beyond the cut.
    """
    q = max(64, 1 << int(np.ceil(np.log2(4 * band_cut + 4))))
    prev = None
    while True:
        x = np.arange(q) / q
        c = np.fft.fft(f(x)) / q
        c = np.fft.fftshift(c)
        mid = q // 2
        cut = c[mid - band_cut: mid + band_cut + 1]
        tail = float(np.abs(c).sum() - np.abs(cut).sum())
        if prev is not None and np.abs(cut - prev).max() < tol and tail < tol:
            return cut, tail
        if q >= q_max:
            return cut, tail
        prev = cut
        q *= 2


def aubry_dual(cfg: ModelConfig, band_cut: int) -> DualModel:
    vhat, tail = fourier_coefficients(cfg.potential, band_cut)
    if tail > 1e-12:
        raise BandCutTooSmall(f"Fourier tail {tail:.3e} beyond band_cut={band_cut}")
    vhat = vhat.copy()
    vhat[np.abs(vhat) < 1e-15] = 0.0
    return DualModel(vhat, band_cut, cfg, tail)
