"""Pure numpy implementations of the hot kernels.

These are the reference fallback for :mod:`qplab._kernels` and must stay
result-identical to it (up to floating reassociation in reductions).
"""

import numpy as np


def offset_profile(rows2, cols2, absm):
    """Largest entry magnitude along each occurring offset.

    ``rows2``/``cols2`` are doubled lattice coordinates of shape (n, d) and
    (m, d); ``absm`` is the (n, m) array of entry magnitudes. Returns the
    distinct doubled offsets ``row - col`` (lexicographically sorted) and the
    sup of ``absm`` over each.
    """
    rows2 = np.asarray(rows2, dtype=np.int64)
    cols2 = np.asarray(cols2, dtype=np.int64)
    absm = np.asarray(absm, dtype=np.float64)
    n, d = rows2.shape
    m = cols2.shape[0]
    if n == 0 or m == 0:
        return np.zeros((0, d), dtype=np.int64), np.zeros(0)
    off = rows2[:, None, :] - cols2[None, :, :]
    lo = off.reshape(-1, d).min(axis=0)
    span = off.reshape(-1, d).max(axis=0) - lo + 1
    flat = np.zeros(n * m, dtype=np.int64)
    for i in range(d):
        flat = flat * span[i] + (off[..., i].reshape(-1) - lo[i])
    acc = np.full(int(np.prod(span)), -1.0)
    np.maximum.at(acc, flat, absm.reshape(-1))
    hit = np.nonzero(acc >= 0)[0]
    keys = np.empty((hit.size, d), dtype=np.int64)
    rem = hit.copy()
    for i in range(d - 1, -1, -1):
        keys[:, i] = rem % span[i] + lo[i]
        rem //= span[i]
    return keys, acc[hit]


def _torus(z):
    re = z.real - np.round(z.real)
    return np.sqrt(re * re + z.imag * z.imag)


def pair_ratio_extrema(z, vz, h, chunk=512):
    """min/max of |v(z1)-v(z2)| / (||z1-z2||_T ||z1+z2||_T) over pairs.

    Pairs with either torus factor below ``h`` are skipped (removable
    singularities of the ratio).
    """
    z = np.asarray(z, dtype=np.complex128)
    vz = np.asarray(vz, dtype=np.complex128)
    lo, hi = np.inf, -np.inf
    n = z.size
    for start in range(0, n, chunk):
        zs = z[start:start + chunk, None]
        vs = vz[start:start + chunk, None]
        a = _torus(zs - z[None, :])
        b = _torus(zs + z[None, :])
        den = a * b
        ok = (a >= h) & (b >= h)
        if not ok.any():
            continue
        r = np.abs(vs - vz[None, :])[ok] / den[ok]
        lo = min(lo, r.min())
        hi = max(hi, r.max())
    return lo, hi


def _shell(d, r):
    """Nonzero integer vectors with sup-norm r, one per +/- pair."""
    if d == 1:
        return np.array([[r]], dtype=np.int64)
    parts = []
    for p in range(d):
        axes = [np.arange(-(r - 1), r)] * p + [np.array([r, -r])] + [np.arange(-r, r + 1)] * (d - 1 - p)
        parts.append(np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d))
    pts = np.vstack(parts)
    # keep the lexicographically positive representative of each pair
    first = np.argmax(pts != 0, axis=1)
    pos = pts[np.arange(len(pts)), first] > 0
    return pts[pos]


def diophantine_scan(omega, tau, gamma, n_max):
    """Scan 0 < ||n|| <= n_max shell by shell.

    Returns ``(witness, gamma_hat)``: the first n with
    ``||n.omega||_T < gamma/||n||^tau`` (or None) and the empirical
    ``min ||n.omega||_T ||n||^tau`` over the whole scan.
    """
    omega = np.asarray(omega, dtype=np.float64)
    d = omega.size
    witness = None
    gmin = np.inf
    if d == 1:
        n = np.arange(1, n_max + 1, dtype=np.int64)
        x = n * omega[0]
        dist = np.abs(x - np.round(x))
        g = dist * n.astype(np.float64) ** tau
        bad = np.nonzero(g < gamma)[0]
        if bad.size:
            witness = (int(n[bad[0]]),)
        return witness, float(g.min()) if g.size else np.inf
    for r in range(1, n_max + 1):
        pts = _shell(d, r)
        x = pts @ omega
        dist = np.abs(x - np.round(x))
        g = dist * float(r) ** tau
        gmin = min(gmin, g.min())
        if witness is None:
            bad = pts[g < gamma]
            if len(bad):
                # lexicographically smallest violator of the first bad shell
                order = np.lexsort(bad.T[::-1])
                witness = tuple(int(c) for c in bad[order[0]])
    return witness, float(gmin)
