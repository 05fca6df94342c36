import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qplab import experiments as ex
from qplab.lattice import SiteSet, box
from qplab.model import HoppingSpec, ModelConfig, PotentialSpec, assemble_H, aubry_dual
from qplab.opalgebra import LatticeOperator

GOLDEN = (math.sqrt(5) - 1) / 2


def amo(eps, **kw):
    return ModelConfig(omega=(GOLDEN,), epsilon=eps, hopping=HoppingSpec("nearest"), **kw)


def tail_cfg(eps=1e-2):
    return ModelConfig(omega=(GOLDEN,), epsilon=eps,
                       hopping=HoppingSpec("nearest_power", alpha_decay=6, radius=200))


# eigensolve


def test_eigensolve_diagonal_exact():
    cfg = amo(0.0, theta=0.3)
    H = assemble_H(box(0, 10), cfg)
    es = ex.eigensolve(H)
    d = np.diag(H.entries).real
    assert np.array_equal(es.eigenvalues, np.sort(d))
    assert set(np.abs(es.eigenvectors).sum(axis=0)) == {1.0}


def test_eigensolve_two_site_closed_form():
    a, b, e = 0.3, -0.7, 0.2
    S = box(0, 1).intersection(SiteSet.from_sites([0, 1]))
    es = ex.eigensolve(LatticeOperator(S, S, np.array([[a, e], [e, b]], dtype=complex)))
    root = math.sqrt((a - b) ** 2 + 4 * e * e)
    assert es.eigenvalues == pytest.approx([(a + b - root) / 2, (a + b + root) / 2], abs=1e-15)


def _charpoly_roots(m):
    # Faddeev-LeVerrier in high precision, then polynomial roots
    n = m.shape[0]
    with mpmath.workdps(60):
        A = mpmath.matrix(m.tolist())
        Mk = mpmath.zeros(n)
        coeffs = [mpmath.mpf(1)]
        I = mpmath.eye(n)
        c = mpmath.mpf(1)
        for k in range(1, n + 1):
            Mk = A * Mk + c * I
            c = -sum(((A * Mk)[i, i] for i in range(n))) / k
            coeffs.append(c)
        roots = mpmath.polyroots(coeffs, maxsteps=400, extraprec=400)
        return np.sort([float(mpmath.re(r)) for r in roots])


def test_eigensolve_matches_charpoly_oracle():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((20, 20))
    m = (x + x.T) / 2
    S = box(0, 10).intersection(SiteSet.from_sites(range(-10, 10)))
    es = ex.eigensolve(LatticeOperator(S, S, m.astype(complex)))
    assert np.allclose(es.eigenvalues, _charpoly_roots(m), atol=1e-8)


def test_eigensolve_rejects_non_hermitian():
    S = box(0, 1)
    with pytest.raises(ex.NotHermitianError):
        ex.eigensolve(LatticeOperator(S, S, np.triu(np.ones((3, 3)))))


def test_eigensystem_invariants():
    H = assemble_H(box(0, 40), tail_cfg())
    es = ex.eigensolve(H)
    nrm = np.linalg.norm(H.entries, 2)
    assert es.residual(H) < 1e-9 * nrm
    assert es.gram_residual() < 1e-9


# decay fits


def test_decoupled_scan_reports_infinite_exponent():
    rows = ex.localization_scan(amo(0.0), 20, [0.1234])
    assert all(f.exponent == math.inf for f in rows[0].fits)


def test_power_tail_limits_decay():
    rows = ex.localization_scan(tail_cfg(1e-2), 80, [0.1234])
    assert rows[0].median_exponent <= 6 + 1


def test_fit_decay_on_exact_power_law():
    L = box(0, 100)
    psi = (1.0 + np.abs(L.sites[:, 0])) ** -3.0
    f = ex.fit_decay(psi, L, tail_start=5)
    assert f.exponent == pytest.approx(3.0, rel=1e-9)
    assert f.r2 == pytest.approx(1.0)


def test_decay_fit_translation_covariant():
    cfg = tail_cfg()
    m = 7
    L = box(0, 40)
    a = ex.eigensolve(assemble_H(L, cfg, theta=0.2))
    b = ex.eigensolve(assemble_H(L.translate(-m), cfg, theta=0.2 + m * GOLDEN))
    assert np.allclose(a.eigenvalues, b.eigenvalues, atol=1e-12)
    ea = [ex.fit_decay(a.eigenvectors[:, q], L, 8).exponent for q in range(0, 81, 10)]
    eb = [ex.fit_decay(b.eigenvectors[:, q], L.translate(-m), 8).exponent for q in range(0, 81, 10)]
    assert np.allclose(ea, eb, rtol=1e-6)


def test_theta_class():
    cls, wit = ex.theta_class(-GOLDEN / 2, (GOLDEN,), 1.5)
    assert cls == "exceptional" and (1,) in wit
    cls, wit = ex.theta_class(0.05, (GOLDEN,), 1.5, A=0.1, window=50)
    assert cls == "generic" and wit == []
    # ||2(0.1234) - 2 omega|| ~ 0.011 <= 0.1 / 2^1.5
    assert ex.theta_class(0.1234, (GOLDEN,), 1.5, A=0.1, window=50)[1] == [(-2,)]


# Poisson identity


def test_poisson_unsupported_psi():
    cfg = tail_cfg()
    outer, inner = box(0, 30), box(0, 10)
    psi = np.zeros(len(outer))
    assert ex.poisson_residual(psi, 0.1, inner, outer, cfg) < 1e-10


def _good_pairs(cfg, outer, inner, limit=8):
    es = ex.eigensolve(assemble_H(outer, cfg))
    out = []
    for q in range(len(es.eigenvalues)):
        psi = es.eigenvectors[:, q]
        r, cond = ex.poisson_residual(psi, es.eigenvalues[q], inner, outer, cfg, with_cond=True)
        if cond < 1e8:
            out.append((q, psi, es.eigenvalues[q], r))
        if len(out) >= limit:
            break
    return out


def test_poisson_exact_eigenpairs():
    cfg = tail_cfg()
    outer, inner = box(0, 60), box(0, 30)
    pairs = _good_pairs(cfg, outer, inner)
    assert pairs
    for _, psi, _, r in pairs:
        assert r < 1e-8 * np.abs(psi).max()


def test_poisson_linear_in_noise():
    cfg = tail_cfg()
    outer, inner = box(0, 60), box(0, 30)
    _, psi, E, _ = _good_pairs(cfg, outer, inner, 1)[0]
    noise = np.random.default_rng(0).standard_normal(len(psi))
    r1 = ex.poisson_residual(psi + 1e-3 * noise, E, inner, outer, cfg)
    r2 = ex.poisson_residual(psi + 2e-3 * noise, E, inner, outer, cfg)
    assert r2 / r1 == pytest.approx(2.0, rel=1e-3)


# dynamics


def test_decoupled_moment_is_one():
    res = ex.dynamics_moment(amo(0.0, theta=0.3), 20, 1.0, np.linspace(0, 50, 51))
    assert np.all(res.moments == 1.0)


def test_two_site_rabi():
    a, b, e, p = 0.4, -0.1, 0.15, 1.0
    S = SiteSet.from_sites([0, 1])
    es = ex.eigensolve(LatticeOperator(S, S, np.array([[a, e], [e, b]], dtype=complex)))
    t = np.linspace(0, 40, 801)
    mom, uerr = ex._moment_series(es, 0, np.array([1.0, 2.0 ** p]), t)
    W = math.sqrt((a - b) ** 2 + 4 * e * e)
    s, c = np.sin(W * t / 2), np.cos(W * t / 2)
    a0 = np.sqrt(c ** 2 + ((a - b) / W) ** 2 * s ** 2)
    a1 = (2 * e / W) * np.abs(s)
    assert np.allclose(mom, a0 + 2 ** p * a1, atol=1e-10)
    assert uerr < 1e-10


@given(st.floats(0, 1), st.floats(0, 0.05))
def test_unitarity(theta, eps):
    res = ex.dynamics_moment(tail_cfg(eps).with_(hopping=HoppingSpec("nearest_power", radius=10)), 15, 0.0,
                             np.linspace(0, 30, 31), theta=theta, max_refine=0)
    assert res.unitarity_error < 1e-10


# IDS


def test_ids_decoupled_direct_count():
    N, theta = 50, 0.17
    cfg = amo(0.0, theta=theta)
    E = np.linspace(-1.1, 1.1, 97)
    c = ex.ids_curve(cfg, N, E)
    v = np.cos(2 * np.pi * (theta + np.arange(-N, N + 1) * GOLDEN))
    direct = np.array([(v <= e).sum() for e in E]) / (2 * N + 1)
    assert np.array_equal(c.counts, direct)


@given(st.floats(0, 1), st.floats(0, 0.2))
def test_ids_monotone_normalized(theta, eps):
    c = ex.ids_curve(amo(eps, theta=theta), 30, np.linspace(-3, 3, 61))
    assert np.all(np.diff(c.counts) >= 0)
    assert c.counts[0] == 0 and c.counts[-1] == 1


def test_window_counts_shrink_with_eta():
    ev = ex.ids_curve(amo(1e-2), 100).eigenvalues
    w = [ex.window_counts(ev, 0.1 / 2 ** k) for k in range(8)]
    assert all(x >= y for x, y in zip(w, w[1:]))


def test_holder_exponent_of_uniform_spectrum():
    # evenly spaced eigenvalues give a slope close to 1
    c = ex.IdsCurve(np.zeros(0), np.zeros(0), 0, np.linspace(0, 1, 10001))
    fit = ex.holder_modulus(c, np.geomspace(1e-3, 1e-1, 9))
    assert fit.exponent == pytest.approx(1.0, abs=0.02)
    assert fit.mu == pytest.approx(0.5 - fit.exponent)


# even determinant and dual


@given(st.floats(-0.5, 0.5), st.floats(-0.05, 0.05), st.integers(-30, 30))
def test_even_det_symmetric_blocks(x, y, c):
    # the block is symmetric about 0 in the phase variable after absorbing the shift
    cfg = tail_cfg().with_(hopping=HoppingSpec("nearest_power", radius=10))
    assert ex.even_det_residual(box(0, 5), cfg, complex(x, y)) < 1e-9


def test_dual_decoupled_is_delocalized():
    rows = ex.dual_localization_proxy(amo(0.0), 2, 50, [0.1], doublings=0)
    assert rows[0].self_adjoint
    assert rows[0].median_ipr < 3.0 / (2 * 50 + 1)


def test_dual_is_rescaled_primal():
    eps, M, x = 0.05, 20, 0.31
    dual = aubry_dual(amo(eps), band_cut=2)
    prim = assemble_H(box(0, M), amo(1 / (4 * eps)), theta=x).entries
    assert np.allclose(dual.assemble(x, M).entries, 2 * eps * prim, atol=1e-13)


def test_dual_boundary_weight_nonvanishing():
    rows = ex.dual_localization_proxy(amo(0.1), 2, 50, [0.1, 0.3], doublings=2)
    assert [r.M for r in rows] == [50, 100, 200] * 2
    for r in rows:
        assert r.median_boundary_weight > 0.1


def test_dual_non_hermitian_routes_to_singular_values():
    pot = PotentialSpec("cosine")
    cfg = ModelConfig(omega=(GOLDEN,), epsilon=0.1, potential=pot,
                      hopping=HoppingSpec("table", table=((1, 1.0, 0.0),)))
    rows = ex.dual_localization_proxy(cfg, 2, 10, [0.1], doublings=0)
    assert not rows[0].self_adjoint and rows[0].min_singular is not None


def test_dynamics_reference_scale():
    assert ex.dynamics_reference(0.1, 1e-3, 1.0, 1, 2.0) == pytest.approx(10 ** 130.5)
    assert ex.dynamics_reference(0.1, 0.0, 1.0, 1, 2.0) == pytest.approx(10 ** 43.5)
    assert ex.dynamics_reference(0.1, 1e-300, 1.0, 1, 2.0) == math.inf
