import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qplab import msa
from qplab.lattice import SiteSet, align_enlarge, box
from qplab.model import HoppingSpec, ModelConfig, assemble_T, solve_theta0
from qplab.opalgebra import logdet

CFG = ModelConfig(epsilon=1e-3, E=0.3, hopping=HoppingSpec(kind="power", alpha_decay=6, radius=20))
SCHED = msa.schedule(1, 2, mode="exploration", table=[(0, 0, -4), (1, 2, -8)])
T0 = solve_theta0(CFG).real
WINDOW = box(0, 100)


@pytest.fixture(scope="module")
def c1_trace():
    return msa.run_msa(CFG.with_(theta=T0), SCHED, WINDOW)


@pytest.fixture(scope="module")
def c2_trace():
    return msa.run_msa(CFG.with_(theta=-T0), SCHED, WINDOW)


# schedule


def test_paper_schedule_rows():
    sch = msa.schedule(1, 2, delta0=1e-3, s_max=3)
    rows = sch.rows()
    assert [r[:2] for r in rows] == [(0, 0), (1, 1), (2, 31), (3, 10 ** 45)]
    assert [r[2] for r in rows] == pytest.approx([-3, -90, -2700, -81000])
    assert sch.N(3) == 10 ** 45  # exact integer, not a rounded float


def test_paper_schedule_from_epsilon():
    a = msa.schedule(1, 2, epsilon0=1e-90, s_max=1)
    assert a.log10_delta(0) == pytest.approx(-3)
    assert a.N(1) == 1


@pytest.mark.parametrize("table", [
    [(0, 0, -4), (1, 1, -3)],
    [(0, 0, -4), (2, 3, -8)],
    [(0, 0, 1)],
    [(0, 0, -4), (1, 0, -8)],
])
def test_exploration_table_rejected(table):
    with pytest.raises(msa.ScheduleInvalid):
        msa.schedule(1, 2, mode="exploration", table=table)


def test_schedule_needs_input():
    with pytest.raises(msa.ScheduleInvalid):
        msa.schedule(1, 2)
    with pytest.raises(msa.ScheduleInvalid):
        msa.schedule(1, 2, mode="other", delta0=0.1)


# generations


def _check_invariants(tr):
    for g in tr.generations:
        for t in (g.t_A, g.t_omega, g.t_tilde):
            assert t.is_symmetric()
        assert g.t_A.issubset(g.t_omega) and g.t_omega.issubset(g.t_tilde)
        assert len(g.t_A) <= 2 ** g.s
    for prev, g in zip(tr.generations, tr.generations[1:]):
        for k2 in prev.Q.pts2:
            blk = prev.t_tilde.translate2(k2)
            assert any(blk.issubset(g.t_omega.translate2(p)) for p in g.P.pts2)


def test_c1_step(c1_trace):
    tr = c1_trace
    assert tr.status == "s-max"
    g0, g1 = tr.generations
    assert len(g0.Q) == 1 and g0.Qminus.pts2.tolist() == [[0]]
    assert g1.case == "C1"
    c = g1.certificate
    assert c.winding == 1 and c.paired and c.shift_ok
    assert abs(g1.theta_s - T0) < CFG.epsilon
    assert g1.zeta == 2 * SCHED.N(1)  # Omega = box of radius N around the site
    _check_invariants(tr)


def test_c1_fs_empty(c1_trace):
    cfg = CFG.with_(theta=T0)
    for g in c1_trace.generations:
        assert msa.fs_violations(g, cfg) == []


def test_c2_step(c2_trace):
    tr = c2_trace
    g0, g1 = tr.generations
    assert g1.case == "C2"
    c = g1.certificate
    assert c.winding == 2 and c.paired
    assert c.alternative == "l01"
    # the pair of roots is symmetric about the centre
    r = sorted(c.roots, key=lambda z: z.real)
    assert abs(r[0] + r[1]) < 1e-10
    # P_1 sits at the midpoint of the resonant pair
    i2, j2 = msa._pair_min(g0.Qplus, g0.Qt_minus)[1]
    assert g1.P.pts2.tolist() == [((i2 + j2) // 2).tolist()]
    assert len(g1.t_A) == 2
    _check_invariants(tr)


def test_epsilon_zero_root_is_unshifted():
    cfg = CFG.with_(epsilon=0.0, theta=T0)
    tr = msa.run_msa(cfg, SCHED, WINDOW)
    g1 = tr.generations[1]
    assert g1.case == "C1"
    assert abs(g1.theta_s - T0) < 1e-12


def test_empty_resonance_terminates():
    tr = msa.run_msa(CFG.with_(theta=0.1234), SCHED, WINDOW)
    assert tr.status == "terminated-empty"
    assert len(tr.generations) == 1


def test_geometry_violation_certificate():
    sch = msa.schedule(1, 2, mode="exploration", table=[(0, 0, -1), (1, 2, -2)])
    tr = msa.run_msa(CFG.with_(theta=T0), sch, WINDOW)
    assert tr.status == "geometry-violation"
    cert = tr.certificate
    assert cert["dist"] <= 10 * cert["diam"]
    assert {"k", "k_prime", "s"} <= set(cert)


def test_classify_case_threshold():
    g = msa.initial_generation(CFG.with_(theta=-T0), WINDOW, -4)
    case, l2 = msa.classify_case(g, 2)
    assert case == "C2"
    dmin = msa.mirrored_distances(g)[0]
    assert dmin <= 100 * 2 ** 3
    assert dmin > 0
    # with a vanishing next scale the same pair counts as far apart
    assert msa.classify_case(g, 0)[0] == "C1"


def test_trace_json_roundtrip(c1_trace, c2_trace):
    for tr in (c1_trace, c2_trace):
        blob = json.dumps(tr.to_json())
        back = json.loads(blob)
        assert back["status"] == tr.status
        assert back["generations"][1]["case"] in ("C1", "C2")


def test_is_good(c1_trace):
    gens = c1_trace.generations
    base = box(0, 12)
    ok0, cert = msa.is_good(base, gens, 0)
    assert not ok0 and cert["clause"] == 2
    blocks = [g.omega_tilde(k) for g in gens[1:] for k in g.P.pts2]
    lam = align_enlarge(base, blocks)
    # the resonant block is now inside, so clause 1 holds and Q_1 blocks are absorbed
    ok1, cert1 = msa.is_good(lam, gens, 1)
    assert ok1 or cert1["clause"] == 2
    far = box(60, 5)
    assert msa.is_good(far, gens, 0)[0]


def test_audit_bounds_pass(c1_trace):
    cfg = CFG.with_(theta=T0)
    gens = c1_trace.generations
    blocks = [g.omega_tilde(k) for g in gens[1:] for k in g.P.pts2]
    lam = align_enlarge(box(0, 12), blocks)
    rows = msa.audit_bounds(gens, cfg, [lam], hard_budget=10, soft_budget=10)
    ids = {r.bound_id for r in rows}
    assert "tb0" in ids and "ss" in ids
    for r in rows:
        if r.bound_id in ("tb0", "tsg01", "ss"):
            assert r.passed, r
        assert len(r.csv_row()) == 6


def test_green_diagonal_when_decoupled():
    cfg = CFG.with_(epsilon=0.0, theta=0.1234)
    L = box(0, 10)
    res = msa.green(L, cfg, alphas=(0, 1))
    d = np.diag(assemble_T(L, cfg).entries)
    assert np.allclose(np.diag(res.inverse.entries), 1 / d)
    assert not (res.inverse.entries - np.diag(np.diag(res.inverse.entries))).any()
    assert res.norms[0.0] == pytest.approx(np.abs(1 / d).max())


def test_green_decay_power_law():
    res = msa.green(box(0, 40), CFG.with_(theta=0.1234), alphas=(1,))
    assert res.decay_exponent > 3


def test_det_factorizes_through_schur(c2_trace):
    g1 = c2_trace.generations[1]
    for z in (0.01 + 0.002j, -0.03, 0.2 + 0.01j):
        sd = msa.schur_at(g1, CFG, z)
        full = logdet(assemble_T(g1.t_tilde, CFG, theta=z))
        lmag, phase = full.discrepancy(sd.log_det_a * sd.log_det_s)
        assert lmag < 1e-9 and phase < 1e-9


@given(st.floats(-0.5, 0.5), st.floats(-0.05, 0.05), st.integers(1, 6))
def test_det_even_on_symmetric_block(x, y, r):
    # symmetric block and even potential: det T(z) = det T(-z)
    S = box(0, r)
    z = complex(x, y)
    a = logdet(assemble_T(S, CFG, theta=z))
    b = logdet(assemble_T(S, CFG, theta=-z))
    lmag, phase = a.discrepancy(b)
    assert lmag < 1e-9 * (1 + abs(a.logabs))


@given(st.floats(-1, 1))
def test_resonant_sets_monotone_in_threshold(theta):
    g = msa.initial_generation(CFG.with_(theta=theta), box(0, 60), -2)
    assert g.Qplus.issubset(g.Qt_plus) and g.Qminus.issubset(g.Qt_minus)


def test_parent_assignment_records_ties():
    # site (2,) is a candidate for centres at (0,) and (4,) at equal distance
    owner, ties = msa._assign_parents({(0,): [(-2,), (2,)], (4,): [(2,), (6,)]})
    assert owner[(2,)] == (0,)
    assert ties == [(2,)]
    assert owner[(-2,)] == (0,) and owner[(6,)] == (4,)


def test_c2_owner_map(c2_trace):
    g0, g1 = c2_trace.generations
    for k2 in g0.Q.pts2:
        assert tuple(int(c) for c in k2) in g1.owner
