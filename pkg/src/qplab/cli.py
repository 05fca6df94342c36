"""qplab command line: verify, schedule, msa, green, eigen, dynamics, ids, dual.

Exit status 0 on success, 1 on a failed check or numerical failure, 2 on a
usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import lemmas, msa
from .config import UsageError, config_hash, load_config, model_config, require
from .lattice import box
from .model import solve_theta0
from .opalgebra import NearResonanceError

COMMANDS = ("verify", "schedule", "msa", "green", "eigen", "dynamics", "ids", "dual")


def fmt(v) -> str:
    if isinstance(v, bool) or v is None:
        return {True: "true", False: "false", None: ""}[v]
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, complex):
        return [o.real, o.imag]
    return o


def threads() -> int:
    try:
        return max(1, int(os.environ.get("QPLAB_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn, items):
    """Ordered map over independent items, threaded per QPLAB_THREADS."""
    items = list(items)
    n = threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))


class Run:
    """Output directory with a manifest and hash-stamped CSV/JSON files."""

    def __init__(self, out: Path, command: str, cfg: dict, cfg_path, overrides, seed: int):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.seed = seed
        self.stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        manifest = {
            "config_path": None if cfg_path is None else str(cfg_path),
            "subcommand": command,
            "overrides": list(overrides),
            "seed": seed,
            "output_dir": str(self.out),
            "timestamp": self.stamp,
            "config_sha256": self.hash,
            "config": cfg,
        }
        self._write("manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def _write(self, name: str, text: str):
        with open(self.out / name, "w", newline="") as fh:
            fh.write(text)

    def csv(self, name: str, header, rows):
        buf = io.StringIO()
        buf.write(f"# config_sha256={self.hash} seed={self.seed}\n")
        buf.write(f"# timestamp={self.stamp}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
        self._write(name, buf.getvalue())

    def json(self, name: str, experiment: str, metrics: dict):
        doc = {"experiment": experiment, "config_sha256": self.hash, "seed": self.seed,
               "metrics": _jsonable(metrics)}
        self._write(name, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_csv_body(path) -> str:
    """CSV text without the two comment lines (the deterministic part)."""
    lines = Path(path).read_text().splitlines(keepends=True)
    return "".join(l for l in lines if not l.startswith("#"))


def check_manifest(run_dir) -> bool:
    """Recompute the config hash from the manifest and compare with every output."""
    run_dir = Path(run_dir)
    man = json.loads((run_dir / "manifest.json").read_text())
    h = config_hash(man["config"])
    if h != man["config_sha256"]:
        return False
    for f in run_dir.glob("*.csv"):
        first = f.read_text().split("\n", 1)[0]
        if f"config_sha256={h}" not in first:
            return False
    for f in run_dir.glob("*.json"):
        if f.name != "manifest.json" and json.loads(f.read_text()).get("config_sha256") != h:
            return False
    return True


# ---------------------------------------------------------------------------
# subcommands


def cmd_verify(run: Run, cfg: dict) -> int:
    v = cfg["verify"]
    reports = lemmas.run_suites(int(v["count"]), run.seed, slack=float(v["slack"]))
    run.csv("verify.csv", ["suite", "instances", "checks", "failures", "pass"],
            [(r.suite, r.count, r.checks, len(r.failures), r.passed) for r in reports])
    bad = [{"suite": c.suite, "check": c.name, "instance": c.instance, "lhs": c.lhs, "rhs": c.rhs,
            "payload": c.payload} for r in reports for c in r.failures]
    if bad:
        run.json("counterexamples.json", "verify", {"failures": bad})
    run.json("verify.json", "verify", {"suites": len(reports), "passed": all(r.passed for r in reports)})
    for r in reports:
        print(f"{r.suite:14s} {r.checks:6d} checks  {'pass' if r.passed else 'FAIL'}")
    return 0 if all(r.passed for r in reports) else 1


def build_schedule(cfg: dict) -> msa.ScaleSchedule:
    s = cfg["schedule"]
    mode = s["mode"]
    if mode == "exploration":
        return msa.schedule(float(s["gamma"]), float(s["tau"]), mode="exploration",
                            table=require(cfg, "schedule.table"))
    if mode != "paper":
        raise UsageError(f"schedule.mode must be paper or exploration, got {mode!r}")
    return msa.schedule(float(s["gamma"]), float(s["tau"]), delta0=float(require(cfg, "schedule.delta0")),
                        s_max=int(s["s_max"]))


def cmd_schedule(run: Run, cfg: dict) -> int:
    sched = build_schedule(cfg)
    run.csv("schedule.csv", ["s", "N_s", "log10_delta_s"], sched.rows())
    for s, n, ld in sched.rows():
        print(s, n if len(str(n)) < 40 else f"~1e{len(str(n)) - 1}", fmt(ld))
    return 0


def cmd_msa(run: Run, cfg: dict) -> int:
    mc = model_config(cfg)
    c = cfg["msa"]
    sched = build_schedule(cfg)
    window = box(np.zeros(mc.d), int(c["window"]))
    good = box(np.zeros(mc.d), int(c["good_radius"]))
    n_theta = int(c["n_theta"])
    if n_theta > 0:
        # theta near the resonant value theta_0, one resonance at the origin
        rng = np.random.default_rng(run.seed)
        t0 = solve_theta0(mc).real
        ld0 = sched.log10_delta(0)
        thetas = [float(t0 + 10.0 ** ld0 * (2 * u - 1)) for u in rng.random(n_theta)]
    else:
        thetas = [float(np.real(mc.theta))]

    def one(th):
        cf = mc.with_(theta=th)
        tr = msa.run_msa(cf, sched, window, s_max=int(c["s_max"]))
        gens = [g for g in tr.generations if g.theta_s is not None]
        samples = [msa_good_set(good, gens)]
        rows = msa.audit_bounds(gens, cf, samples, alphas=tuple(c["alphas"]),
                                hard_budget=float(c["hard_budget"]), soft_budget=float(c["soft_budget"]))
        return th, tr, rows

    results = pmap(one, thetas)
    audit, summary = [], []
    for i, (th, tr, rows) in enumerate(results):
        for r in rows:
            audit.append((i, th, r.s, r.bound_id, r.lhs_log10, r.rhs_log10, r.ratio_log10, r.passed,
                          r.truncated, r.info))
        summary.append({"theta": th, "status": tr.status, "error": tr.error, "geometry": tr.certificate})
    run.csv("audit.csv", ["sample", "theta", "s", "bound_id", "lhs_log10", "rhs_log10", "ratio_log10", "pass",
                          "truncated", "info"], audit)
    run.json("msa_trace.json", "msa_trace",
             {"samples": [dict(theta=th, trace=tr.to_json()) for th, tr, _ in results[:1 if n_theta else None]]})
    passed = [a[7] for a in audit if not a[8]]
    run.json("msa.json", "msa", {"samples": summary, "audit_rows": len(audit),
                                 "pass_fraction": (sum(passed) / len(passed)) if passed else 1.0})
    failed = [s for s in summary if s["status"] not in ("ok", "s-max", "terminated-empty")]
    return 1 if failed and n_theta == 0 else 0


def msa_good_set(base, gens):
    """Enlarge ``base`` so that it absorbs every resonant block it meets."""
    from .lattice import align_enlarge

    blocks = []
    for g in gens[1:]:
        blocks += [g.omega_tilde(k2) for k2 in g.P.pts2]
    return align_enlarge(base, blocks)


def cmd_green(run: Run, cfg: dict) -> int:
    mc = model_config(cfg)
    g = cfg["green"]
    Lam = box(np.zeros(mc.d), int(g["radius"]))
    res = msa.green(Lam, mc, alphas=tuple(g["alphas"]))
    G = res.inverse.entries
    s = Lam.sites
    rows = []
    for i in range(len(Lam)):
        for j in range(len(Lam)):
            if G[i, j] != 0:
                rows.append([*s[i], *s[j], G[i, j].real, G[i, j].imag])
    d = mc.d
    run.csv("green.csv", [f"n{k}" for k in range(d)] + [f"m{k}" for k in range(d)] + ["re", "im"], rows)
    run.csv("green_norms.csv", ["alpha", "norm", "log10_norm"],
            [(a, res.norms[a], res.log10_norms[a]) for a in sorted(res.norms)])
    run.json("green.json", "green", {"sites": len(Lam), "cond": res.cond, "decay_exponent": res.decay_exponent})
    return 0


def cmd_eigen(run: Run, cfg: dict) -> int:
    mc = model_config(cfg)
    e = cfg["eigen"]
    N = int(e["N"])
    scans = pmap(lambda th: ex.localization_scan(mc, N, [th], tau1=float(e["tau1"]), A=float(e["A"]))[0],
                 [float(t) for t in e["theta_samples"]])
    rows = []
    for sc in scans:
        for q, f in enumerate(sc.fits):
            rows.append((sc.theta, sc.theta_class, q, f.exponent, f.r2, f.peak[0] if f.peak else "", f.n_points))
    run.csv("eigen.csv", ["theta", "theta_class", "q", "exponent", "r2", "peak0", "n_points"], rows)
    allx = np.array([f.exponent for sc in scans for f in sc.fits])
    allr = np.array([f.r2 for sc in scans for f in sc.fits])
    run.json("eigen.json", "eigen", {"median_exponent": float(np.median(allx)), "median_r2": float(np.median(allr)),
                                     "per_theta": [(sc.theta, sc.theta_class, sc.median_exponent, sc.median_r2)
                                                   for sc in scans]})
    return 0


def cmd_dynamics(run: Run, cfg: dict) -> int:
    mc = model_config(cfg)
    c = cfg["dynamics"]
    t = np.linspace(0.0, float(c["t_max"]), int(c["n_times"]))
    res = ex.dynamics_moment(mc, int(c["N"]), float(c["p"]), t)
    run.csv("dynamics.csv", ["t", "moment"], zip(res.times, res.moments))
    ref = ex.dynamics_reference(float(c["A"]), abs(mc.epsilon), float(c["p"]), mc.d, mc.tau)
    run.json("dynamics.json", "dynamics", {"sup": res.sup_value, "unitarity_error": res.unitarity_error,
                                           "refinements": res.refinements, "reference": ref,
                                           "ratio_to_reference": res.sup_value / ref})
    return 0


def cmd_ids(run: Run, cfg: dict) -> int:
    mc = model_config(cfg)
    c = cfg["ids"]
    curve = ex.ids_curve(mc, int(c["N"]))
    etas = np.geomspace(float(c["eta_min"]), float(c["eta_max"]), int(c["n_eta"]))
    fit = ex.holder_modulus(curve, etas)
    run.csv("ids.csv", ["E", "N_Lambda"], zip(curve.energies, curve.counts))
    run.csv("holder.csv", ["eta", "modulus"], zip(fit.etas, fit.moduli))
    run.json("ids.json", "ids", {"exponent": fit.exponent, "r2": fit.r2, "mu": fit.mu, "jumps": len(curve.eigenvalues)})
    return 0


def cmd_dual(run: Run, cfg: dict) -> int:
    mc = model_config(cfg)
    c = cfg["dual"]
    rows = ex.dual_localization_proxy(mc, int(c["band_cut"]), int(c["M"]), [float(x) for x in c["x_samples"]],
                                      int(c["doublings"]))
    run.csv("dual.csv", ["x", "M", "self_adjoint", "median_ipr", "median_boundary_weight", "min_singular"],
            [(r.x, r.M, r.self_adjoint, r.median_ipr, r.median_boundary_weight, r.min_singular) for r in rows])
    run.json("dual.json", "dual", {"note": "finite-volume surrogate: boundary weight kept away from 0 as M doubles",
                                   "rows": len(rows)})
    return 0


HANDLERS = {
    "verify": cmd_verify, "schedule": cmd_schedule, "msa": cmd_msa, "green": cmd_green,
    "eigen": cmd_eigen, "dynamics": cmd_dynamics, "ids": cmd_ids, "dual": cmd_dual,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qplab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, default=Path("qplab-out"))
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scale-mode", choices=("paper", "exploration"), default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = list(args.overrides)
        if args.scale_mode:
            overrides.append(f'schedule.mode="{args.scale_mode}"')
        cfg = load_config(args.config, overrides)
        seed = args.seed
        if seed is None:
            env = os.environ.get("QPLAB_SEED")
            seed = int(env) if env else int(cfg["run"]["seed"])
        cfg["run"]["seed"] = seed
        run = Run(args.out, args.command, cfg, args.config, overrides, seed)
        return HANDLERS[args.command](run, cfg)
    except UsageError as exc:
        print(f"qplab: usage error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"qplab: usage error: {exc}", file=sys.stderr)
        return 2
    except (msa.ScheduleInvalid,) as exc:
        print(f"qplab: usage error: {exc}", file=sys.stderr)
        return 2
    except (NearResonanceError, msa.GeometryViolation, msa.NoRootError, msa.ContourContaminationError,
            ArithmeticError, ValueError) as exc:
        print(f"qplab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
