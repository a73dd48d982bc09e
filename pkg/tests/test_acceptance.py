"""End-to-end acceptance criteria; each test logs one ``CRITERION k: PASS|FAIL`` line.

Run alone with ``pytest tests/test_acceptance.py -s``. The full set takes
about 30 minutes on one core, dominated by the 40 volume runs (criterion 7).
"""

import math
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from hmcvol.barrier import BarrierParams, g_norm, metric, minimize_phi, phi
from hmcvol.cooling import CoolingConfig, estimate_volume, log_ratio, schedule, telescope
from hmcvol.dynamics import PhaseState, integrate
from hmcvol.lewis import fixed_point_residual, lewis_weights
from hmcvol.polytope import box, cube, simplex
from hmcvol.sampler import ChainConfig, run_chain, step_size
from hmcvol.verify import generate_corpus, run_suite

pytestmark = pytest.mark.acceptance

DESK_CHAIN = dict(c=1.0, delta_scale=2.0, n_ode_steps=4, max_step=0.16, tol_fp=1e-8)


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(seed=0, n_random=50)


def _verdict(ok):
    return "PASS" if ok else "FAIL"


def _worst(reports, check):
    rs = [r for r in reports if r.check == check]
    return max(rs, key=lambda r: r.measured / r.bound if r.bound else r.measured)


def test_criterion_1_lewis_fixed_point(corpus, acceptance_log):
    t0 = time.perf_counter()
    worst_res = worst_sum = 0.0
    for e in corpus:
        P = e.polytope
        prm = BarrierParams.for_polytope(P)
        for x in e.points:
            st = metric(prm, x)
            worst_res = max(worst_res, fixed_point_residual(st.A_x, st.lewis.w, prm.p))
            worst_sum = max(worst_sum, abs(st.lewis.w.sum() - P.n))
    cube_err = 0.0
    for n in range(1, 9):
        P = cube(n)
        w = lewis_weights(P.A, BarrierParams.for_polytope(P).p).w
        cube_err = max(cube_err, float(np.max(np.abs(w - n / P.m))))
    dt = time.perf_counter() - t0
    ok = worst_res <= 1e-10 and worst_sum <= 1e-10 and cube_err <= 1e-12 and dt < 30
    acceptance_log(f"CRITERION 1: {_verdict(ok)} (max residual {worst_res:.2e}, "
                   f"max |sum w - n| {worst_sum:.2e}, cube center err {cube_err:.1e}, "
                   f"{dt:.1f} s)")
    assert ok


def test_criterion_2_derivative_oracles(corpus, acceptance_log):
    t0 = time.perf_counter()
    checks = ["fd_gradient", "fd_hessian", "metric_forms", "fd_dmetric"]
    reps = run_suite(corpus, only=checks)
    dt = time.perf_counter() - t0
    fails = [r for r in reps if not r.passed]
    parts = ", ".join(f"{c} max {_worst(reps, c).measured:.1e}" for c in checks)
    ok = not fails and dt < 120
    acceptance_log(f"CRITERION 2: {_verdict(ok)} ({parts}; {len(fails)} failures over "
                   f"{len(reps)} checks, {dt:.1f} s)")
    assert ok


def test_criterion_3_hard_inequalities(corpus, acceptance_log):
    checks = ["ginfnorm", "row_norm", "barrier_parameter", "infwithgnorm"]
    reps = run_suite(corpus, only=checks)
    summary = []
    for c in checks:
        rs = [r for r in reps if r.check == c]
        bad = sum(not r.passed for r in rs)
        w = _worst(reps, c)
        summary.append(f"{c} {bad}/{len(rs)} fail, max meas/bound {w.measured / w.bound:.3g}")
    fails = [r for r in reps if not r.passed]
    ok = not fails
    acceptance_log(f"CRITERION 3: {_verdict(ok)} ({'; '.join(summary)})")
    assert ok, f"{len(fails)} hard failures, first: {fails[0]}"


def test_criterion_4_soft_suite(corpus, acceptance_log):
    reps = run_suite(corpus, only=["selfconcordance", "bias_norm"])
    sc = [r for r in reps if r.check == "selfconcordance"]
    consts = {k: max(r.details["empirical_constant"] for r in sc if r.details["order"] == k)
              for k in (1, 2, 3)}
    oracle = sum(r.details["oracle_failures"] for r in sc)
    bias = [r for r in reps if r.check == "bias_norm"]
    bias_ratio = max(r.measured / r.bound for r in bias)
    fails = [r for r in reps if not r.passed]
    ok = not fails
    acceptance_log(
        "CRITERION 4: {} (self-concordance constants C/log(m)^3 order1 {:.3g}, order2 {:.3g}, "
        "order3 {:.3g} vs 50; {} oracle skips; bias norm max ratio to bound {:.3g})".format(
            _verdict(ok), consts[1], consts[2], consts[3], oracle, bias_ratio))
    assert ok


def test_criterion_5_integrator(corpus, acceptance_log):
    rng = np.random.default_rng(5)
    ratios, rev = [], []
    skipped = 0
    for e in corpus:
        P = e.polytope
        prm = BarrierParams.for_polytope(P)
        for x in e.points[:3]:
            st = metric(prm, x)
            v = st.g_chol @ rng.standard_normal(P.n)
            kw = dict(tol_fp=1e-13, max_fp_iter=200, start_state=st)
            a = integrate(prm, PhaseState(x, v), 0.2, 4, **kw)
            b = integrate(prm, PhaseState(x, v), 0.2, 8, **kw)
            if a.rejected or b.rejected:
                skipped += 1
                continue
            ratios.append(abs(a.energy_error) / abs(b.energy_error))
            back = integrate(prm, PhaseState(b.end.x, -b.end.v), 0.2, 8, tol_fp=1e-13,
                             max_fp_iter=200)
            if back.rejected:
                skipped += 1
                continue
            rev.append(g_norm(st, back.end.x - x))
    med = float(np.median(ratios))
    ok = 3 <= med <= 5 and max(rev) <= 1e-6
    acceptance_log(f"CRITERION 5: {_verdict(ok)} (median drift ratio {med:.3f} over "
                   f"{len(ratios)} trajectories, max return error {max(rev):.1e} g-norm, "
                   f"{skipped} rejected legs)")
    assert ok


def test_criterion_6_sampling(acceptance_log):
    t0 = time.perf_counter()
    cfg = ChainConfig(**DESK_CHAIN, n_burnin=500, n_samples=50_000, seed=1)
    _, st = run_chain(cfg, cube(3))
    z_mean = [abs(m) / se for m, se in zip(st.mean, st.mean_se)]
    z_m2 = [abs(m - 1 / 3) / se for m, se in zip(st.second_moment, st.second_moment_se)]
    _, ss = run_chain(ChainConfig(**DESK_CHAIN, n_burnin=500, n_samples=20_000, seed=1),
                      simplex(2))
    z_simplex = abs(ss.mean[0] - 1 / 3) / ss.mean_se[0]
    dt = time.perf_counter() - t0
    ok = max(z_mean) <= 4 and max(z_m2) <= 4 and z_simplex <= 4 and dt < 600
    acceptance_log(
        f"CRITERION 6: {_verdict(ok)} (cube3 max |z| mean {max(z_mean):.2f}, second moment "
        f"{max(z_m2):.2f}, min ESS {min(st.ess):.0f}, acceptance {st.acceptance_rate:.3f}; "
        f"simplex2 E[x1] {ss.mean[0]:.4f} z {z_simplex:.2f}; {dt:.0f} s)")
    assert ok


def _volume_job(job):
    name, seed = job
    P = cube(4) if name == "cube4" else simplex(3)
    cfg = CoolingConfig(epsilon=0.1, sigma0_sq=0.1, c_k=1.5, seed=seed)
    return name, seed, estimate_volume(cfg, P, ChainConfig(**DESK_CHAIN, n_burnin=30)).volume


def test_criterion_7_volume(acceptance_log):
    t0 = time.perf_counter()
    jobs = [(name, s) for name in ("cube4", "simplex3") for s in range(20)]
    workers = int(os.environ.get("HMCVOL_THREADS", os.cpu_count() or 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_volume_job, jobs))
    else:
        results = [_volume_job(j) for j in jobs]
    dt = time.perf_counter() - t0
    exact = {"cube4": 16.0, "simplex3": 1 / 6}
    tol = {"cube4": 0.15, "simplex3": 0.20}
    hits, errs = {}, {}
    for name, _, vol in results:
        rel = vol / exact[name] - 1
        errs.setdefault(name, []).append(rel)
        hits[name] = hits.get(name, 0) + (abs(rel) <= tol[name])
    ok = hits["cube4"] >= 18 and hits["simplex3"] >= 18 and dt < 1800
    parts = [f"{k} {hits[k]}/20 within {tol[k]:.0%} (mean err {np.mean(v):+.1%}, "
             f"sd {np.std(v, ddof=1):.1%})" for k, v in errs.items()]
    acceptance_log(f"CRITERION 7: {_verdict(ok)} ({'; '.join(parts)}; {dt / 60:.1f} min)")
    assert ok


def test_criterion_8_step_size(acceptance_log):
    results = []
    for n in (8, 27):
        for c in (1.0, 2.0, 3.7):
            got = step_size(ChainConfig(c=c), 3 * n, n)
            results.append(got == n ** (-1.0 / 3.0) / c)
    exact8 = step_size(ChainConfig(c=1.0), 16, 8) == 0.5
    ok = all(results) and exact8
    acceptance_log(f"CRITERION 8: {_verdict(ok)} ({sum(results)}/{len(results)} bit-exact "
                   f"at n in {{8, 27}}; n=8, c=1 gives {step_size(ChainConfig(c=1.0), 16, 8)!r})")
    assert ok


def test_criterion_9_telescoping_quadrature(acceptance_log):
    from scipy import integrate as si

    lo, hi = 0.0, 3.0
    prm = BarrierParams(box([lo], [hi]), 3.0, 0.0)
    shift = minimize_phi(prm).phi
    nu = prm.alpha0
    ph = schedule(CoolingConfig(sigma0_sq=0.1, nu=nu), 1, nu)
    alphas = [1 / s for s, _ in ph] + [0.0]
    nodes, wts = np.polynomial.legendre.leggauss(400)
    x = lo + (hi - lo) * (nodes + 1) / 2
    wq = (hi - lo) / 2 * wts
    fv = np.array([phi(prm, np.array([t])) for t in x])
    ratios = [log_ratio(fv, a, b, weights=wq * np.exp(-a * (fv - shift)), shift=shift)
              for a, b in zip(alphas[:-1], alphas[1:])]
    a0 = alphas[0]
    z0, _ = si.quad(lambda t: math.exp(-a0 * (phi(prm, np.array([t])) - shift)), lo, hi,
                    epsabs=0, epsrel=1e-12, limit=200)
    log_v = telescope(math.log(z0) - a0 * shift, alphas, ratios, shift)
    err = abs(log_v - math.log(hi - lo))
    ok = err <= 1e-6
    acceptance_log(f"CRITERION 9: {_verdict(ok)} (|log estimate - log length| {err:.1e} over "
                   f"{len(ratios)} phases)")
    assert ok


def test_criterion_10_cli_determinism(tmp_path, acceptance_log):
    def run(out):
        cmd = [sys.executable, "-m", "hmcvol.cli", "sample", "--polytope", "cube:3", "--n", "2000",
               "--burnin", "100", "--seed", "7", "--out", str(out)]
        return subprocess.run(cmd, capture_output=True, text=True, timeout=600)

    a, b = run(tmp_path / "a"), run(tmp_path / "b")
    same = a.returncode == b.returncode == 0 and \
        (tmp_path / "a" / "samples.csv").read_bytes() == (tmp_path / "b" / "samples.csv").read_bytes()
    size = (tmp_path / "a" / "samples.csv").stat().st_size if a.returncode == 0 else 0
    acceptance_log(f"CRITERION 10: {_verdict(same)} (two runs, seed 7, {size} byte CSVs "
                   f"{'identical' if same else 'differ'})")
    assert same, a.stderr + b.stderr
