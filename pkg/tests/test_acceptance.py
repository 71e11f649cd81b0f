"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION k: PASS|FAIL ...`` line (also repeated
in the terminal summary) and then asserts.  Run directly with
``python3 tests/test_acceptance.py`` for the PASS/FAIL lines alone.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from copula_vi import bicop
from copula_vi.bicop import FamilyTag as F, PairCopula, Rotation as R
from copula_vi.cvi import CviConfig, fit
from copula_vi.dist import CopulaVariationalDist
from copula_vi.grad import grad_reparam, grad_score
from copula_vi.marginal import MarginalSet
from copula_vi.models import GaussianTarget, MixtureTarget
from copula_vi.sampler import compile_program, rosenblatt, run_copula, uniforms
from copula_vi.select import build_vine, fit_family, pseudo_obs
from copula_vi.vine import Vine, VineEdge, dvine

import conftest
from conftest import four_variable_vine, gaussian_pc, pc_from_tau

pytestmark = pytest.mark.slow


def report(k, checks, seconds):
    """Print the criterion line; ``checks`` maps clause name to (ok, detail)."""
    ok = all(c[0] for c in checks.values())
    parts = "; ".join(f"{name} {'ok' if c[0] else 'FAILED'} ({c[1]})" for name, c in checks.items())
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} [{seconds:.1f}s] {parts}"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    return ok


def grid_kl(q, p, extent=5.0, n=161):
    g = np.linspace(-extent, extent, n)
    pts = np.array(np.meshgrid(g, g, indexing="ij")).reshape(2, -1).T
    logq, logp = q.log_q(pts), p.logp_batch(pts)
    return float(np.sum(np.exp(logq) * (logq - logp)) * (g[1] - g[0]) ** 2)


def monotone(trace):
    return all(r.elbo_after >= r.elbo_before - 2 * r.elbo_se for r in trace.records)


# ---------------------------------------------------------------------------
# shared fits for criteria 1-3
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def figure1_fit():
    target = GaussianTarget.correlated_2d(0.8)
    dist0 = CopulaVariationalDist(MarginalSet.gaussian([1.0, -1.0], [-1.0, -1.0]), dvine(2, gaussian_pc(0.0)))
    snaps = []
    t0 = time.perf_counter()
    _, trace = fit(dist0, target, CviConfig(outer_max_phases=4, outer_tol_elbo=-math.inf),
                   on_phase=lambda rec, q: snaps.append(q))
    return target, snaps, trace, time.perf_counter() - t0


@pytest.fixture(scope="module")
def exact_family_fit():
    rng = np.random.default_rng(2024)
    a = rng.normal(size=(3, 3))
    cov = a @ a.T + 0.5 * np.eye(3)
    target = GaussianTarget(np.zeros(3), cov)
    t0 = time.perf_counter()
    dist0 = CopulaVariationalDist(MarginalSet.gaussian(np.zeros(3)), dvine(3, gaussian_pc(0.0)))
    dist, trace = fit(dist0, target, CviConfig(outer_tol_elbo=1e-3))
    mf, mf_trace = fit(CopulaVariationalDist.mean_field(np.zeros(3)), target, CviConfig(outer_max_phases=1))
    return target, dist, trace, mf, mf_trace, time.perf_counter() - t0


# ---------------------------------------------------------------------------


def test_criterion_1_correlated_gaussian(figure1_fit):
    target, snaps, trace, secs = figure1_fit
    true_tau = 2 / math.pi * math.asin(0.8)
    sd1 = np.exp(snaps[0].lam[1::2])
    tau1 = bicop.tau_from_theta(snaps[0].vine.edge(1, 0).pc)
    tau2 = bicop.tau_from_theta(snaps[1].vine.edge(1, 0).pc)
    tau4 = bicop.tau_from_theta(snaps[3].vine.edge(1, 0).pc)
    kls = [grid_kl(q, target) for q in snaps]
    # with both marginal sds fixed at the mean-field value 0.6, the best Gaussian
    # copula solves 0.8 r^2 + r - 0.8 = 0
    r_star = (-1 + math.sqrt(1 + 4 * 0.8 * 0.8)) / (2 * 0.8)
    checks = {
        "mean-field sds within 3% of 0.6": (bool(np.all(np.abs(sd1 / 0.6 - 1) < 0.03)), f"sds={np.round(sd1, 4)}"),
        "phase-1 tau = 0": (tau1 == 0.0, f"tau={tau1}"),
        "tau after one eta-phase within 0.05 of 0.5903": (
            abs(tau2 - true_tau) < 0.05,
            f"tau={tau2:.4f}, best attainable with fixed marginals={2 / math.pi * math.asin(r_star):.4f}, "
            f"tau after 4 phases={tau4:.4f}"),
        "KL decreasing over 4 phases": (all(b < a for a, b in zip(kls, kls[1:])), f"KL={np.round(kls, 5)}"),
        "runtime < 120s": (secs < 120, f"{secs:.1f}s"),
    }
    assert report(1, checks, secs)


def test_criterion_2_exact_family_recovery(exact_family_fit):
    target, dist, trace, mf, _, secs = exact_family_fit
    z = dist.sample(200_000, seed=99)
    err = np.linalg.norm(np.cov(z.T) - target.cov) / np.linalg.norm(target.cov)
    zm = mf.sample(200_000, seed=99)
    cov_mf = np.cov(zm.T)
    mf_err = np.linalg.norm(cov_mf - target.cov) / np.linalg.norm(target.cov)
    offdiag = np.max(np.abs(cov_mf - np.diag(np.diag(cov_mf))) / np.sqrt(np.outer(np.diag(cov_mf), np.diag(cov_mf))))
    mf_var = 1.0 / np.diag(target.precision)
    checks = {
        "covariance within 10% Frobenius": (err < 0.10, f"err={err:.4f}, phases={len(trace)}"),
        "mean-field is diagonal": (offdiag < 0.01 and mf_err > 0.10,
                                   f"max |corr|={offdiag:.4f}, mean-field err={mf_err:.3f}"),
        "mean-field variances at diagonal optimum": (
            bool(np.all(np.abs(np.diag(cov_mf) / mf_var - 1) < 0.05)), f"ratio={np.round(np.diag(cov_mf) / mf_var, 3)}"),
        "runtime < 300s": (secs < 300, f"{secs:.1f}s"),
    }
    assert report(2, checks, secs)


def test_criterion_3_elbo_monotone(figure1_fit, exact_family_fit):
    t1 = figure1_fit[2]
    t2 = exact_family_fit[2]
    fmt = lambda t: ", ".join(f"{r.elbo_after - r.elbo_before:+.4f}/{r.elbo_se:.4f}" for r in t.records)
    checks = {
        "criterion-1 fit": (monotone(t1), f"delta/se: {fmt(t1)}"),
        "criterion-2 fit": (monotone(t2), f"delta/se: {fmt(t2)}"),
        "evaluation size": (t1.records[0].elbo_se > 0 and CviConfig().m_eval == 100_000, "m_eval=100000"),
    }
    assert report(3, checks, 0.0)


def test_criterion_4_copula_unit_suite():
    t0 = time.perf_counter()
    gx, gw = np.polynomial.legendre.leggauss(64)
    gx, gw = 0.5 * (gx + 1), 0.5 * gw
    U, V = np.meshgrid(gx, gx, indexing="ij")
    W = np.outer(gw, gw)
    g9 = np.linspace(0.1, 0.9, 9)
    U9, V9 = np.meshgrid(g9, g9, indexing="ij")
    worst = dict(norm=0.0, h=0.0, inv=0.0, partial=0.0)
    count = 0
    for fam, rot in bicop.all_family_rotations():
        for tau in (0.2, 0.35, 0.5):
            if fam is F.INDEPENDENCE:
                pc = PairCopula()
            else:
                pc = pc_from_tau(fam, -tau if rot in (R.R90, R.R270) else tau, rot)
            count += 1
            worst["norm"] = max(worst["norm"], abs(np.sum(W * bicop.density(pc, U, V)) - 1))
            e = 1e-5
            fd = (bicop.cdf(pc, U9, V9 + e) - bicop.cdf(pc, U9, V9 - e)) / (2 * e)
            h = bicop.hfunc(pc, U9, V9)
            worst["h"] = max(worst["h"], np.max(np.abs(h - fd)))
            worst["inv"] = max(worst["inv"], np.max(np.abs(bicop.hinv(pc, h, V9) - U9)))
            if fam is F.INDEPENDENCE:
                continue
            u, v = U9.ravel()[::7], V9.ravel()[::7]
            p = bicop.partials(pc, u, v)
            s = 1e-6
            t = pc.theta[0]
            st = s * max(1, abs(t))
            up, dn = replace(pc, theta=(t + st,) + pc.theta[1:]), replace(pc, theta=(t - st,) + pc.theta[1:])
            pairs = [
                (p.d_logc_du, (bicop.log_density(pc, u + s, v) - bicop.log_density(pc, u - s, v)) / (2 * s)),
                (p.d_logc_dv, (bicop.log_density(pc, u, v + s) - bicop.log_density(pc, u, v - s)) / (2 * s)),
                (p.dh_du, (bicop.hfunc(pc, u + s, v) - bicop.hfunc(pc, u - s, v)) / (2 * s)),
                (p.dh_dv, (bicop.hfunc(pc, u, v + s) - bicop.hfunc(pc, u, v - s)) / (2 * s)),
                (p.d_logc_dtheta, (bicop.log_density(up, u, v) - bicop.log_density(dn, u, v)) / (2 * st)),
                (p.dh_dtheta, (bicop.hfunc(up, u, v) - bicop.hfunc(dn, u, v)) / (2 * st)),
            ]
            for a, b in pairs:
                worst["partial"] = max(worst["partial"], np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-3)))
    secs = time.perf_counter() - t0
    checks = {
        "16 combinations x 3 settings": (count == 48, f"{count} settings"),
        "normalization within 1e-3": (worst["norm"] < 1e-3, f"{worst['norm']:.2e}"),
        "h = dC/dv within 1e-4": (worst["h"] < 1e-4, f"{worst['h']:.2e}"),
        "hinv(h) within 1e-8": (worst["inv"] < 1e-8, f"{worst['inv']:.2e}"),
        "partials within rel 1e-4": (worst["partial"] < 1e-4, f"{worst['partial']:.2e}"),
        "runtime < 60s": (secs < 60, f"{secs:.1f}s"),
    }
    assert report(4, checks, secs)


def test_criterion_5_sampler():
    t0 = time.perf_counter()
    pcs = [pc_from_tau(F.CLAYTON, 0.5), pc_from_tau(F.GUMBEL, 0.4), pc_from_tau(F.FRANK, 0.3),
           PairCopula(F.STUDENT_T, R.R0, (0.3, 8.0)), PairCopula(F.JOE, R.R90, (1.5,)), gaussian_pc(0.2)]
    vine = four_variable_vine(pcs)
    prog = compile_program(vine)
    u = uniforms(2024, 100_000, 4)
    v, _, n_hinv, _ = run_copula(vine, prog, u)
    ks = [stats.kstest(v[:, j], "uniform").pvalue for j in range(4)]
    tau_err = max(abs(stats.kendalltau(v[:, e.i], v[:, e.k]).statistic - bicop.tau_from_theta(e.pc))
                  for e in vine.trees[0])
    rt = float(np.max(np.abs(rosenblatt(vine, prog, v) - u)))
    secs = time.perf_counter() - t0
    checks = {
        "uniform margins (KS p > 0.001)": (min(ks) > 0.001, f"p={np.round(ks, 3)}"),
        "T1 tau within 0.02": (tau_err < 0.02, f"max err={tau_err:.4f}"),
        "Rosenblatt round trip within 1e-7": (rt < 1e-7, f"{rt:.2e}"),
        "hinv calls per sample <= 6": (n_hinv <= 6, f"{n_hinv}"),
    }
    assert report(5, checks, secs)


def test_criterion_6_estimator_agreement():
    t0 = time.perf_counter()
    target = GaussianTarget.correlated_2d(0.8)
    dist = CopulaVariationalDist(MarginalSet.gaussian([0.4, -0.3], [-0.2, 0.1]), dvine(2, gaussian_pc(0.3)))
    sc = grad_score(dist, target, m=10_000, seed=1)
    rp = grad_reparam(dist, target, m=10_000, seed=2)
    z = np.abs(sc.grad - rp.grad) / np.sqrt(sc.grad_se ** 2 + rp.grad_se ** 2)
    secs = time.perf_counter() - t0
    checks = {
        "means agree within 3 sigma": (bool(np.all(z < 3)), f"z={np.round(z, 2)}"),
        "reparam variance lower per coordinate": (bool(np.all(rp.grad_se < sc.grad_se)),
                                                  f"se ratio={np.round(rp.grad_se / sc.grad_se, 3)}"),
    }
    assert report(6, checks, secs)


def test_criterion_7_structure_learning():
    t0 = time.perf_counter()
    truth = Vine(4, [
        [VineEdge(0, 2, (), pc_from_tau(F.GAUSSIAN, 0.7)), VineEdge(1, 2, (), pc_from_tau(F.CLAYTON, 0.65)),
         VineEdge(2, 3, (), pc_from_tau(F.GUMBEL, 0.6))],
        [VineEdge(0, 1, (2,), pc_from_tau(F.FRANK, 0.15)), VineEdge(0, 3, (2,), pc_from_tau(F.GAUSSIAN, 0.1))],
        [VineEdge(1, 3, (0, 2), pc_from_tau(F.CLAYTON, 0.05))],
    ])
    prog = compile_program(truth)
    true_t1 = {e.pair for e in truth.trees[0]}
    structure_cands = [(F.GAUSSIAN, R.R0), (F.CLAYTON, R.R0), (F.GUMBEL, R.R0), (F.FRANK, R.R0)]
    hits = 0
    for seed in range(20):
        v, *_ = run_copula(truth, prog, uniforms(seed, 5000, 4))
        got = build_vine(pseudo_obs(v), structure_cands)
        hits += {e.pair for e in got.trees[0]} == true_t1

    family_cands = [(F.GAUSSIAN, R.R0)] + [(F.CLAYTON, r) for r in R]
    fam_hits = 0
    for seed in range(20):
        ok = True
        for pc in (pc_from_tau(F.GAUSSIAN, 0.5), pc_from_tau(F.CLAYTON, 0.5)):
            u = uniforms(1000 + seed, 2000, 2)
            data = np.column_stack([bicop.hinv(pc, u[:, 0], u[:, 1]), u[:, 1]])
            ok &= fit_family(pseudo_obs(data), family_cands).pc.family is pc.family
        fam_hits += ok
    secs = time.perf_counter() - t0
    checks = {
        "T1 recovered in >= 90% of 20 seeds": (hits >= 18, f"{hits}/20"),
        "Gaussian vs Clayton recovered in >= 90% of seeds": (fam_hits >= 18, f"{fam_hits}/20"),
    }
    assert report(7, checks, secs)


def test_criterion_8_truncation():
    t0 = time.perf_counter()
    full, trunc = dvine(10), dvine(10, truncation=2)
    pf, pt = compile_program(full), compile_program(trunc)
    calls_f, calls_t = pf.n_hinv + pf.n_h, pt.n_hinv + pt.n_h
    secs = time.perf_counter() - t0
    checks = {
        "full vine stores 45": (full.n_edges == 45, f"{full.n_edges}"),
        "L=2 stores <= 20": (trunc.n_edges <= 20, f"{trunc.n_edges}"),
        "hinv calls = stored pair copulas": (pf.n_hinv == 45 and pt.n_hinv == trunc.n_edges,
                                             f"full {pf.n_hinv}, L=2 {pt.n_hinv}"),
        "total h calls scale with stored pair copulas": (
            calls_t <= 2 * trunc.n_edges and calls_t / calls_f <= 2 * trunc.n_edges / full.n_edges,
            f"full {calls_f}, L=2 {calls_t}"),
    }
    assert report(8, checks, secs)


def test_criterion_9_mixture():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    x = np.concatenate([rng.normal(-2, 0.5, 250), rng.normal(2, 0.5, 250)])
    model = MixtureTarget(x, K=2)
    dist0 = CopulaVariationalDist(MarginalSet.gaussian([0.0, -1.0, 1.0, 0.0, 0.0], [-2.0] * 5),
                                  dvine(5, gaussian_pc(0.0)))
    cfg = CviConfig(m=128, inner_max_iters=500, outer_max_phases=4, m_eval=20_000)
    dist, trace = fit(dist0, model, cfg)
    means = np.sort([dist.marginals[model.mean_index(k)].mu for k in range(2)])
    eta_ok = all(r.elbo_after >= r.elbo_before - 2 * r.elbo_se for r in trace.records if r.kind == "eta")
    secs = time.perf_counter() - t0
    checks = {
        "component means within 0.1": (bool(np.all(np.abs(means - [-2.0, 2.0]) < 0.1)), f"means={np.round(means, 3)}"),
        "copula phases do not decrease ELBO": (eta_ok, ", ".join(
            f"{r.kind}:{r.elbo_after - r.elbo_before:+.3f}" for r in trace.records)),
    }
    assert report(9, checks, secs)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
