"""Command-line interface: ``copula-vi <subcommand> ...``.

Exit codes: 0 success, 2 usage or input error, 1 numerical or optimization
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import bicop
from .bicop import FamilyTag, Rotation
from .cvi import fit
from .dist import CopulaVariationalDist
from .errors import DomainError, ModelEvaluationError, NumericalError, OptimizationError, StructureError
from .grad import elbo, grad_reparam, verify_gradient
from .io import ConfigError, PosteriorFile, load_config, load_vine, read_csv, save_vine, write_csv
from .marginal import MarginalSet
from .models import GaussianTarget, model_from_dict
from .select import all_family_rotations, build_vine, pseudo_obs
from .vine import dvine

NAMED_MODELS = {
    "gauss2d": lambda: GaussianTarget.correlated_2d(0.8),
}


class UsageError(Exception):
    pass


def load_model(spec):
    if spec in NAMED_MODELS:
        return NAMED_MODELS[spec]()
    if not os.path.exists(spec):
        raise UsageError(f"--model: {spec!r} is neither a built-in model ({', '.join(NAMED_MODELS)}) nor a file")
    with open(spec) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--model: invalid JSON ({exc})") from exc
    try:
        return model_from_dict(data, os.path.dirname(os.path.abspath(spec)))
    except KeyError as exc:
        raise UsageError(f"model.{exc.args[0]}: missing field") from exc


def parse_families(text):
    if text in ("all16", "all"):
        return all_family_rotations(include_independence=False)
    out = []
    for token in text.split(","):
        token = token.strip().lower()
        digits = "".join(ch for ch in token if ch.isdigit())
        name = token[: len(token) - len(digits)] if digits else token
        try:
            out.append((FamilyTag(name), Rotation(int(digits or 0))))
        except ValueError as exc:
            raise UsageError(f"--families: unknown family {token!r}") from exc
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def laplace_samples(model, n, seed):
    """Draws from a Gaussian centred at the mode with finite-difference Hessian."""
    from scipy import optimize

    res = optimize.minimize(lambda z: -model.logp(z), np.zeros(model.dim), jac=lambda z: -model.grad_logp(z),
                            method="BFGS")
    mode = res.x
    H = np.empty((model.dim, model.dim))
    for i in range(model.dim):
        h = 1e-5 * (1.0 + abs(mode[i]))
        e = np.zeros(model.dim)
        e[i] = h
        H[i] = -(model.grad_logp(mode + e) - model.grad_logp(mode - e)) / (2 * h)
    H = 0.5 * (H + H.T)
    cov = np.linalg.inv(H)
    rng = np.random.default_rng(seed)
    return mode, rng.multivariate_normal(mode, cov, size=n, method="eigh")


def cmd_fit(args):
    model = load_model(args.model)
    cfg = load_config(args.config)
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    d = model.dim
    if args.vine == "auto":
        mode, draws = laplace_samples(model, args.auto_samples, cfg.seed)
        vine = build_vine(pseudo_obs(draws), parse_families(args.families), args.truncation)
    elif args.vine in ("mean-field", "none"):
        vine = None
    elif args.vine == "gaussian-dvine":
        vine = dvine(d, bicop.PairCopula(FamilyTag.GAUSSIAN, Rotation.R0, (0.0,)), args.truncation)
    else:
        vine = load_vine(args.vine)
    rng = np.random.default_rng(cfg.seed)
    dist0 = CopulaVariationalDist(MarginalSet.gaussian(rng.normal(scale=0.1, size=d), np.zeros(d)), vine)
    dist, trace = fit(dist0, model, cfg)
    meta = {"elbo": trace.final_elbo, "elbo_std_err": trace.records[-1].elbo_se, "phases": len(trace),
            "seed": cfg.seed, "config_hash": cfg.digest()}
    PosteriorFile(dist, meta).save(args.out)
    if args.trace:
        trace.to_csv(args.trace)
    print(f"phases={len(trace)} elbo={trace.final_elbo:.6f} converged={trace.converged}")
    return 0


def cmd_sample(args):
    post = PosteriorFile.load(args.dist)
    from .sampler import draw

    path = draw(post.dist, args.n, args.seed)
    d = post.dist.d
    header = [f"z_{i}" for i in range(d)]
    rows = path.z
    if args.with_uniforms:
        header += [f"v_{i}" for i in range(d)]
        rows = np.hstack([path.z, path.v])
    if args.out:
        write_csv(args.out, header, rows)
    else:
        write_csv(sys.stdout, header, rows)
    return 0


def cmd_select(args):
    _, data = read_csv(args.samples)
    vine = build_vine(pseudo_obs(data), parse_families(args.families), args.truncation)
    save_vine(vine, args.out)
    print(vine)
    return 0


def cmd_elbo(args):
    post = PosteriorFile.load(args.dist)
    est = elbo(post.dist, load_model(args.model), args.m, args.seed)
    print(f"elbo={est.elbo!r} std_err={est.elbo_std_err!r} m={est.n_samples}")
    return 0


def cmd_check_grad(args):
    post = PosteriorFile.load(args.dist)
    model = load_model(args.model)
    dist = post.dist
    rows = []
    z0 = dist.sample(4, args.seed)
    ok, worst = verify_gradient(model, z0, args.tol)
    rows.append(("model", "grad_logp", float("nan"), float("nan"), worst))
    est = grad_reparam(dist, model, args.m, args.seed, total=True)
    analytic = est.grad
    params = np.concatenate([dist.lam, dist.eta])
    k = dist.n_lambda

    def value(p):
        q = dist.with_lambda(p[:k])
        if dist.n_eta:
            q = q.with_eta(p[k:])
        return elbo(q, model, args.m, args.seed).elbo

    for c in range(params.size):
        h = args.step * (1.0 + abs(params[c]))
        e = np.zeros_like(params)
        e[c] = h
        fd = (value(params + e) - value(params - e)) / (2 * h)
        rel = abs(analytic[c] - fd) / max(abs(fd), 1e-2)
        name = f"lambda[{c}]" if c < k else f"eta[{c - k}]"
        rows.append(("reparam", name, analytic[c], fd, rel))
    print(f"{'estimator':<10} {'coordinate':<12} {'analytic':>14} {'finite-diff':>14} {'rel-err':>10}")
    bad = False
    for est_name, coord, a, f, r in rows:
        bad |= r > args.tol
        print(f"{est_name:<10} {coord:<12} {a:>14.6g} {f:>14.6g} {r:>10.2e}")
    return 1 if bad else 0


def cmd_demo_figure1(args):
    cfg = load_config(args.config)
    from dataclasses import replace

    cfg = replace(cfg, outer_max_phases=4, outer_tol_elbo=-math.inf)
    target = GaussianTarget.correlated_2d(args.rho)
    vine = dvine(2, bicop.PairCopula(FamilyTag.GAUSSIAN, Rotation.R0, (0.0,)))
    dist0 = CopulaVariationalDist(MarginalSet.gaussian([1.0, -1.0], [-1.0, -1.0]), vine)
    snapshots = []
    fit(dist0, target, cfg, on_phase=lambda rec, q: snapshots.append(q))
    os.makedirs(args.outdir, exist_ok=True)
    g = np.linspace(-args.extent, args.extent, args.grid)
    Z1, Z2 = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack([Z1.ravel(), Z2.ravel()])
    logp = target.logp_batch(pts)
    cell = (g[1] - g[0]) ** 2
    for k, q in enumerate(snapshots, start=1):
        logq = q.log_q(pts)
        kl = float(np.sum(np.exp(logq) * (logq - logp)) * cell)
        write_csv(os.path.join(args.outdir, f"panel{k}.csv"), ["z1", "z2", "q", "p"],
                  np.column_stack([pts, np.exp(logq), np.exp(logp)]))
        print(f"panel{k} KL={kl:.6f}")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="copula-vi", description="Copula-augmented variational inference.")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a copula-augmented approximation")
    f.add_argument("--model", required=True, help="built-in model name or model JSON file")
    f.add_argument("--vine", default="gaussian-dvine",
                   help="vine JSON file, 'auto', 'gaussian-dvine' or 'mean-field'")
    f.add_argument("--config", help="config JSON (defaults apply for missing fields)")
    f.add_argument("--out", required=True, help="posterior JSON to write")
    f.add_argument("--trace", help="per-phase trace CSV to write")
    f.add_argument("--seed", type=int)
    f.add_argument("--families", default="gaussian", help="candidates for --vine auto")
    f.add_argument("--truncation", type=int)
    f.add_argument("--auto-samples", type=int, default=5000)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("sample", help="draw samples from a fitted posterior")
    s.add_argument("--dist", required=True)
    s.add_argument("-n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--with-uniforms", action="store_true")
    s.set_defaults(func=cmd_sample)

    sel = sub.add_parser("select", help="select a vine from samples")
    sel.add_argument("--samples", required=True, help="CSV with a header row")
    sel.add_argument("--families", default="all16")
    sel.add_argument("--truncation", type=int)
    sel.add_argument("--out", required=True)
    sel.set_defaults(func=cmd_select)

    e = sub.add_parser("elbo", help="Monte Carlo ELBO of a posterior")
    e.add_argument("--dist", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("-m", type=int, default=100_000)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_elbo)

    c = sub.add_parser("check-grad", help="compare gradients with finite differences")
    c.add_argument("--dist", required=True)
    c.add_argument("--model", required=True)
    c.add_argument("-m", type=int, default=4096)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=float, default=2e-3)
    c.add_argument("--step", type=float, default=1e-4)
    c.set_defaults(func=cmd_check_grad)

    dm = sub.add_parser("demo-figure1", help="four-panel alternating fit of a correlated Gaussian")
    dm.add_argument("--outdir", default="figure1")
    dm.add_argument("--rho", type=float, default=0.8)
    dm.add_argument("--config")
    dm.add_argument("--grid", type=int, default=121)
    dm.add_argument("--extent", type=float, default=4.0)
    dm.set_defaults(func=cmd_demo_figure1)
    return p


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError, StructureError, DomainError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, OptimizationError, ModelEvaluationError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
