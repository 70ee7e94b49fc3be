"""Command-line harness.

Subcommands
-----------
converge   run the iterative fitting loop on a JSON experiment config and
           write the per-iteration trace as CSV
bounds     evaluate a contraction-rate formula from flags and print one CSV line
particle   run the particle-level marginal checks and write them as CSV

Exit codes: 0 success, 2 config or flag error, 3 numerical failure,
4 statistical check failure.  Set IMF_BRIDGE_LOG=debug|info|warning for
diagnostics on stderr.  All CSV output uses a header row, comma separators,
LF line endings, and 17 significant digits.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import gaussian, particle, projection, rates, reference
from .errors import ImfBridgeError

log = logging.getLogger("imf_bridge")


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _require(cfg: dict, key: str, where: str = "config"):
    if key not in cfg:
        raise ConfigError(f"{where} is missing required key '{key}'")
    return cfg[key]


def _parse_gaussian(spec: dict, name: str) -> gaussian.GaussianDist:
    try:
        return gaussian.GaussianDist(mean=np.asarray(spec["mean"], dtype=float),
                                     cov=np.asarray(spec["cov"], dtype=float))
    except KeyError as exc:
        raise ConfigError(f"marginal '{name}' needs 'mean' and 'cov'") from exc
    except ImfBridgeError as exc:
        raise ConfigError(f"marginal '{name}': {exc}") from exc


def _parse_marginal(spec: dict, name: str):
    """Gaussian {mean, cov} or mixture {mixture: {weights, components}}."""
    if "mixture" in spec:
        mix = spec["mixture"]
        comps = [_parse_gaussian(c, f"{name}.component[{i}]") for i, c in enumerate(mix.get("components", []))]
        weights = np.asarray(mix.get("weights", []), dtype=float)
        if len(comps) == 0 or weights.shape[0] != len(comps):
            raise ConfigError(f"marginal '{name}': mixture needs matching weights and components")
        return weights, comps
    return _parse_gaussian(spec, name)


def _parse_reference(spec: dict, d: int) -> reference.ReferenceProcess:
    kind = _require(spec, "kind", "reference")
    try:
        return reference.make_reference(kind, A=spec.get("A"), d=spec.get("d", d))
    except (ImfBridgeError, ValueError) as exc:
        raise ConfigError(f"reference: {exc}") from exc


def _marginal_dim(marg) -> int:
    if isinstance(marg, gaussian.GaussianDist):
        return marg.dim
    return marg[1][0].dim


def _parse_ode(spec: dict | None) -> projection.OdeOptions:
    spec = spec or {}
    return projection.OdeOptions(
        steps=int(spec.get("steps", 2048)),
        eps=spec.get("eps"),
        marginal_tol=float(spec.get("marginal_tol", 1e-6)),
    )


def _load_config(path: str) -> dict:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _write_csv(path: str, header: str, rows: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")


def cmd_converge(args) -> int:
    cfg = _load_config(args.config)
    marginals = _require(cfg, "marginals")
    mu = _parse_marginal(_require(marginals, "mu", "marginals"), "mu")
    nu = _parse_marginal(_require(marginals, "nu", "marginals"), "nu")
    if not isinstance(mu, gaussian.GaussianDist) or not isinstance(nu, gaussian.GaussianDist):
        raise ConfigError("converge requires plain Gaussian marginals (mixtures are particle-only)")
    ref = _parse_reference(_require(cfg, "reference"), mu.dim)
    T = float(_require(cfg, "T"))
    iterations = int(_require(cfg, "iterations"))
    if T <= 0.0 or iterations < 1:
        raise ConfigError("need T > 0 and iterations >= 1")
    algorithm = str(cfg.get("algorithm", "imf")).lower()
    if algorithm not in ("imf", "dsbm"):
        raise ConfigError(f"unknown algorithm '{algorithm}' (expected imf or dsbm)")
    opts = _parse_ode(cfg.get("ode"))
    output = args.output or cfg.get("output")
    if not output:
        raise ConfigError("no output path (set 'output' in the config or pass --output)")

    pi0 = gaussian.GaussianCoupling.product(mu, nu)
    runner = projection.imf_run if algorithm == "imf" else projection.dsbm_run
    trace = runner(pi0, mu, nu, ref, T, iterations, opts)
    bound_ok = trace.rate_bound.valid
    rows = []
    for rec in trace.iterations:
        rows.append(
            ",".join(
                [
                    str(rec.n),
                    _fmt(rec.kl_to_star),
                    _fmt(rec.ratio) if rec.ratio is not None else "",
                    _fmt(rec.bound) if bound_ok else "",
                    _fmt(rec.marginal_error),
                ]
            )
        )
    _write_csv(output, "n,kl_to_star,ratio,bound,marginal_error", rows)
    rb = trace.rate_bound
    print(
        f"rate={_fmt(rb.rate)} valid={str(rb.valid).lower()} "
        f"threshold_T={_fmt(rb.threshold_T)} theorem={rb.theorem}"
    )
    return 0


def cmd_bounds(args) -> int:
    beta_mu = math.inf if args.beta_mu is None else args.beta_mu
    beta_nu = math.inf if args.beta_nu is None else args.beta_nu
    try:
        if args.theorem in ("t1", "t5"):
            rb = rates.strong_rate(args.alpha_mu, args.alpha_nu, beta_mu, beta_nu,
                                   args.alpha, args.l_u, args.t)
        else:
            rb = rates.weak_rate(args.alpha_mu, args.alpha_nu, beta_mu, beta_nu, args.alpha,
                                 args.l_mu, args.l_nu, args.l, args.l_u, args.t)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(
        ",".join(
            [
                args.theorem,
                _fmt(rb.rate),
                str(rb.valid).lower(),
                _fmt(rb.threshold_T),
                _fmt(rb.alpha_phi),
                _fmt(rb.alpha_psi),
            ]
        )
    )
    return 0


def _quantity_rows(t, base, analytic_mean, analytic_var, states):
    """CSV rows comparing empirical moments of `states` against analytics."""
    n, d = states.shape
    rows = []
    all_pass = True
    emp_mean = states.mean(axis=0)
    emp_var = states.var(axis=0, ddof=1)
    for i in range(d):
        suffix = "" if d == 1 else f"_{i}"
        se_mean = float(np.sqrt(emp_var[i] / n))
        ok = abs(analytic_mean[i] - emp_mean[i]) <= 4.0 * se_mean
        all_pass &= ok
        rows.append(
            f"{_fmt(t)},{base}_mean{suffix},{_fmt(analytic_mean[i])},{_fmt(emp_mean[i])},{_fmt(se_mean)},{str(ok).lower()}"
        )
    for i in range(d):
        suffix = "" if d == 1 else f"_{i}"
        se_var = particle.sample_variance_se(states[:, i])
        ok = abs(analytic_var[i] - emp_var[i]) <= 4.0 * se_var
        all_pass &= ok
        rows.append(
            f"{_fmt(t)},{base}_var{suffix},{_fmt(analytic_var[i])},{_fmt(emp_var[i])},{_fmt(se_var)},{str(ok).lower()}"
        )
    return rows, all_pass


def cmd_particle(args) -> int:
    cfg = _load_config(args.config)
    marginals = _require(cfg, "marginals")
    mu = _parse_marginal(_require(marginals, "mu", "marginals"), "mu")
    nu = _parse_marginal(_require(marginals, "nu", "marginals"), "nu")
    ref = _parse_reference(_require(cfg, "reference"), _marginal_dim(mu))
    T = float(_require(cfg, "T"))
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        raise ConfigError("particle checks need a seed (config 'seed' or --seed)")
    seed = int(seed)
    n_particles = int(cfg.get("N", 100000))
    em_steps = int(cfg.get("em_steps", 2048))
    output = args.output or cfg.get("output")
    if not output:
        raise ConfigError("no output path (set 'output' in the config or pass --output)")

    gaussian_case = isinstance(mu, gaussian.GaussianDist) and isinstance(nu, gaussian.GaussianDist)
    if gaussian_case:
        pi = gaussian.GaussianCoupling.product(mu, nu)
        endpoint_sampler = particle.coupling_sampler(pi)
        drift = particle.drift_field(pi, ref, T)
        init_sampler = particle.dist_sampler(mu)

        def moments_at(t):
            marg = projection.time_marginal(pi, ref, T, t)
            return marg.mean, np.diag(marg.cov)
    else:
        mu_w, mu_c = mu if isinstance(mu, tuple) else (np.array([1.0]), [mu])
        nu_w, nu_c = nu if isinstance(nu, tuple) else (np.array([1.0]), [nu])
        weights, comps = [], []
        for wi, ci in zip(mu_w, mu_c):
            for wj, cj in zip(nu_w, nu_c):
                weights.append(float(wi * wj))
                comps.append(gaussian.GaussianCoupling.product(ci, cj))
        pi = particle.MixtureCoupling(weights=np.asarray(weights), components=tuple(comps))
        endpoint_sampler = particle.mixture_coupling_sampler(pi)
        drift = particle.mixture_drift_field(pi, ref, T)
        init_sampler = particle.mixture_marginal_sampler(mu_w, mu_c)

        def moments_at(t):
            mean, cov = particle.mixture_time_moments(pi, ref, T, t)
            return mean, np.diag(cov)

    times = [T / 4.0, T / 2.0, 3.0 * T / 4.0, T]
    forward = particle.simulate_sde(drift, init_sampler, T, em_steps, n_particles, seed,
                                    snapshot_times=times)
    interior = times[:-1]
    bridges = particle.sample_interpolant_path(endpoint_sampler, ref, T, interior, n_particles, seed)
    endpoints = endpoint_sampler(n_particles, seed)
    d = endpoints.shape[1] // 2
    terminal = particle.ParticleEnsemble(states=endpoints[:, d:], t=T, seed=seed)
    bridge_by_time = {e.t: e for e in bridges}
    bridge_by_time[T] = terminal
    forward_by_time = {e.t: e for e in forward}

    rows, all_pass = [], True
    for t in times:
        mean, var = moments_at(t)
        r1, ok1 = _quantity_rows(t, "forward", mean, var, forward_by_time[t].states)
        r2, ok2 = _quantity_rows(t, "bridge", mean, var, bridge_by_time[t].states)
        rows.extend(r1 + r2)
        all_pass &= ok1 and ok2
    _write_csv(output, "t,quantity,analytic,empirical,se,pass", rows)
    print(f"checks={'pass' if all_pass else 'fail'} rows={len(rows)}")
    return 0 if all_pass else 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imf-bridge",
                                     description="bridge-fitting convergence studies and rate bounds")
    sub = parser.add_subparsers(dest="command", required=True)

    conv = sub.add_parser("converge", help="run the iterative fitting loop from a JSON config")
    conv.add_argument("--config", required=True)
    conv.add_argument("--output", default=None)
    conv.add_argument("--seed", type=int, default=None)
    conv.set_defaults(func=cmd_converge)

    bounds = sub.add_parser("bounds", help="evaluate a contraction-rate formula")
    bounds.add_argument("--theorem", required=True, choices=["t1", "t2", "t5", "t6"])
    bounds.add_argument("--alpha-mu", dest="alpha_mu", type=float, required=True)
    bounds.add_argument("--alpha-nu", dest="alpha_nu", type=float, required=True)
    bounds.add_argument("--beta-mu", dest="beta_mu", type=float, default=None)
    bounds.add_argument("--beta-nu", dest="beta_nu", type=float, default=None)
    bounds.add_argument("--alpha", type=float, required=True)
    bounds.add_argument("--l-mu", dest="l_mu", type=float, default=0.0)
    bounds.add_argument("--l-nu", dest="l_nu", type=float, default=0.0)
    bounds.add_argument("--l", dest="l", type=float, default=0.0)
    bounds.add_argument("--l-u", dest="l_u", type=float, required=True)
    bounds.add_argument("--t", dest="t", type=float, required=True)
    bounds.set_defaults(func=cmd_bounds)

    part = sub.add_parser("particle", help="particle-level marginal checks")
    part.add_argument("--config", required=True)
    part.add_argument("--output", default=None)
    part.add_argument("--seed", type=int, default=None)
    part.set_defaults(func=cmd_particle)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("IMF_BRIDGE_LOG", "warning").lower()
    logging.basicConfig(
        stream=sys.stderr,
        level={"debug": logging.DEBUG, "info": logging.INFO}.get(level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ImfBridgeError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
