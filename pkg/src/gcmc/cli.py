"""Experiment driver CLI: `gcmc run`, `gcmc compare`, `gcmc oracle`.

`run` executes one algorithm for R replicates (replicate r uses seed
base_seed + r) and writes per-replicate artifacts plus a summary with Monte
Carlo standard errors and, for the analytic models, the oracle truth.
`compare` scores algorithms against a designated ground-truth run under a
wall-clock budget.  `oracle` prints closed-form Gaussian quantities as JSON.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import (
    LatencyModel,
    cmc_combine,
    iteration_time,
    likelihood_fraction,
    run_subposterior_chains,
    samples_within_budget,
)
from .diagnostics import effective_sample_size
from .errors import ConfigError, GcmcError
from .gibbs import GibbsConfig, estimate, run_chain, run_direct_rwm
from .models import GAUSSIAN_CONJUGATE, LOGNORMAL_CONJUGATE, ModelSpec, build_model
from .oracle import GaussianSetup, gaussian_moment, pi_lambda_params
from .regression import RegressionInput, StoppingState, regression_report
from .smc import ScheduleConfig, run_smc

ALGORITHMS = ("gibbs", "smc", "smc_with_stopping", "cmc", "direct")


# ---------------------------------------------------------------------------
# Test functions and analytic truth
# ---------------------------------------------------------------------------

def make_test_function(spec: str):
    """Map a phi name to a vectorised callable on (N, d) sample arrays."""
    if spec == "identity":
        return lambda z: z
    if spec == "log":
        return lambda z: np.log(z)
    if spec.startswith("power:"):
        try:
            exponent = float(spec.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError("phi", f"bad power spec {spec!r}") from exc
        return lambda z: z**exponent
    raise ConfigError("phi", f"unknown test function {spec!r}")


def oracle_truth(model: ModelSpec, phi_spec: str):
    """pi(phi) for the analytic models, None when unavailable."""
    if model.conjugacy not in (GAUSSIAN_CONJUGATE, LOGNORMAL_CONJUGATE):
        return None
    if model.conjugate_params.s0sq is None:
        return None
    setup = GaussianSetup.from_model(model)
    mean, var = pi_lambda_params(setup, 0.0)  # log-space for the log-normal model
    if model.conjugacy == GAUSSIAN_CONJUGATE:
        if phi_spec == "identity":
            return [mean]
        if phi_spec.startswith("power:"):
            exponent = float(phi_spec.split(":", 1)[1])
            if exponent != int(exponent) or exponent < 0:
                return None
            return [gaussian_moment(mean, var, int(exponent))]
        return None
    # Log-normal: moments of exp(w) with w ~ N(mean, var).
    if phi_spec == "identity":
        return [math.exp(mean + 0.5 * var)]
    if phi_spec == "log":
        return [mean]
    if phi_spec.startswith("power:"):
        exponent = float(phi_spec.split(":", 1)[1])
        return [math.exp(exponent * mean + 0.5 * exponent**2 * var)]
    return None


def smoothed_truth(model: ModelSpec, phi_spec: str, lam: float):
    """Expectation of phi under the smoothed posterior at bandwidth lam."""
    if model.conjugacy not in (GAUSSIAN_CONJUGATE, LOGNORMAL_CONJUGATE):
        return None
    if model.conjugate_params.s0sq is None:
        return None
    setup = GaussianSetup.from_model(model)
    mean, var = pi_lambda_params(setup, lam)
    if model.conjugacy == GAUSSIAN_CONJUGATE:
        return [mean] if phi_spec == "identity" else None
    if phi_spec == "identity":
        return [math.exp(mean + 0.5 * var)]
    if phi_spec == "log":
        return [mean]
    return None


# ---------------------------------------------------------------------------
# JSON/CSV helpers (deterministic output: same config + seed => same bytes)
# ---------------------------------------------------------------------------

def _clean(value):
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def load_config(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError("config", f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON in {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Single replicates
# ---------------------------------------------------------------------------

def _schedule_from_params(params: dict) -> ScheduleConfig:
    if "lambdas" in params:
        return ScheduleConfig.fixed(params["lambdas"], ess_threshold=params.get("ess_threshold", 0.5))
    if "lam0" not in params:
        raise ConfigError("params.lam0", "smc needs lam0 (or an explicit lambdas list)")
    return ScheduleConfig.adaptive(
        lam0=float(params["lam0"]),
        cess_star=float(params.get("cess_star", 0.95)),
        lam_min=float(params.get("lam_min", 1e-8)),
        max_steps=int(params.get("max_steps", 500)),
        ess_threshold=float(params.get("ess_threshold", 0.5)),
    )


def run_replicate(model, algorithm, params, phi_spec, seed, out_dir: Path) -> dict:
    """Run one replicate, write its artifacts, return summary entries."""
    out_dir.mkdir(parents=True, exist_ok=True)
    phi = make_test_function(phi_spec)
    burn_in = int(params.get("burn_in", 0))

    if algorithm in ("gibbs", "direct"):
        if algorithm == "gibbs":
            chain = run_chain(
                model,
                GibbsConfig(
                    lam=float(params["lambda"]),
                    chain_length=int(params["chain_length"]),
                    seed=seed,
                    inner_steps=int(params.get("inner_steps", 10)),
                ),
            )
        else:
            chain = run_direct_rwm(model, int(params["chain_length"]), seed)
        chain.write_csv(out_dir / "chain.csv")
        write_json(out_dir / "chain_summary.json", chain.summary())
        value = estimate(chain, phi, burn_in=burn_in)
        ess_value = float(np.mean(effective_sample_size(phi(chain.z_samples[burn_in:]))))
        return {"estimate": value, "ess": ess_value}

    if algorithm == "cmc":
        sub = run_subposterior_chains(model, int(params["chain_length"]), seed)
        consensus = cmc_combine(sub.chains)
        np.savetxt(
            out_dir / "consensus.csv",
            consensus,
            delimiter=",",
            header=",".join(f"z_{k}" for k in range(consensus.shape[1])),
            comments="",
            fmt="%.17g",
        )
        write_json(
            out_dir / "chain_summary.json",
            {"acceptance": list(sub.acceptance_rates), "seed": seed, "lambda": None},
        )
        values = np.atleast_2d(np.asarray(phi(consensus[burn_in:]), dtype=float).T).T
        return {"estimate": values.mean(axis=0), "ess": None}

    if algorithm in ("smc", "smc_with_stopping"):
        schedule = _schedule_from_params(params)
        stopping = None
        if algorithm == "smc_with_stopping":
            stopping = StoppingState(kappa=int(params.get("kappa", 15)))
        result = run_smc(
            model,
            schedule,
            n_particles=int(params["n_particles"]),
            phi=phi,
            seed=seed,
            inner_steps=int(params.get("inner_steps", 10)),
            stopping=stopping,
        )
        result.trace.write_csv(out_dir / "trace.csv")
        if params.get("dump_particles"):
            result.system.write_csv(out_dir / "particles.csv")
        n_components = result.trace.records[0].eta.shape[0]
        inputs = [
            RegressionInput.from_series(
                result.trace.lambdas, result.trace.etas[:, c], result.trace.variances[:, c], component=c
            )
            for c in range(n_components)
        ]
        report = regression_report(
            inputs, stopped_at=result.stopped_at, chosen_index=result.chosen_index
        )
        write_json(out_dir / "regression_report.json", report)
        entry = {
            "estimate": result.trace.records[-1].eta,
            "ess": None,
            "bias_corrected": np.asarray(report["intercept"]),
            "steps": len(result.trace) - 1,
        }
        if algorithm == "smc_with_stopping":
            entry["stopped_at"] = result.stopped_at
            entry["chosen_index"] = result.chosen_index
            if result.chosen_estimate is not None:
                entry["estimate"] = result.chosen_estimate
            if result.bias_corrected is not None:
                entry["bias_corrected"] = result.bias_corrected
        return entry

    raise ConfigError("algorithm", f"unknown algorithm {algorithm!r} (expected one of {ALGORITHMS})")


# ---------------------------------------------------------------------------
# run subcommand
# ---------------------------------------------------------------------------

def _apply_budget(config: dict, params: dict, algorithm: str) -> dict:
    budget = config.get("budget")
    if not budget:
        return params
    latency = LatencyModel(
        ell=float(budget["latency"]["ell"]),
        comm_latency=float(budget["latency"]["comm_latency"]),
        inner_steps=int(budget["latency"].get("inner_steps", 1)),
    )
    units = float(budget["units"])
    params = dict(params)
    if algorithm == "gibbs":
        params["chain_length"] = samples_within_budget(latency, "gcmc", units)
        params.setdefault("inner_steps", latency.inner_steps)
    elif algorithm == "direct":
        params["chain_length"] = samples_within_budget(latency, "direct", units)
    elif algorithm == "cmc":
        # Subposterior chains communicate only at the start and end, so all
        # budget goes on local likelihood evaluations.
        params["chain_length"] = int(math.floor(units / latency.ell))
    return params


def run_experiment(config: dict, out_dir: Path) -> dict:
    algorithm = config.get("algorithm")
    if algorithm not in ALGORITHMS:
        raise ConfigError("algorithm", f"got {algorithm!r}, expected one of {ALGORITHMS}")
    replicates = int(config.get("replicates", 1))
    if replicates < 1:
        raise ConfigError("replicates", "must be at least 1")
    base_seed = int(config.get("seed", 0))
    phi_spec = config.get("phi", "identity")
    model = build_model(config.get("model", {}))
    params = _apply_budget(config, dict(config.get("params", {})), algorithm)

    resolved = {
        "version": __version__,
        "algorithm": algorithm,
        "phi": phi_spec,
        "replicates": replicates,
        "seed": base_seed,
        "replicate_seeds": [base_seed + r for r in range(replicates)],
        "model": config.get("model", {}),
        "params": params,
        "budget": config.get("budget"),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "config.resolved.json", resolved)

    entries = []
    for r in range(replicates):
        entries.append(
            run_replicate(model, algorithm, params, phi_spec, base_seed + r, out_dir / f"replicate_{r}")
        )

    estimates = np.array([np.atleast_1d(e["estimate"]) for e in entries], dtype=float)
    mean_est = estimates.mean(axis=0)
    if replicates > 1:
        se = estimates.std(axis=0, ddof=1) / math.sqrt(replicates)
    else:
        se = np.full(estimates.shape[1], float("nan"))
    truth = oracle_truth(model, phi_spec)

    summary = {
        "algorithm": algorithm,
        "phi": phi_spec,
        "replicates": replicates,
        "seed": base_seed,
        "estimates": estimates,
        "mean_estimate": mean_est,
        "mc_standard_error": se,
        "oracle_truth": truth,
        "bias": None if truth is None else mean_est - np.asarray(truth),
        "squared_error": None if truth is None else (mean_est - np.asarray(truth)) ** 2,
    }
    if algorithm in ("smc", "smc_with_stopping"):
        summary["bias_corrected"] = [e["bias_corrected"] for e in entries]
        summary["steps"] = [e["steps"] for e in entries]
    if algorithm == "smc_with_stopping":
        summary["stopped_at"] = [e["stopped_at"] for e in entries]
        summary["chosen_index"] = [e["chosen_index"] for e in entries]
    write_json(out_dir / "summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# compare subcommand
# ---------------------------------------------------------------------------

def _ground_truth(config: dict, model: ModelSpec, phi, out_dir: Path) -> np.ndarray:
    ref = config.get("ground_truth")
    if not ref:
        raise ConfigError("ground_truth", "compare needs a ground-truth reference (path or chain_length)")
    if "path" in ref:
        table = np.loadtxt(ref["path"], delimiter=",", skiprows=1, ndmin=2)
        samples = table[:, 1:]  # drop the sweep column
    else:
        # The designated truth is a long chain targeting the posterior directly.
        out = run_direct_rwm(model, int(ref["chain_length"]), int(ref.get("seed", 987654321)))
        out.write_csv(out_dir / "ground_truth.csv")
        samples = out.z_samples
    values = np.atleast_2d(np.asarray(phi(samples), dtype=float).T).T
    return values.mean(axis=0)


def run_comparison(config: dict, out_dir: Path) -> dict:
    budget = config.get("budget")
    if not budget or "latency" not in budget:
        raise ConfigError("budget", "compare needs a budget with a latency model")
    latency = LatencyModel(
        ell=float(budget["latency"]["ell"]),
        comm_latency=float(budget["latency"]["comm_latency"]),
        inner_steps=int(budget["latency"].get("inner_steps", 1)),
    )
    units = float(budget["units"])
    replicates = int(config.get("replicates", 1))
    base_seed = int(config.get("seed", 0))
    phi_spec = config.get("phi", "identity")
    phi = make_test_function(phi_spec)
    model = build_model(config.get("model", {}))
    out_dir.mkdir(parents=True, exist_ok=True)

    truth = _ground_truth(config, model, phi, out_dir)

    rows_out = []
    for row in config.get("rows", []):
        algorithm = row.get("algorithm")
        if algorithm in ("gcmc", "gibbs"):
            tag, algo_key = "gcmc", "gibbs"
            samples = samples_within_budget(latency, "gcmc", units)
            params = {
                "lambda": float(row["lambda"]),
                "chain_length": samples,
                "inner_steps": latency.inner_steps,
            }
        elif algorithm == "direct":
            tag, algo_key = "direct", "direct"
            samples = samples_within_budget(latency, "direct", units)
            params = {"chain_length": samples}
        elif algorithm == "cmc":
            tag, algo_key = "cmc", "cmc"
            samples = int(math.floor(units / latency.ell))
            params = {"chain_length": samples}
        else:
            raise ConfigError("rows.algorithm", f"unknown comparison algorithm {algorithm!r}")

        sq_errors = []
        ess_values = []
        for r in range(replicates):
            entry = run_replicate(
                model, algo_key, params, phi_spec, base_seed + r,
                out_dir / f"{tag}{'' if 'lambda' not in row else '_lam' + str(row['lambda'])}" / f"replicate_{r}",
            )
            err = np.atleast_1d(entry["estimate"]) - truth
            sq_errors.append(float(np.sum(err**2)))
            if entry.get("ess") is not None:
                ess_values.append(entry["ess"])
        rows_out.append(
            {
                "algorithm": tag,
                "lambda": row.get("lambda"),
                "samples": samples,
                "iteration_time": None if tag == "cmc" else iteration_time(latency, tag),
                "likelihood_fraction": None if tag == "cmc" else likelihood_fraction(latency, tag),
                "mean_sum_squared_errors": float(np.mean(sq_errors)),
                "ess": float(np.mean(ess_values)) if ess_values else None,
            }
        )

    report = {
        "phi": phi_spec,
        "replicates": replicates,
        "seed": base_seed,
        "budget_units": units,
        "truth": truth,
        "rows": rows_out,
    }
    write_json(out_dir / "comparison.json", report)
    with open(out_dir / "comparison.csv", "w") as fh:
        fh.write("algorithm,lambda,samples,mean_sum_squared_errors,ess\n")
        for row in rows_out:
            fh.write(
                f"{row['algorithm']},{row['lambda'] if row['lambda'] is not None else ''},"
                f"{row['samples']},{row['mean_sum_squared_errors']:.10g},"
                f"{row['ess'] if row['ess'] is not None else ''}\n"
            )
    return report


# ---------------------------------------------------------------------------
# oracle subcommand
# ---------------------------------------------------------------------------

def _setup_from_args(args) -> GaussianSetup:
    if args.n is not None:
        return GaussianSetup.from_observations(
            n=args.n, blocks=args.blocks, sigma2=args.sigma2, ybar=args.ybar,
            mu0=args.mu0, s0sq=args.s0sq, z_star=args.z_star,
        )
    if args.mu is None:
        raise ConfigError("mu", "give either the n-observation form (--n ...) or block means (--mu ...)")
    mu = [float(v) for v in args.mu.split(",")]
    s2 = [float(v) for v in args.s2.split(",")] if args.s2 else [1.0] * len(mu)
    c = [float(v) for v in args.c.split(",")] if args.c else 1.0
    return GaussianSetup.from_blocks(mu0=args.mu0, s0sq=args.s0sq, mu=mu, s2=s2, c=c)


def cmd_oracle(args) -> dict:
    from . import oracle

    setup = _setup_from_args(args)
    if args.oracle_op == "posterior":
        mean, var = oracle.pi_lambda_params(setup, args.lam)
        return {"lambda": args.lam, "mean": mean, "variance": var}
    if args.oracle_op == "ar1":
        alpha, intercept, innovation = oracle.ar1_params(setup, args.lam)
        return {
            "lambda": args.lam, "alpha": alpha, "intercept": intercept,
            "innovation_variance": innovation,
        }
    if args.oracle_op == "bias":
        return {"lambda": args.lam, "bias": oracle.estimator_bias(setup, args.lam)}
    if args.oracle_op == "variance":
        return {"lambda": args.lam, "asymptotic_variance": oracle.asymptotic_variance(setup, args.lam)}
    if args.oracle_op == "optimal-lambda":
        return {
            "chain_length": args.chain_length,
            "optimal_lambda": oracle.optimal_lambda(setup, args.chain_length),
        }
    if args.oracle_op == "consistency":
        return oracle.consistency_limits(setup, gamma=args.gamma, c=args.rate_constant)
    raise ConfigError("oracle", f"unknown oracle operation {args.oracle_op!r}")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcmc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--replicates", type=int, default=None)

    p_cmp = sub.add_parser("compare", help="budgeted algorithm comparison")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--out", required=True)
    p_cmp.add_argument("--seed", type=int, default=None)
    p_cmp.add_argument("--replicates", type=int, default=None)

    p_oracle = sub.add_parser("oracle", help="closed-form Gaussian quantities as JSON")
    p_oracle.add_argument(
        "oracle_op",
        choices=["posterior", "ar1", "bias", "variance", "optimal-lambda", "consistency"],
    )
    p_oracle.add_argument("--lam", type=float, default=1.0)
    p_oracle.add_argument("--mu0", type=float, default=0.0)
    p_oracle.add_argument("--s0sq", type=float, default=1.0)
    p_oracle.add_argument("--mu", type=str, default=None, help="comma-separated block means")
    p_oracle.add_argument("--s2", type=str, default=None, help="comma-separated block variances")
    p_oracle.add_argument("--c", type=str, default=None, help="comma-separated kernel scales")
    p_oracle.add_argument("--n", type=int, default=None)
    p_oracle.add_argument("--blocks", type=int, default=1)
    p_oracle.add_argument("--sigma2", type=float, default=1.0)
    p_oracle.add_argument("--ybar", type=float, default=0.0)
    p_oracle.add_argument("--z-star", type=float, default=None)
    p_oracle.add_argument("--chain-length", type=int, default=1000)
    p_oracle.add_argument("--gamma", type=float, default=1.0)
    p_oracle.add_argument("--rate-constant", type=float, default=1.0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config)
            if args.seed is not None:
                config["seed"] = args.seed
            if args.replicates is not None:
                config["replicates"] = args.replicates
            run_experiment(config, Path(args.out))
        elif args.command == "compare":
            config = load_config(args.config)
            if args.seed is not None:
                config["seed"] = args.seed
            if args.replicates is not None:
                config["replicates"] = args.replicates
            run_comparison(config, Path(args.out))
        elif args.command == "oracle":
            print(json.dumps(_clean(cmd_oracle(args)), sort_keys=True))
    except GcmcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
