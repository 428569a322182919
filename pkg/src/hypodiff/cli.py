"""Command-line interface.

Every subcommand accepts ``--config FILE`` (JSON); flags given on the
command line override values from the file. Exit codes: 0 success,
2 study failure, 3 invalid configuration or input.
"""
import argparse
import json
import math
import os
import sys
import warnings

import numpy as np

from .errors import HypoDiffError, InvalidArgumentError
from .estimators import ContrastOptions, estimate_complete, euler_contrast_baseline
from .experiments import DEFAULT_X0, ConfigError, ExperimentConfig, manifest, run_replication_study, write_study
from .init import auto_init
from .models import get_model
from .moments import loglog_slope, order_check, write_order_csv
from .saem import SaemSchedule, saem_run
from .simulate import Trajectory, simulate_euler_fine, simulate_exact_ho, subsample
from .smc import point_u0_sampler, smc_filter

EXIT_OK, EXIT_STUDY_FAILURE, EXIT_INVALID = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _kv(text):
    """Parse ``"a=1,b=2"`` into a float dict."""
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise ConfigError(f"expected name=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError as err:
            raise ConfigError(f"not a number: {v!r}") from err
    return out


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as err:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from err


def _names(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _merged(args, keys):
    """Config file values overridden by flags that were given."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read configuration {args.config}: {err}") from err
        if not isinstance(cfg, dict):
            raise ConfigError("configuration file must hold a JSON object")
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"missing required settings: {', '.join(missing)}")


def _model_and_params(cfg):
    model = get_model(cfg["model"], **cfg.get("constants", {}))
    params = cfg.get("params")
    if isinstance(params, str):
        params = _kv(params)
    return model, (model.make_params(**params) if params is not None else None)


def _write_manifest(path, cfg, seed=None):
    m = manifest(None, {"seed": seed, "config": cfg})
    with open(path + ".manifest.json", "w") as fh:
        json.dump(m, fh, indent=2, default=str)


def _load_data(path, delta=None):
    traj = Trajectory.from_csv(path)
    if delta is not None:
        traj.dt = float(delta)
    return traj


def _init_params(model, cfg, v, delta):
    init = cfg.get("init", "auto")
    if init == "auto":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return auto_init(model, v, delta, eps0=cfg.get("eps0", 0.12)).params0
    if isinstance(init, dict):
        return model.make_params(**init)
    try:
        with open(init) as fh:
            return model.make_params(**json.load(fh))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read initial values {init}: {err}") from err


# -- subcommands -------------------------------------------------------------------


def cmd_simulate(args):
    cfg = _merged(args, ["model", "params", "n", "delta", "protocol", "delta_fine", "subsample", "x0", "seed", "out"])
    _require(cfg, "model", "params", "n", "delta", "out")
    model, params = _model_and_params(cfg)
    x0 = cfg.get("x0") or DEFAULT_X0[model.name]
    x0 = _floats(x0) if isinstance(x0, str) else x0
    protocol = cfg.get("protocol") or ("exact" if model.name == "ho" else "fine-euler")
    seed = cfg.get("seed", 0)
    if protocol == "exact":
        if model.name != "ho":
            raise ConfigError("exact sampling is only available for the oscillator")
        traj = simulate_exact_ho(params, x0, cfg["delta"], int(cfg["n"]), seed=seed)
    elif protocol == "fine-euler":
        factor = int(cfg.get("subsample", 10))
        dfine = cfg.get("delta_fine") or cfg["delta"] / factor
        fine = simulate_euler_fine(model, params, x0, dfine, int(cfg["n"]) * factor, seed=seed)
        traj = subsample(fine, factor)
    else:
        raise ConfigError(f"unknown protocol {protocol}")
    traj.to_csv(cfg["out"])
    _write_manifest(cfg["out"], cfg, seed)
    print(f"wrote {traj.n + 1} states to {cfg['out']}")
    return EXIT_OK


def cmd_estimate_complete(args):
    cfg = _merged(args, ["model", "data", "delta", "init", "fixed", "estimator", "out", "seed"])
    _require(cfg, "model", "data")
    model = get_model(cfg["model"], **cfg.get("constants", {}))
    traj = _load_data(cfg["data"], cfg.get("delta"))
    if traj.p != model.p:
        raise ConfigError(f"data has {traj.p} hidden columns, model {model.name} needs {model.p}")
    fixed = cfg.get("fixed") or ()
    fixed = _names(fixed) if isinstance(fixed, str) else tuple(fixed)
    start = _init_params(model, cfg, traj.v, traj.dt)
    opts = ContrastOptions(init=start, fixed=fixed, seed=int(cfg.get("seed", 0)))
    if cfg.get("estimator", "new") == "euler":
        res = euler_contrast_baseline(traj, model, opts)
    else:
        res = estimate_complete(traj, model, opts)
    text = res.to_json(cfg.get("out"))
    print(text)
    if cfg.get("out"):
        _write_manifest(cfg["out"], cfg, cfg.get("seed", 0))
    return EXIT_OK


def cmd_filter(args):
    cfg = _merged(args, ["model", "params", "data", "delta", "particles", "proposal", "seed", "out", "u0"])
    _require(cfg, "model", "params", "data", "out")
    model, params = _model_and_params(cfg)
    traj = _load_data(cfg["data"], cfg.get("delta"))
    sampler = None
    if cfg.get("u0") is not None:
        u0 = cfg["u0"]
        sampler = point_u0_sampler(_floats(u0) if isinstance(u0, str) else u0)
    seed = cfg.get("seed", 0)
    ps = smc_filter(model, params, traj.v, u0_sampler=sampler, K=int(cfg.get("particles", 100)),
                    proposal_kind=cfg.get("proposal", "conditional"), delta=traj.dt, seed=seed)
    ps.to_csv(cfg["out"], t0=traj.t0)
    _write_manifest(cfg["out"], cfg, seed)
    print(f"log-likelihood {ps.log_likelihood:.6f}; mean ESS {ps.ess().mean():.1f}")
    return EXIT_OK


def cmd_saem(args):
    cfg = _merged(args, ["model", "data", "delta", "init", "fixed", "iters", "burn_in", "exponent", "particles",
                         "growing_particles", "proposal", "mstep", "seed", "out", "trace", "u0", "eps0"])
    _require(cfg, "model", "data")
    model = get_model(cfg["model"], **cfg.get("constants", {}))
    traj = _load_data(cfg["data"], cfg.get("delta"))
    fixed = cfg.get("fixed") or ()
    fixed = _names(fixed) if isinstance(fixed, str) else tuple(fixed)
    start = _init_params(model, cfg, traj.v, traj.dt)
    schedule = SaemSchedule(total_iters=int(cfg.get("iters", 80)), burn_in=int(cfg.get("burn_in", 30)),
                            exponent=float(cfg.get("exponent", 0.9)), particles=int(cfg.get("particles", 100)),
                            growing_particles=bool(cfg.get("growing_particles", False)))
    sampler = None
    if cfg.get("u0") is not None:
        u0 = cfg["u0"]
        sampler = point_u0_sampler(_floats(u0) if isinstance(u0, str) else u0)
    seed = int(cfg.get("seed", 0))
    trace = saem_run(model, traj.v, start, schedule=schedule, seed=seed, delta=traj.dt,
                     proposal_kind=cfg.get("proposal", "conditional"), u0_sampler=sampler, fixed=fixed,
                     mstep=cfg.get("mstep", "joint"))
    print(trace.result.to_json(cfg.get("out")))
    if cfg.get("trace"):
        trace.write_csv(cfg["trace"], model)
    if cfg.get("out"):
        _write_manifest(cfg["out"], cfg, seed)
    return EXIT_OK


def cmd_replicate(args):
    cfg = _merged(args, [])
    overrides = {"replications": args.replications, "seed_base": args.seed_base, "workers": args.workers}
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if args.growing_particles:
        saem = dict(cfg.get("options", {}).get("saem", {}))
        saem["growing_particles"] = True
        cfg.setdefault("options", {})["saem"] = saem
    config = ExperimentConfig.from_dict(cfg)
    study = run_replication_study(config)
    out = args.out or "study"
    write_study(study, out)
    for row in study.summary_rows():
        print(f"{row['estimator']:<24s} {row['parameter']:<8s} mean {row['mean']:.4g}  sd {row['sd']:.3g}  "
              f"ok {row['n_ok']}  failed {row['n_failed']}")
    if study.failed:
        print(f"study failed: {study.failure_fraction():.0%} of replications failed", file=sys.stderr)
        return EXIT_STUDY_FAILURE
    return EXIT_OK


def cmd_order_check(args):
    cfg = _merged(args, ["params", "deltas", "x", "out"])
    params_text = cfg.get("params") or "D=4,gamma=0.5,sigma=0.5"
    model = get_model("ho")
    params = model.make_params(**(_kv(params_text) if isinstance(params_text, str) else params_text))
    deltas = cfg.get("deltas") or "0.04,0.02,0.01,0.005"
    deltas = _floats(deltas) if isinstance(deltas, str) else list(deltas)
    x = cfg.get("x") or "0.3,-0.4"
    x = _floats(x) if isinstance(x, str) else x
    rows = order_check(model, params, x, deltas)
    if cfg.get("out"):
        write_order_csv(rows, cfg["out"])
        _write_manifest(cfg["out"], cfg)
    first = [r for r in rows if r["coord"] == 0]
    pos = [r for r in first if r["delta"] > 0]
    mean_slope = loglog_slope([r["delta"] for r in pos], [r["mean_err"] for r in pos])
    var_slope = loglog_slope([r["delta"] for r in pos], [r["var_err"] for r in pos])
    for r in rows:
        print(f"delta {r['delta']:<8g} coord {r['coord']}  mean_err {r['mean_err']:.3e}  var_err {r['var_err']:.3e}")
    print(f"first-coordinate slopes: mean {mean_slope:.3f}, variance {var_slope:.3f}")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="hypodiff", description="Simulation and estimation for hypoelliptic diffusions.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp):
        sp.add_argument("--config", help="JSON file with settings; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")

    s = sub.add_parser("simulate", help="simulate a trajectory to CSV")
    common(s)
    s.add_argument("--model", choices=["ho", "fhn", "sie"])
    s.add_argument("--params", help="name=value,...")
    s.add_argument("--n", type=int)
    s.add_argument("--delta", type=float)
    s.add_argument("--protocol", choices=["exact", "fine-euler"])
    s.add_argument("--delta-fine", dest="delta_fine", type=float)
    s.add_argument("--subsample", type=int)
    s.add_argument("--x0", help="comma-separated initial state, V first")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("estimate-complete", help="contrast estimation from a complete path")
    common(s)
    s.add_argument("--model", choices=["ho", "fhn", "sie"])
    s.add_argument("--data")
    s.add_argument("--delta", type=float)
    s.add_argument("--init", help="'auto' or a JSON file of starting values")
    s.add_argument("--fixed", help="comma-separated parameter names held at their initial value")
    s.add_argument("--estimator", choices=["new", "euler"])
    s.set_defaults(func=cmd_estimate_complete)

    s = sub.add_parser("filter", help="particle filter for the hidden coordinates")
    common(s)
    s.add_argument("--model", choices=["ho", "fhn", "sie"])
    s.add_argument("--params")
    s.add_argument("--data")
    s.add_argument("--delta", type=float)
    s.add_argument("--particles", type=int)
    s.add_argument("--proposal", choices=["conditional", "transition"])
    s.add_argument("--u0", help="known initial hidden state")
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("saem", help="SAEM estimation from the observed coordinate")
    common(s)
    s.add_argument("--model", choices=["ho", "fhn", "sie"])
    s.add_argument("--data")
    s.add_argument("--delta", type=float)
    s.add_argument("--init", help="'auto' or a JSON file of starting values")
    s.add_argument("--fixed")
    s.add_argument("--iters", type=int)
    s.add_argument("--burn-in", dest="burn_in", type=int)
    s.add_argument("--exponent", type=float)
    s.add_argument("--particles", type=int)
    s.add_argument("--growing-particles", dest="growing_particles", action="store_const", const=True)
    s.add_argument("--proposal", choices=["conditional", "transition"])
    s.add_argument("--mstep", choices=["joint", "split"])
    s.add_argument("--u0", help="known initial hidden state")
    s.add_argument("--eps0", type=float)
    s.add_argument("--trace", help="CSV file for the iteration trace")
    s.set_defaults(func=cmd_saem)

    s = sub.add_parser("replicate", help="run a replication study from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--replications", type=int)
    s.add_argument("--seed-base", dest="seed_base", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--growing-particles", dest="growing_particles", action="store_true")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_replicate)

    s = sub.add_parser("order-check", help="scheme moment errors against the exact oscillator")
    common(s)
    s.add_argument("--params")
    s.add_argument("--deltas")
    s.add_argument("--x", help="state at which moments are compared")
    s.set_defaults(func=cmd_order_check)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ConfigError, InvalidArgumentError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except HypoDiffError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
