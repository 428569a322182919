"""Replication studies: simulate many datasets, run estimators, summarize.

Replication ``r`` draws its data from the stream ``make_rng(seed_base, r, 0)``
and estimator ``j`` uses ``make_rng(seed_base, r, j + 1)``, so a study gives
the same numbers whatever the number of worker processes.
"""
import csv
import hashlib
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, kernels
from .errors import HypoDiffError, InvalidArgumentError, NotApplicableError
from .estimators import ContrastOptions, EstimationResult, estimate_complete, euler_contrast_baseline
from .init import SIGMA_CORRECTION, auto_init
from .models import ParamSet, get_model
from .rng import make_rng
from .saem import SaemSchedule, saem_run
from .simulate import simulate_euler_fine, simulate_exact_ho, subsample
from .smc import point_u0_sampler


class ConfigError(InvalidArgumentError):
    """An experiment configuration is inconsistent."""


ESTIMATORS = ("new_contrast_complete", "euler_contrast", "saem", "new_contrast_partial",
              "euler_contrast_partial")
PROTOCOLS = ("exact", "fine-euler")

DEFAULT_X0 = {"ho": (0.0, 0.0), "fhn": (0.0, 0.0), "sie": (-60.0, 10.0, 1.0)}

# SAEM schedules of the simulation studies: (iterations, burn-in).
DEFAULT_SCHEDULE = {"ho": (80, 30), "fhn": (350, 250), "sie": (80, 30)}


@dataclass
class ExperimentConfig:
    """Design of a replication study.

    ``options`` may hold ``fixed`` (names held at their true value),
    ``init`` (``"auto"``, ``"true"`` or a parameter dict), ``eps0``,
    ``u0_known`` (start the filter at the true initial hidden state),
    ``saem`` (a dict of :class:`SaemSchedule` fields plus ``mstep`` and
    ``proposal``) and ``contrast`` (a dict of :class:`ContrastOptions` fields).
    """

    model: str
    true_params: dict
    protocol: str = "exact"
    n: int = 1000
    delta: float = 0.02
    delta_fine: float = 0.002
    subsample: int = 10
    replications: int = 20
    estimators: tuple = ("new_contrast_complete",)
    options: dict = field(default_factory=dict)
    seed_base: int = 0
    x0: tuple = None
    constants: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        self.estimators = tuple(self.estimators)
        if self.x0 is None:
            self.x0 = DEFAULT_X0.get(self.model)
        self.x0 = tuple(float(x) for x in self.x0) if self.x0 is not None else None
        self.validate()

    def validate(self):
        try:
            model = self.build_model()
            model.make_params(**self.true_params)
        except (InvalidArgumentError, TypeError) as err:
            raise ConfigError(str(err)) from err
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.n < 2 or not self.delta > 0:
            raise ConfigError("n must be >= 2 and delta positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}")
        if self.protocol == "exact" and self.model != "ho":
            raise ConfigError("exact sampling is only available for the oscillator")
        if self.protocol == "fine-euler":
            if self.subsample < 1 or not self.delta_fine > 0:
                raise ConfigError("fine-euler needs delta_fine > 0 and subsample >= 1")
            if not math.isclose(self.delta_fine * self.subsample, self.delta, rel_tol=1e-9):
                raise ConfigError("delta must equal delta_fine * subsample")
        if self.x0 is None or len(self.x0) != model.p + 1:
            raise ConfigError(f"x0 must have {model.p + 1} entries")
        if not self.estimators:
            raise ConfigError("at least one estimator is required")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ConfigError(f"unknown estimators {sorted(unknown)}")
        fixed = set(self.options.get("fixed", ()))
        if fixed - set(model.param_names):
            raise ConfigError(f"unknown fixed parameters {sorted(fixed - set(model.param_names))}")
        if self.model == "sie" and ({"euler_contrast", "new_contrast_partial", "euler_contrast_partial"}
                                    & set(self.estimators)):
            raise ConfigError("the synaptic model supports only new_contrast_complete and saem")
        if (self.model == "fhn" and "epsilon" not in fixed
                and {"euler_contrast", "new_contrast_partial", "euler_contrast_partial"} & set(self.estimators)):
            raise ConfigError("Euler and partial contrasts for FitzHugh-Nagumo need epsilon fixed")

    def build_model(self):
        return get_model(self.model, **self.constants)

    def params(self):
        return self.build_model().make_params(**self.true_params)

    def to_dict(self):
        d = asdict(self)
        d["estimators"] = list(self.estimators)
        d["x0"] = list(self.x0)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown configuration keys {sorted(extra)}")
        if "model" not in d or "true_params" not in d:
            raise ConfigError("configuration needs 'model' and 'true_params'")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read configuration {path}: {err}") from err
        return cls.from_dict(d)

    def config_hash(self):
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class SummaryTable:
    """Mean and SD of each parameter over the converged replications of one estimator."""

    estimator: str
    param_names: tuple
    mean: dict
    sd: dict
    n_ok: int
    n_failed: int = 0
    runtime_mean: float = math.nan
    runtime_sd: float = math.nan

    def rows(self, true_values=None):
        true_values = true_values or {}
        for k in self.param_names:
            yield {"estimator": self.estimator, "parameter": k, "true": true_values.get(k, math.nan),
                   "mean": self.mean[k], "sd": self.sd[k], "n_ok": self.n_ok, "n_failed": self.n_failed,
                   "runtime_mean": self.runtime_mean, "runtime_sd": self.runtime_sd}


def _sd(x):
    return float(np.std(x, ddof=1)) if len(x) > 1 else math.nan


def summarize(results, estimator="", failures=0, runtimes=()):
    """Aggregate estimation results; non-converged ones count as failures."""
    results = list(results)
    if not results and not failures:
        raise InvalidArgumentError("nothing to summarize")
    ok = [r for r in results if r.converged]
    failed = failures + len(results) - len(ok)
    names = tuple(results[0].param_names) if results else ()
    values = {k: [r.param_dict()[k] for r in ok] for k in names}
    mean = {k: float(np.mean(v)) if v else math.nan for k, v in values.items()}
    sd = {k: _sd(v) for k, v in values.items()}
    rt = list(runtimes)
    return SummaryTable(estimator=estimator, param_names=names, mean=mean, sd=sd, n_ok=len(ok),
                        n_failed=failed, runtime_mean=float(np.mean(rt)) if rt else math.nan,
                        runtime_sd=_sd(rt))


# -- one replication ---------------------------------------------------------------


def simulate_data(config, r):
    model = config.build_model()
    params = config.params()
    rng = make_rng(config.seed_base, r, 0)
    if config.protocol == "exact":
        return simulate_exact_ho(params, config.x0, config.delta, config.n, seed=rng)
    fine = simulate_euler_fine(model, params, config.x0, config.delta_fine, config.n * config.subsample, seed=rng)
    return subsample(fine, config.subsample)


def _start(config, model, truth, v, delta):
    opt = config.options.get("init", "auto")
    if isinstance(opt, dict):
        start = model.make_params(**{**model.param_dict(truth), **opt})
    elif opt == "true":
        start = truth
    elif opt == "auto":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            start = auto_init(model, v, delta, eps0=config.options.get("eps0", 0.12)).params0
    else:
        raise ConfigError(f"init must be 'auto', 'true' or a parameter dict, got {opt!r}")
    fixed = config.options.get("fixed", ())
    vals = model.param_dict(start)
    vals.update({k: model.param_dict(truth)[k] for k in fixed})
    return model.make_params(**vals)


def _contrast_options(config, start, seed):
    kw = dict(config.options.get("contrast", {}))
    return ContrastOptions(init=start, fixed=tuple(config.options.get("fixed", ())), seed=seed, **kw)


def _proxy_states(model, v, delta, eps):
    """``(V, U)`` with the hidden coordinate replaced by a V-increment proxy."""
    if model.name == "ho":
        u = np.diff(v) / delta
    else:
        u = model.invert_increments(v, delta, eps)
    return np.column_stack([v[:-1], u])


def _corrected(model, params):
    return params.replace(sigma=tuple(SIGMA_CORRECTION * s for s in params.sigma))


def run_estimator(config, name, traj, j, r):
    model = config.build_model()
    truth = config.params()
    d = config.delta
    seed = int(make_rng(config.seed_base, r, j + 1).integers(2**31))
    start = _start(config, model, truth, traj.v, d)
    if name == "new_contrast_complete":
        res = estimate_complete(traj, model, _contrast_options(config, start, seed))
    elif name == "euler_contrast":
        res = euler_contrast_baseline(traj, model, ContrastOptions(init=truth), delta=d)
    elif name in ("new_contrast_partial", "euler_contrast_partial"):
        eps = truth.psi[0] if model.psi_names else None
        states = _proxy_states(model, traj.v, d, eps)
        if name == "new_contrast_partial":
            res = estimate_complete(states, model, _contrast_options(config, start, seed), delta=d)
        else:
            res = euler_contrast_baseline(states, model, ContrastOptions(init=truth), delta=d)
        res.params = _corrected(model, res.params)
    elif name == "saem":
        so = dict(config.options.get("saem", {}))
        mstep = so.pop("mstep", "joint")
        proposal = so.pop("proposal", "conditional")
        iters, burn = DEFAULT_SCHEDULE[model.name]
        so.setdefault("total_iters", iters)
        so.setdefault("burn_in", burn)
        schedule = SaemSchedule(**so)
        sampler = point_u0_sampler(traj.u[0]) if config.options.get("u0_known", True) else None
        fixed = tuple(config.options.get("fixed", ()))
        res = saem_run(model, traj.v, start, schedule=schedule, seed=seed, delta=d, proposal_kind=proposal,
                       u0_sampler=sampler, fixed=fixed, mstep=mstep).result
    else:
        raise ConfigError(f"unknown estimator {name}")
    res.seed = seed
    return res


def run_replication(config, r):
    """Simulate dataset ``r`` and apply every estimator; failures are recorded, not raised."""
    out = {"replication": r, "estimates": {}, "errors": {}, "runtimes": {}}
    try:
        traj = simulate_data(config, r)
    except HypoDiffError as err:
        out["errors"]["data"] = f"{type(err).__name__}: {err}"
        return out
    for j, name in enumerate(config.estimators):
        t = time.perf_counter()
        try:
            out["estimates"][name] = run_estimator(config, name, traj, j, r)
        except (HypoDiffError, ArithmeticError, np.linalg.LinAlgError) as err:
            out["errors"][name] = f"{type(err).__name__}: {err}"
        out["runtimes"][name] = time.perf_counter() - t
    return out


def _run_one(args):
    config_dict, r = args
    return run_replication(ExperimentConfig.from_dict(config_dict), r)


# -- study ---------------------------------------------------------------------


@dataclass
class StudyResult:
    config: ExperimentConfig
    tables: dict
    replications: list

    def failure_fraction(self):
        """Largest fraction of failed replications over the estimators."""
        R = self.config.replications
        return max((t.n_failed / R for t in self.tables.values()), default=1.0)

    @property
    def failed(self):
        return self.failure_fraction() > 0.5

    def summary_rows(self):
        truth = self.config.true_params
        for name in self.config.estimators:
            yield from self.tables[name].rows(truth)

    def long_rows(self):
        for rep in self.replications:
            for name in self.config.estimators:
                res = rep["estimates"].get(name)
                if res is None:
                    continue
                for k, v in res.param_dict().items():
                    yield {"replication": rep["replication"], "estimator": name, "parameter": k,
                           "value": float(v), "converged": bool(res.converged)}


def run_replication_study(config, workers=None):
    """Run all replications of ``config`` and summarize per estimator."""
    workers = workers or config.workers
    reps = range(config.replications)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_run_one, [(config.to_dict(), r) for r in reps]))
    else:
        outs = [run_replication(config, r) for r in reps]
    tables = {}
    for name in config.estimators:
        results = [o["estimates"][name] for o in outs if name in o["estimates"]]
        failures = sum(1 for o in outs if name not in o["estimates"])
        runtimes = [o["runtimes"][name] for o in outs if name in o["runtimes"]]
        if results:
            tables[name] = summarize(results, name, failures, runtimes)
        else:
            names = config.build_model().param_names
            nan = {k: math.nan for k in names}
            tables[name] = SummaryTable(name, names, dict(nan), dict(nan), 0, failures)
    return StudyResult(config=config, tables=tables, replications=outs)


def manifest(config, extra=None):
    m = {"config_hash": config.config_hash() if config is not None else None,
         "seed": config.seed_base if config is not None else None,
         "version": __version__, "backend": kernels.BACKEND,
         "numpy": np.__version__, "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    m.update(extra or {})
    return m


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def write_study(study, outdir):
    """Write config, manifest, per-replication JSON, summary CSV and long-format CSV."""
    os.makedirs(os.path.join(outdir, "replications"), exist_ok=True)
    with open(os.path.join(outdir, "config.json"), "w") as fh:
        json.dump(study.config.to_dict(), fh, indent=2)
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest(study.config, {"failure_fraction": study.failure_fraction()}), fh, indent=2)
    for rep in study.replications:
        d = {"replication": rep["replication"], "errors": rep["errors"], "runtimes": rep["runtimes"],
             "estimates": {k: v.to_dict() for k, v in rep["estimates"].items()}}
        path = os.path.join(outdir, "replications", f"rep_{rep['replication']:04d}.json")
        with open(path, "w") as fh:
            json.dump(d, fh, indent=2)
    fields = ["estimator", "parameter", "true", "mean", "sd", "n_ok", "n_failed", "runtime_mean", "runtime_sd"]
    with open(os.path.join(outdir, "summary.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in study.summary_rows():
            w.writerow({k: _fmt(v) for k, v in row.items()})
    with open(os.path.join(outdir, "estimates_long.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["replication", "estimator", "parameter", "value", "converged"])
        w.writeheader()
        for row in study.long_rows():
            w.writerow({k: _fmt(v) for k, v in row.items()})
