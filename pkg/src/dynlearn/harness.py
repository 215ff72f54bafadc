"""Experiment configuration, seeded execution, and CSV emission.

Configs are INI files with dotted access (section.key). A config names a
system, an algorithm, a step schedule, a sampling scheme, seeds, and a
horizon; `run_experiment` executes every (arm, seed) trial with an
independent counter-based random stream and writes one trial CSV per
seed plus a summary. Grid sweeps reuse the same machinery and aggregate
per grid point. Everything is deterministic from (config, seed): streams
are keyed by the config hash and seed, trials never share state, and
files are written atomically.
"""

from __future__ import annotations

import concurrent.futures
import configparser
import io
import os
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .dynamics import (
    ConfigurationError,
    InfluenceBalancing,
    LinearCoefficientLoss,
    NonRecurrentRegression,
    RNNSystem,
    SquaredErrorLoss,
    make_example,
)
from .rankone import RankOneInjector
from .records import config_hash, write_csv_atomic
from .rtrl import run_learning
from .schedules import ExponentProfile, StepSchedule, sample_indices, validate_exponents
from .tbptt import TruncationSchedule, run_tbptt
from .updates import phi_plain, phi_projected, rule_adam, rule_identity

__all__ = ["ExperimentConfig", "run_experiment", "run_sweep", "summarize_trials"]

ALGORITHMS = ("sgd", "rtrl", "uoro", "nobacktrack", "tbptt", "adam", "rmsprop", "ong")


@dataclass
class ExperimentConfig:
    """Flat dotted-key view of an experiment INI file.

    Sections/keys are free-form; the accessors apply defaults and type
    coercion. Round-trips through `to_ini`/`from_ini` losslessly (string
    values are preserved as written).
    """

    values: dict = field(default_factory=dict)

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        parser.optionxform = str
        parser.read_string(text)
        values = {}
        for section in parser.sections():
            for key, val in parser.items(section):
                values[f"{section}.{key}"] = val
        return cls(values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_ini(fh.read())

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        for dotted in sorted(self.values):
            section, key = dotted.split(".", 1)
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, key, self.values[dotted])
        out = io.StringIO()
        parser.write(out)
        return out.getvalue()

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        merged = dict(self.values)
        merged.update({k: str(v) for k, v in overrides.items()})
        return ExperimentConfig(merged)

    def get(self, dotted, default=None):
        return self.values.get(dotted, default)

    def getfloat(self, dotted, default=None):
        val = self.values.get(dotted)
        return default if val is None else float(val)

    def getint(self, dotted, default=None):
        val = self.values.get(dotted)
        return default if val is None else int(val)

    def getlist(self, dotted, default=()):
        val = self.values.get(dotted)
        if val is None:
            return list(default)
        return [item.strip() for item in val.split(",") if item.strip()]

    @property
    def name(self):
        return self.get("experiment.name", "experiment")

    @property
    def seeds(self):
        return [int(s) for s in self.getlist("experiment.seeds", ["0"])]

    @property
    def horizon(self):
        return self.getint("experiment.horizon", 1000)

    @property
    def hash(self):
        return config_hash(self.values)

    def arms(self):
        """(arm_name, config) pairs; a single 'main' arm when no [arms]."""
        arm_keys = [k for k in self.values if k.startswith("arms.")]
        if not arm_keys:
            return [("main", self)]
        out = []
        for key in sorted(arm_keys):
            name = key.split(".", 1)[1]
            overrides = {}
            for clause in self.values[key].split(";"):
                clause = clause.strip()
                if clause:
                    dotted, val = clause.split("=", 1)
                    overrides[dotted.strip()] = val.strip()
            out.append((name, self.with_overrides(overrides)))
        return out


def _hash_to_int(text: str) -> int:
    return int(text, 16)


def build_dataset(cfg: ExperimentConfig):
    """Regression dataset (xs, ys, theta_star), generated from the data
    seed or ingested from a CSV with one row per sample (x columns, then
    one y column; a header row is skipped if present)."""
    path = cfg.get("system.data_csv")
    if path:
        try:
            raw = np.loadtxt(path, delimiter=",", skiprows=0, ndmin=2)
        except ValueError:
            raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if raw.shape[1] < 2:
            raise ConfigurationError(f"dataset {path!r} needs x columns and a y column")
        xs, ys = raw[:, :-1], raw[:, -1]
    else:
        n = cfg.getint("system.n_samples", 16)
        p = cfg.getint("system.dim", 4)
        noise = cfg.getfloat("system.noise", 0.1)
        rng = np.random.default_rng(np.random.Philox(key=cfg.getint("system.data_seed", 1234)))
        xs = rng.normal(size=(n, p))
        theta_true = rng.normal(size=p)
        ys = xs @ theta_true + noise * rng.normal(size=n)
    theta_star, *_ = np.linalg.lstsq(xs, ys, rcond=None)
    return xs, ys, theta_star


def rule_from_string(spec: str, dim: int):
    """Update rule from a config string: identity | precond:scale:<c> |
    precond:diag:<c1,c2,...> (the adaptive names are algorithm-level)."""
    if spec in (None, "", "identity"):
        return rule_identity()
    if spec.startswith("precond:"):
        from .updates import rule_preconditioned

        kind, _, arg = spec[len("precond:"):].partition(":")
        if kind == "scale":
            P = float(arg) * np.eye(dim)
        elif kind == "diag":
            entries = np.array([float(x) for x in arg.split(",")], dtype=float)
            if len(entries) != dim:
                raise ConfigurationError(
                    f"diag preconditioner has {len(entries)} entries, parameter has {dim}")
            P = np.diag(entries)
        else:
            raise ConfigurationError(f"unknown preconditioner {spec!r}")
        return rule_preconditioned(lambda theta: P)
    raise ConfigurationError(f"unknown rule {spec!r}")


def _parse_state(text, dim):
    if text is None or text == "zeros":
        return np.zeros(dim)
    return np.array([float(x) for x in text.split(",")], dtype=float)


def run_trial(cfg: ExperimentConfig, seed: int):
    """Execute one (config, seed) trial; returns a TrialRecord.

    The random stream is a counter-based generator keyed by the config
    hash and the seed, split into independent children for sampling,
    initialization, and injector noise, so arms that consume different
    amounts of randomness stay comparable.
    """
    algo = cfg.get("algorithm.name", "sgd")
    if algo not in ALGORITHMS:
        raise ConfigurationError(f"unknown algorithm {algo!r}")
    T = cfg.horizon
    schedule = StepSchedule(cfg.getfloat("schedule.gamma", 0.1), cfg.getfloat("schedule.b", 0.7))
    root = np.random.SeedSequence([_hash_to_int(cfg.hash) % (1 << 63), seed])
    ss_sample, ss_init, ss_inject = root.spawn(3)
    rng_sample = np.random.default_rng(np.random.Philox(ss_sample))
    rng_init = np.random.default_rng(np.random.Philox(ss_init))
    rng_inject = np.random.default_rng(np.random.Philox(ss_inject))
    scheme = cfg.get("sampling.scheme", "cycling")
    meta = dict(cfg.values)
    meta["trial.seed"] = str(seed)
    record_every = cfg.getint("experiment.record_every", 1)
    kind = cfg.get("system.kind", "linear_regression")

    if algo == "tbptt":
        system, theta0, theta_star, s0, dist_dims = _build_plant(cfg, kind, scheme, T, rng_sample, rng_init)
        trunc = _parse_truncation(cfg)
        profile = None
        if cfg.get("exponents.a") is not None and trunc.A is not None:
            profile = ExponentProfile(
                a=cfg.getfloat("exponents.a"),
                gamma_loss=cfg.getfloat("exponents.gamma_loss", 0.0),
                algorithm_class="tbptt",
                A=trunc.A,
            )
        return run_tbptt(
            system, s0, theta0, schedule, trunc, T,
            theta_star=theta_star, dist_dims=dist_dims, profile=profile,
            force=cfg.get("experiment.force", "0") == "1", config_meta=meta,
        )

    if algo in ("adam", "rmsprop", "ong"):
        system, rule, phi, theta0, theta_star, s0, dist_dims = _build_adaptive(
            cfg, algo, scheme, T, schedule, rng_sample, rng_init
        )
        return run_learning(
            system, s0, theta0, None, schedule, rule=rule, phi=phi, T=T,
            theta_star=theta_star, dist_dims=dist_dims,
            record_every=record_every, config_meta=meta,
        )

    system, theta0, theta_star, s0, dist_dims = _build_plant(cfg, kind, scheme, T, rng_sample, rng_init)
    injector = None
    if algo in ("uoro", "nobacktrack"):
        injector = RankOneInjector("uoro" if algo == "uoro" else "nbt")
    rule = rule_from_string(cfg.get("algorithm.rule", "identity"), len(theta0))
    return run_learning(
        system, s0, theta0, None, schedule, rule=rule, phi=phi_plain(),
        injector=injector, T=T, rng=rng_inject, theta_star=theta_star,
        dist_dims=dist_dims, record_every=record_every, config_meta=meta,
    )


def _parse_truncation(cfg) -> TruncationSchedule:
    """Truncation from `truncation.spec` (grow:<A> | fixed:<L>), falling
    back to the explicit truncation.A / truncation.fixed_length keys."""
    spec = cfg.get("truncation.spec")
    if spec:
        mode, _, val = spec.partition(":")
        if mode == "grow":
            return TruncationSchedule.growing(float(val))
        if mode == "fixed":
            return TruncationSchedule.fixed(int(val))
        raise ConfigurationError(f"bad truncation spec {spec!r}")
    if cfg.get("truncation.fixed_length"):
        return TruncationSchedule.fixed(cfg.getint("truncation.fixed_length"))
    return TruncationSchedule.growing(cfg.getfloat("truncation.A", 0.4))


def _theta_init(cfg, theta_star, rng_init, p):
    mode = cfg.get("init.theta0", "near_optimum")
    if mode == "near_optimum":
        if theta_star is None:
            raise ConfigurationError("near_optimum init needs a known reference parameter")
        radius = cfg.getfloat("init.radius", 0.5)
        direction = rng_init.normal(size=p)
        direction /= np.linalg.norm(direction)
        return theta_star + radius * rng_init.uniform(0.2, 1.0) * direction
    return np.array([float(x) for x in mode.split(",")], dtype=float)


def _build_plant(cfg, kind, scheme, T, rng_sample, rng_init):
    """System + initial conditions for the non-adaptive algorithms."""
    if kind == "linear_regression":
        xs, ys, theta_star = build_dataset(cfg)
        indices = sample_indices(scheme, len(xs), T, rng_sample)
        system = NonRecurrentRegression(xs, ys, indices)
        theta0 = _theta_init(cfg, theta_star, rng_init, xs.shape[1])
        return system, theta0, theta_star, np.zeros(1), None
    if kind == "influence_balancing":
        system = InfluenceBalancing(
            cfg.getint("system.n", 6), cfg.getint("system.n_plus", 2),
            cfg.getfloat("system.delta", 0.05),
        )
        theta_star = np.zeros(1)
        theta0 = _theta_init(cfg, theta_star, rng_init, 1)
        if cfg.get("system.s0") == "stationary":
            s0 = system.stationary_state(theta0)
        else:
            s0 = _parse_state(cfg.get("system.s0"), system.state_dim(0))
        return system, theta0, theta_star, s0, None
    if kind == "rnn":
        n = cfg.getint("system.n", 2)
        m = cfg.getint("system.m", 1)
        data_rng = np.random.default_rng(np.random.Philox(key=cfg.getint("system.data_seed", 1234)))
        xs = data_rng.normal(size=(T + 2, m))
        system = RNNSystem(n, m, inputs=lambda t: xs[t])
        w_scale = cfg.getfloat("system.w_scale", 0.5)
        W = w_scale * data_rng.normal(size=(n, n)) / np.sqrt(n)
        Wx = data_rng.normal(size=(n, m))
        B = 0.1 * data_rng.normal(size=n)
        theta_star = RNNSystem.pack(W, Wx, B)
        theta0 = _theta_init(cfg, theta_star, rng_init, system.param_dim)
        return system, theta0, theta_star, 0.5 * np.ones(n), None
    if kind == "momentum":
        xs, ys, theta_star = build_dataset(cfg)
        indices = sample_indices(scheme, len(xs), T, rng_sample)
        loss = SquaredErrorLoss(xs, ys)
        system = make_example(
            "momentum", sample_loss=loss, indices=indices,
            beta=cfg.getfloat("system.beta", 0.5),
        )
        theta0 = _theta_init(cfg, theta_star, rng_init, xs.shape[1])
        return system, theta0, theta_star, np.zeros(1), None
    raise ConfigurationError(f"unknown system kind {kind!r}")


def _build_adaptive(cfg, algo, scheme, T, schedule, rng_sample, rng_init):
    """Momentum system + adaptive rule for adam/rmsprop/ong configs."""
    kind = cfg.get("system.kind", "linear_regression")
    if kind == "period3":
        coef = cfg.getfloat("system.coef", 3.0)
        loss = LinearCoefficientLoss([coef, -1.0, -1.0])
        indices = sample_indices("cycling", 3, T, rng_sample)
        theta_star = np.array([-1.0])
        lo, hi = -1.0, 1.0
    elif kind == "linear_regression":
        xs, ys, theta_star = build_dataset(cfg)
        loss = SquaredErrorLoss(xs, ys)
        indices = sample_indices(scheme, len(xs), T, rng_sample)
        lo = hi = None
    else:
        raise ConfigurationError(f"adaptive algorithms do not support system kind {kind!r}")

    beta1 = cfg.getfloat("algorithm.beta1", 0.0 if algo != "adam" else 0.9)
    fixed_beta2 = cfg.getfloat("algorithm.fixed_beta2")
    setup = rule_adam(
        loss, indices, beta1,
        c=cfg.getfloat("algorithm.c", 1.0),
        eps=cfg.getfloat("algorithm.eps", 1e-8),
        schedule=schedule if fixed_beta2 is not None else None,
        fixed_beta2=fixed_beta2,
    )
    if algo == "ong":
        from .dynamics import MomentumSystem
        from .updates import (
            AdamSetup,
            AdaptiveRule,
            inverse_matrix_preconditioner,
            outer_grad_statistic,
        )

        p = loss.dim
        system = MomentumSystem(loss, indices, beta1, param_dim=p + p * p, core_dim=p)
        rule = AdaptiveRule(
            outer_grad_statistic(loss, indices),
            inverse_matrix_preconditioner(cfg.getfloat("algorithm.eps", 1e-8)),
            cfg.getfloat("algorithm.c", 1.0), theta_dim=p, psi_dim=p * p,
        )
        setup = AdamSetup(system=system, rule=rule, theta_dim=p, psi_dim=p * p)

    theta0_core = _theta_init(cfg, theta_star, rng_init, setup.theta_dim)
    if lo is not None:
        theta0_core = np.clip(theta0_core, lo, hi)
    psi0 = None
    if algo == "ong":
        # the first outer-product statistic is rank-one; ridge it so the
        # inverse preconditioner starts well conditioned
        p = setup.theta_dim
        g = loss.grad(indices[1], theta0_core)
        ridge = cfg.getfloat("algorithm.psi0_ridge", 1.0)
        psi0 = (np.outer(g, g) + ridge * np.eye(p)).ravel()
    theta0 = setup.initial_theta(theta0_core, psi0=psi0)
    phi = phi_projected(lo, hi) if lo is not None else phi_plain()
    if lo is not None:
        # Project the parameter block only; statistics are unconstrained.
        class _BlockProjected:
            def apply(self, t, theta, w):
                out = np.asarray(theta, dtype=float) - np.asarray(w, dtype=float)
                out[: setup.theta_dim] = np.clip(out[: setup.theta_dim], lo, hi)
                return out

        phi = _BlockProjected()
    return setup.system, setup.rule, phi, theta0, theta_star, np.zeros(1), setup.theta_dim


def summarize_trials(results, tol: float = 1e-2):
    """summary.csv rows from {(arm, seed): TrialRecord}.

    converged means the trial finished (no abort) with its final recorded
    distance within tol; recomputable from the trial CSV alone.
    """
    rows = []
    for (arm, seed) in sorted(results):
        record = results[(arm, seed)]
        converged = (not record.aborted) and record.final_dist() <= tol
        rows.append([
            arm, seed, int(converged), record.final_dist(),
            -1 if record.abort_t is None else record.abort_t,
        ])
    return rows


def _trial_job(args):
    cfg_values, seed = args
    cfg = ExperimentConfig(cfg_values)
    return seed, run_trial(cfg, seed)


def run_experiment(cfg: ExperimentConfig, outdir, jobs: int = 1, force: bool = False):
    """Run all (arm, seed) trials, write per-trial CSVs and summary.csv.

    Returns the experiment directory. Raises ConfigurationError before
    running anything when the exponent declaration fails validation and
    force is not set.
    """
    _validate_config(cfg, force)
    exp_dir = os.path.join(outdir, cfg.name)
    arms = cfg.arms()
    results = {}
    for arm, arm_cfg in arms:
        tasks = [(arm_cfg.values, seed) for seed in cfg.seeds]
        if jobs > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
                for seed, record in pool.map(_trial_job, tasks):
                    results[(arm, seed)] = record
        else:
            for task in tasks:
                seed, record = _trial_job(task)
                results[(arm, seed)] = record
        for seed in cfg.seeds:
            record = results[(arm, seed)]
            subdir = exp_dir if len(arms) == 1 else os.path.join(exp_dir, arm)
            record.to_csv(os.path.join(subdir, f"{seed}.csv"))
    write_csv_atomic(
        os.path.join(exp_dir, "summary.csv"),
        ("arm", "seed", "converged", "final_dist", "abort_t"),
        summarize_trials(results, tol=cfg.getfloat("experiment.tol", 1e-2)),
    )
    return exp_dir


def _validate_config(cfg: ExperimentConfig, force: bool):
    if force or cfg.get("exponents.a") is None:
        return
    algo = cfg.get("algorithm.name", "sgd")
    klass = "imperfect_rtrl" if algo in ("uoro", "nobacktrack") else (
        "tbptt" if algo == "tbptt" else "exact_rtrl"
    )
    A = _parse_truncation(cfg).A if klass == "tbptt" else None
    if klass == "tbptt" and A is None:
        return  # fixed-length override: deliberately outside the guarantees
    profile = ExponentProfile(
        a=cfg.getfloat("exponents.a"),
        gamma_loss=cfg.getfloat("exponents.gamma_loss", 0.0),
        algorithm_class=klass,
        A=A,
    )
    ok, violations = validate_exponents(profile, cfg.getfloat("schedule.b", 0.7))
    if not ok:
        raise ConfigurationError("; ".join(violations))


def run_sweep(cfg: ExperimentConfig, outdir, jobs: int = 1, force: bool = False):
    """Cartesian sweep over [sweep] keys; aggregates one row per point.

    Each [sweep] entry is a dotted config key with comma-separated
    values. Failures of individual grid points are recorded in their row
    (error column) and the sweep continues.
    """
    sweep_keys = sorted(k for k in cfg.values if k.startswith("sweep."))
    if not sweep_keys:
        raise ConfigurationError("config has no [sweep] section")
    grid_keys = [k.split(".", 1)[1] for k in sweep_keys]
    grid_values = [cfg.getlist(k) for k in sweep_keys]
    exp_dir = os.path.join(outdir, cfg.name)
    rows = []
    for combo in product(*grid_values):
        overrides = dict(zip(grid_keys, combo))
        point_cfg = cfg.with_overrides(overrides)
        point_cfg.values.pop("arms", None)
        label = "_".join(str(v).replace(".", "p") for v in combo)
        try:
            _validate_config(point_cfg, force)
            results = {}
            for seed in cfg.seeds:
                results[("main", seed)] = run_trial(point_cfg, seed)
            finals = np.array([r.final_dist() for r in results.values()])
            tol = cfg.getfloat("experiment.tol", 1e-2)
            conv = [(not r.aborted) and r.final_dist() <= tol for r in results.values()]
            for seed in cfg.seeds:
                results[("main", seed)].to_csv(os.path.join(exp_dir, label, f"{seed}.csv"))
            rows.append(list(combo) + [float(np.nanmean(finals)), float(np.mean(conv)), ""])
        except Exception as exc:  # failures are data; the sweep continues
            rows.append(list(combo) + [float("nan"), 0.0, f"{type(exc).__name__}: {exc}"])
    write_csv_atomic(
        os.path.join(exp_dir, "sweep.csv"),
        grid_keys + ["mean_final_dist", "converged_frac", "error"],
        rows,
    )
    return exp_dir
