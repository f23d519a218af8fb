"""Experiment configuration, datasets, trace storage and the multi-run driver.

Config file (YAML; unknown keys are rejected)::

    model:
      kind: lgssm            # lgssm | poisson1 | poisson2 | lorenz96
      d: 2
      T: 50
      rho: 0.7               # latent AR models: rho, phi (scalar or list of d)
      phi: 0.9               # poisson1: c, sigma; poisson2: sigma
                             # lorenz96: alpha, sigma_f_sq, obs_var, h, rk4_step, p
    data:
      seed: 1                # dataset simulation seed
      path: data.csv         # optional; relative to the output directory
    sampler:
      kind: replica_csmc     # replica_csmc | iterated_csmc
      N: 50
      K: 2
      N_init: 50             # particles of the initializing SMC passes (default N)
      predictive: constant   # constant | exact (exact needs lgssm)
      schedule:              # optional, default: every replica does replica_csmc
        - replica_csmc
        - {kind: iterated_csmc, period: 20, offset: 0}
    iterations: 5000
    burn_in_fraction: 0.1
    n_runs: 10
    seed: 123                # master seed
    track: all               # or a list of [t, i] pairs (0-based)
    output: out/

Dataset file (CSV text): a first line
``# repcsmc-dataset model=<kind> d=<d> m=<m> T=<T> seed=<seed>``, a column
header line ``x_0,...,x_{d-1},y_0,...,y_{m-1}`` and one row per time step.

Trace files: one ``trace_run<r>.csv`` per run with columns
``run,iteration,variable,value`` (variable ``x_<t>_<i>`` is coordinate i at time t, 0-based;
iteration 0 is the initial state), plus ``manifest.json`` holding the
config, per-run seeds, wall-clock seconds per iteration and variable names.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .csmc import CsmcConfig, DefaultTarget, iterated_csmc_kernel, smc_sample
from .diagnostics import coverage_check, discard_burn_in, iact, overall_mean_se
from .kalman import PredictiveTable, kalman_filter, rts_smoother
from .models import MODEL_KINDS, Lorenz96Model
from .replica import (
    REPLICA_CSMC,
    ConstantPredictive,
    MonteCarloPredictive,
    ReplicaSchedule,
    ReplicaUpdate,
    initialize_ensemble,
    replica_csmc_sweep,
)

log = logging.getLogger(__name__)

DATASET_TAG = "# repcsmc-dataset"
MANIFEST = "manifest.json"


class ConfigError(ValueError):
    pass


class NumericalFailure(FloatingPointError):
    """A sampler failed numerically; the message carries run and iteration."""


_AR_KEYS = {"kind", "d", "T", "rho", "phi"}
_MODEL_KEYS = {
    "lgssm": _AR_KEYS,
    "poisson1": _AR_KEYS | {"c", "sigma"},
    "poisson2": _AR_KEYS | {"sigma"},
    "lorenz96": {"kind", "d", "T", "alpha", "sigma_f_sq", "obs_var", "h", "rk4_step", "p"},
}
_SAMPLER_KEYS = {"kind", "N", "K", "N_init", "predictive", "schedule"}
_TOP_KEYS = {"model", "data", "sampler", "iterations", "burn_in_fraction", "n_runs", "seed", "track", "output"}


def _reject_unknown(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


@dataclass
class SamplerConfig:
    kind: str = REPLICA_CSMC
    N: int = 100
    K: int = 2
    N_init: Optional[int] = None
    predictive: str = "constant"
    schedule: Optional[list] = None

    def __post_init__(self):
        if self.kind not in ("replica_csmc", "iterated_csmc"):
            raise ConfigError(f"unknown sampler kind {self.kind!r}")
        if self.predictive not in ("constant", "exact"):
            raise ConfigError(f"unknown predictive {self.predictive!r}")
        if self.N < 2:
            raise ConfigError("sampler.N must be >= 2")
        if self.kind == "replica_csmc" and self.K < 2:
            raise ConfigError("sampler.K must be >= 2")
        if self.N_init is None:
            self.N_init = self.N

    def replica_schedule(self) -> ReplicaSchedule:
        if self.schedule is None:
            return ReplicaSchedule.all_replica(self.K)
        updates = []
        for item in self.schedule:
            if isinstance(item, str):
                updates.append(ReplicaUpdate(item))
            elif isinstance(item, dict):
                _reject_unknown(item, {"kind", "period", "offset"}, "sampler.schedule")
                updates.append(ReplicaUpdate(**item))
            else:
                raise ConfigError(f"bad schedule entry {item!r}")
        schedule = ReplicaSchedule(tuple(updates))
        if schedule.K != self.K:
            raise ConfigError(f"schedule has {schedule.K} entries but K = {self.K}")
        return schedule


@dataclass
class RunConfig:
    model: dict
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    iterations: int = 1000
    burn_in_fraction: float = 0.10
    n_runs: int = 1
    seed: int = 0
    data_seed: int = 0
    data_path: Optional[str] = None
    track: object = "all"
    output: Optional[str] = None

    def __post_init__(self):
        if self.iterations <= 0:
            raise ConfigError("iterations must be positive")
        if not 0 <= self.burn_in_fraction < 1:
            raise ConfigError("burn_in_fraction must lie in [0, 1)")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        kind = self.model.get("kind")
        if kind not in _MODEL_KEYS:
            raise ConfigError(f"unknown model kind {kind!r}")
        _reject_unknown(self.model, _MODEL_KEYS[kind], "model")
        if self.sampler.predictive == "exact" and kind != "lgssm":
            raise ConfigError("exact predictive is only available for the lgssm model")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        _reject_unknown(raw, _TOP_KEYS, "config")
        if "model" not in raw:
            raise ConfigError("config needs a model section")
        sampler = dict(raw.get("sampler") or {})
        _reject_unknown(sampler, _SAMPLER_KEYS, "sampler")
        data = dict(raw.get("data") or {})
        _reject_unknown(data, {"seed", "path"}, "data")
        try:
            return cls(
                model=dict(raw["model"]),
                sampler=SamplerConfig(**sampler),
                iterations=int(raw.get("iterations", 1000)),
                burn_in_fraction=float(raw.get("burn_in_fraction", 0.10)),
                n_runs=int(raw.get("n_runs", 1)),
                seed=int(raw.get("seed", 0)),
                data_seed=int(data.get("seed", 0)),
                data_path=data.get("path"),
                track=raw.get("track", "all"),
                output=raw.get("output"),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def to_dict(self) -> dict:
        out = {
            "model": dict(self.model),
            "data": {"seed": self.data_seed},
            "sampler": {k: v for k, v in asdict(self.sampler).items() if v is not None},
            "iterations": self.iterations,
            "burn_in_fraction": self.burn_in_fraction,
            "n_runs": self.n_runs,
            "seed": self.seed,
            "track": self.track,
        }
        if self.data_path is not None:
            out["data"]["path"] = self.data_path
        if self.output is not None:
            out["output"] = self.output
        return out


def build_model(model_cfg: dict):
    """Model object (without data) from the ``model`` config section."""
    params = {k: v for k, v in model_cfg.items() if k != "kind"}
    cls = MODEL_KINDS[model_cfg["kind"]]
    if cls is Lorenz96Model:
        return cls(**params)
    if "phi" in params:
        params["phis"] = params.pop("phi")
    params.setdefault("rho", 0.7)
    params.setdefault("phis", 0.9)
    return cls(**params)


def save_dataset(path, kind: str, x, y, seed: int) -> None:
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    T, d = x.shape
    m = y.shape[1]
    header = f"{DATASET_TAG} model={kind} d={d} m={m} T={T} seed={seed}\n"
    names = [f"x_{i}" for i in range(d)] + [f"y_{i}" for i in range(m)]
    with open(path, "w") as fh:
        fh.write(header)
        fh.write(",".join(names) + "\n")
        np.savetxt(fh, np.hstack([x, y]), delimiter=",", fmt="%.17g")


def load_dataset(path) -> tuple:
    """Returns ``(meta, x, y)`` from a dataset file."""
    with open(path) as fh:
        first = fh.readline().strip()
    if not first.startswith(DATASET_TAG):
        raise ConfigError(f"{path} is not a dataset file")
    meta = dict(item.split("=", 1) for item in first[len(DATASET_TAG) :].split())
    for key in ("d", "m", "T", "seed"):
        meta[key] = int(meta[key])
    data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
    d = meta["d"]
    return meta, data[:, :d], data[:, d:]


def simulate_dataset(cfg: RunConfig) -> tuple:
    model = build_model(cfg.model)
    return model.simulate(np.random.default_rng(cfg.data_seed))


def dataset_path(cfg: RunConfig, out_dir) -> Path:
    name = cfg.data_path or f"data_{cfg.model['kind']}_seed{cfg.data_seed}.csv"
    path = Path(name)
    return path if path.is_absolute() or out_dir is None else Path(out_dir) / path


def load_or_simulate(cfg: RunConfig, out_dir=None) -> tuple:
    """Observations for ``cfg``: read from the dataset file if present, else simulate (and store)."""
    path = dataset_path(cfg, out_dir) if (out_dir is not None or cfg.data_path) else None
    if path is not None and path.exists():
        meta, x, y = load_dataset(path)
        if meta["model"] != cfg.model["kind"] or meta["seed"] != cfg.data_seed:
            raise ConfigError(f"dataset {path} was generated for {meta['model']} seed {meta['seed']}")
        return x, y
    x, y = simulate_dataset(cfg)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(path, cfg.model["kind"], x, y, cfg.data_seed)
    return x, y


def track_indices(track, T: int, d: int) -> list:
    if track == "all":
        return [(t, i) for t in range(T) for i in range(d)]
    pairs = [tuple(int(v) for v in p) for p in track]
    for t, i in pairs:
        if not (0 <= t < T and 0 <= i < d):
            raise ConfigError(f"tracked variable ({t}, {i}) outside the {T} x {d} state")
    return pairs


def variable_names(pairs) -> list:
    return [f"x_{t}_{i}" for t, i in pairs]


def run_seed_sequence(master_seed: int, run_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(run_index)])


def make_estimator(cfg: RunConfig, model):
    if cfg.sampler.predictive == "exact":
        f = kalman_filter(model.lgssm_params(), model.y)
        return MonteCarloPredictive(PredictiveTable(f))
    return ConstantPredictive()


def run_chain(cfg: RunConfig, model, rng: np.random.Generator, pairs, run_index: int = 0) -> tuple:
    """One chain; returns ``(trace, seconds_per_iteration)`` with trace shape ``(iterations + 1, n_vars)``."""
    sc = cfg.sampler
    t_idx = np.array([p[0] for p in pairs], dtype=int)
    i_idx = np.array([p[1] for p in pairs], dtype=int)
    trace = np.empty((cfg.iterations + 1, len(pairs)))
    target = DefaultTarget(model)
    csmc_cfg = CsmcConfig(sc.N)
    it = 0
    try:
        if sc.kind == "replica_csmc":
            schedule = sc.replica_schedule()
            tracked = next(k for k in range(schedule.K) if schedule[k].kind == REPLICA_CSMC)
            est = make_estimator(cfg, model)
            state = initialize_ensemble(model, target, sc.N_init, sc.K, rng)
            trace[0] = state[tracked][t_idx, i_idx]
            start = time.perf_counter()
            for it in range(1, cfg.iterations + 1):
                state = replica_csmc_sweep(state, schedule, est, model, csmc_cfg, rng, sweep_index=it - 1, default_target=target)
                trace[it] = state[tracked][t_idx, i_idx]
        else:
            state = smc_sample(target, sc.N_init, rng)[0]
            trace[0] = state[t_idx, i_idx]
            start = time.perf_counter()
            for it in range(1, cfg.iterations + 1):
                state = iterated_csmc_kernel(target, state, csmc_cfg, rng)
                trace[it] = state[t_idx, i_idx]
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        raise NumericalFailure(f"run {run_index}, iteration {it}: {exc}") from exc
    return trace, (time.perf_counter() - start) / cfg.iterations


@dataclass
class TraceStore:
    """Traces of all runs, shape ``(n_runs, iterations + 1, n_vars)``, with per-run metadata."""

    traces: np.ndarray
    variables: list
    seconds_per_iteration: list
    config: dict
    run_seeds: list
    dataset: Optional[str] = None

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for r in range(self.traces.shape[0]):
            write_trace_csv(out / f"trace_run{r:03d}.csv", r, self.traces[r], self.variables)
        manifest = {
            "config": self.config,
            "run_seeds": self.run_seeds,
            "seconds_per_iteration": self.seconds_per_iteration,
            "variables": self.variables,
            "n_runs": int(self.traces.shape[0]),
            "iterations": int(self.traces.shape[1] - 1),
            "dataset": self.dataset,
        }
        with open(out / MANIFEST, "w") as fh:
            json.dump(manifest, fh, indent=2)

    @classmethod
    def read(cls, trace_dir) -> "TraceStore":
        trace_dir = Path(trace_dir)
        with open(trace_dir / MANIFEST) as fh:
            manifest = json.load(fh)
        names = manifest["variables"]
        n_iter = manifest["iterations"] + 1
        traces = np.stack([
            read_trace_csv(trace_dir / f"trace_run{r:03d}.csv", names, n_iter) for r in range(manifest["n_runs"])
        ])
        dataset = manifest.get("dataset")
        if dataset is not None and not Path(dataset).is_absolute():
            dataset = str(trace_dir / dataset)
        return cls(traces, names, manifest["seconds_per_iteration"], manifest["config"], manifest["run_seeds"], dataset)


def write_trace_csv(path, run: int, trace: np.ndarray, names: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "iteration", "variable", "value"])
        for it, row in enumerate(trace):
            w.writerows((run, it, name, repr(float(v))) for name, v in zip(names, row))


def read_trace_csv(path, names: list, n_iter: int) -> np.ndarray:
    col = {name: j for j, name in enumerate(names)}
    out = np.full((n_iter, len(names)), np.nan)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != ["run", "iteration", "variable", "value"]:
            raise ConfigError(f"{path}: unexpected trace header")
        for _, it, name, value in reader:
            out[int(it), col[name]] = float(value)
    return out


def _one_run(cfg: RunConfig, y, run_index: int, pairs) -> tuple:
    model = build_model(cfg.model).with_data(y)
    rng = np.random.default_rng(run_seed_sequence(cfg.seed, run_index))
    return run_chain(cfg, model, rng, pairs, run_index)


def run_experiment(cfg: RunConfig, out_dir=None, threads: int = 1) -> TraceStore:
    """Run ``cfg.n_runs`` independent chains; write traces when an output directory is given.

    Runs use seeds derived from ``(cfg.seed, run_index)`` only, so the result
    does not depend on ``threads`` (the number of worker processes).
    """
    out_dir = out_dir if out_dir is not None else cfg.output
    _, y = load_or_simulate(cfg, out_dir)
    data_file = dataset_path(cfg, out_dir) if (out_dir is not None or cfg.data_path) else None
    model = build_model(cfg.model)
    pairs = track_indices(cfg.track, model.T, model.d)
    runs = range(cfg.n_runs)
    if threads > 1 and cfg.n_runs > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_one_run, [cfg] * cfg.n_runs, [y] * cfg.n_runs, runs, [pairs] * cfg.n_runs))
    else:
        results = []
        for r in runs:
            results.append(_one_run(cfg, y, r, pairs))
            log.info("run %d done (%.4f s/iteration)", r, results[-1][1])
    store = TraceStore(
        np.stack([tr for tr, _ in results]),
        variable_names(pairs),
        [float(s) for _, s in results],
        cfg.to_dict(),
        [[int(cfg.seed), r] for r in runs],
        None if data_file is None else (data_file.name if out_dir is not None and data_file.parent == Path(out_dir) else str(data_file)),
    )
    if out_dir is not None:
        store.write(out_dir)
    return store


def diagnose_store(store: TraceStore, burn_in_fraction: float = 0.1) -> tuple:
    """Per-variable table (variable, mean, se, iact[, oracle_mean, covered]) and the coverage fraction.

    Coverage against Kalman smoothed means is computed for the lgssm model
    when the dataset is available; otherwise it is ``None``.
    """
    traces = discard_burn_in(store.traces, burn_in_fraction)
    taus = [iact(traces[:, :, v]).tau for v in range(traces.shape[2])]
    n_runs = traces.shape[0]
    if n_runs >= 2:
        mean, se = overall_mean_se(traces)
    else:
        mean, se = traces[0].mean(axis=0), np.full(traces.shape[2], np.nan)
    oracle = None
    if store.config["model"]["kind"] == "lgssm" and store.dataset and Path(store.dataset).exists() and n_runs >= 2:
        _, _, y = load_dataset(store.dataset)
        params = build_model(store.config["model"]).lgssm_params()
        sm = rts_smoother(kalman_filter(params, y), params)
        oracle = np.array([sm.means[t, i] for t, i in parse_variable_names(store.variables)])
    rows = []
    for v, name in enumerate(store.variables):
        row = {"variable": name, "mean": float(mean[v]), "se": float(se[v]), "iact": float(taus[v])}
        if oracle is not None:
            row["oracle_mean"] = float(oracle[v])
            row["covered"] = int(abs(oracle[v] - mean[v]) <= 2.0 * se[v])
        rows.append(row)
    coverage = None if oracle is None else coverage_check(traces, oracle)
    return rows, coverage


def compare_stores(a: TraceStore, b: TraceStore, burn_in_fraction: float = 0.1) -> list:
    """IACT ratios b / a per shared variable, raw and scaled by seconds per iteration."""
    shared = [v for v in a.variables if v in set(b.variables)]
    if not shared:
        raise ConfigError("the two trace sets share no variables")
    ta, tb = discard_burn_in(a.traces, burn_in_fraction), discard_burn_in(b.traces, burn_in_fraction)
    sa, sb = float(np.mean(a.seconds_per_iteration)), float(np.mean(b.seconds_per_iteration))
    rows = []
    for name in shared:
        tau_a = iact(ta[:, :, a.variables.index(name)]).tau
        tau_b = iact(tb[:, :, b.variables.index(name)]).tau
        rows.append({
            "variable": name,
            "iact_a": tau_a,
            "iact_b": tau_b,
            "ratio": tau_b / tau_a,
            "time_adjusted_ratio": (tau_b * sb) / (tau_a * sa),
        })
    return rows


def parse_variable_names(names) -> list:
    out = []
    for name in names:
        _, t, i = name.split("_")
        out.append((int(t), int(i)))
    return out


def write_table(path, rows: list) -> None:
    if not rows:
        raise ValueError("empty table")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
