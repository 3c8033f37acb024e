"""Experiment orchestration: seeded multi-trial completion runs, per-trial
CSV telemetry, a summary with conditioning estimates, and tidy per-metric
plot data.

Seeding scheme: the master seed spawns one child stream per trial, and each
trial spawns four independent streams in a fixed order (target tensor,
training set, test set, initial point), so any trial is reproducible in
isolation.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import completion as cp
from .optim import CSV_HEADER, TrustRegionConfig, als_minimize, rcg_minimize, \
    rtr_minimize
from .tangent import prepare_base
from .tt import Shape, random_tt

ALGORITHMS = ("rtr", "fdtr", "rcg", "als")


@dataclass
class ExperimentConfig:
    """Completion experiment: shape, sampling law, oversampling, solvers,
    trials and budgets.  ``n`` may be a single mode size or a per-mode list;
    ``p`` one distribution (applied to every mode) or one per mode."""

    d: int
    n: object
    r: list
    p: object
    oversampling: float
    algorithms: list = field(default_factory=lambda: ["rtr"])
    trials: int = 1
    seed: int = 0
    trust_region: dict = field(default_factory=dict)
    sweeps: int = 20
    max_time: float | None = None
    condition_max_iter: int = 150
    out: str | None = None

    def __post_init__(self):
        if isinstance(self.n, (int, np.integer)):
            self.n = [int(self.n)] * self.d
        self.n = [int(v) for v in self.n]
        if len(self.n) != self.d:
            raise ValueError("need one mode size per mode")
        self.r = [int(v) for v in self.r]
        if len(self.r) != self.d - 1:
            raise ValueError("need d - 1 interior ranks")
        if not self.algorithms:
            raise ValueError("need at least one algorithm")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {a!r}")
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if self.num_observed < 1:
            raise ValueError("oversampling too small: no observations")

    @property
    def shape(self) -> Shape:
        return Shape.of(self.n, self.r)

    @property
    def num_observed(self) -> int:
        return int(round(self.oversampling * self.shape.manifold_dim))

    def per_mode_p(self) -> tuple:
        p = self.p
        if not hasattr(p[0], "__len__"):
            return tuple(tuple(float(v) for v in p) for _ in range(self.d))
        if len(p) != self.d:
            raise ValueError("need one distribution per mode")
        return tuple(tuple(float(v) for v in row) for row in p)

    def tr_config(self) -> TrustRegionConfig:
        kw = dict(self.trust_region)
        if self.max_time is not None and "max_time" not in kw:
            kw["max_time"] = self.max_time
        return TrustRegionConfig(**kw)

    @staticmethod
    def from_json(path) -> "ExperimentConfig":
        with open(path) as f:
            raw = json.load(f)
        known = {f_.name for f_ in ExperimentConfig.__dataclass_fields__.values()}
        extra = set(raw) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return ExperimentConfig(**raw)

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")


def _trial_seeds(master: int, trials: int) -> list:
    """(target, train, test, init) integer seeds per trial."""
    out = []
    for child in np.random.SeedSequence(master).spawn(trials):
        streams = child.spawn(4)
        out.append(tuple(int(s.generate_state(1, np.uint32)[0]) for s in streams))
    return out


def _converged(log, algo, grad_tol, cost_tol) -> bool:
    final = log.final
    if algo == "als":
        return final.cost <= cost_tol
    if final.grad_norm is None:
        return False
    tol = grad_tol if grad_tol is not None \
        else 1e-6 * max(1.0, log.rows[0].grad_norm)
    return final.grad_norm <= tol


def run_trial(cfg: ExperimentConfig, trial: int, out_dir) -> dict:
    """One seeded trial: fresh target, observation sets and initial point,
    then every configured algorithm from that same initial point."""
    out_dir = Path(out_dir)
    shape = cfg.shape
    seed_target, seed_train, seed_test, seed_init = \
        _trial_seeds(cfg.seed, cfg.trials)[trial]
    target = random_tt(shape, seed=seed_target)
    p = cfg.per_mode_p()
    train_idx = cp.sample_indices(
        cp.SamplingSpec(p, cfg.num_observed, seed_train), shape.n)
    test_idx = cp.sample_indices(
        cp.SamplingSpec(p, cfg.num_observed, seed_test), shape.n)
    problem = cp.CompletionProblem(cp.observe(target, train_idx),
                                   cp.observe(target, test_idx))
    X0 = random_tt(shape, seed=seed_init)

    tr = cfg.tr_config()
    data_energy = 0.5 * float(problem.train.values @ problem.train.values)
    cost_tol = 1e-18 * max(data_energy, 1.0)

    info = {"trial": trial, "seeds": [seed_target, seed_train, seed_test,
                                      seed_init], "algos": {}}
    if cfg.condition_max_iter > 0:
        Tp, tfac = prepare_base(target)
        est = cp.condition_estimate(Tp, problem, factors=tfac,
                                    max_iter=cfg.condition_max_iter,
                                    seed=seed_target)
        info["target_condition"] = {
            "lam_max": est.lam_max, "lam_min_pos": est.lam_min_pos,
            "kappa": est.kappa, "converged": est.converged,
            "iterations": est.iterations, "dim": est.dim,
        }
    for algo in cfg.algorithms:
        t0 = time.perf_counter()
        if algo == "rtr":
            _, log = rtr_minimize(problem, X0, tr, hess_mode="exact",
                                  trial=trial)
        elif algo == "fdtr":
            _, log = rtr_minimize(problem, X0, tr, hess_mode="fd",
                                  trial=trial)
        elif algo == "rcg":
            _, log = rcg_minimize(problem, X0, tr, trial=trial)
        else:
            _, log = als_minimize(problem, X0, sweeps=cfg.sweeps,
                                  max_time=tr.max_time, trial=trial)
        log.write_csv(out_dir / f"trial{trial:02d}_{algo}.csv")
        final = log.final
        info["algos"][algo] = {
            "iterations": final.it,
            "wall_s": time.perf_counter() - t0,
            "final_cost": final.cost,
            "final_test_cost": final.test_cost,
            "final_grad_norm": final.grad_norm,
            "converged": _converged(log, algo, tr.grad_tol, cost_tol),
        }
    return info


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs=1) -> Path:
    """Run all trials (optionally in parallel) and write CSVs plus a
    summary JSON; fully determined by (config, seed) except for the
    wall-clock columns."""
    out_dir = Path(out_dir if out_dir is not None else (cfg.out or "run"))
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.to_json(out_dir / "config.json")
    shape = cfg.shape
    if jobs > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futures = [ex.submit(run_trial, cfg, t, out_dir)
                       for t in range(cfg.trials)]
            trials = [f.result() for f in futures]
    else:
        trials = [run_trial(cfg, t, out_dir) for t in range(cfg.trials)]
    summary = {
        "manifold_dim": shape.manifold_dim,
        "num_observed": cfg.num_observed,
        "oversampling": cfg.num_observed / shape.manifold_dim,
        "sampling_ratio": cfg.num_observed / shape.num_elements,
        "trials": trials,
    }
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return out_dir


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------

_METRICS = {"cost": "cost", "test_cost": "test_cost", "grad_norm": "grad_norm"}


def emit_plot_data(run_dir, out_dir=None) -> list:
    """Tidy per-metric series files: one row per logged iteration carrying
    both axes (iteration and time), one series per (trial, algorithm).
    Gradient norms are omitted for algorithms that do not define them."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir
    logs = sorted(run_dir.glob("trial*_*.csv"))
    if not logs:
        raise FileNotFoundError(f"no trial CSVs under {run_dir}")
    rows = []
    for path in logs:
        with open(path) as f:
            rd = csv.DictReader(f)
            if rd.fieldnames != CSV_HEADER:
                raise ValueError(f"unexpected CSV schema in {path}")
            rows.extend(rd)
    written = []
    for metric, col in _METRICS.items():
        path = out_dir / f"plot_{metric}.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["trial", "algo", "iter", "time_s", "value"])
            for r in rows:
                if metric == "grad_norm" and r["algo"] == "als":
                    continue
                if r[col] == "":
                    continue
                w.writerow([r["trial"], r["algo"], r["iter"], r["time_s"],
                            r[col]])
        written.append(path)
    return written
