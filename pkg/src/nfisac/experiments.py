"""Scenario drops, baseline runners and Monte-Carlo sweeps.

Every trial derives its randomness from ``SeedSequence(seed, spawn_key=(trial,))``
and splits it into independent streams for users, scatterers and targets, so
changing the number of targets leaves the user geometry of a trial untouched.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .channel import PolarCoord, Scatterer, Scenario, build_scenario, rayleigh_distance, with_far_field
from .config import SystemConfig, dbm_to_mw
from .conic import SolverError
from .optimizer import PddOptions, Solution, evaluate_on, optimize, write_trace

log = logging.getLogger(__name__)

MIN_RANGE_M = 5.0
ANGLE_SPAN_DEG = 60.0
SCATTER_RANGE_M = (20.0, 30.0)

AXES = ("power_dbm", "n_rf", "n_users", "n_targets", "sense_rate_min")
SCHEMES = ("rsma_hybrid_nf", "rsma_fulldigital_nf", "sdma_hybrid_nf", "rsma_commonly_nf", "rsma_hybrid_ff")

SUMMARY_COLUMNS = ("scheme", "axis", "value", "power_dbm", "power_mw", "trials", "n_ok", "mean_rate",
                   "stderr_rate", "infeasible_count", "failed_count", "mean_outer_iters")
TRIAL_COLUMNS = ("scheme", "axis", "value", "trial", "status", "outer_iters", "residual_inf",
                 "from_incumbent")
TIMING_COLUMNS = ("scheme", "axis", "value", "trial", "wall_s")


# -- scenario generation -------------------------------------------------------

def _seed_seq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def trial_seed(seed: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(int(trial),))


def _stream(ss: np.random.SeedSequence, idx: int) -> np.random.Generator:
    child = np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (idx,))
    return np.random.default_rng(child)


def _polar(rng: np.random.Generator, n: int, lo: float, hi: float) -> list[PolarCoord]:
    r = rng.uniform(lo, hi, n)
    th = rng.uniform(-ANGLE_SPAN_DEG, ANGLE_SPAN_DEG, n)
    return [PolarCoord.from_degrees(a, b) for a, b in zip(r, th)]


def _distance(p: PolarCoord, q: PolarCoord) -> float:
    (x1, y1), (x2, y2) = p.xy, q.xy
    return float(np.hypot(x1 - x2, y1 - y2))


def gen_scenario(cfg: SystemConfig, seed=0, far_field: bool = False) -> Scenario:
    """Random drop inside the near-field region.

    Users and targets are uniform in range over ``(5 m, Rayleigh distance)``
    and in angle over ``(-60, 60)`` degrees; each user gets ``n_scatterers``
    scatterers uniform in ``(20, 30)`` m with the scatterer-user link length
    taken from the geometry.
    """
    ss = _seed_seq(seed)
    r_max = rayleigh_distance(cfg.aperture_m, cfg.wavelength_m)
    if r_max <= MIN_RANGE_M:
        raise ValueError(f"Rayleigh distance {r_max:.3g} m leaves no near-field region above {MIN_RANGE_M} m")
    users = _polar(_stream(ss, 0), cfg.n_users, MIN_RANGE_M, r_max)
    rng_s = _stream(ss, 1)
    scat = []
    for u in users:
        pts = _polar(rng_s, cfg.n_scatterers, *SCATTER_RANGE_M)
        scat.append([Scatterer(p, _distance(p, u)) for p in pts])
    targets = _polar(_stream(ss, 2), cfg.n_targets, MIN_RANGE_M, r_max)
    meta = {"entropy": str(ss.entropy), "spawn_key": list(ss.spawn_key)}
    return build_scenario(users, scat, targets, cfg, far_field=far_field, meta=meta)


# -- baselines -------------------------------------------------------------------

def scheme_setup(scheme: str, cfg: SystemConfig, opts: PddOptions) -> tuple[SystemConfig, PddOptions, bool]:
    """Configuration, optimizer flags and far-field switch of a named scheme."""
    if scheme == "rsma_hybrid_nf":
        return cfg, opts, False
    if scheme == "rsma_fulldigital_nf":
        return cfg, replace(opts, hybrid=False), False
    if scheme == "sdma_hybrid_nf":
        return cfg, replace(opts, common_stream=False), False
    if scheme == "rsma_commonly_nf":
        return cfg.replace(sense_rate_min_bps=0.0), opts, False
    if scheme == "rsma_hybrid_ff":
        return cfg, opts, True
    raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")


def as_full_digital(sol: Solution) -> Solution:
    """View a hybrid solution as a fully digital one with ``P = F W``."""
    return replace(sol, precoder=sol.delivered.copy(), beamformer=None, state=None)


def run_baseline(scheme: str, scenario: Scenario, cfg: SystemConfig, opts: PddOptions = PddOptions(),
                 warm: Solution | None = None, incumbent: Solution | None = None) -> Solution:
    """Run one scheme on one drop.

    ``warm``/``incumbent`` are forwarded to :func:`~nfisac.optimizer.optimize`;
    hybrid solutions passed to the fully digital scheme are converted with
    :func:`as_full_digital`. The far-field scheme is designed on plane-wave
    channels of the same geometry and then scored on the drop's own channels.
    """
    cfg_s, opts_s, far = scheme_setup(scheme, cfg, opts)
    if not opts_s.hybrid:
        warm = as_full_digital(warm) if warm is not None else None
        incumbent = as_full_digital(incumbent) if incumbent is not None else None
    if far and not scenario.far_field:
        sol = optimize(with_far_field(scenario, cfg_s), cfg_s, opts_s, warm=warm, incumbent=incumbent)
        return sol if sol.infeasible else evaluate_on(sol, scenario, cfg_s)
    return optimize(scenario, cfg_s, opts_s, warm=warm, incumbent=incumbent)


# -- sweeps ----------------------------------------------------------------------

@dataclass
class SweepSpec:
    axis: str
    values: list
    trials: int = 20
    seed: int = 0
    schemes: list = field(default_factory=lambda: ["rsma_hybrid_nf"])
    trace_trials: list = field(default_factory=lambda: [0])
    "Trials whose convergence trace is written out."
    workers: int = 1

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.values:
            raise ValueError("values must be non-empty")
        if list(self.values) != sorted(self.values):
            raise ValueError("values must be sorted")
        bad = set(self.schemes) - set(SCHEMES)
        if bad:
            raise ValueError(f"unknown schemes {sorted(bad)}")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def apply_axis(cfg: SystemConfig, axis: str, value) -> SystemConfig:
    if axis == "power_dbm":
        return cfg.replace(power_dbm=float(value))
    if axis == "sense_rate_min":
        return cfg.replace(sense_rate_min_bps=float(value))
    if axis in ("n_rf", "n_users", "n_targets"):
        return cfg.replace(**{axis: int(value)})
    raise ValueError(f"unknown axis {axis!r}")


@dataclass
class TrialOutcome:
    scheme: str
    value: float
    trial: int
    status: str
    rate: float
    outer_iters: int
    residual: float
    from_incumbent: bool
    wall_s: float
    report_row: list
    trace: list


def _ordered(schemes) -> list:
    # sdma before rsma_hybrid (warm start), rsma_hybrid before the schemes it seeds
    rank = {s: i for i, s in enumerate(("sdma_hybrid_nf", "rsma_hybrid_nf", "rsma_fulldigital_nf",
                                        "rsma_commonly_nf", "rsma_hybrid_ff"))}
    return sorted(schemes, key=rank.__getitem__)


def run_trial(cfg: SystemConfig, schemes, seed: int, trial: int, opts: PddOptions = PddOptions(),
              value=None) -> list[TrialOutcome]:
    """All schemes on one paired drop.

    Pairing: RSMA is warm-started from SDMA, and the fully digital and
    communication-only runs keep the hybrid RSMA solution as incumbent, so the
    feasible-set orderings hold trial by trial.
    """
    scenario = gen_scenario(cfg, trial_seed(seed, trial))
    opts = replace(opts, seed=int(trial_seed(seed, trial).generate_state(1)[0]))
    done: dict[str, Solution] = {}
    out = []
    for s in _ordered(schemes):
        warm = inc = None
        if s == "rsma_hybrid_nf" and "sdma_hybrid_nf" in done:
            warm = inc = done["sdma_hybrid_nf"]
        elif s in ("rsma_fulldigital_nf", "rsma_commonly_nf") and "rsma_hybrid_nf" in done:
            inc = done["rsma_hybrid_nf"]
            if inc.infeasible:
                inc = None
        t0 = time.perf_counter()
        try:
            sol = run_baseline(s, scenario, cfg, opts, warm=warm, incumbent=inc)
        except (SolverError, np.linalg.LinAlgError) as exc:
            log.warning("trial %d scheme %s failed: %s", trial, s, exc)
            out.append(TrialOutcome(s, value, trial, "failed", float("nan"), 0, float("nan"), False,
                                    time.perf_counter() - t0, [], []))
            continue
        done[s] = sol
        row = sol.report.csv_row() if sol.report is not None else []
        out.append(TrialOutcome(s, value, trial, sol.status, sol.max_min_rate if not sol.infeasible else float("nan"),
                                sol.outer_iters, sol.residual, sol.from_incumbent, sol.wall_s, row, sol.trace))
    return out


def _task(args):
    cfg_dict, schemes, seed, trial, value = args
    return run_trial(SystemConfig.from_dict(cfg_dict), schemes, seed, trial, value=value)


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list
    "One summary dict per (scheme, value), canonical order."
    trials: list
    "All :class:`TrialOutcome` records, canonical order."

    def table(self, scheme: str) -> list:
        return [r for r in self.rows if r["scheme"] == scheme]


def _summarize(spec: SweepSpec, cfg: SystemConfig, outcomes: list[TrialOutcome]) -> list:
    rows = []
    for s in spec.schemes:
        for v in spec.values:
            sel = [o for o in outcomes if o.scheme == s and o.value == v]
            ok = [o for o in sel if o.status not in ("infeasible", "failed")]
            rates = np.array([o.rate for o in ok])
            p_dbm = float(v) if spec.axis == "power_dbm" else apply_axis(cfg, spec.axis, v).power_max_dbm
            rows.append({
                "scheme": s, "axis": spec.axis, "value": v,
                "power_dbm": p_dbm, "power_mw": float(dbm_to_mw(p_dbm)),
                "trials": len(sel), "n_ok": len(ok),
                "mean_rate": float(rates.mean()) if ok else float("nan"),
                "stderr_rate": float(rates.std(ddof=1) / np.sqrt(len(ok))) if len(ok) > 1 else float("nan"),
                "infeasible_count": sum(o.status == "infeasible" for o in sel),
                "failed_count": sum(o.status == "failed" for o in sel),
                "mean_outer_iters": float(np.mean([o.outer_iters for o in ok])) if ok else float("nan"),
            })
    return rows


def run_sweep(spec: SweepSpec, cfg: SystemConfig, out_dir=None) -> SweepResult:
    """Run every (value, trial) pair and aggregate per (scheme, value).

    Infeasible trials are excluded from the means and counted; solver failures
    are counted separately. With ``out_dir`` the summary, per-trial, timing and
    convergence-trace CSVs are written there.
    """
    tasks = [(apply_axis(cfg, spec.axis, v).to_dict(), list(spec.schemes), spec.seed, t, v)
             for v in spec.values for t in range(spec.trials)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    order = {s: i for i, s in enumerate(spec.schemes)}
    vals = {v: i for i, v in enumerate(spec.values)}
    outcomes = sorted((o for r in results for o in r), key=lambda o: (order[o.scheme], vals[o.value], o.trial))
    res = SweepResult(spec, _summarize(spec, cfg, outcomes), outcomes)
    if out_dir is not None:
        write_sweep(res, out_dir)
    return res


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return v


def write_sweep(res: SweepResult, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    axis = res.spec.axis
    with open(os.path.join(out_dir, f"sweep_{axis}.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in res.rows:
            w.writerow([_fmt(r[c]) for c in SUMMARY_COLUMNS])
    from .rates import RATE_CSV_COLUMNS

    with open(os.path.join(out_dir, f"trials_{axis}.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIAL_COLUMNS + RATE_CSV_COLUMNS)
        for o in res.trials:
            w.writerow([o.scheme, axis, _fmt(o.value), o.trial, o.status, o.outer_iters, _fmt(o.residual),
                        int(o.from_incumbent)] + (o.report_row or [""] * len(RATE_CSV_COLUMNS)))
    with open(os.path.join(out_dir, f"timing_{axis}.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TIMING_COLUMNS)
        for o in res.trials:
            w.writerow([o.scheme, axis, _fmt(o.value), o.trial, f"{o.wall_s:.3f}"])
    flagged = set(res.spec.trace_trials)
    for o in res.trials:
        if o.trial in flagged and o.trace:
            path = os.path.join(out_dir, f"trace_{o.scheme}_{axis}{_fmt(o.value)}_t{o.trial}.csv")
            write_trace(path, Solution("", np.zeros((1, 1)), np.zeros(0), np.zeros((1, 1)), trace=o.trace))
    with open(os.path.join(out_dir, f"spec_{axis}.json"), "w") as fh:
        json.dump(res.spec.to_dict(), fh, indent=1)

