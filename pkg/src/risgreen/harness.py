"""Monte-Carlo experiment runner and the comparison baselines.

For every (sweep value, trial) pair one channel realization is drawn and
shared by all algorithms, so comparisons are paired. Work is split by
(sweep value, trial) across processes and merged back in key order, which
makes serial and parallel runs write identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import conic
from .admission import AdmissionParams, admission_control
from .beamform import solve_beamforming
from .netmodel import (
    ChannelRealization,
    ConfigError,
    RisConfiguration,
    SystemConfig,
    energy_efficiency,
    generate_channels,
    network_power,
)
from .ris_select import DcParams, NetworkPowerResult, minimize_network_power, optimize_fixed_set
from .zf import ZfParams, zf_minimize_power

log = logging.getLogger(__name__)

__all__ = [
    "ALGORITHMS",
    "SWEEP_VARIABLES",
    "CSV_HEADER",
    "ExperimentSpec",
    "TrialRecord",
    "ExperimentReport",
    "baseline_all_active",
    "baseline_random_phase",
    "baseline_no_ris",
    "baseline_exhaustive",
    "exhaustive_admission",
    "subset_feasible",
    "random_phases",
    "run_algorithm",
    "run_experiment",
]

ALGORITHMS = ("dc", "sdr", "zf", "exhaustive", "all_active", "random_phase", "no_ris")
ADMISSION_ALGORITHMS = ("dc", "exhaustive", "random_phase", "no_ris")
SWEEP_VARIABLES = ("sinr_threshold_db", "num_users", "num_ris")
MODES = ("power_min", "admission")
CSV_HEADER = ("trial", "algorithm", "sweep_value", "feasible", "active_ris_count", "transmit_mw",
              "ris_mw", "total_mw", "energy_efficiency", "admitted_count", "wall_time_ms")
MAX_EXHAUSTIVE_RIS = 6
MAX_EXHAUSTIVE_USERS = 6


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: SystemConfig
    sweep_variable: str = "sinr_threshold_db"
    sweep_values: tuple = (1.0,)
    algorithms: tuple = ("dc",)
    trials: int = 1
    mode: str = "power_min"
    seed: int | None = None  # overrides scenario.seed
    workers: int = 1
    timing: bool = False  # wall_time_ms is left blank unless set, so files are reproducible

    def __post_init__(self) -> None:
        set_ = object.__setattr__
        set_(self, "sweep_values", tuple(self.sweep_values))
        set_(self, "algorithms", tuple(self.algorithms))
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.sweep_values:
            raise ConfigError("sweep values must be nonempty")
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise ConfigError(f"unknown sweep variable {self.sweep_variable!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        allowed = ALGORITHMS if self.mode == "power_min" else ADMISSION_ALGORITHMS
        bad = [a for a in self.algorithms if a not in allowed]
        if bad or not self.algorithms:
            raise ConfigError(f"algorithms {bad or '[]'} not available in {self.mode} mode")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @property
    def base_config(self) -> SystemConfig:
        return self.scenario if self.seed is None else self.scenario.replace(seed=int(self.seed))

    def config_for(self, value) -> SystemConfig:
        cfg = self.base_config
        if self.sweep_variable == "sinr_threshold_db":
            return cfg.with_sinr_threshold_db(float(value))
        if self.sweep_variable == "num_users":
            return cfg.with_num_users(int(value))
        return cfg.with_num_ris(int(value))


@dataclass
class TrialRecord:
    trial: int
    algorithm: str
    sweep_value: float
    feasible: bool
    active_ris_count: int | None = None
    transmit_mw: float | None = None
    ris_mw: float | None = None
    total_mw: float | None = None
    energy_efficiency: float | None = None
    admitted_count: int | None = None
    wall_time_ms: float | None = None

    def row(self) -> list[str]:
        out = []
        for name in CSV_HEADER:
            value = getattr(self, name)
            if value is None:
                out.append("")
            elif isinstance(value, bool):
                out.append(str(int(value)))
            elif isinstance(value, float):
                out.append(repr(float(value)))
            else:
                out.append(str(value))
        return out


# ---------------------------------------------------------------------------
# baselines


def _result_from(ris: RisConfiguration, W, config: SystemConfig) -> NetworkPowerResult:
    if not W.feasible:
        return NetworkPowerResult(ris, W, None)
    return NetworkPowerResult(ris, W, network_power(ris, W, config))


def baseline_all_active(channels: ChannelRealization, config: SystemConfig, params: DcParams | None = None,
                        tol: conic.SolverTolerances | None = None) -> NetworkPowerResult:
    """Every RIS on; phases and beamformers alternate, no set search."""
    return optimize_fixed_set(channels, config, range(channels.num_ris), params, tol=tol)


def random_phases(channels: ChannelRealization, seed: int, trial_index: int) -> RisConfiguration:
    rng = np.random.default_rng([seed, trial_index, 0x0A5E])
    phases = tuple(np.exp(2j * np.pi * rng.random(n)) for n in channels.elements_per_ris)
    return RisConfiguration(frozenset(range(channels.num_ris)), phases)


def baseline_random_phase(channels: ChannelRealization, config: SystemConfig, trial_index: int,
                          tol: conic.SolverTolerances | None = None) -> NetworkPowerResult:
    """Every RIS on with i.i.d. uniform phases, beamformers optimized."""
    ris = random_phases(channels, config.seed, trial_index)
    return _result_from(ris, solve_beamforming(channels, ris, config, tol), config)


def baseline_no_ris(channels: ChannelRealization, config: SystemConfig,
                    tol: conic.SolverTolerances | None = None) -> NetworkPowerResult:
    ris = RisConfiguration.none_active(channels.elements_per_ris)
    return _result_from(ris, solve_beamforming(channels, ris, config, tol), config)


def baseline_exhaustive(channels: ChannelRealization, config: SystemConfig, params: DcParams | None = None,
                        tol: conic.SolverTolerances | None = None,
                        incumbent: NetworkPowerResult | None = None) -> NetworkPowerResult:
    """Least network power over every active-RIS set.

    Each set gets its own phase / beamforming alternation. The DC solution
    (``incumbent``, computed here if not given) is a candidate too, so the
    search never does worse than DC. Sets are visited in ascending RIS
    power, and the scan stops once the RIS power alone reaches the best
    total found.
    """
    L = channels.num_ris
    if L > MAX_EXHAUSTIVE_RIS:
        raise ValueError(f"exhaustive set search is limited to {MAX_EXHAUSTIVE_RIS} RISs")
    if incumbent is None:
        incumbent = minimize_network_power(channels, config, params, method="dc", tol=tol)
    ris_power = config.ris_power_mw
    subsets = [c for r in range(L + 1) for c in itertools.combinations(range(L), r)]
    subsets.sort(key=lambda s: (float(sum(ris_power[l] for l in s)), len(s), s))
    best = incumbent if incumbent.feasible and incumbent.power is not None else None
    trace = []
    for active in subsets:
        rp = float(sum(ris_power[l] for l in active))
        if best is not None and rp + config.static_power_mw >= best.power.total_mw:
            break
        res = optimize_fixed_set(channels, config, active, params, tol=tol)
        trace.append({"active": list(active), "total_mw": res.power.total_mw if res.power else None})
        if res.feasible and res.power is not None and (best is None or res.power.total_mw < best.power.total_mw):
            best = res
    if best is None:
        ris = RisConfiguration.all_active(channels.elements_per_ris)
        W = solve_beamforming(channels, ris, config, tol)
        return NetworkPowerResult(ris, W, None, trace)
    return NetworkPowerResult(best.ris, best.beamforming, best.power, trace)


def subset_feasible(channels: ChannelRealization, config: SystemConfig, users, params: DcParams | None = None,
                    tol: conic.SolverTolerances | None = None) -> NetworkPowerResult | None:
    """A feasible solution serving exactly ``users``, or ``None`` if none was found.

    Tries the direct link, all-ones phases, then the fixed-set phase /
    beamforming alternation with every RIS on.
    """
    users = list(users)
    if not users:
        return None
    ch, cfg = channels.subset_users(users), config.subset_users(users)
    for ris in (RisConfiguration.none_active(ch.elements_per_ris), RisConfiguration.all_active(ch.elements_per_ris)):
        W = solve_beamforming(ch, ris, cfg, tol)
        if W.feasible:
            return _result_from(ris, W, cfg)
    if ch.num_ris == 0:
        return None
    res = optimize_fixed_set(ch, cfg, range(ch.num_ris), params, tol=tol)
    return res if res.feasible else None


@dataclass
class ExhaustiveAdmission:
    admitted: tuple
    solution: NetworkPowerResult | None
    checked: int

    @property
    def admitted_count(self) -> int:
        return len(self.admitted)


def exhaustive_admission(channels: ChannelRealization, config: SystemConfig, params: DcParams | None = None,
                         tol: conic.SolverTolerances | None = None) -> ExhaustiveAdmission:
    """Largest user subset with a feasible joint solution (largest sizes first)."""
    K = channels.num_users
    if K > MAX_EXHAUSTIVE_USERS:
        raise ValueError(f"exhaustive user search is limited to {MAX_EXHAUSTIVE_USERS} users")
    checked = 0
    for size in range(K, 0, -1):
        for users in itertools.combinations(range(K), size):
            checked += 1
            res = subset_feasible(channels, config, users, params, tol)
            if res is not None:
                return ExhaustiveAdmission(users, res, checked)
    return ExhaustiveAdmission((), None, checked)


# ---------------------------------------------------------------------------
# single runs


def _power_record(trial, algorithm, value, channels, config, res: NetworkPowerResult) -> TrialRecord:
    if not res.feasible or res.power is None:
        return TrialRecord(trial, algorithm, value, False)
    p = res.power
    ee = energy_efficiency(channels, res.ris, res.beamforming, config) if p.total_mw > 0 else None
    return TrialRecord(trial, algorithm, value, True, len(res.ris.active), p.transmit_mw, p.ris_mw,
                       p.total_mw, ee)


def _admission_record(trial, algorithm, value, channels, config, admitted, ris, W) -> TrialRecord:
    count = len(admitted)
    if not count:
        return TrialRecord(trial, algorithm, value, False, admitted_count=0)
    users = list(admitted)
    ch, cfg = channels.subset_users(users), config.subset_users(users)
    p = network_power(ris, W, cfg)
    ee = energy_efficiency(ch, ris, W, cfg) if p.total_mw > 0 else None
    return TrialRecord(trial, algorithm, value, count == channels.num_users, len(ris.active),
                       p.transmit_mw, p.ris_mw, p.total_mw, ee, count)


def run_algorithm(algorithm: str, channels: ChannelRealization, config: SystemConfig, trial_index: int,
                  mode: str = "power_min", sweep_value: float = 0.0,
                  dc_params: DcParams | None = None, admission_params: AdmissionParams | None = None,
                  zf_params: ZfParams | None = None) -> TrialRecord:
    """One algorithm on one realization, as a record (without timing)."""
    if mode == "power_min":
        if algorithm == "dc":
            res = minimize_network_power(channels, config, dc_params, method="dc")
        elif algorithm == "sdr":
            res = minimize_network_power(channels, config, dc_params, method="sdr")
        elif algorithm == "zf":
            z = zf_minimize_power(channels, config, zf_params)
            res = NetworkPowerResult(z.ris, z.beamforming, z.power)
        elif algorithm == "exhaustive":
            res = baseline_exhaustive(channels, config, dc_params)
        elif algorithm == "all_active":
            res = baseline_all_active(channels, config, dc_params)
        elif algorithm == "random_phase":
            res = baseline_random_phase(channels, config, trial_index)
        elif algorithm == "no_ris":
            res = baseline_no_ris(channels, config)
        else:
            raise ValueError(f"unknown algorithm {algorithm!r}")
        return _power_record(trial_index, algorithm, sweep_value, channels, config, res)
    if mode != "admission":
        raise ValueError(f"unknown mode {mode!r}")
    if algorithm == "exhaustive":
        ex = exhaustive_admission(channels, config, dc_params)
        if ex.solution is None:
            return _admission_record(trial_index, algorithm, sweep_value, channels, config, (), None, None)
        return _admission_record(trial_index, algorithm, sweep_value, channels, config, ex.admitted,
                                 ex.solution.ris, ex.solution.beamforming)
    if algorithm == "dc":
        out = admission_control(channels, config, admission_params)
    elif algorithm == "random_phase":
        out = admission_control(channels, config, admission_params, optimize_phases=False,
                                ris=random_phases(channels, config.seed, trial_index))
    elif algorithm == "no_ris":
        out = admission_control(channels, config, admission_params, optimize_phases=False,
                                ris=RisConfiguration.none_active(channels.elements_per_ris))
    else:
        raise ValueError(f"algorithm {algorithm!r} has no admission variant")
    return _admission_record(trial_index, algorithm, sweep_value, channels, config, out.admitted,
                             out.ris, out.beamforming)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentReport:
    records: list
    failures: list
    cells: list
    metadata: dict

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in self.records:
            writer.writerow(rec.row())
        return buf.getvalue()

    def summary(self) -> dict:
        return {"metadata": self.metadata, "cells": self.cells, "failures": self.failures}

    def json_text(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    @property
    def all_failed(self) -> bool:
        return not self.records


def config_hash(config: SystemConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _run_unit(spec: ExperimentSpec, vi: int, trial: int):
    """All algorithms of one (sweep value, trial) pair on a shared realization."""
    value = spec.sweep_values[vi]
    config = spec.config_for(value)
    channels = generate_channels(config, trial)
    records, failures = [], []
    for algorithm in spec.algorithms:
        t0 = time.perf_counter()
        try:
            rec = run_algorithm(algorithm, channels, config, trial, spec.mode, float(value))
        except Exception as exc:  # recorded per trial, never aborting the sweep
            log.warning("trial %d, %s at %s failed: %s", trial, algorithm, value, exc)
            failures.append({"trial": trial, "algorithm": algorithm, "sweep_value": float(value),
                             "error": f"{type(exc).__name__}: {exc}"})
            continue
        if spec.timing:
            rec.wall_time_ms = (time.perf_counter() - t0) * 1e3
        records.append(rec)
    return vi, trial, records, failures


def _run_unit_star(args):
    return _run_unit(*args)


def _mean_se(values):
    vals = np.asarray([v for v in values if v is not None], float)
    if vals.size == 0:
        return None, None
    se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(vals.mean()), se


def _aggregate(spec: ExperimentSpec, records, failures) -> list:
    cells = []
    for value in spec.sweep_values:
        for algorithm in spec.algorithms:
            rows = [r for r in records if r.algorithm == algorithm and r.sweep_value == float(value)]
            feas = [r for r in rows if r.feasible]
            cell = {"sweep_value": float(value), "algorithm": algorithm, "records": len(rows),
                    "feasible": len(feas),
                    "failures": sum(1 for f in failures
                                    if f["algorithm"] == algorithm and f["sweep_value"] == float(value))}
            for name in ("active_ris_count", "transmit_mw", "ris_mw", "total_mw", "energy_efficiency"):
                cell[f"{name}_mean"], cell[f"{name}_stderr"] = _mean_se([getattr(r, name) for r in feas])
            if spec.mode == "admission":
                cell["admitted_count_mean"], cell["admitted_count_stderr"] = \
                    _mean_se([r.admitted_count for r in rows])
            if spec.timing:
                cell["wall_time_ms_median"] = float(np.median([r.wall_time_ms for r in rows])) if rows else None
            cells.append(cell)
    return cells


def run_experiment(spec: ExperimentSpec) -> ExperimentReport:
    units = [(spec, vi, t) for vi in range(len(spec.sweep_values)) for t in range(spec.trials)]
    if spec.workers > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_unit_star, units))
    else:
        results = [_run_unit(*u) for u in units]
    results.sort(key=lambda r: (r[0], r[1]))
    order = {a: i for i, a in enumerate(spec.algorithms)}
    records, failures = [], []
    for _, _, recs, fails in results:
        records.extend(sorted(recs, key=lambda r: order[r.algorithm]))
        failures.extend(fails)
    base = spec.base_config
    metadata = {"seed": base.seed, "config_hash": config_hash(base), "mode": spec.mode,
                "sweep_variable": spec.sweep_variable, "sweep_values": [float(v) for v in spec.sweep_values],
                "algorithms": list(spec.algorithms), "trials": spec.trials}
    return ExperimentReport(records, failures, _aggregate(spec, records, failures), metadata)
