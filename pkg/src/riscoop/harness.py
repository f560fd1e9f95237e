"""Monte-Carlo experiment runner and plot-ready CSV emission.

Every runner expands an :class:`ExperimentPlan` into a deterministic
list of trials, derives one seed tuple per trial from the master seed,
and reduces results in trial-index order, so a plan is a pure function
of (plan, master seed) regardless of worker count.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import toml

from .bounds import bound_report
from .channel import channel_params, synthesize
from .errors import NumericalError, ValidationError
from .estimators import SpatialGrid, estimate_channel_params
from .locate import locate_ues
from .pairs import ordered_pairs, unordered_pairs
from .profiles import directional_codebook, random_codebook
from .scenario import Scenario, load_scenario_file, scenario_from_config
from .seeding import rng_from

__all__ = [
    "ExperimentPlan", "ResultTable", "plan_from_file", "simulate_trial",
    "measurement_weights", "run_power_sweep", "run_profile_ecdf", "run_heatmap",
    "run_uncertainty_sweep", "run_multipath", "run_ue_count",
]

ROOM_BOX = ((0.0, 7.0), (-3.5, 3.5), (-2.0, 2.0))        # m, default scatter volume
UE_BOX = ((1.0, 11.0), (-6.0, 6.0), (-2.0, 2.0))         # m, random UE placement


@dataclass
class ExperimentPlan:
    """Declarative description of one sweep."""

    scenario: Scenario
    axis: str
    axis_values: list
    codebook: str = "random"
    n_profiles: int = 1
    n_noise: int = 1
    master_seed: int = 0
    target_ue: int = 0
    options: dict = field(default_factory=dict)


def plan_from_file(path) -> ExperimentPlan:
    """Load a plan file: a [plan] table plus an inline or referenced scenario."""
    with open(path, "r", encoding="utf-8") as fh:
        config = toml.load(fh)
    if "plan" not in config:
        raise ValidationError("plan file needs a [plan] section")
    plan = dict(config.pop("plan"))
    if "scenario_file" in plan:
        scenario = load_scenario_file(plan.pop("scenario_file"))
    else:
        scenario = scenario_from_config(config)
    return ExperimentPlan(
        scenario=scenario,
        axis=plan.pop("axis"),
        axis_values=list(plan.pop("values")),
        codebook=plan.pop("codebook", "random"),
        n_profiles=int(plan.pop("n_profiles", 1)),
        n_noise=int(plan.pop("n_noise", 1)),
        master_seed=int(plan.pop("master_seed", 0)),
        target_ue=int(plan.pop("target_ue", 0)),
        options=plan.pop("options", {}) | plan,
    )


class ResultTable:
    """Rows of (axis_value, ue_or_param, metric, value, n_trials, profile_id)."""

    COLUMNS = ("axis_value", "ue_or_param", "metric", "value", "n_trials", "profile_id")

    def __init__(self):
        self.rows = []

    def add(self, axis_value, name: str, metric: str, value: float,
            n_trials: int = 1, profile_id: int = -1):
        self.rows.append((axis_value, name, metric, float(value), int(n_trials),
                          int(profile_id)))

    def extend(self, other: "ResultTable"):
        self.rows.extend(other.rows)

    def values(self, metric: str, name: str = None) -> list:
        return [r[3] for r in self.rows
                if r[2] == metric and (name is None or r[1] == name)]

    def lookup(self, axis_value, name: str, metric: str) -> float:
        for r in self.rows:
            if r[0] == axis_value and r[1] == name and r[2] == metric:
                return r[3]
        raise KeyError((axis_value, name, metric))

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for axis_value, name, metric, value, n_trials, profile_id in self.rows:
            writer.writerow([axis_value, name, metric, repr(value), n_trials, profile_id])
        return buf.getvalue()

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv_text())


# -- shared trial machinery --------------------------------------------------


def _schedule(scenario: Scenario, kind: str, seed, prior=None):
    if kind == "random":
        return random_codebook(scenario, seed)
    if kind == "directional":
        return directional_codebook(scenario, prior=prior, seed=seed)
    raise ValidationError(f"unknown codebook kind: {kind}")


def pair_label(i: int, j: int) -> str:
    return f"{i + 1}{j + 1}"


def measurement_weights(report, pairs) -> np.ndarray:
    """Per-measurement variances from the bound report (crlb-diag weighting)."""
    var = []
    for i, j in pairs:
        std = report.crlb_std[(i, j)]
        var.extend([std[0] ** 2, std[1] ** 2, std[2] ** 2, std[3] ** 2])
    return np.array(var)


def simulate_trial(scenario: Scenario, schedule, seed, grid=None, projections=None,
                   n_fft=None, measurement_cov=None, d_search=None):
    """One synthesize -> estimate -> locate pass.

    Returns (measurements, estimate); raises NumericalError when the
    coarse search cannot place the UEs (deep below threshold).
    """
    obs = synthesize(scenario, schedule, seed)
    meas = estimate_channel_params(obs, scenario, schedule, n_fft=n_fft,
                                   grid=grid, projections=projections)
    est = locate_ues(meas, reference=scenario.reference_ue, d_search=d_search,
                     measurement_cov=measurement_cov,
                     speed_of_light=scenario.speed_of_light,
                     ris_center=scenario.ris_center)
    return meas, est


def _estimation_run(scenario, schedule, seeds, measurement_cov=None, d_search=None):
    """Measurement and position errors over noise draws.

    Returns (param_err, pos_err): param_err maps directed pairs to
    (n_draws, 4) signed errors of the pre-averaging estimates; pos_err
    is (n_draws, K) Euclidean refined-position errors with NaN rows for
    draws where positioning failed.
    """
    truth = channel_params(scenario)
    grid = SpatialGrid.for_scenario(scenario)
    projections = {i: grid.project(schedule.base_for(i)) for i in range(scenario.n_ues)}
    pair_err = {p: [] for p in ordered_pairs(scenario.n_ues)}
    pos_err = []
    for seed in seeds:
        obs = synthesize(scenario, schedule, seed)
        meas = estimate_channel_params(obs, scenario, schedule, grid=grid,
                                       projections=projections)
        for p, est in meas.directed.items():
            tv = truth[p]
            pair_err[p].append([est[0] - tv.tau_los, est[1] - tv.tau_ris,
                                est[2] - tv.xi, est[3] - tv.zeta])
        try:
            est = locate_ues(meas, reference=scenario.reference_ue,
                             d_search=d_search, measurement_cov=measurement_cov,
                             speed_of_light=scenario.speed_of_light,
                             ris_center=scenario.ris_center)
            pos_err.append(est.errors(scenario.ue_positions))
        except NumericalError:
            pos_err.append(np.full(scenario.n_ues, np.nan))
    return ({p: np.asarray(e) for p, e in pair_err.items()}, np.asarray(pos_err))


def _rmse(errors: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return np.sqrt(np.nanmean(np.square(errors), axis=0))


def _pmap(fn, tasks, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


# -- runners -----------------------------------------------------------------


def _power_point(task):
    scenario, schedule, power_dbm, n_noise, master_seed, axis_index = task
    sc = scenario.with_tx_power_dbm(power_dbm)
    report = bound_report(sc, schedule)
    table = ResultTable()
    k = sc.n_ues
    for i, j in ordered_pairs(k):
        std = report.crlb_std[(i, j)]
        for name, value in zip(("tau_los", "tau_ris", "xi", "zeta"), std[:4]):
            table.add(power_dbm, f"{name}_{pair_label(i, j)}", "crlb_std", value)
    for ue in range(k):
        table.add(power_dbm, f"ue{ue + 1}", "peb", report.peb[ue])
    non_ref = [u for u in range(k) if u != sc.reference_ue]
    for ceb, ue in zip(report.ceb, non_ref):
        table.add(power_dbm, f"ue{ue + 1}", "ceb", ceb)

    if n_noise > 0:
        weights = measurement_weights(report, unordered_pairs(k))
        seeds = [(master_seed, axis_index, d) for d in range(n_noise)]
        pair_err, pos_err = _estimation_run(sc, schedule, seeds, measurement_cov=weights)
        for (i, j), err in pair_err.items():
            rmse = _rmse(err)
            for name, value in zip(("tau_los", "tau_ris", "xi", "zeta"), rmse):
                table.add(power_dbm, f"{name}_{pair_label(i, j)}", "rmse", value,
                          n_trials=n_noise)
        pos_rmse = _rmse(pos_err)
        for ue in range(k):
            table.add(power_dbm, f"pos_ue{ue + 1}", "rmse", pos_rmse[ue], n_trials=n_noise)
        table.add(power_dbm, "position", "n_failed", int(np.isnan(pos_err[:, 0]).sum()),
                  n_trials=n_noise)
    return table


def run_power_sweep(plan: ExperimentPlan, workers: int = 1) -> ResultTable:
    """Bounds and estimator errors across transmit powers, one fixed profile."""
    schedule = _schedule(plan.scenario, plan.codebook, (plan.master_seed, 0))
    tasks = [(plan.scenario, schedule, p, plan.n_noise, plan.master_seed, idx)
             for idx, p in enumerate(plan.axis_values)]
    table = ResultTable()
    for part in _pmap(_power_point, tasks, workers):
        table.extend(part)
    return table


def _ecdf_rows(table: ResultTable, name: str, values):
    """One ecdf_point row per realization: axis is the cumulative probability."""
    order = np.sort(np.asarray(values))
    n = len(order)
    for rank, value in enumerate(order, start=1):
        table.add(rank / n, name, "ecdf_point", value, n_trials=n)


def _profile_point(task):
    scenario, codebook, profile, n_noise, master_seed, target_ue = task
    schedule = _schedule(scenario, codebook, (master_seed, profile))
    report = bound_report(scenario, schedule)
    table = ResultTable()
    table.add(profile, f"ue{target_ue + 1}", "peb", report.peb[target_ue],
              profile_id=profile)
    if n_noise > 0:
        weights = measurement_weights(report, unordered_pairs(scenario.n_ues))
        seeds = [(master_seed, profile, d) for d in range(n_noise)]
        _, pos_err = _estimation_run(scenario, schedule, seeds, measurement_cov=weights)
        table.add(profile, f"ue{target_ue + 1}", "rmse", _rmse(pos_err)[target_ue],
                  n_trials=n_noise, profile_id=profile)
    return table


def run_profile_ecdf(plan: ExperimentPlan, workers: int = 1) -> ResultTable:
    """Bound and estimator-error distributions over codebook realizations."""
    tasks = [(plan.scenario, plan.codebook, r, plan.n_noise, plan.master_seed,
              plan.target_ue) for r in range(plan.n_profiles)]
    table = ResultTable()
    for part in _pmap(_profile_point, tasks, workers):
        table.extend(part)
    name = f"ue{plan.target_ue + 1}"
    _ecdf_rows(table, f"peb_{name}", table.values("peb", name))
    if plan.n_noise > 0:
        _ecdf_rows(table, f"rmse_{name}", table.values("rmse", name))
    return table


def _uncertainty_point(task):
    scenario, sigma_unc, strategy, n_profiles, master_seed, strategy_id = task
    codebook, power_mode = strategy
    cov = sigma_unc * np.eye(3)
    pebs = []
    for r in range(n_profiles):
        prior = (scenario.prior_means, np.tile(cov, (scenario.n_ues, 1, 1)))
        schedule = _schedule(scenario, codebook, (master_seed, strategy_id, r),
                             prior=prior)
        sc = scenario
        if power_mode == "optimal":
            from .allocation import allocate_power
            alloc = allocate_power(sc, schedule, prior_means=scenario.prior_means)
            sc = sc.with_powers(alloc.powers)
        pebs.append(bound_report(sc, schedule).peb.mean())
    table = ResultTable()
    table.add(sigma_unc, f"{codebook}_{power_mode}", "avg_peb",
              float(np.mean(pebs)), n_trials=n_profiles)
    return table


DEFAULT_STRATEGIES = (("random", "uniform"), ("directional", "uniform"),
                      ("directional", "optimal"))


def run_uncertainty_sweep(plan: ExperimentPlan, workers: int = 1) -> ResultTable:
    """Average PEB versus prior uncertainty for the configured strategies."""
    strategies = [tuple(s) for s in plan.options.get("strategies", DEFAULT_STRATEGIES)]
    tasks = [(plan.scenario, sigma, strategy, plan.n_profiles, plan.master_seed, sid)
             for sigma in plan.axis_values
             for sid, strategy in enumerate(strategies)]
    table = ResultTable()
    for part in _pmap(_uncertainty_point, tasks, workers):
        table.extend(part)
    return table


def _heatmap_scenario(scenario: Scenario, axis: str, a: float, b: float, options: dict):
    if axis == "power_split":
        p1 = scenario.total_power / (1.0 + a + b)
        return scenario.with_powers([p1, a * p1, b * p1])
    if axis == "ris_position":
        return replace(scenario, ris_center=np.array([0.0, a, b]))
    if axis == "ue3_position":
        z = float(options.get("ue3_z", scenario.ue_positions[2, 2]))
        positions = scenario.ue_positions.copy()
        positions[2] = [a, b, z]
        return replace(scenario, ue_positions=positions, prior_means=None)
    raise ValidationError(f"unknown heatmap axis: {axis}")


def _heatmap_cell(task):
    scenario, axis, a, b, options, codebook, n_profiles, master_seed, target_ue = task
    sc = _heatmap_scenario(scenario, axis, a, b, options)
    sigma_unc = float(options.get("prior_sigma_m2", 0.5))
    cov = np.tile(sigma_unc * np.eye(3), (sc.n_ues, 1, 1))
    avg, target = [], []
    for r in range(n_profiles):
        schedule = _schedule(sc, codebook, (master_seed, r), prior=(sc.prior_means, cov))
        report = bound_report(sc, schedule)
        avg.append(report.peb.mean())
        target.append(report.peb[target_ue])
    table = ResultTable()
    label = f"{a!r}|{b!r}"
    table.add(label, "all", "avg_peb", float(np.mean(avg)), n_trials=n_profiles)
    table.add(label, f"ue{target_ue + 1}", "peb", float(np.mean(target)),
              n_trials=n_profiles)
    return table


def run_heatmap(plan: ExperimentPlan, workers: int = 1) -> ResultTable:
    """Bound maps over a 2D grid (power split, RIS position, or UE placement).

    ``plan.axis_values`` holds [a, b] grid points; alternatively the
    options carry ``axis_a``/``axis_b`` lists whose product is taken.
    """
    if plan.axis_values:
        points = [tuple(v) for v in plan.axis_values]
    else:
        axis_a = plan.options["axis_a"]
        axis_b = plan.options["axis_b"]
        points = [(a, b) for a in axis_a for b in axis_b]
    tasks = [(plan.scenario, plan.axis, a, b, plan.options, plan.codebook,
              plan.n_profiles, plan.master_seed, plan.target_ue)
             for a, b in points]
    table = ResultTable()
    for part in _pmap(_heatmap_cell, tasks, workers):
        table.extend(part)
    return table


def _sample_box(rng, box, n: int) -> np.ndarray:
    return np.column_stack([rng.uniform(lo, hi, n) for lo, hi in box])


def _multipath_point(task):
    scenario, rcs, profile, n_sps, box, n_noise, master_seed, target_ue, axis_index = task
    rng = rng_from(master_seed, axis_index, profile, 0xB0)
    sps = tuple(_sample_box(rng, box, n_sps) for _ in range(scenario.n_ues))
    sc = replace(scenario, sp_positions=sps, rcs=float(rcs))
    schedule = _schedule(sc, "random", (master_seed, profile))
    report = bound_report(sc, schedule)
    weights = measurement_weights(report, unordered_pairs(sc.n_ues))
    seeds = [(master_seed, axis_index, profile, d) for d in range(n_noise)]
    _, pos_err = _estimation_run(sc, schedule, seeds, measurement_cov=weights)
    table = ResultTable()
    table.add(rcs, f"ue{target_ue + 1}", "rmse", _rmse(pos_err)[target_ue],
              n_trials=n_noise, profile_id=profile)
    return table


def run_multipath(plan: ExperimentPlan, workers: int = 1) -> ResultTable:
    """Positioning-error distributions under uncontrolled scatter paths.

    Scatter points are redrawn per realization inside the room box; the
    estimators are unchanged and treat the extra paths as interference.
    """
    n_sps = int(plan.options.get("n_sps", 4))
    box = plan.options.get("box", ROOM_BOX)
    tasks = [(plan.scenario, rcs, r, n_sps, box, plan.n_noise, plan.master_seed,
              plan.target_ue, idx)
             for idx, rcs in enumerate(plan.axis_values)
             for r in range(plan.n_profiles)]
    table = ResultTable()
    for part in _pmap(_multipath_point, tasks, workers):
        table.extend(part)
    name = f"ue{plan.target_ue + 1}"
    for rcs in plan.axis_values:
        values = [r[3] for r in table.rows if r[0] == rcs and r[2] == "rmse"]
        _ecdf_rows(table, f"rmse_{name}_rcs{rcs!r}", values)
    return table


def _ue_count_point(task):
    scenario, k, profile, box, master_seed, axis_index = task
    rng = rng_from(master_seed, axis_index, profile, 0xCE)
    positions = _sample_box(rng, box, k)
    power = scenario.tx_powers[0]
    sc = replace(scenario, ue_positions=positions, clock_offsets=np.zeros(k),
                 tx_powers=np.full(k, power), total_power=float(k * power),
                 prior_means=None, prior_covs=None, sp_positions=None)
    prior = (positions, np.tile(1.5 * np.eye(3), (k, 1, 1)))
    table = ResultTable()
    for codebook in ("random", "directional"):
        schedule = _schedule(sc, codebook, (master_seed, axis_index, profile),
                             prior=prior)
        table.add(k, codebook, "peb", bound_report(sc, schedule).peb[0],
                  n_trials=1, profile_id=profile)
    return table


def run_ue_count(plan: ExperimentPlan, workers: int = 1) -> ResultTable:
    """First UE's bound versus the number of cooperating UEs.

    UE positions are redrawn uniformly in the placement box per
    realization; the per-UE transmit power is held at the base
    scenario's value.
    """
    box = plan.options.get("box", UE_BOX)
    tasks = [(plan.scenario, int(k), r, box, plan.master_seed, idx)
             for idx, k in enumerate(plan.axis_values)
             for r in range(plan.n_profiles)]
    table = ResultTable()
    for part in _pmap(_ue_count_point, tasks, workers):
        table.extend(part)
    for k in plan.axis_values:
        for codebook in ("random", "directional"):
            values = [r[3] for r in table.rows
                      if r[0] == int(k) and r[1] == codebook
                      and r[2] == "peb" and r[5] >= 0]
            table.add(int(k), f"{codebook}_mean", "peb", float(np.mean(values)),
                      n_trials=len(values))
    return table
