"""Monte Carlo campaigns over placements x realizations x methods x sweeps."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import channel as ch
from .channel_io import export_channels, import_channels
from .combiner import compose_sim, dpa_mrc, dpa_zf, matched_filter_phases
from .config import METHODS, ConfigError, ExperimentConfig, config_to_dict
from .geometry import PropagationStack, build_geometry, build_propagation_stack, dpa_positions
from .metrics import sinr
from .optim import OptimizerConfig, SumRateProblem, gradient_ascent, quasi_newton

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "method", "L", "P_T_dBm_per_m2", "placement", "realization", "user",
    "gamma", "rate_bits", "sum_rate_bits", "iterations", "seconds",
)
Z95 = 1.959963984540054


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrialResult:
    method: str
    L: int
    P_T_dbm: float
    placement_id: int
    realization_id: int
    gamma: tuple[float, ...]
    sum_rate: float
    iterations: int
    seconds: float

    def sort_key(self):
        return (METHODS.index(self.method), self.L, self.P_T_dbm, self.placement_id, self.realization_id)


@dataclass(frozen=True)
class Aggregate:
    method: str
    L: int
    P_T_dbm: float
    n: int
    mean_sum_rate: float
    ci95: float
    mean_throughput_bps: float


@dataclass
class ResultSet:
    trials: list[TrialResult]
    aggregates: list[Aggregate]

    def mean(self, method: str, L: int | None = None, P_T_dbm: float | None = None) -> float:
        for a in self.aggregates:
            if a.method == method and (L is None or a.L == L) and (P_T_dbm is None or a.P_T_dbm == P_T_dbm):
                return a.mean_sum_rate
        raise KeyError((method, L, P_T_dbm))


# ---------------------------------------------------------------- scenario


class Scenario:
    """Everything derived from the configuration that does not depend on the trial."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        c = config.constants
        self.wavelength = c.wavelength
        g = config.geometry
        self.aperture = g.aperture_wavelengths * self.wavelength
        self.pitch = g.cell_pitch_wavelengths * self.wavelength
        self.thickness = g.thickness_wavelengths * self.wavelength
        hw = config.hardware
        self.cell_area = hw.cell_effective_area or self.pitch**2
        self.sigma2_rf = ch.rf_noise_power(c.bandwidth, hw.T_bs, hw.noise_figure_db)
        self.sigma2_ant_cell = ch.antenna_noise_power(self.cell_area, self.wavelength, c.bandwidth, hw.T_env)
        self.sigma2_ant_patch = ch.antenna_noise_power(
            hw.patch_effective_area, self.wavelength, c.bandwidth, hw.T_env
        )
        # SIM backplane and equal-RF DPA both carry one RF chain per user
        self.M = config.users
        self._stacks: dict[int, PropagationStack] = {}
        self._sim_corr = None
        self._dpa: dict[str, tuple[np.ndarray, ch.CorrelationModel]] = {}

    def stack(self, L: int) -> PropagationStack:
        if L not in self._stacks:
            geo = self.geometry(L)
            self._stacks[L] = build_propagation_stack(
                geo,
                self.config.constants,
                normalization=self.config.geometry.propagation_normalization,
                dpa_capture_area=self.config.hardware.patch_effective_area,
            )
        return self._stacks[L]

    def geometry(self, L: int):
        return build_geometry(
            self.config.constants, self.aperture, self.pitch, L, self.thickness, self.M,
            dipole_axis=self.config.geometry.dipole_axis,
        )

    @property
    def N(self) -> int:
        return int(round(self.aperture / self.pitch)) ** 2

    def sim_correlation(self) -> ch.CorrelationModel:
        # layers share the same in-plane grid, so one correlation serves every L
        if self._sim_corr is None:
            self._sim_corr = ch.build_correlation(self.geometry(1).outer_layer_positions, self.wavelength)
        return self._sim_corr

    def dpa_array(self, method: str):
        if method not in self._dpa:
            if method == "dpa_equal_aperture":
                side = int(round(self.aperture / (self.wavelength / 2.0)))
                pos = dpa_positions(side * side, self.wavelength, self.aperture, "grid_half_wavelength")
            else:
                pos = dpa_positions(self.M, self.wavelength, self.aperture, "linear_half_wavelength")
            self._dpa[method] = (pos, ch.build_correlation(pos, self.wavelength))
        return self._dpa[method]

    def sim_noise(self, P_T_dbm: float) -> ch.NoiseBudget:
        return ch.NoiseBudget(
            sigma2_ant=self.sigma2_ant_cell,
            sigma2_rf=self.sigma2_rf,
            P_T=ch.dbm_per_m2_to_w(P_T_dbm),
            A_eff=self.cell_area,
            T_sim=self.config.hardware.T_sim,
        )

    def dpa_noise(self, P_T_dbm: float) -> ch.NoiseBudget:
        return ch.NoiseBudget(
            sigma2_ant=self.sigma2_ant_patch,
            sigma2_rf=self.sigma2_rf,
            P_T=ch.dbm_per_m2_to_w(P_T_dbm),
            A_eff=self.config.hardware.patch_effective_area,
        )

    def users(self, placement_id: int):
        cfg = self.config
        rng = ch.rng_stream(cfg.master_seed, ch.STREAM_PLACEMENT, placement_id)
        pos = ch.place_users(
            cfg.users, rng, cfg.placement.min_distance, cfg.placement.max_distance, cfg.placement.height_offset
        )
        beta = ch.path_loss(np.linalg.norm(pos, axis=1), cfg.path_loss.exponent, cfg.path_loss.reference_loss_db)
        return pos, beta

    def sim_channel(self, placement_id: int, realization_id: int) -> ch.ChannelEnsemble:
        pos, beta = self.users(placement_id)
        rng = ch.rng_stream(self.config.master_seed, ch.STREAM_SIM_CHANNEL, placement_id, realization_id)
        return ch.build_channel(
            self.sim_correlation(), beta, self.sim_noise(0.0), rng,
            user_positions=pos, placement_id=placement_id, realization_id=realization_id,
        )

    def dpa_channel(self, method: str, placement_id: int, realization_id: int) -> np.ndarray:
        pos, beta = self.users(placement_id)
        _, corr = self.dpa_array(method)
        rng = ch.rng_stream(self.config.master_seed, ch.STREAM_DPA_CHANNEL, placement_id, realization_id)
        return ch.build_channel(
            corr, beta, self.dpa_noise(0.0), rng, amplitude_scale=np.sqrt(self.config.hardware.dpa_efficiency)
        ).H

    def optimizer_config(self, method: str) -> OptimizerConfig:
        o = self.config.optimizer
        common = dict(
            backtrack_factor=o.backtrack_factor,
            armijo_c=o.armijo_c,
            rel_improvement_tol=o.rel_improvement_tol,
            patience=o.patience,
            seed=None,
        )
        if method == "sim_ga":
            extra = {} if o.alpha_init is None else {"alpha_init": o.alpha_init}
            return OptimizerConfig.gradient_ascent_defaults(
                self.config.users, max_iterations=o.ga_iterations, mirror_probe=o.mirror_probe, **common, **extra
            )
        return OptimizerConfig.quasi_newton_defaults(max_iterations=o.qn_iterations, memory=o.qn_memory, **common)


# ---------------------------------------------------------------- trials


def _check_finite(result: TrialResult) -> TrialResult:
    if not (np.isfinite(result.sum_rate) and np.all(np.isfinite(result.gamma))):
        raise NumericalError(
            f"non-finite rate for {result.method} L={result.L} P_T={result.P_T_dbm} "
            f"placement={result.placement_id} realization={result.realization_id}"
        )
    return result


def run_unit(scenario: Scenario, L: int, placement_id: int, realization_id: int, channels=None) -> list[TrialResult]:
    """All methods and powers for one (L, placement, realization) cell."""
    cfg = scenario.config
    timing = cfg.record_timing
    results = []
    sim_methods = [m for m in cfg.methods if m.startswith("sim_")]
    if sim_methods:
        ens = channels if channels is not None else scenario.sim_channel(placement_id, realization_id)
        H = ens.H
        U = scenario.sim_correlation().factor
        stack = scenario.stack(L)
        init_rng = ch.rng_stream(cfg.master_seed, ch.STREAM_INIT, placement_id, realization_id, L)
        init = init_rng.uniform(0.0, 2.0 * np.pi, size=(L, stack.N))
        mf_user = int(init_rng.integers(cfg.users))
    for P_T_dbm in cfg.pt_dbm_per_m2:
        for method in cfg.methods:
            t0 = time.perf_counter()
            iterations = 0
            if method.startswith("sim_"):
                noise = scenario.sim_noise(P_T_dbm)
                if method == "sim_mf":
                    phases = matched_filter_phases(stack, H, mf_user)
                    report = sinr(compose_sim(stack, phases, noise.T_sim), H, noise, U)
                else:
                    opt = scenario.optimizer_config(method)
                    run = gradient_ascent if method == "sim_ga" else quasi_newton
                    phases, trace = run(stack, H, noise, opt, init=init, U=U)
                    iterations = trace.iterations
                    report = sinr(compose_sim(stack, phases, noise.T_sim), H, noise, U)
            else:
                noise = scenario.dpa_noise(P_T_dbm)
                Hd = scenario.dpa_channel(method, placement_id, realization_id)
                _, corr = scenario.dpa_array(method)
                G = dpa_mrc(Hd) if cfg.users == 1 else dpa_zf(Hd)
                report = sinr(G, Hd, noise, corr.factor, digital=True)
            seconds = time.perf_counter() - t0 if timing else float("nan")
            results.append(_check_finite(TrialResult(
                method=method, L=L, P_T_dbm=float(P_T_dbm), placement_id=placement_id,
                realization_id=realization_id, gamma=tuple(float(g) for g in report.gamma),
                sum_rate=report.sum_rate, iterations=iterations, seconds=seconds,
            )))
    return results


@lru_cache(maxsize=4)
def _worker_scenario(config_json: str) -> Scenario:
    from .config import config_from_dict

    return Scenario(config_from_dict(json.loads(config_json)))


def _run_unit_remote(config_json: str, L: int, p: int, r: int, ensemble):
    return run_unit(_worker_scenario(config_json), L, p, r, ensemble)


def _imported_channels(scenario: Scenario) -> dict:
    cfg = scenario.config
    ensembles = import_channels(cfg.channel_source.path, expected_N=scenario.N, expected_K=cfg.users)
    return {(e.placement_id, e.realization_id): e for e in ensembles}


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> ResultSet:
    config.validate()
    scenario = Scenario(config)
    workers = workers or config.workers
    imported = _imported_channels(scenario) if config.channel_source.kind == "import" else None
    units = []
    for L in config.layers:
        for p in range(config.placements):
            for r in range(config.realizations_per_placement):
                ens = None
                if imported is not None:
                    if (p, r) not in imported:
                        raise ConfigError(
                            "channel_source.path", f"channel file has no ensemble for placement {p}, realization {r}"
                        )
                    ens = imported[(p, r)]
                units.append((L, p, r, ens))

    trials: list[TrialResult] = []
    if workers == 1:
        for L, p, r, ens in units:
            trials.extend(run_unit(scenario, L, p, r, ens))
    else:
        payload = json.dumps(config_to_dict(config))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_unit_remote, payload, L, p, r, ens) for L, p, r, ens in units]
            for fut in futures:
                trials.extend(fut.result())
    trials.sort(key=TrialResult.sort_key)
    return ResultSet(trials=trials, aggregates=aggregate(trials, config.constants.bandwidth))


def aggregate(trials: Iterable[TrialResult], bandwidth: float) -> list[Aggregate]:
    groups: dict[tuple, list[float]] = {}
    for t in trials:
        groups.setdefault((t.method, t.L, t.P_T_dbm), []).append(t.sum_rate)
    out = []
    for (method, L, P), rates in sorted(groups.items(), key=lambda kv: (METHODS.index(kv[0][0]), *kv[0][1:])):
        x = np.asarray(rates)
        ci = Z95 * x.std(ddof=1) / np.sqrt(x.size) if x.size > 1 else float("nan")
        mean = float(x.mean())
        out.append(Aggregate(method, L, P, int(x.size), mean, float(ci), mean * bandwidth))
    return out


def sweep_layers(config: ExperimentConfig, workers: int | None = None) -> ResultSet:
    """Rate vs. number of layers at the first configured transmit power."""
    fixed = dataclasses.replace(config, pt_dbm_per_m2=config.pt_dbm_per_m2[:1])
    return run_experiment(fixed, workers)


def sweep_power(config: ExperimentConfig, workers: int | None = None) -> ResultSet:
    """Rate vs. transmit power at the first configured layer count."""
    fixed = dataclasses.replace(config, layers=config.layers[:1])
    return run_experiment(fixed, workers)


# ---------------------------------------------------------------- gradient check


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    per_instance: list[tuple[int, int, int, float]]  # (L, N, K, max rel error)
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tolerance)


def random_instance(rng: np.random.Generator, config: ExperimentConfig, L: int, side: int, K: int):
    """A small stack/channel/noise triple scaled so every term of the SINR is of order one."""
    c = config.constants
    lam = c.wavelength
    pitch = lam / 4.0
    dpa = [[(k - (K - 1) / 2.0) * pitch / 2.0, 0.0, 0.0] for k in range(K)]
    geo = build_geometry(c, side * pitch, pitch, L, config.geometry.thickness_wavelengths * lam, K, dpa_layout=dpa)
    stack = build_propagation_stack(geo, c, normalization="capture_area")
    corr = ch.build_correlation(geo.outer_layer_positions, lam)
    H = corr.factor @ ch.standard_complex_normal(rng, (side * side, K))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=(L, side * side))
    probe = SumRateProblem(stack, H, ch.NoiseBudget(1.0, 1.0, 1.0, 1.0, 0.7), corr.factor)
    gain = float(np.mean(np.abs(probe.combiner_rows(theta)) ** 2)) * side * side
    noise = ch.NoiseBudget(
        sigma2_ant=rng.uniform(0.1, 1.0), sigma2_rf=gain * rng.uniform(0.1, 1.0),
        P_T=rng.uniform(0.5, 2.0), A_eff=pitch**2, T_sim=0.7,
    )
    return stack, H, noise, corr.factor, theta


def finite_difference_gradient(fun: Callable[[np.ndarray], float], theta: np.ndarray, h: float) -> np.ndarray:
    grad = np.empty_like(theta)
    for idx in np.ndindex(*theta.shape):
        e = np.zeros_like(theta)
        e[idx] = h
        grad[idx] = (fun(theta + e) - fun(theta - e)) / (2.0 * h)
    return grad


def gradient_check(config: ExperimentConfig, perturb: Callable[[np.ndarray], np.ndarray] | None = None) -> GradCheckReport:
    """Analytic vs. central-difference gradient on random small instances.

    ``perturb`` is applied to each analytic gradient before comparison (negative controls).
    """
    gc = config.grad_check
    rng = np.random.default_rng(gc.seed)
    rows = []
    for _ in range(gc.instances):
        L = int(rng.integers(1, gc.max_layers + 1))
        side = int(rng.integers(2, gc.max_grid_side + 1))
        K = int(rng.integers(1, gc.max_users + 1))
        stack, H, noise, U, theta = random_instance(rng, config, L, side, K)
        problem = SumRateProblem(stack, H, noise, U)
        analytic = problem.value_and_gradient(theta)[1]
        if perturb is not None:
            analytic = perturb(analytic)
        fd = finite_difference_gradient(problem.value, theta, gc.step)
        err = float(np.max(np.abs(analytic - fd) / (1e-8 + np.abs(fd))))
        rows.append((L, side * side, K, err))
    return GradCheckReport(max(r[3] for r in rows), rows, gc.tolerance)


# ---------------------------------------------------------------- output


def _fmt(x: float) -> str:
    return "" if x != x else repr(float(x))  # NaN -> empty cell


def results_csv(results: ResultSet) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for t in results.trials:
        for k, g in enumerate(t.gamma):
            writer.writerow([
                t.method, t.L, _fmt(t.P_T_dbm), t.placement_id, t.realization_id, k,
                _fmt(g), _fmt(np.log2(1.0 + g)), _fmt(t.sum_rate), t.iterations, _fmt(t.seconds),
            ])
    return buf.getvalue()


def aggregates_csv(results: ResultSet) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "L", "P_T_dBm_per_m2", "n", "mean_sum_rate_bits", "ci95_bits", "mean_throughput_bps"])
    for a in results.aggregates:
        writer.writerow([a.method, a.L, _fmt(a.P_T_dbm), a.n, _fmt(a.mean_sum_rate), _fmt(a.ci95),
                         _fmt(a.mean_throughput_bps)])
    return buf.getvalue()


def summary_dict(results: ResultSet, config: ExperimentConfig) -> dict:
    return {
        "config": config_to_dict(config),
        "aggregates": [
            {**dataclasses.asdict(a), "ci95": None if a.ci95 != a.ci95 else a.ci95}
            for a in results.aggregates
        ],
    }


def write_outputs(results: ResultSet, config: ExperimentConfig, out_dir, fmt: str = "csv",
                  plot_name: str | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        path = out / "results.csv"
        path.write_text(results_csv(results))
    else:
        path = out / "results.json"
        rows = [
            {**dataclasses.asdict(t), "gamma": list(t.gamma),
             "seconds": None if t.seconds != t.seconds else t.seconds}
            for t in results.trials
        ]
        path.write_text(json.dumps(rows, indent=1, sort_keys=True))
    written.append(path)
    summary = out / "summary.json"
    summary.write_text(json.dumps(summary_dict(results, config), indent=1, sort_keys=True))
    written.append(summary)
    if plot_name:
        plot = out / f"{plot_name}.csv"
        plot.write_text(aggregates_csv(results))
        written.append(plot)
    return written


def generate_channels(config: ExperimentConfig) -> list[ch.ChannelEnsemble]:
    scenario = Scenario(config.validate())
    return [
        scenario.sim_channel(p, r)
        for p in range(config.placements)
        for r in range(config.realizations_per_placement)
    ]


def export_config_channels(config: ExperimentConfig, path) -> int:
    ensembles = generate_channels(config)
    export_channels(ensembles, path)
    return len(ensembles)
