"""Config-driven experiment scenarios and their artifact pipelines."""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from .allan import (
    AllanPlot,
    allan_pi,
    allan_plot,
    analytical_allan_clock,
    weight_long,
    weight_short,
    write_allan_plots,
)
from .control import (
    ControllerConfig,
    EemPolicy,
    destination_trajectory,
    default_collective_gain,
    default_obs_gain,
    sync_error,
    write_command_log_csv,
)
from .decomp import decompose, reconstruct_state
from .errors import ConfigError, ConvergenceError, NumericalError
from .filters import (
    determinate_kf_init,
    determinate_kf_step,
    solve_stationary,
    standard_kf_init,
    standard_kf_step,
    write_gains_json,
)
from .models import EnsembleModel, NoiseParams, build_ensemble, star_measurement
from .presets import (
    DEFAULT_COLLECTIVE_GAIN_COEFFS,
    DEFAULT_COLLECTIVE_PERIOD,
    DEFAULT_OBS_GAIN_COEFFS,
)
from .simkit import reference_timescale, simulate, write_trajectory_csv

__all__ = ["ScenarioConfig", "KINDS", "validate_config", "run_scenario"]

KINDS = (
    "free-run",
    "standard-kf",
    "standard-kf-suboptimal",
    "determinate-kf",
    "steer-to-clock",
    "sync-simple-average",
    "sync-best-short",
    "sync-best-long",
    "balanced",
)

KIND_SUMMARIES = {
    "free-run": "uncontrolled ensemble, per-clock Allan statistics",
    "standard-kf": "full-state filter, reference time scale and increment series",
    "standard-kf-suboptimal": "optimal vs averaged-covariance filter on shared noise",
    "determinate-kf": "decomposed filter equivalence against the full-state filter",
    "steer-to-clock": "synchronize every clock to the last clock (its input stays zero)",
    "sync-simple-average": "synchronize to the plain average of all clocks",
    "sync-best-short": "synchronize to the short-term optimal weighted mean",
    "sync-best-long": "synchronize to the long-term optimal weighted mean",
    "balanced": "synchronization plus periodic collective control of the mean",
}

# weights pinned by the scenario kind; None means the kind accepts a weight
_KIND_WEIGHT = {
    "steer-to-clock": "last-clock",
    "sync-simple-average": "uniform",
    "sync-best-short": "short",
    "sync-best-long": "long",
}

_CONTROLLER_KINDS = (
    "steer-to-clock",
    "sync-simple-average",
    "sync-best-short",
    "sync-best-long",
    "balanced",
)

_OUTPUTS = {
    "free-run": ("allan", "analytical", "summary", "trajectory"),
    "standard-kf": ("allan", "increments", "gains", "summary", "trajectory"),
    "standard-kf-suboptimal": ("allan", "summary"),
    "determinate-kf": ("equivalence", "increments", "summary"),
    "steer-to-clock": ("allan", "commands", "delta", "gains", "summary", "trajectory"),
    "sync-simple-average": ("allan", "commands", "delta", "gains", "summary", "trajectory"),
    "sync-best-short": ("allan", "commands", "delta", "gains", "summary", "trajectory"),
    "sync-best-long": ("allan", "commands", "delta", "gains", "summary", "trajectory"),
    "balanced": ("allan", "commands", "delta", "gains", "summary", "trajectory"),
}

_DEFAULT_OUTPUTS = {
    kind: tuple(sel for sel in sels if sel != "trajectory")
    for kind, sels in _OUTPUTS.items()
}


@dataclass(frozen=True)
class ScenarioConfig:
    """A validated, fully resolved scenario."""

    name: str
    kind: str
    model: EnsembleModel
    horizon: int
    seed: int
    weight: Optional[np.ndarray]
    controller: Optional[ControllerConfig]
    outputs: Tuple[str, ...]
    raw: dict


def _resolve_weight(spec, model: EnsembleModel, problems: List[str]) -> Optional[np.ndarray]:
    s1 = np.diag(model.Sigma1)
    s2 = np.diag(model.Sigma2)
    if isinstance(spec, str):
        if spec == "uniform":
            return np.full(model.N, 1.0 / model.N)
        if spec == "short":
            return weight_short(s1).q
        if spec == "long":
            return weight_long(s2).q
        if spec == "last-clock":
            q = np.zeros(model.N)
            q[-1] = 1.0
            return q
        problems.append(
            f"controller.weight: unknown name {spec!r} "
            "(use 'uniform', 'short', 'long', 'last-clock', or a list)"
        )
        return None
    try:
        q = np.asarray(spec, dtype=float)
    except (TypeError, ValueError):
        problems.append(f"controller.weight: not a number list: {spec!r}")
        return None
    if q.shape != (model.N,):
        problems.append(
            f"controller.weight: expected {model.N} entries, got shape {q.shape}"
        )
        return None
    if abs(q.sum() - 1.0) > 1e-9:
        problems.append(
            f"controller.weight: entries must sum to 1 (normalization), got {q.sum()!r}"
        )
        return None
    return q


def _build_model(raw_model, problems: List[str]) -> Optional[EnsembleModel]:
    if not isinstance(raw_model, dict):
        problems.append("model: must be an object")
        return None
    n = raw_model.get("n_clocks")
    tau = raw_model.get("tau", 1.0)
    if not isinstance(n, int) or n < 2:
        problems.append(f"model.n_clocks: integer >= 2 required, got {n!r}")
        return None
    if not isinstance(tau, (int, float)) or tau <= 0:
        problems.append(f"model.tau: positive number required, got {tau!r}")
        return None

    def float_list(key: str, length: int) -> Optional[np.ndarray]:
        val = raw_model.get(key)
        if val is None:
            problems.append(f"model.{key}: missing (need {length} values)")
            return None
        try:
            arr = np.asarray(val, dtype=float)
        except (TypeError, ValueError):
            problems.append(f"model.{key}: not a number list")
            return None
        if arr.shape != (length,):
            problems.append(f"model.{key}: expected {length} values, got shape {arr.shape}")
            return None
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            problems.append(f"model.{key}: values must be finite and >= 0")
            return None
        return arr

    sigma1 = float_list("sigma1", n)
    sigma2 = float_list("sigma2", n)
    meas_std = float_list("meas_std", n - 1)
    if sigma1 is None or sigma2 is None or meas_std is None:
        return None
    if np.any(meas_std <= 0):
        problems.append("model.meas_std: entries must be positive")
        return None
    try:
        params = [NoiseParams(a, b) for a, b in zip(sigma1, sigma2)]
        return build_ensemble(params, star_measurement(n), np.diag(meas_std**2), float(tau))
    except ValueError as exc:
        problems.append(f"model: {exc}")
        return None


def validate_config(raw) -> ScenarioConfig:
    """Parse and eagerly validate one scenario document.

    Accepts a dict or a JSON string.  Applies kind defaults (weights,
    gains, schedule) and runs every cheap structural check up front;
    all violations are reported together.
    """
    if isinstance(raw, (str, bytes)):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be an object"])

    problems: List[str] = []
    name = raw.get("name")
    if not isinstance(name, str) or not name or any(c in name for c in "/\\"):
        problems.append(f"name: nonempty string without path separators required, got {name!r}")
        name = "invalid"
    kind = raw.get("kind")
    if kind not in KINDS:
        problems.append(f"kind: must be one of {', '.join(KINDS)}; got {kind!r}")
        raise ConfigError(problems)

    model = _build_model(raw.get("model"), problems)

    horizon = raw.get("horizon")
    if not isinstance(horizon, int) or horizon < 4:
        problems.append(f"horizon: integer >= 4 required, got {horizon!r}")
        horizon = 4
    seed = raw.get("seed")
    if not isinstance(seed, int) or seed < 0:
        problems.append(f"seed: nonnegative integer required, got {seed!r}")
        seed = 0

    ctrl_raw = raw.get("controller", {})
    if not isinstance(ctrl_raw, dict):
        problems.append("controller: must be an object")
        ctrl_raw = {}
    known_ctrl = {
        "weight",
        "obs_gain_coeffs",
        "collective_gain_coeffs",
        "period",
        "phase",
    }
    for key in ctrl_raw:
        if key not in known_ctrl:
            problems.append(f"controller.{key}: unknown setting")

    weight: Optional[np.ndarray] = None
    controller: Optional[ControllerConfig] = None
    uses_weight = kind in _CONTROLLER_KINDS or kind == "determinate-kf"
    if not uses_weight and ctrl_raw:
        problems.append(f"controller: settings are not used by kind {kind!r}")

    if model is not None and uses_weight:
        pinned = _KIND_WEIGHT.get(kind)
        if pinned is not None:
            if "weight" in ctrl_raw:
                problems.append(
                    f"controller.weight: kind {kind!r} pins the weight ({pinned}); remove it"
                )
            weight_spec = pinned
        else:
            weight_spec = ctrl_raw.get("weight", "short" if kind == "balanced" else "uniform")
        weight = _resolve_weight(weight_spec, model, problems)

    if model is not None and weight is not None and kind in _CONTROLLER_KINDS:
        tau = model.tau
        obs_coeffs = ctrl_raw.get("obs_gain_coeffs", list(DEFAULT_OBS_GAIN_COEFFS))
        coll_coeffs = ctrl_raw.get(
            "collective_gain_coeffs", list(DEFAULT_COLLECTIVE_GAIN_COEFFS)
        )
        period = ctrl_raw.get("period", DEFAULT_COLLECTIVE_PERIOD)
        phase = ctrl_raw.get("phase", 0)
        mode = "balanced" if kind == "balanced" else "sync-only"
        ok_pair = (
            lambda v: isinstance(v, (list, tuple))
            and len(v) == 2
            and all(isinstance(x, (int, float)) for x in v)
        )
        if not ok_pair(obs_coeffs):
            problems.append(f"controller.obs_gain_coeffs: pair of numbers required, got {obs_coeffs!r}")
        if not ok_pair(coll_coeffs):
            problems.append(
                f"controller.collective_gain_coeffs: pair of numbers required, got {coll_coeffs!r}"
            )
        if not isinstance(period, int) or period < 1:
            problems.append(f"controller.period: integer >= 1 required, got {period!r}")
        if not isinstance(phase, int) or phase < 0:
            problems.append(f"controller.phase: nonnegative integer required, got {phase!r}")
        if not problems:
            try:
                controller = ControllerConfig(
                    q=weight,
                    F_o=default_obs_gain(model.N, tau, tuple(obs_coeffs)),
                    K_bo=default_collective_gain(period, tau, tuple(coll_coeffs))
                    if mode == "balanced"
                    else None,
                    m=period,
                    mode=mode,
                    tau=tau,
                    phase=phase,
                )
            except ConfigError as exc:
                problems.extend(f"controller: {p}" for p in exc.problems)

    outputs = raw.get("outputs")
    if outputs is None:
        outputs = list(_DEFAULT_OUTPUTS[kind])
    if not isinstance(outputs, list) or not all(isinstance(s, str) for s in outputs):
        problems.append(f"outputs: list of selector strings required, got {outputs!r}")
        outputs = []
    else:
        allowed = set(_OUTPUTS[kind])
        for sel in outputs:
            if sel not in allowed:
                problems.append(
                    f"outputs: {sel!r} is not available for kind {kind!r} "
                    f"(choose from {', '.join(sorted(allowed))})"
                )

    known_top = {"name", "kind", "model", "horizon", "seed", "controller", "outputs"}
    for key in raw:
        if key not in known_top:
            problems.append(f"{key}: unknown top-level field")

    if problems or model is None:
        raise ConfigError(problems or ["model: missing"])
    return ScenarioConfig(
        name=name,
        kind=kind,
        model=model,
        horizon=horizon,
        seed=seed,
        weight=weight,
        controller=controller,
        outputs=tuple(outputs),
        raw=raw,
    )


# ---------------------------------------------------------------------------
# artifact helpers


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _analytical_plot(intervals: np.ndarray, values: np.ndarray) -> AllanPlot:
    intervals = np.asarray(intervals, dtype=float)
    return AllanPlot(
        m_set=np.arange(1, intervals.size + 1),
        intervals=intervals,
        values=np.asarray(values, dtype=float),
    )


def _trend_statistics(series: np.ndarray, n_blocks: int = 50) -> dict:
    """Slope of the final-half trend, fitted on block means.

    Blocking pushes the samples past the loop's correlation time, so the
    ordinary least-squares confidence band is honest.
    """
    arr = np.asarray(series, dtype=float)
    tail = arr[arr.shape[0] // 2 :]
    n_blocks = min(n_blocks, tail.size)
    usable = (tail.size // n_blocks) * n_blocks
    blocks = tail[:usable].reshape(n_blocks, -1).mean(axis=1)
    centers = np.arange(n_blocks, dtype=float) * (usable / n_blocks)
    x = centers - centers.mean()
    slope = float(x @ blocks / (x @ x))
    fit = blocks.mean() + slope * x
    dof = max(n_blocks - 2, 1)
    se = float(np.sqrt(((blocks - fit) ** 2).sum() / dof / (x @ x)))
    half_width = 1.96 * se
    return {
        "slope": slope,
        "slope_ci_half_width": half_width,
        "trend_free": bool(abs(slope) <= half_width),
        "blocks": n_blocks,
    }


class _Artifacts:
    def __init__(self, directory: str):
        self.directory = directory
        self.names: List[str] = []
        os.makedirs(directory, exist_ok=True)

    def path(self, name: str) -> str:
        self.names.append(name)
        return os.path.join(self.directory, name)

    def note(self, names) -> None:
        self.names.extend(names)

    def manifest_files(self) -> List[dict]:
        entries = []
        for name in sorted(set(self.names)):
            full = os.path.join(self.directory, name)
            digest = hashlib.sha256()
            with open(full, "rb") as fh:
                for chunk in iter(lambda: fh.read(1 << 20), b""):
                    digest.update(chunk)
            entries.append(
                {"name": name, "sha256": digest.hexdigest(), "bytes": os.path.getsize(full)}
            )
        return entries


def _clock_allan_artifacts(cfg: ScenarioConfig, h: np.ndarray, art: _Artifacts, jobs: int) -> Dict[str, AllanPlot]:
    """Per-clock statistical Allan plots, one CSV per clock."""
    tau = cfg.model.tau
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            plots = list(
                pool.map(lambda i: allan_plot(h[:, i], tau), range(h.shape[1]))
            )
    else:
        plots = [allan_plot(h[:, i], tau) for i in range(h.shape[1])]
    named = {f"clock_{i + 1}": p for i, p in enumerate(plots)}
    if "allan" in cfg.outputs:
        index = write_allan_plots(named, art.directory, prefix="allan")
        art.note(index.values())
        art.note(["allan_index.json"])
    return named


# ---------------------------------------------------------------------------
# scenario pipelines


def _run_free_run(cfg: ScenarioConfig, art: _Artifacts, jobs: int) -> dict:
    rec = simulate(cfg.model, None, cfg.horizon, cfg.seed)
    plots = _clock_allan_artifacts(cfg, rec.h, art, jobs)
    s1 = np.diag(cfg.model.Sigma1)
    s2 = np.diag(cfg.model.Sigma2)
    summary = {"clocks": {}}
    analytical = {}
    for i, (name, plot) in enumerate(plots.items()):
        noise = NoiseParams(np.sqrt(s1[i]), np.sqrt(s2[i]))
        line = np.array([analytical_allan_clock(noise, t) for t in plot.intervals])
        analytical[f"{name}_analytical"] = _analytical_plot(plot.intervals, line)
        at_one = plot.values[plot.m_set == 1]
        summary["clocks"][name] = {
            "allan_at_1s": float(at_one[0]) if at_one.size else None,
            "analytical_at_1s": analytical_allan_clock(noise, cfg.model.tau),
        }
    if "analytical" in cfg.outputs:
        index = write_allan_plots(analytical, art.directory, prefix="reference")
        art.note(index.values())
        art.note(["reference_index.json"])
    if "trajectory" in cfg.outputs:
        write_trajectory_csv(rec, art.path("trajectory.csv"))
    return summary


def _standard_filter_pass(model: EnsembleModel, rec, track_increments: bool):
    """Offline filter pass over recorded measurements.

    Returns the reference time-scale error series and, optionally, the
    per-step Frobenius increments of the gain and prior covariance.
    """
    state = standard_kf_init(model)
    T = rec.T
    eps = np.empty(T)
    increments = np.empty((T, 4)) if track_increments else None
    prev_H = None
    prev_Pm = None
    for k in range(T):
        state = standard_kf_step(model, state, rec.u[k - 1] if k else None, rec.y[k])
        err = rec.x[k] - state.xhat
        eps[k] = reference_timescale(err, model.N)
        if track_increments:
            h_norm = np.linalg.norm(state.H, "fro")
            if prev_H is None:
                increments[k] = (np.nan, h_norm, np.nan, np.linalg.norm(state.P_minus, "fro"))
            else:
                increments[k] = (
                    np.linalg.norm(state.H - prev_H, "fro"),
                    h_norm,
                    np.linalg.norm(state.P_minus - prev_Pm, "fro"),
                    np.linalg.norm(state.P_minus, "fro"),
                )
            prev_H = state.H
            prev_Pm = state.P_minus
    return eps, increments


def _write_increments(art: _Artifacts, name: str, columns: List[str], data: np.ndarray) -> None:
    rows = np.column_stack([np.arange(data.shape[0]), data])
    np.savetxt(
        art.path(name),
        rows,
        delimiter=",",
        header=",".join(["k"] + columns),
        comments="",
        fmt=["%d"] + ["%.16e"] * data.shape[1],
    )


def _run_standard_kf(cfg: ScenarioConfig, art: _Artifacts, jobs: int) -> dict:
    rec = simulate(cfg.model, None, cfg.horizon, cfg.seed)
    eps, increments = _standard_filter_pass(cfg.model, rec, track_increments=True)
    if "increments" in cfg.outputs:
        _write_increments(
            art,
            "increments.csv",
            ["gain_increment_fro", "gain_fro", "prior_cov_increment_fro", "prior_cov_fro"],
            increments,
        )
    plot = allan_plot(eps, cfg.model.tau)
    if "allan" in cfg.outputs:
        index = write_allan_plots({"timescale": plot}, art.directory, prefix="allan")
        art.note(index.values())
        art.note(["allan_index.json"])
    if "gains" in cfg.outputs:
        d = decompose(cfg.model, np.full(cfg.model.N, 1.0 / cfg.model.N))
        write_gains_json(solve_stationary(d, cfg.model.meas.R), art.path("gains.json"))
    if "trajectory" in cfg.outputs:
        write_trajectory_csv(rec, art.path("trajectory.csv"))
    final = increments[-1]
    return {
        "final_gain_rel_increment": float(final[0] / final[1]),
        "final_prior_cov_increment_fro": float(final[2]),
        "timescale_allan_at_1s": float(plot.values[plot.m_set == 1][0]),
    }


def _averaged_model(model: EnsembleModel) -> EnsembleModel:
    """Same ensemble with every clock assigned the average noise variances."""
    s1 = float(np.diag(model.Sigma1).mean())
    s2 = float(np.diag(model.Sigma2).mean())
    params = [NoiseParams(np.sqrt(s1), np.sqrt(s2)) for _ in range(model.N)]
    return build_ensemble(params, model.meas.V, model.meas.R, model.tau)


def _run_standard_kf_suboptimal(cfg: ScenarioConfig, art: _Artifacts, jobs: int) -> dict:
    rec = simulate(cfg.model, None, cfg.horizon, cfg.seed)
    eps_opt, _ = _standard_filter_pass(cfg.model, rec, track_increments=False)
    eps_sub, _ = _standard_filter_pass(_averaged_model(cfg.model), rec, track_increments=False)
    plot_opt = allan_plot(eps_opt, cfg.model.tau)
    plot_sub = allan_plot(eps_sub, cfg.model.tau)
    if "allan" in cfg.outputs:
        index = write_allan_plots(
            {"timescale_optimal": plot_opt, "timescale_suboptimal": plot_sub},
            art.directory,
            prefix="allan",
        )
        art.note(index.values())
        art.note(["allan_index.json"])
    at1_opt = float(plot_opt.values[plot_opt.m_set == 1][0])
    at1_sub = float(plot_sub.values[plot_sub.m_set == 1][0])
    return {
        "optimal_allan_at_1s": at1_opt,
        "suboptimal_allan_at_1s": at1_sub,
        "suboptimal_below_optimal_at_1s": bool(at1_sub < at1_opt),
    }


def _run_determinate_kf(cfg: ScenarioConfig, art: _Artifacts, jobs: int) -> dict:
    model = cfg.model
    rec = simulate(model, None, cfg.horizon, cfg.seed)
    d = decompose(model, cfg.weight)
    R = model.meas.R
    std = standard_kf_init(model)
    det = determinate_kf_init(d)
    T = rec.T
    deviation = np.empty(T)
    increments = np.empty((T, 4))
    prev = (None, None)
    for k in range(T):
        std = standard_kf_step(model, std, None, rec.y[k])
        det = determinate_kf_step(d, R, det, None, rec.y[k])
        recon = reconstruct_state(det.xi_o_post, det.xi_obar_post, d)
        deviation[k] = np.linalg.norm(recon - std.xhat) / max(
            np.linalg.norm(std.xhat), 1e-300
        )
        if prev[0] is None:
            increments[k] = (np.nan, np.nan, np.nan, np.nan)
        else:
            increments[k] = (
                np.linalg.norm(det.H_o - prev[0], "fro"),
                np.linalg.norm(det.H_o, "fro"),
                np.linalg.norm(det.H_bo - prev[1], "fro"),
                np.linalg.norm(det.H_bo, "fro"),
            )
        prev = (det.H_o, det.H_bo)
    if "equivalence" in cfg.outputs:
        _write_increments(art, "equivalence.csv", ["rel_deviation"], deviation[:, None])
    if "increments" in cfg.outputs:
        _write_increments(
            art,
            "increments.csv",
            ["obs_gain_increment_fro", "obs_gain_fro", "cross_gain_increment_fro", "cross_gain_fro"],
            increments,
        )
    return {
        "max_rel_deviation": float(np.nanmax(deviation)),
        "final_obs_gain_rel_increment": float(increments[-1, 0] / increments[-1, 1]),
        "final_cross_gain_rel_increment": float(increments[-1, 2] / increments[-1, 3]),
    }


def _run_controller(cfg: ScenarioConfig, art: _Artifacts, jobs: int) -> dict:
    model = cfg.model
    d = decompose(model, cfg.weight)
    gains = solve_stationary(d, model.meas.R)
    policy = EemPolicy(cfg.controller, d, gains=gains)
    rec = simulate(model, policy, cfg.horizon, cfg.seed)
    dest = destination_trajectory(model, cfg.weight, cfg.horizon, cfg.seed)
    delta = sync_error(rec, dest)
    rel_phase = delta[:, : model.N] @ d.V.T  # common mode removed

    if "gains" in cfg.outputs:
        write_gains_json(gains, art.path("gains.json"))
    if "commands" in cfg.outputs:
        omega_o, omega_obar = policy.command_log()
        write_command_log_csv(art.path("commands.csv"), omega_o, omega_obar, rec.u)
    if "delta" in cfg.outputs:
        stride = max(1, cfg.horizon // 10_000)
        rows = np.arange(0, delta.shape[0], stride)
        data = np.column_stack([rows, delta[rows]])
        np.savetxt(
            art.path("delta.csv"),
            data,
            delimiter=",",
            header=",".join(
                ["k"]
                + [f"delta_phase_{i + 1}" for i in range(model.N)]
                + [f"delta_freq_{i + 1}" for i in range(model.N)]
            ),
            comments="",
            fmt=["%d"] + ["%.16e"] * (2 * model.N),
        )
    if "trajectory" in cfg.outputs:
        write_trajectory_csv(rec, art.path("trajectory.csv"))

    plots = _clock_allan_artifacts(cfg, rec.h, art, jobs)
    s1 = np.diag(model.Sigma1)
    s2 = np.diag(model.Sigma2)
    first = next(iter(plots.values()))
    references = {
        "destination": _analytical_plot(
            first.intervals,
            [allan_pi(cfg.weight, s1, s2, t) for t in first.intervals],
        )
    }
    if cfg.kind == "balanced":
        references["destination_long"] = _analytical_plot(
            first.intervals,
            [allan_pi(weight_long(s2).q, s1, s2, t) for t in first.intervals],
        )
    if "allan" in cfg.outputs:
        index = write_allan_plots(references, art.directory, prefix="reference")
        art.note(index.values())
        art.note(["reference_index.json"])

    summary = {
        "relative_phase_trend": _trend_statistics(rel_phase[:, 0]),
        "max_abs_input": float(np.max(np.abs(rec.u))),
        "stationary_iterations": gains.iterations,
        "spectral_radius": gains.spectral_radius,
    }
    if cfg.kind == "steer-to-clock":
        summary["steered_clock_max_abs_input"] = float(np.max(np.abs(rec.u[:, -1])))
    if cfg.kind == "balanced":
        # at the kick instants the mean should ride the long-term destination
        m = cfg.controller.m
        q_inf = weight_long(s2).q
        delta_long = sync_error(rec, destination_trajectory(model, q_inf, cfg.horizon, cfg.seed))
        sampled_mean = delta_long[::m, : model.N] @ q_inf
        summary["collective_kicks"] = int(np.count_nonzero(policy.command_log()[1]))
        summary["sampled_mean_phase_trend"] = _trend_statistics(sampled_mean)
    return summary


_RUNNERS: Dict[str, Callable] = {
    "free-run": _run_free_run,
    "standard-kf": _run_standard_kf,
    "standard-kf-suboptimal": _run_standard_kf_suboptimal,
    "determinate-kf": _run_determinate_kf,
    "steer-to-clock": _run_controller,
    "sync-simple-average": _run_controller,
    "sync-best-short": _run_controller,
    "sync-best-long": _run_controller,
    "balanced": _run_controller,
}


def run_scenario(cfg: ScenarioConfig, out_dir: str, jobs: int = 1) -> dict:
    """Execute one scenario and write its artifact bundle.

    Returns the manifest (also written as ``manifest.json``): file list
    with content hashes, the config echo, and library versions.  On a
    numerical failure the manifest is still written, with the error
    recorded and whatever artifacts exist flagged as partial.
    """
    import scipy

    directory = os.path.join(out_dir, cfg.name)
    art = _Artifacts(directory)
    started = time.perf_counter()
    caught: Optional[Exception] = None
    summary: dict = {}
    try:
        summary = _RUNNERS[cfg.kind](cfg, art, jobs)
        if "summary" in cfg.outputs:
            _write_json(art.path("summary.json"), summary)
    except (NumericalError, ConvergenceError) as exc:
        caught = exc
    manifest = {
        "name": cfg.name,
        "kind": cfg.kind,
        "status": "ok" if caught is None else "failed",
        "error": None if caught is None else f"{type(caught).__name__}: {caught}",
        "partial": caught is not None,
        "files": art.manifest_files(),
        "summary": summary,
        "config": cfg.raw,
        "versions": {
            "eemsync": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "elapsed_s": round(time.perf_counter() - started, 3),
    }
    _write_json(os.path.join(directory, "manifest.json"), manifest)
    if caught is not None:
        raise caught
    return manifest
