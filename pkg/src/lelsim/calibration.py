"""Pattern-consistent parameter calibration against a measured trace.

The calibration target is the squared distance between the pattern
vector of the data and the pattern vector of a simulated trace, both
produced by one frozen window encoder.  The search is a derivative-free
simplex over transform-mapped parameters; every candidate reuses one
fixed simulation seed (common random numbers) so the objective is a
deterministic function of the parameters.  A pointwise-MSE objective is
provided as the ablation arm.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from lelsim.errors import InvalidArgument
from lelsim.thermal_aux import AuxParams, CoolingParams, _power_at_slip, aux_power, init_for_torque
from lelsim.tcl import (
    Encoder,
    TrainConfig,
    encode_windows,
    pattern_vector,
    segment_windows,
    train_encoder,
)
from lelsim.traceio import Trace
from lelsim.workload import WorkloadParams, simulate_workload


class ObjectiveMode(enum.Enum):
    PATTERN = "pattern"
    MSE = "mse"


@dataclass(frozen=True)
class CalibrationConfig:
    """Everything a calibration run depends on, seeds included."""

    base_params: object                      # full parameter set; free ones overridden
    bounds: dict                             # free name -> (lo, hi)
    subsystem: str = "workload"              # workload | cooling | aux
    mode: ObjectiveMode = ObjectiveMode.PATTERN
    max_evals: int = 200
    horizon: float = 7200.0
    dt: float = 1.0
    sim_seed: int = 0
    encoder_seed: int = 0
    optimizer_seed: int = 0
    window_length: int = 5
    stride: int | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    n_repeats: int = 1                       # realizations averaged into s_model

    def __post_init__(self):
        if self.max_evals < 1:
            raise InvalidArgument("max_evals must be >= 1")
        if self.subsystem not in ("workload", "cooling", "aux"):
            raise InvalidArgument(f"unknown subsystem {self.subsystem!r}")
        if not self.bounds:
            raise InvalidArgument("bounds must name at least one free parameter")
        for name, (lo, hi) in self.bounds.items():
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise InvalidArgument(f"bad bounds for {name}: ({lo}, {hi})")
        if self.n_repeats < 1:
            raise InvalidArgument("n_repeats must be >= 1")


@dataclass
class CalibrationResult:
    theta_star: dict
    objective_trace: list            # best accepted objective after each evaluation
    final_pattern_distance: float
    initial_pattern_distance: float
    n_evals: int
    budget_exhausted: bool
    encoder: Encoder | None = None


# ---------------------------------------------------------------------------
# subsystem simulators
# ---------------------------------------------------------------------------

def _voltage_excitation(n: int, dt: float, seed: int) -> np.ndarray:
    """Band-limited seeded voltage ride in [0.85, 1.05] used to excite the
    voltage-dependent subsystems."""
    rng = np.random.default_rng([seed, 0xE0])
    v = np.empty(n)
    x = 0.0
    for i in range(n):
        x = 0.98 * x + 0.02 * rng.standard_normal()
        v[i] = 0.95 + 0.6 * x
    return np.clip(v, 0.85, 1.05)


def simulate_subsystem(params, subsystem: str, horizon: float, dt: float,
                       seed: int) -> Trace:
    """One seeded realization of the named load subsystem."""
    if subsystem == "workload":
        return simulate_workload(params, horizon, dt, seed)
    if subsystem not in ("cooling", "aux"):
        raise InvalidArgument(f"unknown subsystem {subsystem!r}")
    n = int(horizon / dt)
    v = _voltage_excitation(n, dt, seed)
    if subsystem == "aux":
        p = np.array([aux_power(vi, params)[0] for vi in v])
    else:
        # quasi-steady motor electrical power along the voltage ride
        p = np.empty(n)
        for i, vi in enumerate(v):
            st = init_for_torque(params.load_factor, vi, params)
            p[i] = _power_at_slip(st.slip, complex(vi, 0.0), params) * params.mva_base
    return Trace(sample_period=dt, channels={"p": p},
                 meta={"seed": seed, "model": subsystem})


def _simulate_theta(theta: dict, cfg: CalibrationConfig, rep: int = 0) -> Trace:
    params = replace(cfg.base_params, **theta)
    seed = cfg.sim_seed if rep == 0 else int(
        np.random.default_rng([cfg.sim_seed, rep]).integers(2**31))
    return simulate_subsystem(params, cfg.subsystem, cfg.horizon, cfg.dt, seed)


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

def _check_bounds(theta: dict, cfg: CalibrationConfig) -> None:
    for name, (lo, hi) in cfg.bounds.items():
        if name not in theta:
            raise InvalidArgument(f"theta missing free parameter {name}")
        if not (lo <= theta[name] <= hi):
            raise InvalidArgument(
                f"{name}={theta[name]} outside bounds [{lo}, {hi}]")


def model_pattern(theta: dict, encoder: Encoder, cfg: CalibrationConfig) -> np.ndarray:
    """s_model: pattern vector of the simulated trace under the frozen
    encoder, averaged over cfg.n_repeats realizations."""
    acc = None
    for rep in range(cfg.n_repeats):
        trace = _simulate_theta(theta, cfg, rep)
        windows = segment_windows(trace, cfg.window_length, cfg.stride)
        s = pattern_vector(encode_windows(encoder, windows)).as_array()
        acc = s if acc is None else acc + s
    return acc / cfg.n_repeats


def calibration_objective(theta: dict, data_pattern: np.ndarray,
                          encoder: Encoder, cfg: CalibrationConfig) -> float:
    """Squared Euclidean pattern distance; deterministic given cfg seeds."""
    _check_bounds(theta, cfg)
    s_model = model_pattern(theta, encoder, cfg)
    d = s_model - np.asarray(data_pattern, dtype=float)
    return float(d @ d)


def mse_objective(theta: dict, data_trace: Trace, cfg: CalibrationConfig) -> float:
    """Pointwise mean squared error against the data trace (ablation)."""
    _check_bounds(theta, cfg)
    sim = _simulate_theta(theta, cfg)
    a = data_trace.first_channel()
    b = sim.first_channel()
    if len(a) != len(b):
        raise InvalidArgument(
            f"trace length mismatch: data {len(a)} vs simulated {len(b)}")
    return float(np.mean((a - b) ** 2))


# ---------------------------------------------------------------------------
# bounded transform
# ---------------------------------------------------------------------------

_EPS = 1e-9


def to_unconstrained(theta: dict, bounds: dict) -> np.ndarray:
    u = np.empty(len(bounds))
    for i, (name, (lo, hi)) in enumerate(bounds.items()):
        p = (theta[name] - lo) / (hi - lo)
        p = min(max(p, _EPS), 1.0 - _EPS)
        u[i] = math.log(p / (1.0 - p))
    return u


def from_unconstrained(u: np.ndarray, bounds: dict) -> dict:
    theta = {}
    for i, (name, (lo, hi)) in enumerate(bounds.items()):
        theta[name] = lo + (hi - lo) / (1.0 + math.exp(-float(u[i])))
    return theta


# ---------------------------------------------------------------------------
# the calibration driver
# ---------------------------------------------------------------------------

def calibrate(theta_init: dict, data_trace: Trace,
              cfg: CalibrationConfig) -> CalibrationResult:
    """Bound-constrained simplex search with common random numbers.

    The encoder is trained once on the data windows and frozen; s_data is
    computed once.  Simplex restarts (around the incumbent, with a
    reseeded spread) continue until the evaluation budget is spent or the
    search converges.  Budget exhaustion returns best-so-far with a flag.
    """
    data = data_trace.first_channel()
    if len(data) < 4 * cfg.window_length:
        raise InvalidArgument(
            f"data trace too short: {len(data)} < {4 * cfg.window_length}")
    _check_bounds(theta_init, cfg)

    encoder = None
    data_pattern = None
    if cfg.mode is ObjectiveMode.PATTERN:
        windows = segment_windows(data_trace, cfg.window_length, cfg.stride)
        encoder = train_encoder(windows, cfg.train, seed=cfg.encoder_seed)
        data_pattern = pattern_vector(encode_windows(encoder, windows)).as_array()

    evals = {"n": 0}
    best = {"u": to_unconstrained(theta_init, cfg.bounds), "f": math.inf}
    trace_vals: list = []

    def objective_u(u):
        if evals["n"] >= cfg.max_evals:
            # budget spent: return a value that cannot be accepted
            return best["f"] + 1.0
        theta = from_unconstrained(u, cfg.bounds)
        if cfg.mode is ObjectiveMode.PATTERN:
            f = calibration_objective(theta, data_pattern, encoder, cfg)
        else:
            f = mse_objective(theta, data_trace, cfg)
        evals["n"] += 1
        if f < best["f"]:
            best["f"] = f
            best["u"] = np.array(u, dtype=float)
        trace_vals.append(best["f"])
        return f

    rng = np.random.default_rng(cfg.optimizer_seed)
    u = best["u"].copy()
    spread = 0.5
    while evals["n"] < cfg.max_evals:
        n_free = len(cfg.bounds)
        simplex = np.vstack([u] + [u + spread * rng.standard_normal(n_free)
                                   for _ in range(n_free)])
        res = minimize(objective_u, u, method="Nelder-Mead",
                       options={"maxfev": cfg.max_evals - evals["n"] + 1,
                                "initial_simplex": simplex,
                                "xatol": 1e-8, "fatol": 1e-12})
        if np.allclose(res.x, u, atol=1e-10) or evals["n"] >= cfg.max_evals:
            if res.success or evals["n"] >= cfg.max_evals:
                break
        # restart around the incumbent with a fresh simplex spread
        u = best["u"].copy()
        spread = max(spread * 0.5, 0.05)
        if res.success:
            break

    theta_star = from_unconstrained(best["u"], cfg.bounds)
    if cfg.mode is ObjectiveMode.PATTERN:
        initial = calibration_objective(theta_init, data_pattern, encoder, cfg)
        final = calibration_objective(theta_star, data_pattern, encoder, cfg)
    else:
        initial = float("nan")
        final = float("nan")
    return CalibrationResult(theta_star=theta_star, objective_trace=trace_vals,
                             final_pattern_distance=final,
                             initial_pattern_distance=initial,
                             n_evals=evals["n"],
                             budget_exhausted=evals["n"] >= cfg.max_evals,
                             encoder=encoder)


# ---------------------------------------------------------------------------
# result serialization
# ---------------------------------------------------------------------------

def dump_calibration_result(result: CalibrationResult) -> str:
    lines = ["[theta_star]"]
    for k in sorted(result.theta_star):
        lines.append(f"{k}={result.theta_star[k]!r}")
    lines.append("")
    lines.append("[summary]")
    lines.append(f"final_pattern_distance={result.final_pattern_distance!r}")
    lines.append(f"initial_pattern_distance={result.initial_pattern_distance!r}")
    lines.append(f"n_evals={result.n_evals}")
    lines.append(f"budget_exhausted={result.budget_exhausted}")
    lines.append("")
    lines.append("[objective_trace]")
    lines.append("eval,best_objective")
    for i, v in enumerate(result.objective_trace):
        lines.append(f"{i},{v!r}")
    return "\n".join(lines) + "\n"
