"""One LEL instance: workload + cooling + auxiliary behind protection.

Composes the subsystem models into the grid-facing (p, q) demand and
owns the parameter-exchange file format used to ship calibrated
parameter bundles between a facility and the utility.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from lelsim.errors import InvalidArgument, LowVoltageGuard, ValidationError
from lelsim.protection import (
    ProtectionParams,
    ProtectionState,
    apply_retention,
    parse_kv_document,
    protection_step,
)
from lelsim.thermal_aux import (
    AuxParams,
    CoolingParams,
    MotorMode,
    MotorState,
    aux_power,
    motor_derivatives,
    motor_init,
    motor_terminal_power,
    stall_update,
)
from lelsim.workload import WorkloadParams, WorkloadState, ou_step, workload_power

EXCHANGE_SCHEMA_VERSION = 1

# below this terminal voltage, constant-power behavior is replaced by the
# equivalent admittance computed at the floor
V_FLOOR = 0.05


class Archetype(enum.Enum):
    DATACENTER = "datacenter"
    CRYPTO_MINING = "crypto_mining"
    ELECTROLYZER = "electrolyzer"


@dataclass(frozen=True)
class LelParams:
    work: WorkloadParams
    cool: CoolingParams
    aux: AuxParams
    prot: ProtectionParams
    archetype: Archetype = Archetype.DATACENTER

    def __post_init__(self):
        if self.work.p_base + self.aux.p_aux0 <= 0 and self.cool.mva_base <= 0:
            raise InvalidArgument("combined nominal demand must be positive")


@dataclass(frozen=True)
class LelState:
    work: WorkloadState
    motor: MotorState
    prot: ProtectionState


def lel_step(state: LelState, v_mag: float, v_angle: float, omega: float,
             dt: float, rng: np.random.Generator, params: LelParams
             ) -> tuple[LelState, float, float]:
    """Advance one LEL by dt and return (state', p_MW, q_MVAr) drawn.

    Sub-step order: workload, motor, protection, retention.  The motor
    here is integrated with a single trapezoidal step against a frozen
    terminal voltage; the grid simulator instead integrates the motor
    states inside its network Newton solve and uses the component
    functions directly.
    """
    work = ou_step(state.work, params.work, dt, rng)
    motor = _motor_trapezoid(state.motor, v_mag, v_angle, dt, params.cool)
    motor = stall_update(motor, v_mag, dt, params.cool)
    prot = protection_step(state.prot, v_mag, omega, dt, params.prot)

    p_work = workload_power(work.eta, params.work)
    if motor.mode is MotorMode.RUNNING:
        v = v_mag * complex(np.cos(v_angle), np.sin(v_angle))
        p_pu, q_pu = motor_terminal_power(motor, v.real, v.imag, params.cool)
        p_cool = p_pu * params.cool.mva_base
        q_cool = q_pu * params.cool.mva_base
    else:
        p_cool = q_cool = 0.0
    p_aux, q_aux = aux_power(v_mag, params.aux)

    p_load = p_work + p_cool + p_aux
    q_load = q_cool + q_aux
    p_t, q_t = apply_retention(prot.kappa, p_load, q_load)
    return LelState(work=work, motor=motor, prot=prot), p_t, q_t


def _motor_trapezoid(motor: MotorState, v_mag: float, v_angle: float, dt: float,
                     cool: CoolingParams) -> MotorState:
    """One fixed-voltage trapezoidal step of the motor differential states."""
    if motor.mode is not MotorMode.RUNNING:
        return motor
    v = v_mag * complex(np.cos(v_angle), np.sin(v_angle))
    f0 = np.array(motor_derivatives(motor, v.real, v.imag, cool))
    x0 = np.array([motor.ed_p, motor.eq_p, motor.slip])

    def residual(x):
        trial = replace(motor, ed_p=x[0], eq_p=x[1], slip=min(max(x[2], 0.0), 1.0))
        f1 = np.array(motor_derivatives(trial, v.real, v.imag, cool))
        return x - x0 - 0.5 * dt * (f0 + f1)

    x = x0 + dt * f0  # predictor
    for _ in range(20):
        r = residual(x)
        if np.max(np.abs(r)) < 1e-12:
            break
        # numerical Jacobian of a 3x3 system
        jac = np.empty((3, 3))
        h = 1e-7
        for j in range(3):
            xp = x.copy()
            xp[j] += h
            jac[:, j] = (residual(xp) - r) / h
        x = x - np.linalg.solve(jac, r)
    return replace(motor, ed_p=float(x[0]), eq_p=float(x[1]),
                   slip=float(min(max(x[2], 0.0), 1.0)))


def lel_current_injection(p_mw: float, q_mvar: float, v: complex,
                          s_base: float) -> complex:
    """Load-convention current drawn from the bus, pu on s_base."""
    if abs(v) <= V_FLOOR:
        raise LowVoltageGuard(f"|V|={abs(v):.4f} pu at or below floor {V_FLOOR}")
    s = complex(p_mw, q_mvar) / s_base
    return (s / v).conjugate()


# ---------------------------------------------------------------------------
# archetype presets
#
# Numeric values below are NON-AUTHORITATIVE placeholders meant to make
# uncalibrated runs possible; real deployments replace them via
# calibration and the facility disclosure form.
# ---------------------------------------------------------------------------

_MOTOR_COMMON = dict(R_s=0.02, X_s=0.10, X_m=3.2, R_r=0.02, X_r=0.10,
                     H_m=0.25, mva_base=30.0, load_factor=0.8)


def archetype_defaults(archetype: Archetype) -> LelParams:
    """Documented default parameter bundle for one LEL archetype."""
    if archetype is Archetype.DATACENTER:
        work = WorkloadParams(p_base=20.0, p_full=100.0, tau_eta=30.0, mu_eta=0.55,
                              sigma_xi=0.6, lambda_burst=0.02, lnA_mu=1.0, lnA_sigma=0.5)
        cool = CoolingParams(V_stall=0.62, tau_stall=0.25, T_cool=4.0, **_MOTOR_COMMON)
        aux = AuxParams(p_aux0=10.0, alpha_Z=0.4, alpha_I=0.3, alpha_P=0.3, beta_aux=0.35)
        prot = ProtectionParams(V_ref=1.0, omega_ref=1.0, dV=0.08, dOmega=0.01,
                                t_delay_trip=0.11, t_wait_recon=1.0, t_delay_recon=2.0,
                                kappa_min=0.25, kappa_max=1.0, r_kappa=0.25)
    elif archetype is Archetype.CRYPTO_MINING:
        work = WorkloadParams(p_base=5.0, p_full=90.0, tau_eta=120.0, mu_eta=0.92,
                              sigma_xi=0.4, lambda_burst=0.002, lnA_mu=1.5, lnA_sigma=0.4)
        cool = CoolingParams(V_stall=0.58, tau_stall=0.30, T_cool=3.0,
                             **{**_MOTOR_COMMON, "mva_base": 15.0})
        aux = AuxParams(p_aux0=4.0, alpha_Z=0.6, alpha_I=0.2, alpha_P=0.2, beta_aux=0.25)
        prot = ProtectionParams(V_ref=1.0, omega_ref=1.0, dV=0.12, dOmega=0.015,
                                t_delay_trip=0.16, t_wait_recon=0.5, t_delay_recon=1.0,
                                kappa_min=0.10, kappa_max=1.0, r_kappa=0.5)
    elif archetype is Archetype.ELECTROLYZER:
        work = WorkloadParams(p_base=10.0, p_full=80.0, tau_eta=600.0, mu_eta=0.75,
                              sigma_xi=1.0, lambda_burst=0.0005, lnA_mu=2.0, lnA_sigma=0.3)
        cool = CoolingParams(V_stall=0.60, tau_stall=0.30, T_cool=5.0,
                             **{**_MOTOR_COMMON, "mva_base": 10.0})
        aux = AuxParams(p_aux0=5.0, alpha_Z=0.3, alpha_I=0.3, alpha_P=0.4, beta_aux=0.30)
        prot = ProtectionParams(V_ref=1.0, omega_ref=1.0, dV=0.06, dOmega=0.006,
                                t_delay_trip=0.13, t_wait_recon=2.0, t_delay_recon=4.0,
                                kappa_min=0.15, kappa_max=1.0, r_kappa=0.12)
    else:
        raise InvalidArgument(f"unknown archetype: {archetype!r}")
    return LelParams(work=work, cool=cool, aux=aux, prot=prot, archetype=archetype)


# ---------------------------------------------------------------------------
# parameter-exchange file (flat key-value blocks, schema versioned)
# ---------------------------------------------------------------------------

_WORK_FIELDS = ("p_base", "p_full", "tau_eta", "mu_eta", "sigma_xi",
                "lambda_burst", "lnA_mu", "lnA_sigma")
_COOL_FIELDS = ("R_s", "X_s", "X_m", "R_r", "X_r", "H_m", "V_stall",
                "tau_stall", "T_cool", "mva_base", "load_factor")
_AUX_FIELDS = ("p_aux0", "alpha_Z", "alpha_I", "alpha_P", "beta_aux", "V0")
_PROT_FIELDS = ("V_ref", "omega_ref", "dV", "dOmega", "t_delay_trip",
                "t_wait_recon", "t_delay_recon", "kappa_min", "kappa_max",
                "r_kappa")


def dump_lel_params(params: LelParams) -> str:
    """Serialize a parameter bundle; parse_lel_params round-trips exactly."""
    lines = [f"schema_version = {EXCHANGE_SCHEMA_VERSION}",
             f"archetype = {params.archetype.value}"]
    for prefix, obj, fields in (("work", params.work, _WORK_FIELDS),
                                ("cool", params.cool, _COOL_FIELDS),
                                ("aux", params.aux, _AUX_FIELDS),
                                ("prot", params.prot, _PROT_FIELDS)):
        for f in fields:
            lines.append(f"{prefix}.{f} = {getattr(obj, f)!r}")
    return "\n".join(lines) + "\n"


def parse_lel_params(document: str) -> LelParams:
    """Parse a parameter-exchange document into a validated LelParams."""
    kv = parse_kv_document(document)
    if "schema_version" not in kv:
        raise ValidationError("parameter-exchange file missing schema_version")
    version = int(kv["schema_version"])
    if version != EXCHANGE_SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {version}")
    if "archetype" not in kv:
        raise ValidationError("parameter-exchange file missing archetype")
    try:
        archetype = Archetype(kv["archetype"])
    except ValueError as exc:
        raise ValidationError(f"unknown archetype {kv['archetype']!r}") from exc

    def block(prefix, fields, cls):
        values = {}
        for f in fields:
            key = f"{prefix}.{f}"
            if key not in kv:
                raise ValidationError(f"parameter-exchange file missing {key}")
            values[f] = float(kv[key])
        return cls(**values)

    return LelParams(
        work=block("work", _WORK_FIELDS, WorkloadParams),
        cool=block("cool", _COOL_FIELDS, CoolingParams),
        aux=block("aux", _AUX_FIELDS, AuxParams),
        prot=block("prot", _PROT_FIELDS, ProtectionParams),
        archetype=archetype,
    )


def init_lel_state(params: LelParams, v_mag: float, eta0: float | None = None,
                   p_cool_pu: float | None = None) -> LelState:
    """Equilibrium state for one LEL at a given terminal voltage."""
    eta = params.work.mu_eta if eta0 is None else eta0
    target = params.cool.load_factor if p_cool_pu is None else p_cool_pu
    motor = motor_init(target, v_mag, params.cool)
    return LelState(work=WorkloadState(eta=eta), motor=motor, prot=ProtectionState())
