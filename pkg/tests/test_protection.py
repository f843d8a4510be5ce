"""Unit tests for the protection state machine and the disclosure form."""

import numpy as np
import pytest

from lelsim.errors import InvalidArgument, ValidationError
from lelsim.protection import (
    ProtectionMode,
    ProtectionParams,
    ProtectionState,
    apply_retention,
    dump_protection_disclosure,
    in_band,
    load_protection_disclosure,
    protection_step,
)


def make_params(**overrides):
    base = dict(V_ref=1.0, omega_ref=1.0, dV=0.08, dOmega=0.01,
                t_delay_trip=0.1, t_wait_recon=0.5, t_delay_recon=1.0,
                kappa_min=0.2, kappa_max=1.0, r_kappa=0.5)
    base.update(overrides)
    return ProtectionParams(**base)


def run_sequence(params, samples, dt):
    state = ProtectionState()
    history = []
    for v, w in samples:
        state = protection_step(state, v, w, dt, params)
        history.append(state)
    return history


class TestValidation:
    def test_rejects_bad_kappa_ordering(self):
        with pytest.raises(ValidationError):
            make_params(kappa_min=0.9, kappa_max=0.5)

    def test_rejects_negative_timer(self):
        with pytest.raises(ValidationError):
            make_params(t_delay_trip=-1.0)

    def test_rejects_nonpositive_band(self):
        with pytest.raises(ValidationError):
            make_params(dV=0.0)

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(InvalidArgument):
            protection_step(ProtectionState(), 1.0, 1.0, 0.0, make_params())


class TestBand:
    def test_in_band_at_reference(self):
        assert in_band(1.0, 1.0, make_params())

    def test_band_edges_inclusive(self):
        # exactly representable half-widths so the edge comparison is exact
        params = make_params(dV=0.125, dOmega=0.015625)
        assert in_band(1.0 + params.dV, 1.0, params)
        assert not in_band(1.0 + params.dV + 1e-9, 1.0, params)
        assert in_band(1.0, 1.0 + params.dOmega, params)
        assert not in_band(1.0, 1.0 + params.dOmega + 1e-9, params)


class TestTripAndRecovery:
    def test_sustained_violation_sheds_to_kappa_min(self):
        params = make_params()
        history = run_sequence(params, [(0.5, 1.0)] * 12, dt=0.01)
        assert history[-1].mode is ProtectionMode.SHED
        assert history[-1].kappa == params.kappa_min

    def test_violation_shorter_than_delay_never_sheds(self):
        params = make_params()
        samples = [(0.5, 1.0)] * 9 + [(1.0, 1.0)] * 50
        history = run_sequence(params, samples, dt=0.01)
        assert all(s.mode is not ProtectionMode.SHED for s in history)
        assert history[-1].kappa == 1.0

    def test_recovery_requires_both_gates(self):
        params = make_params(t_delay_trip=0.02, t_wait_recon=0.1,
                             t_delay_recon=0.5)
        samples = [(0.5, 1.0)] * 3 + [(1.0, 1.0)] * 200
        history = run_sequence(params, samples, dt=0.01)
        ramp_start = next(i for i, s in enumerate(history)
                          if s.mode is ProtectionMode.RAMPING)
        # the 0.5 s since-trip gate dominates the 0.1 s dwell gate here
        assert ramp_start * 0.01 >= 0.5

    def test_ramp_rate_bounded(self):
        params = make_params(t_delay_trip=0.02, t_wait_recon=0.05,
                             t_delay_recon=0.1)
        samples = [(0.5, 1.0)] * 3 + [(1.0, 1.0)] * 400
        history = run_sequence(params, samples, dt=0.01)
        kappas = [s.kappa for s in history]
        for a, b in zip(kappas, kappas[1:]):
            assert b - a <= params.r_kappa * 0.01 + 1e-12

    def test_full_reconnection_resets_state(self):
        params = make_params(t_delay_trip=0.02, t_wait_recon=0.05,
                             t_delay_recon=0.1, r_kappa=2.0)
        samples = [(0.5, 1.0)] * 3 + [(1.0, 1.0)] * 400
        history = run_sequence(params, samples, dt=0.01)
        assert history[-1] == ProtectionState()

    def test_kappa_max_caps_restoration(self):
        params = make_params(t_delay_trip=0.02, t_wait_recon=0.05,
                             t_delay_recon=0.1, kappa_max=0.7, r_kappa=2.0)
        samples = [(0.5, 1.0)] * 3 + [(1.0, 1.0)] * 400
        history = run_sequence(params, samples, dt=0.01)
        assert history[-1].kappa == pytest.approx(0.7)
        assert history[-1].mode is ProtectionMode.RAMPING

    def test_reviolation_during_ramp_holds_kappa(self):
        params = make_params(t_delay_trip=0.1, t_wait_recon=0.05,
                             t_delay_recon=0.1, r_kappa=0.5)
        samples = ([(0.5, 1.0)] * 12 + [(1.0, 1.0)] * 30
                   + [(0.5, 1.0)] * 5 + [(1.0, 1.0)] * 5)
        history = run_sequence(params, samples, dt=0.01)
        kappa_before = history[41].kappa
        held = [s.kappa for s in history[42:47]]
        assert all(k == pytest.approx(kappa_before) for k in held)

    def test_determinism(self):
        params = make_params()
        rng = np.random.default_rng(4)
        samples = [(float(v), float(w)) for v, w in
                   zip(1.0 + 0.2 * rng.standard_normal(500),
                       1.0 + 0.02 * rng.standard_normal(500))]
        a = run_sequence(params, samples, dt=0.01)
        b = run_sequence(params, samples, dt=0.01)
        assert a == b


class TestRetention:
    def test_scales_both_components(self):
        assert apply_retention(0.5, 10.0, 4.0) == (5.0, 2.0)

    def test_rejects_kappa_outside_unit_interval(self):
        with pytest.raises(InvalidArgument):
            apply_retention(1.5, 1.0, 1.0)


class TestDisclosureForm:
    def test_round_trip(self):
        params = make_params()
        doc = dump_protection_disclosure(params)
        assert load_protection_disclosure(doc) == params

    def test_missing_field_rejected(self):
        doc = dump_protection_disclosure(make_params())
        trimmed = "\n".join(line for line in doc.splitlines()
                            if not line.startswith("r_kappa"))
        with pytest.raises(ValidationError):
            load_protection_disclosure(trimmed)
