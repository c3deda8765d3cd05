import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srmq.plant import (InductanceSurface, MotorParams, PhaseState,
                        ReferenceProfile, default_surface, inductance_at,
                        load_surface_csv, reference_at, save_surface_csv,
                        step_phase)
from conftest import constant_surface


class TestMotorParams:
    def test_defaults_valid(self):
        p = MotorParams()
        assert p.steps_per_cycle == 1250
        assert p.deg_per_step == pytest.approx(0.036)

    @pytest.mark.parametrize("kwargs", [
        {"R_phase": 0.0}, {"T": -1e-4}, {"L_unaligned": 0.02},
        {"rotor_pitch": 0.0}, {"V_dc": -1.0},
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            MotorParams(**kwargs)


class TestInductanceSurface:
    def test_node_reproduction(self, surface):
        for a in (0, 5, 12):
            for b in (0, 3, 7):
                got = inductance_at(surface, surface.theta_grid[a],
                                    surface.current_grid[b])
                assert got == pytest.approx(surface.values[a, b], abs=1e-15)

    def test_aligned_and_unaligned_endpoints(self, params):
        # grid with nodes exactly at the aligned and unaligned angles
        s = default_surface(params, n_theta=9)
        assert inductance_at(s, 0.0, 0.0) == pytest.approx(16e-3)
        # at 1 A the saturation factor barely bites; endpoint within 2.5 %
        assert inductance_at(s, 0.0, 1.0) == pytest.approx(16e-3, rel=2.5e-2)
        assert inductance_at(s, 22.5, 1.0) == pytest.approx(6e-3, rel=1e-9)
        assert inductance_at(s, 22.5, 6.0) == pytest.approx(6e-3, rel=1e-9)

    def test_quarter_pitch_midpoint(self, params):
        # independent evaluation of the raised-cosine construction
        s = default_surface(params, n_theta=9)
        i = float(s.current_grid[2])
        sat = 1.0 / (1.0 + 0.5 * (i / params.i_nominal) ** 2)
        expected = 6e-3 + 10e-3 * (1 + math.cos(2 * math.pi * 11.25 / 45.0)) / 2 * sat
        assert inductance_at(s, 11.25, i) == pytest.approx(expected, rel=1e-12)

    def test_low_current_limits(self, params):
        s = default_surface(params, n_theta=9)
        assert inductance_at(s, 0.0, 0.0) == pytest.approx(16e-3)
        assert inductance_at(s, 11.25, 0.0) == pytest.approx((6e-3 + 16e-3) / 2)

    def test_current_clamped_above_grid(self, surface):
        top = surface.current_grid[-1]
        assert inductance_at(surface, 7.3, 50.0) == \
            pytest.approx(inductance_at(surface, 7.3, top), abs=1e-18)

    @given(theta=st.floats(-100, 200), i=st.floats(0, 12))
    @settings(max_examples=200, deadline=None)
    def test_periodicity(self, surface, theta, i):
        assert inductance_at(surface, theta + surface.pitch, i) == \
            pytest.approx(inductance_at(surface, theta, i), rel=1e-12)

    @given(data=st.data())
    @settings(max_examples=100, deadline=None)
    def test_lipschitz_within_cell(self, surface, data):
        a = data.draw(st.integers(0, surface.theta_grid.size - 2))
        b = data.draw(st.integers(0, surface.current_grid.size - 2))
        t0, t1 = surface.theta_grid[a], surface.theta_grid[a + 1]
        c0, c1 = surface.current_grid[b], surface.current_grid[b + 1]
        corners = surface.values[a:a + 2, b:b + 2]
        span_t = np.abs(corners[1] - corners[0]).max()
        span_c = np.abs(corners[:, 1] - corners[:, 0]).max()
        p = (data.draw(st.floats(float(t0), float(t1))),
             data.draw(st.floats(float(c0), float(c1))))
        q = (data.draw(st.floats(float(t0), float(t1))),
             data.draw(st.floats(float(c0), float(c1))))
        bound = abs(p[0] - q[0]) / (t1 - t0) * span_t \
            + abs(p[1] - q[1]) / (c1 - c0) * span_c
        diff = abs(inductance_at(surface, *p) - inductance_at(surface, *q))
        assert diff <= bound + 1e-15

    def test_malformed_surfaces_rejected(self):
        theta = np.array([0.0, 10.0, 45.0])
        current = np.array([0.0, 5.0])
        good = np.full((3, 2), 0.01)
        with pytest.raises(ValueError):
            InductanceSurface(theta[::-1], current, good)
        with pytest.raises(ValueError):
            InductanceSurface(theta, current, -good)
        with pytest.raises(ValueError):  # aperiodic
            InductanceSurface(theta, current, np.array([[1, 1], [2, 2], [3, 3.0]]) * 1e-2)
        with pytest.raises(ValueError):  # increasing in current
            InductanceSurface(theta, current, np.array([[1, 2], [1, 2], [1, 2.0]]) * 1e-2)

    def test_csv_round_trip(self, surface, tmp_path):
        path = tmp_path / "surface.csv"
        save_surface_csv(surface, path)
        back = load_surface_csv(path)
        assert np.array_equal(back.theta_grid, surface.theta_grid)
        assert np.array_equal(back.current_grid, surface.current_grid)
        assert np.array_equal(back.values, surface.values)

    def test_csv_ragged_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("theta_deg,0.0,5.0\n0.0,0.01\n45.0,0.01,0.01\n")
        with pytest.raises(ValueError):
            load_surface_csv(path)


class TestStepPhase:
    def test_decay_matches_hand_value(self):
        # A = 1 - T R / L = 1 - 1e-4 * 2 / 6e-3 = 0.966667
        p = MotorParams()
        s = constant_surface(6e-3)
        nxt = step_phase(PhaseState(x=4.0, theta=0.0), 0.0, p, s)
        assert nxt.x == pytest.approx(4.0 * (1 - 1e-4 * 2 / 6e-3), rel=1e-12)
        assert nxt.k == 1
        assert nxt.theta == pytest.approx(p.deg_per_step)

    def test_origin_fixed_point(self, flat_surface):
        p = MotorParams()
        nxt = step_phase(PhaseState(), 0.0, p, flat_surface)
        assert nxt.x == 0.0

    def test_resistive_steady_state(self, flat_surface):
        p = MotorParams()
        st0 = PhaseState(x=4.0)
        nxt = step_phase(st0, p.R_phase * st0.x, p, flat_surface)
        assert nxt.x == pytest.approx(4.0, rel=1e-12)

    @given(x=st.floats(0.01, 15.0))
    @settings(max_examples=50, deadline=None)
    def test_resistive_fixed_point_everywhere(self, x):
        p = MotorParams()
        nxt = step_phase(PhaseState(x=x), p.R_phase * x, p, constant_surface(16e-3))
        assert nxt.x == pytest.approx(x, rel=1e-10)

    def test_zero_input_geometric_decay(self, flat_surface):
        p = MotorParams()
        ratio = 1 - p.T * p.R_phase / 16e-3
        assert 0 < ratio < 1
        state = PhaseState(x=5.0)
        for _ in range(10):
            nxt = step_phase(state, 0.0, p, flat_surface)
            assert nxt.x == pytest.approx(state.x * ratio, rel=1e-12)
            state = nxt

    def test_current_clamped_at_zero(self, flat_surface):
        p = MotorParams()
        nxt = step_phase(PhaseState(x=0.1), -p.V_dc, p, flat_surface)
        assert nxt.x == 0.0

    def test_nonfinite_voltage_rejected(self, flat_surface):
        with pytest.raises(ValueError):
            step_phase(PhaseState(), float("nan"), MotorParams(), flat_surface)


class TestReference:
    def test_in_window(self):
        prof = ReferenceProfile(i_ref=4.0, theta_on=10.0, theta_off=35.0)
        assert reference_at(prof, 20.0, 0) == 4.0

    def test_outside_window(self):
        prof = ReferenceProfile(i_ref=4.0, theta_on=10.0, theta_off=35.0)
        assert reference_at(prof, 5.0, 100) == 0.0
        assert reference_at(prof, 35.0, 100) == 0.0   # off edge excluded

    def test_step_event_changes_amplitude(self):
        prof = ReferenceProfile(4.0, 10.0, 35.0, step_events=((500, 5.5),))
        assert reference_at(prof, 20.0, 499) == 4.0
        assert reference_at(prof, 20.0, 500) == 5.5
        assert reference_at(prof, 20.0, 10_000) == 5.5

    @given(theta=st.floats(0, 45), k=st.integers(0, 10**6))
    @settings(max_examples=200, deadline=None)
    def test_zero_outside_window_for_all_k(self, theta, k):
        prof = ReferenceProfile(4.0, 10.0, 35.0, step_events=((100, 5.5),))
        if not (10.0 <= theta < 35.0):
            assert reference_at(prof, theta, k) == 0.0

    def test_invalid_window_rejected(self):
        with pytest.raises(ValueError):
            ReferenceProfile(4.0, 30.0, 10.0)
        with pytest.raises(ValueError):
            ReferenceProfile(-1.0, 10.0, 35.0)
