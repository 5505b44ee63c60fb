"""Flow integration: fixed points, comparison, equivariance, convergence."""

import math

import numpy as np
import pytest

import maflow as mf
from maflow.elliptic import solve_ma
from maflow.errors import ConfigError, KaehlerConeViolation
from maflow.flow import (FlowConfig, FlowState, TwistSpec, continue_run,
                         limit_potential, maximal_stretch_gap, normalize_h,
                         rhs, run, run_levels, step, t_max)
from maflow.geometry import PotentialField, hessian_raw
from maflow.initial import PotentialSpec, approximation_sequence, cos_mode
from maflow.oracles import heat_decay_factor


def grid1(res=32, period=1.0):
    return mf.TorusGrid(1, res, period)


def mode(grid, kvec, amp, phase=0.0):
    return PotentialField(grid, cos_mode(grid, kvec, amp, phase))


class TestTMax:
    def test_nonnegative_twist_lives_forever(self):
        assert t_max(TwistSpec(c=0.0)) == math.inf
        assert t_max(TwistSpec(c=0.3)) == math.inf

    def test_negative_twist_kills_the_class(self):
        assert t_max(TwistSpec(c=-0.25)) == pytest.approx(4.0)


class TestConfigValidation:
    def test_horizon_must_stay_nef(self):
        g = grid1()
        with pytest.raises(ConfigError):
            FlowConfig(grid=g, twist=TwistSpec(c=-1.0), T=1.0)

    def test_standing_normalization_guard(self):
        g = grid1()
        with pytest.raises(ConfigError):
            FlowConfig(grid=g, twist=TwistSpec(c=-0.4), T=2.0)

    def test_ncmaf_needs_trivial_twist(self):
        g = grid1()
        with pytest.raises(ConfigError):
            FlowConfig(grid=g, variant="ncmaf", twist=TwistSpec(c=0.1), T=0.5)

    def test_h_renormalized(self):
        g = grid1()
        cfg = FlowConfig(grid=g, h=PotentialField(g, np.full(g.shape, 0.7)), T=0.1)
        assert abs(float(np.exp(cfg.h.values).mean()) - 1.0) < 1e-12


class TestRhs:
    def test_flat_fixed_point(self):
        g = grid1()
        cfg = FlowConfig(grid=g, T=0.5)
        assert np.abs(rhs(0.0, PotentialField.zeros(g), cfg)).max() == 0.0

    def test_ncmaf_constant_gives_constant(self):
        g = grid1()
        cfg = FlowConfig(grid=g, variant="ncmaf", T=0.5)
        a = 0.37
        r = rhs(0.0, PotentialField(g, np.full(g.shape, a)), cfg)
        assert np.allclose(r, a)

    def test_small_amplitude_log_expansion(self):
        # |log(1 - x) + x| <= x^2 for |x| <= 1/2, x = pi^2 eps cos
        g = grid1(64)
        eps = 0.02
        cfg = FlowConfig(grid=g, T=0.5)
        r = rhs(0.0, mode(g, (1, 0), eps), cfg)
        lin = -np.pi ** 2 * eps * np.broadcast_to(
            np.cos(2 * np.pi * g.coord(0)), g.shape)
        assert np.abs(r - lin).max() <= np.pi ** 4 * eps ** 2

    def test_cone_violation_propagates(self):
        g = grid1()
        cfg = FlowConfig(grid=g, T=0.5)
        with pytest.raises(KaehlerConeViolation):
            rhs(0.0, mode(g, (1, 0), 0.2), cfg)


class TestStep:
    def test_fixed_point_is_stationary(self):
        g = grid1()
        h = normalize_h(mode(g, (1, 0), 0.1))
        u, _ = solve_ma(0.0, grid=g, h=h)
        cfg = FlowConfig(grid=g, h=h, T=1.0)
        st = step(FlowState(0.0, u, None, None), cfg)
        assert np.abs(st.phi.values - u.values).max() <= 1e-9

    def test_zero_stays_zero_under_ncmaf(self):
        g = grid1()
        cfg = FlowConfig(grid=g, variant="ncmaf", T=1.0)
        st = step(FlowState(0.0, PotentialField.zeros(g), None, None), cfg)
        assert np.abs(st.phi.values).max() == 0.0

    def test_small_amplitude_step_matches_heat_oracle(self):
        # one step of the nonlinear flow = heat decay + O(eps^2)
        g = grid1(64)
        eps = 5e-3
        cfg = FlowConfig(grid=g, T=1.0, dt_policy="rk4_fixed", dt_init=1e-4)
        st = step(FlowState(0.0, mode(g, (1, 0), eps), None, None), cfg)
        exact = eps * heat_decay_factor(g, (1, 0), 1e-4) * np.broadcast_to(
            np.cos(2 * np.pi * g.coord(0)), g.shape)
        # leading nonlinear correction is -x^2/2 with x = pi^2 eps cos
        assert np.abs(st.phi.values - exact).max() <= np.pi ** 4 * eps ** 2 * 1e-4


class TestRun:
    def test_zero_horizon_keeps_initial_state_only(self):
        g = grid1()
        tr = run(mode(g, (1, 0), 0.02), FlowConfig(grid=g, T=0.0))
        assert len(tr.times) == 1 and len(tr.snapshots) == 1

    def test_determinism(self):
        g = grid1()
        cfg = FlowConfig(grid=g, T=0.12, snapshot_times=(0.06,), record_every=7)
        a = run(mode(g, (1, 0), 0.03), cfg)
        b = run(mode(g, (1, 0), 0.03), cfg)
        assert np.array_equal(a.times, b.times)
        for k in a.series:
            assert np.array_equal(a.series[k], b.series[k])

    def test_constant_shift_equivariance(self):
        g = grid1()
        cfg = FlowConfig(grid=g, T=0.15, snapshot_times=(0.15,))
        phi = mode(g, (1, 0), 0.03)
        a = run(phi, cfg)
        b = run(phi + 2.3, cfg)
        d = b.snapshot_at(0.15).phi - a.snapshot_at(0.15).phi
        assert np.abs(d - 2.3).max() < 1e-10

    def test_volume_identity_along_twisted_run(self):
        g = grid1()
        tw = TwistSpec(c=-0.5, psi_chi=mode(g, (0, 1), 0.004))
        cfg = FlowConfig(grid=g, twist=tw, T=0.5, record_every=10)
        tr = run(mode(g, (1, 0), 0.02), cfg)
        target = (1.0 - 0.5 * tr.column("t")) ** 1 * g.volume
        assert np.abs(tr.column("vol") / target - 1.0).max() < 1e-6

    def test_comparison_principle_between_ordered_runs(self):
        g = grid1()
        cfg = FlowConfig(grid=g, T=0.2, snapshot_times=(0.1, 0.2))
        lo = run(mode(g, (1, 0), 0.03), cfg)
        hi = run(PotentialField(g, cos_mode(g, (1, 0), 0.03) + 0.4
                                + 0.05 * (1.0 + cos_mode(g, (0, 1), 1.0))), cfg)
        for t in (0.1, 0.2):
            d = hi.snapshot_at(t).phi - lo.snapshot_at(t).phi
            assert d.min() > -1e-6

    def test_restart_reproduces_series(self):
        g = grid1()
        cfg = FlowConfig(grid=g, T=0.2, snapshot_times=(0.08, 0.14, 0.2),
                         record_every=5)
        full = run(mode(g, (1, 0), 0.03), cfg)
        tail = continue_run(full, 0.08, cfg)
        # series rows after the restart time coincide to 1e-12
        mask = full.times >= 0.08 - 1e-15
        assert len(tail.times) == int(mask.sum())
        assert np.abs(full.times[mask] - tail.times).max() < 1e-14
        for k in ("sup", "inf", "E", "fmax", "min_eig"):
            assert np.abs(full.series[k][mask] - tail.series[k]).max() <= 1e-12

    def test_restart_reproduces_semi_implicit_series(self):
        g = grid1()
        cfg = FlowConfig(grid=g, T=0.2, dt_policy="semi_implicit", dt_init=1e-3,
                         snapshot_times=(0.08, 0.14, 0.2), record_every=10)
        full = run(mode(g, (1, 0), 0.03), cfg)
        tail = continue_run(full, 0.08, cfg)
        mask = full.times >= 0.08 - 1e-15
        for k in ("sup", "inf", "E"):
            assert np.abs(full.series[k][mask] - tail.series[k]).max() <= 1e-12

    def test_timestep_fourth_order_convergence(self):
        g = grid1(16)
        phi = mode(g, (1, 0), 0.03)
        sols = []
        for dt in (4e-4, 2e-4, 1e-4):
            cfg = FlowConfig(grid=g, T=0.04, dt_policy="rk4_fixed", dt_init=dt)
            sols.append(run(phi, cfg).snapshot_at(0.04).phi)
        e1 = np.abs(sols[0] - sols[1]).max()
        e2 = np.abs(sols[1] - sols[2]).max()
        order = math.log2(e1 / e2)
        assert 3.5 <= order <= 4.2

    def test_ncmaf_rescaling_identity(self):
        # normalized flow at t  <->  e^t * (twisted flow, c=-1) at 1 - e^-t
        g = grid1(32)
        phi0 = mode(g, (1, 0), 0.03)
        tn = 0.4
        s = 1.0 - math.exp(-tn)
        trn = run(phi0, FlowConfig(grid=g, variant="ncmaf", T=tn,
                                   snapshot_times=(tn,)))
        trc = run(phi0, FlowConfig(grid=g, twist=TwistSpec(c=-1.0), T=s,
                                   snapshot_times=(s,)))
        mn = 1.0 + hessian_raw(g, trn.snapshot_at(tn).phi)
        mc = (1.0 - s) + hessian_raw(g, trc.snapshot_at(s).phi)
        rel = np.abs(mn - math.exp(tn) * mc) / np.abs(math.exp(tn) * mc)
        assert rel.max() < 1e-4

    def test_semi_implicit_tracks_rk4(self):
        g = grid1(32)
        phi0 = mode(g, (1, 0), 0.03)
        a = run(phi0, FlowConfig(grid=g, T=0.2, snapshot_times=(0.2,)))
        b = run(phi0, FlowConfig(grid=g, T=0.2, dt_policy="semi_implicit",
                                 dt_init=1e-4, snapshot_times=(0.2,)))
        # splitting error of the stabilized scheme, not spectral accuracy
        assert np.abs(a.snapshot_at(0.2).phi - b.snapshot_at(0.2).phi).max() < 5e-5


@pytest.fixture(scope="module")
def level_runs():
    g = mf.TorusGrid(1, 64, period=2.0)
    spec = PotentialSpec("zero_lelong_unbounded", a=0.5)
    # truncation depth below the sample minimum: decrements are then
    # mollification-driven and fall like ratio^2
    seq = approximation_sequence(spec, g, 4, K=3.0, ratio=0.55)
    cfg = FlowConfig(grid=g, T=0.1, snapshot_times=(0.05, 0.1),
                     record_every=50)
    return seq, cfg, run_levels(seq, cfg)


class TestLevelsAndLimit:

    def test_levels_stay_ordered_along_the_flow(self, level_runs):
        _, _, trajs = level_runs
        for t in (0.05, 0.1):
            for hi, lo in zip(trajs[:-1], trajs[1:]):
                gap = (hi.snapshot_at(t).phi - lo.snapshot_at(t).phi).min()
                assert gap > -1e-6

    def test_limit_decrements_fall_geometrically(self, level_runs):
        _, _, trajs = level_runs
        _, rep = limit_potential(trajs, t=0.1)
        assert rep.converged
        assert all(r <= 0.7 for r in rep.ratios)
        assert rep.monotone

    def test_limit_below_every_level(self, level_runs):
        _, _, trajs = level_runs
        lim, _ = limit_potential(trajs, t=0.1)
        for tr in trajs:
            assert (lim.values - tr.snapshot_at(0.1).phi).max() <= 1e-9

    def test_sequence_independence_reported_not_asserted(self):
        g = mf.TorusGrid(1, 64, period=2.0)
        spec = PotentialSpec("smooth", modes=[((1, 0), 0.03, 0.0)])
        cfg = FlowConfig(grid=g, T=0.05, snapshot_times=(0.05,), record_every=50)
        rep = maximal_stretch_gap(spec, g, cfg, 0.05, J=3)
        assert "sup_gap" in rep and rep["sup_gap"] >= 0.0


class TestDealias:
    def test_two_thirds_rule_run_stays_consistent(self):
        g = grid1(32)
        phi0 = mode(g, (1, 0), 0.03)
        cfg = FlowConfig(grid=g, T=0.1, snapshot_times=(0.1,), dealias=True,
                         record_every=20)
        tr = run(phi0, cfg)
        assert np.abs(tr.column("vol") - g.volume).max() < 1e-8
        plain = run(phi0, FlowConfig(grid=g, T=0.1, snapshot_times=(0.1,),
                                     record_every=20))
        # low-frequency data: filtering changes almost nothing
        assert np.abs(tr.snapshot_at(0.1).phi
                      - plain.snapshot_at(0.1).phi).max() < 1e-6


class TestSingularPointDecrements:
    def test_pole_decrements_shrink_with_level_after_smoothing(self):
        g = mf.TorusGrid(1, 64, period=2.0)
        spec = PotentialSpec("lelong", gamma=0.6)
        seq = approximation_sequence(spec, g, 4, K=2.0)
        t = 0.35   # past gamma/2: the pit has filled
        cfg = FlowConfig(grid=g, T=t, snapshot_times=(t,), record_every=200)
        trajs = run_levels(seq, cfg)
        pit = np.unravel_index(np.argmin(seq.levels[-1].phi.values),
                               g.shape)
        decs = [abs(a.snapshot_at(t).phi[pit] - b.snapshot_at(t).phi[pit])
                for a, b in zip(trajs[:-1], trajs[1:])]
        assert all(d2 < d1 for d1, d2 in zip(decs[:-1], decs[1:]))


class TestSmoothLevelClosenessAlongFlow:
    def test_levels_within_delta_squared_at_positive_time(self):
        # the comparison principle contracts sup differences, so flowed
        # levels stay within the O(delta^2) initial gaps
        g = grid1(32)
        spec = PotentialSpec("smooth", modes=[((1, 0), 0.03, 0.0)])
        seq = approximation_sequence(spec, g, 4)
        cfg = FlowConfig(grid=g, T=0.1, snapshot_times=(0.1,), record_every=100)
        trajs = run_levels(seq, cfg)
        for j, (hi, lo) in enumerate(zip(trajs[:-1], trajs[1:])):
            gap = np.abs(hi.snapshot_at(0.1).phi - lo.snapshot_at(0.1).phi).max()
            assert gap <= 8.0 * seq.levels[j].delta ** 2
