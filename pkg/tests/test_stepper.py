"""Delayed lookups, the implicit stage solve, one-step oracles, and runners."""

import warnings
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sddeint import (
    ConfigError,
    HistoryUnderflowError,
    LinearSddeParams,
    SddeProblem,
    SolverConfig,
    StageHistory,
    StageSolveError,
    delayed_ref,
    em_step,
    get_preset,
    make_linear,
    run_ensemble,
    run_trajectory,
    solve_stage,
    ssbe_legacy_step,
    ssbe_step,
)
from sddeint.stepper import legacy_kappa


def constant_delay_problem(tau, dim=1):
    """Drift-free problem used purely to probe delayed_ref geometry."""
    return SddeProblem(
        dim_state=dim,
        dim_noise=1,
        drift=lambda x, y: 0.0 * x,
        diffusion=lambda x, y: 0.0 * x[..., None],
        delay=lambda t: tau,
        initial=lambda s: np.zeros(dim),
        horizon=10.0,
        delay_floor=tau,
        delay_ceiling=tau,
    )


class TestDelayedRef:
    def test_exact_node(self):
        # tau=1, h=0.25: at n=6 the delayed time is t_2 exactly
        ref = delayed_ref(6, 0.25, constant_delay_problem(1.0))
        assert ref.kind == "interpolated"
        assert (ref.left, ref.mu) == (2, 0.0)
        assert not ref.couples_current and not ref.clamped

    def test_midpoint(self):
        # tau=1, h=0.4: at n=3 the delayed time 0.2 splits [t_0, t_1] evenly
        ref = delayed_ref(3, 0.4, constant_delay_problem(1.0))
        assert (ref.left, ref.mu) == (0, 0.5)
        assert not ref.couples_current

    def test_midpoint_resolves_half_half(self):
        p = constant_delay_problem(1.0)
        hist = StageHistory(p, 0.4)
        hist.append_stage(np.array([2.0]))
        hist.append_stage(np.array([4.0]))
        hist.append_stage(np.array([100.0]))
        ref = delayed_ref(3, 0.4, p)
        assert_allclose(hist.resolve_stages(ref), [3.0])

    def test_initial_segment(self):
        p = get_preset("example1")
        ref = delayed_ref(0, 0.25, p)
        assert ref.kind == "initial"
        assert_allclose(ref.time, -1.0)
        assert_allclose(ref.value, [0.5])

    def test_underflow_raises(self):
        shallow = replace(constant_delay_problem(2.0), delay_floor=1.0)
        with pytest.raises(HistoryUnderflowError, match="precedes the initial segment"):
            delayed_ref(0, 0.25, shallow)

    def test_couples_current_interval(self):
        # h=0.25, tau=0.125: at n=1 the delayed time is inside [t_0, t_1)
        ref = delayed_ref(1, 0.25, constant_delay_problem(0.125))
        assert (ref.left, ref.mu) == (0, 0.5)
        assert ref.couples_current

    def test_constant_interp_drops_mu(self):
        ref = delayed_ref(1, 0.25, constant_delay_problem(0.125), interp="constant")
        assert (ref.left, ref.mu) == (0, 0.0)
        assert not ref.couples_current

    def test_zero_delay_clamps_to_mu_one(self):
        ref = delayed_ref(3, 0.5, constant_delay_problem(0.0))
        assert ref.clamped
        assert (ref.left, ref.mu) == (2, 1.0)
        assert ref.couples_current

    def test_zero_delay_clamp_survives_constant_interp(self):
        ref = delayed_ref(3, 0.5, constant_delay_problem(0.0), interp="constant")
        assert ref.clamped and ref.mu == 1.0

    def test_snapping_non_representable_grid(self):
        # tau = 2/3, h = 1/3: tau/h = 2.0000000000000004 without snapping
        ref = delayed_ref(2, 1.0 / 3.0, constant_delay_problem(2.0 / 3.0))
        assert (ref.left, ref.mu) == (0, 0.0)

    def test_rejects_negative_delay(self):
        broken = replace(constant_delay_problem(1.0), delay=lambda t: -1.0)
        with pytest.raises(ConfigError, match="finite and nonnegative"):
            delayed_ref(0, 0.25, broken)

    def test_rejects_bad_interp(self):
        with pytest.raises(ConfigError, match="interp"):
            delayed_ref(0, 0.25, constant_delay_problem(0.5), interp="cubic")


class TestStageHistory:
    def test_separate_stage_and_committed_sequences(self):
        p = get_preset("example1")
        hist = StageHistory(p, 0.25)
        assert hist.n_committed == 1
        assert hist.n_stages == 0
        assert_allclose(hist.committed(0), [0.5])
        hist.append_stage(np.array([1.0]))
        hist.append_committed(np.array([2.0]))
        assert_allclose(hist.stage(0), [1.0])
        assert_allclose(hist.committed(1), [2.0])

    def test_eviction(self):
        p = get_preset("example1")
        hist = StageHistory(p, 0.25, keep=3)
        for k in range(10):
            hist.append_committed(np.array([float(k)]))
        assert hist.n_committed == 11
        assert_allclose(hist.committed(10), [9.0])
        with pytest.raises(HistoryUnderflowError, match="evicted"):
            hist.committed(2)

    def test_out_of_range(self):
        p = get_preset("example1")
        hist = StageHistory(p, 0.25)
        with pytest.raises(HistoryUnderflowError):
            hist.committed(5)
        with pytest.raises(HistoryUnderflowError):
            hist.stage(0)

    def test_coupled_ref_rejected_by_stage_resolution(self):
        p = constant_delay_problem(0.125)
        hist = StageHistory(p, 0.25)
        hist.append_stage(np.zeros(1))
        ref = delayed_ref(1, 0.25, p)
        with pytest.raises(ConfigError, match="couples the current unknown"):
            hist.resolve_stages(ref)

    def test_interpolation_weights(self):
        p = constant_delay_problem(0.375)
        hist = StageHistory(p, 0.25)
        hist.append_stage(np.array([1.0]))
        hist.append_stage(np.array([3.0]))
        ref = delayed_ref(2, 0.25, p)  # mu = 0.5 between stages 0 and 1
        assert_allclose(hist.resolve_stages(ref), [2.0])

    def test_batched_initial_broadcast(self):
        p = get_preset("example2")
        hist = StageHistory(p, 0.5, batch_shape=(6,))
        assert hist.committed(0).shape == (6, 1)
        assert_allclose(hist.committed(0), 0.5)


class TestSolveStage:
    def test_uncoupled_linear_closed_form(self):
        # c = (y + h*b*ydel) / (1 - h*a) = 0.625 / 1.5
        p = get_preset("example1")
        c = solve_stage(np.array([0.5]), np.array([0.5]), 0.25, p)
        assert_allclose(c, [5.0 / 12.0], rtol=1e-12)

    def test_coupled_linear_closed_form(self):
        # c*(1 - h*a - h*b*mu) = y + h*b*(1-mu)*left -> c = 0.6/1.6
        p = get_preset("example1")
        c = solve_stage(
            np.array([0.5]), np.array([0.5]), 0.4, p, mu=0.5, coupled=True
        )
        assert_allclose(c, [0.375], rtol=1e-12)

    def test_residual_postcondition(self):
        p = get_preset("nonlinear")
        y = np.array([0.9])
        ydel = np.array([1.0])
        cfg = SolverConfig(rel_tol=1e-12, abs_tol=1e-14)
        c = solve_stage(y, ydel, 0.5, p, cfg=cfg)
        res = np.linalg.norm(c - y - 0.5 * p.drift(c, ydel))
        assert res <= 1e-14 + 1e-12 * np.linalg.norm(c)

    def test_drift_free_identity(self):
        p = replace(get_preset("example1"), drift=lambda x, y: 0.0 * x, gammas=None)
        y = np.array([0.7])
        assert_allclose(solve_stage(y, np.array([0.1]), 3.0, p), y, rtol=0, atol=0)

    def test_newton_and_fixed_point_agree_when_contractive(self):
        """Both modes land on the same root to 10x the relative tolerance."""
        rng = np.random.default_rng(14)
        cubic = get_preset("nonlinear")
        linear = get_preset("example1")
        for p in (cubic, linear):
            for _ in range(25):
                y = rng.uniform(-1.0, 1.0, size=(1,))
                ydel = rng.uniform(-1.0, 1.0, size=(1,))
                h = float(rng.uniform(0.01, 0.06))
                a = solve_stage(y, ydel, h, p, cfg=SolverConfig(mode="newton"))
                b = solve_stage(y, ydel, h, p, cfg=SolverConfig(mode="fixed-point"))
                assert_allclose(a, b, rtol=1e-11, atol=1e-13)

    def test_fixed_point_fails_on_stiff_step(self):
        p = get_preset("nonlinear")
        cfg = SolverConfig(mode="fixed-point", max_iter=50)
        with pytest.raises(StageSolveError):
            solve_stage(np.array([1.0]), np.array([1.0]), 5.0, p, cfg=cfg)

    def test_newton_handles_stiff_step(self):
        p = get_preset("nonlinear")
        c = solve_stage(np.array([1.0]), np.array([1.0]), 5.0, p)
        res = float(np.abs(c - 1.0 - 5.0 * p.drift(c, np.array([1.0])))[0])
        assert res <= 1e-14 + 1e-12 * float(np.abs(c)[0])

    def test_analytic_jacobian_matches_finite_differences(self):
        p = get_preset("nonlinear")

        def jac(x, y):
            jx = (-4.0 - 9.0 * x**2)[..., None]
            jy = np.ones_like(x)[..., None]
            return jx, jy

        y = np.array([0.7])
        ydel = np.array([0.9])
        a = solve_stage(y, ydel, 0.5, p, cfg=SolverConfig(jacobian=jac))
        b = solve_stage(y, ydel, 0.5, p)
        assert_allclose(a, b, rtol=1e-10)

    def test_coupled_analytic_jacobian(self):
        p = get_preset("example1")

        def jac(x, y):
            shape = x.shape + (1,)
            return np.full(shape, -2.0), np.full(shape, 1.0)

        c = solve_stage(
            np.array([0.5]), np.array([0.5]), 0.4, p,
            mu=0.5, coupled=True, cfg=SolverConfig(jacobian=jac),
        )
        assert_allclose(c, [0.375], rtol=1e-12)

    def test_batched_solve_matches_per_path(self):
        p = get_preset("nonlinear")
        rng = np.random.default_rng(9)
        y = rng.standard_normal((8, 1)) * 0.5
        ydel = rng.standard_normal((8, 1)) * 0.5
        batch = solve_stage(y, ydel, 0.5, p)
        for i in range(8):
            single = solve_stage(y[i], ydel[i], 0.5, p)
            assert_array_equal(batch[i], single)

    def test_solvability_warning(self):
        p = make_linear(LinearSddeParams(0.9, 0.9, 0.0, 0.0, lag=1.0))
        with pytest.warns(RuntimeWarning, match="unique solution"):
            solve_stage(np.array([0.5]), np.array([0.5]), 1.0, p)
        # without growth constants there is nothing to warn about
        anonymous = replace(get_preset("nonlinear"), gammas=None)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            solve_stage(np.array([0.5]), np.array([0.5]), 5.0, anonymous)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            SolverConfig(mode="broyden")
        with pytest.raises(ConfigError):
            SolverConfig(max_iter=0)
        with pytest.raises(ConfigError):
            SolverConfig(rel_tol=0.0, abs_tol=0.0)


class TestOneStepOracles:
    """Hand-computed single steps on the linear presets, matched to 1e-12."""

    def test_ssbe_step(self):
        p = get_preset("example1")
        hist = StageHistory(p, 0.25)
        ystar, y1 = ssbe_step(0, hist, np.array([0.1]), p)
        assert_allclose(ystar, [5.0 / 12.0], rtol=1e-12)
        # y1 = y* + (0.5*y* + 0.5*0.5) * 0.1
        assert_allclose(y1, [0.4625], rtol=1e-12)
        assert_allclose(hist.stage(0), ystar)
        assert_allclose(hist.committed(1), y1)

    def test_em_step(self):
        p = get_preset("example1")
        hist = StageHistory(p, 0.25)
        y1 = em_step(0, hist, np.array([0.1]), p)
        # y1 = 0.5 + 0.25*(-1 + 0.5) + (0.25 + 0.25)*0.1
        assert_allclose(y1, [0.425], rtol=1e-12)

    def test_legacy_step(self):
        p = get_preset("example2")
        hist = StageHistory(p, 1.0)
        kappa = legacy_kappa(p.linear, 1.0)
        assert kappa == 1
        zstar, z1 = ssbe_legacy_step(0, hist, np.array([0.0]), p.linear, kappa)
        # kappa=1 reads the *current* committed value z_0 = 0.5:
        # z* = (0.5 + 1*3*0.5) / (1 + 6) = 2/7
        assert_allclose(zstar, [2.0 / 7.0], rtol=1e-12)
        assert_allclose(z1, zstar)  # dw = 0

    def test_legacy_reads_initial_path_below_zero(self):
        p = get_preset("example1")
        hist = StageHistory(p, 0.25)
        kappa = legacy_kappa(p.linear, 0.25)
        assert kappa == 4
        zstar, z1 = ssbe_legacy_step(0, hist, np.array([0.1]), p.linear, kappa)
        # delayed index -3 -> psi(-0.75) = 0.5; same arithmetic as example1 ssbe
        assert_allclose(zstar, [5.0 / 12.0], rtol=1e-12)
        assert_allclose(z1, [0.4625], rtol=1e-12)

    def test_legacy_rejects_non_divisor_step(self):
        p = get_preset("example1")
        with pytest.raises(ConfigError, match="integer kappa"):
            legacy_kappa(p.linear, 0.3)

    def test_legacy_kappa_snaps(self):
        assert legacy_kappa(LinearSddeParams(-1, 0, 0, 0, lag=0.3), 0.1) == 3

    def test_legacy_rejects_singular_stage(self):
        params = LinearSddeParams(a=2.0, b=0.0, c=0.0, d=0.0, lag=1.0)
        p = make_linear(params)
        hist = StageHistory(p, 1.0)
        with pytest.raises(ConfigError, match="singular"):
            ssbe_legacy_step(0, hist, np.array([0.0]), params, 1)


class TestDriftOnlyClosedForms:
    """With zero diffusion the schemes reduce to backward/forward Euler."""

    A = -0.8
    H = 0.1
    N = 100
    TIGHT = SolverConfig(rel_tol=1e-14, abs_tol=1e-15)

    def _problem(self):
        return make_linear(
            LinearSddeParams(self.A, 0.0, 0.0, 0.0, lag=1.0),
            initial=1.0,
            horizon=self.N * self.H,
        )

    def test_ssbe_is_backward_euler(self):
        p = self._problem()
        zeros = np.zeros((self.N, 1))
        traj = run_trajectory(p, "ssbe", self.H, zeros, cfg=self.TIGHT)
        n = np.arange(self.N + 1)
        assert_allclose(
            traj.states[:, 0], (1.0 - self.H * self.A) ** (-n.astype(float)),
            rtol=1e-12,
        )

    def test_em_is_forward_euler(self):
        p = self._problem()
        zeros = np.zeros((self.N, 1))
        traj = run_trajectory(p, "em", self.H, zeros)
        n = np.arange(self.N + 1)
        assert_allclose(
            traj.states[:, 0], (1.0 + self.H * self.A) ** n.astype(float),
            rtol=1e-12,
        )

    def test_legacy_matches_ssbe_without_noise_or_delay_weight(self):
        p = self._problem()
        zeros = np.zeros((self.N, 1))
        a = run_trajectory(p, "ssbe", self.H, zeros, cfg=self.TIGHT)
        b = run_trajectory(p, "ssbe-legacy", self.H, zeros)
        assert_allclose(a.states, b.states, rtol=1e-12)


class TestSchemeMechanics:
    def test_substitution_identity(self):
        """Consecutive stages satisfy
        y*_n = y*_{n-1} + h f(y*_n, y~*_n) + g(y*_{n-1}, y~*_{n-1}) dw_{n-1}
        within the solver tolerance on every step."""
        p = get_preset("example2", horizon=2.0)
        h = 2.0**-3
        rng = np.random.default_rng(5)
        dw = rng.standard_normal((16, 1)) * np.sqrt(h)
        hist = StageHistory(p, h)
        stages, tildes = [], []
        for n in range(16):
            ref = delayed_ref(n, h, p)
            ytilde = (
                ref.value if ref.kind == "initial" else hist.resolve_stages(ref)
            )
            ystar, _ = ssbe_step(n, hist, dw[n], p)
            stages.append(ystar)
            tildes.append(ytilde)
        for n in range(1, 16):
            rhs = (
                stages[n - 1]
                + h * p.drift(stages[n], tildes[n])
                + p.diffusion(stages[n - 1], tildes[n - 1])[..., 0] * dw[n - 1]
            )
            assert_allclose(stages[n], rhs, rtol=1e-10, atol=1e-12)

    def test_states_measurable_in_past_increments(self):
        """y_0..y_k depend only on dw_0..dw_{k-1}."""
        p = get_preset("example2", horizon=2.0)
        h = 0.25
        rng = np.random.default_rng(3)
        base = rng.standard_normal((8, 1)) * np.sqrt(h)
        tampered = base.copy()
        tampered[5:] += 1.0
        for scheme in ("ssbe", "ssbe-legacy", "em"):
            a = run_trajectory(p, scheme, h, base)
            b = run_trajectory(p, scheme, h, tampered)
            assert_array_equal(a.states[:6], b.states[:6])
            assert not np.array_equal(a.states[6:], b.states[6:])

    def test_interp_mode_irrelevant_on_aligned_grid(self):
        """Constant lags hitting nodes exactly give mu = 0 for every step."""
        p = get_preset("example1", horizon=2.0)
        dw = np.random.default_rng(11).standard_normal((8, 1)) * 0.5
        a = run_trajectory(p, "ssbe", 0.25, dw, interp="linear")
        b = run_trajectory(p, "ssbe", 0.25, dw, interp="constant")
        assert_array_equal(a.states, b.states)

    def test_interp_mode_matters_off_grid(self):
        p = replace(
            constant_delay_problem(0.375),
            drift=lambda x, y: -x + y,
            diffusion=lambda x, y: (0.1 * x + 0.1 * y)[..., None],
            initial=lambda s: np.ones(1),
        )
        dw = np.random.default_rng(12).standard_normal((8, 1)) * 0.5
        a = run_trajectory(p, "ssbe", 0.25, dw, interp="linear")
        b = run_trajectory(p, "ssbe", 0.25, dw, interp="constant")
        assert not np.array_equal(a.states, b.states)

    def test_multidimensional_problem(self):
        A = np.array([[-2.0, 0.5], [0.0, -3.0]])
        B = np.array([[0.5, 0.0], [0.2, 0.4]])

        def drift(x, y):
            return x @ A.T + y @ B.T

        def diffusion(x, y):
            g1 = 0.2 * x
            g2 = 0.1 * y
            return np.stack([g1, g2], axis=-1)

        p = SddeProblem(
            dim_state=2,
            dim_noise=2,
            drift=drift,
            diffusion=diffusion,
            delay=lambda t: 0.5,
            initial=lambda s: np.array([1.0, -1.0]),
            horizon=2.0,
            delay_floor=0.5,
            delay_ceiling=0.5,
        )
        p.validate()
        dw = np.random.default_rng(4).standard_normal((16, 2)) * np.sqrt(0.125)
        for scheme in ("ssbe", "em"):
            traj = run_trajectory(p, scheme, 0.125, dw)
            assert traj.states.shape == (17, 2)
            assert traj.status == "ok"
            assert np.all(np.isfinite(traj.states))

    def test_pantograph_runs_with_vanishing_initial_delay(self):
        p = get_preset("pantograph", horizon=2.0)
        dw = np.random.default_rng(8).standard_normal((16, 1)) * np.sqrt(0.125)
        traj = run_trajectory(p, "ssbe", 0.125, dw)
        assert traj.status == "ok"
        assert traj.flags["zero_delay_clamped"]

    def test_legacy_requires_linear_problem(self):
        p = get_preset("nonlinear")
        with pytest.raises(ConfigError, match="scalar linear"):
            run_trajectory(p, "ssbe-legacy", 0.25, np.zeros((4, 1)))


class TestRunners:
    def test_blowup_freezes_and_clips(self):
        p = get_preset("example3", horizon=10.0)
        zeros = np.zeros((20, 1))  # EM with 1 + h*a = -9: deterministic blow-up
        traj = run_trajectory(p, "em", 0.5, zeros)
        assert traj.status == "blow-up"
        assert traj.abort_step >= 0
        assert np.all(np.abs(traj.states) <= 1e10)
        frozen = traj.states[traj.abort_step + 1]
        assert_array_equal(traj.states[traj.abort_step + 1 :],
                           np.broadcast_to(frozen, traj.states[traj.abort_step + 1 :].shape))

    def test_custom_blowup_threshold(self):
        p = get_preset("example3", horizon=10.0)
        zeros = np.zeros((20, 1))
        traj = run_trajectory(p, "em", 0.5, zeros, blowup_threshold=100.0)
        assert traj.status == "blow-up"
        assert np.all(np.abs(traj.states) <= 100.0)

    def test_solver_failure_recorded(self):
        p = get_preset("nonlinear", horizon=10.0)
        cfg = SolverConfig(mode="fixed-point", max_iter=30)
        traj = run_trajectory(p, "ssbe", 5.0, np.zeros((2, 1)), cfg=cfg)
        assert traj.status == "solver-failure"
        assert traj.abort_step == 0
        assert_array_equal(traj.states[1], traj.states[0])

    def test_ensemble_isolates_troubled_paths(self):
        """Each path's fate is identical whether run alone or in a batch."""
        p = get_preset("example3", horizon=8.0)
        rng = np.random.default_rng(17)
        dw = rng.standard_normal((16, 3, 1)) * np.sqrt(0.5)
        dw[:, 1, :] = 0.0  # path 1 blows up deterministically under EM
        res = run_ensemble(p, "em", 0.5, dw)
        assert res.status_names()[1] == "blow-up"
        for i in range(3):
            single = run_trajectory(p, "em", 0.5, dw[:, i, :])
            assert_array_equal(res.endpoints[i], single.endpoint)
            assert res.status_names()[i] == single.status
            assert res.abort_steps[i] == single.abort_step

    def test_ensemble_matches_stacked_trajectories_bitwise(self):
        p = get_preset("example2", horizon=2.0)
        rng = np.random.default_rng(21)
        dw = rng.standard_normal((8, 5, 1)) * 0.5
        res = run_ensemble(p, "ssbe", 0.25, dw, collect="path")
        for i in range(5):
            single = run_trajectory(p, "ssbe", 0.25, dw[:, i, :])
            assert_array_equal(res.paths[:, i, :], single.states)

    def test_trace_collection(self):
        p = get_preset("example2", horizon=2.0)
        dw = np.random.default_rng(2).standard_normal((8, 4, 1)) * 0.5
        res = run_ensemble(p, "ssbe", 0.25, dw, collect="trace")
        assert res.sq_norms.shape == (9, 4)
        assert res.paths is None
        full = run_ensemble(p, "ssbe", 0.25, dw, collect="path")
        assert_array_equal(res.sq_norms, (full.paths**2).sum(axis=-1))

    def test_unknown_scheme_and_collect(self):
        p = get_preset("example1")
        with pytest.raises(ConfigError, match="unknown scheme"):
            run_trajectory(p, "milstein", 0.25, np.zeros((4, 1)))
        with pytest.raises(ConfigError, match="collect"):
            run_ensemble(p, "ssbe", 0.25, np.zeros((4, 2, 1)), collect="everything")

    def test_noise_dimension_checked(self):
        p = get_preset("example1")
        with pytest.raises(ConfigError, match="noise components"):
            run_trajectory(p, "ssbe", 0.25, np.zeros((4, 3)))

    def test_zero_step_run_returns_initial_state(self):
        p = get_preset("example1")
        traj = run_trajectory(p, "ssbe", 0.25, np.zeros((0, 1)))
        assert traj.states.shape == (1, 1)
        assert_allclose(traj.states[0], [0.5])
        assert traj.status == "ok"
