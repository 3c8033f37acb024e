import numpy as np
import pytest

from ttriemann import completion as cp
from ttriemann import hessian as hs
from ttriemann import tangent as tg
from ttriemann.optim import (
    CSV_HEADER,
    RunLog,
    TrustRegionConfig,
    als_minimize,
    rcg_minimize,
    rtr_minimize,
    tcg_solve,
)
from ttriemann.tt import Shape, random_tt


def make_problem(shape, n_obs, seed, fully_observed=False):
    target = random_tt(shape, seed=seed)
    if fully_observed:
        idx = np.stack(np.meshgrid(*[np.arange(m) for m in shape.n],
                                   indexing="ij"), -1).reshape(-1, shape.d)
    else:
        rng = np.random.default_rng(seed + 1)
        codes = rng.choice(shape.num_elements, size=n_obs, replace=False)
        idx = np.stack(np.unravel_index(codes, shape.n), -1)
    train = cp.observe(target, idx)
    rng = np.random.default_rng(seed + 2)
    codes = rng.choice(shape.num_elements, size=min(n_obs, shape.num_elements),
                       replace=False)
    test = cp.observe(target, np.stack(np.unravel_index(codes, shape.n), -1))
    return target, cp.CompletionProblem(train, test)


class TestConfig:
    def test_defaults_match_reference_radii(self):
        cfg = TrustRegionConfig()
        assert cfg.initial_radius == 100.0
        assert cfg.max_radius == 100.0 * 2**11
        assert cfg.rho_prime == 0.1
        assert cfg.kappa == 0.1 and cfg.theta == 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            TrustRegionConfig(initial_radius=0.0)
        with pytest.raises(ValueError):
            TrustRegionConfig(initial_radius=10.0, max_radius=1.0)
        with pytest.raises(ValueError):
            TrustRegionConfig(rho_prime=0.3)


class TestRunLog:
    def test_strictly_increasing_iterations(self):
        log = RunLog(algo="rtr")
        log.append(it=0, time_s=0.0, cost=1.0, test_cost=None, grad_norm=1.0,
                   radius=1.0, step_type="init")
        with pytest.raises(ValueError):
            log.append(it=0, time_s=0.1, cost=0.5, test_cost=None,
                       grad_norm=0.5, radius=1.0, step_type="accept")

    def test_csv_schema(self, tmp_path):
        log = RunLog(algo="als", trial=3)
        log.append(it=0, time_s=0.0, cost=1.0, test_cost=2.0, grad_norm=None,
                   radius=None, step_type="init")
        path = tmp_path / "log.csv"
        log.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0].split(",") == CSV_HEADER
        row = lines[1].split(",")
        assert row[0] == "3" and row[1] == "als"
        assert row[6] == "" and row[7] == ""  # no gradient, no radius


class TestTCG:
    @pytest.fixture
    def space(self):
        X, fac = tg.prepare_base(random_tt(Shape.of((3, 3, 3), (2, 2)),
                                           seed=4))
        g = tg.random_tangent(X, fac, seed=5)
        return X, fac, g

    def test_identity_hessian_gives_minus_gradient(self, space):
        _, _, g = space
        s, Hs, status = tcg_solve(lambda v: v, g, radius=10 * g.norm())
        assert status == "converged"
        assert (s + g).norm() <= 1e-10 * g.norm()
        assert (Hs + g).norm() <= 1e-10 * g.norm()

    def test_negative_curvature_hits_boundary(self, space):
        _, _, g = space
        s, _, status = tcg_solve(lambda v: -1.0 * v, g, radius=2.5)
        assert status == "negative_curvature"
        assert s.norm() == pytest.approx(2.5, rel=1e-10)

    def test_radius_binds(self, space):
        _, _, g = space
        s, _, status = tcg_solve(lambda v: v, g, radius=0.5 * g.norm())
        assert status == "boundary"
        assert s.norm() == pytest.approx(0.5 * g.norm(), rel=1e-10)

    def test_residual_tolerance_honored(self, space):
        X, fac, g = space
        # SPD-ish operator: identity plus a low-rank-ish positive bump
        w = tg.random_tangent(X, fac, seed=6)
        w = (1.0 / w.norm()) * w

        def H(v):
            return v + 2.0 * tg.tangent_inner(w, v) * w

        kappa_tcg, theta = 0.1, 1.0
        s, _, status = tcg_solve(H, g, radius=1e6, kappa=kappa_tcg,
                                 theta=theta, max_inner=50)
        assert status == "converged"
        resid = (H(s) + g).norm()
        assert resid <= g.norm() * min(kappa_tcg, g.norm()**theta) + 1e-12

    def test_model_decrease_at_least_cauchy(self, space):
        X, fac, g = space
        w = tg.random_tangent(X, fac, seed=7)
        w = (1.0 / w.norm()) * w

        def H(v):
            return 0.5 * v + 3.0 * tg.tangent_inner(w, v) * w

        radius = 0.2 * g.norm()
        s, Hs, _ = tcg_solve(H, g, radius=radius)

        def model(v, Hv):
            return tg.tangent_inner(g, v) + 0.5 * tg.tangent_inner(v, Hv)

        gn = g.norm()
        gHg = tg.tangent_inner(g, H(g))
        t_c = radius / gn if gHg <= 0 else min(gn**2 / gHg, radius / gn)
        cauchy = (-t_c) * g
        assert model(s, Hs) <= model(cauchy, H(cauchy)) + 1e-12

    def test_gauge_violation_aborts(self, space):
        X, fac, g = space

        def bad(v):
            cores = [c.copy() for c in v.cores]
            cores[0] = cores[0] + 0.5 * X.cores[0]  # leaves the gauge
            return tg.TangentVector(X, fac, "gauged", cores, validate=False)

        with pytest.raises(RuntimeError):
            tcg_solve(bad, g, radius=1.0)


class TestRTR:
    def test_benign_instance_converges_fast(self):
        # fully observed completion: quadratic-like, strongly convex near
        # the target
        shape = Shape.of((3, 3, 3), (2, 2))
        target, prob = make_problem(shape, 0, seed=10, fully_observed=True)
        X0 = random_tt(shape, seed=12)
        cfg = TrustRegionConfig(max_outer=30, grad_tol=1e-9)
        X, log = rtr_minimize(prob, X0, cfg)
        assert log.final.grad_norm < 1e-9
        assert log.final.it <= 30

    def test_superlinear_tail(self):
        shape = Shape.of((3, 3, 3, 3), (2, 2, 2))
        target, prob = make_problem(shape, 70, seed=20)
        X0 = random_tt(shape, seed=22)
        cfg = TrustRegionConfig(max_outer=60, grad_tol=1e-12)
        X, log = rtr_minimize(prob, X0, cfg)
        acc = [r.grad_norm for r in log.rows if r.step_type.startswith("accept")]
        tail = acc[-4:]
        assert len(tail) == 4
        for a, b in zip(tail[:-1], tail[1:]):
            assert b <= 10.0 * a**1.5

    def test_exact_and_fd_iterates_agree_initially(self):
        shape = Shape.of((3, 3, 3), (2, 2))
        target, prob = make_problem(shape, 20, seed=30)
        X0 = random_tt(shape, seed=31)
        cfg = TrustRegionConfig(max_outer=5, grad_tol=1e-15)
        _, log_exact = rtr_minimize(prob, X0, cfg, hess_mode="exact")
        _, log_fd = rtr_minimize(prob, X0, cfg, hess_mode="fd")
        for a, b in zip(log_exact.rows[:6], log_fd.rows[:6]):
            assert a.cost == pytest.approx(b.cost, rel=1e-4, abs=1e-12)

    def test_rejected_steps_keep_iterate(self):
        shape = Shape.of((3, 3, 3), (2, 2))
        target, prob = make_problem(shape, 20, seed=40)
        X0 = random_tt(shape, seed=41)
        cfg = TrustRegionConfig(max_outer=40, grad_tol=1e-9)
        _, log = rtr_minimize(prob, X0, cfg)
        for prev, cur in zip(log.rows[:-1], log.rows[1:]):
            if cur.step_type.startswith("reject"):
                assert cur.cost == prev.cost
                assert cur.grad_norm == prev.grad_norm
            if cur.step_type.startswith("accept"):
                assert cur.cost <= prev.cost

    def test_radius_update_rules(self):
        shape = Shape.of((3, 3, 3), (2, 2))
        target, prob = make_problem(shape, 20, seed=50)
        X0 = random_tt(shape, seed=51)
        cfg = TrustRegionConfig(initial_radius=1.0, max_radius=8.0,
                                max_outer=40, grad_tol=1e-9)
        _, log = rtr_minimize(prob, X0, cfg)
        for prev, cur in zip(log.rows[:-1], log.rows[1:]):
            ratio = cur.radius / prev.radius
            assert any(abs(ratio - v) < 1e-12 for v in (1.0, 0.25, 2.0)) \
                or cur.radius == 8.0
        assert max(r.radius for r in log.rows) <= 8.0

    def test_iterates_stay_on_manifold(self):
        shape = Shape.of((3, 3, 3), (2, 2))
        target, prob = make_problem(shape, 20, seed=60)
        X0 = random_tt(shape, seed=61)
        X, _ = rtr_minimize(prob, X0, TrustRegionConfig(max_outer=10,
                                                        grad_tol=1e-9))
        assert X.is_left_orthogonal
        from ttriemann.tt import tt_rank
        assert tt_rank(X.to_dense()) == (2, 2)

    def test_determinism(self):
        shape = Shape.of((3, 3, 3), (2, 2))
        target, prob = make_problem(shape, 25, seed=70)
        X0 = random_tt(shape, seed=71)
        cfg = TrustRegionConfig(max_outer=15, grad_tol=1e-10)
        _, log1 = rtr_minimize(prob, X0, cfg)
        _, log2 = rtr_minimize(prob, X0, cfg)
        for a, b in zip(log1.rows, log2.rows):
            assert (a.cost, a.grad_norm, a.radius, a.step_type) == \
                (b.cost, b.grad_norm, b.radius, b.step_type)


class TestRCG:
    def test_monotone_cost(self):
        shape = Shape.of((3, 3, 3), (2, 2))
        target, prob = make_problem(shape, 22, seed=80)
        X0 = random_tt(shape, seed=81)
        _, log = rcg_minimize(prob, X0, TrustRegionConfig(max_outer=50,
                                                          grad_tol=1e-8))
        costs = [r.cost for r in log.rows]
        assert all(b <= a + 1e-12 * max(1, a) for a, b in
                   zip(costs[:-1], costs[1:]))

    def test_converges_on_benign_instance(self):
        shape = Shape.of((3, 3, 3), (2, 2))
        target, prob = make_problem(shape, 0, seed=82, fully_observed=True)
        X0 = random_tt(shape, seed=83)
        _, log = rcg_minimize(prob, X0, TrustRegionConfig(max_outer=500,
                                                          grad_tol=1e-6))
        assert log.final.grad_norm < 1e-6

    def test_log_schema_matches_rtr(self):
        shape = Shape.of((3, 3, 3), (2, 2))
        target, prob = make_problem(shape, 20, seed=84)
        X0 = random_tt(shape, seed=85)
        _, log = rcg_minimize(prob, X0, TrustRegionConfig(max_outer=3))
        r = log.rows[-1]
        assert r.grad_norm is not None and r.radius is None


class TestALS:
    def test_per_update_monotone(self):
        shape = Shape.of((3, 3, 3, 3), (2, 2, 2))
        target, prob = make_problem(shape, 70, seed=90)
        X0 = random_tt(shape, seed=91)
        trace = []
        als_minimize(prob, X0, sweeps=3, cost_trace=trace)
        for a, b in zip(trace[:-1], trace[1:]):
            assert b <= a + 1e-10 * max(1.0, a)

    def test_fully_observed_exact_recovery(self):
        shape = Shape.of((3, 3, 3), (2, 2))
        target, prob = make_problem(shape, 0, seed=92, fully_observed=True)
        X0 = random_tt(shape, seed=93)
        X, log = als_minimize(prob, X0, sweeps=10)
        assert log.final.cost <= 1e-8
        assert np.allclose(X.to_dense(), target.to_dense(), atol=1e-4)

    def test_log_has_no_gradient_column(self):
        shape = Shape.of((3, 3, 3), (2, 2))
        target, prob = make_problem(shape, 20, seed=94)
        X0 = random_tt(shape, seed=95)
        _, log = als_minimize(prob, X0, sweeps=2)
        assert all(r.grad_norm is None for r in log.rows)
        assert log.rows[-1].it == 2
