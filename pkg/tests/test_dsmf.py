import numpy as np
import pytest

from smfilter.dsmf import (
    FilterOptions,
    SystemModel,
    fuse,
    golden_section,
    measurement_ellipsoid,
    optimize_rho,
    predict,
    step,
)
from smfilter.ellipsoid import (
    Ellipsoid,
    contains,
    optimal_p,
    sample_interior,
    symmetrize,
)
from smfilter.errors import EmptyIntersectionError, MeasurementDomainError


def random_spd(rng, n, scale=1.0):
    a = rng.standard_normal((n, n))
    return symmetrize(a @ a.T + n * scale * np.eye(n))


def linear_model(n=2, e_p=None, q_scale=1e-2, r_scale=1e-2):
    """Linear dynamics x' = F x with measurement y = E_p x + v."""
    f_mat = np.array([[1.0, 0.1], [0.0, 1.0]])[:n, :n]
    e_p = np.eye(n) if e_p is None else np.atleast_2d(e_p)
    r = e_p.shape[0]
    return SystemModel(
        state_dim=n,
        meas_dim=r,
        f=lambda x, k: np.asarray(x) @ f_mat.T,
        h=lambda x: np.asarray(x) @ e_p.T,
        h_inv=lambda y, v, aux: y - np.atleast_2d(v),
        E_p=e_p,
        Q=q_scale * np.eye(n),
        R=r_scale * np.eye(r),
        f_jac=lambda x, k: f_mat,
        h_jac=lambda x: e_p,
    ), f_mat


class TestGoldenSection:
    def test_quadratic(self):
        assert golden_section(lambda x: (x - 0.3) ** 2, 0.0, 1.0, 1e-8) == \
            pytest.approx(0.3, abs=1e-6)

    def test_edge_minimum(self):
        assert golden_section(lambda x: x, 0.0, 1.0, 1e-8) < 1e-6


class TestPredict:
    def test_identity_map_recovers_set(self):
        # f = identity with negligible process noise: prediction ~ input set.
        rng = np.random.default_rng(0)
        e = Ellipsoid([1.0, 2.0], np.array([[2.0, 0.5], [0.5, 1.0]]))
        model = SystemModel(
            state_dim=2, meas_dim=2,
            f=lambda x, k: np.asarray(x),
            h=lambda x: np.asarray(x),
            h_inv=lambda y, v, aux: y - np.atleast_2d(v),
            E_p=np.eye(2), Q=1e-12 * np.eye(2), R=np.eye(2),
        )
        opts = FilterOptions(m_samples=500, tol=1e-8, max_iter=None)
        out, sol = predict(e, model, 0, opts, rng)
        assert sol.converged
        err = np.linalg.norm(out.shape - e.shape) / np.linalg.norm(e.shape)
        assert err <= 0.05
        np.testing.assert_allclose(out.center, e.center, atol=0.05)

    def test_linear_map_oracle(self):
        rng = np.random.default_rng(1)
        model, f_mat = linear_model(q_scale=0.5)
        e = Ellipsoid([0.0, 0.0], np.eye(2))
        opts = FilterOptions(m_samples=500, tol=1e-8, max_iter=None)
        out, sol = predict(e, model, 0, opts, rng)
        image_shape = f_mat @ e.shape @ f_mat.T
        p_star = optimal_p(sol.ellipsoid.shape, model.Q)
        want = (1 + 1 / p_star) * sol.ellipsoid.shape + (1 + p_star) * model.Q
        np.testing.assert_allclose(out.shape, want, atol=1e-12)
        # Cross-check against the analytic image of the linear map.
        analytic_p = optimal_p(image_shape, model.Q)
        analytic = (1 + 1 / analytic_p) * image_shape + (1 + analytic_p) * model.Q
        err = np.linalg.norm(out.shape - analytic) / np.linalg.norm(analytic)
        assert err <= 0.05

    def test_trace_identity(self):
        rng = np.random.default_rng(2)
        model, _ = linear_model(q_scale=0.2)
        e = Ellipsoid([1.0, -1.0], random_spd(rng, 2))
        out, sol = predict(e, model, 0, FilterOptions(), rng)
        want = (np.sqrt(np.trace(sol.ellipsoid.shape))
                + np.sqrt(np.trace(model.Q))) ** 2
        assert np.trace(out.shape) == pytest.approx(want, rel=1e-10)

    def test_center_equals_enclosure_center(self):
        rng = np.random.default_rng(3)
        model, _ = linear_model()
        e = Ellipsoid([2.0, 3.0], np.eye(2))
        out, sol = predict(e, model, 0, FilterOptions(), rng)
        np.testing.assert_array_equal(out.center, sol.ellipsoid.center)


class TestMeasurementEllipsoid:
    @staticmethod
    def polar_model(r_scale=1.0):
        def h(x):
            x = np.asarray(x, dtype=float)
            return np.stack([np.hypot(x[..., 0], x[..., 1]),
                             np.arctan2(x[..., 1], x[..., 0])], axis=-1)

        def h_inv(y, v, aux):
            v = np.atleast_2d(np.asarray(v, dtype=float))
            rng_val = y[0] - v[:, 0]
            if np.any(rng_val < 0):
                raise MeasurementDomainError(
                    "negative range", sample=v[int(np.argmax(rng_val < 0))]
                )
            ang = y[1] - v[:, 1]
            return np.stack([rng_val * np.cos(ang), rng_val * np.sin(ang)],
                            axis=-1)

        return SystemModel(
            state_dim=2, meas_dim=2,
            f=lambda x, k: np.asarray(x), h=h, h_inv=h_inv,
            E_p=np.eye(2), Q=np.eye(2), R=r_scale * np.eye(2),
        )

    def test_noiseless_polar_inverse(self):
        rng = np.random.default_rng(4)
        model = self.polar_model(r_scale=1e-12)
        y = np.array([5.0, np.pi / 2])
        out, _ = measurement_ellipsoid(y, model, None, FilterOptions(), rng)
        np.testing.assert_allclose(out.center, [0.0, 5.0], atol=1e-4)
        assert np.trace(out.shape) < 1e-9

    def test_containment_of_fresh_inverse_samples(self):
        # Sensor at the origin, R = diag(10, 1), measurement from a state
        # near (10, 20): fresh noise draws must map inside the enclosure.
        rng = np.random.default_rng(5)
        model = self.polar_model()
        object.__setattr__(model, "R", np.diag([10.0, 1.0]))
        x_true = np.array([10.0, 20.0])
        v_ball = Ellipsoid(np.zeros(2), model.R)
        y = model.h(x_true) + sample_interior(v_ball, 1, rng).points[0]
        out, sol = measurement_ellipsoid(
            y, model, None, FilterOptions(m_samples=400, tol=1e-8), rng
        )
        fresh = sample_interior(v_ball, 1000, rng).points
        pts = model.h_inv(y, fresh, ())
        frac = contains(out, pts, 1e-6).mean()
        assert frac >= 0.99

    def test_domain_violation_reported(self):
        rng = np.random.default_rng(6)
        model = self.polar_model(r_scale=100.0)
        y = np.array([0.5, 0.0])  # range noise bound 10 >> range
        with pytest.raises(MeasurementDomainError) as exc:
            measurement_ellipsoid(y, model, None, FilterOptions(), rng)
        assert exc.value.sample is not None

    def test_zero_width_aux_matches_no_aux(self):
        # A width-zero parameter interval reduces to noise-only sampling.
        rng = np.random.default_rng(7)

        def h_inv(y, v, aux):
            v = np.atleast_2d(np.asarray(v, dtype=float))
            if aux:
                (theta,) = aux
                shift = np.asarray(theta, dtype=float)
            else:
                shift = 0.0
            out = y - v
            out[:, 0] = out[:, 0] + shift
            return out

        model = SystemModel(
            state_dim=2, meas_dim=2,
            f=lambda x, k: np.asarray(x), h=lambda x: np.asarray(x),
            h_inv=h_inv, E_p=np.eye(2), Q=np.eye(2), R=np.eye(2),
        )
        y = np.array([1.0, 2.0])
        aux = np.array([[0.7, 0.7]])
        out, _ = measurement_ellipsoid(y, model, aux, FilterOptions(), rng)
        np.testing.assert_allclose(out.center, [1.7, 2.0], atol=0.05)


class TestFuse:
    def test_zero_innovation_keeps_center(self):
        pred = Ellipsoid([1.0, 2.0], np.eye(2))
        meas = Ellipsoid([1.0, 2.0], 2.0 * np.eye(2))
        center, shape, delta = fuse(pred, meas, np.eye(2), 0.3)
        np.testing.assert_array_equal(center, pred.center)
        assert delta == pytest.approx(0.0, abs=1e-14)

    def test_scalar_hand_computation(self):
        pred = Ellipsoid([0.0], [[1.0]])
        meas = Ellipsoid([0.0], [[1.0]])
        center, shape, delta = fuse(pred, meas, [[1.0]], 0.5)
        assert center[0] == pytest.approx(0.0)
        assert delta == pytest.approx(0.0)
        assert shape[0, 0] == pytest.approx(1.0)

    def test_rejects_rho_outside_interval(self):
        pred = Ellipsoid([0.0], [[1.0]])
        with pytest.raises(ValueError):
            fuse(pred, pred, [[1.0]], 0.0)

    def test_empty_intersection_raises(self):
        pred = Ellipsoid([0.0], [[1.0]])
        meas = Ellipsoid([10.0], [[1.0]])
        with pytest.raises(EmptyIntersectionError) as exc:
            fuse(pred, meas, [[1.0]], 0.5)
        assert exc.value.delta >= 1.0

    @pytest.mark.parametrize("rho", [0.1, 0.5, 0.9])
    def test_intersection_containment(self, rho):
        # Points of pred whose projection is measurement-consistent must all
        # land in the fused set.
        rng = np.random.default_rng(8)
        e_p = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        witness = rng.standard_normal(3)
        pred = Ellipsoid(witness + 0.1 * rng.standard_normal(3),
                         random_spd(rng, 3))
        meas = Ellipsoid(e_p @ witness + 0.1 * rng.standard_normal(2),
                         random_spd(rng, 2))
        center, shape, delta = fuse(pred, meas, e_p, rho)
        fused = Ellipsoid(center, shape)
        cand = sample_interior(pred, 20_000, rng).points
        ok = contains(meas, cand @ e_p.T, 0.0)
        inter = cand[ok]
        assert inter.shape[0] >= 1000
        assert contains(fused, inter[:1000], 1e-9).all()


class TestOptimizeRho:
    def test_symmetric_case(self):
        # Equal shapes, identity projection, nonzero innovation: the fused
        # size is symmetric in rho <-> 1-rho, so the optimum is 1/2.
        pred = Ellipsoid([0.0], [[1.0]])
        meas = Ellipsoid([0.5], [[1.0]])
        params = optimize_rho(pred, meas, [[1.0]], "trace")
        assert params.rho == pytest.approx(0.5, abs=1e-4)

    def test_grid_oracle(self):
        rng = np.random.default_rng(9)
        e_p = np.array([[1.0, 0.0], [0.0, 1.0]])
        grid = np.linspace(1e-6, 1 - 1e-6, 10_000)
        for _ in range(20):
            witness = rng.standard_normal(2)
            pred = Ellipsoid(witness + 0.2 * rng.standard_normal(2),
                             random_spd(rng, 2))
            meas = Ellipsoid(witness + 0.2 * rng.standard_normal(2),
                             random_spd(rng, 2))
            params = optimize_rho(pred, meas, e_p, "trace")

            def obj(rho):
                try:
                    _, shape, _ = fuse(pred, meas, e_p, rho)
                except EmptyIntersectionError:
                    return np.inf
                return np.trace(shape)

            best = grid[int(np.argmin([obj(r) for r in grid]))]
            assert abs(params.rho - best) <= 1e-4

    def test_uninformative_measurement_pushes_rho_to_edge(self):
        pred = Ellipsoid([0.0, 0.0], np.eye(2))
        meas = Ellipsoid([0.1, -0.1], 1e12 * np.eye(2))
        params = optimize_rho(pred, meas, np.eye(2), "trace")
        assert params.rho < 1e-3
        center, shape, _ = fuse(pred, meas, np.eye(2), params.rho)
        np.testing.assert_allclose(shape, pred.shape, rtol=1e-2)

    def test_all_rho_infeasible_raises(self):
        # delta -> 0 at the rho edges, so infeasibility across the whole
        # search interval needs an innovation that dwarfs both sets even
        # after the 1e-6 edge scaling.
        pred = Ellipsoid([0.0], [[1e-12]])
        meas = Ellipsoid([1e6], [[1e-12]])
        with pytest.raises(EmptyIntersectionError):
            optimize_rho(pred, meas, [[1.0]], "trace")

    def test_logdet_criterion_accepted(self):
        pred = Ellipsoid([0.0, 0.0], np.eye(2))
        meas = Ellipsoid([0.2, 0.1], 0.5 * np.eye(2))
        params = optimize_rho(pred, meas, np.eye(2), "logdet")
        assert 0 < params.rho < 1
        assert params.delta < 1


class TestStep:
    def test_linear_degeneration_against_direct_formulas(self):
        # Linear f and h = E_p x: the full sampled step must match the same
        # fusion formulas evaluated on the exact prediction and measurement
        # ellipsoids (the inverse-measurement set is exactly {y, R}).
        rng = np.random.default_rng(10)
        e_p = np.array([[1.0, 0.0]])
        model, f_mat = linear_model(n=2, e_p=e_p, q_scale=0.05, r_scale=0.1)
        e0 = Ellipsoid([1.0, -0.5], 0.5 * np.eye(2))
        y = np.array([1.1])
        opts = FilterOptions(m_samples=500, tol=1e-8, max_iter=None)
        rec = step(e0, model, y, 0, opts, rng)

        # Oracle: exact linear propagation, measurement set {y, R}, same
        # rho optimization on the exact ellipsoids.
        image = Ellipsoid(f_mat @ e0.center, f_mat @ e0.shape @ f_mat.T)
        p_star = optimal_p(image.shape, model.Q)
        pred = Ellipsoid(
            image.center,
            (1 + 1 / p_star) * image.shape + (1 + p_star) * model.Q,
        )
        meas = Ellipsoid(y, model.R)
        params = optimize_rho(pred, meas, e_p, "trace")
        center, shape, _ = fuse(pred, meas, e_p, params.rho)
        err = np.linalg.norm(rec.updated.shape - shape) / np.linalg.norm(shape)
        assert err <= 0.05
        np.testing.assert_allclose(rec.updated.center, center, atol=0.05)

    def test_noiseless_consistency_contracts(self):
        # Exact model, negligible noise: the set collapses toward the truth.
        rng = np.random.default_rng(11)
        model = SystemModel(
            state_dim=2, meas_dim=2,
            f=lambda x, k: np.asarray(x),
            h=lambda x: np.asarray(x),
            h_inv=lambda y, v, aux: y - np.atleast_2d(v),
            E_p=np.eye(2), Q=1e-12 * np.eye(2), R=1e-12 * np.eye(2),
        )
        truth = np.array([0.3, -0.2])
        e = Ellipsoid([0.0, 0.0], np.eye(2))
        opts = FilterOptions(m_samples=200, tol=1e-7)
        traces = [np.trace(e.shape)]
        for k in range(10):
            rec = step(e, model, truth, k, opts, rng)
            e = rec.updated
            traces.append(np.trace(e.shape))
        assert traces[-1] < 1e-6 * traces[0]
        assert np.linalg.norm(e.center - truth) < 1e-4

    def test_record_fields(self):
        rng = np.random.default_rng(12)
        model, _ = linear_model(q_scale=0.1, r_scale=0.1)
        e0 = Ellipsoid([0.0, 0.0], np.eye(2))
        rec = step(e0, model, np.array([0.1, 0.0]), 3, FilterOptions(), rng)
        assert rec.k == 3
        assert rec.params.p_star > 0
        assert 0 < rec.params.rho < 1
        assert rec.params.delta < 1
        assert rec.elapsed > 0
        assert len(rec.solver_stats) == 2

    def test_containment_over_noisy_run(self):
        # Truth simulated inside all bounds stays inside the filter set.
        rng = np.random.default_rng(13)
        model, f_mat = linear_model(n=2, q_scale=0.05, r_scale=0.1)
        opts = FilterOptions(m_samples=200, tol=1e-6)
        hits = total = 0
        for run in range(5):
            run_rng = np.random.default_rng([13, run])
            x = np.array([0.5, -0.5])
            e = Ellipsoid(x + 0.1 * run_rng.standard_normal(2), np.eye(2))
            w_ball = Ellipsoid(np.zeros(2), model.Q)
            v_ball = Ellipsoid(np.zeros(2), model.R)
            for k in range(15):
                x = model.f(x, k) + sample_interior(w_ball, 1, run_rng).points[0]
                y = model.h(x) + sample_interior(v_ball, 1, run_rng).points[0]
                rec = step(e, model, y, k, opts, run_rng)
                e = rec.updated
                hits += bool(contains(e, x, 1e-6))
                total += 1
        assert hits / total >= 0.99


class TestUpdateFormulaLimits:
    def test_shape_continuous_near_rho_edges(self):
        rng = np.random.default_rng(14)
        witness = rng.standard_normal(2)
        pred = Ellipsoid(witness + 0.1 * rng.standard_normal(2),
                         random_spd(rng, 2))
        meas = Ellipsoid(witness + 0.1 * rng.standard_normal(2),
                         random_spd(rng, 2))
        for edge in (1e-6, 1 - 1e-6):
            rhos = np.linspace(edge, abs(edge - 1e-4), 20)
            shapes = [fuse(pred, meas, np.eye(2), float(r))[1] for r in rhos]
            diffs = [np.linalg.norm(shapes[i + 1] - shapes[i])
                     for i in range(len(shapes) - 1)]
            assert max(diffs) < 0.05 * np.linalg.norm(shapes[0])

    def test_rho_to_zero_limit(self):
        pred = Ellipsoid([0.0, 0.0], np.eye(2))
        meas = Ellipsoid([0.1, 0.0], 2.0 * np.eye(2))
        rho = 1e-6
        _, shape, delta = fuse(pred, meas, np.eye(2), rho)
        want = (1 - delta) / (1 - rho) * pred.shape
        np.testing.assert_allclose(shape, want, rtol=1e-4)

    def test_unimodality_spot_check(self):
        # The rho objective should have a single interior minimum on
        # well-conditioned instances; count strict local minima on a grid.
        rng = np.random.default_rng(15)
        witness = rng.standard_normal(2)
        pred = Ellipsoid(witness + 0.2 * rng.standard_normal(2),
                         random_spd(rng, 2))
        meas = Ellipsoid(witness + 0.2 * rng.standard_normal(2),
                         random_spd(rng, 2))
        grid = np.linspace(1e-6, 1 - 1e-6, 1000)
        vals = np.array([np.trace(fuse(pred, meas, np.eye(2), r)[1])
                         for r in grid])
        interior_minima = 0
        for i in range(1, len(vals) - 1):
            if vals[i] < vals[i - 1] - 1e-9 and vals[i] < vals[i + 1] - 1e-9:
                interior_minima += 1
        assert interior_minima <= 1
