import numpy as np
import pytest

from nnm.data import RatingDataset
from nnm.evaluation import mae
from nnm.model import NnmModel
from nnm.solver import (DegenerateProblemError, FitConfig, SubproblemLS,
                        default_preprocessing, fit, ls_objective, objective,
                        project_simplex, sample_negatives, solve_box_ls,
                        solve_simplex_ls)
from oracles import best_box_objective, best_simplex_objective, ls_value
from synth import block_dataset, sparse_dataset


class TestProjectSimplex:
    def test_feasible_point_unchanged(self):
        assert np.allclose(project_simplex([0.5, 0.5]), [0.5, 0.5])

    def test_vertex_projection(self):
        assert np.allclose(project_simplex([2.0, 0.0]), [1.0, 0.0])

    def test_interior_shift(self):
        # KKT: both entries shift by theta = -0.35 so they sum to one;
        # cross-checked by a dense grid search
        result = project_simplex([0.2, 0.1])
        assert np.allclose(result, [0.55, 0.45])
        grid = np.linspace(0.0, 1.0, 10001)
        pts = np.column_stack([grid, 1.0 - grid])
        dists = ((pts - np.array([0.2, 0.1])) ** 2).sum(axis=1)
        best = pts[np.argmin(dists)]
        assert np.allclose(result, best, atol=2e-4)

    def test_output_always_feasible(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            d = int(rng.integers(1, 9))
            v = rng.normal(0.0, 3.0, size=d)
            p = project_simplex(v)
            assert p.min() >= -1e-12
            assert abs(p.sum() - 1.0) < 1e-9

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            p = project_simplex(rng.normal(size=5))
            assert np.allclose(project_simplex(p), p, atol=1e-12)

    def test_one_lipschitz(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a, b = rng.normal(size=(2, 4))
            pa, pb = project_simplex(a), project_simplex(b)
            assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            project_simplex([np.nan, 0.0])


class TestSolveSimplexLS:
    def test_single_row(self):
        # min (p1 - 0.6)^2 over the simplex -> p = (0.6, 0.4)
        prob = SubproblemLS.from_rows([((1.0, 0.0), 0.6)], "simplex")
        p = solve_simplex_ls(prob, np.array([0.5, 0.5]))
        assert np.allclose(p, [0.6, 0.4], atol=1e-6)
        grid_best = best_simplex_objective(prob.coefficients, prob.targets, step=1e-4)
        assert ls_objective(prob, p) <= grid_best + 1e-6

    def test_flat_objective_keeps_warm_start(self):
        # rows ((1,1), t): the objective is constant on the simplex
        for t in (0.0, 0.4, 1.0):
            prob = SubproblemLS.from_rows([((1.0, 1.0), t)], "simplex")
            warm = np.array([0.3, 0.7])
            assert np.allclose(solve_simplex_ls(prob, warm), warm)

    def test_matches_grid_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = rng.uniform(0.0, 1.0, size=(5, 3))
            b = rng.uniform(0.0, 1.0, size=5)
            prob = SubproblemLS(a, b, "simplex")
            x = solve_simplex_ls(prob, np.full(3, 1.0 / 3.0))
            assert ls_objective(prob, x) <= best_simplex_objective(a, b) + 1e-3

    def test_never_worse_than_warm_start(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            a = rng.normal(size=(4, 3))
            b = rng.normal(size=4)
            prob = SubproblemLS(a, b, "simplex")
            warm = rng.dirichlet(np.ones(3))
            x = solve_simplex_ls(prob, warm)
            assert ls_objective(prob, x) <= ls_objective(prob, warm) + 1e-12
            assert abs(x.sum() - 1.0) < 1e-9 and x.min() >= -1e-12

    def test_empty_rows_degenerate(self):
        with pytest.raises(DegenerateProblemError):
            SubproblemLS.from_rows([], "simplex")

    def test_wrong_constraint_rejected(self):
        prob = SubproblemLS.from_rows([((1.0,), 0.5)], "box")
        with pytest.raises(ValueError):
            solve_simplex_ls(prob, np.array([1.0]))


class TestSolveBoxLS:
    def test_scalar_mean(self):
        # two rows ((1), 1.0), ((1), 0.6): minimizer is the target mean
        prob = SubproblemLS.from_rows([((1.0,), 1.0), ((1.0,), 0.6)], "box")
        e = solve_box_ls(prob, np.array([0.5]))
        assert np.allclose(e, [0.8], atol=1e-7)

    def test_clamp_at_boundary(self):
        prob = SubproblemLS.from_rows([((1.0,), 1.4)], "box")
        e = solve_box_ls(prob, np.array([0.5]))
        assert np.allclose(e, [1.0])

    def test_matches_grid_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            a = rng.uniform(0.0, 1.0, size=(5, 3))
            b = rng.uniform(0.0, 1.0, size=5)
            prob = SubproblemLS(a, b, "box")
            x = solve_box_ls(prob, np.full(3, 0.5))
            assert ls_objective(prob, x) <= best_box_objective(a, b) + 1e-3
            assert x.min() >= -1e-12 and x.max() <= 1.0 + 1e-12


class TestObjective:
    def model_and_data(self):
        ds = RatingDataset.from_triples([(1, 1, 5), (1, 2, 3), (2, 1, 1), (2, 2, 4)],
                                        z=5)
        model = NnmModel(2, 5, "binary",
                         {1: [1.0, 0.0], 2: [0.0, 1.0]},
                         {1: [1.0, 0.2], 2: [0.6, 0.8]})
        return ds, model

    def test_perfect_model_is_zero(self):
        ds = RatingDataset.from_triples([(1, 1, 5)], z=5)
        model = NnmModel(1, 5, "binary", {1: [1.0]}, {1: [1.0]})
        assert objective(model, ds) == 0.0

    def test_single_pair_residual(self):
        ds = RatingDataset.from_triples([(1, 1, 5)], z=5)
        model = NnmModel(1, 5, "binary", {1: [1.0]}, {1: [0.8]})
        assert objective(model, ds) == pytest.approx(0.04)

    def test_matches_direct_summation(self):
        ds, model = self.model_and_data()
        total = 0.0
        for u, i, r in ds.triples():
            total += (model.predict_score_binary(u, i) - r / 5) ** 2
        assert objective(model, ds) == pytest.approx(total, rel=1e-12)

    def test_gamma_subset(self):
        ds, model = self.model_and_data()
        part = objective(model, ds, gamma=[(1, 1), (2, 2)])
        expect = (1.0 - 1.0) ** 2 + (0.8 - 0.8) ** 2
        assert part == pytest.approx(expect)

    def test_unknown_pair_raises(self):
        ds, model = self.model_and_data()
        with pytest.raises(LookupError):
            objective(model, ds, gamma=[(1, 99)])


class TestSampleNegatives:
    def test_zero_k_empty(self):
        ds = sparse_dataset()
        assert sample_negatives(ds, 0, rng_seed=1).shape == (0, 2)

    def test_dense_dataset_empty(self):
        ds = block_dataset()  # fully observed
        assert sample_negatives(ds, 1, rng_seed=1).shape == (0, 2)

    def test_disjoint_and_sized(self):
        # 2 users x 4 items with 2 ratings each, k=1 -> 4 pairs off-support
        ds = RatingDataset.from_triples(
            [(1, 1, 5), (1, 2, 4), (2, 3, 2), (2, 4, 1)], z=5)
        pairs = sample_negatives(ds, 1, rng_seed=0)
        assert pairs.shape == (4, 2)
        observed = set(zip(ds.user_ids.tolist(), ds.item_ids.tolist()))
        sampled = set(map(tuple, pairs.tolist()))
        assert sampled.isdisjoint(observed)
        assert len(sampled) == 4

    def test_small_pool_taken_whole(self):
        # user 1 rated 3 of 4 items; k=2 requests 6 negatives, pool has 1
        ds = RatingDataset.from_triples(
            [(1, 1, 5), (1, 2, 4), (1, 3, 3), (2, 4, 2)], z=5)
        pairs = sample_negatives(ds, 2, rng_seed=0)
        from_user1 = [tuple(p) for p in pairs.tolist() if p[0] == 1]
        assert from_user1 == [(1, 4)]

    def test_deterministic(self):
        ds = sparse_dataset()
        a = sample_negatives(ds, 1, rng_seed=42)
        b = sample_negatives(ds, 1, rng_seed=42)
        assert np.array_equal(a, b)


class TestFitConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            FitConfig(dimension=0).validated()
        with pytest.raises(ValueError):
            FitConfig(dimension=2, max_outer_iters=1, preprocessing_iters=2).validated()
        with pytest.raises(ValueError):
            FitConfig(dimension=2, preprocessing="magic").validated()

    def test_default_preprocessing_switch(self):
        assert default_preprocessing(900, 1700) == "dense"
        assert default_preprocessing(70000, 200000) == "sample"


class TestFit:
    def test_single_cell_exact(self):
        ds = RatingDataset.from_triples([(1, 1, 5)], z=5)
        model, report = fit(ds, FitConfig(dimension=1, preprocessing_iters=0,
                                          rng_seed=0))
        assert np.allclose(model.user_vector(1), [1.0])
        assert np.allclose(model.item_vector(1), [1.0], atol=1e-7)
        assert report.gamma_trace[-1] == pytest.approx(0.0, abs=1e-12)

    def test_two_users_mean_item(self):
        ds = RatingDataset.from_triples([(1, 1, 5), (2, 1, 3)], z=5)
        model, _ = fit(ds, FitConfig(dimension=1, preprocessing_iters=0, rng_seed=0))
        assert np.allclose(model.item_vector(1), [0.8], atol=1e-7)

    def test_block_matrix_recovered(self):
        ds = block_dataset()
        # the two-block table is exactly representable at D=2: basis
        # users and item vectors (1.0, 0.2)/(0.2, 1.0) give zero error
        exact = NnmModel(2, 5, "binary",
                         {1: [1, 0], 2: [1, 0], 3: [0, 1], 4: [0, 1]},
                         {1: [1.0, 0.2], 2: [1.0, 0.2],
                          3: [0.2, 1.0], 4: [0.2, 1.0]})
        errs = [abs(exact.predict_star_rating(u, i) - r) for u, i, r in ds.triples()]
        assert max(errs) == 0.0

        # alternating descent stalls if the random init assigns each
        # stereotype one user from each block; this seed breaks symmetry
        model, _ = fit(ds, FitConfig(dimension=2, rng_seed=3))
        preds = [model.predict_star_rating(u, i) for u, i, r in ds.triples()]
        truth = [r for _, _, r in ds.triples()]
        assert mae(preds, truth) < 0.5

    def test_empty_dataset_rejected(self):
        ds = RatingDataset.from_triples([], z=5)
        with pytest.raises(ValueError, match="empty"):
            fit(ds, FitConfig(dimension=1, rng_seed=0))

    def test_model_passes_validate(self):
        ds = sparse_dataset()
        model, _ = fit(ds, FitConfig(dimension=3, rng_seed=0))
        assert model.validate() == []

    def test_feasibility_every_half_step(self):
        ds = sparse_dataset(n_users=25, n_items=20, seed=5)
        seen = []

        def check(iteration, model):
            p, e = model.user_matrix, model.item_matrix
            assert p.min() >= -1e-9 and np.abs(p.sum(axis=1) - 1).max() <= 1e-9
            assert e.min() >= -1e-9 and e.max() <= 1 + 1e-9
            seen.append(iteration)

        fit(ds, FitConfig(dimension=3, max_outer_iters=4, rng_seed=2),
            iteration_callback=check)
        assert seen == [1, 2, 3, 4]

    @pytest.mark.parametrize("strategy", ["dense", "sample"])
    def test_phase_objective_monotone_within_phases(self, strategy):
        ds = sparse_dataset(n_users=40, n_items=30, seed=7)
        _, report = fit(ds, FitConfig(dimension=3, preprocessing=strategy,
                                      rng_seed=3))
        values = report.phase_trace
        pre = 2 * 2  # half-steps in the 2-iteration preprocessing phase
        for phase in (values[:pre], values[pre:]):
            for a, b in zip(phase, phase[1:]):
                assert b <= a * (1 + 1e-12) + 1e-15

    def test_deterministic_trace(self):
        ds = sparse_dataset()
        cfg = FitConfig(dimension=3, rng_seed=11)
        _, r1 = fit(ds, cfg)
        _, r2 = fit(ds, cfg)
        assert r1.gamma_trace == r2.gamma_trace
        assert r1.phase_trace == r2.phase_trace

    def test_seed_changes_init(self):
        ds = sparse_dataset()
        m1, _ = fit(ds, FitConfig(dimension=3, max_outer_iters=1,
                                  preprocessing_iters=0, rng_seed=1))
        m2, _ = fit(ds, FitConfig(dimension=3, max_outer_iters=1,
                                  preprocessing_iters=0, rng_seed=2))
        assert not np.allclose(m1.user_matrix, m2.user_matrix)

    def test_report_csv_schema(self, tmp_path):
        ds = sparse_dataset(n_users=15, n_items=12, seed=1)
        _, report = fit(ds, FitConfig(dimension=2, max_outer_iters=3, rng_seed=0))
        path = tmp_path / "fit_report.csv"
        report.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,phase,objective,wall_ms"
        assert len(lines) == 1 + 2 * 3
        assert lines[1].startswith("1,item,")
        assert lines[2].startswith("1,user,")


class TestFitCategorical:
    def test_one_hot_exact_cell(self):
        ds = RatingDataset.from_triples([(1, 1, 3)], z=3)
        cfg = FitConfig(dimension=1, preprocessing_iters=0, rng_seed=0,
                        mode="categorical")
        model, report = fit(ds, cfg)
        assert model.predict_rating_argmax(1, 1) == 3
        assert report.gamma_trace[-1] == pytest.approx(0.0, abs=1e-10)

    def test_bundle_feasible_and_monotone(self):
        ds = sparse_dataset(n_users=20, n_items=15, seed=9)
        cfg = FitConfig(dimension=2, max_outer_iters=6, rng_seed=4,
                        mode="categorical")
        model, report = fit(ds, cfg)
        assert model.validate() == []
        values = report.phase_trace
        pre = 2 * 2
        for phase in (values[:pre], values[pre:]):
            for a, b in zip(phase, phase[1:]):
                assert b <= a * (1 + 1e-12) + 1e-15

    def test_argmax_tracks_majority(self):
        # two users, one item, both rate it 4 of 5: argmax should be 4
        ds = RatingDataset.from_triples([(1, 1, 4), (2, 1, 4)], z=5)
        cfg = FitConfig(dimension=1, preprocessing_iters=0, rng_seed=0,
                        mode="categorical")
        model, _ = fit(ds, cfg)
        assert model.predict_rating_argmax(1, 1) == 4
