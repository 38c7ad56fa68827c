import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetcd.evaluation import (
    BenchmarkRecord, GridRecord, RunRecord, fraction_sampler, grid_search, make_grid, read_jsonl,
    read_scatter, repeated_runs, roc_auc, scatter_csv, scatter_export, write_jsonl,
)
from hetcd.regress import RegressorSpec
from hetcd.synth import SynthConfig, generate
from hetcd.raster import sample_mask


def pairwise_auc(scores, truth):
    """Share of (positive, negative) pairs ranked correctly, ties counted half."""
    pos, neg = scores[truth], scores[~truth]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (pos.size * neg.size)


class TestAuc:
    def test_perfect(self):
        assert roc_auc(np.array([0.1, 0.2, 0.8, 0.9]), np.array([0, 0, 1, 1], bool)).auc == 1.0

    def test_constant_scores(self):
        assert roc_auc(np.full(6, 0.3), np.array([0, 1, 0, 1, 1, 0], bool)).auc == 0.5

    def test_single_class_undefined(self):
        result = roc_auc(np.arange(4.0), np.zeros(4, bool))
        assert result.auc is None and not result.defined

    def test_curve_endpoints(self, rng):
        r = roc_auc(rng.uniform(size=30), rng.uniform(size=30) < 0.4)
        assert (r.fpr[0], r.tpr[0], r.fpr[-1], r.tpr[-1]) == (0.0, 0.0, 1.0, 1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_pairwise(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.integers(0, 5, size=50) / 4.0
        truth = rng.uniform(size=50) < 0.3
        if truth.all() or not truth.any():
            truth[0] = not truth[0]
        assert abs(roc_auc(scores, truth).auc - pairwise_auc(scores, truth)) <= 1e-12

    def test_monotone_transform(self, rng):
        scores = rng.normal(size=200)
        truth = rng.uniform(size=200) < 0.2
        assert roc_auc(scores, truth).auc == roc_auc(scores ** 3, truth).auc


@pytest.fixture(scope="module")
def small_pair():
    return generate(SynthConfig(height=24, width=24, seed=1))


class TestRepeatedRuns:
    def test_single_run_zero_std(self, small_pair):
        spec = RegressorSpec("rf", {"trees": 8})
        rec = repeated_runs(small_pair.x, small_pair.y, spec, 1,
                            fraction_sampler(small_pair.unchanged_mask, 0.05), small_pair.change_mask)
        assert rec.auc_std == 0.0 and rec.time_std_s == 0.0 and rec.runs == 1

    def test_run_seeds_and_population_std(self, small_pair):
        spec = RegressorSpec("hpt", {"neighbours": 8}, seed=10)
        rec = repeated_runs(small_pair.x, small_pair.y, spec, 3,
                            fraction_sampler(small_pair.unchanged_mask, 0.05), small_pair.change_mask)
        assert [r.seed for r in rec.run_records] == [10, 11, 12]
        assert rec.auc_std == pytest.approx(np.std([r.auc for r in rec.run_records]), abs=1e-15)

    def test_jsonl_round_trip(self, tmp_path):
        rec = BenchmarkRecord("rf", {"trees": 8}, 0.9, 0.01, 1.0, 0.1, 1,
                              [RunRecord("rf", {"trees": 8}, 0, 0.9, 1.0)])
        write_jsonl([rec], tmp_path / "b.jsonl")
        assert read_jsonl(tmp_path / "b.jsonl") == [rec]


class TestGrid:
    def setup_method(self):
        pair = generate(SynthConfig(height=24, width=24, seed=3))
        self.pair = pair
        self.mask = sample_mask(pair.unchanged_mask, 0.1, seed=0)

    def test_make_grid_order(self):
        grid = make_grid("rf", trees=[32, 64], min_leaf=[5, 10])
        assert [(s.hyper.trees, s.hyper.min_leaf) for s in grid] == [(32, 5), (32, 10), (64, 5), (64, 10)]

    def test_singleton(self):
        spec = RegressorSpec("hpt", {"neighbours": 4})
        assert grid_search(self.pair.x, self.pair.y, self.mask, [spec]).best is spec

    @pytest.mark.parametrize("selection", ["oob", "cross_validation", "validation"])
    def test_duplicate_of_best_first_wins(self, selection):
        specs = make_grid("rf", trees=[4, 16], min_leaf=[2])
        result = grid_search(self.pair.x, self.pair.y, self.mask, specs, selection=selection)
        dup = RegressorSpec("rf", result.best.hyper, result.best.seed)
        again = grid_search(self.pair.x, self.pair.y, self.mask, specs + [dup], selection=selection)
        assert again.best is specs[specs.index(result.best)]

    def test_auc_selection_needs_truth(self):
        with pytest.raises(ValueError):
            grid_search(self.pair.x, self.pair.y, self.mask, [RegressorSpec("rf")],
                        selection="auc_on_validation")

    def test_auc_selection(self):
        specs = make_grid("hpt", neighbours=[4, 8])
        result = grid_search(self.pair.x, self.pair.y, self.mask, specs,
                             selection="auc_on_validation", truth=self.pair.change_mask)
        best = min(result.records, key=lambda r: r.score)
        assert result.best is best.spec and best.score == -best.auc

    def test_infeasible_point_scores_inf(self):
        specs = make_grid("hpt", neighbours=[4, 10_000])
        result = grid_search(self.pair.x, self.pair.y, self.mask, specs)
        assert result.records[1].score == float("inf") and result.best is specs[0]

    def test_oob_rejects_other_methods(self):
        result = grid_search(self.pair.x, self.pair.y, self.mask, [RegressorSpec("hpt", {"neighbours": 4})],
                             selection="oob")
        assert result.records[0].score == float("inf")


class TestScatter:
    def test_single_record(self):
        text = scatter_csv([RunRecord("rf", {}, 0, 0.9, 1.5)])
        assert text.count("\n") == 2

    def test_sorted_by_method_then_time(self):
        recs = [RunRecord("svr", {}, 0, 0.8, 1.0), RunRecord("rf", {}, 0, 0.8, 3.0),
                RunRecord("rf", {}, 1, 0.8, 2.0)]
        rows = [line.split(",")[0:1] + [line.split(",")[-2]] for line in scatter_csv(recs).splitlines()[1:]]
        assert rows == [["rf", "2.0"], ["rf", "3.0"], ["svr", "1.0"]]

    def test_round_trip(self, tmp_path):
        recs = [RunRecord("hpt", {"neighbours": 16, "kernel_width": 0.1}, 0, 0.1 + 0.2, 1 / 3),
                RunRecord("gp", {"restarts": 5}, 1, None, 2.0)]
        scatter_export(recs, tmp_path / "s.csv")
        back = read_scatter(tmp_path / "s.csv")
        assert back[0] == {"method": "gp", "hyperparameters": {"restarts": 5}, "elapsed_s": 2.0, "auc": None}
        assert back[1]["auc"] == 0.1 + 0.2 and back[1]["elapsed_s"] == 1 / 3

    def test_grid_records_export(self):
        rec = GridRecord(RegressorSpec("rf"), "oob", 0.1, 0.5)
        assert scatter_csv([rec]).splitlines()[1].startswith("rf,")
