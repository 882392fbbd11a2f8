import json
import math
import os

import numpy as np
import pytest
from scipy import stats

from config.paths_config import LEDGER_FILE, MANIFEST_FILE, TIMINGS_FILE, TREE_AUDIT_FILE
from src.consistency import check_consistency, make_consistent
from src.custom_exception import BudgetExceededError, ConfigError, TableTooLargeError
from src.dataset import full_table_counts
from src.dp_core import BudgetLedger, NoiseSource
from src.mock_data import mock_dataset
from src.sanitization_plan import SanitizationPlan
from src.synthesizer import (
    Synthesizer,
    counts_to_records,
    laplace_full_synthesize,
    random_partition_synthesize,
    released_full_table,
    sanitize_tree,
    sanitized_layers,
    steps_synthesize,
    synthesize,
    write_outputs,
)
from tests.conftest import make_schema, random_dataset


def plan_for(data, L=2, allocation="equal", m=1, epsilon=1.0, seed=0):
    return SanitizationPlan.build(L, allocation, m, epsilon, data.schema.p, seed)


@pytest.fixture(scope="module")
def voter_data():
    return mock_dataset(n=10_000, seed=42)


@pytest.mark.parametrize("method", ["steps", "random-partition", "laplace-full"])
def test_no_noise_reproduces_the_table(voter_data, method):
    plan = plan_for(voter_data, L=2, allocation="half-split", m=2, epsilon=math.inf)
    result = synthesize(voter_data, method, plan)
    expected = full_table_counts(voter_data)
    for replicate in result.replicates:
        assert replicate.n == voter_data.n
        assert np.array_equal(full_table_counts(replicate), expected)


@pytest.mark.parametrize("allocation", ["equal", "half-split"])
@pytest.mark.parametrize("m", [1, 5])
def test_ledger_adds_up_to_epsilon(small_data, allocation, m):
    result = steps_synthesize(small_data, plan_for(small_data, 2, allocation, m, epsilon=math.e))
    assert abs(result.ledger.total - math.e) <= 1e-12
    # one parallel group per (replicate, layer), layers 1..L plus the leaf blocks
    assert len(result.ledger.entries) == 3 * m
    assert result.ledger.entries[0].label == "replicate-0/layer-1"


def test_voter_run_spends_exactly_e_over_three_layers(voter_data):
    plan = plan_for(voter_data, L=2, allocation="half-split", m=5, epsilon=math.e)
    assert plan.allocation == (0.25, 0.25, 0.5)
    result = steps_synthesize(voter_data, plan, threads=4)
    assert abs(result.ledger.total - math.e) <= 1e-12
    assert len(result.ledger.entries) == 15
    assert sanitized_layers(result.tree) == [1, 2, 3]
    assert {e.label.split("/")[1] for e in result.ledger.entries} == {"layer-1", "layer-2", "layer-3"}
    assert [r.n for r in result.replicates] == [voter_data.n] * 5


def test_full_height_tree_has_no_block_layer(small_data):
    result = steps_synthesize(small_data, plan_for(small_data, 3, "equal", 2))
    assert len(result.ledger.entries) == 6
    assert result.ledger.total == pytest.approx(1.0, abs=1e-12)


def test_overspend_aborts_before_any_noise(small_data):
    ledger = BudgetLedger(0.5)
    with pytest.raises(BudgetExceededError):
        steps_synthesize(small_data, plan_for(small_data, epsilon=1.0), ledger=ledger)
    assert ledger.total < 0.5 + 1e-12


def test_stage_with_lower_budget_limit_writes_nothing(small_data, tmp_path):
    stage = Synthesizer(small_data, plan_for(small_data), output_dir=str(tmp_path / "out"), budget_limit=0.9)
    with pytest.raises(BudgetExceededError):
        stage.run()
    assert not os.path.exists(tmp_path / "out" / MANIFEST_FILE)


def test_laplace_full_charges_one_group_per_replicate(small_data):
    result = laplace_full_synthesize(small_data, epsilon=2.0, m=4, seed=3)
    assert [e.group for e in result.ledger.entries] == [f"replicate-{r}/full-table" for r in range(4)]
    assert result.ledger.total == pytest.approx(2.0, abs=1e-12)
    assert result.tree is None and result.audit() is None


def test_laplace_full_noise_has_scale_m_over_epsilon():
    schema = make_schema(10, 10, 10)
    data = random_dataset(schema, 5000, seed=2)
    m, epsilon = 4, 2.0
    result = laplace_full_synthesize(data, epsilon=epsilon, m=m, seed=11)
    true = full_table_counts(data)
    noise = np.concatenate([released - true for released in result.released_counts])
    assert noise.size == 4000
    assert abs(noise.var() - 2 * (m / epsilon) ** 2) / (2 * (m / epsilon) ** 2) < 0.15
    assert stats.kstest(noise, stats.laplace(scale=m / epsilon).cdf).pvalue > 0.01


def test_laplace_full_refuses_large_tables(small_data):
    with pytest.raises(TableTooLargeError, match="full table too large"):
        laplace_full_synthesize(small_data, epsilon=1.0, m=1, dense_threshold=5)


def test_unknown_method(small_data):
    with pytest.raises(ConfigError):
        synthesize(small_data, "mwem", plan_for(small_data))


def test_whole_counts_are_emitted_as_is():
    schema = make_schema(4)
    data = counts_to_records(schema, np.array([4.0, 0.0, 0.0, 0.0]), 4, NoiseSource(0))
    assert data.records.ravel().tolist() == [0, 0, 0, 0]

    nearly = counts_to_records(schema, np.array([2.0000001, 1.9999999, 0.0, 0.0]), 4, NoiseSource(0))
    assert nearly.records.ravel().tolist() == [0, 0, 1, 1]


def test_negative_counts_are_clamped():
    schema = make_schema(2)
    data = counts_to_records(schema, np.array([-2.0, 6.0]), 4, NoiseSource(1))
    assert data.records.ravel().tolist() == [1, 1, 1, 1]


def test_fractional_counts_are_sampled_proportionally():
    schema = make_schema(4)
    n = 100_000
    data = counts_to_records(schema, np.array([1.0, 1.0, 1.0, 1.0]), n, NoiseSource(2))
    counts = np.bincount(data.records.ravel(), minlength=4)
    sigma = math.sqrt(n * 0.25 * 0.75)
    assert counts.sum() == n
    assert np.all(np.abs(counts - n / 4) < 3 * sigma)


def test_all_zero_counts_fall_back_to_uniform_over_real_cells():
    schema = make_schema(4)
    phantom = np.array([False, False, False, True])
    data = counts_to_records(schema, np.array([-1.0, -3.0, 0.0, 5.0]), 600, NoiseSource(3), phantom=phantom)
    counts = np.bincount(data.records.ravel(), minlength=4)
    assert counts.sum() == 600
    assert counts[3] == 0
    assert np.all(counts[:3] > 100)


def test_records_are_listed_in_cell_order():
    schema = make_schema(2, 2)
    data = counts_to_records(schema, np.array([0.0, 2.0, 1.0, 0.0]), 3, NoiseSource(0))
    assert data.records.tolist() == [[0, 1], [0, 1], [1, 0]]


def test_negative_record_count():
    with pytest.raises(ConfigError):
        counts_to_records(make_schema(2), np.array([1.0, 1.0]), -1, NoiseSource(0))


@pytest.mark.parametrize("method", ["steps", "random-partition", "laplace-full"])
def test_thread_count_does_not_change_output(small_data, method):
    plan = plan_for(small_data, 2, "half-split", m=4, seed=5)
    single = synthesize(small_data, method, plan, threads=1)
    pooled = synthesize(small_data, method, plan, threads=8)
    for a, b in zip(single.replicates, pooled.replicates):
        assert np.array_equal(a.records, b.records)
    for a, b in zip(single.released_counts, pooled.released_counts):
        assert np.array_equal(a, b)


def test_replicates_differ_but_keep_n(small_data):
    result = steps_synthesize(small_data, plan_for(small_data, 2, m=3, epsilon=0.5))
    assert [r.n for r in result.replicates] == [small_data.n] * 3
    assert not np.array_equal(result.released_counts[0], result.released_counts[1])


@pytest.mark.parametrize("method", ["steps", "random-partition"])
def test_each_replicate_depends_only_on_its_index(small_data, method):
    plan = plan_for(small_data, 2, m=3, epsilon=0.5, seed=6)
    result = synthesize(small_data, method, plan)
    src = NoiseSource(plan.seed, (method,))
    for r in (2, 0, 1):
        released = make_consistent(sanitize_tree(result.tree, plan, r, src))
        assert np.array_equal(released_full_table(released), result.released_counts[r])


def test_laplace_full_replicates_depend_only_on_their_index(small_data):
    first = laplace_full_synthesize(small_data, epsilon=1.0, m=2, seed=4)
    more = laplace_full_synthesize(small_data, epsilon=2.0, m=4, seed=4)
    # same per-replicate budget, so shared indices draw the same release
    for r in range(2):
        assert np.array_equal(first.released_counts[r], more.released_counts[r])
        assert np.array_equal(first.replicates[r].records, more.replicates[r].records)


def test_released_trees_are_consistent(small_data):
    result = random_partition_synthesize(small_data, plan_for(small_data, 1, m=2, epsilon=0.3, seed=8))
    assert len(result.released_trees) == 2
    for tree in result.released_trees:
        assert check_consistency(tree) <= 1e-9
        assert tree.root.consistent_count == small_data.n


def test_seed_changes_the_release(small_data):
    first = steps_synthesize(small_data, plan_for(small_data, seed=1))
    second = steps_synthesize(small_data, plan_for(small_data, seed=2))
    assert not np.array_equal(first.released_counts[0], second.released_counts[0])


def read_files(directory, names):
    return {name: (directory / name).read_bytes() for name in names}


def test_outputs_are_written_and_replayable(small_data, tmp_path):
    plan = plan_for(small_data, 2, "half-split", m=2, seed=13)
    names = [MANIFEST_FILE, LEDGER_FILE, TREE_AUDIT_FILE, "synthetic_01.csv", "synthetic_02.csv"]

    manifest = write_outputs(steps_synthesize(small_data, plan), str(tmp_path / "a"), {"note": "run"})
    write_outputs(steps_synthesize(small_data, plan, threads=4), str(tmp_path / "b"), {"note": "run"})

    assert read_files(tmp_path / "a", names) == read_files(tmp_path / "b", names)
    assert (tmp_path / "a" / TIMINGS_FILE).exists()
    assert "timings" not in manifest
    assert manifest["replicates"] == ["synthetic_01.csv", "synthetic_02.csv"]
    assert manifest["ledger_total"] == pytest.approx(1.0)
    assert manifest["config"] == {"note": "run"}
    assert json.loads((tmp_path / "a" / LEDGER_FILE).read_text()) == manifest["ledger"]

    audit = json.loads((tmp_path / "a" / TREE_AUDIT_FILE).read_text())
    assert all("true_count" not in node for node in audit["nodes"])
    assert len(audit["nodes"][0]["consistent_count"]) == 2


def test_stage_run_returns_manifest(small_data, tmp_path):
    out = tmp_path / "synthetic"
    manifest = Synthesizer(small_data, plan_for(small_data), "random-partition", str(out), debug=True).run()
    assert manifest["method"] == "random-partition"
    audit = json.loads((out / TREE_AUDIT_FILE).read_text())
    assert audit["nodes"][0]["true_count"] == small_data.n
