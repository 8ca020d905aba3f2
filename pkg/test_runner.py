"""
Test the experiment runner, the results archive, figure emission and the CLI.
"""
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

# Add src directory to path
src_dir = Path(__file__).parent / "src"
sys.path.insert(0, str(src_dir))

from main import main
from modules.config import (MAPPING_REGISTRY, METHOD_REGISTRY, METRIC_CATALOG,
                            Config, describe_metric)
from modules.multiplicity.domain import PredictionVector, RashomonSample
from modules.multiplicity.exceptions import (EmptyInputError,
                                             MissingMetricError,
                                             UnknownFigureError)
from modules.multiplicity.runner import (FIGURES, ExperimentConfig,
                                         ResultsArchive, aggregate_records,
                                         emit_plot_data, run_experiment)
from modules.multiplicity.runner.archive import RECORD_COLUMNS
from modules.multiplicity.runner.dag import DAG
from modules.multiplicity.runner.pipeline import lottery_allocations
from modules.multiplicity.seeding import derive_seed


def smoke_config(output_dir: Path, threads: int = 1, **overrides) -> ExperimentConfig:
    """A few seconds' worth of the full protocol."""
    return ExperimentConfig.model_validate({
        "generator": {"population_size": 1500},
        "selection_rates": [0.25],
        "q_values": [2],
        "epsilon": 0.05,
        "budgets": {"feature_subsets": 4, "bootstrap": 3, "shuffle": 3, "perturbation": 3},
        "split_plan": {"num_partitions": 1, "draws_per_partition": 2, "pool_size": 100},
        "network": {"family": "mlp", "hidden_sizes": [8], "epochs": 3},
        "scoring_system": {"family": "scoring_system", "epochs": 3, "learning_rate": 0.1},
        "lottery_draws": 5,
        "equal_utility_draws": 5,
        "perturbation_max_steps": 10,
        "shuffle_burn_in": 1,
        "output_dir": str(output_dir),
        "threads": threads,
        **overrides,
    })


@pytest.fixture(scope="module")
def archive(tmp_path_factory) -> ResultsArchive:
    return run_experiment(smoke_config(tmp_path_factory.mktemp("smoke")))


def test_dag_runs_in_dependency_order():
    dag = DAG()
    calls = []

    @dag.asset
    def double(x):
        calls.append("double")
        return 2 * x

    @dag.asset
    def total(double, x):
        calls.append("total")
        return double + x

    results, errors = dag.execute(x=3)
    assert results["total"] == 9
    assert calls == ["double", "total"]
    assert not errors
    assert set(dag.assets) == {"x", "double", "total"}


def test_dag_skips_supplied_assets():
    dag = DAG()

    @dag.asset
    def expensive(x):
        raise AssertionError("should not run")

    @dag.asset
    def report(expensive):
        return expensive + 1

    results, _ = dag.execute(x=0, expensive=41)
    assert results["report"] == 42


def test_dag_records_failures_and_skips_downstream():
    """Test that a domain error fails its asset and skips its dependents only."""
    dag = DAG()

    @dag.asset
    def broken(x):
        raise EmptyInputError("nothing to do")

    @dag.asset
    def after(broken):
        return broken

    @dag.asset
    def independent(x):
        return x

    results, errors = dag.execute(x=1)
    assert errors["broken"] == "EmptyInputError: nothing to do"
    assert errors["after"] == "skipped: upstream 'broken' failed"
    assert results["independent"] == 1
    assert "after" not in results


def test_dag_missing_input():
    dag = DAG()

    @dag.asset
    def needs(y):
        return y

    with pytest.raises(KeyError):
        dag.execute()


def test_registries_and_budgets():
    assert Config.get_method_names() == ["feature_subsets", "bootstrap", "shuffle", "perturbation"]
    assert Config.get_mapping_names() == list(MAPPING_REGISTRY)
    assert Config.get_budget("bootstrap") == 100
    assert Config.get_budget("bootstrap", "full") == 1000
    with pytest.raises(ValueError):
        Config.get_budget("dropout")
    with pytest.raises(ValueError):
        Config.get_budget("bootstrap", "huge")


def test_describe_metric():
    assert describe_metric("systemic_rejection")["unit"] == "fraction"
    with pytest.raises(KeyError):
        describe_metric("accuracy")


def test_experiment_config_validation():
    """Test defaults and rejected configurations."""
    config = ExperimentConfig()
    assert config.methods == list(METHOD_REGISTRY)
    assert config.budget("shuffle") == 100
    assert ExperimentConfig(budgets={"shuffle": 7}).budget("shuffle") == 7
    with pytest.raises(ValidationError):
        ExperimentConfig(methods=["dropout"])
    with pytest.raises(ValidationError):
        ExperimentConfig(mappings=["coin_flip"])
    with pytest.raises(ValidationError):
        ExperimentConfig(network={"family": "scoring_system"})
    with pytest.raises(ValidationError):
        ExperimentConfig(selection_rates=[0.0])


def test_lottery_selecting_everyone_is_recorded_as_failure():
    """Test that a sigmoid-logit lottery with k == n fails its cell instead of the run."""
    member = PredictionVector(scores=np.array([0.9, 0.4, 0.2, 0.7]), validation_loss=0.3, method_tag="bootstrap", model_id="m0")
    samples = {"bootstrap": RashomonSample(members=(member,), epsilon=0.01, best_loss=0.3, method_tag="bootstrap")}
    cell = {"partition": 0, "draw": 0, "q": 2, "selection_rate": 1.0}
    failures = []
    out = lottery_allocations(samples, 4, ["top_k", "sigmoid_logit_v2"], 3, derive_seed(0), cell, failures)
    assert out == {"bootstrap": {}}
    assert [f["stage"] for f in failures] == ["mapping:sigmoid_logit_v2"]
    assert failures[0]["error"].startswith("InfeasibleSpaceError")


def test_experiment_config_from_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"q_values": [1], "budget_scale": "full"}))
    config = ExperimentConfig.from_file(path)
    assert config.q_values == [1]
    assert config.budget("bootstrap") == 1000


def test_archive_files(archive):
    """Test the layout and content of a smoke archive."""
    for name in ("records.csv", "metrics.csv", "age_histograms.csv", "risk_by_group.json", "manifest.json"):
        assert (archive.root / name).exists()

    records = archive.load_records()
    assert list(records.columns) == RECORD_COLUMNS
    assert set(records["draw"]) == {0, 1}
    assert set(records["method"]) == set(METHOD_REGISTRY) | {"equal_utility"}
    assert set(records["mapping"]) == set(MAPPING_REGISTRY) | {"ensemble", "reference", "uniform_sample"}
    assert set(records["metric"]) <= set(METRIC_CATALOG)

    manifest = archive.load_manifest()
    assert manifest["repetitions"] == 2
    assert manifest["population"] == {"source": "synthetic", "size": 1500}
    assert isinstance(manifest["failures"], list)

    sample = archive.read_sample("bootstrap", q=2)
    assert len(sample) >= 1
    assert sample.members[0].n == 100


def test_archive_values(archive):
    records = archive.load_records()
    top_k_models = records[(records["mapping"] == "top_k") & (records["metric"] == "rashomon_models")]
    assert (top_k_models["value"] >= 1).all()
    utility = records[records["metric"] == "utility"]["value"]
    assert ((utility >= 0) & (utility <= 1)).all()
    k_prime = records[records["metric"] == "reference_k_prime"]["value"]
    assert ((k_prime >= 0) & (k_prime <= 25)).all()


def test_aggregate_records():
    records = pd.DataFrame([
        {"partition": 0, "draw": d, "q": 1, "selection_rate": 0.1, "method": "bootstrap",
         "mapping": "top_k", "metric": "utility", "value": v}
        for d, v in enumerate([0.2, 0.4, float("nan")])
    ])
    metrics = aggregate_records(records)
    assert len(metrics) == 1
    row = metrics.iloc[0]
    assert row["count"] == 2 and row["missing"] == 1
    assert row["mean"] == pytest.approx(0.3)
    assert row["sd"] == pytest.approx(0.1414213562, abs=1e-9)


def test_archive_is_independent_of_thread_count(tmp_path, archive):
    threaded = run_experiment(smoke_config(tmp_path / "threaded", threads=4))
    assert (threaded.root / "records.csv").read_text() == (archive.root / "records.csv").read_text()
    assert threaded.load_risk() == archive.load_risk()


def test_emit_every_figure(archive, tmp_path):
    for figure_id in FIGURES:
        path = emit_plot_data(archive, figure_id, tmp_path / "figures")
        assert path.name == f"{figure_id}.csv"
        assert not pd.read_csv(path).empty
    default = emit_plot_data(archive, "fig2")
    assert default.parent == archive.figures_dir


def test_emit_without_archive(tmp_path):
    """Test the figures that need no simulation results."""
    count = pd.read_csv(emit_plot_data(None, "1-count", tmp_path))
    assert count.loc[0, "count"] == 60
    table = pd.read_csv(emit_plot_data(None, "table1", tmp_path))
    assert len(table) == 24
    with pytest.raises(MissingMetricError):
        emit_plot_data(None, "fig6", tmp_path)


def test_emit_unknown_figure(archive):
    with pytest.raises(UnknownFigureError) as info:
        emit_plot_data(archive, "fig99")
    assert "fig2" in info.value.valid_ids


def test_missing_archive(tmp_path):
    with pytest.raises(MissingMetricError):
        ResultsArchive(tmp_path / "empty").load_metrics()


def test_cli_count(capsys):
    assert main(["count", "--n", "10", "--k", "5", "--n-prime", "6", "--k-prime", "4"]) == 0
    out = capsys.readouterr().out
    assert "Count: 60" in out
    assert "Count (1 s.f.): 6e1" in out


def test_cli_rejects_invalid_space():
    assert main(["count", "--n", "4", "--k", "2", "--n-prime", "5", "--k-prime", "1"]) == 1


def test_cli_sample_space(capsys):
    argv = ["sample-space", "--n", "10", "--k", "5", "--n-prime", "6", "--k-prime", "4", "--draws", "200", "--show", "3"]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert "Selection frequencies over 200 draws" in out
    assert "Analytic:" in out


def test_cli_emit(archive, tmp_path, capsys):
    assert main(["emit", "--figure", "all", "--archive", str(archive.root), "--out", str(tmp_path)]) == 0
    for figure_id in FIGURES:
        assert (tmp_path / f"{figure_id}.csv").exists()


@pytest.mark.slow
def test_boundary_lottery_keeps_utility(tmp_path):
    """Test that randomising the boundary costs little utility relative to top-k."""
    config = smoke_config(
        tmp_path,
        generator={"population_size": 5000},
        methods=["bootstrap"],
        budgets={"bootstrap": 10},
        split_plan={"num_partitions": 2, "draws_per_partition": 5, "pool_size": 500},
        network={"family": "mlp", "hidden_sizes": [16], "epochs": 10},
        lottery_draws=50,
    )
    utility = run_experiment(config).metric("utility", method="bootstrap").set_index("mapping")["mean"]
    assert abs(utility["boundary_0.25k_0.50k"] - utility["top_k"]) < 0.03
    assert utility["top_k"] > utility["sigmoid_logit_v2"] - 0.05


@pytest.mark.slow
def test_case_study_trends(tmp_path):
    """Test the directional findings of a biased-cost run at k/n = 0.25, q = 2."""
    config = smoke_config(
        tmp_path,
        generator={"population_size": 5000, "bias_mode": "cost_proxy_bias"},
        budgets={"feature_subsets": 10, "bootstrap": 10, "shuffle": 10, "perturbation": 10},
        split_plan={"num_partitions": 2, "draws_per_partition": 3, "pool_size": 500},
        network={"family": "mlp", "hidden_sizes": [16], "epochs": 10},
        scoring_system={"family": "scoring_system", "epochs": 5, "learning_rate": 0.1},
        equal_utility_draws=50,
        perturbation_max_steps=20,
    )
    archive = run_experiment(config)

    def mean(name, method=None, mapping=None):
        return archive.metric(name, method=method, mapping=mapping).set_index("method")["mean"]

    analytic = mean("analytic_consistency", "equal_utility", "reference").iloc[0]
    consistency = mean("pairwise_consistency", mapping="top_k")
    rejection = mean("systemic_rejection", mapping="top_k")
    ensemble_entropy = mean("ensemble_age_entropy", mapping="ensemble")
    sampled_entropy = mean("age_entropy", "equal_utility", "uniform_sample").iloc[0]
    min_ratio = mean("min_threshold_ratio", mapping="top_k")
    reference_ratio = mean("reference_threshold_ratio", "equal_utility", "reference").iloc[0]

    for method in METHOD_REGISTRY:
        assert consistency[method] >= analytic + 0.05, method
        assert rejection[method] > 0, method
        assert ensemble_entropy[method] <= sampled_entropy, method
        assert min_ratio[method] >= reference_ratio, method

    for method, levels in archive.load_risk()["q2"].items():
        for level, by_race in levels.items():
            black, white = by_race["Black"], by_race["White"]
            if black and white and min(black["individuals"], white["individuals"]) >= 20:
                assert black["mean"] < white["mean"], (method, level)
