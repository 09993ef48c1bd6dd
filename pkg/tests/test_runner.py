import asyncio
import csv
import logging
from dataclasses import replace

import numpy as np
import pytest

from analytics.analysis import analyze_run
from data.dataset import Dataset
from data.partition import partition_type1
from federation.runner import FederationRunner, sample_chunks
from utils.errors import ConfigError
from utils.manifest import RunManifest, RunPaths
from utils.verification import ulp_close


def run(config, data, tmp_path=None, threads=1, name=None):
    train, test = data
    paths = RunPaths(tmp_path / (name or config.name)) if tmp_path is not None else None
    runner = FederationRunner(config, train, test, threads=threads, paths=paths)
    return asyncio.run(runner.run()), paths


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.reader(handle))


def test_sample_chunks_are_disjoint(fashion_like):
    shard = partition_type1(fashion_like[0])[0]
    chunks = sample_chunks(shard, 3, 20, seed=5)
    assert [len(c) for c in chunks] == [20, 20, 20]
    ids = np.concatenate([c.item_ids for c in chunks])
    assert len(set(ids.tolist())) == 60
    assert set(np.concatenate([c.labels for c in chunks])) <= {0, 1}
    assert sample_chunks(shard, 0, 20, seed=5) == []


def test_type1_writes_metrics_for_every_round(fashion_like, reduced_config, tmp_path):
    result, paths = run(reduced_config, fashion_like, tmp_path)
    assert len(result.history) == reduced_config.frequency + 1
    assert result.history[0].acquisitions_consumed == 0
    assert result.history[-1].acquisitions_consumed == reduced_config.acquisitions

    rows = read_rows(paths.metrics_csv)
    header = rows[0]
    assert header[:3] == ["round", "model_id", "accuracy"]
    assert header[3] == "div_conv1.weight"
    assert header[-1] == "correct_9"
    body = rows[1:]
    for model_id in ("D1", "D2", "D3", "D4", "ensemble"):
        assert sum(1 for r in body if r[1] == model_id) == reduced_config.frequency + 1
    ensemble_rows = [r for r in body if r[1] == "ensemble"]
    assert all(cell == "" for cell in ensemble_rows[0][3:3 + len(result.block_names)])
    round0_device = next(r for r in body if r[0] == "0" and r[1] == "D1")
    for name, cell in zip(result.block_names, round0_device[3:]):
        assert cell == "0" if name.endswith(".weight") else cell in ("0", "NA")
    for r in body:
        correct = sum(int(c) for c in r[-10:])
        assert correct == round(float(r[2]) * len(fashion_like[1]))


def test_manifest_lists_checkpoints(fashion_like, reduced_config, tmp_path):
    result, paths = run(reduced_config, fashion_like, tmp_path)
    manifest = RunManifest.load(paths.manifest)
    assert manifest.status == "finished"
    assert manifest.final_accuracy == result.final_accuracy
    assert manifest.metrics_files == ["metrics.csv"]
    assert sorted(manifest.checkpoints["0"]) == ["ensemble"]
    assert sorted(manifest.checkpoints["2"]) == ["D1", "D2", "D3", "D4", "ensemble"]
    for models in manifest.checkpoints.values():
        for relative in models.values():
            assert (paths.root / relative).exists()
    assert "epochs=1" in manifest.config_text


def test_repeated_runs_are_byte_identical(fashion_like, reduced_config, tmp_path):
    _, first = run(reduced_config, fashion_like, tmp_path, name="a")
    _, second = run(reduced_config, fashion_like, tmp_path, name="b")
    assert first.metrics_csv.read_bytes() == second.metrics_csv.read_bytes()
    assert first.checkpoint(2, "ensemble").read_bytes() == second.checkpoint(2, "ensemble").read_bytes()


@pytest.mark.parametrize("regime", ["type1", "type2"])
def test_thread_count_does_not_change_results(fashion_like, reduced_config, tmp_path, regime):
    config = replace(reduced_config, regime=regime)
    _, single = run(config, fashion_like, tmp_path, threads=1, name="single")
    _, pooled = run(config, fashion_like, tmp_path, threads=4, name="pooled")
    assert single.metrics_csv.read_bytes() == pooled.metrics_csv.read_bytes()


def test_different_seeds_differ(fashion_like, reduced_config):
    a, _ = run(reduced_config, fashion_like)
    b, _ = run(reduced_config.with_seed(1), fashion_like)
    assert not a.global_model.equals(b.global_model)


def test_type2_persists_pools_and_records_acquisitions(fashion_like, reduced_config):
    config = replace(reduced_config, regime="type2")
    result, _ = run(config, fashion_like)
    last = result.history[-1]
    assert sorted(last.acquisition_histograms) == [1, 2, 3, 4]
    for histograms in last.acquisition_histograms.values():
        assert len(histograms) == config.acquisitions_per_round
        assert all(h.sum() == config.acquisition_size for h in histograms)


def test_type2_random_acquisition(fashion_like, reduced_config, caplog):
    config = replace(reduced_config, regime="type2", acquisition="random")
    with caplog.at_level(logging.DEBUG, logger="bayes.acquisition"):
        result, _ = run(config, fashion_like)
    assert len(result.history) == config.frequency + 1
    scored = [r.getMessage() for r in caplog.records if "случайно выбрано" in r.getMessage()]
    assert len(scored) == config.devices * config.frequency * config.acquisitions_per_round


def test_type2_with_empty_acquisitions_keeps_the_model(fashion_like, reduced_config):
    config = replace(reduced_config, regime="type2", acquisition_size=0)
    result, _ = run(config, fashion_like)
    models = list(result.device_models.values())
    assert all(m.equals(models[0]) for m in models)
    assert ulp_close(result.global_model, models[0], ulps=4)


def test_sequential_baseline(fashion_like, reduced_config, tmp_path):
    config = replace(reduced_config, regime="sequential", name="sequential")
    result, paths = run(config, fashion_like, tmp_path)
    assert len(result.history) == len(config.device_classes) + 1
    assert result.device_models == {}
    assert all(m.device_accuracies == {} for m in result.history)
    rows = read_rows(paths.metrics_csv)[1:]
    assert {r[1] for r in rows} == {"sequential"}
    assert result.history[-1].acquisitions_consumed == len(config.device_classes) * config.acquisitions


def test_gradients_mode(fashion_like, reduced_config):
    config = replace(reduced_config, aggregate_mode="gradients")
    result, _ = run(config, fashion_like)
    assert len(result.history) == config.frequency + 1
    assert result.history[-1].strategy_chosen == "ave"


@pytest.mark.parametrize("strategy", ["opt", "mix"])
def test_selection_strategies(fashion_like, reduced_config, strategy):
    config = replace(reduced_config, strategy=strategy)
    result, _ = run(config, fashion_like)
    chosen = {m.strategy_chosen for m in result.history[1:]}
    if strategy == "opt":
        assert chosen == {"opt"}
        final = result.history[-1]
        assert final.ensemble_accuracy in final.device_accuracies.values()
    else:
        assert chosen <= {"ave", "opt"}


def test_selection_needs_validation(fashion_like, reduced_config):
    config = replace(reduced_config, strategy="opt", validation_size=0)
    with pytest.raises(ConfigError):
        run(config, fashion_like)


def test_batchnorm_model_runs(fashion_like, reduced_config):
    config = replace(reduced_config, batchnorm=True, frequency=1, acquisitions=1)
    result, _ = run(config, fashion_like)
    assert "bn1.gamma" in result.block_names


def test_analyze_run_writes_reports(fashion_like, reduced_config, tmp_path):
    _, paths = run(reduced_config, fashion_like, tmp_path)
    report = analyze_run(paths.manifest, fashion_like[1], label=1, samples=5)
    names = sorted(p.name for p in report.files)
    assert "divergence.csv" in names and "histograms.csv" in names and "affinity.csv" in names
    assert "heatmap_ensemble.csv" in names and "heatmap_D4.csv" in names
    assert sorted(report.affinities) == ["D1", "D2", "D3", "D4"]
    divergence = read_rows(paths.analysis_dir / "divergence.csv")
    assert len(divergence) == 1 + 2 * reduced_config.devices
    heatmap = np.loadtxt(paths.analysis_dir / "heatmap_D1.csv", delimiter=",", skiprows=1)
    assert heatmap.shape == (5, 128)
    assert (heatmap >= 0).all()


def test_runner_rejects_oversized_validation(fashion_like, reduced_config):
    train, test = fashion_like
    with pytest.raises(ValueError):
        FederationRunner(replace(reduced_config, validation_size=len(train) + 1), train, test)


def test_empty_test_set_is_an_error(fashion_like, reduced_config):
    with pytest.raises(ValueError):
        asyncio.run(FederationRunner(reduced_config, fashion_like[0], Dataset.empty()).run())
