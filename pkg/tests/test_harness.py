import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdclab import harness
from fdclab.augment import METHODS
from fdclab.harness import (TABLE4, ExperimentConfig, FoldReport, LeakageError, aggregate,
                            compare_augmentations, folds_digest, gen_dataset, generate_sdis,
                            kfold_split, load_dataset, run_experiment, train_fold)
from fdclab.nnet import TrainConfig
from fdclab.sdi import SDIDataset


def test_kfold_examples():
    folds = kfold_split(10, 5, seed=0)
    assert [len(f) for f in folds] == [2] * 5
    assert sorted(np.concatenate(folds).tolist()) == list(range(10))
    assert [len(f) for f in kfold_split(111_965, 5, 0)] == [22_393] * 5
    assert folds_digest(kfold_split(50, 5, 3)) == folds_digest(kfold_split(50, 5, 3))
    assert folds_digest(kfold_split(50, 5, 3)) != folds_digest(kfold_split(50, 5, 4))
    with pytest.raises(ValueError):
        kfold_split(3, 5)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 500), st.integers(2, 10), st.integers(0, 2 ** 32 - 1))
def test_kfold_partition_property(n, k, seed):
    if n < k:
        return
    folds = kfold_split(n, k, seed)
    sizes = [len(f) for f in folds]
    assert len(folds) == k and max(sizes) - min(sizes) <= 1
    allidx = np.concatenate(folds)
    assert len(allidx) == n and len(np.unique(allidx)) == n


def test_aggregate_examples():
    m, s = aggregate([98.16, 98.51, 98.58, 98.57, 98.38])
    assert abs(m - 98.44) <= 1e-3 and abs(s - 0.1756) <= 1e-3
    assert abs(np.std([98.16, 98.51, 98.58, 98.57, 98.38]) - 0.1571) < 1e-3  # population STD
    assert aggregate([97.0] * 5) == (97.0, 0.0)
    m, s = aggregate([0, 100])
    assert m == 50 and s == pytest.approx(70.7107, abs=1e-4)
    with pytest.raises(ValueError):
        aggregate([1.0])


@pytest.mark.parametrize("method", list(TABLE4))
def test_table4_rows(method):
    folds, mean, std = TABLE4[method]
    m, s = aggregate(folds)
    assert abs(m - mean) <= 1e-2 and abs(s - std) <= 1e-2


def test_fold_report_round_trip(tmp_path):
    r = FoldReport.from_folds("All_Tile", "COMPACT_FDC", [60.0, 62.5, 61.0])
    back = FoldReport.from_json(r.to_json())
    assert back == r
    bad = json.loads(r.to_json())
    bad["mean"] += 1e-6
    with pytest.raises(ValueError):
        FoldReport.from_json(json.dumps(bad))
    r.save(tmp_path)
    lines = (tmp_path / "fold_report.csv").read_text().splitlines()
    assert lines[0] == "fold,accuracy" and lines[-1].startswith("std,")


def test_config_validation_and_round_trip(tmp_path):
    c = ExperimentConfig(dataset_size=40, method="All_Repeat", k=2, train={"epochs": 2})
    assert isinstance(c.train, TrainConfig) and c.train.epochs == 2
    d = c.to_dict()
    assert ExperimentConfig.from_dict(json.loads(json.dumps(d))) == c
    p = tmp_path / "c.json"
    p.write_text(json.dumps(d))
    assert ExperimentConfig.load(p) == c
    s = c.with_seed(7)
    assert (s.data_seed, s.fold_seed, s.init_seed, s.train.seed) == (7, 7, 7, 7)
    bad = [{"k": 1}, {"dataset_size": 3}, {"network": "VGG19"}, {"method": "Tile"},
           {"case_weights": [1, 2]}, {"case_weights": [0] * 10}, {"last_epochs": 0},
           {"train": {"lr": -1}}]
    for kw in bad:
        with pytest.raises(ValueError):
            ExperimentConfig(**kw)
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict({"epochs": 3})


def test_delta_zero_weights_all_normal():
    w = [1] + [0] * 9
    ds = generate_sdis(ExperimentConfig(dataset_size=40, case_weights=w, segment_s=120), 1)
    assert len(ds) == 40 and not ds.labels.any() and not ds.fault_columns.any()


def test_balanced_generation_and_determinism(tmp_path):
    cfg = ExperimentConfig(dataset_size=50, out_dir=str(tmp_path))
    ds, d1 = gen_dataset(cfg, 3, str(tmp_path / "a"))
    _, d2 = gen_dataset(cfg, 3, str(tmp_path / "b"))
    assert ds.histogram() == [5] * 10
    for name in ("manifest.json", "sdi.bin", "fault_columns.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["count"] == 50 and man["label_histogram"] == [5] * 10 and man["seed"] == 3
    other = generate_sdis(cfg, 4)
    assert not np.array_equal(other.values, ds.values)
    # faulted samples carry a fault span; normal ones do not
    assert all(ds.fault_columns[i].any() for i in np.flatnonzero(ds.labels))
    assert not ds.fault_columns[ds.labels == 0].any()


def test_weighted_quotas():
    w = [2, 1, 1, 0, 0, 0, 0, 0, 0, 0]
    ds = generate_sdis(ExperimentConfig(dataset_size=40, case_weights=w), 0)
    assert ds.histogram()[:3] == [20, 10, 10] and sum(ds.histogram()) == 40


def test_infeasible_generation(monkeypatch):
    monkeypatch.setattr(harness, "sdi_series", lambda traj: iter(()))
    with pytest.raises(RuntimeError, match="infeasible"):
        generate_sdis(ExperimentConfig(dataset_size=2, k=2, segment_s=60, realizations=1), 0)


@pytest.fixture(scope="module")
def small():
    return generate_sdis(ExperimentConfig(dataset_size=30), 0)


def quick(tmp_path, **kw):
    base = dict(dataset_size=30, k=3, train=TrainConfig(lr=1e-3, epochs=2), last_epochs=2,
                out_dir=str(tmp_path), deterministic=True)
    return ExperimentConfig(**{**base, **kw})


def test_run_experiment(tmp_path, small):
    cfg = quick(tmp_path)
    rep = run_experiment(cfg, small)
    assert len(rep.fold_accuracies) == 3 and rep.fold_sizes == [10, 10, 10]
    assert rep.check() is rep
    for i, h in enumerate(rep.histories):
        assert len(h) == 2
        assert rep.fold_accuracies[i] == pytest.approx(np.mean([e["test_acc"] for e in h]))
    for i, conf in enumerate(rep.confusions):
        assert np.sum(conf) == 10
    out = tmp_path / "All_Tile"
    assert sorted(os.listdir(out)) == ["fold1.fdcw", "fold2.fdcw", "fold3.fdcw",
                                       "fold_report.csv", "fold_report.json"]
    again = run_experiment(cfg.replace(out_dir=str(tmp_path / "again")), small)
    assert again.to_json() == rep.to_json()
    assert ((tmp_path / "again" / "All_Tile" / "fold2.fdcw").read_bytes()
            == (out / "fold2.fdcw").read_bytes())


def test_leakage_guard(tmp_path, small):
    with pytest.raises(LeakageError):
        train_fold(quick(tmp_path), small, np.arange(0, 20), np.arange(15, 30))


def test_compare_constant_dataset(tmp_path):
    labels = np.arange(20) % 10
    ds = SDIDataset(np.full((20, 15, 31), 0.5), labels)
    cfg = quick(tmp_path, dataset_size=20, k=2, train=TrainConfig(lr=1e-3, epochs=1),
                last_epochs=1)
    table = compare_augmentations(cfg, ds)
    assert [r[0] for r in table["rows"]] == list(METHODS) and len(table["rows"]) == 7
    assert table["columns"] == ["method", "fold1", "fold2", "mean", "std"]
    accs = {tuple(r[1:]) for r in table["rows"]}
    assert len(accs) == 1
    saved = json.loads((tmp_path / "compare_aug.json").read_text())
    assert saved["folds_sha256"] == folds_digest(kfold_split(20, 2, 0))
    assert len((tmp_path / "compare_aug.csv").read_text().splitlines()) == 8


def test_load_dataset_round_trip(tmp_path, small):
    cfg = quick(tmp_path)
    small.save(tmp_path / "dataset")
    back = load_dataset(cfg)
    assert np.array_equal(back.values, small.values) and back.histogram() == small.histogram()
