import csv
import json

import numpy as np
import pytest

from circadian_cpd import io as cio
from circadian_cpd import report
from circadian_cpd.detector import peo_detect
from circadian_cpd.errors import EmptyDataset
from circadian_cpd.mixture import ObservationBatch
from circadian_cpd.synthetic import random_mixture_params


def random_batch(rng, T=6, D=5):
    return ObservationBatch(rng.normal(size=(T, D)) * 1e3, rng.random((T, D)) < 0.3,
                            (rng.random((T, D)) < 0.5).astype(float), rng.random((T, D)) < 0.3)


def test_dataset_round_trip(tmp_path):
    batch = random_batch(np.random.default_rng(0))
    dates = [f"2024-01-0{i + 1}" for i in range(6)]
    cio.write_dataset(tmp_path / "d.csv", batch, dates)
    back, back_dates = cio.read_dataset(tmp_path / "d.csv")
    assert back_dates == dates
    for name in ("real", "real_missing", "bins", "bin_missing"):
        assert np.array_equal(getattr(back, name), getattr(batch, name))
    with open(tmp_path / "d.csv") as fh:
        header = next(csv.reader(fh))
    assert header[:2] == ["date", "real_1"] and header[-1] == "bin_5"


def test_dataset_errors(tmp_path):
    (tmp_path / "empty.csv").write_text("date,real_1,bin_1\n")
    with pytest.raises(EmptyDataset):
        cio.read_dataset(tmp_path / "empty.csv")
    (tmp_path / "bad.csv").write_text("day,x\n1,2\n")
    with pytest.raises(ValueError):
        cio.read_dataset(tmp_path / "bad.csv")


def test_labels_round_trip(tmp_path):
    labels = np.array([0, 3, -1, 2, -1, 1])
    cio.write_labels(tmp_path / "l.txt", labels)
    assert (tmp_path / "l.txt").read_text().splitlines()[2] == "NA"
    assert np.array_equal(cio.read_labels(tmp_path / "l.txt"), labels)
    (tmp_path / "e.txt").write_text("\n")
    with pytest.raises(EmptyDataset):
        cio.read_labels(tmp_path / "e.txt")


def test_probabilities_round_trip(tmp_path):
    probs = np.random.default_rng(1).dirichlet([1, 1, 1], size=5)
    missing = np.array([False, True, False, False, True])
    cio.write_probabilities(tmp_path / "p.csv", probs, missing)
    back = cio.read_probabilities(tmp_path / "p.csv")
    assert np.array_equal(back[~missing], probs[~missing])
    assert np.isnan(back[missing]).all()
    (tmp_path / "r.csv").write_text("0.5,0.5\n1.0\n")
    with pytest.raises(ValueError):
        cio.read_probabilities(tmp_path / "r.csv")


def test_checkpoint_is_bitwise(tmp_path):
    params = random_mixture_params(np.random.default_rng(2), 3, 24, 3)
    cio.write_checkpoint(tmp_path / "c.json", params, {"seed": 4})
    back, meta = cio.read_checkpoint(tmp_path / "c.json")
    assert back == params
    assert meta == {"seed": 4}
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["schema"] = 99
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        cio.read_checkpoint(tmp_path / "c.json")


def test_report_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    labels = np.concatenate([rng.choice(3, 40, p=[.9, .05, .05]), rng.choice(3, 40, p=[.05, .05, .9])])
    rep = peo_detect(labels, n_classes=3)
    cio.write_report(tmp_path / "r.json", rep, tmp_path / "post.csv")
    back = cio.read_report(tmp_path / "r.json", tmp_path / "post.csv")
    assert np.array_equal(back.runlength_map, rep.runlength_map)
    assert np.array_equal(back.posterior, rep.posterior)
    assert back.detected_cps == rep.detected_cps
    assert back.log_evidence == rep.log_evidence


def test_truth_round_trip(tmp_path):
    cio.write_truth(tmp_path / "t.json", [0, 1, 1], [1], [False, True, False], {"seed": 3})
    assert cio.read_truth(tmp_path / "t.json") == {"labels": [0, 1, 1], "cps": [1], "missing": [False, True, False],
                                                   "seed": 3}


def test_atomic_write_leaves_no_temp_files(tmp_path):
    cio.atomic_write_text(tmp_path / "sub" / "x.txt", "hello")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["x.txt"]


def test_report_series(tmp_path):
    params = random_mixture_params(np.random.default_rng(4), 3, 24, 2)
    labels = np.array([0] * 30 + [2] * 30)
    rep = peo_detect(labels, n_classes=3)
    paths = report.write_all(tmp_path, rep, params, labels, {"cps": [30], "labels": labels.tolist()})
    assert sorted(p.name for p in paths) == ["bernoulli_means.csv", "envelopes.csv", "labels.csv", "trace.csv"]
    with open(tmp_path / "envelopes.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 4 and len(rows[0]) == 25
    with open(tmp_path / "trace.csv") as fh:
        trace = list(csv.DictReader(fh))
    assert [int(r["t"]) for r in trace] == list(range(1, 61))
    assert [int(r["r_map"]) for r in trace] == rep.runlength_map.tolist()
    assert int(trace[30]["r_true"]) == 1 and int(trace[29]["r_true"]) == 30
