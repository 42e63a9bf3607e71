"""File formats.  Every writer goes through a temp file and ``os.replace``.

* dataset: CSV ``date,real_1..real_D,bin_1..bin_D`` with ``NA`` for missing;
* labels: one integer (0-based) or ``NA`` per line;
* probabilities: ``T`` rows of ``K`` comma-separated reals, ``NA`` rows allowed;
* checkpoint, report, truth: JSON.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .detector import CpReport
from .errors import EmptyDataset
from .kernel import KernelHyperparams, NoiseModel
from .mixture import MixtureParams, ObservationBatch

NA = "NA"
CHECKPOINT_SCHEMA = 1


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value: float) -> str:
    return repr(float(value))


def _read_rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return [row for row in csv.reader(fh) if row and not row[0].startswith("#")]


# -- dataset --------------------------------------------------------------------------


def write_dataset(path, batch: ObservationBatch, dates=None) -> None:
    T, D = batch.real.shape
    dates = [str(d) for d in dates] if dates is not None else [str(t) for t in range(T)]
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["date"] + [f"real_{j + 1}" for j in range(D)] + [f"bin_{j + 1}" for j in range(D)])
    for t in range(T):
        real = [NA if batch.real_missing[t, j] else _fmt(batch.real[t, j]) for j in range(D)]
        bins = [NA if batch.bin_missing[t, j] else str(int(batch.bins[t, j])) for j in range(D)]
        writer.writerow([dates[t]] + real + bins)
    atomic_write_text(path, buf.getvalue())


def read_dataset(path):
    """Return ``(batch, dates)``."""
    rows = _read_rows(path)
    if len(rows) < 2:
        raise EmptyDataset(f"{path} holds no observations")
    header, body = rows[0], rows[1:]
    D = sum(h.startswith("real_") for h in header)
    if header[0] != "date" or len(header) != 1 + 2 * D or D == 0:
        raise ValueError(f"{path}: unexpected dataset header")
    values = np.array([[np.nan if v == NA else float(v) for v in row[1:]] for row in body])
    if values.shape[1] != 2 * D:
        raise ValueError(f"{path}: ragged rows")
    real, bins = values[:, :D], values[:, D:]
    batch = ObservationBatch(np.nan_to_num(real), np.isnan(real), np.nan_to_num(bins), np.isnan(bins))
    return batch, [row[0] for row in body]


# -- detector inputs ------------------------------------------------------------------


def write_labels(path, labels) -> None:
    lines = [NA if (z is None or int(z) < 0) else str(int(z)) for z in labels]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_labels(path) -> np.ndarray:
    """0-based labels with ``-1`` for ``NA``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            token = line.strip()
            if not token:
                continue
            out.append(-1 if token == NA else int(token))
    if not out:
        raise EmptyDataset(f"{path} holds no labels")
    return np.array(out, dtype=int)


def write_probabilities(path, probs, missing=None) -> None:
    probs = np.asarray(probs, dtype=float)
    missing = np.zeros(probs.shape[0], dtype=bool) if missing is None else np.asarray(missing, dtype=bool)
    lines = [NA if missing[t] else ",".join(_fmt(p) for p in probs[t]) for t in range(probs.shape[0])]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_probabilities(path) -> np.ndarray:
    """``T x K`` matrix with ``NaN`` rows where the file says ``NA``."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            token = line.strip()
            if token:
                rows.append(None if token == NA else [float(v) for v in token.split(",")])
    if not rows:
        raise EmptyDataset(f"{path} holds no probability rows")
    widths = {len(r) for r in rows if r is not None}
    if len(widths) > 1:
        raise ValueError(f"{path}: rows have different lengths")
    K = widths.pop() if widths else 1
    return np.array([[np.nan] * K if r is None else r for r in rows])


# -- model checkpoint -----------------------------------------------------------------


def params_to_dict(params: MixtureParams) -> dict:
    return {
        "weights": params.weights.tolist(),
        "bern_means": params.bern_means.tolist(),
        "noise_sigma": params.noise.sigma.tolist(),
        "kernels": [
            {"a": hp.a.tolist(), "b": hp.b.tolist(), "sigma_a": hp.sigma_a, "ell": hp.ell, "period": hp.period}
            for hp in params.kernel_hp
        ],
    }


def params_from_dict(data: dict) -> MixtureParams:
    hps = tuple(KernelHyperparams(**k) for k in data["kernels"])
    return MixtureParams(
        np.array(data["weights"]), np.array(data["bern_means"]), hps, NoiseModel(np.array(data["noise_sigma"]))
    )


def write_checkpoint(path, params: MixtureParams, metadata: dict | None = None) -> None:
    doc = {"schema": CHECKPOINT_SCHEMA, "params": params_to_dict(params), "metadata": metadata or {}}
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def read_checkpoint(path):
    """Return ``(params, metadata)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"{path}: unsupported checkpoint schema {doc.get('schema')!r}")
    return params_from_dict(doc["params"]), doc.get("metadata", {})


# -- detector outputs -----------------------------------------------------------------


def write_report(path, report: CpReport, posterior_path=None, metadata: dict | None = None) -> None:
    doc = {
        "runlength_map": report.runlength_map.tolist(),
        "detected_cps": [{"time": int(t), "estimated_cp": int(cp)} for t, cp in report.detected_cps],
        "log_evidence": report.log_evidence,
        "metadata": metadata or {},
    }
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")
    if posterior_path is not None:
        lines = [",".join(_fmt(p) for p in row) for row in report.posterior]
        atomic_write_text(posterior_path, "\n".join(lines) + "\n")


def read_report(path, posterior_path=None) -> CpReport:
    doc = json.loads(Path(path).read_text())
    rmap = np.array(doc["runlength_map"], dtype=int)
    if posterior_path is not None:
        posterior = np.array([[float(v) for v in row] for row in _read_rows(posterior_path)])
    else:
        posterior = np.zeros((rmap.size, rmap.size + 1))
        posterior[np.arange(rmap.size), rmap] = 1.0
    return CpReport(
        runlength_map=rmap,
        posterior=posterior,
        detected_cps=[(d["time"], d["estimated_cp"]) for d in doc["detected_cps"]],
        log_evidence=doc["log_evidence"],
    )


def write_truth(path, labels, cps, mask=None, extra: dict | None = None) -> None:
    doc = {
        "labels": [int(z) for z in labels],
        "cps": [int(c) for c in cps],
        "missing": [bool(m) for m in mask] if mask is not None else [False] * len(labels),
    }
    doc.update(extra or {})
    atomic_write_text(path, json.dumps(doc) + "\n")


def read_truth(path) -> dict:
    return json.loads(Path(path).read_text())
