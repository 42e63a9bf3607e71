"""Plot-ready series for external plotting tools."""

from __future__ import annotations

import csv
import io as _io
from pathlib import Path

import numpy as np

from .detector import CpReport, true_run_lengths
from .io import atomic_write_text
from .kernel import default_times, fourier_envelope
from .mixture import MixtureParams


def _csv(rows, header) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def trace_rows(report: CpReport, cps=None):
    """``(t, r_map, r_true)`` rows; ``r_true`` is empty without ground truth."""
    truth = true_run_lengths(report.n_steps, cps) if cps is not None else None
    return [
        (t + 1, int(report.runlength_map[t]), "" if truth is None else int(truth[t])) for t in range(report.n_steps)
    ]


def write_trace(path, report: CpReport, cps=None) -> None:
    atomic_write_text(path, _csv(trace_rows(report, cps), ["t", "r_map", "r_true"]))


def write_label_raster(path, map_labels, true_labels=None) -> None:
    rows = []
    for t, z in enumerate(map_labels):
        truth = "" if true_labels is None else int(true_labels[t])
        rows.append((t + 1, "" if z < 0 else int(z), truth))
    atomic_write_text(path, _csv(rows, ["t", "map_label", "true_label"]))


def envelopes(params: MixtureParams) -> np.ndarray:
    """``K x D`` matrix of ``s_k(t)`` over the period."""
    times = default_times(params.dim)
    return np.array([fourier_envelope(hp, times) for hp in params.kernel_hp])


def _matrix_csv(matrix: np.ndarray) -> str:
    K, D = matrix.shape
    rows = [[k] + [repr(float(v)) for v in matrix[k]] for k in range(K)]
    return _csv(rows, ["class"] + [f"h{j + 1}" for j in range(D)])


def write_envelopes(path, params: MixtureParams) -> None:
    atomic_write_text(path, _matrix_csv(envelopes(params)))


def write_bernoulli_means(path, params: MixtureParams) -> None:
    atomic_write_text(path, _matrix_csv(params.bern_means))


def write_all(out_dir, report: CpReport | None = None, params: MixtureParams | None = None, map_labels=None,
              truth: dict | None = None) -> list:
    """Write whichever series the inputs allow; returns the paths written."""
    out = Path(out_dir)
    written = []
    cps = truth.get("cps") if truth else None
    if report is not None:
        write_trace(out / "trace.csv", report, cps)
        written.append(out / "trace.csv")
    if map_labels is not None:
        write_label_raster(out / "labels.csv", map_labels, truth.get("labels") if truth else None)
        written.append(out / "labels.csv")
    if params is not None:
        write_envelopes(out / "envelopes.csv", params)
        write_bernoulli_means(out / "bernoulli_means.csv", params)
        written += [out / "envelopes.csv", out / "bernoulli_means.csv"]
    return written
