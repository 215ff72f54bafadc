"""Per-trial time series and their CSV serialization."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

__all__ = ["TrialRecord", "config_hash", "write_csv_atomic"]

CSV_FIELDS = ("t", "theta_dist", "loss", "grad_norm", "aborted")


def config_hash(meta) -> str:
    """Stable hash of configuration metadata (canonical JSON, sha256)."""
    blob = json.dumps(meta, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv_atomic(path, header, rows):
    """Write a CSV via a temp file + rename so readers never see partials."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(x) for x in row])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class TrialRecord:
    """Time series of one learning trial.

    Rows are indexed by the recorded step times `t` (starting at t=0, the
    state before any update). `theta_dist` is ||theta_t - theta*|| (NaN if
    no reference parameter was supplied), `loss` the instantaneous loss,
    `grad_norm` ||v_t||. `abort_t` is set when the trial overflowed; the
    abort itself is data for the divergence experiments. `interval_k`,
    when present, is the truncation-interval index and is emitted as an
    extra CSV column.
    """

    t: np.ndarray
    theta_dist: np.ndarray
    loss: np.ndarray
    grad_norm: np.ndarray
    abort_t: int | None = None
    interval_k: np.ndarray | None = None
    config_hash: str = ""
    final_theta: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def aborted(self) -> bool:
        return self.abort_t is not None

    def final_dist(self) -> float:
        return float(self.theta_dist[-1])

    def rows(self):
        aborted_col = np.zeros(len(self.t), dtype=int)
        if self.abort_t is not None:
            aborted_col[self.t >= self.abort_t] = 1
        cols = [self.t, self.theta_dist, self.loss, self.grad_norm, aborted_col]
        if self.interval_k is not None:
            cols.append(self.interval_k)
        return zip(*cols)

    def header(self):
        fields = list(CSV_FIELDS)
        if self.interval_k is not None:
            fields.append("interval_k")
        return fields

    def to_csv(self, path):
        write_csv_atomic(path, self.header(), self.rows())

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
        t = np.array([int(r["t"]) for r in rows])
        aborted = np.array([int(r["aborted"]) for r in rows])
        abort_t = int(t[aborted == 1][0]) if aborted.any() else None
        interval_k = None
        if rows and "interval_k" in rows[0]:
            interval_k = np.array([int(r["interval_k"]) for r in rows])
        return cls(
            t=t,
            theta_dist=np.array([float(r["theta_dist"]) for r in rows]),
            loss=np.array([float(r["loss"]) for r in rows]),
            grad_norm=np.array([float(r["grad_norm"]) for r in rows]),
            abort_t=abort_t,
            interval_k=interval_k,
        )


class RecordBuilder:
    """Accumulates rows during a run; avoids growing numpy arrays."""

    def __init__(self, config_meta=None, with_intervals=False):
        self.ts, self.dists, self.losses, self.gnorms = [], [], [], []
        self.intervals = [] if with_intervals else None
        self.abort_t = None
        self.meta = dict(config_meta) if config_meta else {}

    def add(self, t, dist, loss, gnorm, interval=None):
        self.ts.append(int(t))
        self.dists.append(float(dist))
        self.losses.append(float(loss))
        self.gnorms.append(float(gnorm))
        if self.intervals is not None:
            self.intervals.append(0 if interval is None else int(interval))

    def build(self, final_theta=None):
        return TrialRecord(
            t=np.array(self.ts, dtype=int),
            theta_dist=np.array(self.dists),
            loss=np.array(self.losses),
            grad_norm=np.array(self.gnorms),
            abort_t=self.abort_t,
            interval_k=None if self.intervals is None else np.array(self.intervals, dtype=int),
            config_hash=config_hash(self.meta) if self.meta else "",
            final_theta=None if final_theta is None else np.asarray(final_theta, dtype=float),
            meta=self.meta,
        )
