"""Tabular ingestion and the preprocessing chain.

The chain is fixed: (optional) drop samples with too many missing cells,
drop features with too many missing cells, median-impute, regress confounds
(OLS with intercept), standardise. Every step records what it did in a
:class:`PreprocessReport`, and :func:`replay` re-applies a report to raw data
with the stored parameters, reproducing the processed matrices bit for bit.

Input CSVs are samples x features: first column sample ID, header row of
feature names. Empty cells and ``NA``/``NaN`` mark missing values.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import MultiViewDataset
from .errors import (
    AlignmentError,
    CollinearityError,
    ConfigError,
    DataError,
    DegenerateDataError,
    ImputeError,
    InvalidArgumentError,
    ParseError,
)

__all__ = [
    "MultiViewDataset",
    "PreprocessReport",
    "load_views",
    "read_table",
    "write_views",
    "drop_high_missing_samples",
    "drop_high_missing",
    "median_impute",
    "regress_confounds",
    "standardize",
    "preprocess",
    "replay",
]

MISSING_TOKENS = frozenset({"", "na", "nan", "n/a", "null"})
STEP_ORDER = ("drop_samples", "drop_features", "impute", "regress", "standardize")


# -- reading -----------------------------------------------------------------

@dataclass
class Table:
    ids: list
    columns: list
    values: np.ndarray        # (n_rows, n_columns), float with NaN
    path: str


def read_table(path, text_columns: Sequence[str] = ()) -> tuple:
    """Parse one CSV; returns ``(Table, {column: [str, ...]})`` for ``text_columns``."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise ParseError(f"{path}: need an ID column and at least one data column")
    names = header[1:]
    if len(set(names)) != len(names):
        raise ParseError(f"{path}: duplicate column names")
    text_idx = {names.index(c): c for c in text_columns if c in names}
    ids, data, text = [], [], {c: [] for c in text_idx.values()}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}: line {lineno} has {len(row)} fields, header has {len(header)}")
        ids.append(row[0].strip())
        vals = []
        for j, cell in enumerate(row[1:]):
            if j in text_idx:
                text[text_idx[j]].append(cell.strip())
                continue
            c = cell.strip()
            if c.lower() in MISSING_TOKENS:
                vals.append(math.nan)
                continue
            try:
                vals.append(float(c))
            except ValueError:
                raise ParseError(f"{path}: line {lineno}, column {names[j]!r}: cannot parse {cell!r}") from None
        data.append(vals)
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ParseError(f"{path}: duplicate sample IDs {dup[:10]}")
    cols = [n for j, n in enumerate(names) if j not in text_idx]
    values = np.asarray(data, dtype=float).reshape(len(ids), len(cols))
    return Table(ids, cols, values, str(path)), text


def _align(reference_ids, table: Table) -> np.ndarray:
    missing = sorted(set(reference_ids) - set(table.ids))
    extra = sorted(set(table.ids) - set(reference_ids))
    if not set(reference_ids) & set(table.ids):
        raise AlignmentError(f"{table.path}: no sample IDs in common with the first view")
    if missing or extra:
        raise AlignmentError(
            f"{table.path}: sample IDs disagree with the first view; "
            f"missing {missing[:10]}{'...' if len(missing) > 10 else ''}, "
            f"unexpected {extra[:10]}{'...' if len(extra) > 10 else ''}"
        )
    pos = {s: i for i, s in enumerate(table.ids)}
    return np.array([pos[s] for s in reference_ids])


def load_views(paths: Sequence, label_column: Optional[str] = None, labels_path=None,
               confounds_path=None, view_names: Optional[Sequence[str]] = None) -> MultiViewDataset:
    """Read one CSV per view and align them on sample ID (first file's order).

    Subgroup labels come from ``label_column`` (searched in the view files,
    then in ``labels_path``); confounds from ``confounds_path``, all columns.
    """
    if not paths:
        raise InvalidArgumentError("need at least one view file")
    tables, labels = [], None
    for p in paths:
        t, text = read_table(p, text_columns=[label_column] if label_column else ())
        if label_column in text:
            labels = text[label_column]
            label_ids = t.ids
        tables.append(t)
    ids = tables[0].ids
    if not ids:
        raise ParseError(f"{tables[0].path}: no data rows")
    views = []
    for t in tables:
        if not t.columns:
            raise ParseError(f"{t.path}: no feature columns")
        views.append(t.values[_align(ids, t)].T)
    if label_column and labels is None:
        if labels_path is None:
            raise DataError(f"label column {label_column!r} not found in any view file")
        t, text = read_table(labels_path, text_columns=[label_column])
        if label_column not in text:
            raise DataError(f"{labels_path}: no column {label_column!r}")
        labels, label_ids = text[label_column], t.ids
    if labels is not None:
        idx = _align(ids, Table(label_ids, [], np.zeros((len(label_ids), 0)), str(labels_path or paths[0])))
        labels = np.asarray([_label_value(labels[i]) for i in idx])
    confounds = confound_names = None
    if confounds_path is not None:
        t, _ = read_table(confounds_path)
        confounds = t.values[_align(ids, t)].T
        confound_names = t.columns
        if np.isnan(confounds).any():
            raise DataError(f"{confounds_path}: confounds contain missing values")
    return MultiViewDataset(
        views,
        feature_names=[t.columns for t in tables],
        sample_ids=list(ids),
        labels=labels,
        confounds=confounds,
        confound_names=confound_names,
        view_names=list(view_names) if view_names else [Path(p).stem for p in paths],
    )


def _label_value(s: str):
    try:
        f = float(s)
    except ValueError:
        return s
    return int(f) if f.is_integer() else f


def write_views(data: MultiViewDataset, directory, digits: Optional[int] = None) -> list:
    """Write each view as ``<view_name>.csv`` (samples x features); returns the paths.

    Values are written with ``repr`` precision so that a round trip is exact.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fmt = repr if digits is None else (lambda v: f"{v:.{digits}g}")
    out = []
    for name, feats, v in zip(data.view_names, data.feature_names, data.views):
        path = directory / f"{name}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", *feats])
            for i, sid in enumerate(data.sample_ids):
                w.writerow([sid, *("" if math.isnan(x) else fmt(float(x)) for x in v[:, i])])
        out.append(path)
    return out


# -- report ------------------------------------------------------------------

@dataclass
class PreprocessReport:
    """Ordered record of the applied steps and the parameters they used."""

    steps: list = field(default_factory=list)

    def record(self, name: str, **payload):
        if name not in STEP_ORDER:
            raise InvalidArgumentError(f"unknown step {name!r}")
        done = [s["step"] for s in self.steps]
        if done and STEP_ORDER.index(name) <= STEP_ORDER.index(done[-1]):
            raise ConfigError(f"step {name!r} cannot follow {done[-1]!r}; order is {' -> '.join(STEP_ORDER)}")
        self.steps.append({"step": name, **payload})

    def step(self, name: str) -> Optional[dict]:
        return next((s for s in self.steps if s["step"] == name), None)

    def to_json(self) -> dict:
        return {"order": list(STEP_ORDER), "steps": self.steps}

    @classmethod
    def from_json(cls, obj: dict) -> "PreprocessReport":
        return cls(steps=list(obj["steps"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "PreprocessReport":
        return cls.from_json(json.loads(Path(path).read_text()))


def _report(report):
    return PreprocessReport() if report is None else report


# -- steps -------------------------------------------------------------------

def drop_high_missing_samples(data: MultiViewDataset, threshold: float = 1.0 / 3.0, views=None,
                              report: Optional[PreprocessReport] = None):
    """Remove samples missing more than ``threshold`` of the cells in ``views`` (default: all)."""
    if not 0.0 < threshold <= 1.0:
        raise InvalidArgumentError(f"threshold must lie in (0, 1], got {threshold}")
    report = _report(report)
    idx = range(data.M) if views is None else [_view_index(data, v) for v in views]
    block = np.vstack([data.views[m] for m in idx])
    frac = np.isnan(block).mean(axis=0)
    keep = ~(frac > threshold)
    dropped = {data.sample_ids[i]: float(frac[i]) for i in np.flatnonzero(~keep)}
    if not keep.any():
        raise DegenerateDataError("every sample exceeds the missingness threshold")
    report.record("drop_samples", threshold=threshold, views=[data.view_names[m] for m in idx], dropped=dropped)
    return _subset_samples(data, keep), report


def _view_index(data, v):
    if isinstance(v, str):
        if v not in data.view_names:
            raise InvalidArgumentError(f"unknown view {v!r}")
        return data.view_names.index(v)
    return int(v)


def _subset_samples(data, keep):
    return replace(
        data,
        views=[v[:, keep] for v in data.views],
        sample_ids=[s for s, k in zip(data.sample_ids, keep) if k],
        labels=None if data.labels is None else data.labels[keep],
        confounds=None if data.confounds is None else data.confounds[:, keep],
    )


def drop_high_missing(data: MultiViewDataset, threshold: float = 0.10, report: Optional[PreprocessReport] = None):
    """Remove features whose missing fraction is strictly greater than ``threshold``."""
    if not 0.0 < threshold <= 1.0:
        raise InvalidArgumentError(f"threshold must lie in (0, 1], got {threshold}")
    report = _report(report)
    views, names, dropped = [], [], []
    for m, (v, feats) in enumerate(zip(data.views, data.feature_names)):
        frac = np.isnan(v).mean(axis=1)
        keep = ~(frac > threshold)
        for j in np.flatnonzero(~keep):
            dropped.append({"view": data.view_names[m], "feature": feats[j], "missing_fraction": float(frac[j])})
        if not keep.any():
            raise DegenerateDataError(f"view {data.view_names[m]!r} loses all features at threshold {threshold}")
        views.append(v[keep])
        names.append([f for f, k in zip(feats, keep) if k])
    report.record("drop_features", threshold=threshold, dropped=dropped)
    return data.with_views(views, feature_names=names), report


def median_impute(data: MultiViewDataset, report: Optional[PreprocessReport] = None):
    """Fill missing cells with the median of the observed values of their feature."""
    report = _report(report)
    medians, counts = [], []
    views = []
    for m, (v, feats) in enumerate(zip(data.views, data.feature_names)):
        miss = np.isnan(v)
        n_miss = miss.sum(axis=1)
        if np.any(n_miss == v.shape[1]):
            bad = [feats[j] for j in np.flatnonzero(n_miss == v.shape[1])]
            raise ImputeError(f"view {data.view_names[m]!r}: no observed values for {bad[:10]}")
        med = np.zeros(v.shape[0])
        rows = np.flatnonzero(n_miss)
        if rows.size:
            med[rows] = np.nanmedian(v[rows], axis=1)
        medians.append({feats[j]: float(med[j]) for j in rows})
        counts.append({feats[j]: int(n_miss[j]) for j in rows})
        views.append(_fill(v, feats, medians[-1]))
    report.record("impute", medians=medians, counts=counts)
    return data.with_views(views), report


def _fill(v, feats, medians):
    out = v.copy()
    for j, f in enumerate(feats):
        if f in medians:
            row = out[j]
            row[np.isnan(row)] = medians[f]
    return out


def _design(confounds):
    C = np.asarray(confounds, dtype=float)
    return np.column_stack([np.ones(C.shape[1]), C.T])


def _dependent_columns(A, names):
    """Columns of ``A`` lying in the span of the columns before them."""
    dependent, basis = [], np.zeros((A.shape[0], 0))
    for j in range(A.shape[1]):
        col = A[:, j]
        if basis.shape[1]:
            coef, *_ = np.linalg.lstsq(basis, col, rcond=None)
            resid = col - basis @ coef
        else:
            resid = col
        if np.linalg.norm(resid) <= 1e-10 * max(1.0, np.linalg.norm(col)):
            dependent.append(names[j])
        else:
            basis = np.column_stack([basis, col])
    return dependent


def regress_confounds(data: MultiViewDataset, confounds=None, report: Optional[PreprocessReport] = None):
    """Replace every feature by its OLS residual on ``[1, confounds]``.

    ``confounds`` is ``(C, N)``; defaults to ``data.confounds``. Coefficients
    are estimated on the full sample.
    """
    report = _report(report)
    if confounds is None:
        confounds = data.confounds
    if confounds is None:
        raise InvalidArgumentError("no confounds supplied")
    C = np.atleast_2d(np.asarray(confounds, dtype=float))
    if C.shape[1] != data.N:
        raise InvalidArgumentError(f"confounds have {C.shape[1]} samples, data {data.N}")
    if not np.all(np.isfinite(C)):
        raise InvalidArgumentError("confounds must be finite")
    if data.has_missing():
        raise InvalidArgumentError("impute missing values before regressing confounds")
    names = ["intercept", *(data.confound_names or [f"c{i}" for i in range(C.shape[0])])[:C.shape[0]]]
    A = _design(C)
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise CollinearityError(f"confounds are collinear (with the intercept); dependent columns: "
                                f"{_dependent_columns(A, names)}")
    X = data.stacked()
    beta, *_ = np.linalg.lstsq(A, X.T, rcond=None)        # (C + 1, sum D)
    views = _residualize(data, A, beta)
    report.record("regress", confound_names=names, coefficients=beta.T.tolist())
    return data.with_views(views), report


def _residualize(data, A, beta):
    fitted = (A @ beta).T
    b = np.concatenate([[0], np.cumsum(data.D)])
    return [data.views[m] - fitted[b[m]:b[m + 1]] for m in range(data.M)]


def standardize(data: MultiViewDataset, ddof: int = 0, report: Optional[PreprocessReport] = None):
    """Centre every feature and scale it to unit standard deviation.

    ``ddof=0`` (default) uses the population standard deviation.
    """
    report = _report(report)
    if data.has_missing():
        raise InvalidArgumentError("impute missing values before standardising")
    means, sds, views = [], [], []
    for m, (v, feats) in enumerate(zip(data.views, data.feature_names)):
        mu = v.mean(axis=1)
        sd = v.std(axis=1, ddof=ddof)
        scale = np.sqrt(np.mean(v * v, axis=1))
        bad = np.flatnonzero(~(sd > 1e-12 * np.maximum(scale, 1e-300)))
        if bad.size:
            raise DegenerateDataError(f"view {data.view_names[m]!r}: zero variance in {[feats[j] for j in bad][:10]}")
        means.append(mu.tolist())
        sds.append(sd.tolist())
        views.append((v - mu[:, None]) / sd[:, None])
    report.record("standardize", ddof=ddof, means=means, sds=sds)
    return data.with_views(views), report


# -- chain and replay --------------------------------------------------------

def preprocess(data: MultiViewDataset, missing_threshold: float = 0.10, sample_threshold: Optional[float] = None,
               sample_views=None, regress: bool = True, ddof: int = 0):
    """Run the whole chain in its fixed order; returns ``(data', report)``.

    Confound regression runs when ``regress`` is set and the dataset carries
    confounds.
    """
    report = PreprocessReport()
    if sample_threshold is not None:
        data, _ = drop_high_missing_samples(data, sample_threshold, views=sample_views, report=report)
    data, _ = drop_high_missing(data, missing_threshold, report=report)
    data, _ = median_impute(data, report=report)
    if regress and data.confounds is not None:
        data, _ = regress_confounds(data, report=report)
    data, _ = standardize(data, ddof=ddof, report=report)
    return data, report


def replay(report: PreprocessReport, data: MultiViewDataset) -> MultiViewDataset:
    """Apply a recorded chain to raw ``data`` using the stored parameters only."""
    for s in report.steps:
        name = s["step"]
        if name == "drop_samples":
            keep = np.array([sid not in s["dropped"] for sid in data.sample_ids])
            data = _subset_samples(data, keep)
        elif name == "drop_features":
            gone = {(d["view"], d["feature"]) for d in s["dropped"]}
            views, names = [], []
            for vname, feats, v in zip(data.view_names, data.feature_names, data.views):
                keep = np.array([(vname, f) not in gone for f in feats], dtype=bool)
                views.append(v[keep])
                names.append([f for f, k in zip(feats, keep) if k])
            data = data.with_views(views, feature_names=names)
        elif name == "impute":
            views = [_fill(v, feats, med) for v, feats, med in zip(data.views, data.feature_names, s["medians"])]
            if any(np.isnan(v).any() for v in views):
                raise DataError("replay: data have missing cells the report never imputed")
            data = data.with_views(views)
        elif name == "regress":
            beta = np.asarray(s["coefficients"], dtype=float).T
            data = data.with_views(_residualize(data, _design(data.confounds), beta))
        elif name == "standardize":
            views = [(v - np.asarray(mu)[:, None]) / np.asarray(sd)[:, None]
                     for v, mu, sd in zip(data.views, s["means"], s["sds"])]
            data = data.with_views(views)
        else:
            raise InvalidArgumentError(f"unknown step {name!r} in report")
    return data
