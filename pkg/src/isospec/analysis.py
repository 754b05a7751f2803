"""Correlation and regression analyses of distance measures vs task scores.

Measure values and task scores are log-transformed before any correlation
(the relationship is closer to linear on that scale and the transform keeps
order).  Linguistic distances (PHY, TYP, GEO) enter untransformed.
Regression uses forward stepwise selection: a candidate enters only if its
coefficient's t-test p-value in the augmented model is below ``alpha``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import betainc

from .measures import PairScore

logger = logging.getLogger(__name__)

__all__ = [
    "JoinError",
    "PerfRow",
    "PerformanceTable",
    "RankDeficiencyError",
    "RegressionReport",
    "SelectionReport",
    "correlate_measures",
    "join_pairs",
    "log_transform",
    "ols",
    "pearson",
    "selection_analysis",
    "stepwise_regression",
    "t_two_sided_p",
]

LINGUISTIC = ("phy", "typ", "geo")


class RankDeficiencyError(ValueError):
    """The design matrix does not have full column rank."""

    def __init__(self, message: str, column: str | None = None):
        self.column = column
        super().__init__(message)


class JoinError(ValueError):
    """Pair scores and the performance table share no usable rows."""


# -- basic statistics ------------------------------------------------------------


def log_transform(values: Iterable[float], labels: Sequence[str] | None = None) -> np.ndarray:
    """Natural log, elementwise; every value must be positive."""
    x = np.asarray(list(values), dtype=np.float64)
    bad = np.flatnonzero(~(x > 0))
    if bad.size:
        i = int(bad[0])
        where = f" for {labels[i]}" if labels is not None else f" at position {i}"
        raise ValueError(f"cannot log-transform nonpositive value {x[i]!r}{where}")
    return np.log(x)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"pearson needs two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 3:
        raise ValueError(f"pearson needs at least 3 observations, got {x.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(xc @ xc)
    sy = math.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise ValueError("pearson is undefined for a zero-variance input")
    r = float(xc @ yc) / (sx * sy)
    return max(-1.0, min(1.0, r))


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided p-value of Student's t: ``I_{df/(df+t^2)}(df/2, 1/2)``."""
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


# -- regression ----------------------------------------------------------------


@dataclass
class RegressionReport:
    selected: list[str]
    beta: np.ndarray
    p_values: list[float]
    r_squared: float
    n_obs: int
    std_errors: np.ndarray = field(default_factory=lambda: np.empty(0))
    residual_ss: float = 0.0

    @property
    def r_hat(self) -> float:
        return math.sqrt(self.r_squared)

    def to_dict(self) -> dict:
        return {
            "selected": list(self.selected),
            "beta": [float(b) for b in self.beta],
            "std_errors": [float(s) for s in self.std_errors],
            "p_values": [float(p) for p in self.p_values],
            "r_squared": float(self.r_squared),
            "r_hat": float(self.r_hat),
            "n_obs": self.n_obs,
            "residual_ss": float(self.residual_ss),
        }


def _first_dependent_column(design: np.ndarray) -> int:
    for j in range(1, design.shape[1] + 1):
        if np.linalg.matrix_rank(design[:, :j]) < j:
            return j - 1
    return -1


def ols(design: np.ndarray, y: Sequence[float], names: Sequence[str] | None = None) -> RegressionReport:
    """Least squares on a design whose first column is the intercept.

    Each non-intercept coefficient gets a two-sided t-test p-value with
    ``n - p - 1`` degrees of freedom.
    """
    x = np.asarray(design, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, cols = x.shape
    p = cols - 1
    names = list(names) if names is not None else [f"x{j}" for j in range(1, cols)]
    if len(names) != p:
        raise ValueError(f"got {len(names)} names for {p} regressors")
    if y.shape != (n,):
        raise ValueError(f"response has shape {y.shape}, expected ({n},)")
    if n <= cols:
        raise ValueError(f"need more observations ({n}) than coefficients ({cols})")
    if np.linalg.matrix_rank(x) < cols:
        j = _first_dependent_column(x)
        label = "intercept" if j == 0 else names[j - 1]
        raise RankDeficiencyError(f"design matrix is rank deficient: column {label!r} is linearly dependent "
                                  "on the columns before it", label)

    q, r = np.linalg.qr(x)
    beta = solve_triangular(r, q.T @ y)
    resid = y - x @ beta
    rss = float(resid @ resid)
    yc = y - y.mean()
    tss = float(yc @ yc)
    if tss == 0:
        raise ValueError("response has zero variance")
    r2 = min(1.0, max(0.0, 1.0 - rss / tss))
    df = n - cols
    sigma2 = rss / df
    r_inv = solve_triangular(r, np.eye(cols))
    se = np.sqrt(sigma2 * np.sum(r_inv**2, axis=1))
    p_values = []
    for j in range(1, cols):
        if se[j] == 0:
            p_values.append(0.0 if beta[j] != 0 else 1.0)
        else:
            p_values.append(t_two_sided_p(beta[j] / se[j], df))
    return RegressionReport(names, beta, p_values, r2, n, se, rss)


def _intercept_only(y: np.ndarray) -> RegressionReport:
    yc = y - y.mean()
    return RegressionReport([], np.array([y.mean()]), [], 0.0, y.size, np.empty(0), float(yc @ yc))


def _check_candidates(candidates: Mapping[str, Sequence[float]], n: int) -> dict[str, np.ndarray]:
    cols = {}
    for name, values in candidates.items():
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (n,):
            raise ValueError(f"candidate {name!r} has {v.size} values, expected {n}")
        if not np.isfinite(v).all():
            raise ValueError(f"candidate {name!r} contains non-finite values")
        if np.ptp(v) == 0:
            raise RankDeficiencyError(f"candidate {name!r} is constant and collinear with the intercept", name)
        cols[name] = v
    return cols


def stepwise_regression(
    candidates: Mapping[str, Sequence[float]],
    y: Sequence[float],
    alpha: float = 0.01,
) -> RegressionReport:
    """Forward selection: repeatedly add the candidate with the smallest entry
    p-value while that p-value is below ``alpha``.  No backward step.

    Selection also stops once the model fits exactly, since a further
    coefficient's t-statistic would be a ratio of round-off terms.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if n < 3:
        raise ValueError(f"stepwise regression needs at least 3 observations, got {n}")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    cols = _check_candidates(candidates, n)
    yc = y - y.mean()
    tss = float(yc @ yc)

    selected: list[str] = []
    report = _intercept_only(y)
    remaining = list(cols)
    while remaining and len(selected) + 2 < n:
        if report.residual_ss <= 1e-24 * n * max(tss, 1e-300):
            break
        best = None
        for name in remaining:
            trial = selected + [name]
            design = np.column_stack([np.ones(n)] + [cols[c] for c in trial])
            try:
                fit = ols(design, y, trial)
            except RankDeficiencyError:
                continue
            p = fit.p_values[-1]
            if best is None or p < best[0]:
                best = (p, name, fit)
        if best is None or not best[0] < alpha:
            break
        _, name, report = best
        selected.append(name)
        remaining.remove(name)
        logger.debug("stepwise: added %s (p=%.3g, R^2=%.4f)", name, best[0], report.r_squared)
    return report


# -- performance tables ------------------------------------------------------


@dataclass(frozen=True)
class PerfRow:
    source: str
    target: str
    task: str
    score: float
    distances: Mapping[str, float] = field(default_factory=dict)


class PerformanceTable:
    """Task scores keyed by (source, target, task), with optional PHY/TYP/GEO."""

    def __init__(self, rows: Iterable[PerfRow]):
        self.rows: list[PerfRow] = []
        seen = set()
        for row in rows:
            key = (row.source, row.target, row.task)
            if key in seen:
                raise ValueError(f"duplicate performance row {key}")
            if not math.isfinite(row.score):
                raise ValueError(f"non-finite score for {key}")
            for name, value in row.distances.items():
                if not (math.isfinite(value) and value >= 0):
                    raise ValueError(f"{name} distance for {key} must be finite and >= 0, got {value}")
            seen.add(key)
            self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def tasks(self) -> list[str]:
        return sorted({r.task for r in self.rows})

    @property
    def distance_columns(self) -> list[str]:
        present = set()
        for r in self.rows:
            present.update(r.distances)
        return [c for c in LINGUISTIC if c in present]

    def filter(self, task: str | None) -> PerformanceTable:
        if task is None:
            return self
        return PerformanceTable(r for r in self.rows if r.task == task)

    @classmethod
    def from_csv(cls, fh: io.TextIOBase) -> PerformanceTable:
        reader = csv.DictReader(fh)
        fields = [f.strip().lower() for f in reader.fieldnames or ()]
        required = ["source", "target", "task", "score"]
        if fields[:4] != required:
            raise ValueError(f"performance CSV header must start with {','.join(required)}, got {','.join(fields)}")
        extra = [f for f in fields[4:] if f not in LINGUISTIC]
        if extra:
            raise ValueError(f"unknown performance CSV columns: {extra}")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            rec = {k.strip().lower(): (v or "").strip() for k, v in raw.items() if k is not None}
            try:
                distances = {c: float(rec[c]) for c in LINGUISTIC if rec.get(c, "") != ""}
                rows.append(PerfRow(rec["source"], rec["target"], rec["task"], float(rec["score"]), distances))
            except ValueError as exc:
                raise ValueError(f"performance CSV line {lineno}: {exc}") from None
        return cls(rows)

    def to_csv(self, fh: io.TextIOBase) -> None:
        cols = self.distance_columns
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["source", "target", "task", "score", *cols])
        for r in self.rows:
            writer.writerow([r.source, r.target, r.task, repr(r.score),
                             *(repr(r.distances[c]) if c in r.distances else "" for c in cols)])


@dataclass
class JoinedRow:
    source: str
    target: str
    score: float
    measures: dict[str, float]
    distances: Mapping[str, float]


@dataclass
class Join:
    rows: list[JoinedRow]
    unmatched: list[tuple[str, str]]


def join_pairs(pairs: Iterable[PairScore], perf: PerformanceTable, task: str | None = None) -> Join:
    """Attach each directed performance row to its unordered pair's measure values."""
    by_pair: dict[tuple[str, str], dict[str, float]] = defaultdict(dict)
    for p in pairs:
        by_pair[p.key][p.measure.value] = p.value
    rows, unmatched = [], []
    for r in perf.filter(task).rows:
        key = tuple(sorted((r.source, r.target)))
        if key in by_pair and r.source != r.target:
            rows.append(JoinedRow(r.source, r.target, r.score, by_pair[key], r.distances))
        else:
            unmatched.append((r.source, r.target))
    return Join(rows, unmatched)


def _empty_join_error(join: Join, pairs: Sequence[PairScore]) -> JoinError:
    sample = ", ".join(f"{s}->{t}" for s, t in join.unmatched[:5])
    pair_sample = ", ".join(f"{p.lang_a}|{p.lang_b}" for p in list(pairs)[:5])
    return JoinError(f"0 joined rows; unmatched performance keys (sample): {sample or 'none'}; "
                     f"pair keys (sample): {pair_sample or 'none'}")


def _regressor_values(rows: Sequence[JoinedRow], name: str) -> np.ndarray:
    """Log measure values, or raw linguistic distances."""
    if name in LINGUISTIC:
        return np.array([r.distances[name] for r in rows])
    labels = [f"{name}({r.source},{r.target})" for r in rows]
    return log_transform([r.measures[name] for r in rows], labels)


def _rows_with(rows: Sequence[JoinedRow], name: str) -> list[JoinedRow]:
    if name in LINGUISTIC:
        return [r for r in rows if name in r.distances]
    return [r for r in rows if name in r.measures]


def _log_scores(rows: Sequence[JoinedRow]) -> np.ndarray:
    return log_transform([r.score for r in rows], [f"score({r.source},{r.target})" for r in rows])


@dataclass
class Correlation:
    measure: str
    r: float
    n: int


@dataclass
class CorrelationTable:
    correlations: list[Correlation]
    unmatched: list[tuple[str, str]]
    n_joined: int

    def as_dict(self) -> dict[str, float]:
        return {c.measure: c.r for c in self.correlations}


def correlate_measures(
    pairs: Sequence[PairScore],
    perf: PerformanceTable,
    task: str | None = None,
    measures: Sequence[str] | None = None,
) -> CorrelationTable:
    """Pearson r between log measure values and log task scores, per measure."""
    pairs = list(pairs)
    join = join_pairs(pairs, perf, task)
    if not join.rows:
        raise _empty_join_error(join, pairs)
    if measures is None:
        measures = sorted({p.measure.value for p in pairs})
    out = []
    for name in measures:
        rows = _rows_with(join.rows, name)
        if len(rows) < 3:
            logger.warning("%s: only %d joined rows, skipping", name, len(rows))
            continue
        out.append(Correlation(name, pearson(_regressor_values(rows, name), _log_scores(rows)), len(rows)))
    return CorrelationTable(out, join.unmatched, len(join.rows))


def regress(
    pairs: Sequence[PairScore],
    perf: PerformanceTable,
    candidates: Sequence[str],
    task: str | None = None,
    alpha: float = 0.01,
) -> RegressionReport:
    """Stepwise regression of log task scores on the named candidate columns."""
    pairs = list(pairs)
    join = join_pairs(pairs, perf, task)
    if not join.rows:
        raise _empty_join_error(join, pairs)
    rows = join.rows
    for name in candidates:
        rows = _rows_with(rows, name)
    if len(rows) < 3:
        raise JoinError(f"only {len(rows)} rows have every candidate column {list(candidates)}")
    cols = {name: _regressor_values(rows, name) for name in candidates}
    return stepwise_regression(cols, _log_scores(rows), alpha)


# -- selection analyses --------------------------------------------------------


@dataclass
class SelectionReport:
    mode: str
    per_group: dict[str, dict[str, float]]
    group_sizes: dict[str, int]
    mean_correlation: dict[str, float]
    win_pct: dict[str, float]
    multi_r_hat: float | None
    multi_regressors: list[str]
    skipped_groups: dict[str, int]

    def to_dict(self) -> dict:
        return asdict(self)


def selection_analysis(
    pairs: Sequence[PairScore],
    perf: PerformanceTable,
    mode: str,
    regressors: Sequence[str],
    task: str | None = None,
    min_group: int = 3,
) -> SelectionReport:
    """Per-language selection study.

    ``source_selection`` fixes the target language and correlates over the
    candidate sources (``target_selection`` the reverse).  For each group the
    Pearson r of every regressor is computed; the report gives the mean r per
    regressor, the share of groups each regressor wins by largest ``|r|``
    (ties split evenly), and the mean over groups of ``r_hat`` from a plain
    multiple regression of the best isomorphism measure plus the available
    linguistic distances.
    """
    if mode not in ("source_selection", "target_selection"):
        raise ValueError(f"mode must be source_selection or target_selection, got {mode!r}")
    if not regressors:
        raise ValueError("need at least one regressor")
    pairs = list(pairs)
    join = join_pairs(pairs, perf, task)
    if not join.rows:
        raise _empty_join_error(join, pairs)

    groups: dict[str, list[JoinedRow]] = defaultdict(list)
    for r in join.rows:
        groups[r.target if mode == "source_selection" else r.source].append(r)

    per_group: dict[str, dict[str, float]] = {}
    sizes: dict[str, int] = {}
    skipped: dict[str, int] = {}
    for lang in sorted(groups):
        rows = groups[lang]
        usable = rows
        for name in regressors:
            usable = _rows_with(usable, name)
        if len(usable) < min_group:
            skipped[lang] = len(usable)
            continue
        y = _log_scores(usable)
        corr = {}
        for name in regressors:
            try:
                corr[name] = pearson(_regressor_values(usable, name), y)
            except ValueError as exc:
                logger.warning("group %s, %s: %s", lang, name, exc)
        if corr:
            per_group[lang] = corr
            sizes[lang] = len(usable)
        else:
            skipped[lang] = len(usable)
    if not per_group:
        raise JoinError(f"no usable groups: every group has fewer than {min_group} complete pairs")

    mean_r = {}
    wins = {name: 0.0 for name in regressors}
    for name in regressors:
        vals = [g[name] for g in per_group.values() if name in g]
        if vals:
            mean_r[name] = float(np.mean(vals))
    for corr in per_group.values():
        top = max(abs(v) for v in corr.values())
        leaders = [k for k, v in corr.items() if abs(v) == top]
        for k in leaders:
            wins[k] += 1.0 / len(leaders)
    win_pct = {k: 100.0 * v / len(per_group) for k, v in wins.items()}

    iso = [m for m in regressors if m not in LINGUISTIC and m in mean_r]
    multi_r_hat, multi_regs = None, []
    if iso:
        best = max(iso, key=lambda m: (abs(mean_r[m]), m))
        multi_regs = [best] + [c for c in LINGUISTIC if c in regressors]
        r_hats = []
        for lang in per_group:
            rows = groups[lang]
            for name in multi_regs:
                rows = _rows_with(rows, name)
            if len(rows) <= len(multi_regs) + 1:
                continue
            design = np.column_stack([np.ones(len(rows))] + [_regressor_values(rows, c) for c in multi_regs])
            try:
                r_hats.append(ols(design, _log_scores(rows), multi_regs).r_hat)
            except ValueError as exc:
                logger.warning("group %s multiple regression: %s", lang, exc)
        if r_hats:
            multi_r_hat = float(np.mean(r_hats))

    return SelectionReport(mode, per_group, sizes, mean_r, win_pct, multi_r_hat, multi_regs, skipped)


def report_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1)
