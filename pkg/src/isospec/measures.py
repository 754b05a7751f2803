"""Pairwise isomorphism measures built on singular spectra.

* ``SVG``: squared Euclidean distance between the log singular values.
* ``COND_HM``: harmonic mean of the two condition numbers.
* ``ECOND_HM``: harmonic mean of the two effective condition numbers.

``GH`` and ``IS`` live in :mod:`isospec.baselines`; :func:`pairwise_matrix`
dispatches to them as well, so one call covers all five measures.
"""

from __future__ import annotations

import csv
import enum
import io
import itertools
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .embedio import EmbeddingSpace, mean_center
from .spectral import (
    SINGULAR_FLOOR,
    SingularSpectrumError,
    Spectrum,
    condition_number,
    effective_condition_number,
    singular_values,
)

logger = logging.getLogger(__name__)

__all__ = [
    "Measure",
    "PairScore",
    "FailedCell",
    "PairwiseResult",
    "harmonic_mean",
    "combine",
    "cond_hm",
    "econd_hm",
    "svg",
    "pairwise_matrix",
    "write_pair_scores_csv",
    "read_pair_scores_csv",
    "pair_scores_to_json",
]

#: SVG over the first 40 singular values, as used for lexicon induction.
BLI_SVG_TOP_K = 40


class Measure(str, enum.Enum):
    SVG = "SVG"
    COND_HM = "COND_HM"
    ECOND_HM = "ECOND_HM"
    GH = "GH"
    IS = "IS"

    @classmethod
    def parse(cls, name: str | Measure) -> Measure:
        if isinstance(name, Measure):
            return name
        key = name.strip().upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown measure {name!r}; choose from {', '.join(m.value for m in cls)}") from None


SPECTRAL_MEASURES = frozenset({Measure.SVG, Measure.COND_HM, Measure.ECOND_HM})


@dataclass(frozen=True)
class PairScore:
    """One measure value for an unordered pair of spaces.

    The pair is stored canonically with ``lang_a <= lang_b``.
    """

    lang_a: str
    lang_b: str
    measure: Measure
    value: float
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "measure", Measure.parse(self.measure))
        value = float(self.value)
        if not math.isfinite(value) or value < 0:
            raise ValueError(f"{self.measure.value} value must be finite and nonnegative, got {value}")
        object.__setattr__(self, "value", value)
        if self.lang_b < self.lang_a:
            a, b = self.lang_b, self.lang_a
            object.__setattr__(self, "lang_a", a)
            object.__setattr__(self, "lang_b", b)

    @property
    def key(self) -> tuple[str, str]:
        return (self.lang_a, self.lang_b)


@dataclass(frozen=True)
class FailedCell:
    lang_a: str
    lang_b: str
    measure: Measure
    reason: str


class PairwiseResult(NamedTuple):
    scores: list[PairScore]
    failed: list[FailedCell]


def harmonic_mean(a: float, b: float) -> float:
    """``2ab / (a + b)`` for positive ``a`` and ``b``."""
    if not (a > 0 and b > 0):
        raise ValueError(f"harmonic mean needs positive inputs, got {a} and {b}")
    return 2.0 * a * b / (a + b)


_COMBINERS = {
    "hm": harmonic_mean,
    "min": min,
    "max": max,
    "mean": lambda a, b: (a + b) / 2.0,
}


def combine(a: float, b: float, combiner: str = "hm") -> float:
    """Combine two per-space statistics; ``hm`` is the default, the rest are ablations."""
    try:
        fn = _COMBINERS[combiner]
    except KeyError:
        raise ValueError(f"unknown combiner {combiner!r}; choose from {sorted(_COMBINERS)}") from None
    return float(fn(a, b))


def cond_hm(spec_a: Spectrum, spec_b: Spectrum, combiner: str = "hm") -> PairScore:
    value = combine(condition_number(spec_a), condition_number(spec_b), combiner)
    params = {} if combiner == "hm" else {"combiner": combiner}
    return PairScore(spec_a.source_lang, spec_b.source_lang, Measure.COND_HM, value, params)


def econd_hm(spec_a: Spectrum, spec_b: Spectrum, combiner: str = "hm") -> PairScore:
    value = combine(effective_condition_number(spec_a), effective_condition_number(spec_b), combiner)
    params = {} if combiner == "hm" else {"combiner": combiner}
    return PairScore(spec_a.source_lang, spec_b.source_lang, Measure.ECOND_HM, value, params)


def _log_head(spec: Spectrum, k: int) -> np.ndarray:
    head = spec.sigma[:k]
    floor = SINGULAR_FLOOR * spec.sigma[0]
    if spec.sigma[0] <= 0 or (head <= floor).any():
        i = int(np.argmax(head <= floor))
        raise SingularSpectrumError(
            f"sigma_{i + 1} = {head[i]:.3g} of {spec.source_lang or 'spectrum'!r} is below the "
            f"floor {SINGULAR_FLOOR:g} * sigma_1; its logarithm is meaningless"
        )
    return np.log(head)


def svg(spec_a: Spectrum, spec_b: Spectrum, top_k: int | None = None) -> PairScore:
    """Singular value gap over the ``top_k`` largest values (all when ``None``).

    ``sum_i (ln s_i^a - ln s_i^b)^2`` for ``i = 1..k`` with
    ``k = min(top_k, d)``.
    """
    if top_k is not None and top_k < 1:
        raise ValueError(f"top_k must be positive, got {top_k}")
    d = min(spec_a.d, spec_b.d)
    if spec_a.d != spec_b.d and (top_k is None or top_k > d):
        warnings.warn(
            f"spectra have different lengths ({spec_a.d} vs {spec_b.d}); comparing the first {d}",
            stacklevel=2,
        )
    k = d if top_k is None else min(top_k, d)
    gap = _log_head(spec_a, k) - _log_head(spec_b, k)
    params = {} if top_k is None else {"svg_top_k": top_k}
    return PairScore(spec_a.source_lang, spec_b.source_lang, Measure.SVG, float(gap @ gap), params)


# -- batch computation -----------------------------------------------------


def _spectral_input(space: EmbeddingSpace, center: bool) -> EmbeddingSpace:
    if center and not space.mean_centered:
        return mean_center(space)
    return space


def pairwise_matrix(
    spaces: Sequence[EmbeddingSpace],
    measures: Iterable[Measure | str],
    *,
    svg_top_k: int | None = None,
    combiner: str = "hm",
    center: bool = True,
    is_top_n: int = 10000,
    is_k: int = 10,
    is_mass: float = 0.9,
    gh_sample: int = 5000,
    workers: int = 1,
    spectra: dict[str, Spectrum] | None = None,
) -> PairwiseResult:
    """Every requested measure for every unordered pair of ``spaces``.

    Spectra are computed once per space (or taken from ``spectra``, keyed by
    ``lang_id``).  Spectral measures see mean-centered copies when ``center``
    is set; GH and IS see the spaces as given, so pass length-normalized
    ones.  A failing cell is recorded in ``failed`` and does not abort the
    batch.  Output order is lexicographic by pair, then measure, whatever the
    worker count.
    """
    from . import baselines

    measures = sorted({Measure.parse(m) for m in measures}, key=lambda m: m.value)
    if len(spaces) < 2:
        raise ValueError("need at least two spaces")
    if not measures:
        raise ValueError("need at least one measure")
    ids = [s.lang_id for s in spaces]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate space ids: {sorted(i for i in set(ids) if ids.count(i) > 1)}")
    workers = max(1, int(workers))
    spectra = dict(spectra or {})

    def pool_map(fn, items):
        if workers == 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))

    spectrum_errors: dict[str, str] = {}
    if SPECTRAL_MEASURES.intersection(measures):
        todo = [s for s in spaces if s.lang_id not in spectra]

        def compute(space):
            try:
                return space.lang_id, singular_values(_spectral_input(space, center)), None
            except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                return space.lang_id, None, str(exc)

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for lang, spec, err in pool_map(compute, todo):
                if err is None:
                    spectra[lang] = spec
                else:
                    spectrum_errors[lang] = err

    # laplacian spectra / persistence diagrams are per-space too: cache them
    per_space: dict[tuple[Measure, str], object] = {}
    if Measure.IS in measures:
        laplacian = _guard(lambda s: baselines.space_laplacian(s, is_top_n, is_k, is_mass))
        for lang, item in zip(ids, pool_map(laplacian, spaces)):
            per_space[(Measure.IS, lang)] = item
    if Measure.GH in measures:
        for lang, item in zip(ids, pool_map(_guard(lambda s: baselines.space_diagram(s, gh_sample)), spaces)):
            per_space[(Measure.GH, lang)] = item

    pairs = sorted(tuple(sorted(p)) for p in itertools.combinations(ids, 2))
    cells = [(a, b, m) for a, b in pairs for m in measures]

    def score(cell):
        a, b, m = cell
        try:
            if m in SPECTRAL_MEASURES:
                for lang in (a, b):
                    if lang in spectrum_errors:
                        raise _CellError(f"spectrum of {lang!r}: {spectrum_errors[lang]}")
                sa, sb = spectra[a], spectra[b]
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    if m is Measure.SVG:
                        return svg(sa, sb, svg_top_k)
                    if m is Measure.COND_HM:
                        return cond_hm(sa, sb, combiner)
                    return econd_hm(sa, sb, combiner)
            ia, ib = per_space[(m, a)], per_space[(m, b)]
            for lang, item in ((a, ia), (b, ib)):
                if isinstance(item, _Failure):
                    raise _CellError(f"{m.value} input for {lang!r}: {item.reason}")
            if m is Measure.IS:
                value = baselines.isospectral_gap(ia, ib, is_mass)
                params = {"is_top_n": is_top_n, "is_k": is_k, "is_mass": is_mass}
            else:
                value = baselines.bottleneck_distance(ia, ib)
                params = {"gh_sample": gh_sample}
            return PairScore(a, b, m, value, params)
        except (_CellError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            return FailedCell(a, b, m, str(exc))

    results = pool_map(score, cells)
    scores = [r for r in results if isinstance(r, PairScore)]
    failed = [r for r in results if isinstance(r, FailedCell)]
    for f in failed:
        logger.warning("%s(%s, %s) failed: %s", f.measure.value, f.lang_a, f.lang_b, f.reason)
    return PairwiseResult(scores, failed)


class _CellError(Exception):
    pass


@dataclass(frozen=True)
class _Failure:
    reason: str


def _guard(fn):
    def wrapped(space):
        try:
            return fn(space)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            return _Failure(str(exc))

    return wrapped


# -- PairScore I/O -----------------------------------------------------------

CSV_FIELDS = ("lang_a", "lang_b", "measure", "value", "params_json")


def _params_json(params: dict) -> str:
    return json.dumps(params, sort_keys=True, separators=(",", ":"))


def write_pair_scores_csv(scores: Iterable[PairScore], fh: io.TextIOBase) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for s in scores:
        writer.writerow([s.lang_a, s.lang_b, s.measure.value, repr(s.value), _params_json(s.params)])


def read_pair_scores_csv(fh: io.TextIOBase) -> list[PairScore]:
    reader = csv.DictReader(fh)
    missing = set(CSV_FIELDS[:4]) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"pair-score CSV is missing columns: {sorted(missing)}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        try:
            params = json.loads(row["params_json"]) if row.get("params_json") else {}
            out.append(PairScore(row["lang_a"], row["lang_b"], row["measure"], float(row["value"]), params))
        except (ValueError, TypeError) as exc:
            raise ValueError(f"pair-score CSV line {lineno}: {exc}") from None
    return out


def pair_scores_to_json(scores: Iterable[PairScore]) -> str:
    rows = [
        {"lang_a": s.lang_a, "lang_b": s.lang_b, "measure": s.measure.value, "value": s.value, "params": s.params}
        for s in scores
    ]
    return json.dumps(rows, sort_keys=True, indent=1)


def pair_scores_from_json(text: str) -> list[PairScore]:
    return [PairScore(r["lang_a"], r["lang_b"], r["measure"], r["value"], r.get("params", {})) for r in json.loads(text)]
