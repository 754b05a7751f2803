"""Command-line interface: ``isospec {stats,distance,correlate,regress,select}``.

Exit codes: 0 success, 1 partial failure, 2 input error, 3 internal error.
Data goes to stdout (or ``--output``); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .analysis import (
    LINGUISTIC,
    JoinError,
    PerformanceTable,
    RegressionReport,
    correlate_measures,
    join_pairs,
    log_transform,
    regress,
    selection_analysis,
)
from .config import ConfigError, RunConfig, env_overrides, parse_config_text
from .embedio import EmbeddingFormatError, EmbeddingSpace, ZeroNormError, lang_id_from_path, load_embeddings, preprocess
from .measures import (
    SPECTRAL_MEASURES,
    Measure,
    PairScore,
    pair_scores_from_json,
    pair_scores_to_json,
    pairwise_matrix,
    read_pair_scores_csv,
    write_pair_scores_csv,
)
from .plot import scatter_svg
from .spectral import SingularSpectrumError, Spectrum, singular_values, spectrum_stats

logger = logging.getLogger("isospec")

EXIT_OK, EXIT_PARTIAL, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3

# Column order for regression candidates, mirroring the usual table layout.
CANDIDATE_ORDER = ("SVG", "COND_HM", "ECOND_HM", "GH", "IS", "phy", "typ", "geo")


class InputError(Exception):
    """Bad input: unreadable file, malformed table, empty join, ..."""


# -- argument parsing -------------------------------------------------------


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="isospec", description="Spectral isomorphism measures for embedding spaces.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file (flags override it)")
    common.add_argument("--format", choices=("csv", "json", "text"), default=S)
    common.add_argument("-o", "--output", default=S, help="write results here instead of stdout")
    common.add_argument("--workers", type=int, default=S, help="worker threads (default: CPU count)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    loading = argparse.ArgumentParser(add_help=False)
    loading.add_argument("inputs", nargs="*", default=S, help="embedding files; 'lang=path' sets the id")
    loading.add_argument("--limit", type=int, default=S, help="keep the N most frequent words (default 200000)")
    loading.add_argument("--expect-dim", type=int, default=S)
    loading.add_argument("--no-normalize", dest="normalize", action="store_false", default=S)
    loading.add_argument("--no-center", dest="center", action="store_false", default=S)

    tables = argparse.ArgumentParser(add_help=False)
    tables.add_argument("--pairs", default=S, help="pair-score CSV (or .json) from 'distance'")
    tables.add_argument("--perf", default=S, help="performance CSV: source,target,task,score[,phy,typ,geo]")
    tables.add_argument("--task", default=S, help="only use rows of this task")

    sub.add_parser("stats", parents=[common, loading], help="per-space spectrum statistics")

    p = sub.add_parser("distance", parents=[common, loading], help="pairwise isomorphism measures")
    p.add_argument("--measures", type=_csv_list, default=S, help="comma list of svg,cond_hm,econd_hm,gh,is or 'all'")
    p.add_argument("--svg-top-k", type=int, default=S, help="SVG over the first K singular values (40 for BLI)")
    p.add_argument("--combiner", choices=("hm", "min", "max", "mean"), default=S)
    p.add_argument("--is-top-n", type=int, default=S)
    p.add_argument("--is-k", type=int, default=S)
    p.add_argument("--is-mass", type=float, default=S)
    p.add_argument("--gh-sample", type=int, default=S)
    p.add_argument("--cache-dir", default=S, help="spectra cache directory")
    p.add_argument("--no-cache", dest="cache", action="store_false", default=S)

    p = sub.add_parser("correlate", parents=[common, tables], help="Pearson r of log measures vs log scores")
    p.add_argument("--measures", type=_csv_list, default=S)
    p.add_argument("--plot", default=S, help="write an SVG scatter plot here")
    p.add_argument("--plot-measure", default=S)

    p = sub.add_parser("regress", parents=[common, tables], help="forward stepwise regression")
    p.add_argument("--candidates", type=_csv_list, default=S)
    p.add_argument("--alpha", type=float, default=S)

    p = sub.add_parser("select", parents=[common, tables], help="source/target language selection analysis")
    p.add_argument("--mode", choices=("source", "target", "source_selection", "target_selection"), default=S)
    p.add_argument("--regressors", dest="candidates", type=_csv_list, default=S)
    p.add_argument("--min-group", type=int, default=S)
    return parser


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read config file {args.config}: {exc.strerror or exc}") from None
        cfg = cfg.updated(parse_config_text(text))
    cfg = cfg.updated(env_overrides(environ))
    flags = {k: tuple(v) if isinstance(v, list) else v for k, v in vars(args).items()
             if k not in ("config", "verbose")}
    if flags.get("mode") in ("source", "target"):
        flags["mode"] += "_selection"
    cfg = cfg.updated(flags)
    cfg.validate()
    return cfg


# -- output helpers ----------------------------------------------------------


class _Sink:
    def __init__(self, path: str | None):
        self.path = path

    def __enter__(self):
        self.fh = open(self.path, "w", encoding="utf-8", newline="\n") if self.path else io.StringIO()
        return self.fh

    def __exit__(self, *exc):
        if self.path:
            self.fh.close()
        elif exc[0] is None:
            sys.stdout.write(self.fh.getvalue())
            sys.stdout.flush()


def _error(cfg_format: str, kind: str, message: str) -> None:
    if cfg_format == "json":
        print(json.dumps({"level": "error", "kind": kind, "message": message}), file=sys.stderr)
    else:
        print(f"isospec: error: {message}", file=sys.stderr)


def _warn(message: str) -> None:
    print(f"isospec: warning: {message}", file=sys.stderr)


def _num(x: float | None) -> str:
    return "" if x is None else repr(float(x))


# -- loading -----------------------------------------------------------------


def _split_input(spec: str) -> tuple[str, str]:
    if "=" in spec and not Path(spec).exists():
        lang, path = spec.split("=", 1)
        return lang, path
    return lang_id_from_path(spec), spec


def _load(spec: str, cfg: RunConfig) -> EmbeddingSpace:
    lang, path = _split_input(spec)
    try:
        return load_embeddings(path, limit=cfg.limit, expect_dim=cfg.expect_dim, lang_id=lang)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not UTF-8 text ({exc.reason})") from None
    except EmbeddingFormatError as exc:
        raise InputError(str(exc)) from None


def _prepared(space: EmbeddingSpace, cfg: RunConfig, center: bool) -> EmbeddingSpace:
    try:
        return preprocess(space, normalize=cfg.normalize, center=center and cfg.center)
    except ZeroNormError as exc:
        raise InputError(f"{space.lang_id}: {exc}") from None


def _pool_map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- stats -------------------------------------------------------------------


def cmd_stats(cfg: RunConfig) -> int:
    if not cfg.inputs:
        raise InputError("stats needs at least one embedding file")

    def one(spec):
        space = _prepared(_load(spec, cfg), cfg, center=True)
        sigma = singular_values(space, method="auto") if space.mean_centered else _quiet_sv(space)
        row = {"lang": space.lang_id, "n": space.n, "d": space.d, "duplicates_skipped": space.duplicates_skipped}
        try:
            st = spectrum_stats(sigma)
            row.update(entropy=st.entropy, erank=st.erank, rank=st.rank, kappa=st.kappa, kappa_ecn=st.kappa_ecn)
            row["error"] = ""
        except SingularSpectrumError as exc:
            row.update(entropy=None, erank=None, rank=None, kappa=None, kappa_ecn=None, error=str(exc))
        row["sigma_top10"] = [float(s) for s in sigma.sigma[:10]]
        return row

    rows = _pool_map(one, list(cfg.inputs), cfg.workers)
    with _Sink(cfg.output) as out:
        if cfg.format == "json":
            out.write(json.dumps(rows, indent=1) + "\n")
        elif cfg.format == "text":
            for r in rows:
                out.write(f"{r['lang']}: n={r['n']} d={r['d']} H={_fmt3(r['entropy'])} erank={r['erank']} "
                          f"kappa={_fmt3(r['kappa'])} kappa_ecn={_fmt3(r['kappa_ecn'])}\n")
        else:
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow(["lang", "n", "d", "entropy", "erank", "rank", "kappa", "kappa_ecn",
                             *(f"sigma_{i}" for i in range(1, 11)), "error"])
            for r in rows:
                top = r["sigma_top10"] + [None] * (10 - len(r["sigma_top10"]))
                writer.writerow([r["lang"], r["n"], r["d"], _num(r["entropy"]), r["erank"] or "", r["rank"] or "",
                                 _num(r["kappa"]), _num(r["kappa_ecn"]), *(_num(s) for s in top), r["error"]])
    failed = [r for r in rows if r["error"]]
    for r in failed:
        _warn(f"{r['lang']}: {r['error']}")
    return EXIT_PARTIAL if failed else EXIT_OK


def _quiet_sv(space):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return singular_values(space)


def _fmt3(x) -> str:
    return "nan" if x is None else f"{x:.3f}"


# -- distance ----------------------------------------------------------------


def _default_cache_dir() -> Path:
    base = os.environ.get("XDG_CACHE_HOME") or os.path.join(os.path.expanduser("~"), ".cache")
    return Path(base) / "isospec"


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _cache_key(path: str, cfg: RunConfig) -> str:
    params = f"limit={cfg.limit};normalize={cfg.normalize};center={cfg.center};v=1"
    return hashlib.sha256((_file_digest(path) + "|" + params).encode()).hexdigest()


def _cached_spectrum(cache_dir: Path, key: str, lang: str) -> Spectrum | None:
    try:
        spec = Spectrum.from_json((cache_dir / f"{key}.json").read_text(encoding="utf-8"))
    except (OSError, ValueError, KeyError):
        return None
    return Spectrum(spec.sigma, lang)


def _store_spectrum(cache_dir: Path, key: str, spec: Spectrum) -> None:
    try:
        cache_dir.mkdir(parents=True, exist_ok=True)
        tmp = cache_dir / f"{key}.json.tmp{os.getpid()}"
        tmp.write_text(spec.to_json() + "\n", encoding="utf-8")
        os.replace(tmp, cache_dir / f"{key}.json")
    except OSError as exc:
        logger.warning("could not write spectra cache: %s", exc)


def _parse_measures(names: Sequence[str]) -> list[Measure]:
    if any(n.lower() == "all" for n in names):
        return list(Measure)
    try:
        return sorted({Measure.parse(n) for n in names}, key=lambda m: m.value)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def cmd_distance(cfg: RunConfig) -> int:
    measures = _parse_measures(cfg.measures)
    if len(cfg.inputs) < 2:
        raise InputError("distance needs at least two embedding files")
    if not measures:
        raise InputError("no measures requested")
    specs = [_split_input(s) for s in cfg.inputs]
    langs = [lang for lang, _ in specs]
    if len(set(langs)) != len(langs):
        raise InputError(f"duplicate space ids {langs}; use lang=path to disambiguate")
    for lang, path in specs:
        if not os.path.isfile(path):
            raise InputError(f"{path}: no such file")

    spectral = bool(SPECTRAL_MEASURES.intersection(measures))
    needs_space = any(m not in SPECTRAL_MEASURES for m in measures)
    cache_dir = Path(cfg.cache_dir) if cfg.cache_dir else _default_cache_dir()
    spectra: dict[str, Spectrum] = {}
    keys: dict[str, str] = {}
    if spectral and cfg.cache:
        for lang, path in specs:
            keys[lang] = _cache_key(path, cfg)
            hit = _cached_spectrum(cache_dir, keys[lang], lang)
            if hit is not None:
                spectra[lang] = hit

    to_load = [f"{lang}={path}" for lang, path in specs if needs_space or lang not in spectra]
    loaded = _pool_map(lambda s: _prepared(_load(s, cfg), cfg, center=False), to_load, cfg.workers)
    by_lang = {s.lang_id: s for s in loaded}

    if spectral:
        missing = [by_lang[lang] for lang in langs if lang not in spectra]

        def spectrum_of(space):
            centered = _prepared(space, cfg, center=True)
            return space.lang_id, _quiet_sv(centered)

        for lang, spec in _pool_map(spectrum_of, missing, cfg.workers):
            spectra[lang] = spec
            if cfg.cache:
                _store_spectrum(cache_dir, keys[lang], spec)

    # spaces whose spectra came from the cache and are not otherwise needed get
    # a 1x1 stand-in; pairwise_matrix only reads their ids
    spaces = [by_lang.get(lang) or EmbeddingSpace(lang, ("_",), np.ones((1, 1))) for lang in langs]
    result = pairwise_matrix(
        spaces,
        measures,
        svg_top_k=cfg.svg_top_k,
        combiner=cfg.combiner,
        center=cfg.center,
        is_top_n=cfg.is_top_n,
        is_k=cfg.is_k,
        is_mass=cfg.is_mass,
        gh_sample=cfg.gh_sample,
        workers=cfg.workers,
        spectra=spectra,
    )
    with _Sink(cfg.output) as out:
        if cfg.format == "json":
            out.write(pair_scores_to_json(result.scores) + "\n")
        elif cfg.format == "text":
            for s in result.scores:
                out.write(f"{s.lang_a}\t{s.lang_b}\t{s.measure.value}\t{s.value:.6g}\n")
        else:
            write_pair_scores_csv(result.scores, out)
    for f in result.failed:
        _error(cfg.format, "failed_cell", f"{f.measure.value}({f.lang_a}, {f.lang_b}): {f.reason}")
    if result.failed:
        total = len(result.failed) + len(result.scores)
        _warn(f"{len(result.failed)} of {total} cells failed")
        return EXIT_PARTIAL
    return EXIT_OK


# -- table-driven subcommands -----------------------------------------------------


def _read_pairs(path: str | None) -> list[PairScore]:
    if not path:
        raise InputError("--pairs is required")
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            if path.endswith(".json"):
                return pair_scores_from_json(fh.read())
            return read_pair_scores_csv(fh)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _read_perf(path: str | None) -> PerformanceTable:
    if not path:
        raise InputError("--perf is required")
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return PerformanceTable.from_csv(fh)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def cmd_correlate(cfg: RunConfig) -> int:
    pairs, perf = _read_pairs(cfg.pairs), _read_perf(cfg.perf)
    measures = [Measure.parse(m).value if m.lower() not in LINGUISTIC else m.lower() for m in cfg.measures] \
        if cfg.measures != RunConfig().measures else None
    table = correlate_measures(pairs, perf, cfg.task, measures)
    if table.unmatched:
        _warn(f"{len(table.unmatched)} performance rows had no pair score")
    with _Sink(cfg.output) as out:
        if cfg.format == "json":
            body = {"n_joined": table.n_joined, "unmatched": len(table.unmatched),
                    "correlations": [{"measure": c.measure, "r": c.r, "n": c.n} for c in table.correlations]}
            out.write(json.dumps(body, indent=1) + "\n")
        elif cfg.format == "text":
            for c in table.correlations:
                out.write(f"{c.measure}: r = {c.r:.3f} (n={c.n})\n")
        else:
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow(["measure", "r", "n"])
            for c in table.correlations:
                writer.writerow([c.measure, repr(c.r), c.n])

    if cfg.plot:
        if not table.correlations:
            raise InputError("nothing to plot: no measure had enough joined rows")
        name = cfg.plot_measure or table.correlations[0].measure
        if name.lower() not in LINGUISTIC:
            name = Measure.parse(name).value
        match = [c for c in table.correlations if c.measure == name]
        if not match:
            raise InputError(f"cannot plot {name}: not among the correlated measures")
        rows = [r for r in join_pairs(pairs, perf, cfg.task).rows if name in r.measures]
        x = log_transform([r.measures[name] for r in rows])
        y = log_transform([r.score for r in rows])
        svg_text = scatter_svg(x, y, f"log {name}", "log score", r=match[0].r,
                               title=cfg.task or None)
        Path(cfg.plot).write_text(svg_text, encoding="utf-8")
    return EXIT_OK


def _compress(indices: Sequence[int]) -> str:
    """[1, 3, 6, 7, 8] -> '1,3,6-8'."""
    out, run = [], []
    for i in sorted(indices):
        if run and i == run[-1] + 1:
            run.append(i)
            continue
        if run:
            out.append(str(run[0]) if len(run) == 1 else f"{run[0]}-{run[-1]}")
        run = [i]
    if run:
        out.append(str(run[0]) if len(run) == 1 else f"{run[0]}-{run[-1]}")
    return ",".join(out)


def annotation(report: RegressionReport, candidates: Sequence[str]) -> str:
    """``0.910^{1,3,6-8}``: r_hat plus the 1-based indices of the selected candidates."""
    r = f"{report.r_hat:.3f}"
    idx = [candidates.index(s) + 1 for s in report.selected]
    return r + (f"^{{{_compress(idx)}}}" if idx else "")


def _default_candidates(pairs: Sequence[PairScore], perf: PerformanceTable) -> list[str]:
    present = {p.measure.value for p in pairs} | set(perf.distance_columns)
    return [c for c in CANDIDATE_ORDER if c in present]


def _normalize_names(names: Sequence[str]) -> list[str]:
    out = []
    for n in names:
        out.append(n.lower() if n.lower() in LINGUISTIC else Measure.parse(n).value)
    return out


def cmd_regress(cfg: RunConfig) -> int:
    pairs, perf = _read_pairs(cfg.pairs), _read_perf(cfg.perf)
    candidates = _normalize_names(cfg.candidates) if cfg.candidates else _default_candidates(pairs, perf)
    if not candidates:
        raise InputError("no regression candidates")
    report = regress(pairs, perf, candidates, cfg.task, cfg.alpha)
    note = annotation(report, candidates)
    with _Sink(cfg.output) as out:
        if cfg.format == "json":
            body = report.to_dict()
            body.update(candidates=candidates, annotation=note, alpha=cfg.alpha)
            out.write(json.dumps(body, indent=1) + "\n")
        elif cfg.format == "text":
            out.write(f"r_hat = {note}\n")
            for i, name in enumerate(candidates, start=1):
                mark = "*" if name in report.selected else " "
                out.write(f" {mark} {i}: {name}\n")
        else:
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow(["term", "candidate_index", "beta", "std_error", "p_value", "r_squared", "r_hat", "n_obs"])
            terms = ["(intercept)"] + report.selected
            for j, term in enumerate(terms):
                idx = "" if j == 0 else candidates.index(term) + 1
                se = report.std_errors[j] if j < len(report.std_errors) else None
                p = report.p_values[j - 1] if j else None
                writer.writerow([term, idx, repr(float(report.beta[j])), _num(se), _num(p),
                                 repr(report.r_squared), repr(report.r_hat), report.n_obs])
    print(f"r_hat = {note} ({', '.join(report.selected) or 'intercept only'})", file=sys.stderr)
    return EXIT_OK


def cmd_select(cfg: RunConfig) -> int:
    pairs, perf = _read_pairs(cfg.pairs), _read_perf(cfg.perf)
    regressors = _normalize_names(cfg.candidates) if cfg.candidates else _default_candidates(pairs, perf)
    report = selection_analysis(pairs, perf, cfg.mode, regressors, cfg.task, cfg.min_group)
    for lang, size in report.skipped_groups.items():
        _warn(f"group {lang} skipped: {size} usable pairs < {cfg.min_group}")
    with _Sink(cfg.output) as out:
        if cfg.format == "json":
            out.write(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
        elif cfg.format == "text":
            out.write(f"{cfg.mode}: {len(report.per_group)} groups\n")
            for name in regressors:
                if name in report.mean_correlation:
                    out.write(f"  {name}: mean r = {report.mean_correlation[name]:.3f}"
                              f"^{report.win_pct[name]:.0f}%\n")
            if report.multi_r_hat is not None:
                out.write(f"  r_hat ({'+'.join(report.multi_regressors)}) = {report.multi_r_hat:.3f}\n")
        else:
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow(["section", "group", "regressor", "value"])
            for name in regressors:
                if name in report.mean_correlation:
                    writer.writerow(["mean_r", "", name, repr(report.mean_correlation[name])])
            for name in regressors:
                writer.writerow(["win_pct", "", name, repr(report.win_pct[name])])
            writer.writerow(["multi_r_hat", "", "+".join(report.multi_regressors), _num(report.multi_r_hat)])
            for lang, corr in report.per_group.items():
                for name in regressors:
                    if name in corr:
                        writer.writerow(["group_r", lang, name, repr(corr[name])])
    return EXIT_OK


COMMANDS = {
    "stats": cmd_stats,
    "distance": cmd_distance,
    "correlate": cmd_correlate,
    "regress": cmd_regress,
    "select": cmd_select,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="isospec: %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    fmt = getattr(args, "format", "csv")
    try:
        cfg = resolve_config(args)
        fmt = cfg.format
        return COMMANDS[cfg.subcommand](cfg)
    except (InputError, ConfigError, JoinError) as exc:
        _error(fmt, "input", str(exc))
        return EXIT_INPUT
    except ValueError as exc:
        _error(fmt, "input", str(exc))
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        logger.debug("internal error", exc_info=True)
        _error(fmt, "internal", f"{type(exc).__name__}: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
