"""Command-line front end: simulate, fit, select-ranks, impute, eval.

Data layout on disk
-------------------
A manifest JSON lists the sources::

    {"n": 200, "sample_ids": [...],
     "sources": [{"name": "expr", "kind": "gaussian", "data_path": "expr.csv"},
                 {"name": "cnt", "kind": "binomial", "data_path": "cnt.csv",
                  "trials_path": "cnt_trials.csv"}]}

Paths are relative to the manifest. Each data CSV has a header of variable
names and exactly n rows in sample order; a sample missing from a source is
a row of ``NA``. Binomial trials come as a parallel CSV of the same shape.

Exit codes: 0 ok, 2 usage, 3 data, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import re
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import exp_family as ef
from .data_model import (
    DimensionError,
    ModelParams,
    MultiSourceDataset,
    NumericalFailure,
    ObservationPattern,
    RankSpec,
    SourceSpec,
)
from .fitter import FitConfig, ResidualRankExceeded, fit
from .glm_solver import SingularSystem
from .imputation import GIPCA, METHODS, MethodRequiresModel, diff_r_miss, impute
from .rank_selection import stepwise_select
from .simulation import InfeasibleMissingPattern, ScenarioSpec, generate, run_replications

log = logging.getLogger("gipca")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
NA = "NA"
MODEL_FORMAT = "gipca-model/1"


class DataError(ValueError):
    """Malformed input file; the message carries file and line."""


class UsageError(ValueError):
    pass


class NotConverged(ArithmeticError):
    pass


# ------------------------------------------------------------------ CSV I/O

def _fmt(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x}")
    return format(float(x), ".17g")


def write_matrix_csv(path, header, rows_by_sample: dict, n: int, sample_col: bool = False):
    """Write an n-row CSV; samples absent from ``rows_by_sample`` become NA rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["sample"] if sample_col else []) + list(header))
        for i in range(n):
            row = rows_by_sample.get(i)
            vals = [NA] * len(header) if row is None else [_fmt(v) for v in row]
            w.writerow(([str(i + 1)] if sample_col else []) + vals)


def write_rows_csv(path, header, samples, M):
    """CSV of selected samples with a leading 1-based ``sample`` column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", *header])
        for i, row in zip(samples, M):
            w.writerow([str(int(i) + 1), *(_fmt(v) for v in row)])


def read_matrix_csv(path, expect_rows=None, sample_col=False):
    """Return (header, values n x p with NaN rows, observed row indices).

    A row is either fully numeric or fully ``NA``; anything else is a data
    error reported with its line number.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as err:
        raise DataError(f"{path}: {err.strerror}") from err
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if sample_col:
            if not header or header[0] != "sample":
                raise DataError(f"{path}:1: first column must be 'sample'")
            header = header[1:]
        p = len(header)
        rows, observed, samples = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if sample_col:
                try:
                    samples.append(int(rec[0]) - 1)
                except (ValueError, IndexError):
                    raise DataError(f"{path}:{lineno}: bad sample index") from None
                rec = rec[1:]
            if len(rec) != p:
                raise DataError(f"{path}:{lineno}: expected {p} fields, found {len(rec)}")
            toks = [t.strip() for t in rec]
            if all(t == NA for t in toks):
                rows.append(np.full(p, np.nan))
                continue
            if any(t == NA for t in toks):
                raise DataError(f"{path}:{lineno}: row mixes NA and numbers (only whole rows may be missing)")
            try:
                vals = np.array([float(t) for t in toks])
            except ValueError as err:
                raise DataError(f"{path}:{lineno}: {err}") from None
            if not np.all(np.isfinite(vals)):
                raise DataError(f"{path}:{lineno}: non-finite value")
            observed.append(len(rows))
            rows.append(vals)
    M = np.vstack(rows) if rows else np.zeros((0, p))
    if expect_rows is not None and M.shape[0] != expect_rows:
        raise DataError(f"{path}: expected {expect_rows} data rows, found {M.shape[0]}")
    if sample_col:
        return header, M, np.asarray(samples, dtype=np.intp)
    return header, M, np.asarray(observed, dtype=np.intp)


# ------------------------------------------------------------------ manifest

def load_manifest(path):
    """Parse a manifest into (MultiSourceDataset, manifest dict, variable names)."""
    path = Path(path)
    try:
        man = json.loads(path.read_text())
    except OSError as err:
        raise DataError(f"{path}: {err.strerror}") from err
    except json.JSONDecodeError as err:
        raise DataError(f"{path}:{err.lineno}: {err.msg}") from err
    base = path.parent
    try:
        n = int(man["n"])
        entries = man["sources"]
    except (KeyError, TypeError, ValueError) as err:
        raise DataError(f"{path}: manifest needs 'n' and 'sources' ({err})") from None
    if man.get("sample_ids") is not None and len(man["sample_ids"]) != n:
        raise DataError(f"{path}: sample_ids has {len(man['sample_ids'])} entries, n = {n}")
    sources, data, observed, names = [], [], [], []
    for j, ent in enumerate(entries):
        try:
            name, kind, dpath = ent["name"], ent["kind"].lower(), base / ent["data_path"]
        except (KeyError, TypeError, AttributeError):
            raise DataError(f"{path}: source {j} needs name, kind and data_path") from None
        header, M, obs = read_matrix_csv(dpath, expect_rows=n)
        trials = None
        if kind == ef.BINOMIAL:
            if "trials_path" in ent:
                th, T, tobs = read_matrix_csv(base / ent["trials_path"], expect_rows=n)
                if len(th) != len(header) or not np.array_equal(tobs, obs):
                    raise DataError(f"{ent['trials_path']}: trials must match the shape and NA rows of {ent['data_path']}")
                trials = T
            elif "trials" in ent:
                trials = int(ent["trials"])
            else:
                raise DataError(f"{path}: binomial source {name!r} needs trials_path")
        try:
            sources.append(SourceSpec(name, kind, len(header), trials))
        except (ValueError, DimensionError) as err:
            raise DataError(f"{path}: source {name!r}: {err}") from None
        data.append(M[obs])
        observed.append(obs)
        names.append(header)
    try:
        ds = MultiSourceDataset(tuple(sources), ObservationPattern(n, tuple(observed)), tuple(data))
    except (ValueError, DimensionError) as err:
        raise DataError(f"{path}: {err}") from None
    return ds, man, names


def write_dataset(out_dir, ds: MultiSourceDataset, names=None, sample_ids=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, src in enumerate(ds.sources):
        header = names[k] if names else [f"{src.name}_v{j + 1}" for j in range(src.p)]
        obs = ds.pattern.observed[k]
        write_matrix_csv(out / f"{src.name}.csv", header, dict(zip(obs, ds.data[k])), ds.n)
        ent = {"name": src.name, "kind": src.family, "data_path": f"{src.name}.csv"}
        if src.family == ef.BINOMIAL:
            t = np.broadcast_to(np.asarray(src.trials_for(obs), dtype=float), ds.data[k].shape)
            write_matrix_csv(out / f"{src.name}_trials.csv", header, dict(zip(obs, t)), ds.n)
            ent["trials_path"] = f"{src.name}_trials.csv"
        entries.append(ent)
    man = {"n": ds.n, "sources": entries}
    if sample_ids is not None:
        man["sample_ids"] = list(sample_ids)
    path = out / "manifest.json"
    path.write_text(json.dumps(man, indent=2) + "\n")
    return path


# ------------------------------------------------------------------ model JSON

def _matrix_json(M) -> str:
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    cols = ",".join("[" + ",".join(_fmt(v) for v in M[:, j]) + "]" for j in range(M.shape[1]))
    return f'{{"dims":[{M.shape[0]},{M.shape[1]}],"data":[{cols}]}}'


def _matrix_from_json(obj) -> np.ndarray:
    r, c = obj["dims"]
    if len(obj["data"]) != c or any(len(col) != r for col in obj["data"]):
        raise DataError(f"matrix data does not match dims {r}x{c}")
    return np.array(obj["data"], dtype=float).reshape(c, r).T


def dump_model(psi: ModelParams, sources, extra: dict | None = None) -> str:
    """Serialize Psi (column-major, 17 significant digits) plus metadata."""
    mats = {}

    def slot(M):
        key = f"@@M{len(mats)}@@"
        mats[key] = _matrix_json(M)
        return key

    doc = {
        "format": MODEL_FORMAT,
        "n": psi.n,
        "ranks": list(psi.ranks.as_tuple()),
        "sources": [{"name": s.name, "kind": s.family} for s in sources],
        "observed": [[int(i) for i in o] for o in psi.observed],
        "U0": slot(psi.U0),
        "mu": [slot(m) for m in psi.mu],
        "V": [slot(v) for v in psi.V],
        "Ustar": [slot(u) for u in psi.Ustar],
        "A": [slot(a) for a in psi.A],
    }
    if extra:
        doc.update(extra)
    text = json.dumps(doc, indent=1, default=_json_default)
    return re.sub(r'"(@@M\d+@@)"', lambda m: mats[m.group(1)], text) + "\n"


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def load_model(path):
    """Return (ModelParams, document dict)."""
    path = Path(path)
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as err:
        raise DataError(f"{path}: {err.strerror}") from err
    except json.JSONDecodeError as err:
        raise DataError(f"{path}:{err.lineno}: {err.msg}") from err
    if doc.get("format") != MODEL_FORMAT:
        raise DataError(f"{path}: not a model file (format {doc.get('format')!r})")
    try:
        psi = ModelParams(
            mu=[_matrix_from_json(m)[:, 0] for m in doc["mu"]],
            U0=_matrix_from_json(doc["U0"]),
            V=[_matrix_from_json(m) for m in doc["V"]],
            Ustar=[_matrix_from_json(m) for m in doc["Ustar"]],
            A=[_matrix_from_json(m) for m in doc["A"]],
            observed=[np.asarray(o, dtype=np.intp) for o in doc["observed"]],
        )
    except (KeyError, TypeError, ValueError, DimensionError) as err:
        raise DataError(f"{path}: malformed model ({err})") from None
    return psi, doc


def _check_model_matches(psi: ModelParams, doc, ds: MultiSourceDataset):
    if psi.n != ds.n or psi.K != ds.K or list(psi.mu[k].size for k in range(psi.K)) != ds.p:
        raise DataError("model dimensions do not match the manifest")
    for k in range(ds.K):
        if doc["sources"][k]["kind"] != ds.sources[k].family:
            raise DataError(f"source {k + 1}: model kind {doc['sources'][k]['kind']} vs data {ds.sources[k].family}")
        if not np.array_equal(psi.observed[k], ds.pattern.observed[k]):
            raise DataError(f"source {k + 1}: model was fitted on a different missing pattern")


# ------------------------------------------------------------------ commands

def _threads(args) -> int:
    t = args.threads if args.threads is not None else os.environ.get("GIPCA_THREADS", 1)
    try:
        t = int(t)
    except ValueError:
        raise UsageError(f"GIPCA_THREADS must be an integer, got {t!r}") from None
    if t < 1:
        raise UsageError("--threads must be >= 1")
    return t


def _fit_config(args) -> FitConfig:
    return FitConfig(max_sweeps=args.max_sweeps, rel_tol=args.tol, init=args.init, seed=args.seed)


def _parse_ranks(text, K, flag="--ranks") -> RankSpec:
    try:
        r = RankSpec.parse(text)
    except ValueError as err:
        raise UsageError(f"{flag}: {err}") from None
    if len(r.r_A) != K:
        raise UsageError(f"{flag} needs {K + 1} entries (r_J and one per source), got {len(r.r_A) + 1}")
    return r


def cmd_simulate(args) -> int:
    spec = ScenarioSpec(scenario=args.scenario, n=args.n, missing_rate=args.missing_rate,
                        seed=args.seed, signal_scale=args.signal_scale)
    out = Path(args.out)
    sim = generate(spec, args.replication)
    write_dataset(out, sim.ds)
    for k, src in enumerate(sim.ds.sources):
        header = [f"{src.name}_v{j + 1}" for j in range(src.p)]
        write_rows_csv(out / f"{src.name}_theta.csv", header, range(spec.n), sim.theta_true[k])
    (out / "truth.json").write_text(dump_model(sim.truth, sim.ds.sources, {"metadata": sim.metadata}))
    print(f"wrote scenario {spec.scenario} data to {out}")
    if args.reps:
        methods = args.methods.split(",")
        bad = [m for m in methods if m not in METHODS]
        if bad:
            raise UsageError(f"unknown method(s) {bad}; choose from {list(METHODS)}")
        cfg = FitConfig(max_sweeps=args.max_sweeps, rel_tol=args.tol)
        tab = run_replications(spec, args.reps, methods, cfg=cfg, n_jobs=_threads(args))
        rows = tab.summary()
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        for row in rows:
            print(f"{row['method']:>8} source {row['source']} ({row['family']}): "
                  f"median {row['median']:.3f}  MAD {row['mad']:.3f}  ok {row['n_ok']}")
    return EXIT_OK


def _finish_fit(report, args):
    if not report.converged and not args.allow_nonconverged:
        raise NotConverged(f"no convergence after {report.sweeps} sweeps (use --allow-nonconverged to keep it)")


def cmd_fit(args) -> int:
    ds, _, _ = load_manifest(args.manifest)
    ranks = _parse_ranks(args.ranks, ds.K)
    viol = ranks.violations(ds.n, ds.n_k, ds.p)
    if viol:
        raise UsageError("; ".join(viol))
    cfg = _fit_config(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = fit(ds, ranks, cfg)
    extra = {"loglik_trace": report.loglik_trace, "sweeps": report.sweeps,
             "converged": report.converged, "config": asdict(cfg)}
    Path(args.out).write_text(dump_model(report.psi, ds.sources, extra))
    print(f"ranks {ranks}: loglik {report.loglik:.6f} after {report.sweeps} sweeps"
          f"{'' if report.converged else ' (not converged)'}")
    _finish_fit(report, args)
    return EXIT_OK


def cmd_select(args) -> int:
    ds, _, _ = load_manifest(args.manifest)
    bounds = _parse_ranks(args.max_ranks, ds.K, "--max-ranks") if args.max_ranks else None
    cfg = _fit_config(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sel = stepwise_select(ds, cfg, bounds=bounds)
    best = sel.best
    trace = [{"ranks": list(r.ranks.as_tuple()), "bic": r.bic if math.isfinite(r.bic) else None,
              "loglik": r.loglik if math.isfinite(r.loglik) else None, "n_params": r.n_params,
              "converged": None if r.report is None else r.report.converged, "error": r.error}
             for r in sel.trace]
    doc = {"selected": list(sel.selected.as_tuple()), "path": [list(p.as_tuple()) for p in sel.path],
           "trace": trace, "config": asdict(cfg)}
    out = Path(args.out)
    out.write_text(json.dumps(doc, indent=1) + "\n")
    if best.report is not None:
        model_path = out.with_name(out.stem + "_model.json")
        model_path.write_text(dump_model(best.report.psi, ds.sources, {
            "loglik_trace": best.report.loglik_trace, "converged": best.report.converged,
            "config": asdict(cfg)}))
    print(f"selected ranks {sel.selected} (BIC {best.bic:.3f}, {len(sel.trace)} fits)")
    return EXIT_OK


def cmd_impute(args) -> int:
    ds, _, names = load_manifest(args.manifest)
    psi = None
    if args.model:
        psi, doc = load_model(args.model)
        _check_model_matches(psi, doc, ds)
    elif args.method == GIPCA:
        raise MethodRequiresModel("--method gipca needs --model")
    kw = {}
    if args.method == "adjacent":
        kw["window"] = args.window
    if args.method == "samerow" and args.pair:
        lookup = {s.name: k for k, s in enumerate(ds.sources)}
        try:
            pair = {lookup[a]: lookup[b] for a, b in (tok.split(":") for tok in args.pair.split(","))}
        except (KeyError, ValueError):
            raise UsageError("--pair takes name:name[,name:name...] using source names") from None
        kw["pair"] = pair
    res = impute(ds, args.method, psi if args.method == GIPCA else None, **kw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, src in enumerate(ds.sources):
        s = res[k]
        write_rows_csv(out / f"{src.name}_imputed.csv", names[k], s.rows, s.filled)
        write_rows_csv(out / f"{src.name}_theta.csv", names[k], s.rows, s.theta)
        if s.fallbacks:
            log.warning("%s: %d row(s) had no donor and fell back to the column mean", src.name, s.fallbacks)
    print(f"{args.method}: imputed {sum(len(s.rows) for s in res.sources)} missing rows into {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    truth, imputed = Path(args.truth), Path(args.imputed)
    files = sorted(imputed.glob("*_theta.csv"))
    if not files:
        raise DataError(f"{imputed}: no *_theta.csv files")
    results = []
    for f in files:
        name = f.name[: -len("_theta.csv")]
        _, est, rows = read_matrix_csv(f, sample_col=True)
        _, ref, ref_rows = read_matrix_csv(truth / f.name, sample_col=True)
        where = {int(r): i for i, r in enumerate(ref_rows)}
        try:
            idx = [where[int(r)] for r in rows]
        except KeyError as err:
            raise DataError(f"{truth / f.name}: sample {err.args[0] + 1} not present") from None
        if ref.shape[1] != est.shape[1]:
            raise DataError(f"{f}: {est.shape[1]} columns, truth has {ref.shape[1]}")
        loss = diff_r_miss(ref[idx], est) if len(rows) else float("nan")
        results.append((name, len(rows), loss))
    lines = ["source,n_rows,diff_r_miss"] + [f"{n},{m},{_fmt(v) if math.isfinite(v) else NA}" for n, m, v in results]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _add_fit_flags(p):
    p.add_argument("--tol", type=float, default=1e-6, help="relative log-likelihood tolerance")
    p.add_argument("--max-sweeps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0, help="seed for --init random")
    p.add_argument("--init", choices=("svd", "random"), default="svd")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gipca", description="Generalized integrative PCA for multi-source data")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker processes for replication runs (default: $GIPCA_THREADS or 1)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a simulation scenario")
    p.add_argument("--scenario", type=int, required=True, choices=(1, 2, 3, 4, 5))
    p.add_argument("--missing-rate", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--replication", type=int, default=0, help="which data draw to write")
    p.add_argument("--reps", type=int, default=0, help="also run this many replications and write summary.csv")
    p.add_argument("--methods", default=GIPCA, help="comma list for --reps (gipca,colmean,adjacent,samerow)")
    p.add_argument("--signal-scale", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-sweeps", type=int, default=500)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit at fixed ranks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ranks", required=True, help="rJ,r1,...,rK")
    p.add_argument("--out", required=True)
    p.add_argument("--allow-nonconverged", action="store_true")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select-ranks", help="stepwise BIC rank search")
    p.add_argument("--manifest", required=True)
    p.add_argument("--max-ranks", default=None, help="upper bounds rJ,r1,...,rK")
    p.add_argument("--out", required=True)
    _add_fit_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("impute", help="fill block-wise missing rows")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--method", choices=METHODS, default=GIPCA)
    p.add_argument("--window", type=int, default=5, help="half-width for --method adjacent")
    p.add_argument("--pair", default=None, help="samerow donors as name:name,... (default: the other of two sources)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("eval", help="relative Frobenius loss of imputed natural parameters")
    p.add_argument("--truth", required=True, help="directory with <source>_theta.csv")
    p.add_argument("--imputed", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _threads(args)
        return args.func(args)
    except (UsageError, MethodRequiresModel, InfeasibleMissingPattern) as err:
        print(f"gipca {args.command}: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError) as err:
        print(f"gipca {args.command}: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NotConverged, NumericalFailure, SingularSystem, ResidualRankExceeded, FloatingPointError) as err:
        print(f"gipca {args.command}: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"gipca {args.command}: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
