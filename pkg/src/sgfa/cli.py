"""Command-line driver: ``sgfa {synth,preprocess,fit,analyze,report}``.

Every command writes into one output directory and finishes by atomically
writing ``manifest.json`` (effective config, version, seed, stage timings,
initialization scores and a sha256 digest of every output file). Timings
live only in the manifest, so reruns with the same config and seed produce
digest-identical outputs.

Directory contents
------------------
dataset (``synth``/``preprocess``)
    ``<view>.csv`` (samples x features, first column ``sample_id``),
    ``labels.csv``, ``dataset.json`` (file index), ``truth.json`` (synthetic
    only), ``preprocess_report.json`` (``preprocess`` only).
fit
    ``summary.json`` (per-chain posterior means of W and Z),
    ``chains.json`` (step size, mass diagonal, divergences, seeds per chain),
    ``diagnostics.json``, ``draws/chain_<c>.csv`` (header = coordinate names,
    centred unconstrained scale) or ``.npy`` with ``--draws binary``.
analyze
    ``analysis.json``, ``loadings_<view>.csv``, ``latent_scores.csv``,
    ``contributions.csv``, ``tests.json``, ``covariance_explained.json``,
    ``recovery.json`` (when ground truth exists), ``plots/*.svg``,
    ``projection_factor<k>.csv`` on request.

Exit codes: 0 success, 2 invalid config/arguments, 3 unreadable or invalid
input data, 4 numerical/sampling failure, 5 missing upstream artifacts.
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
import tempfile
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import analysis as an
from . import pipeline as pl
from . import plots
from .config import load_config, output_root, scenario_of, hyper_of, sampler_of
from .dataset import MultiViewDataset
from .errors import ConfigError, DataError, DependencyError, NumericalError, SGFAError
from .model import GFAModel, ModelFamily, ModelSpec
from .sampler import diagnostics, run_chains
from .synthgen import GroundTruth, generate

log = logging.getLogger("sgfa")


# -- small io helpers --------------------------------------------------------

def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def _write_json(path, obj):
    return _atomic_write(path, json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _read_json(path, what="file"):
    path = Path(path)
    if not path.is_file():
        raise DependencyError(f"missing {what}: {path}")
    return json.loads(path.read_text())


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return _atomic_write(path, buf.getvalue())


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _prepare_out(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory {out} is not writable: {exc}") from None
    return out


def write_manifest(out: Path, command: str, cfg: dict, timings: dict, files, extra=None) -> Path:
    inventory = {}
    for f in sorted({Path(f) for f in files}):
        inventory[str(f.relative_to(out))] = sha256(f)
    manifest = {
        "command": command,
        "version": _version(),
        "seed": cfg["seed"],
        "config": cfg,
        "timings_seconds": {k: round(v, 3) for k, v in timings.items()},
        "outputs": inventory,
    }
    manifest.update(extra or {})
    return _write_json(out / "manifest.json", manifest)


def _fmt(x) -> str:
    return repr(float(x))


# -- dataset directories -----------------------------------------------------

def write_dataset(data: MultiViewDataset, out: Path, truth: GroundTruth = None, report=None) -> list:
    files = pl.write_views(data, out)
    index = {"views": [p.name for p in files], "view_names": list(data.view_names),
             "labels": None, "label_column": "subgroup", "confounds": None, "truth": None}
    if data.labels is not None:
        files.append(_write_csv(out / "labels.csv", ["sample_id", "subgroup"],
                                [[s, _plain(l)] for s, l in zip(data.sample_ids, data.labels)]))
        index["labels"] = "labels.csv"
    if data.confounds is not None:
        files.append(_write_csv(out / "confounds.csv", ["sample_id", *data.confound_names],
                                [[s, *map(_fmt, c)] for s, c in zip(data.sample_ids, data.confounds.T)]))
        index["confounds"] = "confounds.csv"
    if truth is not None:
        files.append(_write_json(out / "truth.json", truth.to_json()))
        index["truth"] = "truth.json"
    if report is not None:
        files.append(_write_json(out / "preprocess_report.json", report.to_json()))
    files.append(_write_json(out / "dataset.json", index))
    return files


def _plain(x):
    return x.item() if hasattr(x, "item") else x


def read_dataset(directory):
    """Load a dataset directory written by ``synth`` or ``preprocess``."""
    directory = Path(directory)
    index = _read_json(directory / "dataset.json", "dataset index")
    data = pl.load_views(
        [directory / v for v in index["views"]],
        label_column=index["label_column"] if index.get("labels") else None,
        labels_path=directory / index["labels"] if index.get("labels") else None,
        confounds_path=directory / index["confounds"] if index.get("confounds") else None,
        view_names=index["view_names"],
    )
    truth = GroundTruth.load(directory / index["truth"]) if index.get("truth") else None
    return data, truth


# -- commands ----------------------------------------------------------------

def cmd_synth(cfg: dict, out: Path, replicates: int = 1) -> list:
    if replicates < 1:
        raise ConfigError("--replicates must be >= 1")
    out = _prepare_out(out)
    dirs = []
    for r in range(replicates):
        seed = cfg["seed"] + r
        t0 = time.perf_counter()
        target = out if replicates == 1 else _prepare_out(out / f"replicate_{r:02d}_seed_{seed}")
        data, truth = generate(scenario_of(cfg, seed=seed))
        files = write_dataset(data, target, truth)
        rcfg = {**cfg, "seed": seed}
        write_manifest(target, "synth", rcfg, {"synth": time.perf_counter() - t0}, files)
        dirs.append(target)
        log.info("wrote synthetic dataset (seed %d) to %s", seed, target)
    return dirs


def cmd_preprocess(cfg: dict, out: Path) -> Path:
    out = _prepare_out(out)
    d = cfg["data"]
    if not d["views"]:
        raise ConfigError("no input views given (data.views or --views)")
    t0 = time.perf_counter()
    raw = pl.load_views(d["views"], label_column=d["label_column"], labels_path=d["labels"],
                        confounds_path=d["confounds"])
    t1 = time.perf_counter()
    p = cfg["preprocess"]
    data, report = pl.preprocess(raw, missing_threshold=p["missing_threshold"],
                                 sample_threshold=p["sample_threshold"], regress=p["regress"], ddof=p["ddof"])
    t2 = time.perf_counter()
    files = write_dataset(data, out, report=report)
    write_manifest(out, "preprocess", cfg, {"load": t1 - t0, "preprocess": t2 - t1}, files)
    return out


def cmd_fit(cfg: dict, data_dir, out: Path) -> Path:
    out = _prepare_out(out)
    timings = {}
    t0 = time.perf_counter()
    if data_dir is None:
        data_dir = cmd_preprocess(cfg, out / "data")
    data, _ = read_dataset(data_dir)
    timings["load"] = time.perf_counter() - t0

    family = ModelFamily.parse(cfg["model"]["family"])
    spec = ModelSpec.for_data(family, data, cfg["model"]["K"], hyper_of(cfg))
    nc = family is ModelFamily.SPARSE_GFA_RHS and cfg["model"]["parameterization"] == "noncentered"
    model = GFAModel(spec, data, noncentered=nc)
    sconf = sampler_of(cfg)
    t1 = time.perf_counter()
    try:
        draws = run_chains(model, sconf)
    except NumericalError as exc:
        _write_json(out / "failure.json", {"error": type(exc).__name__, "message": str(exc)})
        raise
    timings["sample"] = time.perf_counter() - t1

    files = []
    layout = model.layout
    summary = an.summarize_chains(draws, layout, D=spec.D)
    files.append(_write_json(out / "summary.json", {
        "family": family.value, "D": list(spec.D), "N": spec.N, "K": spec.K,
        "n_parameters": layout.size, "layout": layout.to_dict(),
        "dataset_sha256": sha256(Path(data_dir) / "dataset.json"),
        "chains": [{"W": w, "Z": z} for w, z in zip(summary.W, summary.Z)],
    }))
    files.append(_write_json(out / "chains.json", {
        "initialization": draws.initialization,
        "init_scores": draws.init_scores,
        "failed_initializations": {str(k): v for k, v in draws.failed_initializations.items()},
        "parameterization": "noncentered" if nc else "centered",
        "chains": [{
            "seed": list(c.seed), "step_size": c.step_size, "mass_diag": c.mass_diag,
            "divergences": int(c.divergent.sum()), "warmup_divergences": c.warmup_divergences,
            "mean_accept_stat": float(c.accept_stat.mean()), "mean_tree_depth": float(c.tree_depth.mean()),
            "mean_log_joint": float(c.log_prob.mean()),
        } for c in draws.chains],
    }))
    diag = diagnostics(draws)
    per_block = {}
    for name in layout.names:
        sl = layout[name]
        ok = ~diag.degenerate[sl]
        per_block[name] = {
            "max_rhat": float(np.max(diag.rhat[sl][ok])) if ok.any() else None,
            "min_ess_bulk": float(np.min(diag.ess_bulk[sl][ok])) if ok.any() else None,
        }
    files.append(_write_json(out / "diagnostics.json", {**diag.summary(), "blocks": per_block}))
    fmt = cfg["output"]["draws"]
    if fmt != "none":
        header = layout.coordinate_names()
        for i, c in enumerate(draws.chains):
            if fmt == "csv":
                path = out / "draws" / f"chain_{i}.csv"
                path.parent.mkdir(exist_ok=True)
                np.savetxt(path, c.draws, delimiter=",", fmt="%.17g", header=",".join(header), comments="")
            else:
                path = out / "draws" / f"chain_{i}.npy"
                path.parent.mkdir(exist_ok=True)
                np.save(path, c.draws)
            files.append(path)
    timings["write"] = time.perf_counter() - t1 - timings["sample"]
    write_manifest(out, "fit", cfg, timings, files,
                   {"init_scores": draws.init_scores, "n_parameters": layout.size,
                    "inputs": {"data": os.path.relpath(Path(data_dir).resolve(), out.resolve())}})
    return out


def _analysis_payload(summary_json, data, truth, threshold, welch):
    D = tuple(summary_json["D"])
    summary = an.ChainFactorSummary([c["W"] for c in summary_json["chains"]],
                                    [c["Z"] for c in summary_json["chains"]], D)
    robust = an.match_factors(summary, threshold)
    an.describe_factors(robust, data, data.labels, welch=welch)
    groups = sorted(set(data.labels.tolist())) if data.labels is not None else None
    payload = {
        "robust": robust.to_json(),
        "groups": groups,
        "labels": data.labels.tolist() if data.labels is not None else None,
        "sample_ids": list(data.sample_ids),
        "view_names": list(data.view_names),
        "feature_names": [list(f) for f in data.feature_names],
    }
    recovery = an.recovery_score(robust, truth, threshold=threshold) if truth is not None else None
    return robust, payload, recovery


def cmd_analyze(cfg: dict, fit_dir, out: Path, project=None) -> Path:
    fit_dir = Path(fit_dir)
    summary_json = _read_json(fit_dir / "summary.json", "fit summary (run `sgfa fit` first)")
    fit_manifest = _read_json(fit_dir / "manifest.json", "fit manifest")
    data_dir = (fit_dir / fit_manifest["inputs"]["data"]).resolve()
    if not (data_dir / "dataset.json").is_file():
        raise DependencyError(f"missing dataset index referenced by the fit: {data_dir / 'dataset.json'}")
    out = _prepare_out(out)
    t0 = time.perf_counter()
    data, truth = read_dataset(data_dir)
    threshold = float(cfg["analysis"]["cosine"])
    robust, payload, recovery = _analysis_payload(summary_json, data, truth, threshold, cfg["analysis"]["welch"])
    files = [_write_json(out / "analysis.json", payload)]

    for m, (name, W) in enumerate(zip(data.view_names, robust.W_views())):
        rows = [[f, *map(_fmt, W[j])] for j, f in enumerate(data.feature_names[m])]
        files.append(_write_csv(out / f"loadings_{name}.csv",
                                ["feature", *[f"factor{k + 1}" for k in range(len(robust))]], rows))
    Z = robust.Z
    files.append(_write_csv(out / "latent_scores.csv", ["sample_id", *[f"factor{k + 1}" for k in range(len(robust))]],
                            [[s, *map(_fmt, Z[:, i])] for i, s in enumerate(data.sample_ids)] if len(robust) else
                            [[s] for s in data.sample_ids]))
    if payload["groups"] is not None:
        files.append(_write_csv(out / "contributions.csv", ["factor", *[f"subgroup_{g}" for g in payload["groups"]]],
                                [[k + 1, *map(_fmt, f.contributions)] for k, f in enumerate(robust.factors)]))
        files.append(_write_json(out / "tests.json",
                                 [None if f.tests is None else f.tests.to_json() for f in robust.factors]))
    files.append(_write_json(out / "covariance_explained.json", {
        "definition": "||w_k z_k||_F^2 / ||X||_F^2 over all views stacked",
        "ranked": [{"factor": k + 1, "fraction": v} for k, v in
                   (an.covariance_explained(robust.W, robust.Z, data) if len(robust) else [])],
    }))
    if recovery is not None:
        files.append(_write_json(out / "recovery.json", recovery.to_json()))
    for k in project or []:
        X = an.project_to_data(robust.W, robust.Z, k - 1)
        files.append(_write_csv(out / f"projection_factor{k}.csv", ["feature", *data.sample_ids],
                                [[f, *map(_fmt, row)] for f, row in
                                 zip([f for fs in data.feature_names for f in fs], X)]))
    files.extend(plots.render_all(payload, out / "plots"))
    write_manifest(out, "analyze", cfg, {"analyze": time.perf_counter() - t0}, files,
                   {"n_robust": len(robust), "inputs": {"fit": os.path.relpath(fit_dir.resolve(), out.resolve())}})
    return out


def cmd_report(analysis_dir, out=None) -> Path:
    analysis_dir = Path(analysis_dir)
    payload = _read_json(analysis_dir / "analysis.json", "analysis output (run `sgfa analyze` first)")
    out = _prepare_out(out or analysis_dir / "report")
    files = plots.render_all(payload, out)
    lines = [f"robust factors: {payload['robust']['n_robust']} "
             f"(threshold {payload['robust']['threshold']}, {payload['robust']['n_chains']} chains)"]
    for k, f in enumerate(payload["robust"]["factors"]):
        line = f"factor {k + 1}: support {f['support']}, similarity {f['similarity']:.3f}"
        if "covariance_explained" in f:
            line += f", covariance explained {f['covariance_explained']:.3f}"
        if "contributions" in f:
            line += ", contributions " + " ".join(f"{c:.3f}" for c in f["contributions"])
        if f.get("tests"):
            line += f", F={f['tests']['F']:.3f} (p={f['tests']['p']:.3g})"
        lines.append(line)
    rec = analysis_dir / "recovery.json"
    if rec.is_file():
        r = json.loads(rec.read_text())
        lines.append(f"recovery: similarities {r['similarity']}, unmatched {r['n_unmatched_true']}, "
                     f"spurious {r['n_spurious']}, max contribution error {r['max_contribution_error']}")
    files.append(_atomic_write(out / "report.txt", "\n".join(lines) + "\n"))
    print("\n".join(lines))
    return out


# -- argument parsing --------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="YAML run file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory (default: under $SGFA_OUTPUT_ROOT)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgfa", description="Sparse group factor analysis with HMC.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic multi-view datasets")
    _common(p)
    p.add_argument("--replicates", type=int, default=1)

    p = sub.add_parser("preprocess", help="drop, impute, regress confounds and standardise CSV views")
    _common(p)
    p.add_argument("--views", nargs="+", help="one CSV per view")
    p.add_argument("--label-column")
    p.add_argument("--labels", help="CSV with sample_id and the label column")
    p.add_argument("--confounds", help="CSV with sample_id and one column per confound")

    p = sub.add_parser("fit", help="run the sampler on a dataset directory")
    _common(p)
    p.add_argument("--data", help="dataset directory (from synth/preprocess); raw views come from the config")
    p.add_argument("--model", choices=["gfa", "sparse-gfa"])
    p.add_argument("--K", type=int)
    p.add_argument("--preset", choices=["synthetic", "real"])
    for name in ("chains", "warmup", "samples", "initializations", "max-tree-depth", "n-jobs"):
        p.add_argument(f"--{name}", type=int)
    p.add_argument("--draws", choices=["csv", "binary", "none"])

    p = sub.add_parser("analyze", help="match factors across chains and summarise them")
    _common(p)
    p.add_argument("--fit", required=True, help="fit output directory")
    p.add_argument("--cosine", type=float, help="similarity threshold (default 0.80)")
    p.add_argument("--welch", action="store_true", help="Welch instead of pooled t-tests")
    p.add_argument("--project", type=int, nargs="*", help="write data-space projections of these factors (1-based)")

    p = sub.add_parser("report", help="re-render plots and a text summary from an analysis directory")
    p.add_argument("--analysis", required=True)
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _overrides(args) -> dict:
    o = {}
    if getattr(args, "seed", None) is not None:
        o["seed"] = args.seed
    model = {}
    if getattr(args, "model", None):
        model["family"] = args.model
    if getattr(args, "K", None) is not None:
        model["K"] = args.K
    if model:
        o["model"] = model
    sampler = {}
    for name in ("chains", "warmup", "samples", "initializations", "max_tree_depth", "n_jobs"):
        v = getattr(args, name, None)
        if v is not None:
            sampler[name] = v
    if sampler:
        o["sampler"] = sampler
    if getattr(args, "draws", None):
        o["output"] = {"draws": args.draws}
    if getattr(args, "cosine", None) is not None or getattr(args, "welch", False):
        o["analysis"] = {}
        if args.cosine is not None:
            o["analysis"]["cosine"] = args.cosine
        if args.welch:
            o["analysis"]["welch"] = True
    data = {}
    for name in ("views", "label_column", "labels", "confounds"):
        v = getattr(args, name, None)
        if v is not None:
            data[name] = v
    if data:
        o["data"] = data
    return o


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            cmd_report(args.analysis, args.out)
            return 0
        cfg = load_config(args.config, _overrides(args), preset=getattr(args, "preset", None))
        out = Path(args.out) if args.out else output_root() / args.command
        if args.command == "synth":
            cmd_synth(cfg, out, args.replicates)
        elif args.command == "preprocess":
            cmd_preprocess(cfg, out)
        elif args.command == "fit":
            cmd_fit(cfg, args.data, out)
        elif args.command == "analyze":
            cmd_analyze(cfg, args.fit, out, args.project)
        return 0
    except SGFAError as exc:
        print(f"sgfa {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"sgfa {args.command}: I/O error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
