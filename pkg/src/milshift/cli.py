"""Command-line interface: ``milshift <command> ...``.

Commands
--------
validate   check manifests against the format invariants
summarize  fit and store a Gaussian summary of one dataset's descriptors
measure    one shift measure between a reference and a target
sweep-k    a shift measure over a list of K values (CSV)
evaluate   full correlation protocol from a grid spec (record CSV + summary)
synth      write synthetic datasets, or a whole benchmark grid

Every report embeds the effective configuration, defaults included. The
exit status is 0 on success and 1 on any error. Errors go to stderr and
name the offending file or slide.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .baselines import MEASURES, parse_measure, shift_measure
from .evidence import SELECTORS, FeatureConfig, build_feature_matrix, parse_selector
from .frechet import (frechet_distance, gaussian_fit, is_summary_file, load_summary,
                      save_summary)
from .metrics import evaluate_measure, make_record, records_to_csv, validation_threshold
from .store import ManifestError, load_manifest, validate_dataset, write_dataset
from .synth import DEFAULT_SHIFT_GRID, SynthConfig, benchmark_datasets, generate_dataset

DEFAULT_K_LIST = (1, 2, 4, 8, 16, 32, 64, 128)


class CLIError(Exception):
    pass


def _dump(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _emit(text: str, out) -> None:
    if out is None or str(out) == "-":
        sys.stdout.write(text)
        return
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)


def _float_list(s: str) -> list:
    return [float(x) for x in s.split(",") if x.strip()]


def _int_list(s: str) -> list:
    return [int(x) for x in s.split(",") if x.strip()]


def _config(args, k=None, selector=None) -> FeatureConfig:
    return FeatureConfig(selector=selector or args.selector, k=args.k if k is None else k,
                         aggregation=args.agg, seed=args.seed)


def _load(path, args):
    return load_manifest(path, threads=max(1, args.threads))


def _report(command, inputs, config, results, started) -> dict:
    return {
        "command": command,
        "tool_version": __version__,
        "inputs": [str(p) for p in inputs],
        "config": config,
        "results": results,
        "duration_s": round(time.perf_counter() - started, 6),
    }


def cmd_validate(args) -> int:
    status = 0
    for path in args.manifests:
        try:
            d = _load(path, args)
        except ManifestError as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            status = 1
            continue
        problems = validate_dataset(d)
        for v in problems:
            print(f"{path}: {v}", file=sys.stderr)
        if problems:
            status = 1
        else:
            print(f"{path}: ok ({len(d)} slides, feature_dim {d.feature_dim})")
    return status


def cmd_summarize(args) -> int:
    d = _load(args.manifest, args)
    if len(d) < 2:
        raise CLIError(f"{args.manifest}: need >= 2 slides to fit a Gaussian")
    cfg = _config(args)
    g = gaussian_fit(build_feature_matrix(d, cfg), ridge=args.ridge)
    out = Path(args.out) if args.out else Path(f"{d.dataset_id}.summary.json")
    save_summary(g, out)
    print(f"wrote {out} (dim {g.dim}, {g.sample_count} slides)")
    return 0


def _measure_with_summary(args, cfg):
    g_ref = load_summary(args.ref)
    built = g_ref.config.label() if g_ref.config is not None else "an unknown config"
    if g_ref.config is None or g_ref.config.as_dict() != cfg.as_dict():
        raise CLIError(f"{args.ref}: summary was built with {built}, not {cfg.label()}")
    tgt = _load(args.tgt, args)
    g_tgt = gaussian_fit(build_feature_matrix(tgt, cfg), ridge=args.ridge)
    if g_ref.dim != g_tgt.dim:
        raise CLIError(f"descriptor dimension mismatch: {g_ref.dim} vs {g_tgt.dim}")
    value = frechet_distance(g_ref, g_tgt)
    return {"measure": "fdd", "config": cfg.as_dict(), "value": value, "signed_value": value,
            "reference_id": g_ref.dataset_id, "target_id": tgt.dataset_id,
            "model_id": tgt.model_id}


def _measure_config(measure, args):
    return {"measure": measure, "selector": args.selector, "k": args.k,
            "aggregation": args.agg, "seed": args.seed, "ridge": args.ridge,
            "threads": args.threads}


def _compute(measure, ref, tgt, cfg, ridge):
    if measure == "fdd":
        return shift_measure(measure, ref, tgt, cfg, ridge=ridge)
    if measure == "rs":
        return shift_measure(measure, ref, tgt, cfg)
    return shift_measure(measure, ref, tgt)


def cmd_measure(args) -> int:
    started = time.perf_counter()
    measure = parse_measure(args.measure)
    cfg = _config(args)
    if is_summary_file(args.ref):
        if measure != "fdd":
            raise CLIError(f"a precomputed summary only supports --measure fdd, not {args.measure}")
        result = _measure_with_summary(args, cfg)
    else:
        ref, tgt = _load(args.ref, args), _load(args.tgt, args)
        result = _compute(measure, ref, tgt, cfg, args.ridge).as_dict()
    report = _report("measure", [args.ref, args.tgt], _measure_config(measure, args),
                     [result], started)
    _emit(_dump(report), args.out)
    return 0


def cmd_sweep_k(args) -> int:
    measure = parse_measure(args.measure)
    if measure not in ("fdd", "rs"):
        raise CLIError("sweep-k supports --measure fdd or rs")
    ref, tgt = _load(args.ref, args), _load(args.tgt, args)
    selectors = [parse_selector(s) for s in (args.selector or ["positive_evidence"])]
    lines = ["measure,selector,aggregation,k,value"]
    for sel in selectors:
        for k in args.k_list:
            if sel == "combined_evidence" and k % 2:
                continue
            cfg = _config(args, k=k, selector=sel)
            res = _compute(measure, ref, tgt, cfg, args.ridge)
            lines.append(f"{measure},{sel},{args.agg},{k},{res.value!r}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _resolve(base: Path, p: str) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def run_grid(spec_path, threads: int = 1, pooled: bool = False):
    """Run the evaluation protocol described by a grid spec.

    Returns ``(records, summaries)``: one list of records and one
    :class:`~milshift.metrics.CorrelationSummary` per requested measure.
    """
    spec_path = Path(spec_path)
    spec = json.loads(spec_path.read_text())
    base = spec_path.parent
    for key in ("reference", "targets", "models", "measures"):
        if key not in spec:
            raise CLIError(f"{spec_path}: grid spec is missing {key!r}")
    pooled = pooled or bool(spec.get("pooled", False))
    measures = []
    for m in spec["measures"]:
        name = parse_measure(m["measure"])
        cfg = None
        if name in ("fdd", "rs"):
            cfg = FeatureConfig(selector=m.get("selector", "positive_evidence"),
                                k=int(m.get("k", 64)), aggregation=m.get("agg", "mean"),
                                seed=int(m.get("seed", 0)))
        measures.append((name, cfg, float(m.get("ridge", 0.0))))

    all_records = {i: [] for i in range(len(measures))}
    for model in spec["models"]:
        mid = model.get("model_id", "?")
        if not model.get("validation"):
            raise CLIError(f"{spec_path}: model {mid!r} has no validation manifest")
        datasets = model.get("datasets", {})
        for did in [spec["reference"], *spec["targets"]]:
            if did not in datasets:
                raise CLIError(f"{spec_path}: model {mid!r} has no manifest for dataset {did!r}")
        val = load_manifest(_resolve(base, model["validation"]), threads)
        threshold = validation_threshold(val)
        ref = load_manifest(_resolve(base, datasets[spec["reference"]]), threads)
        for tid in spec["targets"]:
            tgt = load_manifest(_resolve(base, datasets[tid]), threads)
            for i, (name, cfg, ridge) in enumerate(measures):
                res = _compute(name, ref, tgt, cfg, ridge)
                all_records[i].append(make_record(ref, tgt, res, threshold))

    records = [r for i in range(len(measures)) for r in all_records[i]]
    summaries = [evaluate_measure(all_records[i], pooled=pooled) for i in range(len(measures))]
    return records, summaries


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    records, summaries = run_grid(args.grid, max(1, args.threads), args.pooled)
    out = Path(args.out or "evaluation")
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.csv").write_text(records_to_csv(records))
    report = _report("evaluate", [args.grid], {"pooled": args.pooled, "threads": args.threads},
                     [s.as_dict() for s in summaries], started)
    (out / "summary.json").write_text(_dump(report))
    for s in summaries:
        label = s.measure + (f" [{s.config}]" if s.config else "")
        print(f"{label}: mean r = {s.mean_r:.3f} (std {s.std_r:.3f})")
    return 0


def _synth_cfg(args) -> SynthConfig:
    lo, hi = _int_list(args.patches)
    return SynthConfig(seed=args.seed, num_slides=args.slides, patches_per_slide=(lo, hi),
                       feature_dim=args.feature_dim, shift_level=args.shift,
                       label_noise=args.label_noise, tumor_fraction=args.tumor_fraction,
                       ensemble_size=args.ensemble, model_seed=args.model_seed,
                       noise_scale=args.noise_scale, evidence_dims=tuple(range(min(8, args.feature_dim))))


def cmd_synth(args) -> int:
    cfg = _synth_cfg(args)
    out = Path(args.out or "synth")
    if args.shift_grid is None:
        path = write_dataset(generate_dataset(cfg), out)
        print(f"wrote {path}")
        return 0
    grid = args.shift_grid
    models = []
    for val, ref, targets in benchmark_datasets(args.models, grid, cfg):
        mdir = out / ref.model_id
        entry = {"model_id": ref.model_id,
                 "validation": str(write_dataset(val, mdir / "validation").relative_to(out)),
                 "datasets": {}}
        for d in (ref, *targets):
            entry["datasets"][d.dataset_id] = str(write_dataset(d, mdir / d.dataset_id)
                                                   .relative_to(out))
        models.append(entry)
    targets = list(dict.fromkeys(f"shift-{level:g}" for level in grid[1:]))
    spec = {
        "reference": "shift-ref",
        "targets": targets,
        "measures": [{"measure": "fdd", "selector": "positive_evidence", "k": 64, "agg": "mean"}],
        "models": models,
        "synth_config": {"seed": cfg.seed, "slides": cfg.num_slides,
                         "patches": list(cfg.patches_per_slide), "feature_dim": cfg.feature_dim,
                         "shift_grid": list(grid), "models": args.models,
                         "noise_scale": cfg.noise_scale, "label_noise": cfg.label_noise,
                         "tumor_fraction": cfg.tumor_fraction, "ensemble_size": cfg.ensemble_size},
    }
    (out / "grid.json").write_text(_dump(spec))
    print(f"wrote {out / 'grid.json'} ({args.models} models, {len(grid)} shift levels)")
    return 0


def _common(parser, suppress: bool):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--out", default=default(None), help="output file or directory")
    parser.add_argument("--threads", type=int, default=default(1),
                        help="worker threads for loading slides")
    parser.add_argument("--seed", type=int, default=default(0),
                        help="seed for the random selector and synthetic data")


def _feature_flags(parser, multi_selector=False):
    if multi_selector:
        parser.add_argument("--selector", action="append",
                            help=f"one of {', '.join(SELECTORS)} (repeatable)")
    else:
        parser.add_argument("--selector", default="positive_evidence",
                            help=f"one of {', '.join(SELECTORS)}")
        parser.add_argument("--k", type=int, default=64, help="number of evidence patches")
    parser.add_argument("--agg", choices=("mean", "concat"), default="mean")
    parser.add_argument("--ridge", type=float, default=0.0,
                        help="diagonal added to covariances (fdd only)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="milshift", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    measure_names = [m.replace("_", "-") for m in MEASURES]

    s = sub.add_parser("validate", help="check manifests")
    _common(s, suppress=True)
    s.add_argument("manifests", nargs="+")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("summarize", help="store a Gaussian summary of one dataset")
    _common(s, suppress=True)
    s.add_argument("manifest")
    _feature_flags(s)
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("measure", help="compute one shift measure")
    _common(s, suppress=True)
    s.add_argument("--ref", required=True, help="reference manifest or summary (fdd)")
    s.add_argument("--tgt", required=True, help="target manifest")
    s.add_argument("--measure", default="fdd", choices=measure_names + list(MEASURES))
    _feature_flags(s)
    s.set_defaults(func=cmd_measure)

    s = sub.add_parser("sweep-k", help="shift measure over a list of K values")
    _common(s, suppress=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--tgt", required=True)
    s.add_argument("--measure", default="fdd", choices=("fdd", "rs"))
    _feature_flags(s, multi_selector=True)
    s.add_argument("--k-list", type=_int_list, default=list(DEFAULT_K_LIST))
    s.set_defaults(func=cmd_sweep_k)

    s = sub.add_parser("evaluate", help="correlation protocol from a grid spec")
    _common(s, suppress=True)
    s.add_argument("grid")
    s.add_argument("--pooled", action="store_true",
                   help="also report the correlation pooled over all models")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="write synthetic datasets")
    _common(s, suppress=True)
    s.add_argument("--slides", type=int, default=200)
    s.add_argument("--patches", default="50,150", help="min,max patches per slide")
    s.add_argument("--feature-dim", type=int, default=64)
    s.add_argument("--shift", type=float, default=0.0)
    s.add_argument("--noise-scale", type=float, default=1.0)
    s.add_argument("--label-noise", type=float, default=0.0)
    s.add_argument("--tumor-fraction", type=float, default=0.4)
    s.add_argument("--ensemble", type=int, default=4)
    s.add_argument("--model-seed", type=int, default=0)
    s.add_argument("--models", type=int, default=10, help="model variants (grid mode)")
    s.add_argument("--shift-grid", type=_float_list, default=None,
                   help=f"comma-separated shift levels; writes a full benchmark grid "
                        f"(e.g. {','.join(f'{x:g}' for x in DEFAULT_SHIFT_GRID)})")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, ManifestError, ValueError, FloatingPointError, OSError, KeyError) as exc:
        msg = str(exc) if not isinstance(exc, KeyError) else f"missing key {exc}"
        print(f"milshift {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
