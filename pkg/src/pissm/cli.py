"""Command-line entry point: ``pissm fetch|prepare|train|evaluate|predict|export|bench|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from importlib import resources
from pathlib import Path


from . import edge
from .config import RunConfig, help_text
from .evaluate import REFERENCE_R2, REFERENCE_RMSE, evaluate_predictions, stress_test, text_table, write_predictions_csv, write_report_json
from .features import IngestError, ingest, load_dataset, prepare, prepare_timeline, read_csv, save_dataset, window_inputs
from .model import ModelFormatError, deserialize, predict_physical_set, serialize
from .power import fetch_year
from .train import TrainingError, train

log = logging.getLogger("pissm")

EXIT_OK, EXIT_FAIL, EXIT_MISSING = 0, 1, 2


class MissingPrerequisite(RuntimeError):
    pass


def fixture_path(name: str) -> Path:
    return Path(resources.files("pissm") / "data" / name)


def parse_years(text: str) -> list[int]:
    """``2010..2015`` -> [2010, ..., 2015]; a single year is accepted too."""
    if ".." in text:
        a, b = text.split("..", 1)
        a, b = int(a), int(b)
    else:
        a = b = int(text)
    if a > b:
        raise argparse.ArgumentTypeError(f"empty year range {text!r}")
    return list(range(a, b + 1))


def _need(path, what: str, hint: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisite(f"{what} not found at {path}; {hint}")
    return path


def _resolve_source(cfg: RunConfig, config_path) -> Path | None:
    if not cfg.data_source:
        return None
    p = Path(cfg.data_source)
    if not p.is_absolute() and config_path is not None:
        beside = Path(config_path).parent / p
        if beside.exists():
            return beside
    return p


def _load_model(cfg: RunConfig):
    blob = _need(cfg.model_file, "model file", "run `pissm train` first").read_bytes()
    return blob, *deserialize(blob)


# ------------------------------------------------------------- commands


def cmd_fetch(cfg: RunConfig, args) -> int:
    years = args.years or cfg.all_years()
    cache = cfg.resolved_cache_dir()
    failed = []
    for y in years:
        if y in cfg.excluded:
            warnings.warn(f"{y} is excluded from every split for data sparsity; fetched but flagged", UserWarning, stacklevel=1)
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=2) as pool:
        futures = {y: pool.submit(fetch_year, cfg.latitude, cfg.longitude, y, cache) for y in years}
    downloaded = 0
    for y, fut in futures.items():
        try:
            _, got = fut.result()
            downloaded += got
            log.info("%d: %s", y, "downloaded" if got else "cached")
        except IngestError as exc:
            failed.append(y)
            log.error("%s", exc)
    print(f"fetch: {len(years) - len(failed)}/{len(years)} years in {cache} ({downloaded} downloaded)")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_prepare(cfg: RunConfig, args) -> int:
    source = _resolve_source(cfg, args.config)
    if source is not None:
        rows = ingest(_need(source, "data source", "check data_source in the config"))
    else:
        years = args.years or cfg.all_years()
        cache = cfg.resolved_cache_dir()
        from .power import cache_stem

        missing = [y for y in years if not (cache / f"{cache_stem(cfg.latitude, cfg.longitude, y)}.csv").exists()]
        if missing:
            raise MissingPrerequisite(f"years {missing} not cached in {cache}; run `pissm fetch` first")
        rows = ingest({"latitude": cfg.latitude, "longitude": cfg.longitude, "years": years, "cache_dir": cache})
    ds = prepare(rows, cfg.site(), cfg.split_spec(), cfg.max_gap)
    ds.meta["source"] = str(source) if source is not None else "power-cache"
    out = Path(args.out or cfg.dataset_file)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    load_dataset(out)
    counts = {k: len(ds.samples(k)) for k in ds.splits}
    print(f"prepare: wrote {out} samples={counts}")
    return EXIT_OK


def history_path(model_file) -> Path:
    p = Path(model_file)
    return p.with_name(p.name + ".history.csv")


def cmd_train(cfg: RunConfig, args) -> int:
    ds = load_dataset(_need(cfg.dataset_file, "dataset", "run `pissm prepare` first"))
    model_cfg, train_cfg = cfg.model_config(), cfg.train_config()
    out = Path(args.out or cfg.model_file)
    out.parent.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    try:
        params, hist = train(ds.samples("train"), ds.samples("val"), model_cfg, train_cfg, stats=ds.stats)
    except TrainingError as exc:
        if exc.checkpoint is not None:
            out.write_bytes(serialize(exc.checkpoint, ds.stats))
        log.error("training failed: %s (best checkpoint saved)", exc)
        return EXIT_FAIL
    out.write_bytes(serialize(params, ds.stats))
    deserialize(out.read_bytes())
    hist.write_csv(history_path(out))
    print(
        f"train: wrote {out} and {history_path(out)} epochs={len(hist.val_loss)} "
        f"best_val={min(hist.val_loss):.6g} in {time.perf_counter() - t0:.1f}s"
    )
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    ds = load_dataset(_need(cfg.dataset_file, "dataset", "run `pissm prepare` first"))
    _, params, stats, _ = _load_model(cfg)
    out = Path(args.out or cfg.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    site = ds.site
    reports = {}
    test = ds.samples("test_internal")
    pred = predict_physical_set(test, params, stats)
    reports["test_internal"] = evaluate_predictions("test_internal", pred, test.y_raw, test.times, site)
    write_predictions_csv(out / "predictions_test_internal.csv", test.times, test.y_raw, pred)
    if "stress" in ds.splits:
        spec = ds.split_spec
        years = range(spec.stress_range[0], spec.stress_range[1] + 1)
        stress = ds.samples("stress")
        rep, spred = stress_test(params, stats, stress, site, years)
        reports["stress"] = rep
        write_predictions_csv(out / "predictions_stress.csv", stress.times, stress.y_raw, spred)
        for y in rep.flagged_years:
            log.warning("stress year %d has no valid samples", y)
    write_report_json(out / "report.json", reports)
    (out / "report.txt").write_text(text_table(reports) + "\n")
    print(text_table(reports))
    bad = [r.split for r in reports.values() if r.night_violation_count or r.negative_count]
    if bad:
        log.error("physical consistency violated in %s", bad)
        return EXIT_FAIL
    return EXIT_OK


def cmd_predict(cfg: RunConfig, args) -> int:
    window = _need(args.window, "input window", "pass a CSV with 24 hourly rows")
    blob, _, stats, model_cfg = _load_model(cfg)
    site = cfg.site()
    tl = prepare_timeline(read_csv(window), site, cfg.max_gap)
    X, g_sza, g_kt, target, night = window_inputs(tl, stats, site)
    arena = edge.load(blob)
    value = arena.predict_step(X, g_sza, g_kt, night)
    result = {"target_time": f"{target}:00:00Z", "ghi_forecast": value, "is_night": night}
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2))
    print(f"{result['target_time']} {value:.4f}")
    return EXIT_OK


def cmd_export(cfg: RunConfig, args) -> int:
    blob, params, stats, model_cfg = _load_model(cfg)
    if stats is None:
        raise ModelFormatError("model carries no normalization stats; cannot export for inference")
    edge.load(blob)
    out = Path(args.out or Path(cfg.model_file).with_suffix(".pism"))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(serialize(params, stats, model_cfg))
    print(f"export: wrote {out} ({out.stat().st_size} bytes)")
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args) -> int:
    blob, *_ = _load_model(cfg)
    arena = edge.load(blob)
    result = edge.bench(arena, cfg.bench_iters, seed=cfg.seed)
    result["model_bytes"] = len(blob)
    out = Path(args.out or Path(cfg.report_dir) / "bench.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result, indent=2))
    print(json.dumps(result, indent=2))
    return EXIT_OK if result["allocations"] == 0 else EXIT_FAIL


def cmd_report(cfg: RunConfig, args) -> int:
    report_dir = Path(cfg.report_dir)
    data = json.loads(_need(report_dir / "report.json", "evaluation report", "run `pissm evaluate` first").read_text())
    bench_file = report_dir / "bench.json"
    bench = json.loads(bench_file.read_text()) if bench_file.exists() else None
    lines = [f"{'split':<20}{'n':>8}{'rmse':>10}{'r2':>9}{'day_rmse':>10}{'day_r2':>9}{'ref_rmse':>12}{'ref_r2':>10}"]

    def fmt(v, spec):
        return "-" if v is None else format(v, spec)

    def add(r):
        lines.append(
            f"{r['split']:<20}{r['n_samples']:>8}{fmt(r['rmse'], '.2f'):>10}{fmt(r['r2'], '.4f'):>9}"
            f"{fmt(r['daytime']['rmse'], '.2f'):>10}{fmt(r['daytime']['r2'], '.4f'):>9}"
            f"{REFERENCE_RMSE:>12.2f}{REFERENCE_R2:>10.3f}"
        )

    for rep in data.values():
        add(rep)
        for sub in rep.get("per_year", {}).values():
            add(sub)
    if bench is not None:
        lines.append("")
        lines.append(
            f"edge: mean {bench['mean_ms']:.3f} ms/step, p95 {bench['p95_ms']:.3f} ms, "
            f"allocations {bench['allocations']}, arena {bench['total_bytes']} B, model {bench.get('model_bytes', '-')} B"
        )
    text = "\n".join(lines) + "\n"
    out = Path(args.out or report_dir / "summary.txt")
    out.write_text(text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "fetch": (cmd_fetch, "download POWER hourly data into the cache (idempotent)"),
    "prepare": (cmd_prepare, "clean, featurize, split and normalize into a dataset file"),
    "train": (cmd_train, "train the model; writes the model file and a history CSV"),
    "evaluate": (cmd_evaluate, "metrics on the internal test and stress splits, with prediction CSVs"),
    "predict": (cmd_predict, "forecast the hour after a 24-hour input window"),
    "export": (cmd_export, "write a validated model binary for edge inference"),
    "bench": (cmd_bench, "edge latency, memory and allocation benchmark as JSON"),
    "report": (cmd_report, "consolidated metrics table with reference columns"),
}


def build_parser() -> argparse.ArgumentParser:
    epilog = help_text()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="override the seed key")
    common.add_argument("--years", type=parse_years, help="year range A..B (fetch, prepare)")
    common.add_argument("--out", help="output path for the command")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="pissm",
        description="Physics-informed state space forecasting of next-hour GHI.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, summary) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=summary, description=summary, epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "predict":
            p.add_argument("--window", required=True, help="CSV with 24 consecutive hourly rows")
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.seed is not None:
        out["seed"] = args.seed
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config, _overrides(args))
        return COMMANDS[args.command][0](cfg, args)
    except MissingPrerequisite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (IngestError, ModelFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
