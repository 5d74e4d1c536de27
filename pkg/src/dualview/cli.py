"""Command-line pipeline: generate, align, dereflect, evaluate, benchmark.

One JSON config drives every subcommand so a run is a reproducible
artifact; flags override only the seed, worker count, and output
directory. Exit codes: 0 ok, 1 runtime failure, 2 invalid config or
inputs, 3 metric threshold violated.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import AlignParams
from .dereflect import DereflectMethod, synthesize_transmission
from .flow import FlowParams, estimate_flow
from .imgcore import read_flo, read_image, write_flo, write_image
from .metrics import abs_warp_error, aggregate, epe, evaluate_sample, format_summary
from .synthgen import GenConfig, gen_dataset, load_sample, split_seed
from .warp import backward_warp

_TOP_KEYS = {
    "master_seed",
    "workers",
    "out",
    "dataset",
    "estimates",
    "sources",
    "thresholds",
    "gen",
    "flow",
    "align",
    "dereflect",
}
_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".pfm")


@dataclass
class RunConfig:
    """Resolved run parameters shared by every subcommand."""

    master_seed: int = 0
    workers: int = 1
    out: str | None = None
    dataset: str | None = None
    estimates: str | None = None
    sources: tuple = ()
    thresholds: dict = field(default_factory=dict)
    gen: GenConfig = field(default_factory=GenConfig)
    flow: FlowParams = field(default_factory=FlowParams)
    align: AlignParams = field(default_factory=AlignParams)
    dereflect: DereflectMethod = field(default_factory=DereflectMethod)


def parse_config(
    raw: dict, seed=None, workers=None, out=None
) -> tuple[RunConfig, list[str]]:
    """Build a RunConfig from the JSON dict, collecting every problem found."""
    problems: list[str] = []
    for key in sorted(set(raw) - _TOP_KEYS):
        problems.append(f"unknown config key {key!r}")

    def block(name, build, default):
        value = raw.get(name)
        if value is None:
            return default
        if not isinstance(value, dict):
            problems.append(f"{name} must be a JSON object")
            return default
        try:
            return build(value)
        except (TypeError, ValueError) as exc:
            problems.append(f"{name}: {exc}")
            return default

    cfg = RunConfig(
        gen=block("gen", GenConfig.from_dict, GenConfig()),
        flow=block("flow", lambda d: FlowParams(**d), FlowParams()),
        align=block("align", lambda d: AlignParams(**d), AlignParams()),
        dereflect=block("dereflect", lambda d: DereflectMethod(**d), DereflectMethod()),
    )

    master_seed = raw.get("master_seed", (raw.get("gen") or {}).get("master_seed", 0))
    if seed is not None:
        master_seed = seed
    if not isinstance(master_seed, int) or isinstance(master_seed, bool) or master_seed < 0:
        problems.append(f"master_seed must be a nonnegative integer, got {master_seed!r}")
        master_seed = 0
    cfg.master_seed = master_seed
    try:
        cfg.gen = dataclasses.replace(cfg.gen, master_seed=master_seed)
    except ValueError as exc:
        problems.append(f"gen: {exc}")

    cfg.workers = raw.get("workers", 1)
    if workers is not None:
        cfg.workers = workers
    if not isinstance(cfg.workers, int) or isinstance(cfg.workers, bool) or cfg.workers < 1:
        problems.append(f"workers must be an integer >= 1, got {cfg.workers!r}")
        cfg.workers = 1

    cfg.out = out if out is not None else raw.get("out")
    cfg.dataset = raw.get("dataset")
    cfg.estimates = raw.get("estimates")

    sources = raw.get("sources", [])
    if not isinstance(sources, (list, tuple)):
        problems.append("sources must be a list of paths")
        sources = []
    cfg.sources = tuple(str(s) for s in sources)

    thresholds = raw.get("thresholds", {})
    if not isinstance(thresholds, dict):
        problems.append("thresholds must be a JSON object")
        thresholds = {}
    cfg.thresholds = thresholds
    return cfg, problems


def _expand_sources(paths) -> list[str]:
    """Resolve files and directories to a flat, ordered list of image files."""
    files: list[str] = []
    for entry in paths:
        p = Path(entry)
        if p.is_dir():
            files.extend(
                str(q) for q in sorted(p.iterdir()) if q.suffix.lower() in _IMAGE_SUFFIXES
            )
        else:
            files.append(str(p))
    return files


def validate(cfg: RunConfig, command: str) -> list[str]:
    """Every problem with the config for this subcommand, all at once."""
    problems: list[str] = []
    if not cfg.out:
        problems.append("out directory is required (config key 'out' or --out)")

    if command in ("gen", "bench"):
        missing = [s for s in cfg.sources if not Path(s).exists()]
        for s in missing:
            problems.append(f"source path does not exist: {s}")
        mix = cfg.gen.source_mixture
        if (mix[0] > 0 or mix[1] > 0) and not missing:
            if len(_expand_sources(cfg.sources)) < 2:
                problems.append(
                    "gen mixture draws from the image pool but fewer than 2 "
                    "source images are configured"
                )

    if command in ("align", "dereflect", "eval"):
        if not cfg.dataset:
            problems.append("dataset directory is required (config key 'dataset')")
        elif not (Path(cfg.dataset) / "manifest.jsonl").exists():
            problems.append(f"no manifest.jsonl under {cfg.dataset}")

    if command == "eval":
        if not cfg.estimates:
            problems.append("estimates directory is required (config key 'estimates')")
        elif not Path(cfg.estimates).is_dir():
            problems.append(f"estimates directory does not exist: {cfg.estimates}")

    if command in ("eval", "bench"):
        for key, rule in cfg.thresholds.items():
            if (
                not isinstance(rule, dict)
                or not rule
                or not set(rule) <= {"min", "max"}
                or not all(isinstance(v, (int, float)) for v in rule.values())
            ):
                problems.append(
                    f"threshold {key!r} must be an object with numeric 'min' and/or 'max'"
                )
    return problems


# ----------------------------------------------------------------- plumbing


def _pmap(fn, items, workers: int) -> list:
    """Order-preserving map; results are independent of the worker count."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _read_manifest(dataset: Path) -> list[dict]:
    lines = (dataset / "manifest.jsonl").read_text().splitlines()
    return [json.loads(line) for line in lines if line.strip()]


def _json_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=float)


def _write_records(path: Path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(_json_line(rec) + "\n")


def _write_run_record(out: Path, command: str, cfg: RunConfig) -> None:
    """Capture the content-determining parameters of the run.

    Paths and worker counts are deliberately left out: they do not affect
    the produced bytes, and the record itself must stay byte-stable across
    reruns and machines.
    """
    record = {
        "subcommand": command,
        "master_seed": cfg.master_seed,
        "sources": list(cfg.sources),
        "thresholds": cfg.thresholds,
        "gen": cfg.gen.to_dict(),
        "flow": dataclasses.asdict(cfg.flow),
        "align": dataclasses.asdict(cfg.align),
        "dereflect": dataclasses.asdict(cfg.dereflect),
    }
    (out / f"run_{command}.json").write_text(
        json.dumps(record, sort_keys=True, indent=2, default=float) + "\n"
    )


def _item_rng(item: dict, index: int, cfg: RunConfig, stream: int) -> np.random.Generator:
    # derive from the sample's own seed so results are stable under
    # re-evaluation of any subset; stream separates align from dereflect
    base = int(item.get("seed", split_seed(cfg.master_seed, index)))
    return np.random.default_rng(split_seed(base, stream))


# -------------------------------------------------------------- subcommands


def cmd_gen(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    records = gen_dataset(
        cfg.gen, _expand_sources(cfg.sources), out, workers=cfg.workers
    )
    _write_run_record(out, "gen", cfg)
    kinds: dict[str, int] = {}
    for rec in records:
        kinds[rec["source_kind"]] = kinds.get(rec["source_kind"], 0) + 1
    print(f"wrote {len(records)} samples -> {out / 'manifest.jsonl'}")
    if records:
        parts = ", ".join(f"{k}: {v}" for k, v in sorted(kinds.items()))
        alphas = [rec["alpha"] for rec in records]
        print(f"source kinds {{{parts}}}; alpha mean {float(np.mean(alphas)):.3f}")
    return 0


def cmd_align(cfg: RunConfig) -> int:
    dataset = Path(cfg.dataset)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _read_manifest(dataset)

    def run(job):
        index, item = job
        sdir = dataset / item["dir"]
        i1 = read_image(sdir / "i1.pfm")
        i2 = read_image(sdir / "i2.pfm")
        fres = estimate_flow(i1, i2, cfg.flow, cfg.align, _item_rng(item, index, cfg, 1))
        write_flo(fres.flow, out / f"{item['id']}_f12est.flo")
        record = {
            "id": item["id"],
            "unreliable": bool(fres.unreliable),
            "align": dataclasses.asdict(fres.align),
            "epe_vs_gt": None,
        }
        gt_path = sdir / "f12.flo"
        if gt_path.exists():
            mean, median = epe(fres.flow, read_flo(gt_path)[0])
            record["epe_vs_gt"] = {"mean": mean, "median": median}
        return record

    records = _pmap(run, list(enumerate(manifest)), cfg.workers)
    _write_records(out / "align_records.jsonl", records)
    _write_run_record(out, "align", cfg)

    print(f"aligned {len(records)} pairs -> {out}")
    unreliable = sum(1 for r in records if r["unreliable"])
    if unreliable:
        print(f"warning: {unreliable} pairs flagged unreliable", file=sys.stderr)
    epes = [r["epe_vs_gt"]["mean"] for r in records if r["epe_vs_gt"]]
    if epes:
        print(f"EPE vs ground truth: mean {float(np.mean(epes)):.3f} px")
    return 0


def cmd_dereflect(cfg: RunConfig) -> int:
    dataset = Path(cfg.dataset)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _read_manifest(dataset)

    def run(job):
        index, item = job
        sdir = dataset / item["dir"]
        i1 = read_image(sdir / "i1.pfm")
        i2 = read_image(sdir / "i2.pfm")
        fres = estimate_flow(i1, i2, cfg.flow, cfg.align, _item_rng(item, index, cfg, 2))
        i21, valid = backward_warp(i2, fres.flow)
        est, poisson_info = synthesize_transmission(i1, i21, valid, cfg.dereflect)
        write_flo(fres.flow, out / f"{item['id']}_f12est.flo")
        write_image(est, out / f"{item['id']}_t1est.pfm")
        write_image(est, out / f"{item['id']}_t1est.png")
        # no wall-clock fields: reruns must rewrite these records identically
        return {
            "id": item["id"],
            "method": cfg.dereflect.kind,
            "unreliable": bool(fres.unreliable),
            "align": dataclasses.asdict(fres.align),
            "valid_fraction": float(np.asarray(valid).mean()),
            "poisson": poisson_info,
        }

    records = _pmap(run, list(enumerate(manifest)), cfg.workers)
    _write_records(out / "dereflect_records.jsonl", records)
    _write_run_record(out, "dereflect", cfg)
    print(f"dereflected {len(records)} pairs ({cfg.dereflect.kind}) -> {out}")
    return 0


def _aggregate_rows(rows: list[dict]) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    for key in rows[0]:
        vals = np.array([r[key] for r in rows], dtype=np.float64)
        out[key] = {"mean": float(vals.mean()), "median": float(np.median(vals))}
    return out


def _check_thresholds(summary: dict, thresholds: dict) -> tuple[list[str], list[str]]:
    """Returns (unknown_keys, violations) against dotted summary paths."""
    unknown: list[str] = []
    violations: list[str] = []
    for key, rule in thresholds.items():
        node = summary
        try:
            for part in key.split("."):
                node = node[part]
            value = float(node)
        except (KeyError, TypeError, ValueError):
            unknown.append(f"threshold key {key!r} not found in the summary")
            continue
        if "min" in rule and value < rule["min"]:
            violations.append(f"{key} = {value:.6g} below required min {rule['min']}")
        if "max" in rule and value > rule["max"]:
            violations.append(f"{key} = {value:.6g} above allowed max {rule['max']}")
    return unknown, violations


def cmd_eval(cfg: RunConfig) -> int:
    dataset = Path(cfg.dataset)
    est_dir = Path(cfg.estimates)
    out = Path(cfg.out)
    manifest = _read_manifest(dataset)

    missing = []
    for item in manifest:
        for suffix in ("_t1est.pfm", "_f12est.flo"):
            path = est_dir / f"{item['id']}{suffix}"
            if not path.exists():
                missing.append(path)
    if missing:
        for path in missing:
            print(f"missing estimate: {path}", file=sys.stderr)
        return 2

    def run(item):
        pair = load_sample(dataset / item["dir"])
        t1_est = read_image(est_dir / f"{item['id']}_t1est.pfm")
        flow_est = read_flo(est_dir / f"{item['id']}_f12est.flo")[0]
        report = evaluate_sample(pair, flow_est, t1_est)
        zeros = np.zeros_like(pair.F12)
        rows = {}
        for name, flow in (("zeros_flow", zeros), ("oracle_flow", pair.F12)):
            e_mean, e_median = epe(flow, pair.F12)
            a_mean, a_median = abs_warp_error(pair.T1, pair.T2, flow, pair.occl12)
            rows[name] = {
                "epe_mean": e_mean,
                "epe_median": e_median,
                "abs_mean": a_mean,
                "abs_median": a_median,
            }
        return item["id"], report, rows

    results = _pmap(run, manifest, cfg.workers)
    reports = [report for _, report, _ in results]
    summary = {
        "n_samples": len(reports),
        "estimate": aggregate(reports),
        "baselines": {
            name: _aggregate_rows([rows[name] for _, _, rows in results])
            for name in ("zeros_flow", "oracle_flow")
        },
    }

    out.mkdir(parents=True, exist_ok=True)
    _write_records(
        out / "reports.jsonl",
        [{"id": sid, **report.to_dict()} for sid, report, _ in results],
    )
    (out / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2, default=float) + "\n"
    )

    names = ("epe_mean", "epe_median", "abs_mean", "abs_median")
    lines = [
        f"estimate metrics over {summary['n_samples']} samples",
        format_summary(summary["estimate"]),
        "",
        "flow baselines (mean over samples)",
        f"{'row':<12}" + "".join(f"{n:>12}" for n in names),
    ]
    for name in ("zeros_flow", "oracle_flow"):
        row = summary["baselines"][name]
        lines.append(f"{name:<12}" + "".join(f"{row[n]['mean']:>12.4f}" for n in names))
    text = "\n".join(lines)
    (out / "summary.txt").write_text(text + "\n")
    _write_run_record(out, "eval", cfg)
    print(text)

    unknown, violations = _check_thresholds(summary, cfg.thresholds)
    if unknown:
        for msg in unknown:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    if violations:
        for msg in violations:
            print(f"threshold violated: {msg}", file=sys.stderr)
        return 3
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    """Generate, dereflect, and evaluate in one pass under a single out dir."""
    out = Path(cfg.out)
    stages = (
        ("gen", cmd_gen, {"out": str(out / "dataset")}),
        (
            "dereflect",
            cmd_dereflect,
            {"out": str(out / "estimates"), "dataset": str(out / "dataset")},
        ),
        (
            "eval",
            cmd_eval,
            {
                "out": str(out / "eval"),
                "dataset": str(out / "dataset"),
                "estimates": str(out / "estimates"),
            },
        ),
    )
    for name, fn, overrides in stages:
        stage_cfg = dataclasses.replace(cfg, **overrides)
        t0 = time.perf_counter()
        rc = fn(stage_cfg)
        print(f"bench stage {name}: {time.perf_counter() - t0:.1f} s")
        if rc != 0:
            return rc
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "align": cmd_align,
    "dereflect": cmd_dereflect,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def _build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True, help="path to the JSON run config")
    shared.add_argument("--seed", type=int, default=None, help="override master_seed")
    shared.add_argument(
        "--workers", type=int, default=None, help="override the worker count"
    )
    shared.add_argument("--out", default=None, help="override the output directory")
    parser = argparse.ArgumentParser(
        prog="dualview",
        description="Synthetic dual-view reflection-removal pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("gen", "generate a synthetic dual-view dataset"),
        ("align", "estimate reflection-tolerant flow for each pair"),
        ("dereflect", "recover transmission estimates for each pair"),
        ("eval", "score estimates against ground truth"),
        ("bench", "gen + dereflect + eval under one output directory"),
    ):
        sub.add_parser(name, parents=[shared], help=text)
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0

    config_path = Path(args.config)
    try:
        raw = json.loads(config_path.read_text())
    except OSError:
        print(f"config error: cannot read config file {config_path}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"config error: config is not valid JSON: {exc}", file=sys.stderr)
        return 2
    if not isinstance(raw, dict):
        print("config error: top level must be a JSON object", file=sys.stderr)
        return 2

    cfg, problems = parse_config(raw, seed=args.seed, workers=args.workers, out=args.out)
    problems += validate(cfg, args.command)
    if problems:
        for problem in problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2

    try:
        return _COMMANDS[args.command](cfg)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
