"""Command-line entry points: gen, train, eval, dump and selfcheck.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .anchors import AnchorConfig, make_anchors
from .autodiff import CheckpointError, ParamStore
from .config import RunConfig
from .costvolume import dump_volume, dump_volume_csv
from .evaluation import evaluate_example, evaluate_set, write_reports
from .network import NMPModel
from .pipeline import inference_samples, prepare_example, prepare_examples
from .planner import trajectory_costs, trajectory_ids
from .scenario import PARTITIONS, GenerationError, ScenarioFormatError, load, load_partition, write_set
from .train import NumericalError, train
from .workers import worker_count

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CONFIG_NAME = "config.json"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ------------------------------------------------------------------ commands


def run_gen(cfg: RunConfig, out, workers: int = 1) -> dict:
    out = Path(out)
    counts = {"train": cfg.data.n_train, "val": cfg.data.n_val, "test": cfg.data.n_test}
    written = write_set(out, cfg.scenario, counts, cfg.data.root_seed, workers)
    cfg.save(out / CONFIG_NAME)
    return written


def _partition(data, name: str) -> list:
    d = Path(data) / name
    if not d.is_dir():
        raise DataError(f"missing partition directory {d}")
    scenarios = load_partition(d)
    if not scenarios:
        raise DataError(f"no scenarios in {d}")
    return scenarios


def new_model(cfg: RunConfig) -> NMPModel:
    return NMPModel(cfg.model_config(), seed=cfg.model.init_seed)


def load_model(cfg: RunConfig, checkpoint) -> NMPModel:
    path = Path(checkpoint)
    if not path.is_file():
        raise DataError(f"missing checkpoint {path}")
    model = new_model(cfg)
    model.load_params(ParamStore.load(path))
    return model


def run_train(cfg: RunConfig, data, out, workers: int = 1, progress=None) -> dict:
    out = Path(out)
    scenarios = _partition(data, "train")
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / CONFIG_NAME)
    examples = prepare_examples(scenarios, cfg, workers)
    model = new_model(cfg)
    try:
        result = train(model, examples, cfg, log_path=out / "train_log.csv", progress=progress)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    model.params.save(out / "last.nmpc")
    best = new_model(cfg)
    best.params.restore(result.best_params)
    best.params.save(out / "best.nmpc")
    summary = {
        "config_digest": cfg.digest(),
        "steps": cfg.train.steps,
        "best_step": result.best_step,
        "best_epoch_loss": result.best_loss,
        "excluded_scenarios": result.excluded,
        "n_train": len(examples) - len(result.excluded),
        "log_columns": result.columns,
    }
    (out / "train_summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return summary


def run_eval(cfg: RunConfig, checkpoint, data, out, partition: str = "test", workers: int = 1) -> dict:
    scenarios = _partition(data, partition)
    model = load_model(cfg, checkpoint)
    result = evaluate_set(model, scenarios, cfg, workers=workers)
    out = Path(out)
    summary = write_reports(result, out, cfg.digest())
    cfg.save(out / CONFIG_NAME)
    return summary


def run_dump(cfg: RunConfig, checkpoint, scenario_path, out) -> dict:
    sc = load(scenario_path)
    model = load_model(cfg, checkpoint)
    anchors = make_anchors(cfg.roi, AnchorConfig())
    ex = prepare_example(sc, cfg, anchors)
    outcome, dets, source, _, volume = evaluate_example(model, ex, cfg, anchors)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / CONFIG_NAME)
    dump_volume(volume, out / "cost_volume.nmpv")
    dump_volume_csv(volume, out / "cost_volume.csv", cfg.roi)

    with open(out / "detections.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["det", "score", "step", "x", "y", "w", "h", "heading"])
        if dets is not None:
            for i in range(len(dets)):
                for s, box in enumerate(dets.tracks[i]):
                    wr.writerow([i, repr(float(dets.scores[i])), s, *(repr(float(v)) for v in box)])

    samples = inference_samples(sc, cfg)
    costs = trajectory_costs(volume, samples, cfg.roi)
    ids = trajectory_ids(samples)
    T = sc.horizon
    with open(out / "samples.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["id", "kind", "cost", "chosen"] + [f"{a}{t}" for t in range(1, T + 1) for a in ("x", "y")])
        for tr, tid, c in zip(samples, ids, costs):
            xy = [repr(float(v)) for v in tr.xy.reshape(-1)]
            wr.writerow([int(tid), tr.meta.get("kind", ""), repr(float(c)), int(tid == outcome.chosen_id), *xy])

    plan_info = {
        "scenario_seed": sc.seed,
        "archetype": sc.archetype,
        "chosen_id": outcome.chosen_id,
        "chosen_cost": float(costs[list(ids).index(outcome.chosen_id)]),
        "manual_chosen_id": outcome.manual_chosen_id,
        "manual_source": source,
        "n_detections": 0 if dets is None else len(dets),
        "volume_min": float(volume.min()),
        "volume_max": float(volume.max()),
    }
    (out / "plan.json").write_text(json.dumps(plan_info, sort_keys=True, indent=2) + "\n")
    return plan_info


# ------------------------------------------------------------------ argparse


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="run config JSON (defaults: sibling config.json, then built-ins)")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="override one config value (JSON-parsed); repeatable",
    )
    p.add_argument("--workers", type=int, default=None, help="worker processes (capped by NMP_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nmp", description="Desk-scale neural motion planner.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate train/val/test scenario sets")
    _config_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, help="root dataset seed")
    for part in PARTITIONS:
        p.add_argument(f"--n-{part}", type=int, dest=f"n_{part}")

    p = sub.add_parser("train", help="train on the train partition")
    _config_args(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int, help="training seed (shuffle and negatives)")
    p.add_argument("--no-plan-loss", action="store_true")
    p.add_argument("--no-perception-loss", action="store_true")
    p.add_argument("--no-penalty", action="store_true", help="drop the rule-violation term from the margin")
    p.add_argument("--sweeps", type=int, choices=(5, 10), help="past LiDAR sweeps in the input")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint and the baselines")
    _config_args(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--partition", choices=PARTITIONS, default="test")
    p.add_argument("--manual-source", choices=("detections", "ground_truth"))

    p = sub.add_parser("dump", help="write cost volume, detections and scored samples for one scenario")
    _config_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("selfcheck", help="run the gradient and oracle suites")
    p.add_argument("--full", action="store_true", help="acceptance-sized case counts")
    p.add_argument("--seed", type=int, default=0)
    return parser


def resolve_config(args, *fallbacks) -> RunConfig:
    path = args.config
    if path is None:
        path = next((Path(f) for f in fallbacks if f is not None and Path(f).is_file()), None)
    try:
        cfg = RunConfig.load(path) if path is not None else RunConfig()
        overrides = list(args.overrides)
        for flag, key, value in _flag_overrides(args):
            if value is not None:
                overrides.append(f"{key}={json.dumps(value)}")
        return cfg.with_overrides(overrides)
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {exc.filename}") from exc
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc


def _flag_overrides(args):
    cmd = args.command
    if cmd == "gen":
        yield "seed", "data.root_seed", args.seed
        for part in PARTITIONS:
            yield part, f"data.n_{part}", getattr(args, f"n_{part}")
    elif cmd == "train":
        yield "steps", "train.steps", args.steps
        yield "seed", "train.seed", args.seed
        yield "sweeps", "roi.T_prime", args.sweeps
        yield "no-plan-loss", "train.plan_loss", False if args.no_plan_loss else None
        yield "no-perception-loss", "train.perception_loss", False if args.no_perception_loss else None
        yield "no-penalty", "train.penalty", False if args.no_penalty else None
    elif cmd == "eval":
        yield "manual-source", "eval.manual_source", args.manual_source


def _sibling_config(path) -> Optional[Path]:
    return Path(path).parent / CONFIG_NAME if path is not None else None


def _cmd_gen(args) -> int:
    cfg = resolve_config(args)
    written = run_gen(cfg, args.out, worker_count(args.workers))
    print("  ".join(f"{k}: {v}" for k, v in written.items()))
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = resolve_config(args, Path(args.data) / CONFIG_NAME)
    if args.no_plan_loss and args.no_perception_loss:
        raise UsageError("--no-plan-loss and --no-perception-loss leave nothing to train")
    every = max(1, cfg.train.steps // 20)

    def progress(step, row):
        if not args.quiet and (step % every == 0 or step == cfg.train.steps - 1):
            cols = " ".join(f"{k}={row[k]:.4g}" for k in ("perception", "planning", "total") if k in row)
            print(f"step {step:5d} {cols}", flush=True)

    summary = run_train(cfg, args.data, args.out, worker_count(args.workers), progress)
    print(f"best step {summary['best_step']} (epoch loss {summary['best_epoch_loss']:.4g}); wrote {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = resolve_config(args, _sibling_config(args.checkpoint))
    summary = run_eval(cfg, args.checkpoint, args.data, args.out, args.partition, worker_count(args.workers))
    for name, rep in summary["planners"].items():
        l2 = rep["l2_at"]["3"]
        col = rep["collision_rate_at"]["3"]
        lane = rep["lane_violation_at"]["3"]
        print(f"{name:14s} L2@3s {l2:7.3f}  collision@3s {col:.3f}  lane@3s {lane:.3f}")
    if "detection_map" in summary:
        print(f"detection mAP {summary['detection_map']:.3f}")
    return EXIT_OK


def _cmd_dump(args) -> int:
    cfg = resolve_config(args, _sibling_config(args.checkpoint))
    info = run_dump(cfg, args.checkpoint, args.scenario, args.out)
    print(f"chosen trajectory {info['chosen_id']} (cost {info['chosen_cost']:.4g}); wrote {args.out}")
    return EXIT_OK


def _cmd_selfcheck(args) -> int:
    from .selfcheck import run_all

    results = run_all(full=args.full, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "dump": _cmd_dump,
    "selfcheck": _cmd_selfcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"nmp: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"nmp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ScenarioFormatError, CheckpointError, GenerationError, OSError) as exc:
        print(f"nmp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
