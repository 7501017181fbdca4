"""Command-line front end."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ConfigError, Params, coerce
from .generate import PACKAGED, scenario_path
from .grouping import ALGORITHMS, DIRECTIONS
from .interference import (DEFAULT_DIMS, IntentNet, TrainingError, mean_loss, read_samples_csv,
                           straight_line_samples, train_intent, write_samples_csv)
from .metrics import scaling_bench, structure_csv
from .pipeline import Episode, RunConfig, dump_json, resolve_params, run_episode
from .world import ScenarioError, load_scenario, substream

logger = logging.getLogger("iakrc")

EXIT_OK, EXIT_CONFIG, EXIT_SCENARIO, EXIT_RUNTIME = 0, 2, 3, 4


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _scenario(name: str) -> str:
    """Accept a path or the short name of a packaged scenario."""
    if not os.path.exists(name) and name in PACKAGED:
        return str(scenario_path(name))
    return name


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = coerce(key.strip(), value.strip())
    if getattr(args, "k", None) is not None:
        out["k"] = coerce("k", args.k)
    if getattr(args, "m", None) is not None:
        out["leaders"] = coerce("leaders", args.m)
    return out


def _emit(doc, out: Optional[str]) -> None:
    text = json.dumps(doc, sort_keys=True, indent=1) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _episode(args, algorithms: Sequence[str]) -> Episode:
    world = load_scenario(_scenario(args.scenario), seed=args.seed)
    params = resolve_params(world, _overrides(args))
    ep = Episode(world, params, algorithms, args.interference_enabled)
    for _ in range(args.at_step):
        if ep.finished:
            break
        ep.step()
    return ep


def _cell_key(c) -> str:
    return f"{c[0]},{c[1]}"


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    config = RunConfig(
        scenario=_scenario(args.scenario), algorithm=args.algo, steps=args.steps, seed=args.seed,
        interference_enabled=args.interference_enabled, out_dir=args.out, overrides=_overrides(args),
        emit_heatmaps=args.emit_heatmaps, full_rebuild=args.full_rebuild, intent_net=args.intent_net,
        direction=args.direction,
    )
    n = args.parallel_episodes
    if n < 1:
        raise ConfigError("--parallel-episodes must be at least 1")
    if n == 1:
        ep = run_episode(config)
        print(json.dumps(ep.summary(), sort_keys=True))
        return EXIT_OK
    base = load_scenario(config.scenario, seed=config.seed).seed
    configs = [replace(config, seed=base + k, out_dir=str(Path(args.out) / f"episode_{k:03d}")) for k in range(n)]
    with ProcessPoolExecutor(max_workers=min(n, os.cpu_count() or 1)) as pool:
        summaries = list(pool.map(_run_summary, configs))
    for cfg, summary in zip(configs, summaries):
        print(json.dumps({"seed": cfg.seed, **summary}, sort_keys=True))
    return EXIT_OK


def _run_summary(config: RunConfig) -> dict:
    return run_episode(config).summary()


def cmd_reach(args) -> int:
    ep = _episode(args, ("iakrc",))
    graph, table = ep.observe()
    if args.agent not in table.agents:
        raise ConfigError(f"agent {args.agent} is not an alive ally")
    res = table.results[args.agent]
    members = sorted(table.sets[args.agent].members)
    doc = {
        "source": list(res.source),
        "K": ep.params.k,
        "step": ep.world.step,
        "members": [list(c) for c in members],
        "dist": {_cell_key(c): d for c, d in sorted(res.dist.items()) if d <= ep.params.k},
        "expansions": res.expansions,
    }
    _emit(doc, args.out)
    if args.heatmap:
        for y in range(graph.height):
            row = []
            for x in range(graph.width):
                d = res.dist.get((x, y))
                if graph.obstacle[y, x]:
                    row.append("#")
                elif d is None or d > ep.params.k:
                    row.append(".")
                else:
                    row.append(str(min(9, int(d))))
            print("".join(row))
    return EXIT_OK


def cmd_group(args) -> int:
    ep = _episode(args, (args.algo,))
    _, table = ep.observe()
    g = ep.group(args.algo, table)
    doc = g.to_json()
    doc["step"] = ep.world.step
    _emit(doc, args.out)
    return EXIT_OK


def cmd_bench_scale(args) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--sizes must be comma-separated integers, got {args.sizes!r}") from None
    world = load_scenario(_scenario(args.scenario), seed=args.seed)
    params = resolve_params(world, _overrides(args))
    report = scaling_bench(sizes, world, params, args.interference_enabled)
    text = report.csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_train_intent(args) -> int:
    seed = args.seed
    if args.data:
        samples = read_samples_csv(args.data)
    else:
        samples = straight_line_samples(args.samples, substream(seed, "lines"))
        if args.write_data:
            write_samples_csv(args.write_data, samples)
    if not samples:
        raise ConfigError("no training samples")
    params = Params().with_overrides(_overrides(args))
    net = IntentNet.load(args.init) if args.init else IntentNet.init(substream(seed, "intent-init"), DEFAULT_DIMS)
    history: list = []
    net = train_intent(net, samples, args.epochs, lr=params.learning_rate, batch_size=int(params.batch_size),
                       rng=substream(seed, "train"), history=history)
    final = mean_loss(net, np.stack([s.input for s in samples]), np.stack([s.target for s in samples]))
    if args.out:
        net.save(args.out)
    if args.loss_log:
        lines = ["epoch,loss"] + [f"{e},{l!r}" for e, l in history]
        Path(args.loss_log).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(json.dumps({"epochs": args.epochs, "samples": len(samples), "final_loss": final}, sort_keys=True))
    return EXIT_OK


def cmd_compare(args) -> int:
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    if len(algos) != 2 or any(a not in ALGORITHMS for a in algos) or algos[0] == algos[1]:
        raise ConfigError(f"--algos needs two distinct names from {ALGORITHMS}")
    world = load_scenario(_scenario(args.scenario), seed=args.seed)
    params = resolve_params(world, _overrides(args))
    ep = Episode(world, params, algos, args.interference_enabled)
    ep.run(args.steps)
    reports = {r.algorithm: r for r in ep.reports()}
    if len(reports) != 2:
        raise RuntimeError("episode ended before the first grouping")
    a, b = (reports[x] for x in algos)
    diff = {
        "algos": algos,
        "snapshots": a.snapshots,
        "iso_rate": {algos[0]: a.iso_rate, algos[1]: b.iso_rate, "delta": a.iso_rate - b.iso_rate},
        "lambda2_mean": {algos[0]: a.lambda2_mean, algos[1]: b.lambda2_mean, "delta": a.lambda2_mean - b.lambda2_mean},
        "lambda2_var": {algos[0]: a.lambda2_var, algos[1]: b.lambda2_var, "delta": a.lambda2_var - b.lambda2_var},
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "structure.csv").write_text(structure_csv([a, b]), encoding="utf-8")
        dump_json(diff, out / "compare.json")
    print(json.dumps(diff, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, scenario_default: Optional[str] = "maze32") -> None:
    p.add_argument("--scenario", default=scenario_default,
                   help=f"scenario file or packaged name ({', '.join(sorted(PACKAGED))})")
    p.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="hyperparameter override, repeatable")
    p.add_argument("--k", type=float, default=None, help="reachability horizon")
    p.add_argument("--m", type=int, default=None, help="number of leaders")
    p.add_argument("--interference-enabled", type=_bool, nargs="?", const=True, default=True,
                   metavar="BOOL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iakrc", description="Reachability-based grouping on grid worlds.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one episode and write its output tree")
    _common(p)
    p.add_argument("--algo", choices=ALGORITHMS, default="iakrc")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--out", default="out")
    p.add_argument("--emit-heatmaps", action="store_true")
    p.add_argument("--parallel-episodes", type=int, default=1)
    p.add_argument("--full-rebuild", action="store_true", help="recompute every reachable set each step")
    p.add_argument("--intent-net", default=None, help="trained intent net JSON")
    p.add_argument("--direction", choices=DIRECTIONS, default="leader")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("reach", help="K-step reachable set of one ally")
    _common(p)
    p.add_argument("--agent", type=int, required=True)
    p.add_argument("--at-step", type=int, default=0, help="advance the episode this many steps first")
    p.add_argument("--heatmap", action="store_true", help="print an ASCII distance map")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_reach)

    p = sub.add_parser("group", help="one grouping snapshot")
    _common(p)
    p.add_argument("--algo", choices=ALGORITHMS, default="iakrc")
    p.add_argument("--at-step", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_group)

    p = sub.add_parser("bench-scale", help="expansion counts against team size")
    _common(p, "scaling64")
    p.add_argument("--sizes", default="4,8,16,32,64")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench_scale)

    p = sub.add_parser("train-intent", help="train the attack-intent predictor")
    p.add_argument("--data", default=None, help="CSV of samples; straight-line samples are generated when absent")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--write-data", default=None)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", default=None, help="start from a saved net")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", default=None)
    p.add_argument("--loss-log", default=None)
    p.set_defaults(func=cmd_train_intent)

    p = sub.add_parser("compare", help="two groupers on one episode, structure reports side by side")
    _common(p)
    p.add_argument("--algos", default="iakrc,euclid")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("IAKRC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except (ValueError, RuntimeError, OSError, KeyError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
