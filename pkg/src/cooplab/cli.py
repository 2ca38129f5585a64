"""Command-line front door for the laboratory.

One executable, eight subcommands:

    gen         sample kitchen layouts to a directory
    train       run a training recipe (self-play, population, finetune)
    eval-xp     cross-play a pool of checkpoints over a task set
    eval-meta   payoff matrix between several pools (meta-game)
    replicator  integrate replicator dynamics over a payoff matrix
    stats       survey-table statistics (alpha, correlations, means)
    replay      re-simulate a stored human-play session and verify it
    serve       run the human-play session server

Every run writes ``manifest.json`` into its output directory: the
resolved configuration, the seed, and a sha256 per artifact, so a rerun
from the manifest reproduces the same bytes (timestamps aside).

Exit codes: 0 success, 1 runtime failure (diagnostic on stderr),
2 usage error (argparse).
"""

from __future__ import annotations

import argparse
import dataclasses
import glob as globmod
import hashlib
import json
import os
import sys

import numpy as np
import yaml

from . import evaluation, procgen
from .core import ConfigError
from .dual_dest import DualDestTask, dd_fixed_task, dd_sample_task
from .overcooked import OvercookedConfig
from .training import (PPOConfig, TrainRunSpec, build_selfplay_pool, finetune,
                       train_fcp, train_selfplay)

ALGO_NAMES = {"ippo": "ippo-selfplay", "ippo-selfplay": "ippo-selfplay",
              "cec": "cec", "fcp": "fcp", "finetune": "finetune",
              "pool": "pool"}


# ------------------------------------------------------------------ manifest

def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


def write_manifest(out_dir: str, command: str, config: dict,
                   artifacts: list[str]) -> str:
    """Record what produced the artifacts in out_dir. Paths are stored
    relative to the directory so the tree can be moved wholesale."""
    entries = {os.path.relpath(p, out_dir): _sha256(p) for p in sorted(artifacts)}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump({"command": command, "config": config,
                   "artifacts": entries}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_config_file(path: str) -> dict:
    """Accept a plain mapping (yaml/json) or a previous manifest."""
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} is not a mapping")
    if "command" in raw and "config" in raw:
        raw = raw["config"]
    return raw


def _apply_config_defaults(args: argparse.Namespace, parser: argparse.ArgumentParser):
    """Fill unset options from --config; explicit flags win."""
    if not getattr(args, "config", None):
        return
    stored = _load_config_file(args.config)
    defaults = {a.dest: parser.get_default(a.dest) for a in parser._actions}
    for key, value in stored.items():
        dest = key.replace("-", "_")
        if dest in ("config", "command"):
            continue
        if hasattr(args, dest) and getattr(args, dest) == defaults.get(dest):
            setattr(args, dest, value)


# ------------------------------------------------------------------ helpers

def _parse_sets(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        if value.startswith("@"):        # file indirection, resolved downstream
            out[key.strip()] = value
            continue
        try:
            parsed = yaml.safe_load(value)
        except yaml.YAMLError:
            parsed = value
        if isinstance(parsed, str):
            try:                         # yaml 1.1 misses floats like 1e-8
                parsed = float(parsed)
            except ValueError:
                pass
        out[key.strip()] = parsed
    return out


def _read_text(value: str) -> str:
    """Values beginning with @ name a file to read."""
    if isinstance(value, str) and value.startswith("@"):
        with open(value[1:]) as fh:
            return fh.read()
    return value


def _layout_line(value: str) -> str:
    text = _read_text(value)
    if "\n" in text.strip():
        return procgen.encode_layout_line(procgen.decode_layout(text))
    return text.strip()


def _layout_dir_lines(path: str) -> list[str]:
    files = sorted(globmod.glob(os.path.join(path, "*.txt")))
    if not files:
        raise ConfigError(f"no layout files under {path}")
    return [_layout_line("@" + f) for f in files]


def _expand_ckpts(spec: str) -> list[str]:
    """A checkpoint list: comma-separated paths, globs, or directories."""
    paths: list[str] = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if os.path.isdir(part):
            paths.extend(sorted(globmod.glob(os.path.join(part, "**", "*.ckpt"),
                                             recursive=True)))
        elif any(ch in part for ch in "*?["):
            paths.extend(sorted(globmod.glob(part)))
        else:
            paths.append(part)
    if not paths:
        raise ConfigError(f"no checkpoints matched {spec!r}")
    return paths


def _resolve_tasks(spec: str, seed: int, horizon: int):
    """Task-set specs shared by the eval subcommands.

    dd-fixed            the canonical held-out grid world
    dd-procgen:N        N sampled grid worlds (fixed task excluded)
    dd-file:PATH        encoded grid-world tasks, one per line
    oc-held-out         the five classic kitchens
    oc-dir:PATH         every layout file in a directory
    oc-procgen:N        N sampled kitchens (classics excluded)
    """
    kind, _, arg = spec.partition(":")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A5C]))
    if kind == "dd-fixed":
        return [dd_fixed_task(horizon=horizon)]
    if kind == "dd-procgen":
        held = (dd_fixed_task(horizon=horizon),)
        return [dd_sample_task(rng, held_out=held, horizon=horizon)
                for _ in range(int(arg))]
    if kind == "dd-file":
        with open(arg) as fh:
            return [DualDestTask.decode(line) for line in fh
                    if line.strip()]
    if kind == "oc-held-out":
        return list(procgen.held_out_layouts())
    if kind == "oc-dir":
        return [procgen.decode_layout_line(line)
                for line in _layout_dir_lines(arg)]
    if kind == "oc-procgen":
        templates = procgen.load_templates()
        held = procgen.held_out_layouts()
        return [procgen.generate_layout(rng, templates, held)
                for _ in range(int(arg))]
    raise ConfigError(f"unknown task spec {spec!r}")


def _namespace_config(args: argparse.Namespace) -> dict:
    skip = {"func", "parser"}
    return {k: v for k, v in vars(args).items()
            if k not in skip and not k.startswith("_")}


# ------------------------------------------------------------------ gen

def cmd_gen(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    templates = procgen.load_templates()
    held = procgen.held_out_layouts() if args.exclude_held_out else ()
    written = []
    for i in range(args.count):
        layout = procgen.generate_layout(rng, templates, held, seed=args.seed)
        report = procgen.validate_layout(layout)
        if not (report.valid or report.cooperative_valid):
            print(f"error: generated layout {i} failed validation: "
                  f"{report.reasons}", file=sys.stderr)
            return 1
        path = os.path.join(args.out, f"kitchen_{i:05d}.txt")
        with open(path, "w") as fh:
            fh.write(procgen.encode_layout(layout))
        written.append(path)
    write_manifest(args.out, "gen", _namespace_config(args), written)
    print(f"wrote {len(written)} layouts to {args.out}")
    return 0


# ------------------------------------------------------------------ train

def _source_from_sets(env_kind: str, kind: str, sets: dict) -> dict:
    source = {"kind": kind}
    for key, value in sets.items():
        if not key.startswith("source."):
            continue
        name = key[len("source."):]
        if name == "layout":
            source[name] = _layout_line(value)
        elif name == "layouts":
            source[name] = (_layout_dir_lines(value[1:])
                            if isinstance(value, str) and value.startswith("@")
                            else list(value))
        elif name == "holdout":
            text = _read_text(value)
            source[name] = [ln.strip() for ln in text.splitlines() if ln.strip()]
        else:
            source[name] = value
    return source


def _ppo_overrides(sets: dict) -> dict:
    return {k[len("ppo."):]: v for k, v in sets.items() if k.startswith("ppo.")}


def _run_overrides(sets: dict) -> dict:
    return {k[len("run."):]: v for k, v in sets.items() if k.startswith("run.")}


_DEFAULT_SOURCE = {"dual-dest": "dd-fixed", "overcooked": "oc-procgen"}


def cmd_train(args) -> int:
    algo = ALGO_NAMES.get(args.algo)
    if algo is None:
        raise ConfigError(f"unknown algorithm {args.algo!r}")
    sets = _parse_sets(args.set)
    source_kind = args.source or _DEFAULT_SOURCE[args.env]
    env_source = _source_from_sets(args.env, source_kind, sets)
    config = PPOConfig(total_steps=args.steps,
                       **_ppo_overrides(sets))
    run_kwargs = dict(env_kind=args.env, env_source=env_source,
                      seed=args.seed, num_envs=args.envs,
                      net_scale=args.net, recurrent=not args.no_recurrent,
                      checkpoint_every=args.checkpoint_every,
                      partner_eps=args.partner_eps)
    run_kwargs.update(_run_overrides(sets))
    os.makedirs(args.out, exist_ok=True)
    if algo == "pool":
        paths = build_selfplay_pool(args.env, env_source, config, args.out,
                                    base_seed=args.seed, runs=args.pool_runs,
                                    num_envs=args.envs, net_scale=args.net,
                                    recurrent=not args.no_recurrent,
                                    input_scale=run_kwargs.get("input_scale", 1.0))
    elif algo == "fcp":
        if not args.pool:
            raise ConfigError("fcp needs --pool with frozen partners")
        spec = TrainRunSpec(algorithm="fcp", **run_kwargs)
        paths = train_fcp(spec, config, _expand_ckpts(args.pool), args.out)
    elif algo == "finetune":
        if not args.init:
            raise ConfigError("finetune needs --init checkpoint")
        spec = TrainRunSpec(algorithm="finetune", **run_kwargs)
        paths = finetune(args.init, spec, config, args.out,
                         lr_scale=args.lr_scale)
    else:
        spec = TrainRunSpec(algorithm=algo, **run_kwargs)
        paths = train_selfplay(spec, config, args.out)
    artifacts = list(paths)
    for extra in ("metrics.jsonl", "config.yaml"):
        p = os.path.join(args.out, extra)
        if os.path.exists(p):
            artifacts.append(p)
    write_manifest(args.out, "train", _namespace_config(args), artifacts)
    print(f"trained {algo}: {len(paths)} checkpoints under {args.out}")
    return 0


# ------------------------------------------------------------------ eval

def _oc_eval_config(sets: dict) -> OvercookedConfig | None:
    keys = {k[len("oc."):]: v for k, v in sets.items() if k.startswith("oc.")}
    return OvercookedConfig(**keys) if keys else None


def cmd_eval_xp(args) -> int:
    sets = _parse_sets(args.set)
    pool = evaluation.SeedPool.from_checkpoints(
        args.label, _expand_ckpts(args.pool), greedy=args.greedy)
    tasks = _resolve_tasks(args.tasks, args.seed, args.horizon)
    matrix = evaluation.eval_xp(pool, tasks, episodes_per_pair=args.episodes,
                                seed=args.seed, config=_oc_eval_config(sets))
    os.makedirs(args.out, exist_ok=True)
    paths = evaluation.write_payoff_csv(matrix, os.path.join(args.out, "payoff.csv"))
    write_manifest(args.out, "eval-xp", _namespace_config(args), list(paths))
    print(f"pool {pool.label}: self-play mean {matrix.diagonal_mean():+.4f}, "
          f"cross-play mean {matrix.off_diagonal_mean():+.4f} "
          f"over {len(tasks)} tasks")
    return 0


def cmd_eval_meta(args) -> int:
    sets = _parse_sets(args.set)
    pools = []
    for spec in args.pool:
        label, _, paths = spec.partition("=")
        if not paths:
            raise ConfigError(f"--pool expects LABEL=checkpoints, got {spec!r}")
        pools.append(evaluation.SeedPool.from_checkpoints(
            label, _expand_ckpts(paths), greedy=args.greedy))
    tasks = _resolve_tasks(args.tasks, args.seed, args.horizon)
    matrix = evaluation.build_metagame(pools, tasks,
                                       episodes_per_pair=args.episodes,
                                       seed=args.seed,
                                       config=_oc_eval_config(sets))
    os.makedirs(args.out, exist_ok=True)
    paths = evaluation.write_payoff_csv(matrix, os.path.join(args.out, "metagame.csv"))
    write_manifest(args.out, "eval-meta", _namespace_config(args), list(paths))
    for i, label in enumerate(matrix.labels):
        row = ", ".join(f"{matrix.means[i, j]:+.3f}" for j in range(len(pools)))
        print(f"{label:>12}: {row}")
    return 0


# ------------------------------------------------------------------ replicator

def cmd_replicator(args) -> int:
    matrix = evaluation.read_payoff_csv(args.payoff)
    payoff = matrix.symmetrized()
    n = payoff.shape[0]
    if args.x0:
        x0 = np.array([float(v) for v in args.x0.split(",")])
    else:
        x0 = np.full(n, 1.0 / n)
    flow = evaluation.replicator_flow(x0, payoff, step_size=args.step_size,
                                      steps=args.steps,
                                      mesh_subdivisions=args.subdivisions)
    os.makedirs(args.out, exist_ok=True)
    paths = [
        evaluation.write_grid_csv(flow.trajectory,
                                  os.path.join(args.out, "trajectory.csv")),
        evaluation.write_grid_csv(flow.mesh_points,
                                  os.path.join(args.out, "mesh_points.csv")),
        evaluation.write_grid_csv(flow.mesh_gradients,
                                  os.path.join(args.out, "mesh_gradients.csv")),
    ]
    write_manifest(args.out, "replicator", _namespace_config(args), paths)
    terminal = ", ".join(f"{label}={share:.4f}"
                         for label, share in zip(matrix.labels, flow.terminal))
    print(f"terminal mix after {args.steps} steps: {terminal}")
    return 0


# ------------------------------------------------------------------ stats

def cmd_stats(args) -> int:
    table = evaluation.SurveyTable.from_csv(args.survey)
    alpha = evaluation.cronbach_alpha(table.answers)
    pearson = evaluation.pearson_matrix(table.answers)
    os.makedirs(args.out, exist_ok=True)
    stats_path = os.path.join(args.out, "stats.json")
    summary = {
        "participants": int(table.answers.shape[0]),
        "cronbach_alpha": None if np.isnan(alpha) else float(alpha),
        "model_means": {m: dict(zip(evaluation.SURVEY_METRICS,
                                    (float(v) for v in means)))
                        for m, means in table.model_means().items()},
    }
    with open(stats_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    header = ",".join(evaluation.SURVEY_METRICS)
    pearson_path = os.path.join(args.out, "pearson.csv")
    np.savetxt(pearson_path, pearson, delimiter=",", header=header,
               comments="", fmt="%.17g")
    write_manifest(args.out, "stats", _namespace_config(args),
                   [stats_path, pearson_path])
    shown = "nan" if np.isnan(alpha) else f"{alpha:.4f}"
    print(f"alpha={shown} over {table.answers.shape[0]} rows")
    return 0


# ------------------------------------------------------------------ replay / serve

def cmd_replay(args) -> int:
    from . import serve as serve_mod
    result = serve_mod.verify_replay(args.session)
    if result.ok:
        print(f"replay ok: score {result.score:+.1f} over {result.ticks} ticks")
        return 0
    print(f"error: replay diverged at tick {result.first_divergence}",
          file=sys.stderr)
    return 1


def cmd_bench(args) -> int:
    from . import bench as bench_mod
    batches = tuple(int(b) for b in args.batches.split(","))
    report = bench_mod.run_benchmark(batches, seconds=args.seconds,
                                     seed=args.seed)
    print(f"{'batch':>7} {'steps/s':>12} {'with obs':>12}")
    for row in report.rows:
        print(f"{row.batch:7d} {row.steps_per_s:12,.0f} "
              f"{row.obs_steps_per_s:12,.0f}")
    print(f"best stepping rate: {report.best_steps_per_s:,.0f} env-steps/s")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "bench.json")
        with open(path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=1)
        write_manifest(args.out, "bench", _namespace_config(args), [path])
    return 0


def cmd_serve(args) -> int:
    from . import serve as serve_mod
    sets = _parse_sets(args.set)
    layouts = _resolve_tasks(args.layouts, args.seed, args.horizon)
    names = []
    for path in args.ckpt:
        base = os.path.splitext(os.path.basename(path))[0]
        name = base
        k = 2
        while name in names:
            name = f"{base}#{k}"
            k += 1
        names.append(name)
    config = serve_mod.ServeConfig(
        checkpoints=tuple(zip(names, args.ckpt)),
        layouts=tuple(layouts),
        out_dir=args.out,
        horizon=args.horizon,
        tick_ms=args.tick_ms,
        seed=args.seed,
        oc=_oc_eval_config(sets),
        static_dir=args.static)
    serve_mod.run_server(config, args.port)
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="cooplab",
        description="Cooperative grid-world laboratory: generation, "
                    "training, evaluation, analysis, and human play.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="yaml/json mapping or a prior "
                                        "manifest.json with option defaults")

    p = sub.add_parser("gen", help="sample kitchen layouts")
    common(p)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--include-held-out", dest="exclude_held_out",
                   action="store_false",
                   help="allow collisions with the classic five kitchens")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="run a training recipe")
    common(p)
    p.add_argument("--algo", required=True,
                   help="ippo | cec | fcp | finetune | pool")
    p.add_argument("--env", choices=("dual-dest", "overcooked"),
                   default="dual-dest")
    p.add_argument("--steps", type=int, required=True,
                   help="total environment steps")
    p.add_argument("--envs", type=int, default=16,
                   help="parallel environment copies")
    p.add_argument("--source", help="world source kind (dd-fixed, dd-task, "
                                    "dd-procgen, oc-layout, oc-corpus, "
                                    "oc-procgen)")
    p.add_argument("--net", choices=("compact", "reference"), default="compact")
    p.add_argument("--no-recurrent", action="store_true",
                   help="replace the memory core with a feed-through")
    p.add_argument("--partner-eps", type=float, default=0.0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--pool", help="fcp: frozen partner checkpoints")
    p.add_argument("--pool-runs", type=int, default=8,
                   help="pool: number of self-play members")
    p.add_argument("--init", help="finetune: starting checkpoint")
    p.add_argument("--lr-scale", type=float, default=0.1,
                   help="finetune: learning-rate multiplier")
    p.add_argument("--set", action="append", default=[],
                   metavar="KEY=VALUE",
                   help="overrides: source.*, ppo.*, run.* (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-xp", help="cross-play one pool of checkpoints")
    common(p)
    p.add_argument("--pool", required=True,
                   help="checkpoints: paths, globs, or directories")
    p.add_argument("--label", default="pool")
    p.add_argument("--tasks", required=True,
                   help="dd-fixed | dd-procgen:N | dd-file:P | oc-held-out | "
                        "oc-dir:P | oc-procgen:N")
    p.add_argument("--episodes", type=int, default=1,
                   help="episodes per pairing per task per seat order")
    p.add_argument("--horizon", type=int, default=100,
                   help="grid-world episode length for dd task specs")
    p.add_argument("--greedy", action="store_true",
                   help="argmax actions instead of sampling")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="oc.* recipe overrides for kitchen evaluation")
    p.set_defaults(func=cmd_eval_xp)

    p = sub.add_parser("eval-meta", help="payoff matrix between pools")
    common(p)
    p.add_argument("--pool", action="append", required=True,
                   metavar="LABEL=CKPTS",
                   help="named pool (repeatable, one per strategy)")
    p.add_argument("--tasks", required=True)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval_meta)

    p = sub.add_parser("replicator", help="integrate replicator dynamics")
    common(p)
    p.add_argument("--payoff", required=True, help="payoff csv (eval-meta)")
    p.add_argument("--x0", help="comma floats on the simplex; default uniform")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--step-size", type=float, default=0.01)
    p.add_argument("--subdivisions", type=int, default=15)
    p.set_defaults(func=cmd_replicator)

    p = sub.add_parser("stats", help="survey statistics")
    common(p)
    p.add_argument("--survey", required=True, help="survey table csv")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("replay", help="verify a stored session replays "
                                      "deterministically")
    p.add_argument("--session", required=True, help="session json file")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("bench", help="kitchen engine throughput")
    p.add_argument("--out", help="optional output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.add_argument("--batches", default="64,256,1024",
                   help="comma-separated batch sizes")
    p.add_argument("--seconds", type=float, default=1.0,
                   help="time budget per measurement")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="human-play session server")
    common(p)
    p.add_argument("--ckpt", required=True, action="append",
                   help="served policy checkpoint (repeatable)")
    p.add_argument("--layouts", default="oc-held-out",
                   help="task spec for served kitchens")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--tick-ms", type=int, default=200)
    p.add_argument("--horizon", type=int, default=200)
    p.add_argument("--static", help="directory with the browser client")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="oc.* recipe overrides")
    p.set_defaults(func=cmd_serve)

    return parser, dict(sub.choices)


def main(argv=None) -> int:
    parser, children = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_defaults(args, children[args.command])
        return args.func(args)
    except (ConfigError, procgen.LayoutError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
