# Command entry point for the Decision Mamba desk kit
import argparse
import json
import os
import sys

from rich import print
from rich.console import Console
from rich.panel import Panel

from config import ATARI_SCORES, RANDOM_BASELINE_EPISODES, RUNS_DIR
from modules.checkpoint import load_checkpoint, save_checkpoint
from modules.dataset_io import load_dataset, save_dataset
from modules.errors import ConfigError, DMambaError, EnvError
from modules.evaluator import (
    DecisionMambaPolicy,
    normalized_score,
    rollout,
    rollout_returns,
    summarize,
)
from modules.mamba_net import init_params, parameter_count
from modules.report_manager import (
    CHECKPOINT_FILE,
    SNAPSHOT_FILE,
    SWEEP_FILE,
    display_eval_summary,
    display_return_summary,
    display_sweep,
    save_eval_csv,
    save_metrics_csv,
    save_snapshot,
    save_sweep_summary,
)
from modules.run_config import (
    build_config,
    config_keys,
    dataset_values,
    describe_keys,
    layer_values,
    merge_dataset_values,
    parse_override,
    parse_value,
    with_overrides,
)
from modules.run_numbering import get_run_dir
from modules.toy_envs import expert_baseline, gen_dataset, make_env, parse_policy, random_baseline
from modules.trainer import train
from modules.utils import ensure_dir, make_rng, setup_logging

console = Console()

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def print_banner():
    """Display application banner."""
    banner = """
    DECISION MAMBA DESK KIT
    Selective state-space models for return-conditioned offline RL
    """
    console.print(Panel(banner, style="bold cyan"))


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def collect_overrides(args, **flags):
    """--set pairs first, then dedicated flags that were actually given."""
    overrides = {}
    for item in args.set or []:
        key, value = parse_override(item)
        overrides[key] = value
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    overrides.update({key: value for key, value in flags.items() if value is not None})
    return overrides


def resolve_config(args, metadata=None, base_path=None, **flags):
    values = layer_values(args.config or base_path, collect_overrides(args, **flags), args.preset)
    if metadata is not None:
        values = merge_dataset_values(values, metadata)
    return build_config(values)


def run_dir_for(out, category):
    if out:
        return ensure_dir(out, quiet=True)
    run_dir, _ = get_run_dir(RUNS_DIR, category)
    return run_dir


def baselines_for(config, random=None, expert=None):
    """Toy-env baselines: DP/oracle expert, Monte Carlo random."""
    env = make_env(config.env, config.env_n, config.horizon)
    if expert is None:
        expert = expert_baseline(env, make_rng(config.seed, "baseline", 1))
    if random is None:
        random = random_baseline(env, RANDOM_BASELINE_EPISODES, make_rng(config.seed, "baseline", 0))
    return random, expert


# ---------------------------------------------------------------------------
# shared train / eval steps
# ---------------------------------------------------------------------------


def train_run(config, dataset, run_dir, show_progress=True):
    config = with_overrides(config, out_dir=run_dir, checkpoint_path=os.path.join(run_dir, CHECKPOINT_FILE))
    print(f"[cyan]Training into {run_dir}[/cyan]")
    result = train(config, dataset, show_progress=show_progress)
    save_checkpoint(config.checkpoint_path, result.params, result.state_mean, result.state_std)
    print(f"[cyan]✓ Checkpoint saved: {config.checkpoint_path}[/cyan]")
    save_metrics_csv(result.metrics, run_dir)
    save_snapshot(config, run_dir)
    final = result.metrics.iloc[-1]
    print(f"[bold green]✓ Training finished: loss {final['loss']:.4f} after {int(final['step'])} updates[/bold green]")
    return config, result


def evaluate(config, params, state_mean, state_std, target_rtg, episodes, workers=1, random=None, expert=None):
    env = make_env(config.env, config.env_n, config.horizon)
    random, expert = baselines_for(config, random, expert)
    if target_rtg is None:
        target_rtg = config.target_rtg if config.target_rtg is not None else expert
    policy = DecisionMambaPolicy(
        params,
        config,
        state_mean=state_mean,
        state_std=state_std,
        rtg_scale=config.rtg_scale,
        temperature=config.eval_temperature,
    )
    with console.status(f"[cyan]Evaluating {episodes} episodes at target RTG {target_rtg:g}..."):
        results = rollout(
            env, policy, config.context_length, target_rtg, episodes, make_rng(config.seed, "eval"), workers
        )
    returns = rollout_returns(results)
    return summarize(returns, target_rtg, random, expert), returns, random, expert


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args):
    try:
        env = make_env(args.env, args.n, args.horizon)
        policy = parse_policy(args.policy)
    except EnvError as e:
        raise ConfigError(str(e), ["--env", "--policy", "--n", "--horizon"]) from None
    if args.episodes < 0:
        raise ConfigError("--episodes must be >= 0", ["--episodes"])
    seed = args.seed if args.seed is not None else 0

    if args.out:
        path = args.out
    else:
        path = os.path.join(run_dir_for(None, "data"), "dataset.jsonl")
    with console.status(f"[cyan]Generating {args.episodes} {policy.label} episodes on {env.name}..."):
        dataset = gen_dataset(env, policy, args.episodes, make_rng(seed, "gen"), seed=seed)
    save_dataset(path, dataset)
    print(f"[cyan]✓ Dataset saved: {path}[/cyan]")
    display_return_summary(dataset.returns(), title=f"{env.name} / {policy.label}")
    return EXIT_OK


def cmd_train(args):
    values = layer_values(args.config, collect_overrides(args, dataset_path=args.dataset), args.preset)
    dataset_path = values.get("dataset_path")
    if not dataset_path:
        raise ConfigError("no dataset given (use --dataset or dataset_path in the config)", ["dataset_path"])
    dataset = load_dataset(dataset_path)
    config = build_config(merge_dataset_values(values, dataset.metadata))
    run_dir = run_dir_for(args.out or config.out_dir, "train")
    config, result = train_run(config, dataset, run_dir, show_progress=not args.no_progress)
    print(f"[dim]{parameter_count(result.params)} parameters[/dim]")
    return EXIT_OK


def cmd_eval(args):
    checkpoint = args.checkpoint
    base_path = None
    if args.config is None and checkpoint:
        sidecar = os.path.join(os.path.dirname(os.path.abspath(checkpoint)), SNAPSHOT_FILE)
        if os.path.exists(sidecar):
            base_path = sidecar
    config = resolve_config(
        args,
        base_path=base_path,
        checkpoint_path=checkpoint,
        eval_episodes=args.episodes,
        eval_temperature=args.temperature,
    )
    if not config.checkpoint_path:
        raise ConfigError("no checkpoint given (use --checkpoint)", ["checkpoint_path"])

    params = init_params(config, make_rng(config.seed, "init"))
    state_mean, state_std = load_checkpoint(config.checkpoint_path, params)
    summary, returns, random, expert = evaluate(
        config,
        params,
        state_mean,
        state_std,
        args.target_rtg,
        config.eval_episodes,
        workers=args.workers,
        random=args.random,
        expert=args.expert,
    )
    run_dir = run_dir_for(args.out, "eval")
    normalized = [normalized_score(r, random, expert) for r in returns]
    save_eval_csv(returns, run_dir, normalized)
    display_eval_summary(summary, random, expert)
    print(f"[bold green]✓ Return {summary.mean:.4f} ± {summary.std:.4f} at target RTG {summary.target_rtg:g}[/bold green]")
    return EXIT_OK


def cmd_score(args):
    if args.game:
        game = args.game.lower()
        if game not in ATARI_SCORES:
            raise ConfigError(f"unknown game '{args.game}' (choose from {', '.join(ATARI_SCORES)})", ["--game"])
        row = ATARI_SCORES[game]
        raw = row["raw"] if args.raw is None else args.raw
        random, expert = row["random"], row["expert"]
    else:
        if None in (args.raw, args.random, args.expert):
            raise ConfigError("score needs RAW RANDOM EXPERT or --game", ["raw", "random", "expert"])
        raw, random, expert = args.raw, args.random, args.expert
    try:
        score = normalized_score(raw, random, expert)
    except DMambaError as e:
        raise ConfigError(str(e), ["random", "expert"]) from None
    console.print(f"{round(score, 1) + 0.0:.1f}")
    return EXIT_OK


def cmd_sweep(args):
    if args.key not in config_keys():
        raise ConfigError(f"unknown config key '{args.key}'", [args.key])
    values = layer_values(args.config, collect_overrides(args, dataset_path=args.dataset), args.preset)
    dataset_path = values.get("dataset_path")
    if not dataset_path:
        raise ConfigError("no dataset given (use --dataset or dataset_path in the config)", ["dataset_path"])
    dataset = load_dataset(dataset_path)
    if args.key in dataset_values(dataset.metadata):
        raise ConfigError(f"'{args.key}' is fixed by the dataset and cannot be swept", [args.key])
    values = merge_dataset_values(values, dataset.metadata)
    sweep_values = [parse_value(raw) for raw in args.values]
    # validate every value before the first run
    configs = [build_config({**values, args.key: value}) for value in sweep_values]

    sweep_dir = run_dir_for(args.out, "sweep")
    rows = []
    for value, config in zip(sweep_values, configs):
        run_dir = ensure_dir(os.path.join(sweep_dir, f"{args.key}_{json.dumps(value)}"), quiet=True)
        print(f"\n[bold cyan]════ {args.key} = {json.dumps(value)} ════[/bold cyan]")
        config, result = train_run(config, dataset, run_dir, show_progress=not args.no_progress)
        summary, returns, _, _ = evaluate(
            config, result.params, result.state_mean, result.state_std, None, config.eval_episodes
        )
        save_eval_csv(returns, run_dir)
        rows.append(
            {
                "key": args.key,
                "value": json.dumps(value),
                "run_dir": run_dir,
                "mean_return": summary.mean,
                "std_return": summary.std,
                "normalized": summary.normalized,
            }
        )
    save_sweep_summary(rows, os.path.join(sweep_dir, SWEEP_FILE))
    display_sweep(rows, args.key)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON config file (flat keys)")
    shared.add_argument("--seed", type=int, help="root seed for every random stream")
    shared.add_argument("--out", help="output path (default: numbered directory under runs/)")
    shared.add_argument("--preset", help="hyperparameter preset: desk, gym or atari")
    shared.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    shared.add_argument("--verbose", action="store_true", help="log INFO messages")
    shared.add_argument("--no-progress", action="store_true", help="hide progress bars")

    parser = argparse.ArgumentParser(
        prog="dmamba",
        description="Decision Mamba desk kit",
        epilog="config keys:\n" + describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", parents=[shared], help="roll out a behaviour policy into a dataset")
    gen.add_argument("--env", default="densechain", help="densechain, delayedcatch or point1d")
    gen.add_argument("--policy", default="optimal", help="optimal, random or epsilon(p)")
    gen.add_argument("--episodes", type=int, default=100)
    gen.add_argument("--n", type=int, default=6, help="chain length")
    gen.add_argument("--horizon", type=int, default=10)
    gen.set_defaults(func=cmd_gen_data)

    tr = commands.add_parser("train", parents=[shared], help="train on a dataset")
    tr.add_argument("--dataset", help="JSON-Lines dataset file")
    tr.set_defaults(func=cmd_train)

    ev = commands.add_parser("eval", parents=[shared], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", help="DMCK checkpoint (config snapshot read from its directory)")
    ev.add_argument("--target-rtg", type=float, help="return to condition on (default: expert baseline)")
    ev.add_argument("--episodes", type=int)
    ev.add_argument("--temperature", type=float, help="0 = argmax over discrete actions")
    ev.add_argument("--random", type=float, help="random baseline for normalization")
    ev.add_argument("--expert", type=float, help="expert baseline for normalization")
    ev.add_argument("--workers", type=int, default=1, help="episodes run concurrently")
    ev.set_defaults(func=cmd_eval)

    sc = commands.add_parser("score", help="normalized score 100*(raw-random)/(expert-random)")
    sc.add_argument("raw", type=float, nargs="?")
    sc.add_argument("random", type=float, nargs="?")
    sc.add_argument("expert", type=float, nargs="?")
    sc.add_argument("--game", help="use the Atari reference baselines (breakout, qbert, pong, seaquest)")
    sc.add_argument("--verbose", action="store_true")
    sc.set_defaults(func=cmd_score)

    sw = commands.add_parser("sweep", parents=[shared], help="train and evaluate once per value of a key")
    sw.add_argument("--dataset", help="JSON-Lines dataset file")
    sw.add_argument("--key", required=True, help="config key to sweep")
    sw.add_argument("--values", nargs="+", required=True, help="JSON values, e.g. 10 30 40 60")
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging("INFO" if args.verbose else None)
    if args.command != "score":
        print_banner()
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"[bold red]✗ {e}[/bold red]")
        return EXIT_USAGE
    except (DMambaError, OSError) as e:
        print(f"[bold red]✗ {e}[/bold red]")
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("\n[yellow]Interrupted by user.[/yellow]")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
