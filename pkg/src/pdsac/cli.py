"""Command-line front end: train, eval, plot, traj-plot.

Exit codes: 0 success, 1 usage, 2 bad config/layout/checkpoint,
3 training fault (diagnostic checkpoint preserved).
"""

import argparse
import json
import os
import sys
from dataclasses import replace

from . import config as config_mod
from . import checkpoint, evaluate, orchestrator, plotting
from .errors import CheckpointError, ConfigError, LayoutError, TrainingFault

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_FAULT = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _apply_seed_override(cfg):
    raw = os.environ.get("PDSAC_SEED")
    if raw is None:
        return cfg
    try:
        return replace(cfg, seed=int(raw))
    except ValueError as exc:
        raise ConfigError(f"PDSAC_SEED must be an integer, got {raw!r}") \
            from exc


def _make_stop_check(cfg):
    if cfg.stop_success_threshold <= 0.0:
        return None

    def stop_check(nets, updates):
        summary, _ = evaluate.run_protocol(
            nets, cfg, trials_per_target=cfg.eval_trials_per_target)
        line = (f"[gate] update {updates}: success "
                f"{summary['success_rate']:.1f}% "
                f"mean reward {summary['mean_reward']:.2f}")
        print(line, flush=True)
        if summary["success_rate"] >= cfg.stop_success_threshold:
            return summary
        return None

    return stop_check


def cmd_train(args):
    cfg = _apply_seed_override(config_mod.load_config(args.config))
    os.makedirs(cfg.out_dir, exist_ok=True)
    config_mod.save_config(cfg, os.path.join(cfg.out_dir, "config.json"))
    try:
        if args.serial:
            res = orchestrator.run_serial(cfg, out_dir=cfg.out_dir,
                                          stop_check=_make_stop_check(cfg))
        else:
            res = orchestrator.run_parallel(cfg, out_dir=cfg.out_dir)
    except TrainingFault as exc:
        print(f"training fault: {exc}", file=sys.stderr)
        print(f"diagnostic checkpoint: {cfg.out_dir}/fault.npz",
              file=sys.stderr)
        return EXIT_FAULT
    tag = " (stopped at success gate)" if res.stopped_early else ""
    print(f"{cfg.variant} env-{cfg.env_id} seed {cfg.seed}: "
          f"{res.updates} updates, {res.inserted} transitions{tag}")
    print(f"metrics: {res.metrics_path}")
    print(f"checkpoint: {res.final_checkpoint}")
    return EXIT_OK


def cmd_eval(args):
    nets, meta = checkpoint.load_nets(args.ckpt)
    cfg = config_mod.default_config(meta["variant"], args.env,
                                    seed=meta["seed"],
                                    hidden=tuple(meta["hidden"]))
    targets = None
    if args.targets:
        try:
            with open(args.targets, "r", encoding="utf-8") as f:
                targets = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read targets {args.targets}: {exc}") \
                from exc
    out_dir = args.out or os.path.join(
        os.path.dirname(os.path.abspath(args.ckpt)), f"eval_env{args.env}")
    summary, episodes = evaluate.run_protocol(nets, cfg, targets=targets)
    summary_path, traj_paths = evaluate.write_artifacts(
        out_dir, cfg, meta["layout_version"], summary, episodes,
        chash=meta["config_hash"])
    print(f"success {summary['success_rate']:.2f}% over "
          f"{summary['n_trials']} trials, mean reward "
          f"{summary['mean_reward']:.2f} "
          f"(std {summary['reward_std']:.2f})")
    print(f"summary: {summary_path}")
    print(f"trajectories: {len(traj_paths)} files in {out_dir}")
    return EXIT_OK


def cmd_plot(args):
    svg, dat = plotting.plot_rewards(args.csvs, args.out)
    print(f"plot: {svg}")
    print(f"data: {dat}")
    return EXIT_OK


def cmd_traj_plot(args):
    svg = plotting.plot_trajectories(args.csvs, args.layout, args.out)
    print(f"plot: {svg}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="pdsac")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one variant from a config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--serial", action="store_true",
                         help="single-thread deterministic schedule")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval",
                            help="fixed-target protocol on a checkpoint")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--env", type=int, required=True, choices=(1, 2, 3))
    p_eval.add_argument("--targets", default=None,
                        help="JSON list of [x, y, z] goals")
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(fn=cmd_eval)

    p_plot = sub.add_parser("plot", help="reward curves from metrics CSVs")
    p_plot.add_argument("csvs", nargs="+")
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(fn=cmd_plot)

    p_traj = sub.add_parser("traj-plot",
                            help="top-down trajectory plot from eval CSVs")
    p_traj.add_argument("csvs", nargs="+")
    p_traj.add_argument("--layout", default=None)
    p_traj.add_argument("--out", required=True)
    p_traj.set_defaults(fn=cmd_traj_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, LayoutError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
