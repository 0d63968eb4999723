"""Command-line entry points: train / evaluate / compare / characterize-altimeter."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness, scenarios


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="INI file of overrides")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--scenario", type=str, default="mars", help="scenario key")
    p.add_argument("--out", type=str, default="runs", help="output directory")


def _run_config(args) -> harness.RunConfig:
    run = harness.RunConfig(
        scenario=args.scenario,
        policy=getattr(args, "policy", "mlp"),
        unroll=getattr(args, "unroll", 1),
        seed=args.seed,
        out_dir=args.out,
    )
    if getattr(args, "episodes", None) is not None:
        run.eval_episodes = args.episodes
    if getattr(args, "updates", None) is not None:
        run.updates = args.updates
    if args.config:
        env_over, train_over = scenarios.load_config_file(args.config)
        run.env_overrides = env_over
        run.train_overrides = train_over
    return run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="descentrl",
        description="Train and evaluate adaptive powered-descent guidance policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a PPO training loop")
    _add_common(p_train)
    p_train.add_argument("--policy", choices=("mlp", "rnn"), default="mlp")
    p_train.add_argument("--unroll", type=int, default=1, help="recurrent unroll steps")
    p_train.add_argument("--updates", type=int, default=None, help="training budget")
    p_train.add_argument("--episodes", type=int, default=None, help="evaluation episode count (stored)")

    p_eval = sub.add_parser("evaluate", help="Monte Carlo evaluation of a policy")
    _add_common(p_eval)
    p_eval.add_argument("--policy", choices=harness.POLICY_KINDS, default="mlp")
    p_eval.add_argument("--unroll", type=int, default=1)
    p_eval.add_argument("--episodes", type=int, default=None)
    p_eval.add_argument("--checkpoint", type=str, default=None, help="trained checkpoint (.npz)")

    p_cmp = sub.add_parser("compare", help="combine evaluations into one table")
    _add_common(p_cmp)
    p_cmp.add_argument(
        "--policies",
        type=str,
        required=True,
        help="comma list of policy labels (e.g. drdv,mlp,rnn20)",
    )

    p_alt = sub.add_parser("characterize-altimeter", help="altimeter error table")
    _add_common(p_alt)
    p_alt.add_argument("--elevations", type=str, default="400,500,600,700,800")
    p_alt.add_argument("--samples", type=int, default=1000)
    return parser


def _checkpoint_for(run: harness.RunConfig):
    if run.policy == "drdv":
        return None
    ckpt = run.run_dir() / "ckpt_final.npz"
    if not ckpt.exists():
        raise harness.MissingRun(f"no checkpoint at {ckpt}; train first or pass --checkpoint")
    return ckpt


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            run = _run_config(args)
            result = harness.train(run)
            print(f"trained {run.label} on {run.scenario}: {result.updates_run} updates")
            print(f"learning curve: {result.curve_path}")
            print(f"checkpoint: {result.final_checkpoint}")
            if result.diverged_at is not None:
                print(f"warning: stopped by numerical divergence at update {result.diverged_at}")
        elif args.command == "evaluate":
            run = _run_config(args)
            ckpt = Path(args.checkpoint) if args.checkpoint else _checkpoint_for(run)
            result = harness.evaluate(run, ckpt)
            s = result.stats
            print(f"evaluated {run.label} on {run.scenario} over {s.episodes} episodes")
            print(f"terminal position m  : mean {s.pos_mean:.3f}  std {s.pos_std:.3f}  max {s.pos_max:.3f}")
            print(f"terminal velocity m/s: mean {s.vel_mean:.3f}  std {s.vel_std:.3f}  max {s.vel_max:.3f}")
            print(f"glideslope           : mean {s.gs_mean:.3f}  std {s.gs_std:.3f}  min {s.gs_min:.3f}")
            print(f"fuel kg              : mean {s.fuel_mean:.3f}  std {s.fuel_std:.3f}  max {s.fuel_max:.3f}")
            print(f"success rate         : {s.success_rate:.3f}")
            print(f"episodes csv: {result.csv_path}")
        elif args.command == "compare":
            labels = [s.strip() for s in args.policies.split(",") if s.strip()]
            evals = {}
            for label in labels:
                run_dir = Path(args.out) / f"{args.scenario}_{label}_s{args.seed}"
                evals[label] = run_dir / "evaluation.csv"
            out = Path(args.out) / f"compare_{args.scenario}_s{args.seed}.csv"
            harness.compare(args.scenario, evals, out)
            print(f"comparison table: {out}")
            print(out.read_text())
        elif args.command == "characterize-altimeter":
            elevations = [float(t) for t in args.elevations.split(",") if t.strip()]
            out = Path(args.out) / f"altimeter_error_s{args.seed}.csv"
            harness.characterize_altimeter(args.seed, elevations, args.samples, out)
            print(f"altimeter error table: {out}")
            print(out.read_text())
    except Exception as exc:  # noqa: BLE001 - single structured error line
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
