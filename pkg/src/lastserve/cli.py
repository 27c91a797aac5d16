"""Command-line front end: data generation, training, benchmarking,
hyper-parameter sweeps, and line-delimited request serving.

Serving speaks JSONL over stdin/stdout (one request in, one response out,
order preserved) so it composes with shell pipelines and stays transport
agnostic; a network wrapper is deliberately out of scope.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .actor import Request, actor_dims, init_actor_params
from .bench import POLICY_NAMES, run_benchmark, run_policy
from .checkpoints import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .core import ContractError, ModelDims
from .data import (
    DatasetFormatError,
    generate_dataset,
    generate_world,
    load_dataset,
    save_dataset,
    save_world,
)
from .evaluator import evaluator_at_n
from .serving import (
    LastConfig,
    last_cascade,
    last_parallel,
    serve_greedy,
    serve_sampling,
    step_ladder,
)
from .training import (
    TrainConfig,
    make_evaluator_reward,
    make_ndcg_reward,
    train_actor,
    train_evaluator,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lastserve",
        description="Re-ranking engine with transient per-request adaptation at serving time.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic interaction log")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-train", type=int, default=20000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--m", type=int, default=8, help="candidates per request")
    p.add_argument("--n", type=int, default=5, help="served list length")
    p.add_argument("--d-user", type=int, default=8)
    p.add_argument("--d-item", type=int, default=8)
    p.add_argument("--d-latent", type=int, default=8)
    p.add_argument("--rho", type=float, default=0.95)
    p.add_argument("--sim-penalty", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("train", help="train the evaluator or the actor")
    p.add_argument("--target", choices=("evaluator", "actor"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--curve-out", default=None, help="loss/reward curve CSV (default: <out>.curve.csv)")
    p.add_argument("--reward", choices=("ndcg", "learned"), default="ndcg")
    p.add_argument("--evaluator-ckpt", default=None)
    p.add_argument("--eval-data", default=None, help="held-out split for the reward curve")
    p.add_argument("--list-len", type=int, default=5)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--k-train", type=int, default=8)
    p.add_argument("--entropy-bonus", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("eval", help="benchmark serving policies on a test split")
    p.add_argument("--data", required=True)
    p.add_argument("--actor-ckpt", required=True)
    p.add_argument("--evaluator-ckpt", required=True)
    p.add_argument("--policies", default="greedy,sampling,last,cascade")
    p.add_argument("--budget", type=int, default=7, help="list trials per request for multi-list policies")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--list-len", type=int, default=5)
    p.add_argument("--reward", choices=("learned", "ndcg"), default="learned")
    p.add_argument("--cascade-samples", type=int, default=2)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default=None, help="also write the report CSV here")

    p = sub.add_parser("sweep", help="sweep a serving hyper-parameter, emit (value, mean score) CSV")
    p.add_argument("--param", choices=("steps", "alpha"), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--data", required=True)
    p.add_argument("--actor-ckpt", required=True)
    p.add_argument("--evaluator-ckpt", required=True)
    p.add_argument("--budget", type=int, default=7, help="trial count used by the alpha sweep")
    p.add_argument("--alpha", type=float, default=0.01, help="alpha used by the steps sweep")
    p.add_argument("--list-len", type=int, default=5)
    p.add_argument("--reward", choices=("learned", "ndcg"), default="learned")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default=None)

    p = sub.add_parser("serve", help="serve JSONL requests from stdin to stdout")
    p.add_argument("--mode", choices=POLICY_NAMES, default="last")
    p.add_argument("--actor-ckpt", required=True)
    p.add_argument("--evaluator-ckpt", default=None)
    p.add_argument("--budget", type=int, default=7)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--cascade-samples", type=int, default=2)
    p.add_argument("--seed", type=int, default=42)

    return parser


def cmd_gen_data(args, parser) -> int:
    if args.m < args.n:
        parser.error(f"--m ({args.m}) must be >= --n ({args.n})")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    world = generate_world(
        d_user=args.d_user,
        d_item=args.d_item,
        d_latent=args.d_latent,
        rho=args.rho,
        sim_penalty=args.sim_penalty,
        seed=args.seed,
    )
    train = generate_dataset(world, args.n_train, args.m, args.n, seed=args.seed)
    test = generate_dataset(world, args.n_test, args.m, args.n, seed=args.seed + 1)
    save_world(out_dir / "world.json", world)
    save_dataset(out_dir / "train.jsonl", train)
    save_dataset(out_dir / "test.jsonl", test)
    print(f"wrote {len(train)} train and {len(test)} test records to {out_dir}")
    return 0


def _write_curve(path, header: str, values: list[float]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"epoch,{header}\n")
        for epoch, value in enumerate(values, start=1):
            fh.write(f"{epoch},{value!r}\n")


def cmd_train(args, parser) -> int:
    records = load_dataset(args.data)
    if not records:
        parser.error(f"{args.data} holds no records")
    eval_records = load_dataset(args.eval_data) if args.eval_data else None
    dims = ModelDims(
        d_user=records[0].user.size, d_item=records[0].items.shape[1], hidden=args.hidden
    )
    config = TrainConfig(
        learning_rate=args.lr,
        momentum=args.momentum,
        epochs=args.epochs,
        batch_size=args.batch_size,
        samples_per_request=args.k_train,
        seed=args.seed,
        entropy_bonus=args.entropy_bonus,
    )
    curve_out = args.curve_out or f"{args.out}.curve.csv"

    if args.target == "evaluator":
        params, curve = train_evaluator(records, config, dims=dims)
        save_checkpoint(args.out, Checkpoint(kind="evaluator", dims=dims, params=params))
        _write_curve(curve_out, "bce", curve)
        print(f"evaluator: bce {curve[0]:.4f} -> {curve[-1]:.4f}; wrote {args.out}")
        return 0

    if args.reward == "learned":
        if not args.evaluator_ckpt:
            parser.error("--target actor --reward learned requires --evaluator-ckpt")
        ev = load_checkpoint(args.evaluator_ckpt)
        if ev.kind != "evaluator":
            parser.error(f"{args.evaluator_ckpt} is a {ev.kind} checkpoint, expected evaluator")
        reward_fn = make_evaluator_reward(ev.params, args.list_len)
    else:
        reward_fn = make_ndcg_reward(args.list_len)
    params, curve = train_actor(
        records,
        reward_fn,
        config,
        list_len=args.list_len,
        dims=dims,
        eval_records=eval_records,
    )
    save_checkpoint(args.out, Checkpoint(kind="actor", dims=dims, params=params))
    _write_curve(curve_out, "reward", curve)
    print(f"actor: reward {curve[0]:.4f} -> {curve[-1]:.4f}; wrote {args.out}")
    return 0


def _load_model_pair(args, parser):
    actor_ckpt = load_checkpoint(args.actor_ckpt)
    if actor_ckpt.kind != "actor":
        parser.error(f"{args.actor_ckpt} is a {actor_ckpt.kind} checkpoint, expected actor")
    evaluator_ckpt = load_checkpoint(args.evaluator_ckpt)
    if evaluator_ckpt.kind != "evaluator":
        parser.error(f"{args.evaluator_ckpt} is a {evaluator_ckpt.kind} checkpoint, expected evaluator")
    return actor_ckpt, evaluator_ckpt


def cmd_eval(args, parser, stdout) -> int:
    policies = [name.strip() for name in args.policies.split(",") if name.strip()]
    if not policies:
        parser.error("--policies must name at least one policy")
    for name in policies:
        if name not in POLICY_NAMES:
            parser.error(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")
    records = load_dataset(args.data)
    actor_ckpt, evaluator_ckpt = _load_model_pair(args, parser)
    report = run_benchmark(
        records,
        actor_ckpt.params,
        evaluator_ckpt.params,
        policies,
        budget=args.budget,
        list_len=args.list_len,
        alpha=args.alpha,
        seed=args.seed,
        reward=args.reward,
        cascade_samples=args.cascade_samples,
    )
    print(report.format_table(), file=stdout)
    if args.out:
        Path(args.out).write_text(report.to_csv(), encoding="utf-8")
        print(f"wrote {args.out}", file=stdout)
    return 0


def cmd_sweep(args, parser, stdout) -> int:
    raw = [v.strip() for v in args.values.split(",") if v.strip()]
    if not raw:
        parser.error("--values must list at least one value")
    records = load_dataset(args.data)
    actor_ckpt, evaluator_ckpt = _load_model_pair(args, parser)

    lines = ["value,mean_score"]
    for token in raw:
        if args.param == "steps":
            count = int(token)
            budget = count
            alpha = args.alpha
        else:
            budget = args.budget
            alpha = float(token)
        run = run_policy(
            "last",
            records,
            actor_ckpt.params,
            evaluator_ckpt.params,
            args.list_len,
            budget,
            alpha=alpha,
            seed=args.seed,
            reward=args.reward,
        )
        column = "evaluator@5" if args.reward == "learned" else "ndcg@5"
        lines.append(f"{token},{run.per_request[column].mean()!r}")
    csv_text = "\n".join(lines) + "\n"
    stdout.write(csv_text)
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
    return 0


def _serve_one(request: Request, mode: str, actor_params, evaluator_params, args) -> dict:
    if evaluator_params is not None:
        def evaluate(glist):
            return evaluator_at_n(
                request.user,
                request.candidates[list(glist.order)],
                evaluator_params,
                request.list_len,
            )
    else:
        evaluate = None

    if mode == "greedy":
        glist = serve_greedy(request, actor_params)
        score = evaluate(glist) if evaluate is not None else 0.0
        return {"order": list(glist.order), "eta_star": 0.0, "score": float(score)}
    if mode == "sampling":
        result = serve_sampling(request, actor_params, evaluate, args.budget, seed=args.seed)
    elif mode == "last":
        config = LastConfig(alpha=args.alpha, step_sizes=step_ladder(args.budget), seed=args.seed)
        result = last_parallel(request, actor_params, evaluate, config)
    else:
        iters = max(1, (args.budget - 1) // args.cascade_samples)
        config = LastConfig(
            alpha=args.alpha,
            cascade_max_iters=iters,
            cascade_samples=args.cascade_samples,
            seed=args.seed,
        )
        result = last_cascade(request, actor_params, evaluate, config)
    best = result.scores[result.eta_star] if result.eta_star in result.scores else max(
        result.scores.values()
    )
    return {"order": list(result.list.order), "eta_star": float(result.eta_star), "score": float(best)}


def cmd_serve(args, parser, stdin, stdout) -> int:
    actor_ckpt = load_checkpoint(args.actor_ckpt)
    if actor_ckpt.kind != "actor":
        parser.error(f"{args.actor_ckpt} is a {actor_ckpt.kind} checkpoint, expected actor")
    evaluator_params = None
    if args.evaluator_ckpt:
        ev = load_checkpoint(args.evaluator_ckpt)
        if ev.kind != "evaluator":
            parser.error(f"{args.evaluator_ckpt} is a {ev.kind} checkpoint, expected evaluator")
        evaluator_params = ev.params
    elif args.mode != "greedy":
        parser.error(f"--mode {args.mode} requires --evaluator-ckpt")

    snapshot = actor_ckpt.params.flatten().copy()
    for line in stdin:
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            request = Request(
                user=obj["user"], candidates=obj["candidates"], list_len=int(obj["n"])
            )
            response = _serve_one(request, args.mode, actor_ckpt.params, evaluator_params, args)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            response = {"error": str(exc)}
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()
    if not np.array_equal(snapshot, actor_ckpt.params.flatten()):
        raise RuntimeError("serving mutated the deployed parameters")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args, parser)
        if args.command == "train":
            return cmd_train(args, parser)
        if args.command == "eval":
            return cmd_eval(args, parser, sys.stdout)
        if args.command == "sweep":
            return cmd_sweep(args, parser, sys.stdout)
        if args.command == "serve":
            return cmd_serve(args, parser, sys.stdin, sys.stdout)
    except (ContractError, CheckpointError, DatasetFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
