"""Benchmark harness: run serving policies over a test split under one
shared trial budget and seed, aggregate ranking metrics, and attach paired
sign-test p-values against the adaptive policy.

The single-list greedy baseline structurally spends one generation per
request; every multi-list policy is charged exactly the same budget, and
the report records the generation counts so the accounting is auditable.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest

from .actor import GeneratedList
from .core import ContractError, ParamSet
from .data import InteractionRecord
from .evaluator import evaluator_at_n, map_at_k, metric_evaluate, ndcg_at_k
from .serving import (
    LastConfig,
    last_cascade,
    last_parallel,
    serve_greedy,
    serve_sampling,
    step_ladder,
)

POLICY_NAMES = ("greedy", "sampling", "last", "cascade")

METRIC_COLUMNS = ("map@5", "map@10", "ndcg@5", "ndcg@10", "evaluator@5", "evaluator@10")

REPORT_COLUMNS = ("policy",) + METRIC_COLUMNS + ("lists_generated", "wall_time", "p_vs_last")


def sign_test(a, b) -> float:
    """Two-sided paired sign test; ties are dropped. p = 1.0 with no
    informative pairs (e.g. a policy compared against itself)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError("paired samples must have equal length")
    wins = int(np.sum(a > b))
    losses = int(np.sum(a < b))
    n = wins + losses
    if n == 0:
        return 1.0
    return float(binomtest(min(wins, losses), n, 0.5, alternative="two-sided").pvalue)


@dataclass
class PolicyRun:
    name: str
    per_request: dict[str, np.ndarray]  # metric column -> per-request values
    lists_generated: int
    wall_time: float


@dataclass
class BenchmarkReport:
    rows: list[dict]
    p_values: dict[str, float]  # policy -> p-value vs the "last" row
    guidance_column: str

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(REPORT_COLUMNS) + "\n")
        for row in self.rows:
            cells = []
            for col in REPORT_COLUMNS:
                value = row.get(col, "")
                if isinstance(value, float):
                    cells.append(f"{value:.6f}")
                else:
                    cells.append(str(value))
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()

    def format_table(self) -> str:
        widths = {col: len(col) for col in REPORT_COLUMNS}
        rendered = []
        for row in self.rows:
            cells = {}
            for col in REPORT_COLUMNS:
                value = row.get(col, "")
                cells[col] = f"{value:.4f}" if isinstance(value, float) else str(value)
                widths[col] = max(widths[col], len(cells[col]))
            rendered.append(cells)
        lines = ["  ".join(col.ljust(widths[col]) for col in REPORT_COLUMNS)]
        for cells in rendered:
            lines.append("  ".join(cells[col].ljust(widths[col]) for col in REPORT_COLUMNS))
        return "\n".join(lines)


def _request_metrics(
    rec: InteractionRecord,
    glist: GeneratedList,
    evaluator_params: ParamSet,
) -> dict[str, float]:
    order = list(glist.order)
    placed_labels = rec.clicks[order].astype(np.float64)
    served_items = rec.items[order]
    n = len(order)
    return {
        "map@5": map_at_k(placed_labels, 5),
        "map@10": map_at_k(placed_labels, 10),
        "ndcg@5": ndcg_at_k(placed_labels, 5),
        "ndcg@10": ndcg_at_k(placed_labels, 10),
        "evaluator@5": evaluator_at_n(rec.user, served_items, evaluator_params, min(5, n)),
        "evaluator@10": evaluator_at_n(rec.user, served_items, evaluator_params, min(10, n)),
    }


def make_evaluate_fn(rec: InteractionRecord, reward: str, evaluator_params: ParamSet, list_len: int):
    """The list-evaluation function guiding multi-list policies for `rec`."""
    if reward == "learned":
        return lambda glist: evaluator_at_n(
            rec.user, rec.items[list(glist.order)], evaluator_params, list_len
        )
    if reward == "ndcg":
        return lambda glist: metric_evaluate(rec.clicks, glist.order, list_len)
    raise ContractError(f"unknown reward {reward!r}")


def run_policy(
    name: str,
    records: list[InteractionRecord],
    actor_params: ParamSet,
    evaluator_params: ParamSet,
    list_len: int,
    budget: int,
    alpha: float = 0.01,
    seed: int = 0,
    reward: str = "learned",
    cascade_samples: int = 2,
) -> PolicyRun:
    if name not in POLICY_NAMES:
        raise ContractError(f"unknown policy {name!r}")
    if budget < 1:
        raise ContractError("budget must be >= 1")

    if name == "last":
        config = LastConfig(alpha=alpha, step_sizes=step_ladder(budget), seed=seed)
    elif name == "cascade":
        iters = max(1, (budget - 1) // cascade_samples)
        config = LastConfig(
            alpha=alpha,
            cascade_max_iters=iters,
            cascade_samples=cascade_samples,
            seed=seed,
        )
    else:
        config = None

    per_request: dict[str, list[float]] = {col: [] for col in METRIC_COLUMNS}
    lists_generated = 0
    start = time.perf_counter()
    for rec in records:
        request = rec.request(list_len)
        evaluate = make_evaluate_fn(rec, reward, evaluator_params, list_len)
        if name == "greedy":
            glist = serve_greedy(request, actor_params)
            lists_generated += 1
        elif name == "sampling":
            result = serve_sampling(request, actor_params, evaluate, budget, seed=seed)
            glist = result.list
            lists_generated += result.lists_generated
        elif name == "last":
            result = last_parallel(request, actor_params, evaluate, config)
            glist = result.list
            lists_generated += result.lists_generated
        else:
            result = last_cascade(request, actor_params, evaluate, config)
            glist = result.list
            lists_generated += result.lists_generated
        for col, value in _request_metrics(rec, glist, evaluator_params).items():
            per_request[col].append(value)
    wall_time = time.perf_counter() - start

    return PolicyRun(
        name=name,
        per_request={col: np.array(vals) for col, vals in per_request.items()},
        lists_generated=lists_generated,
        wall_time=wall_time,
    )


def run_benchmark(
    records: list[InteractionRecord],
    actor_params: ParamSet,
    evaluator_params: ParamSet,
    policies: list[str],
    budget: int,
    list_len: int,
    alpha: float = 0.01,
    seed: int = 0,
    reward: str = "learned",
    cascade_samples: int = 2,
) -> BenchmarkReport:
    """Evaluate every policy over `records` with identical budget and seed."""
    runs = [
        run_policy(
            name,
            records,
            actor_params,
            evaluator_params,
            list_len,
            budget,
            alpha=alpha,
            seed=seed,
            reward=reward,
            cascade_samples=cascade_samples,
        )
        for name in policies
    ]

    guidance_column = "evaluator@5" if reward == "learned" else "ndcg@5"
    last_run = next((run for run in runs if run.name == "last"), None)
    p_values: dict[str, float] = {}
    rows = []
    for run in runs:
        row: dict = {"policy": run.name}
        for col in METRIC_COLUMNS:
            row[col] = float(run.per_request[col].mean())
        row["lists_generated"] = run.lists_generated
        row["wall_time"] = run.wall_time
        if last_run is not None and run is not last_run:
            p = sign_test(last_run.per_request[guidance_column], run.per_request[guidance_column])
            p_values[run.name] = p
            row["p_vs_last"] = p
        else:
            row["p_vs_last"] = ""
        rows.append(row)
    return BenchmarkReport(rows=rows, p_values=p_values, guidance_column=guidance_column)
