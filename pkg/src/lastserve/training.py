"""Offline training of both networks.

The click evaluator is fit first by supervised binary cross-entropy against
logged clicks; the generator is then fit with score-function policy
gradients against whichever list reward is chosen (a ranking metric over
logged labels, or the frozen learned evaluator). Both loops are plain
minibatch SGD with classical momentum and are bit-reproducible for a fixed
seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit, xlogy

from . import actor as actor_mod
from .core import Array, ContractError, ModelDims, ParamSet
from .data import InteractionRecord
from .evaluator import (
    _click_backward,
    _click_forward,
    evaluator_at_n,
    init_evaluator_params,
    metric_evaluate,
)

RewardFn = Callable[[InteractionRecord, tuple[int, ...]], float]


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 64
    samples_per_request: int = 8
    seed: int = 0
    entropy_bonus: float = 0.01

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ContractError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if self.samples_per_request < 2:
            raise ContractError("samples_per_request must be >= 2 (advantage baseline)")


def sgd_step(
    params: ParamSet,
    grads: Mapping[str, Array],
    config: TrainConfig,
    velocity: ParamSet | None = None,
) -> tuple[ParamSet, ParamSet]:
    """One descent step with classical momentum.

    v <- momentum * v + g; p <- p - lr * v. Returns the updated params and
    velocity; inputs are left untouched.
    """
    if velocity is None:
        velocity = params.zeros_like()
    new_params: dict[str, Array] = {}
    new_velocity: dict[str, Array] = {}
    for name, value in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != value.shape:
            raise ContractError(f"gradient shape mismatch for {name!r}")
        v = config.momentum * velocity[name] + grad
        new_velocity[name] = v
        new_params[name] = value - config.learning_rate * v
    return ParamSet(new_params), ParamSet(new_velocity)


def make_ndcg_reward(k: int) -> RewardFn:
    """Reward a re-ranked order by NDCG@k over the record's logged clicks."""

    def reward(record: InteractionRecord, order) -> float:
        return metric_evaluate(record.clicks, order, k)

    return reward


def make_evaluator_reward(params: ParamSet, n: int) -> RewardFn:
    """Reward a re-ranked order by the learned evaluator's top-n mean."""

    def reward(record: InteractionRecord, order) -> float:
        return evaluator_at_n(record.user, record.items[list(order)], params, n)

    return reward


def mean_greedy_reward(
    records: list[InteractionRecord],
    params: ParamSet,
    reward_fn: RewardFn,
    list_len: int,
) -> float:
    """Mean reward of the deterministic policy over a record set."""
    total = 0.0
    for rec in records:
        glist = actor_mod.generate(rec.request(list_len), params)
        total += reward_fn(rec, glist.order)
    return total / len(records)


def _bce_loss_and_grad(logits: Array, labels: Array) -> tuple[float, Array]:
    """Mean binary cross-entropy over all positions and its logit gradient."""
    loss = labels * np.logaddexp(0.0, -logits) + (1.0 - labels) * np.logaddexp(0.0, logits)
    d_logits = (expit(logits) - labels) / labels.size
    return float(loss.mean()), d_logits


def train_evaluator(
    records: list[InteractionRecord],
    config: TrainConfig,
    dims: ModelDims | None = None,
    init_params: ParamSet | None = None,
) -> tuple[ParamSet, list[float]]:
    """Fit per-position click probabilities to logged clicks.

    Returns the fitted params and the per-epoch mean training BCE.
    """
    if not records:
        raise ContractError("cannot train on an empty dataset")
    if dims is None:
        dims = ModelDims(d_user=records[0].user.size, d_item=records[0].items.shape[1])
    params = init_params if init_params is not None else init_evaluator_params(dims, config.seed)
    velocity = None
    rng = np.random.default_rng(config.seed)

    curve: list[float] = []
    indices = np.arange(len(records))
    for _ in range(config.epochs):
        rng.shuffle(indices)
        epoch_loss = 0.0
        epoch_items = 0
        for start in range(0, len(indices), config.batch_size):
            batch = [records[i] for i in indices[start : start + config.batch_size]]
            grads = {name: np.zeros_like(arr) for name, arr in params.items()}
            batch_items = sum(rec.items.shape[0] for rec in batch)
            # group by list length so each group runs as one stacked forward
            by_len: dict[int, list[InteractionRecord]] = {}
            for rec in batch:
                by_len.setdefault(rec.items.shape[0], []).append(rec)
            for group in by_len.values():
                users = np.stack([rec.user for rec in group])
                items = np.stack([rec.items for rec in group])
                labels = np.stack([rec.clicks for rec in group]).astype(np.float64)
                logits, cache = _click_forward(users, items, params)
                loss_terms = labels * np.logaddexp(0.0, -logits) + (1.0 - labels) * np.logaddexp(
                    0.0, logits
                )
                epoch_loss += float(loss_terms.sum())
                d_logits = (expit(logits) - labels) / batch_items
                for name, g in _click_backward(cache, d_logits, params).items():
                    grads[name] += g
            epoch_items += batch_items
            params, velocity = sgd_step(params, grads, config, velocity)
        curve.append(epoch_loss / epoch_items)
    return params, curve


def _entropy_seed(probs: Array) -> Array:
    """d(step entropy)/d(step scores) for a softmax distribution."""
    plogp = xlogy(probs, probs)
    entropy = -plogp.sum()
    return -(plogp + probs * entropy)


def train_actor(
    records: list[InteractionRecord],
    reward_fn: RewardFn,
    config: TrainConfig,
    list_len: int,
    dims: ModelDims | None = None,
    init_params: ParamSet | None = None,
    eval_records: list[InteractionRecord] | None = None,
) -> tuple[ParamSet, list[float]]:
    """Policy-gradient training of the list generator.

    Per request, draws `samples_per_request` lists, centers their rewards on
    the sample mean, and ascends the advantage-weighted log-probability
    gradient plus an entropy bonus that staves off premature collapse.
    Returns the fitted params and the per-epoch mean greedy reward on
    `eval_records` (the training records when no held-out split is given).
    """
    if not records:
        raise ContractError("cannot train on an empty dataset")
    if dims is None:
        dims = ModelDims(d_user=records[0].user.size, d_item=records[0].items.shape[1])
    params = init_params if init_params is not None else actor_mod.init_actor_params(dims, config.seed)
    velocity = None
    rng = np.random.default_rng(config.seed)
    monitor = eval_records if eval_records is not None else records
    k = config.samples_per_request

    curve: list[float] = []
    indices = np.arange(len(records))
    for _ in range(config.epochs):
        rng.shuffle(indices)
        for start in range(0, len(indices), config.batch_size):
            batch = [records[i] for i in indices[start : start + config.batch_size]]
            grads = {name: np.zeros_like(arr) for name, arr in params.items()}
            for rec in batch:
                request = rec.request(list_len)
                draws = [
                    actor_mod._decode(request, params, mode="sample", rng=rng, want_cache=True)
                    for _ in range(k)
                ]
                rewards = np.array([reward_fn(rec, glist.order) for glist, _ in draws])
                advantages = rewards - rewards.mean()
                for (glist, cache), adv in zip(draws, advantages):
                    seeds = []
                    for step in cache.steps:
                        seed = -adv * step.probs
                        seed[step.local_choice] += adv
                        if config.entropy_bonus:
                            seed += config.entropy_bonus * _entropy_seed(step.probs)
                        seeds.append(seed)
                    step_grads = actor_mod._backward_from_seeds(
                        request, params, glist.order, cache, seeds
                    )
                    for name, g in step_grads.items():
                        grads[name] += g
            # ascend: feed the negated mean gradient to the descent step
            scale = -1.0 / len(batch)
            grads = {name: scale * g for name, g in grads.items()}
            params, velocity = sgd_step(params, grads, config, velocity)
        curve.append(mean_greedy_reward(monitor, params, reward_fn, list_len))
    return params, curve
