"""Serving policies, including transient per-request adaptation.

All policies share one contract: deployed parameters are read-only. The
adaptive policies compute a request-local parameter modification, use it to
generate candidate lists, let the evaluation function pick the winner, and
drop the modification; after any call the deployed ParamSet is bitwise
unchanged, so concurrent requests can share it freely.

The parallel policy explores one direction only: the gradient that raises
the generated list's own probability, scaled to the magnitude of the
adaptable parameters and tried at several signed step sizes (step size 0
reproduces the unmodified list, so the chosen score can never fall below
the deterministic baseline). The cascade policy instead loops
generate/evaluate/update with a request-local sampled policy-gradient
update, keeping the best list seen.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .actor import (
    GeneratedList,
    Request,
    _backward_from_seeds,
    _decode,
    default_adaptable_mask,
    generate,
    grad_log_prob,
    request_fingerprint,
)
from .core import AdaptableMask, Array, ContractError, ParamSet, axpy_overlay, vector_norm

EvaluateFn = Callable[[GeneratedList], float]

ZERO_GRAD_EPS = 1e-12

DEFAULT_STEP_SIZES = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0)

# step sets grow by superset along this ladder, so a bigger trial budget
# can only raise the winning score
_STEP_LADDER = (0.0, 1.0, -1.0, 0.5, -0.5, 2.0, -2.0, 4.0, -4.0, 0.25, -0.25, 8.0, -8.0)


def step_ladder(k: int) -> tuple[float, ...]:
    """First k entries of the canonical nested step-size ladder."""
    if not 1 <= k <= len(_STEP_LADDER):
        raise ContractError(f"k must lie in [1, {len(_STEP_LADDER)}]")
    return _STEP_LADDER[:k]


@dataclass
class LastConfig:
    """Knobs for the adaptive serving policies.

    alpha scales the probability-gradient direction relative to the norm of
    the adaptable parameters; step_sizes are the multiples of that scaled
    direction to try (0 must be present so the unmodified list is always in
    the running). The cascade_* fields drive the iterative variant.
    """

    mask: AdaptableMask = field(default_factory=default_adaptable_mask)
    alpha: float = 0.01
    step_sizes: tuple[float, ...] = DEFAULT_STEP_SIZES
    norm_ord: float = 2.0
    cascade_max_iters: int = 3
    cascade_tol: float = 0.0
    cascade_inner_lr: float = 0.05
    cascade_samples: int = 2
    seed: int = 0

    def __post_init__(self):
        self.step_sizes = tuple(float(s) for s in self.step_sizes)
        if self.alpha <= 0.0:
            raise ContractError("alpha must be > 0")
        if len(self.step_sizes) < 1:
            raise ContractError("step_sizes must be non-empty")
        if 0.0 not in self.step_sizes:
            raise ContractError("step_sizes must contain 0")
        if self.cascade_max_iters < 1:
            raise ContractError("cascade_max_iters must be >= 1")
        if self.cascade_tol < 0.0:
            raise ContractError("cascade_tol must be >= 0")
        if self.cascade_samples < 2:
            raise ContractError("cascade_samples must be >= 2 (advantage baseline)")


@dataclass
class ServedResult:
    """Outcome of one serving call.

    For the parallel policy, `scores` maps each step size to its list
    evaluation and `eta_star` is the winning step size. The sampling policy
    keys `scores` by draw index instead, and the cascade policy reports only
    the winning score; both leave `eta_star` at 0.0.
    """

    list: GeneratedList
    eta_star: float
    scores: dict[float, float]
    base_score: float
    iterations_used: int = 0
    lists_generated: int = 1


def normalized_delta(
    params: ParamSet,
    mask: AdaptableMask,
    grad: Array,
    alpha: float,
    norm_ord: float = 2.0,
) -> Array:
    """alpha * (|masked params| / |grad|) * grad.

    Invariant to positive rescaling of `grad`: the gradient supplies only a
    direction, the parameter magnitude calibrates the update size.
    """
    grad = np.asarray(grad, dtype=np.float64)
    g_norm = vector_norm(grad, norm_ord)
    if g_norm <= 0.0:
        raise ContractError("cannot normalize a zero gradient")
    theta_norm = vector_norm(mask.gather(params), norm_ord)
    return (alpha * theta_norm / g_norm) * grad


def serve_greedy(request: Request, params: ParamSet) -> GeneratedList:
    """Single deterministic generation from the unmodified policy."""
    return generate(request, params, mode="greedy")


def last_parallel(
    request: Request,
    params: ParamSet,
    evaluate: EvaluateFn,
    config: LastConfig,
) -> ServedResult:
    """Try the scaled probability-gradient direction at every step size and
    return the evaluation argmax.

    Generates the unmodified greedy list once (it stands in for step size
    0), so a config with K step sizes costs exactly K generations plus one
    gradient pass. Score ties break toward the smallest |step|, preferring
    the positive sign. Degenerate requests with a zero gradient return the
    unmodified list immediately.
    """
    base_list = generate(request, params, mode="greedy")
    grad = grad_log_prob(request, params, base_list.order, config.mask)
    if vector_norm(grad, config.norm_ord) < ZERO_GRAD_EPS:
        base_score = float(evaluate(base_list))
        return ServedResult(
            list=base_list,
            eta_star=0.0,
            scores={0.0: base_score},
            base_score=base_score,
            lists_generated=1,
        )
    delta = normalized_delta(params, config.mask, grad, config.alpha, config.norm_ord)

    lists: dict[float, GeneratedList] = {}
    scores: dict[float, float] = {}
    generated = 0
    for eta in config.step_sizes:
        if eta == 0.0:
            candidate = base_list
        else:
            candidate = generate(request, axpy_overlay(params, config.mask, delta, eta), mode="greedy")
        generated += 1
        lists[eta] = candidate
        scores[eta] = float(evaluate(candidate))

    eta_star = max(scores, key=lambda eta: (scores[eta], -abs(eta), eta))
    return ServedResult(
        list=lists[eta_star],
        eta_star=eta_star,
        scores=scores,
        base_score=scores[0.0],
        lists_generated=generated,
    )


def last_cascade(
    request: Request,
    params: ParamSet,
    evaluate: EvaluateFn,
    config: LastConfig,
) -> ServedResult:
    """Iterative generate/evaluate/update loop on a request-local policy.

    Each iteration samples `cascade_samples` lists from the working policy,
    rewards them with `evaluate`, and takes one advantage-weighted
    policy-gradient step on the masked parameters. The best list seen
    (including the initial unmodified greedy list) is returned. Stops when
    an iteration improves the best score by less than `cascade_tol`, or at
    `cascade_max_iters`. The deployed `params` are never touched.
    """
    rng = np.random.default_rng([config.seed, request_fingerprint(request)])
    masked_size = config.mask.size(params)
    delta = np.zeros(masked_size)

    base_list = generate(request, params, mode="greedy")
    base_score = float(evaluate(base_list))
    best_list, best_score = base_list, base_score
    generated = 1

    iterations = 0
    for _ in range(config.cascade_max_iters):
        iterations += 1
        working = axpy_overlay(params, config.mask, delta, 1.0)
        draws = []
        rewards = []
        for _ in range(config.cascade_samples):
            glist, cache = _decode(request, working, mode="sample", rng=rng, want_cache=True)
            generated += 1
            score = float(evaluate(glist))
            draws.append((glist, cache))
            rewards.append(score)
        rewards = np.array(rewards)

        best_before = best_score
        for (glist, _), score in zip(draws, rewards):
            if score > best_score:
                best_list, best_score = glist, float(score)
        improvement = best_score - best_before

        advantages = rewards - rewards.mean()
        update = np.zeros(masked_size)
        for (glist, cache), adv in zip(draws, advantages):
            if adv == 0.0:
                continue
            seeds = []
            for step in cache.steps:
                seed = -adv * step.probs
                seed[step.local_choice] += adv
                seeds.append(seed)
            grads = _backward_from_seeds(request, working, glist.order, cache, seeds)
            update += config.mask.gather(params, grads)
        delta = delta + config.cascade_inner_lr * update

        if improvement < config.cascade_tol:
            break

    return ServedResult(
        list=best_list,
        eta_star=0.0,
        scores={0.0: best_score},
        base_score=base_score,
        iterations_used=iterations,
        lists_generated=generated,
    )


def serve_sampling(
    request: Request,
    params: ParamSet,
    evaluate: EvaluateFn,
    k: int,
    seed: int = 0,
) -> ServedResult:
    """Best-of-k from the unmodified stochastic policy.

    Draw 0 is the greedy list; the remaining k-1 lists are sampled with a
    request-derived rng, so adding draws never discards earlier ones and
    results do not depend on how a batch of requests is ordered.
    """
    if k < 1:
        raise ContractError("k must be >= 1")
    rng = np.random.default_rng([seed, request_fingerprint(request)])
    candidates = [generate(request, params, mode="greedy")]
    for _ in range(k - 1):
        candidates.append(generate(request, params, mode="sample", rng=rng))
    scores = [float(evaluate(glist)) for glist in candidates]
    best = int(np.argmax(scores))  # ties keep the earliest draw
    return ServedResult(
        list=candidates[best],
        eta_star=0.0,
        scores={float(i): s for i, s in enumerate(scores)},
        base_score=scores[0],
        lists_generated=k,
    )
