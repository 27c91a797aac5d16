"""Sequential list generator.

The generator builds a slate of ``list_len`` items out of ``m`` candidates
one step at a time. At each step every still-unselected candidate is scored
from the user encoding, its own encoding, the mean encoding of the items
already placed, and the step index; a softmax over the unselected candidates
yields selection probabilities. The product of per-step probabilities is the
list probability, and its log-gradient with respect to any parameter subset
is available in closed form for serving-time adaptation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .core import (
    AdaptableMask,
    Array,
    ContractError,
    ModelDims,
    ParamSet,
    affine_forward,
    as_tensor,
    masked_softmax,
)

ACTOR_ENTRY_NAMES = (
    "user_w",
    "user_b",
    "item_w",
    "item_b",
    "score1_w",
    "score1_b",
    "score2_w",
    "score2_b",
)

SCORER_ENTRY_NAMES = ("score1_w", "score1_b", "score2_w", "score2_b")


@dataclass
class Request:
    """One serving unit: a user vector plus a candidate set to re-rank."""

    user: Array
    candidates: Array
    list_len: int

    def __post_init__(self):
        self.user = as_tensor(self.user)
        self.candidates = as_tensor(self.candidates)
        if self.user.ndim != 1 or self.candidates.ndim != 2:
            raise ContractError("user must be 1-D and candidates 2-D")
        if not 1 <= self.list_len <= self.candidates.shape[0]:
            raise ContractError(
                f"list_len must satisfy 1 <= {self.list_len} <= {self.candidates.shape[0]}"
            )

    @property
    def m(self) -> int:
        return self.candidates.shape[0]

    @property
    def n(self) -> int:
        return self.list_len


@dataclass
class GeneratedList:
    """An ordered selection with its per-step probabilities."""

    order: tuple[int, ...]
    step_probs: Array
    log_prob: float


def request_fingerprint(request: Request) -> int:
    """Stable 64-bit fingerprint of request contents.

    Used to derive per-request RNG seeds so that stochastic serving policies
    give identical per-request outputs regardless of batch order.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(np.int64(request.list_len).tobytes())
    h.update(request.user.tobytes())
    h.update(request.candidates.tobytes())
    return int.from_bytes(h.digest(), "little")


def init_actor_params(dims: ModelDims = ModelDims(), seed: int = 0) -> ParamSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    du, di, h = dims.d_user, dims.d_item, dims.hidden
    z = 3 * h + 1

    def u(shape, fan_in):
        return rng.uniform(-1.0, 1.0, shape) / np.sqrt(fan_in)

    return ParamSet(
        {
            "user_w": u((du, h), du),
            "user_b": np.zeros(h),
            "item_w": u((di, h), di),
            "item_b": np.zeros(h),
            "score1_w": u((z, h), z),
            "score1_b": np.zeros(h),
            "score2_w": u((h, 1), h),
            "score2_b": np.zeros(1),
        }
    )


def default_adaptable_mask() -> AdaptableMask:
    """The step-scorer stack: the subset serving-time updates modify."""
    return AdaptableMask(SCORER_ENTRY_NAMES)


def actor_dims(params: ParamSet) -> ModelDims:
    """Recover dimensions from parameter shapes."""
    return ModelDims(
        d_user=params["user_w"].shape[0],
        d_item=params["item_w"].shape[0],
        hidden=params["user_w"].shape[1],
    )


@dataclass
class _StepCache:
    rem_idx: Array
    z: Array
    h1: Array
    probs: Array  # aligned with rem_idx
    local_choice: int


@dataclass
class _DecodeCache:
    eu: Array
    ec: Array
    steps: list[_StepCache] = field(default_factory=list)


def _encode(request: Request, params: ParamSet) -> tuple[Array, Array]:
    if request.user.shape[0] != params["user_w"].shape[0]:
        raise ContractError(
            f"user dim {request.user.shape[0]} != params d_user {params['user_w'].shape[0]}"
        )
    if request.candidates.shape[1] != params["item_w"].shape[0]:
        raise ContractError(
            f"item dim {request.candidates.shape[1]} != params d_item {params['item_w'].shape[0]}"
        )
    eu = np.tanh(affine_forward(request.user[None, :], params["user_w"], params["user_b"]))[0]
    ec = np.tanh(affine_forward(request.candidates, params["item_w"], params["item_b"]))
    return eu, ec


def _check_order(request: Request, order) -> tuple[int, ...]:
    order = tuple(int(i) for i in order)
    if len(order) != request.list_len:
        raise ContractError(f"order length {len(order)} != list_len {request.list_len}")
    if len(set(order)) != len(order):
        raise ContractError("order contains duplicate indices")
    if any(i < 0 or i >= request.m for i in order):
        raise ContractError("order index out of range")
    return order


def _decode(
    request: Request,
    params: ParamSet,
    order: tuple[int, ...] | None = None,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
    want_cache: bool = False,
) -> tuple[GeneratedList, _DecodeCache | None]:
    """Run the selection loop, either choosing items (generation) or
    scoring a fixed `order` (forced decoding)."""
    m, n = request.m, request.list_len
    h = params["user_w"].shape[1]
    eu, ec = _encode(request, params)
    cache = _DecodeCache(eu=eu, ec=ec) if want_cache else None

    remaining = np.ones(m, dtype=bool)
    chosen: list[int] = []
    step_probs = np.empty(n)
    ctx = np.zeros(h)
    ctx_sum = np.zeros(h)

    for t in range(n):
        rem_idx = np.flatnonzero(remaining)
        z = np.empty((rem_idx.size, 3 * h + 1))
        z[:, :h] = eu
        z[:, h : 2 * h] = ec[rem_idx]
        z[:, 2 * h : 3 * h] = ctx
        z[:, -1] = t / n
        h1 = np.tanh(affine_forward(z, params["score1_w"], params["score1_b"]))
        scores_local = (affine_forward(h1, params["score2_w"], params["score2_b"]))[:, 0]
        scores = np.zeros(m)
        scores[rem_idx] = scores_local
        probs = masked_softmax(scores, remaining)

        if order is not None:
            pick = order[t]
            if not remaining[pick]:
                raise ContractError("order revisits an already-selected index")
        elif mode == "greedy":
            pick = int(np.argmax(probs))  # ties resolve to the lowest index
        elif mode == "sample":
            if rng is None:
                raise ContractError("sample mode requires a seeded rng")
            local = rng.choice(rem_idx.size, p=probs[rem_idx] / probs[rem_idx].sum())
            pick = int(rem_idx[local])
        else:
            raise ContractError(f"unknown mode {mode!r}")

        step_probs[t] = probs[pick]
        if want_cache:
            cache.steps.append(
                _StepCache(
                    rem_idx=rem_idx,
                    z=z,
                    h1=h1,
                    probs=probs[rem_idx],
                    local_choice=int(np.flatnonzero(rem_idx == pick)[0]),
                )
            )
        chosen.append(pick)
        remaining[pick] = False
        ctx_sum += ec[pick]
        ctx = ctx_sum / (t + 1)

    glist = GeneratedList(
        order=tuple(chosen),
        step_probs=step_probs,
        log_prob=float(np.log(step_probs).sum()),
    )
    return glist, cache


def _backward_from_seeds(
    request: Request,
    params: ParamSet,
    order: tuple[int, ...],
    cache: _DecodeCache,
    seeds: list[Array],
) -> dict[str, Array]:
    """Accumulate parameter gradients given per-step score gradients.

    `seeds[t]` holds d(objective)/d(step-t scores), aligned with the step's
    remaining-candidate indices. Covers every parameter, including the
    cross-step path through the selected-items context.
    """
    m, n = request.m, request.list_len
    h = params["user_w"].shape[1]
    w1, w2 = params["score1_w"], params["score2_w"]
    eu, ec = cache.eu, cache.ec

    d_eu = np.zeros(h)
    d_ec = np.zeros((m, h))
    d_w1 = np.zeros_like(w1)
    d_b1 = np.zeros(h)
    d_w2 = np.zeros_like(w2)
    d_b2 = np.zeros(1)

    for t in range(n - 1, -1, -1):
        step = cache.steps[t]
        d_s = np.asarray(seeds[t], dtype=np.float64)[:, None]  # (R, 1)
        d_w2 += step.h1.T @ d_s
        d_b2 += d_s.sum(axis=0)
        d_h1 = d_s @ w2.T
        d_a1 = d_h1 * (1.0 - step.h1 * step.h1)
        d_w1 += step.z.T @ d_a1
        d_b1 += d_a1.sum(axis=0)
        d_z = d_a1 @ w1.T
        d_eu += d_z[:, :h].sum(axis=0)
        d_ec[step.rem_idx] += d_z[:, h : 2 * h]
        if t > 0:
            d_ctx = d_z[:, 2 * h : 3 * h].sum(axis=0)
            d_ec[list(order[:t])] += d_ctx / t

    d_au = d_eu * (1.0 - eu * eu)
    d_ac = d_ec * (1.0 - ec * ec)
    return {
        "user_w": np.outer(request.user, d_au),
        "user_b": d_au,
        "item_w": request.candidates.T @ d_ac,
        "item_b": d_ac.sum(axis=0),
        "score1_w": d_w1,
        "score1_b": d_b1,
        "score2_w": d_w2,
        "score2_b": d_b2,
    }


def generate(
    request: Request,
    params: ParamSet,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
) -> GeneratedList:
    """Generate a list. Greedy mode picks the most probable item at each
    step (ties to the lowest index); sample mode draws from the step
    distribution using the caller's rng."""
    glist, _ = _decode(request, params, mode=mode, rng=rng)
    return glist


def list_log_prob(request: Request, params: ParamSet, order) -> tuple[float, Array]:
    """Probability the generator assigns to producing exactly `order`."""
    order = _check_order(request, order)
    glist, _ = _decode(request, params, order=order)
    return glist.log_prob, glist.step_probs


def grad_log_prob(request: Request, params: ParamSet, order, mask: AdaptableMask) -> Array:
    """d log P(order) / d params, restricted to the masked coordinates."""
    order = _check_order(request, order)
    mask.validate(params)
    _, cache = _decode(request, params, order=order, want_cache=True)
    seeds = []
    for step in cache.steps:
        seed = -step.probs.copy()
        seed[step.local_choice] += 1.0
        seeds.append(seed)
    grads = _backward_from_seeds(request, params, order, cache, seeds)
    return mask.gather(params, grads)
