"""List evaluation: exact ranking metrics and a learned click model.

Two families of list scorers live here. The metric family (NDCG@k, MAP@k)
scores a list against binary relevance labels and needs no parameters. The
learned family predicts a click probability for every position of a list
from user, item, whole-list and position features; its mean over the top n
positions is the ``evaluator@n`` score used to compare serving policies.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .core import (
    Array,
    ContractError,
    ModelDims,
    ParamSet,
    as_tensor,
)

EVALUATOR_ENTRY_NAMES = (
    "user_w",
    "user_b",
    "item_w",
    "item_b",
    "logit1_w",
    "logit1_b",
    "logit2_w",
    "logit2_b",
)


def _check_labels(labels) -> Array:
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 1:
        raise ContractError("labels must be a 1-D sequence")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ContractError("labels must be binary")
    return labels


def ndcg_at_k(labels, k: int) -> float:
    """Normalized DCG over the first min(k, len) positions.

    Gains are linear (label / log2(pos+1), positions 1-based); the
    normalizer is the DCG of the labels sorted descending. Returns 0.0 when
    the list holds no relevant item.
    """
    labels = _check_labels(labels)
    if k < 1:
        raise ContractError("k must be >= 1")
    if labels.sum() == 0:
        return 0.0
    kk = min(k, labels.size)
    discounts = 1.0 / np.log2(np.arange(2, kk + 2))
    dcg = float(labels[:kk] @ discounts)
    ideal = np.sort(labels)[::-1]
    idcg = float(ideal[:kk] @ discounts)
    return dcg / idcg


def map_at_k(labels, k: int) -> float:
    """Truncated average precision: sum of precision@i at relevant i <= k,
    normalized by min(k, total relevant). 0.0 with no relevant item."""
    labels = _check_labels(labels)
    if k < 1:
        raise ContractError("k must be >= 1")
    total_relevant = int(labels.sum())
    if total_relevant == 0:
        return 0.0
    kk = min(k, labels.size)
    hits = 0
    precision_sum = 0.0
    for i in range(kk):
        if labels[i] == 1.0:
            hits += 1
            precision_sum += hits / (i + 1)
    return precision_sum / min(k, total_relevant)


def metric_evaluate(labels, order, k: int) -> float:
    """NDCG@k of a re-ranked list, carrying each candidate's logged label
    with it. Assumes per-item feedback is unchanged by reordering."""
    labels = _check_labels(labels)
    order = [int(i) for i in order]
    if any(i < 0 or i >= labels.size for i in order):
        raise ContractError("order references a candidate without a label")
    return ndcg_at_k(labels[order], k)


def init_evaluator_params(dims: ModelDims = ModelDims(), seed: int = 0) -> ParamSet:
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
            "logit1_w": u((z, h), z),
            "logit1_b": np.zeros(h),
            "logit2_w": u((h, 1), h),
            "logit2_b": np.zeros(1),
        }
    )


def evaluator_dims(params: ParamSet) -> ModelDims:
    return ModelDims(
        d_user=params["user_w"].shape[0],
        d_item=params["item_w"].shape[0],
        hidden=params["user_w"].shape[1],
    )


class _ClickCache:
    __slots__ = ("users", "items", "eu", "ec", "ctx", "z", "h1", "logits")

    def __init__(self, users, items, eu, ec, ctx, z, h1, logits):
        self.users = users
        self.items = items
        self.eu = eu
        self.ec = ec
        self.ctx = ctx
        self.z = z
        self.h1 = h1
        self.logits = logits


def _click_forward(users: Array, items: Array, params: ParamSet) -> tuple[Array, _ClickCache]:
    """Batched per-position click logits.

    users: (B, d_user); items: (B, n, d_item), every list in the batch the
    same length. Returns logits (B, n) plus the cache for backward.
    """
    users = np.asarray(users, dtype=np.float64)
    items = np.asarray(items, dtype=np.float64)
    if users.ndim != 2 or items.ndim != 3 or users.shape[0] != items.shape[0]:
        raise ContractError("expected users (B,Du) and items (B,n,Di)")
    b, n, di = items.shape
    if n < 1:
        raise ContractError("lists must hold at least one item")
    h = params["user_w"].shape[1]
    if users.shape[1] != params["user_w"].shape[0] or di != params["item_w"].shape[0]:
        raise ContractError("feature dims do not match evaluator params")

    eu = np.tanh(users @ params["user_w"] + params["user_b"])  # (B, H)
    ec = np.tanh(items.reshape(b * n, di) @ params["item_w"] + params["item_b"]).reshape(b, n, h)
    ctx = ec.mean(axis=1)  # (B, H)

    z = np.empty((b, n, 3 * h + 1))
    z[:, :, :h] = eu[:, None, :]
    z[:, :, h : 2 * h] = ec
    z[:, :, 2 * h : 3 * h] = ctx[:, None, :]
    z[:, :, -1] = (np.arange(n) / n)[None, :]
    zf = z.reshape(b * n, 3 * h + 1)
    h1 = np.tanh(zf @ params["logit1_w"] + params["logit1_b"])
    logits = (h1 @ params["logit2_w"] + params["logit2_b"]).reshape(b, n)
    return logits, _ClickCache(users, items, eu, ec, ctx, z, h1, logits)


def _click_backward(cache: _ClickCache, d_logits: Array, params: ParamSet) -> dict[str, Array]:
    """Parameter gradients given d(objective)/d(logits), shape (B, n)."""
    b, n, h = cache.ec.shape
    d_flat = np.asarray(d_logits, dtype=np.float64).reshape(b * n, 1)

    d_w2 = cache.h1.T @ d_flat
    d_b2 = d_flat.sum(axis=0)
    d_h1 = d_flat @ params["logit2_w"].T
    d_a1 = d_h1 * (1.0 - cache.h1 * cache.h1)
    zf = cache.z.reshape(b * n, 3 * h + 1)
    d_w1 = zf.T @ d_a1
    d_b1 = d_a1.sum(axis=0)
    d_z = (d_a1 @ params["logit1_w"].T).reshape(b, n, 3 * h + 1)

    d_eu = d_z[:, :, :h].sum(axis=1)
    d_ec = d_z[:, :, h : 2 * h].copy()
    d_ctx = d_z[:, :, 2 * h : 3 * h].sum(axis=1)
    d_ec += d_ctx[:, None, :] / n

    d_au = d_eu * (1.0 - cache.eu * cache.eu)
    d_ac = (d_ec * (1.0 - cache.ec * cache.ec)).reshape(b * n, h)
    di = cache.items.shape[2]
    return {
        "user_w": cache.users.T @ d_au,
        "user_b": d_au.sum(axis=0),
        "item_w": cache.items.reshape(b * n, di).T @ d_ac,
        "item_b": d_ac.sum(axis=0),
        "logit1_w": d_w1,
        "logit1_b": d_b1,
        "logit2_w": d_w2,
        "logit2_b": d_b2,
    }


def predict_click_probs(user, items, params: ParamSet) -> Array:
    """Per-position click probabilities for one ordered list.

    Each position's logit sees the user encoding, the item's own encoding,
    the mean encoding of the whole list, and the relative position, so both
    membership and ordering move the outputs.
    """
    user = as_tensor(user)
    items = as_tensor(items)
    if items.ndim != 2 or items.shape[0] < 1:
        raise ContractError("items must be a non-empty (n, d_item) array")
    logits, _ = _click_forward(user[None, :], items[None, :, :], params)
    return expit(logits[0])


def evaluator_at_n(user, items, params: ParamSet, n: int) -> float:
    """Mean predicted click probability of the first n positions."""
    items = as_tensor(items)
    if items.ndim != 2:
        raise ContractError("items must be (len, d_item)")
    if not 1 <= n <= items.shape[0]:
        raise ContractError(f"n must satisfy 1 <= {n} <= {items.shape[0]}")
    probs = predict_click_probs(user, items, params)
    return float(probs[:n].mean())
