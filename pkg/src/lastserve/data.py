"""Synthetic interaction logs with inter-item influence, plus dataset IO.

The world model stands in for real user behavior: click probability decays
with display position and drops when an item is similar to items shown
above it, so the best ordering of a candidate set is generally not the
pointwise-affinity ordering and re-ranking has something to gain.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .actor import Request
from .core import Array, ContractError, as_tensor


class DatasetFormatError(ValueError):
    """A dataset file line could not be parsed into a record."""


@dataclass
class InteractionRecord:
    """A logged impression: user, displayed item list, binary clicks."""

    user: Array
    items: Array
    clicks: Array

    def __post_init__(self):
        self.user = as_tensor(self.user)
        self.items = as_tensor(self.items)
        self.clicks = np.asarray(self.clicks, dtype=np.int64)
        if self.items.ndim != 2 or self.user.ndim != 1:
            raise ContractError("user must be 1-D, items 2-D")
        if self.clicks.shape != (self.items.shape[0],):
            raise ContractError("clicks must align with items")
        if not np.all((self.clicks == 0) | (self.clicks == 1)):
            raise ContractError("clicks must be binary")

    def request(self, list_len: int) -> Request:
        return Request(user=self.user, candidates=self.items, list_len=list_len)


@dataclass
class WorldModel:
    """Latent behavior model used to draw synthetic clicks.

    user_map/item_map project observed features into a shared latent space;
    rho is the per-position probability decay and sim_penalty scales the
    exponential penalty on similarity to already-shown items.
    """

    user_map: Array
    item_map: Array
    rho: float = 0.95
    sim_penalty: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.user_map = as_tensor(self.user_map)
        self.item_map = as_tensor(self.item_map)
        if not (0.0 < self.rho <= 1.0):
            raise ContractError("rho must lie in (0, 1]")
        if self.sim_penalty < 0.0:
            raise ContractError("sim_penalty must be >= 0")


def generate_world(
    d_user: int = 8,
    d_item: int = 8,
    d_latent: int = 8,
    rho: float = 0.95,
    sim_penalty: float = 0.5,
    seed: int = 0,
) -> WorldModel:
    """Draw latent projection factors uniformly in [-1, 1]."""
    rng = np.random.default_rng(seed)
    return WorldModel(
        user_map=rng.uniform(-1.0, 1.0, (d_user, d_latent)),
        item_map=rng.uniform(-1.0, 1.0, (d_item, d_latent)),
        rho=rho,
        sim_penalty=sim_penalty,
        seed=seed,
    )


def click_model(world: WorldModel, user, items) -> Array:
    """Per-position click probabilities for an ordered display list.

    p_j = sigmoid(<latent user, latent item_j>) * rho^j
          * exp(-sim_penalty * max cosine similarity to items shown before j),
    clamped to [0.001, 0.999]. Position 0 carries no decay and no penalty.
    """
    user = as_tensor(user)
    items = as_tensor(items)
    if items.ndim != 2 or items.shape[0] < 1:
        raise ContractError("items must be a non-empty (n, d_item) array")
    n = items.shape[0]
    zu = user @ world.user_map
    zi = items @ world.item_map
    base = expit(zi @ zu)
    decay = world.rho ** np.arange(n)

    penalty = np.ones(n)
    norms = np.linalg.norm(items, axis=1)
    for j in range(1, n):
        denom = norms[j] * norms[:j]
        denom = np.where(denom > 0.0, denom, 1.0)
        sims = (items[:j] @ items[j]) / denom
        penalty[j] = math.exp(-world.sim_penalty * sims.max())

    return np.clip(base * decay * penalty, 0.001, 0.999)


def generate_dataset(
    world: WorldModel,
    n_records: int,
    m: int,
    n: int,
    seed: int = 0,
) -> list[InteractionRecord]:
    """Sample `n_records` logged impressions of m displayed items each.

    Features are uniform in [-1, 1]; clicks are Bernoulli draws from the
    click model, so downstream training faces realistic label noise. `n` is
    the slate length the logs will be re-ranked into and must not exceed m.
    """
    if n_records < 0:
        raise ContractError("n_records must be >= 0")
    if not 1 <= n <= m:
        raise ContractError(f"need 1 <= n <= m, got n={n} m={m}")
    d_user = world.user_map.shape[0]
    d_item = world.item_map.shape[0]
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(n_records):
        user = rng.uniform(-1.0, 1.0, d_user)
        items = rng.uniform(-1.0, 1.0, (m, d_item))
        probs = click_model(world, user, items)
        clicks = (rng.random(m) < probs).astype(np.int64)
        records.append(InteractionRecord(user=user, items=items, clicks=clicks))
    return records


def brute_force_best_list(
    request: Request,
    evaluate,
    max_arrangements: int = 1_000_000,
) -> tuple[tuple[int, ...], float]:
    """Enumerate every ordered n-of-m arrangement and return the argmax.

    `evaluate` maps an order tuple to a score. Ties keep the
    lexicographically smallest order. Refuses instances with more than
    `max_arrangements` arrangements.
    """
    count = math.perm(request.m, request.list_len)
    if count > max_arrangements:
        raise ContractError(
            f"{count} arrangements exceed the enumeration limit {max_arrangements}"
        )
    best_order: tuple[int, ...] | None = None
    best_score = -math.inf
    for order in itertools.permutations(range(request.m), request.list_len):
        score = float(evaluate(order))
        if score > best_score:
            best_order, best_score = order, score
    return best_order, best_score


def save_dataset(path, records: list[InteractionRecord]) -> None:
    """One JSON object per line: {"user": [...], "items": [[...]], "clicks": [...]}."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "user": rec.user.tolist(),
                        "items": rec.items.tolist(),
                        "clicks": rec.clicks.tolist(),
                    }
                )
            )
            fh.write("\n")


def load_dataset(path) -> list[InteractionRecord]:
    """Parse a JSONL dataset; malformed lines report their line number."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(
                    InteractionRecord(
                        user=obj["user"], items=obj["items"], clicks=obj["clicks"]
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from exc
    return records


def save_world(path, world: WorldModel) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "user_map": world.user_map.tolist(),
                "item_map": world.item_map.tolist(),
                "rho": world.rho,
                "sim_penalty": world.sim_penalty,
                "seed": world.seed,
            },
            fh,
        )


def load_world(path) -> WorldModel:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    return WorldModel(
        user_map=obj["user_map"],
        item_map=obj["item_map"],
        rho=float(obj["rho"]),
        sim_penalty=float(obj["sim_penalty"]),
        seed=int(obj["seed"]),
    )
