"""Seeded randomness and integer apportionment helpers.

All randomness in the toolkit flows through :class:`random.Random` (the
MT19937 generator from the standard library), which produces identical
sequences for identical seeds on every platform and Python version we
support. Callers never touch global RNG state; every operation takes an
explicit seed and builds its own generator, so parallel callers cannot
interfere with each other.
"""

from __future__ import annotations

import hashlib
import random
from typing import Sequence


def derive_seed(seed: int, *scope: str) -> int:
    """Derive a child seed from a base seed and a scope path.

    Hash-based so that (seed, "demographics", "questions") and
    (seed, "demographics", "personas") give unrelated streams while staying
    reproducible across platforms.
    """
    material = str(seed) + "".join("\x1f" + part for part in scope)
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def rng_from(seed: int, *scope: str) -> random.Random:
    """Build a fresh generator for ``seed`` scoped by the given path."""
    if scope:
        return random.Random(derive_seed(seed, *scope))
    return random.Random(seed)


def largest_remainder(
    count: int,
    weights: Sequence[float],
    tie_break: Sequence[float] | None = None,
) -> list[int]:
    """Apportion ``count`` seats proportionally to ``weights``.

    Floors of the exact quotas are assigned first; leftover seats go to the
    largest fractional remainders. Ties are resolved by ``tie_break``
    (higher wins) when given, then by position, which keeps the result
    deterministic for any input.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    k = len(weights)
    if k == 0:
        if count:
            raise ValueError("cannot apportion a positive count over no weights")
        return []
    if any(w < 0 for w in weights):
        raise ValueError("weights must be nonnegative")
    total = float(sum(weights))
    if total == 0:
        if count:
            raise ValueError("cannot apportion a positive count over zero weights")
        return [0] * k

    quotas = [count * w / total for w in weights]
    alloc = [int(q) for q in quotas]
    leftover = count - sum(alloc)
    remainders = [q - a for q, a in zip(quotas, alloc)]
    secondary = tie_break if tie_break is not None else [0.0] * k
    order = sorted(range(k), key=lambda i: (-remainders[i], -secondary[i], i))
    for i in order[:leftover]:
        alloc[i] += 1
    return alloc


def stochastic_remainder(
    count: int,
    weights: Sequence[float],
    rng: random.Random,
) -> list[int]:
    """Apportion with deterministic floors and randomized leftover seats.

    Each leftover seat is drawn (without replacement across seats) with
    probability proportional to the fractional remainders, so a single-seat
    apportionment lands on type ``i`` with probability exactly ``weights[i]``
    when the weights are normalized. Every allocation stays within one seat
    of the exact quota and sums to ``count``.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    k = len(weights)
    if k == 0:
        if count:
            raise ValueError("cannot apportion a positive count over no weights")
        return []
    if any(w < 0 for w in weights):
        raise ValueError("weights must be nonnegative")
    total = float(sum(weights))
    if total == 0:
        if count:
            raise ValueError("cannot apportion a positive count over zero weights")
        return [0] * k

    quotas = [count * w / total for w in weights]
    alloc = [int(q) for q in quotas]
    leftover = count - sum(alloc)
    remainders = [q - a for q, a in zip(quotas, alloc)]
    eligible = [i for i in range(k) if remainders[i] > 0]
    for _ in range(leftover):
        if not eligible:
            # Float round-off starved the remainder pool; fall back to the
            # least-served types so the allocation still sums to count.
            eligible = sorted(range(k), key=lambda i: (alloc[i] - quotas[i], i))[:1]
        mass = sum(remainders[i] for i in eligible)
        if mass <= 0:
            chosen = eligible[0]
        else:
            pick = rng.random() * mass
            acc = 0.0
            chosen = eligible[-1]
            for i in eligible:
                acc += remainders[i]
                if pick < acc:
                    chosen = i
                    break
        alloc[chosen] += 1
        eligible = [i for i in eligible if i != chosen]
    return alloc
