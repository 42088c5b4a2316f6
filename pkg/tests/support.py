"""Shared generators and independent oracles for policy tests.

The oracles here deliberately use different algorithms from the engine:
segment-list recursion instead of compiled regexes, and ordered-substring
search for infix globs. Property and acceptance tests compare engine
results against these.
"""

from __future__ import annotations

import random

from awf.mapl import Policy, parse_policy

SEGMENT_POOL = (
    "tool",
    "data",
    "llm",
    "fs",
    "email",
    "db",
    "web",
    "finance",
    "reports",
    "raw",
    "q4",
    "alpha",
    "beta",
)


def make_universe(rng: random.Random, size: int, max_depth: int = 3) -> list[str]:
    universe: set[str] = set()
    while len(universe) < size:
        depth = rng.randint(1, max_depth)
        universe.add(":".join(rng.choice(SEGMENT_POOL) for _ in range(depth)))
    return sorted(universe)


def random_segment_pattern(rng: random.Random, universe: list[str]) -> str:
    """Pattern built from a universe resource using */** segment wildcards."""
    base = rng.choice(universe).split(":")
    out: list[str] = []
    for i, segment in enumerate(base):
        roll = rng.random()
        if roll < 0.15 and i == len(base) - 1:
            out.append("**")
            break
        if roll < 0.35:
            out.append("*")
        else:
            out.append(segment)
    return ":".join(out)


def random_infix_pattern(rng: random.Random, universe: list[str]) -> str:
    """Single-segment substring glob like *credential*."""
    resource = rng.choice(universe)
    segment = rng.choice(resource.split(":"))
    cut = segment[: rng.randint(1, len(segment))]
    return f"*{cut}*"


def random_pattern(rng: random.Random, universe: list[str]) -> str:
    if rng.random() < 0.2:
        return random_infix_pattern(rng, universe)
    return random_segment_pattern(rng, universe)


def random_policy(
    rng: random.Random,
    universe: list[str],
    policy_id: str,
    extends: str | None = None,
    deny_probability: float = 0.6,
) -> Policy:
    doc: dict = {"policy_id": policy_id}
    if extends is not None:
        doc["extends"] = extends
    if rng.random() < 0.9:
        doc["resources"] = [
            random_pattern(rng, universe) for _ in range(rng.randint(1, 4))
        ]
    if rng.random() < deny_probability:
        doc["denied_resources"] = [
            random_pattern(rng, universe) for _ in range(rng.randint(1, 2))
        ]
    return parse_policy(doc)


def segment_oracle(pattern: str, resource: str) -> bool:
    """Reference matcher for patterns without infix globs.

    `*` binds exactly one segment; `**` binds one or more.
    """
    psegs = pattern.split(":")
    rsegs = resource.split(":")

    def rec(i: int, j: int) -> bool:
        if i == len(psegs):
            return j == len(rsegs)
        p = psegs[i]
        if p == "**":
            return any(rec(i + 1, k) for k in range(j + 1, len(rsegs) + 1))
        if j >= len(rsegs):
            return False
        if p == "*" or p == rsegs[j]:
            return rec(i + 1, j + 1)
        return False

    return rec(0, 0)


def infix_oracle(pattern: str, resource: str) -> bool:
    """Reference matcher for whole-string globs: ordered substring search."""
    pieces = pattern.split("*")
    if not resource.startswith(pieces[0]):
        return False
    if not resource.endswith(pieces[-1]):
        return False
    pos = len(pieces[0])
    for piece in pieces[1:-1]:
        found = resource.find(piece, pos)
        if found < 0:
            return False
        pos = found + len(piece)
    return pos + len(pieces[-1]) <= len(resource) or pieces[-1] == ""


def oracle_permission_set(policy: Policy, universe: list[str]) -> set[str]:
    """Per-resource permission oracle over flat pattern lists.

    Only valid for simple (single-group) policies; composition properties
    compare composed results against set operations over these.
    """
    from awf.mapl import match_resource

    allowed = set()
    for resource in universe:
        if any(match_resource(p, resource) for p in policy.denied):
            continue
        if policy.allow_groups is None:
            allowed.add(resource)
        elif any(match_resource(p, resource) for p in policy.resources):
            allowed.add(resource)
    return allowed
