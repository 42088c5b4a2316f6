"""MAPL policy engine: pattern grammar, intersection composition, evaluation.

A policy is a (resources, denied_resources, constraints) triple with an
optional parent link and validity window. Policies compose only by
intersection: allowed sets conjoin, denial sets union, constraints merge
tightest-wins. Composition therefore never widens what a single policy
grants, and a denial anywhere in a chain is a denial everywhere.

Intersection here is extensional, not symbolic: a composed policy keeps
both operands' pattern lists and matches conjunctively. No closed-form
pattern product is ever computed.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from functools import lru_cache
from typing import Any, Collection, Iterable, Mapping

from .clock import parse_rfc3339, render_rfc3339
from .errors import AwfError


class PolicyError(AwfError):
    code = "POLICY"


class PolicySyntaxError(PolicyError):
    code = "SYNTAX"


class BadPatternError(PolicyError):
    code = "BAD_PATTERN"


class UnknownPolicyError(PolicyError):
    code = "UNKNOWN_POLICY"


class PolicyCycleError(PolicyError):
    code = "CYCLE"


# ---------------------------------------------------------------------------
# Resource patterns
# ---------------------------------------------------------------------------
#
# Patterns are colon-separated segments. A segment is either:
#   **      one or more segments (recursive)
#   *       exactly one segment
#   literal possibly carrying embedded * as an any-substring glob
#
# The embedded glob deliberately crosses segment boundaries so a bare
# `*credential*` denies `fs:credentials.db` as well as `credential`.


@lru_cache(maxsize=4096)
def _compile_pattern(text: str) -> re.Pattern[str]:
    if not text:
        raise BadPatternError("empty resource pattern")
    parts = []
    for segment in text.split(":"):
        if segment == "":
            raise BadPatternError(f"empty segment in pattern {text!r}")
        if segment == "**":
            parts.append(r"[^:]+(?::[^:]+)*")
        elif segment == "*":
            parts.append(r"[^:]+")
        else:
            chunk = ".*".join(re.escape(piece) for piece in segment.split("*"))
            parts.append(chunk)
    return re.compile("^" + ":".join(parts) + "$")


@dataclass(frozen=True)
class ResourcePattern:
    """A parsed resource pattern; construction validates the grammar."""

    text: str

    def __post_init__(self) -> None:
        _compile_pattern(self.text)

    def matches(self, resource: str) -> bool:
        return _match_cached(self.text, resource)

    def __str__(self) -> str:
        return self.text


@lru_cache(maxsize=1 << 18)
def _match_cached(pattern_text: str, resource: str) -> bool:
    return _compile_pattern(pattern_text).fullmatch(resource) is not None


def match_resource(pattern: ResourcePattern | str, resource: str) -> bool:
    """True iff the pattern matches the concrete (wildcard-free) resource."""
    text = pattern.text if isinstance(pattern, ResourcePattern) else pattern
    return _match_cached(text, resource)


def is_concrete(resource: str) -> bool:
    return "*" not in resource and resource != "" and "::" not in resource


def _parse_patterns(values: Any, where: str) -> tuple[ResourcePattern, ...]:
    if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
        raise PolicySyntaxError(f"{where} must be a list of pattern strings")
    return tuple(ResourcePattern(v) for v in values)


# ---------------------------------------------------------------------------
# Parameter constraints
# ---------------------------------------------------------------------------
#
# Denied value patterns match as substring globs ("DROP" catches
# "DROP TABLE x"), mirroring the deny-biased posture of resource denials.
# Allowed value patterns match the full value, so an allow-list entry
# "2024-Q1" admits exactly that value.


@lru_cache(maxsize=1 << 16)
def _value_pattern(pattern: str, substring: bool) -> re.Pattern[str]:
    chunk = ".*".join(re.escape(piece) for piece in pattern.split("*"))
    if substring:
        return re.compile(chunk)
    return re.compile("^" + chunk + "$")


def _value_matches(pattern: str, value: str, *, substring: bool) -> bool:
    if substring:
        return _value_pattern(pattern, True).search(value) is not None
    return _value_pattern(pattern, False).fullmatch(value) is not None


@dataclass(frozen=True)
class ParamRule:
    """One parameter constraint: patterns for one param under one resource scope."""

    resource: ResourcePattern
    param: str
    patterns: tuple[str, ...]

    def applies(self, resource: str) -> bool:
        return self.resource.matches(resource)


def _parse_param_rules(obj: Any, where: str) -> tuple[ParamRule, ...]:
    """Accept both constraint shapes.

    Three-level: {resource_pattern: {param: [patterns]}}.
    Two-level:   {param: [patterns]}, scoped to every resource (pattern **).
    """
    if obj is None:
        return ()
    if not isinstance(obj, dict):
        raise PolicySyntaxError(f"{where} must be a map")
    rules: list[ParamRule] = []
    for key, value in obj.items():
        if not isinstance(key, str):
            raise PolicySyntaxError(f"{where} keys must be strings")
        if isinstance(value, dict):
            scope = ResourcePattern(key)
            for param, patterns in value.items():
                if not isinstance(patterns, list) or not all(
                    isinstance(p, str) for p in patterns
                ):
                    raise PolicySyntaxError(
                        f"{where}[{key!r}][{param!r}] must be a list of strings"
                    )
                rules.append(ParamRule(scope, str(param), tuple(patterns)))
        elif isinstance(value, list):
            if not all(isinstance(p, str) for p in value):
                raise PolicySyntaxError(f"{where}[{key!r}] must be a list of strings")
            rules.append(ParamRule(ResourcePattern("**"), key, tuple(value)))
        else:
            raise PolicySyntaxError(f"{where}[{key!r}] has unsupported shape")
    return tuple(rules)


def _render_param_rules(rules: tuple[ParamRule, ...]) -> dict[str, dict[str, list[str]]]:
    out: dict[str, dict[str, list[str]]] = {}
    for rule in rules:
        out.setdefault(rule.resource.text, {})[rule.param] = list(rule.patterns)
    return out


@dataclass(frozen=True)
class Constraints:
    """Operational constraints: parameter rules, attestations, numeric limits.

    ``parameters`` rules are conjunctive: every applicable rule for a param
    must admit the value. ``denied_parameters`` rules are disjunctive: any
    hit denies. ``numeric_limits`` are advisory ceilings consumed by
    verifiers, not by ``evaluate``.
    """

    parameters: tuple[ParamRule, ...] = ()
    denied_parameters: tuple[ParamRule, ...] = ()
    attestations: frozenset[str] = frozenset()
    numeric_limits: tuple[tuple[str, int], ...] = ()

    @classmethod
    def from_document(cls, obj: Any) -> "Constraints":
        if obj is None:
            return cls()
        if not isinstance(obj, dict):
            raise PolicySyntaxError("constraints must be a map")
        unknown = set(obj) - {
            "parameters",
            "denied_parameters",
            "attestations",
            "numeric_limits",
        }
        if unknown:
            raise PolicySyntaxError(f"unknown constraints fields: {sorted(unknown)}")
        attestations = obj.get("attestations", [])
        if not isinstance(attestations, list) or not all(
            isinstance(a, str) and a for a in attestations
        ):
            raise PolicySyntaxError("constraints.attestations must be a list of names")
        limits_obj = obj.get("numeric_limits", {})
        if not isinstance(limits_obj, dict):
            raise PolicySyntaxError("constraints.numeric_limits must be a map")
        limits = []
        for name, value in limits_obj.items():
            if isinstance(value, bool) or not isinstance(value, int):
                raise PolicySyntaxError(
                    f"numeric limit {name!r} must be an integer (floats are not byte-stable)"
                )
            limits.append((str(name), value))
        return cls(
            parameters=_parse_param_rules(obj.get("parameters"), "constraints.parameters"),
            denied_parameters=_parse_param_rules(
                obj.get("denied_parameters"), "constraints.denied_parameters"
            ),
            attestations=frozenset(attestations),
            numeric_limits=tuple(sorted(limits)),
        )

    def to_document(self) -> dict[str, Any]:
        doc: dict[str, Any] = {}
        if self.parameters:
            doc["parameters"] = _render_param_rules(self.parameters)
        if self.denied_parameters:
            doc["denied_parameters"] = _render_param_rules(self.denied_parameters)
        if self.attestations:
            doc["attestations"] = sorted(self.attestations)
        if self.numeric_limits:
            doc["numeric_limits"] = dict(self.numeric_limits)
        return doc

    def limit(self, name: str) -> int | None:
        for key, value in self.numeric_limits:
            if key == name:
                return value
        return None

    def is_empty(self) -> bool:
        return not (
            self.parameters
            or self.denied_parameters
            or self.attestations
            or self.numeric_limits
        )


def _dedupe(items: Iterable) -> tuple:
    seen = set()
    out = []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return tuple(out)


def most_restrictive(c1: Constraints, c2: Constraints) -> Constraints:
    """Tightest-wins merge of two constraint sets.

    Allowed parameter rules conjoin (a value passes only if every side that
    constrains the param admits it), denied rules and attestations union,
    numeric limits take the element-wise minimum.
    """
    limits: dict[str, int] = dict(c1.numeric_limits)
    for name, value in c2.numeric_limits:
        limits[name] = min(limits[name], value) if name in limits else value
    return Constraints(
        parameters=_dedupe(c1.parameters + c2.parameters),
        denied_parameters=_dedupe(c1.denied_parameters + c2.denied_parameters),
        attestations=c1.attestations | c2.attestations,
        numeric_limits=tuple(sorted(limits.items())),
    )


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

PatternGroup = tuple[ResourcePattern, ...]


@dataclass(frozen=True)
class Policy:
    """An immutable policy.

    ``allow_groups`` is a conjunction of disjunctions: a resource is allowed
    iff, for every group, it matches at least one pattern in that group.
    A freshly parsed policy has at most one group; intersection concatenates
    groups. ``allow_groups=None`` means the policy does not constrain
    resources at all (a document with no ``resources`` field), which is
    distinct from an explicit empty list (one empty group: nothing allowed).
    """

    policy_id: str
    extends: str | None = None
    allow_groups: tuple[PatternGroup, ...] | None = ((),)
    denied: tuple[ResourcePattern, ...] = ()
    constraints: Constraints = field(default_factory=Constraints)
    not_before: datetime | None = None
    not_after: datetime | None = None

    @property
    def resources(self) -> tuple[ResourcePattern, ...]:
        """Flat pattern list for simple (single-group) policies."""
        if self.allow_groups is None:
            return ()
        if len(self.allow_groups) != 1:
            raise ValueError("composite policy has no flat resource list")
        return self.allow_groups[0]

    @property
    def has_validity(self) -> bool:
        return self.not_before is not None or self.not_after is not None

    def allows_resource(self, resource: str) -> bool:
        if self.allow_groups is None:
            return True
        return all(
            any(p.matches(resource) for p in group) for group in self.allow_groups
        )

    def denies_resource(self, resource: str) -> bool:
        return any(p.matches(resource) for p in self.denied)

    def to_document(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"policy_id": self.policy_id}
        if self.extends:
            doc["extends"] = self.extends
        if self.allow_groups is not None:
            if len(self.allow_groups) == 1:
                doc["resources"] = [p.text for p in self.allow_groups[0]]
            else:
                doc["resource_groups"] = [
                    [p.text for p in group] for group in self.allow_groups
                ]
        if self.denied:
            doc["denied_resources"] = [p.text for p in self.denied]
        if not self.constraints.is_empty():
            doc["constraints"] = self.constraints.to_document()
        validity: dict[str, str] = {}
        if self.not_before is not None:
            validity["not_before"] = render_rfc3339(self.not_before)
        if self.not_after is not None:
            validity["not_after"] = render_rfc3339(self.not_after)
        if validity:
            doc["validity"] = validity
        return doc


_POLICY_FIELDS = {
    "policy_id",
    "extends",
    "resources",
    "denied_resources",
    "constraints",
    "validity",
}


def parse_policy(document: str | bytes | Mapping[str, Any]) -> Policy:
    """Parse a policy document (JSON text or an already-loaded mapping).

    Unknown fields are rejected: a typo'd denial that silently parses is a
    policy hole, not forward compatibility.
    """
    if isinstance(document, (str, bytes)):
        try:
            obj = json.loads(document)
        except json.JSONDecodeError as exc:
            raise PolicySyntaxError(f"invalid JSON: {exc}") from exc
    else:
        obj = dict(document)
    if not isinstance(obj, dict):
        raise PolicySyntaxError("policy document must be a JSON object")

    unknown = set(obj) - _POLICY_FIELDS
    if unknown:
        raise PolicySyntaxError(f"unknown policy fields: {sorted(unknown)}")

    policy_id = obj.get("policy_id")
    if not isinstance(policy_id, str) or not policy_id:
        raise PolicySyntaxError("policy_id must be a non-empty string")

    extends = obj.get("extends")
    if extends is not None and (not isinstance(extends, str) or not extends):
        raise PolicySyntaxError("extends must be a non-empty string when present")

    if "resources" in obj:
        allow_groups: tuple[PatternGroup, ...] | None = (
            _parse_patterns(obj["resources"], "resources"),
        )
    else:
        allow_groups = None

    denied = _parse_patterns(obj.get("denied_resources", []), "denied_resources")
    constraints = Constraints.from_document(obj.get("constraints"))

    not_before = not_after = None
    validity = obj.get("validity")
    if validity is not None:
        if not isinstance(validity, dict) or set(validity) - {"not_before", "not_after"}:
            raise PolicySyntaxError("validity must carry only not_before/not_after")
        try:
            if "not_before" in validity:
                not_before = parse_rfc3339(validity["not_before"])
            if "not_after" in validity:
                not_after = parse_rfc3339(validity["not_after"])
        except (ValueError, TypeError) as exc:
            raise PolicySyntaxError(f"invalid validity timestamp: {exc}") from exc

    return Policy(
        policy_id=policy_id,
        extends=extends,
        allow_groups=allow_groups,
        denied=denied,
        constraints=constraints,
        not_before=not_before,
        not_after=not_after,
    )


def intersect(p1: Policy, p2: Policy) -> Policy:
    """Compose two policies: allow only what both permit, deny what either forbids."""
    if p1.allow_groups is None and p2.allow_groups is None:
        allow_groups: tuple[PatternGroup, ...] | None = None
    else:
        groups: list[PatternGroup] = []
        for side in (p1, p2):
            if side.allow_groups is not None:
                groups.extend(side.allow_groups)
        allow_groups = _dedupe(groups)

    not_befores = [t for t in (p1.not_before, p2.not_before) if t is not None]
    not_afters = [t for t in (p1.not_after, p2.not_after) if t is not None]

    return Policy(
        policy_id=f"({p1.policy_id})&({p2.policy_id})",
        extends=None,
        allow_groups=allow_groups,
        denied=_dedupe(p1.denied + p2.denied),
        constraints=most_restrictive(p1.constraints, p2.constraints),
        not_before=max(not_befores) if not_befores else None,
        not_after=min(not_afters) if not_afters else None,
    )


def _store_get(store: Any, policy_id: str) -> Policy:
    if isinstance(store, Mapping):
        try:
            return store[policy_id]
        except KeyError:
            raise UnknownPolicyError(f"unknown policy {policy_id!r}") from None
    return store.get_policy(policy_id)


def resolve_effective(policy_id: str, store: Any) -> Policy:
    """Fold intersection along the extends chain, root first.

    ``store`` is anything with ``get_policy(policy_id) -> Policy`` (or a
    plain mapping). A single policy with no parent resolves to itself.
    """
    chain: list[Policy] = []
    seen: set[str] = set()
    current: str | None = policy_id
    while current is not None:
        if current in seen:
            raise PolicyCycleError(f"extends cycle through {current!r}")
        seen.add(current)
        policy = _store_get(store, current)
        chain.append(policy)
        current = policy.extends
    chain.reverse()
    effective = chain[0]
    for policy in chain[1:]:
        effective = intersect(effective, policy)
    return effective


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


class Verdict(str, Enum):
    ALLOW = "ALLOW"
    DENY = "DENY"


class DenyReason(str, Enum):
    DENIED_RESOURCE = "DENIED_RESOURCE"
    NOT_IN_ALLOWED = "NOT_IN_ALLOWED"
    PARAM_DENIED = "PARAM_DENIED"
    PARAM_NOT_ALLOWED = "PARAM_NOT_ALLOWED"
    MISSING_ATTESTATION = "MISSING_ATTESTATION"
    POLICY_EXPIRED = "POLICY_EXPIRED"


@dataclass(frozen=True)
class Decision:
    """Outcome of a policy evaluation; DENY always carries a reason.

    ``detail`` names the resource or parameter at fault but never echoes
    pattern lists or other policy contents.
    """

    verdict: Verdict
    reason: DenyReason | None = None
    detail: str = ""

    @property
    def allowed(self) -> bool:
        return self.verdict is Verdict.ALLOW

    @classmethod
    def allow(cls) -> "Decision":
        return cls(Verdict.ALLOW)

    @classmethod
    def deny(cls, reason: DenyReason, detail: str) -> "Decision":
        return cls(Verdict.DENY, reason, detail)

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict.value,
            "reason": self.reason.value if self.reason else None,
            "detail": self.detail,
        }


def evaluate(
    policy: Policy,
    resource: str,
    params: Mapping[str, Any] | None = None,
    attestations: Collection[str] = (),
    now: datetime | None = None,
) -> Decision:
    """Evaluate a request against a fully resolved policy.

    Checks run in a fixed order so ties between failing reasons are
    deterministic: expiry, denied resource, allowed resource, denied
    params, allowed params, attestations. Denials are checked before
    allowances, so a resource matched by both always denies.
    """
    params = params or {}

    if policy.has_validity:
        if now is None:
            raise ValueError("policy has a validity window; evaluation requires 'now'")
        if policy.not_before is not None and now < policy.not_before:
            return Decision.deny(DenyReason.POLICY_EXPIRED, "policy not yet valid")
        if policy.not_after is not None and now > policy.not_after:
            return Decision.deny(DenyReason.POLICY_EXPIRED, "policy validity window has passed")

    if policy.denies_resource(resource):
        return Decision.deny(
            DenyReason.DENIED_RESOURCE, f"resource {resource!r} is explicitly denied"
        )
    if not policy.allows_resource(resource):
        return Decision.deny(
            DenyReason.NOT_IN_ALLOWED, f"resource {resource!r} is not in the allowed set"
        )

    for rule in policy.constraints.denied_parameters:
        if rule.param in params and rule.applies(resource):
            value = str(params[rule.param])
            if any(_value_matches(p, value, substring=True) for p in rule.patterns):
                return Decision.deny(
                    DenyReason.PARAM_DENIED, f"parameter {rule.param!r} matches a denied pattern"
                )

    for rule in policy.constraints.parameters:
        if rule.param in params and rule.applies(resource):
            value = str(params[rule.param])
            if not any(_value_matches(p, value, substring=False) for p in rule.patterns):
                return Decision.deny(
                    DenyReason.PARAM_NOT_ALLOWED,
                    f"parameter {rule.param!r} is outside the allowed values",
                )

    present = set(attestations)
    for name in sorted(policy.constraints.attestations):
        if name not in present:
            return Decision.deny(
                DenyReason.MISSING_ATTESTATION, f"required attestation {name!r} not present"
            )

    return Decision.allow()


def permission_set(policy: Policy, universe: Iterable[str]) -> set[str]:
    """Resources of a finite universe the policy permits (ignoring params).

    This is the finite restriction of the permission function and doubles
    as the brute-force oracle for composition properties.
    """
    allowed: set[str] = set()
    for resource in universe:
        if not is_concrete(resource):
            raise ValueError(f"universe resource {resource!r} is not concrete")
        if policy.denies_resource(resource):
            continue
        if policy.allows_resource(resource):
            allowed.add(resource)
    return allowed
