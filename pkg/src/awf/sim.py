"""Simulated agent/tool world for staging boundary crossings.

A world is built from a JSON config: policies, a session principal with
granted attestations, agents with keypairs, and tools behind per-tool
PEPs. Tools are toys (an in-memory file tree, an outbox, canned query
rows); the LLM is a scripted stub whose "reasoning" is a step list that
deterministic corruption rules may extend when poisoned data flows back.

Everything is seeded: keys, session ids, and the clock are derived from
the world seed, and signatures are deterministic, so identical
(world, script) runs produce byte-identical transcripts and audit chains.
"""

from __future__ import annotations

import hashlib
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from . import crypto, pep as pep_mod
from .audit import AuditLog
from .clock import ManualClock
from .context import AuthenticatedContext, make_attestation, new_session
from .delegation import DelegationToken, issue as issue_delegation
from .errors import AwfError
from .pep import PEP, SignedInvocation, SignedResult, Verifier, VerifierResult, VerifierStage, build_invocation, verify_result
from .policy_store import PolicyStore
from .registry import EntityKind, Registry
from .verifiers import (
    MemoryIntegrityVerifier,
    StorageIntegrityPreVerifier,
    ToolAuthorizationVerifier,
    WorkflowIntegrityVerifier,
    make_storage_verifiers,
)

BOUNDARY_KINDS = ("S1_PROMPT", "S2_TOOL", "S3_DATA", "S4_CONTEXT")
_DEFAULT_BOUNDARY = {"fs": "S3_DATA", "web": "S3_DATA", "db": "S3_DATA", "memory": "S4_CONTEXT"}

PROBE_POLICY = {"policy_id": "__probe__", "resources": ["tool:probe"]}


class SimConfigError(AwfError):
    code = "CONFIG"


class ScriptError(AwfError):
    code = "SCRIPT"


def _seeded_id(seed: str, label: str) -> str:
    return hashlib.sha256(f"{seed}:{label}".encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Tool handlers
# ---------------------------------------------------------------------------


def _fs_handlers(state: dict) -> dict[str, Callable]:
    files: dict[str, dict] = state.setdefault("files", {})

    def read(args):
        path = str(args["path"])
        entry = files.get(path)
        if entry is None:
            return {"path": path, "exists": False, "content": ""}
        return {
            "path": path,
            "exists": True,
            "content": entry.get("content", ""),
            "classification": entry.get("classification", "internal"),
        }

    def write(args):
        files[str(args["path"])] = {
            "content": str(args.get("content", "")),
            "classification": "internal",
        }
        return {"path": str(args["path"]), "written": True}

    return {"read": read, "write": write}


def _email_handlers(state: dict) -> dict[str, Callable]:
    outbox: list[dict] = state.setdefault("outbox", [])

    def send(args):
        message = {
            "to": str(args.get("to", "")),
            "subject": str(args.get("subject", "")),
            "body": str(args.get("body", "")),
        }
        outbox.append(message)
        return {"accepted": True, "to": message["to"]}

    return {"send": send}


def _db_handlers(state: dict) -> dict[str, Callable]:
    def query(args):
        return {"query": str(args.get("query", "")), "rows": state.get("rows", [])}

    return {"query": query}


def _memory_handlers(state: dict) -> dict[str, Callable]:
    store: dict[str, Any] = state.setdefault("store", {})

    def update(args):
        store[str(args["field"])] = args.get("value")
        return {"field": str(args["field"]), "stored": True}

    def read(args):
        return {"field": str(args["field"]), "value": store.get(str(args["field"]))}

    return {"update": update, "read": read}


def _shell_handlers(state: dict) -> dict[str, Callable]:
    def run(args):
        return {"exit": 0, "stdout": state.get("stdout", "")}

    def file_write(args):
        return {"path": str(args.get("path", "")), "written": True}

    return {"exec": run, "command_execute": run, "file_write": file_write}


def _web_handlers(state: dict) -> dict[str, Callable]:
    pages: dict[str, str] = state.setdefault("pages", {})

    def fetch(args):
        url = str(args["url"])
        return {"url": url, "content": pages.get(url, "")}

    return {"fetch": fetch}


def _task_handlers(state: dict, operations: Iterable[str]) -> dict[str, Callable]:
    def make(op):
        def run(args):
            return {"ok": True, "operation": op, "summary": state.get("summary", "")}

        return run

    return {op: make(op) for op in operations}


def _echo_handlers(state: dict) -> dict[str, Callable]:
    def echo(args):
        return {"args": dict(args)}

    return {"echo": echo}


_KIND_FACTORIES: dict[str, Callable[[dict], dict[str, Callable]]] = {
    "fs": _fs_handlers,
    "email": _email_handlers,
    "db": _db_handlers,
    "memory": _memory_handlers,
    "shell": _shell_handlers,
    "web": _web_handlers,
    "echo": _echo_handlers,
}


# ---------------------------------------------------------------------------
# Verifier wiring
# ---------------------------------------------------------------------------


class ProbeGuard(Verifier):
    """Benign pass-through verifier carried by the isolation probe tool."""

    name = "probe_guard"
    stage = VerifierStage.PRE

    def check(self, inv, ctx, clock, output=None):
        return VerifierResult.ok()


class AlwaysFailGuard(Verifier):
    """What a corrupted verifier set looks like: everything fails."""

    name = "corrupted_guard"
    stage = VerifierStage.PRE

    def check(self, inv, ctx, clock, output=None):
        return VerifierResult.fail("corrupted verifier")


def _build_verifiers(spec: Mapping[str, Any], tool_state: dict) -> list[Verifier]:
    kind = spec.get("type")
    params = {k: v for k, v in spec.items() if k != "type"}
    if kind == "memory_integrity":
        return [MemoryIntegrityVerifier(**params)]
    if kind == "workflow_integrity":
        return [WorkflowIntegrityVerifier(**params)]
    if kind == "tool_authorization":
        if "dangerous_sequences" in params:
            params["dangerous_sequences"] = [tuple(p) for p in params["dangerous_sequences"]]
        return [ToolAuthorizationVerifier(**params)]
    if kind == "storage_integrity":
        files = tool_state.get("files", {})
        params.setdefault(
            "classifier", lambda path: files.get(path, {}).get("classification")
        )
        pre, post = make_storage_verifiers(**params)
        return [pre, post]
    raise SimConfigError(f"unknown verifier type {kind!r}")


# ---------------------------------------------------------------------------
# World
# ---------------------------------------------------------------------------


@dataclass
class AgentRuntime:
    name: str
    entity_id: str
    keypair: crypto.KeyPair
    intent_policy: str
    corruption_rules: list[dict] = field(default_factory=list)


@dataclass
class SimTool:
    name: str
    kind: str
    entity_id: str
    keypair: crypto.KeyPair
    pep: PEP | None
    handlers: dict[str, Callable]
    boundary: str
    state: dict
    registered: bool
    default_operation: str
    calls: int = 0

    def handler_for(self, operation: str) -> Callable:
        try:
            inner = self.handlers[operation]
        except KeyError:
            raise ScriptError(
                f"tool {self.name!r} has no operation {operation!r}"
            ) from None

        def counted(args):
            self.calls += 1
            return inner(args)

        return counted


class World:
    def __init__(self, config: Mapping[str, Any], probe: bool = False):
        self.config = dict(config)
        self.seed = str(config.get("seed", "world"))
        self.clock = ManualClock(config.get("start_time", "2026-01-01T00:00:00Z"))
        self.rng = random.Random(self.seed)
        self.registry = Registry(clock=self.clock)
        self.store = PolicyStore(store_id=self.seed)
        self.audit = AuditLog(log_id=self.seed)
        self.contexts: dict[str, AuthenticatedContext] = {}
        self.agents: dict[str, AgentRuntime] = {}
        self.tools: dict[str, SimTool] = {}
        self.delegations: dict[str, DelegationToken] = {}
        self.session: AuthenticatedContext | None = None
        self.session_entity: str | None = None
        self.session_keypair: crypto.KeyPair | None = None
        self.principal_id: str | None = None
        self.probe_session: AuthenticatedContext | None = None
        self._build(probe=probe)

    # -- construction -------------------------------------------------------

    def _keypair(self, label: str) -> crypto.KeyPair:
        return crypto.generate_keypair(seed=f"{self.seed}:{label}".encode())

    def _build(self, probe: bool) -> None:
        config = self.config
        for document in config.get("policies", []):
            pid = self.store.put_policy(document)
            self.audit.log(
                "POLICY", timestamp=self.clock.epoch(), detail=f"loaded {pid}"
            )
        if probe:
            self.store.put_policy(PROBE_POLICY)

        principal_name = config.get("principal")
        grants = list(config.get("grants", []))
        agents_cfg = list(config.get("agents", []))
        tools_cfg = list(config.get("tools", []))
        if not (principal_name or agents_cfg or tools_cfg):
            return

        if principal_name is None:
            principal_name = "user"

        idp_kp = self._keypair("idp")
        self.idp = self.registry.register(EntityKind.PRINCIPAL, "idp", idp_kp.public_key)
        self.idp_keypair = idp_kp
        self.audit.log("REGISTRY", timestamp=self.clock.epoch(), detail="registered idp")

        principal_kp = self._keypair(f"principal:{principal_name}")
        self.principal_id = self.registry.register(
            EntityKind.PRINCIPAL, principal_name, principal_kp.public_key
        )
        session_id = f"sess-{_seeded_id(self.seed, 'session')}"
        context_id = f"ctx-{_seeded_id(self.seed, 'context')}"
        ttl = int(config.get("session_ttl", 7200))
        self.session_entity, self.session_keypair = self.registry.issue_session_keypair(
            self.principal_id,
            session_id,
            self.clock.epoch() + ttl,
            seed=f"{self.seed}:session-key".encode(),
        )
        self.session = new_session(
            self.principal_id, self.registry, self.clock,
            session_id=session_id, context_id=context_id,
        )
        self.contexts[session_id] = self.session
        self.audit.log(
            "REGISTRY",
            timestamp=self.clock.epoch(),
            session_id=session_id,
            detail=f"session key issued for {self.principal_id}",
        )

        prompt = config.get("prompt")
        if prompt:
            self.session.append_event(
                self.session_entity,
                {
                    "kind": "prompt",
                    "boundary": "S1_PROMPT",
                    "content_digest": crypto.digest_value(prompt).hex(),
                },
            )

        for cfg in agents_cfg:
            self._build_agent(cfg)
        for cfg in tools_cfg:
            self._build_tool(cfg)
        if probe:
            self._build_probe()

        for name in grants:
            self.grant_attestation(name)

        for cfg in config.get("delegations", []):
            self._build_delegation(cfg)

    def _intent_policy_of(self, name: str, policy_id: str) -> str:
        if policy_id not in set(self.store.policy_ids()):
            raise SimConfigError(f"{name}: unknown policy reference {policy_id!r}")
        return policy_id

    def _build_agent(self, cfg: Mapping[str, Any]) -> None:
        name = cfg["name"]
        keypair = self._keypair(f"agent:{name}")
        entity_id = self.registry.register(EntityKind.AGENT, name, keypair.public_key)
        self.audit.log(
            "REGISTRY", timestamp=self.clock.epoch(), detail=f"registered agent {entity_id}"
        )
        llm = cfg.get("llm", {})
        self.agents[name] = AgentRuntime(
            name=name,
            entity_id=entity_id,
            keypair=keypair,
            intent_policy=self._intent_policy_of(name, cfg["intent_policy"]),
            corruption_rules=[dict(rule) for rule in llm.get("corruption_rules", [])],
        )

    def _build_tool(self, cfg: Mapping[str, Any]) -> None:
        name = cfg["name"]
        kind = cfg.get("kind", "echo")
        state = dict(cfg.get("state", {}))
        if kind == "task":
            operations = list(cfg.get("operations", ["run"]))
            handlers = _task_handlers(state, operations)
        else:
            factory = _KIND_FACTORIES.get(kind)
            if factory is None:
                raise SimConfigError(f"unknown tool kind {kind!r}")
            handlers = factory(state)
        default_operation = cfg.get("operation", next(iter(handlers)))

        agent_name = cfg.get("agent")
        if agent_name is not None and agent_name not in self.agents:
            raise SimConfigError(f"tool {name!r}: unknown agent {agent_name!r}")
        parent = self.agents[agent_name].entity_id if agent_name else None

        keypair = self._keypair(f"tool:{name}")
        registered = bool(cfg.get("registered", True))
        if registered:
            if parent is None:
                # Standalone tool: give it a service agent of its own.
                service_kp = self._keypair(f"service:{name}")
                parent = self.registry.register(
                    EntityKind.AGENT, f"{name}-svc", service_kp.public_key
                )
            entity_id = self.registry.register(
                EntityKind.TOOL, name, keypair.public_key, parent=parent
            )
            self.audit.log(
                "REGISTRY", timestamp=self.clock.epoch(), detail=f"registered tool {entity_id}"
            )
        else:
            # Present in the world, absent from the registry: stage-1 fodder.
            entity_id = f"{name}-{keypair.key_id[:8]}"

        resource_policy = cfg.get("resource_policy")
        if resource_policy is not None:
            self._intent_policy_of(name, resource_policy)

        if "resource_param" in cfg:
            param = cfg["resource_param"]
            resolver = lambda op, args, _p=param: str(args.get(_p, ""))
        elif "resource" in cfg:
            fixed = cfg["resource"]
            resolver = lambda op, args, _r=fixed: _r
        else:
            resolver = None

        tool_pep = PEP(
            name=f"{name}-pep",
            target_id=entity_id,
            target_keypair=keypair,
            registry=self.registry,
            policy_store=self.store,
            contexts=self.contexts,
            audit=self.audit,
            clock=self.clock,
            resource_policy_id=resource_policy,
            resource_resolver=resolver,
            boundary=cfg.get("boundary", _DEFAULT_BOUNDARY.get(kind, "S2_TOOL")),
        )
        for verifier_cfg in cfg.get("verifiers", []):
            for verifier in _build_verifiers(verifier_cfg, state):
                tool_pep.register_verifier(verifier)

        self.tools[name] = SimTool(
            name=name,
            kind=kind,
            entity_id=entity_id,
            keypair=keypair,
            pep=tool_pep,
            handlers=handlers,
            boundary=tool_pep.boundary,
            state=state,
            registered=registered,
            default_operation=default_operation,
        )

    def _build_probe(self) -> None:
        """Isolation probe: an extra tool on its own session.

        The probe exists so PEP-independence checks can corrupt one
        enforcement point and assert every other decision in the world is
        unchanged.
        """
        service_kp = self._keypair("probe-agent")
        probe_agent = self.registry.register(
            EntityKind.AGENT, "probe-agent", service_kp.public_key
        )
        keypair = self._keypair("probe-tool")
        entity_id = self.registry.register(
            EntityKind.TOOL, "probe", keypair.public_key, parent=probe_agent
        )
        probe_pep = PEP(
            name="probe-pep",
            target_id=entity_id,
            target_keypair=keypair,
            registry=self.registry,
            policy_store=self.store,
            contexts=self.contexts,
            audit=self.audit,
            clock=self.clock,
            resource_resolver=lambda op, args: "tool:probe",
        )
        probe_pep.register_verifier(ProbeGuard())
        self.agents["__probe_agent__"] = AgentRuntime(
            name="__probe_agent__",
            entity_id=probe_agent,
            keypair=service_kp,
            intent_policy="__probe__",
        )
        self.tools["__probe__"] = SimTool(
            name="__probe__",
            kind="echo",
            entity_id=entity_id,
            keypair=keypair,
            pep=probe_pep,
            handlers=_echo_handlers({}),
            boundary="S2_TOOL",
            state={},
            registered=True,
            default_operation="echo",
        )
        session_id = f"sess-probe-{_seeded_id(self.seed, 'probe')}"
        self.probe_session = new_session(
            self.principal_id, self.registry, self.clock,
            session_id=session_id,
            context_id=f"ctx-probe-{_seeded_id(self.seed, 'probe-ctx')}",
        )
        self.contexts[session_id] = self.probe_session

    def corrupt_probe(self) -> None:
        probe = self.tools["__probe__"]
        probe.pep.pre_verifiers.clear()
        probe.pep.post_verifiers.clear()
        probe.pep.register_verifier(AlwaysFailGuard())

    def _build_delegation(self, cfg: Mapping[str, Any]) -> None:
        delegator = self._entity_for(cfg["delegator"])
        delegate = self._entity_for(cfg["delegate"])
        keypair = self._keypair_for(cfg["delegator"])
        token = issue_delegation(
            delegator,
            keypair,
            delegate,
            cfg["scope"],
            self.clock.epoch() + int(cfg.get("ttl", 3600)),
            self.clock,
            self.registry,
        )
        self.delegations[cfg.get("name", f"{cfg['delegator']}->{cfg['delegate']}")] = token

    # -- lookups --------------------------------------------------------------

    def _entity_for(self, name: str) -> str:
        if name == "@session":
            assert self.session_entity is not None
            return self.session_entity
        if name in self.agents:
            return self.agents[name].entity_id
        if name in self.tools:
            return self.tools[name].entity_id
        raise SimConfigError(f"unknown entity name {name!r}")

    def _keypair_for(self, name: str) -> crypto.KeyPair:
        if name == "@session":
            assert self.session_keypair is not None
            return self.session_keypair
        if name in self.agents:
            return self.agents[name].keypair
        if name in self.tools:
            return self.tools[name].keypair
        raise SimConfigError(f"unknown entity name {name!r}")

    def _intent_for(self, name: str) -> str:
        if name == "@session":
            return self.config.get("session_policy", "acme:base")
        if name in self.agents:
            return self.agents[name].intent_policy
        raise SimConfigError(f"no intent policy for caller {name!r}")

    def grant_attestation(self, name: str, session: AuthenticatedContext | None = None) -> None:
        """Record an idp-signed attestation (e.g. user_authenticated)."""
        ctx = session or self.session
        assert ctx is not None
        attestation = make_attestation(
            name,
            issuer=self.idp,
            keypair=self.idp_keypair,
            session_id=ctx.session_id,
            sequence=ctx.next_sequence(self.idp),
            result_digest=crypto.digest_value({"grant": name}),
            issued_at=self.clock.epoch(),
        )
        ctx.record_attestation(attestation, self.registry)


def build_world(config: Mapping[str, Any], probe: bool = False) -> World:
    return World(config, probe=probe)


# ---------------------------------------------------------------------------
# Workflow runner
# ---------------------------------------------------------------------------


@dataclass
class Transcript:
    entries: list[dict] = field(default_factory=list)

    def to_bytes(self) -> bytes:
        return crypto.canonical_encode(self.entries)

    def invocation_entries(self) -> list[dict]:
        return [e for e in self.entries if e["type"] == "invocation"]

    def blocked_entries(self) -> list[dict]:
        return [
            e
            for e in self.invocation_entries()
            if e["result"]["status"] == "BLOCKED"
        ]


def _expand_steps(script: Iterable[Mapping[str, Any]]) -> list[dict]:
    steps: list[dict] = []
    for step in script:
        if "repeat" in step:
            template = {k: v for k, v in step.items() if k != "repeat"}
            for i in range(int(step["repeat"])):
                expanded = dict(template)
                expanded["args"] = {
                    k: (v.format(i=i) if isinstance(v, str) else v)
                    for k, v in template.get("args", {}).items()
                }
                steps.append(expanded)
        else:
            steps.append(dict(step))
    return steps


def run_workflow(world: World, script: Iterable[Mapping[str, Any]]) -> Transcript:
    """Execute a step list through the world's PEPs.

    Corrupted-LLM steps are still signed with the compromised agent's own
    key: the attack is in what is requested, not who requests it.
    """
    transcript = Transcript()
    queue = deque(_expand_steps(script))
    fired_rules: set[int] = set()

    while queue:
        step = queue.popleft()
        if "advance" in step:
            world.clock.advance(float(step["advance"]))
            transcript.entries.append(
                {"type": "clock", "advance": step["advance"]}
            )
            continue
        if "action" in step:
            transcript.entries.append(_run_action(world, step, transcript))
            continue
        entry = _dispatch(world, step)
        transcript.entries.append(entry)
        _apply_corruption_rules(world, step, entry, queue, fired_rules)
    return transcript


def _dispatch(world: World, step: Mapping[str, Any]) -> dict:
    caller_name = step.get("caller", "@session")
    tool = world.tools[step["tool"]] if step["tool"] in world.tools else None
    if tool is None:
        raise ScriptError(f"unknown tool {step['tool']!r}")
    operation = step.get("operation", tool.default_operation)
    args = dict(step.get("args", {}))
    policy_id = step.get("policy", world._intent_for(caller_name))
    chain = tuple(world.delegations[name] for name in step.get("delegation", []))
    ctx = world.session
    assert ctx is not None

    inv = build_invocation(
        world._entity_for(caller_name),
        world._keypair_for(caller_name),
        tool.entity_id,
        operation,
        args,
        policy_id,
        ctx,
        delegation_chain=chain,
    )
    result = tool.pep.verify_and_execute(inv, tool.handler_for(operation))
    return _entry_for(world, step, tool, inv, result, injected=bool(step.get("injected")))


def _entry_for(
    world: World,
    step: Mapping[str, Any],
    tool: SimTool,
    inv: SignedInvocation,
    result: SignedResult,
    injected: bool = False,
) -> dict:
    return {
        "type": "invocation",
        "step": {k: v for k, v in step.items() if k != "injected"},
        "tool": tool.name,
        "boundary": tool.boundary,
        "injected": injected,
        "invocation": inv.to_wire(),
        "result": result.to_wire(),
        "result_verified": verify_result(result, world.registry),
    }


def _apply_corruption_rules(
    world: World,
    step: Mapping[str, Any],
    entry: dict,
    queue: deque,
    fired: set[int],
) -> None:
    caller_name = step.get("caller", "@session")
    agent = world.agents.get(caller_name)
    if agent is None or entry["result"]["status"] != "ALLOWED_EXECUTED":
        return
    rendered = crypto.canonical_encode(entry["result"]["output"]).decode("ascii")
    for rule_index, rule in enumerate(agent.corruption_rules):
        key = hash((caller_name, rule_index))
        if key in fired:
            continue
        if rule["marker"] in rendered:
            fired.add(key)
            injected = []
            for injected_step in rule["steps"]:
                injected_step = dict(injected_step)
                injected_step.setdefault("caller", caller_name)
                injected_step["injected"] = True
                injected.append(injected_step)
            queue.extendleft(reversed(injected))


def _run_action(world: World, step: Mapping[str, Any], transcript: Transcript) -> dict:
    action = step["action"]
    if action == "replay":
        original = transcript.entries[int(step["of"])]
        inv = SignedInvocation.from_wire(original["invocation"])
        tool = world.tools[original["tool"]]
        result = tool.pep.verify_and_execute(
            inv, tool.handler_for(inv.operation)
        )
        return _entry_for(world, step, tool, inv, result)
    if action == "mutate_resend":
        from dataclasses import replace as dc_replace

        original = transcript.entries[int(step["of"])]
        inv = SignedInvocation.from_wire(original["invocation"])
        inv = dc_replace(inv, **{step["field"]: step["value"]})
        tool = world.tools[original["tool"]]
        result = tool.pep.verify_and_execute(inv, tool.handler_for(inv.operation))
        return _entry_for(world, step, tool, inv, result)
    if action == "impersonate":
        tool = world.tools[step["tool"]]
        operation = step.get("operation", tool.default_operation)
        ctx = world.session
        assert ctx is not None
        unsigned = SignedInvocation(
            caller=world._entity_for(step["claimed_caller"]),
            target=tool.entity_id,
            operation=operation,
            args=dict(step.get("args", {})),
            policy_id=step.get("policy", world._intent_for(step["claimed_caller"])),
            session_id=ctx.session_id,
            context_id=ctx.context_id,
            sequence=ctx.next_sequence(world._entity_for(step["claimed_caller"])),
            context_head=ctx.head.hex(),
        )
        from dataclasses import replace as dc_replace

        signer_kp = world._keypair_for(step["signer"])
        inv = dc_replace(unsigned, mac=crypto.sign(signer_kp, unsigned.signing_payload()))
        result = tool.pep.verify_and_execute(inv, tool.handler_for(operation))
        return _entry_for(world, step, tool, inv, result)
    if action == "revoke":
        entity = world._entity_for(step["entity"])
        world.registry.revoke(entity)
        world.audit.log(
            "REGISTRY", timestamp=world.clock.epoch(), detail=f"revoked {entity}"
        )
        return {"type": "action", "action": "revoke", "entity": entity, "outcome": "OK"}
    if action == "forge_attestation":
        ctx = world.session
        assert ctx is not None
        issuer = world._entity_for(step["issuer"])
        forged = make_attestation(
            step["name"],
            issuer=issuer,
            keypair=world._keypair_for(step["signer"]),
            session_id=ctx.session_id,
            sequence=ctx.next_sequence(issuer),
            result_digest=crypto.digest_value({"forged": True}),
            issued_at=world.clock.epoch(),
        )
        try:
            ctx.record_attestation(forged, world.registry)
            outcome = "ACCEPTED"
        except AwfError as exc:
            outcome = f"REJECTED:{exc.code}"
        return {"type": "action", "action": "forge_attestation", "name": step["name"], "outcome": outcome}
    if action == "tamper_audit":
        from dataclasses import replace as dc_replace

        records = world.audit._records  # noqa: SLF001 — deliberate tampering
        if not records:
            return {"type": "action", "action": "tamper_audit", "outcome": "EMPTY"}
        index = len(records) // 2
        record, head = records[index]
        records[index] = (dc_replace(record, detail="doctored"), head)
        detected = not world.audit.verify()
        return {
            "type": "action",
            "action": "tamper_audit",
            "outcome": "DETECTED" if detected else "UNDETECTED",
        }
    raise ScriptError(f"unknown action {action!r}")
