"""awf: a desk-scale trust layer for agentic workflows.

Every boundary crossing between agents and tools is a signed invocation
checked by a Policy Enforcement Point: signature first, then policy
binding, then policy evaluation, then optional custom verifiers. Session
state is hash-chained, audit logs are tamper-evident, and delegation only
ever narrows scope.
"""

__version__ = "0.1.0"

from .errors import AwfError

__all__ = ["AwfError", "__version__"]
