"""Shared error base. Each subsystem defines its own subclasses."""

from __future__ import annotations


class AwfError(Exception):
    """Base error; ``code`` is the stable machine-readable identifier."""

    code = "ERROR"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code
