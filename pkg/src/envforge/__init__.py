"""envforge: agent-driven test-environment building with trace-to-Dockerfile synthesis."""

from .trace import (
    BaseImage,
    Command,
    CommandRecord,
    Trace,
    parse_trace,
    serialize_trace,
)
from .classify import Classification, classify, safe_list
from .dockerfile import DockerfileProgram, DockerfileStatement, render, synthesize

__version__ = "0.1.0"

__all__ = [
    "BaseImage",
    "Classification",
    "Command",
    "CommandRecord",
    "DockerfileProgram",
    "DockerfileStatement",
    "Trace",
    "classify",
    "parse_trace",
    "render",
    "safe_list",
    "serialize_trace",
    "synthesize",
]
