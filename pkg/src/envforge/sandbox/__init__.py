"""Sandbox backends: a real container and a deterministic simulation."""

from __future__ import annotations

from ..trace import BaseImage
from .base import (
    DEFAULT_COMMAND_TIMEOUT,
    BackendIOError,
    BackendUnavailableError,
    ExecResult,
    FileMissingError,
    ImageUnavailableError,
    Sandbox,
    SandboxError,
    UnknownSnapshotError,
)
from .sim import SimConfig, SimRegistry, SimSandbox
from .docker import DockerSandbox, docker_available

BACKENDS = ("sim", "docker")


def create_sandbox(
    backend: str,
    base_image: BaseImage,
    *,
    sim_config: SimConfig | None = None,
    session_id: str | None = None,
) -> Sandbox:
    if backend == "sim":
        return SimSandbox(base_image, config=sim_config, session_id=session_id)
    if backend in ("docker", "container"):
        return DockerSandbox(base_image, session_id=session_id)
    raise BackendUnavailableError(f"unknown backend {backend!r}")


__all__ = [
    "BACKENDS",
    "BackendIOError",
    "BackendUnavailableError",
    "DEFAULT_COMMAND_TIMEOUT",
    "DockerSandbox",
    "ExecResult",
    "FileMissingError",
    "ImageUnavailableError",
    "Sandbox",
    "SandboxError",
    "SimConfig",
    "SimRegistry",
    "SimSandbox",
    "UnknownSnapshotError",
    "create_sandbox",
    "docker_available",
]
