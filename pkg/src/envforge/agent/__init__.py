"""Build-phase agent loop: actions, policies, session orchestration."""

from .actions import Action, ActionParseError, parse_action
from .loop import BuildBudget, BuildSession, Observation, run_build
from .policy import LlmPolicy, Policy, ScriptedPolicy, load_policy

__all__ = [
    "Action",
    "ActionParseError",
    "BuildBudget",
    "BuildSession",
    "LlmPolicy",
    "Observation",
    "Policy",
    "ScriptedPolicy",
    "load_policy",
    "parse_action",
    "run_build",
]
