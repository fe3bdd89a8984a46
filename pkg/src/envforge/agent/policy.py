"""Pluggable decision policies: scripted action lists and a chat-LLM client."""

from __future__ import annotations

import json
import os
import re
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

from .actions import Action, ActionParseError, action_from_dict, parse_action

DEFAULT_TEMPERATURE = 0.2
MAX_PARSE_RETRIES = 3

ENV_URL = "ENVFORGE_LLM_URL"
ENV_MODEL = "ENVFORGE_LLM_MODEL"
ENV_KEY = "ENVFORGE_LLM_KEY"

_FENCE_RE = re.compile(r"```(?:bash|sh|shell)?\n(.*?)```", re.DOTALL)


class PolicyError(Exception):
    pass


class ScriptExhaustedError(PolicyError):
    """A scripted policy ran out of actions before the build terminated."""


class LlmHttpError(PolicyError):
    pass


class ParseFailureExhaustedError(PolicyError):
    pass


class Policy(Protocol):
    def next_action(self, history: Sequence[tuple[Action, Any]], system_context: str) -> Action:
        """Return the next action given (action, observation) history."""


class ScriptedPolicy:
    """Replays a fixed action list; entries are command strings or dicts."""

    def __init__(self, entries: Sequence[str | dict]):
        self._actions = [
            entry if isinstance(entry, Action)
            else action_from_dict(entry) if isinstance(entry, dict)
            else parse_action(entry)
            for entry in entries
        ]
        self._cursor = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedPolicy":
        entries = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(entries, list):
            raise PolicyError(f"{path}: scripted policy file must hold a JSON list")
        return cls(entries)

    def next_action(self, history: Sequence[tuple[Action, Any]], system_context: str) -> Action:
        if self._cursor >= len(self._actions):
            raise ScriptExhaustedError("scripted policy has no more actions")
        action = self._actions[self._cursor]
        self._cursor += 1
        return action


def load_system_prompt(prompt_dir: str | Path | None = None) -> str:
    if prompt_dir is not None:
        return (Path(prompt_dir) / "system.txt").read_text(encoding="utf-8")
    return (
        resources.files("envforge").joinpath("prompts/system.txt").read_text("utf-8")
    )


def extract_single_command(reply: str) -> str:
    """The one fenced command in a model reply; raises on zero or many."""
    blocks = [b.strip() for b in _FENCE_RE.findall(reply) if b.strip()]
    if len(blocks) != 1:
        raise ActionParseError(
            f"reply must contain exactly one fenced command block, found {len(blocks)}"
        )
    return blocks[0]


def _thought_of(reply: str) -> str | None:
    thought = _FENCE_RE.sub("", reply).strip()
    return thought or None


class LlmPolicy:
    """Chat-completion backed policy speaking the OpenAI-style JSON shape.

    ``transport`` takes the request payload and returns the decoded response
    body; the default posts to the configured endpoint. Tests inject canned
    transports.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        temperature: float = DEFAULT_TEMPERATURE,
        transport: Callable[[dict], dict] | None = None,
        prompt_dir: str | Path | None = None,
    ):
        self.endpoint = endpoint or os.environ.get(ENV_URL, "")
        self.model = model or os.environ.get(ENV_MODEL, "")
        self.api_key = api_key or os.environ.get(ENV_KEY, "")
        self.temperature = temperature
        self._transport = transport or self._http_transport
        self.system_prompt = load_system_prompt(prompt_dir)
        if transport is None and not self.endpoint:
            raise PolicyError(f"no LLM endpoint configured (set {ENV_URL})")

    def _http_transport(self, payload: dict) -> dict:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = requests.post(
                self.endpoint, json=payload, headers=headers, timeout=120
            )
        except requests.RequestException as exc:
            raise LlmHttpError(str(exc)) from exc
        if response.status_code != 200:
            raise LlmHttpError(f"HTTP {response.status_code}: {response.text[:500]}")
        return response.json()

    def _render_messages(
        self, history: Sequence[tuple[Action, Any]], system_context: str, feedback: list[str]
    ) -> list[dict]:
        messages = [{"role": "system", "content": self.system_prompt}]
        if system_context:
            messages.append({"role": "user", "content": system_context})
        for action, observation in history:
            body = ""
            if action.thought:
                body += action.thought + "\n"
            body += f"```\n{_action_text(action)}\n```"
            messages.append({"role": "assistant", "content": body})
            obs_text = getattr(observation, "text", str(observation))
            messages.append({"role": "user", "content": obs_text or "(no output)"})
        for note in feedback:
            messages.append({"role": "user", "content": note})
        return messages

    def next_action(self, history: Sequence[tuple[Action, Any]], system_context: str) -> Action:
        feedback: list[str] = []
        for _ in range(MAX_PARSE_RETRIES):
            payload = {
                "model": self.model,
                "temperature": self.temperature,
                "messages": self._render_messages(history, system_context, feedback),
            }
            response = self._transport(payload)
            try:
                reply = response["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise LlmHttpError(f"malformed completion response: {exc}") from exc
            try:
                command = extract_single_command(reply)
                return parse_action(command, thought=_thought_of(reply))
            except ActionParseError as exc:
                feedback.append(
                    f"Your reply could not be executed: {exc}. "
                    "Reply with exactly one fenced command block."
                )
        raise ParseFailureExhaustedError(
            f"no parseable action after {MAX_PARSE_RETRIES} attempts"
        )


def _action_text(action: Action) -> str:
    """Render an action back to its command-line form for prompt history."""
    if action.verb == "bash":
        return str(action.args.get("command", ""))
    if action.verb == "waitinglist_add":
        parts = ["waitinglist add", "-p", action.args["package"]]
        if action.args.get("constraint"):
            parts += ["-v", action.args["constraint"]]
        parts += ["-t", action.args["tool"]]
        return " ".join(parts)
    if action.verb == "waitinglist_addfile":
        return f"waitinglist addfile {action.args['path']}"
    if action.verb == "conflictlist_solve":
        if action.args.get("keep_original"):
            return "conflictlist solve -u"
        return f'conflictlist solve -v "{action.args.get("use_version", "")}"'
    if action.verb == "change_python_version":
        return f"change_python_version {action.args['version']}"
    if action.verb == "edit_file":
        mode = "--diff " if "diff" in action.args else ""
        body = action.args.get("diff", action.args.get("content", ""))
        return f"edit_file {mode}{action.args['path']} <<EOF\n{body}EOF"
    if action.verb.startswith(("waitinglist_", "conflictlist_")):
        noun, _, sub = action.verb.partition("_")
        return f"{noun} {sub}"
    return action.verb


def load_policy(spec: str, **llm_kwargs: Any) -> Policy:
    """Resolve "scripted:FILE" / "llm" / "llm:MODEL" into a policy object."""
    if spec.startswith("scripted:"):
        return ScriptedPolicy.from_file(spec.split(":", 1)[1])
    if spec == "llm" or spec.startswith("llm:"):
        model = spec.split(":", 1)[1] if ":" in spec else None
        return LlmPolicy(model=model, **llm_kwargs)
    raise PolicyError(f"unknown policy spec {spec!r} (use scripted:FILE or llm[:MODEL])")
