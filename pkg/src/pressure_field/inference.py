"""Client for an Ollama-compatible ``/api/generate`` endpoint."""

from __future__ import annotations

import logging
import os
import random

import requests

from .actors import SYSTEM_PROMPT, TokenUsage, TrialContext, build_prompt, parse_patch
from .engine import NoProposal, Provenance
from .scheduling import BlockView, Problem, render_block_context

log = logging.getLogger(__name__)

DEFAULT_HOST = "http://localhost:11434"
HOST_ENV = "OLLAMA_HOST"
DEFAULT_TIMEOUT = 120.0
CONVERSATION_SAMPLING = (0.3, 0.9)


def resolve_host(flag: str | None = None) -> str:
    host = flag or os.environ.get(HOST_ENV) or DEFAULT_HOST
    if "://" not in host:
        host = "http://" + host
    return host.rstrip("/")


class InferenceError(NoProposal):
    pass


class OllamaClient:
    def __init__(self, host: str | None = None, timeout: float = DEFAULT_TIMEOUT,
                 system: str | None = SYSTEM_PROMPT, session: requests.Session | None = None):
        self.host = resolve_host(host)
        self.timeout = timeout
        self.system = system
        self.session = session or requests.Session()

    def generate(self, model: str, prompt: str, temperature: float, top_p: float) -> tuple[str, TokenUsage]:
        payload = {
            "model": model,
            "prompt": prompt,
            "stream": False,
            "options": {"temperature": temperature, "top_p": top_p},
        }
        if self.system:
            payload["system"] = self.system
        try:
            resp = self.session.post(f"{self.host}/api/generate", json=payload, timeout=self.timeout)
        except requests.Timeout as exc:
            raise InferenceError("timeout", str(exc)) from exc
        except requests.RequestException as exc:
            raise InferenceError("transport", str(exc)) from exc
        if resp.status_code != 200:
            raise InferenceError("status", f"HTTP {resp.status_code}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise InferenceError("missing_fields", "response is not JSON") from exc
        text = body.get("response") if isinstance(body, dict) else None
        if not isinstance(text, str):
            raise InferenceError("missing_fields", "response field absent")
        prompt_tokens = body.get("prompt_eval_count")
        completion_tokens = body.get("eval_count")
        if not isinstance(prompt_tokens, int) or not isinstance(completion_tokens, int):
            log.warning("response from %s lacks token counts; recording 0/0", model)
            prompt_tokens = completion_tokens = 0
        return text, TokenUsage(prompt_tokens, completion_tokens)


class InferenceActor:
    """Prompts a served model for one block and parses its directive."""

    def __init__(self, name: str, client: OllamaClient, problem: Problem, context: TrialContext,
                 rng: random.Random):
        self.name = name
        self.client = client
        self.problem = problem
        self.context = context
        self.rng = rng
        self.meeting_ids = frozenset(m.id for m in problem.meetings)
        self.last_sampling: tuple[float, float] | None = None

    def provenance(self) -> Provenance:
        return self.context.provenance(self.name)

    def prompt_for(self, view: BlockView) -> str:
        store = self.context.pheromones
        return build_prompt(
            render_block_context(view),
            store.examples(view.region_id),
            store.hints(view.region_id),
            self.context.examples_enabled,
        )

    def complete(self, prompt: str, sampling: tuple[float, float] | None = None) -> str:
        esc = self.context.escalation
        if sampling is None:
            # Re-rolled on every call.
            sampling = esc.current_band.sample(self.rng)
        self.last_sampling = sampling
        try:
            text, usage = self.client.generate(esc.current_model, prompt, *sampling)
        except InferenceError:
            self.context.record_call()
            raise
        self.context.record_call(usage)
        return text

    def propose(self, view: BlockView):
        text = self.complete(self.prompt_for(view))
        return parse_patch(text, self.problem.rooms, self.meeting_ids)
