"""Thin HTTP adapters for real model providers.

Keys come from the environment (``ANTHROPIC_API_KEY``, ``OPENAI_API_KEY``,
``GEMINI_API_KEY``).  A providers config file lists the priority order::

    {"priority": [{"name": "claude-3.7", "api": "anthropic", "model": "claude-3-7-sonnet-latest"},
                  {"name": "o3", "api": "openai", "model": "o3"}]}
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import httpx

from .router import Conversation, ErrorKind, ModelPriorityList, ModelRouter, ProviderError, Role

ENV_KEYS = {"anthropic": "ANTHROPIC_API_KEY", "openai": "OPENAI_API_KEY", "gemini": "GEMINI_API_KEY"}


def _classify(status: int) -> ErrorKind:
    if status == 429:
        return ErrorKind.RATE_LIMITED
    if status in (503, 529):
        return ErrorKind.OVERLOADED
    if status in (408, 504):
        return ErrorKind.TIMEOUT
    return ErrorKind.UNAVAILABLE


class HttpProvider:
    api = ""

    def __init__(self, name: str, model: str, api_key: str | None = None, *,
                 base_url: str | None = None, timeout_s: float = 120.0, transport: httpx.BaseTransport | None = None):
        self.name = name
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_KEYS[self.api], "")
        self.base_url = base_url or self.default_base_url
        self.timeout_s = timeout_s
        self._client = httpx.Client(timeout=timeout_s, transport=transport)
        # httpx enforces the deadline itself
        self.inline = True

    default_base_url = ""

    def _post(self, url: str, headers: dict, body: dict) -> dict:
        if not self.api_key:
            raise ProviderError(ErrorKind.UNAVAILABLE, f"no API key for {self.name}")
        try:
            resp = self._client.post(url, headers=headers, json=body)
        except httpx.TimeoutException as exc:
            raise ProviderError(ErrorKind.TIMEOUT, str(exc)) from exc
        except httpx.HTTPError as exc:
            raise ProviderError(ErrorKind.UNAVAILABLE, str(exc)) from exc
        if resp.status_code != 200:
            raise ProviderError(_classify(resp.status_code), resp.text[:200])
        try:
            return resp.json()
        except ValueError as exc:
            raise ProviderError(ErrorKind.MALFORMED, "response is not JSON") from exc


class AnthropicProvider(HttpProvider):
    api = "anthropic"
    default_base_url = "https://api.anthropic.com"

    def complete(self, conversation: Conversation) -> str:
        body = {
            "model": self.model,
            "max_tokens": 8192,
            "system": conversation.system_prompt,
            "messages": [
                {"role": "user" if t.role is Role.USER else "assistant", "content": t.content}
                for t in conversation.turns
            ],
        }
        headers = {"x-api-key": self.api_key, "anthropic-version": "2023-06-01"}
        data = self._post(f"{self.base_url}/v1/messages", headers, body)
        try:
            return "".join(b["text"] for b in data["content"] if b.get("type") == "text")
        except (KeyError, TypeError) as exc:
            raise ProviderError(ErrorKind.MALFORMED, "unexpected response shape") from exc


class OpenAIProvider(HttpProvider):
    api = "openai"
    default_base_url = "https://api.openai.com"

    def complete(self, conversation: Conversation) -> str:
        messages = [{"role": "system", "content": conversation.system_prompt}]
        messages += [
            {"role": "user" if t.role is Role.USER else "assistant", "content": t.content}
            for t in conversation.turns
        ]
        headers = {"Authorization": f"Bearer {self.api_key}"}
        data = self._post(f"{self.base_url}/v1/chat/completions", headers, {"model": self.model, "messages": messages})
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(ErrorKind.MALFORMED, "unexpected response shape") from exc


class GeminiProvider(HttpProvider):
    api = "gemini"
    default_base_url = "https://generativelanguage.googleapis.com"

    def complete(self, conversation: Conversation) -> str:
        body = {
            "systemInstruction": {"parts": [{"text": conversation.system_prompt}]},
            "contents": [
                {"role": "user" if t.role is Role.USER else "model", "parts": [{"text": t.content}]}
                for t in conversation.turns
            ],
        }
        url = f"{self.base_url}/v1beta/models/{self.model}:generateContent"
        data = self._post(url, {"x-goog-api-key": self.api_key}, body)
        try:
            return "".join(p.get("text", "") for p in data["candidates"][0]["content"]["parts"])
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(ErrorKind.MALFORMED, "unexpected response shape") from exc


PROVIDER_TYPES = {"anthropic": AnthropicProvider, "openai": OpenAIProvider, "gemini": GeminiProvider}


def router_from_config(path: str | os.PathLike) -> ModelRouter:
    doc = json.loads(Path(path).read_text())
    registry = {}
    for entry in doc["priority"]:
        cls = PROVIDER_TYPES[entry["api"]]
        registry[entry["name"]] = cls(entry["name"], entry["model"])
    return ModelRouter(registry, ModelPriorityList(tuple(e["name"] for e in doc["priority"])))
