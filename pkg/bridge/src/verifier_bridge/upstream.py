"""Upstream backends: a hosted OpenAI-compatible endpoint or a local reader.

Every upstream exposes one method, ``complete(system_text, user_text,
request)``, and returns the raw text the model produced; the server parses
that text against the constrained response schema regardless of backend.
The hosted backend only forwards the rendered messages and the image; the
local reader also gets the validated request fields, standing in for what a
vision model would read off the picture and the instructions.  Both emit
the same JSON shape, so one validation path covers both modes.
"""
from __future__ import annotations

import base64
import json

import httpx

from .classify import decode_image, read_grid
from .config import BridgeConfig
from .protocol import UpstreamError
from .scenes import judge_cell, parse_needs, reformulate


class HostedApiUpstream:
    """OpenAI-compatible chat-completions client for a vision model."""

    def __init__(self, endpoint: str, model: str, api_key: str | None = None,
                 timeout: float = 60.0):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout

    def complete(self, system_text: str, user_text: str, request: dict) -> str:
        fmt = request["image_format"]
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system_text},
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": user_text},
                        {
                            "type": "image_url",
                            "image_url": {
                                "url": f"data:image/{fmt};base64,{request['image_b64']}"
                            },
                        },
                    ],
                },
            ],
            "temperature": 0,
            "response_format": {"type": "json_object"},
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            reply = httpx.post(self.endpoint, json=payload, headers=headers,
                               timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise UpstreamError(f"upstream request failed: {exc}") from exc
        if reply.status_code != 200:
            raise UpstreamError(f"upstream returned HTTP {reply.status_code}")
        try:
            return reply.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise UpstreamError(f"upstream reply has no message content: {exc}") from exc


class LocalSceneRunner:
    """Deterministic stand-in for a vision verifier on rendered scene grids.

    Reads the grid image directly, judges each stacked cell against the
    prompt, and optionally pins the first possible cell's counts into a
    reformulated prompt.  Emits the constrained response JSON as text.
    """

    def __init__(self, tile_px: int = 16):
        self.tile_px = tile_px

    def complete(self, system_text: str, user_text: str, request: dict) -> str:
        rows = request["rows"]
        try:
            needs = parse_needs(request["prompt"])
        except ValueError as exc:
            raise UpstreamError(f"local reader cannot parse the prompt: {exc}") from exc
        try:
            pixels = decode_image(base64.b64decode(request["image_b64"]),
                                  request["image_format"])
            labels = read_grid(pixels, self.tile_px)
        except ValueError as exc:
            raise UpstreamError(f"local reader cannot read the image: {exc}") from exc
        total = len(labels)
        if total % rows:
            raise UpstreamError(f"{total} tile rows do not stack into {rows} cells")
        cell = total // rows
        cells = [labels[r * cell: (r + 1) * cell] for r in range(rows)]
        judgments = [judge_cell(c, needs) for c in cells]
        reform_text, directives = None, None
        if request["want_reformulation"]:
            for judgment, c in zip(judgments, cells):
                if judgment == "possible":
                    reform_text, directives = reformulate(c, total, needs)
                    break
        return json.dumps({
            "judgments": judgments,
            "reformulated_prompt": reform_text,
            "directives": directives,
        })


def build_upstream(config: BridgeConfig):
    if config.upstream_mode == "hosted_api":
        return HostedApiUpstream(config.upstream_endpoint, config.upstream_model,
                                 config.api_key(), config.upstream_timeout)
    return LocalSceneRunner(config.tile_px)
