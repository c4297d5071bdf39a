"""Wire-protocol client for external verifiers.

One HTTP POST per verification: the composed grid goes out as a base64 image
with the prompt and cell count, judgments (and optionally a reformulated
prompt) come back as JSON.  Field names are part of the protocol and never
vary.  Responses failing the schema raise MalformedResponse; they are never
coerced into something usable.
"""
from __future__ import annotations

import base64
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
import requests as _requests

from .canvas import UNSET, TokenCanvas, extract_band
from .errors import MalformedResponse, Timeout, TransportError
from .prompts import COLORS, SHAPES, DirectiveEntry, Requirement, ScenePrompt, parse_prompt, text_form
from .render import encode_image, render_canvas
from .verify import IMPOSSIBLE, POSSIBLE, StageAssessment, Verdict

log = logging.getLogger("gridar.wire")

AUTH_TOKEN_ENV = "GRIDAR_VERIFIER_TOKEN"

IMAGE_FORMATS = ("png", "ppm")


@dataclass(frozen=True)
class VerificationRequest:
    prompt: str
    image_b64: str
    image_format: str
    rows: int
    stage: int
    want_reformulation: bool

    def __post_init__(self) -> None:
        if self.image_format not in IMAGE_FORMATS:
            raise ValueError(f"image_format must be one of {IMAGE_FORMATS}")
        if self.rows < 1:
            raise ValueError(f"rows must be >= 1, got {self.rows}")

    def to_json(self) -> dict:
        return {
            "prompt": self.prompt,
            "image_b64": self.image_b64,
            "image_format": self.image_format,
            "rows": self.rows,
            "stage": self.stage,
            "want_reformulation": self.want_reformulation,
        }


@dataclass(frozen=True)
class VerificationResponse:
    judgments: tuple[str, ...]
    reformulated_prompt: str | None = None
    directives: tuple[DirectiveEntry, ...] | None = None


_RESPONSE_KEYS = {"judgments", "reformulated_prompt", "directives"}
_DIRECTIVE_KEYS = {"color", "shape", "row_start", "row_end", "count"}


def parse_response(body: dict, expected_rows: int) -> VerificationResponse:
    """Validate a response body strictly against the wire schema."""
    if not isinstance(body, dict):
        raise MalformedResponse(f"response body is {type(body).__name__}, not an object")
    unknown = set(body) - _RESPONSE_KEYS
    if unknown:
        raise MalformedResponse(f"unknown response fields {sorted(unknown)}")
    if "judgments" not in body:
        raise MalformedResponse("response missing judgments")
    judgments = body["judgments"]
    if not isinstance(judgments, list) or not all(isinstance(j, str) for j in judgments):
        raise MalformedResponse("judgments must be an array of strings")
    if any(j not in (POSSIBLE, IMPOSSIBLE) for j in judgments):
        bad = [j for j in judgments if j not in (POSSIBLE, IMPOSSIBLE)]
        raise MalformedResponse(f"judgment values must be possible/impossible, got {bad}")
    if len(judgments) != expected_rows:
        raise MalformedResponse(f"expected {expected_rows} judgments, got {len(judgments)}")

    reformulated = body.get("reformulated_prompt")
    if reformulated is not None and not isinstance(reformulated, str):
        raise MalformedResponse("reformulated_prompt must be a string or null")

    raw_dirs = body.get("directives")
    directives: tuple[DirectiveEntry, ...] | None = None
    if raw_dirs is not None:
        if not isinstance(raw_dirs, list):
            raise MalformedResponse("directives must be an array or null")
        parsed = []
        for i, d in enumerate(raw_dirs):
            if not isinstance(d, dict) or set(d) != _DIRECTIVE_KEYS:
                raise MalformedResponse(f"directive {i} must carry exactly {sorted(_DIRECTIVE_KEYS)}")
            if d["color"] not in COLORS or d["shape"] not in SHAPES:
                raise MalformedResponse(f"directive {i} names an unknown object type")
            if not all(isinstance(d[k], int) and not isinstance(d[k], bool) for k in ("row_start", "row_end", "count")):
                raise MalformedResponse(f"directive {i} has non-integer geometry or count")
            try:
                parsed.append(
                    DirectiveEntry(d["color"], d["shape"], d["row_start"], d["row_end"], d["count"])
                )
            except Exception as exc:
                raise MalformedResponse(f"directive {i} invalid: {exc}") from exc
        directives = tuple(parsed)
    return VerificationResponse(
        judgments=tuple(judgments), reformulated_prompt=reformulated, directives=directives
    )


def _auth_headers() -> dict[str, str]:
    token = os.environ.get(AUTH_TOKEN_ENV)
    return {"Authorization": f"Bearer {token}"} if token else {}


def remote_verify(
    endpoint: str,
    request: VerificationRequest,
    timeout: float = 30.0,
    retries: int = 2,
) -> VerificationResponse:
    """POST one verification request; retry transient transport failures.

    Schema failures are terminal (retrying cannot fix a wrong shape); only
    connection-level errors and timeouts are retried.
    """
    body = request.to_json()
    log.debug("verify request to %s: %s", endpoint, json.dumps(_redact(body)))
    last: Exception | None = None
    for attempt in range(retries + 1):
        try:
            resp = _requests.post(
                endpoint, json=body, timeout=timeout, headers=_auth_headers()
            )
        except _requests.exceptions.Timeout as exc:
            last = Timeout(f"verifier at {endpoint} timed out after {timeout}s")
            last.__cause__ = exc
        except _requests.exceptions.RequestException as exc:
            last = TransportError(f"verifier at {endpoint} unreachable: {exc}")
            last.__cause__ = exc
        else:
            if resp.status_code != 200:
                raise TransportError(
                    f"verifier at {endpoint} returned HTTP {resp.status_code}: {resp.text[:200]}"
                )
            log.debug("verify response: %s", resp.text)
            try:
                parsed = resp.json()
            except ValueError as exc:
                raise MalformedResponse(f"response is not JSON: {resp.text[:200]}") from exc
            return parse_response(parsed, request.rows)
        if attempt < retries:
            time.sleep(min(0.2 * 2**attempt, 2.0))
    assert last is not None
    raise last


def response_prompt(resp: VerificationResponse) -> ScenePrompt | None:
    """Structured reformulated prompt from a response, if one can be built.

    Structured directives win; free text is used only when it parses in the
    prompt grammar.  Returns None when neither yields structure (the text may
    still condition a free-text model, but not the toy scene model).
    """
    if resp.directives:
        totals: dict = {}
        for d in resp.directives:
            totals[d.type] = totals.get(d.type, 0) + d.count
        reqs = tuple(
            Requirement(count=n, color=c, shape=s) for (c, s), n in totals.items() if n > 0
        )
        try:
            return ScenePrompt(reqs, resp.directives)
        except Exception as exc:
            raise MalformedResponse(f"directives do not form a valid prompt: {exc}") from exc
    if resp.reformulated_prompt:
        try:
            return parse_prompt(resp.reformulated_prompt)
        except Exception:
            return None
    return None


@dataclass
class RemoteVerifier:
    """Pipeline-facing adapter that verifies composed grids over the wire.

    per_cell=True sends one single-cell request per candidate instead of one
    grid request (ablation mode); reformulation is then requested in a
    follow-up call on the first accepted cell.
    """

    endpoint: str
    image_format: str = "png"
    timeout: float = 30.0
    retries: int = 2
    per_cell: bool = False

    def assess(
        self,
        canvas: TokenCanvas,
        prompt: ScenePrompt,
        R: int,
        stage: int,
        want_reformulation: bool = False,
    ) -> StageAssessment:
        if self.per_cell:
            return self._assess_per_cell(canvas, prompt, R, stage, want_reformulation)
        req = VerificationRequest(
            prompt=text_form(prompt),
            image_b64=_b64_image(canvas, None, self.image_format),
            image_format=self.image_format,
            rows=R,
            stage=stage,
            want_reformulation=want_reformulation,
        )
        resp = remote_verify(self.endpoint, req, self.timeout, self.retries)
        verdicts = tuple(Verdict(i, j) for i, j in enumerate(resp.judgments))
        return StageAssessment(verdicts=verdicts, reformulated=response_prompt(resp))

    def _assess_per_cell(self, canvas, prompt, R, stage, want_reformulation):
        spec = canvas.spec

        def one(cell_index: int, ask_reform: bool) -> VerificationResponse:
            cell = extract_band(canvas, cell_index, R)
            part = _cell_canvas(spec, cell)
            req = VerificationRequest(
                prompt=text_form(prompt),
                image_b64=_b64_image(part, len(cell) // spec.w, self.image_format),
                image_format=self.image_format,
                rows=1,
                stage=stage,
                want_reformulation=ask_reform,
            )
            return remote_verify(self.endpoint, req, self.timeout, self.retries)

        verdicts = tuple(Verdict(r, one(r, False).judgments[0]) for r in range(R))
        reformulated = None
        if want_reformulation:
            accepted = [v.candidate_index for v in verdicts if v.possible]
            if accepted:
                reformulated = response_prompt(one(accepted[0], True))
        return StageAssessment(verdicts=tuple(verdicts), reformulated=reformulated)


def _cell_canvas(spec, cell) -> TokenCanvas:
    toks = np.full(spec.n_tokens, UNSET, dtype=np.int32)
    toks[: len(cell)] = cell
    return TokenCanvas(spec, toks, filled=len(cell))


def _b64_image(canvas: TokenCanvas, rows: int | None, image_format: str) -> str:
    img = render_canvas(canvas, rows)
    return base64.b64encode(encode_image(img, image_format)).decode("ascii")


def _redact(body: dict) -> dict:
    out = dict(body)
    if "image_b64" in out:
        out["image_b64"] = f"<{len(out['image_b64'])} b64 chars>"
    return out


CHAT_SYSTEM_TEMPLATE = """You judge partially generated scene images against a text prompt.
The attached image stacks {rows} candidate prefixes top to bottom; each is the opening rows of its own final image.
Mark a candidate "impossible" only when no completion could satisfy the prompt: an object count already over its quota, an object type the prompt never asked for, or a fully visible placement band with the wrong count. Otherwise mark it "possible".
Respond with ONLY this JSON object, nothing else:
{{"judgments": [{rows} entries of "possible" or "impossible"], "reformulated_prompt": null, "directives": null}}
{reform_clause}"""

CHAT_REFORM_CLAUSE = """If asked to reformulate, set "reformulated_prompt" to the prompt rewritten with per-band counts and "directives" to an array of {{"color", "shape", "row_start", "row_end", "count"}} objects covering every required object type."""


@dataclass
class OpenAIChatAdapter:
    """Maps the wire protocol onto an OpenAI-compatible chat endpoint.

    The verification request becomes one chat completion with a templated
    system prompt and the grid image attached as a data URI; the assistant
    is instructed to emit the wire response JSON and nothing else.
    """

    endpoint: str  # e.g. http://host/v1/chat/completions
    model: str
    timeout: float = 60.0
    retries: int = 2

    def build_payload(self, request: VerificationRequest) -> dict:
        mime = "image/png" if request.image_format == "png" else "image/x-portable-pixmap"
        system = CHAT_SYSTEM_TEMPLATE.format(
            rows=request.rows,
            reform_clause=CHAT_REFORM_CLAUSE if request.want_reformulation else "",
        )
        user_text = (
            f"Prompt: {request.prompt}\nCandidates: {request.rows}\nStage: {request.stage}\n"
            f"Reformulation requested: {str(request.want_reformulation).lower()}"
        )
        return {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": user_text},
                        {
                            "type": "image_url",
                            "image_url": {"url": f"data:{mime};base64,{request.image_b64}"},
                        },
                    ],
                },
            ],
            "response_format": {"type": "json_object"},
            "temperature": 0,
        }

    def verify(self, request: VerificationRequest) -> VerificationResponse:
        payload = self.build_payload(request)
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = _requests.post(
                    self.endpoint, json=payload, timeout=self.timeout, headers=_auth_headers()
                )
            except _requests.exceptions.Timeout as exc:
                last = Timeout(f"chat endpoint {self.endpoint} timed out after {self.timeout}s")
                last.__cause__ = exc
            except _requests.exceptions.RequestException as exc:
                last = TransportError(f"chat endpoint {self.endpoint} unreachable: {exc}")
                last.__cause__ = exc
            else:
                if resp.status_code != 200:
                    raise TransportError(
                        f"chat endpoint returned HTTP {resp.status_code}: {resp.text[:200]}"
                    )
                try:
                    content = resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise MalformedResponse(
                        f"chat completion missing message content: {resp.text[:200]}"
                    ) from exc
                try:
                    body = json.loads(content)
                except ValueError as exc:
                    raise MalformedResponse(f"assistant did not emit JSON: {content[:200]}") from exc
                return parse_response(body, request.rows)
            if attempt < self.retries:
                time.sleep(min(0.2 * 2**attempt, 2.0))
        assert last is not None
        raise last
