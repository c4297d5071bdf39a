"""Wire-protocol schema: request validation and upstream-output parsing.

Both directions are strict.  Requests with unknown fields, wrong types, or
out-of-range values are rejected before any upstream work happens, and
upstream output that does not match the constrained response shape is never
coerced into a response.  Protocol failures are typed so the server can map
them to explicit error objects.
"""
from __future__ import annotations

import base64
import binascii

REQUEST_FIELDS = ("prompt", "image_b64", "image_format", "rows", "stage",
                  "want_reformulation")
RESPONSE_FIELDS = ("judgments", "reformulated_prompt", "directives")
IMAGE_FORMATS = ("png", "ppm")
JUDGMENTS = ("possible", "impossible")
DIRECTIVE_FIELDS = ("color", "shape", "row_start", "row_end", "count")
COLORS = ("red", "green", "blue", "yellow")
SHAPES = ("square", "circle", "triangle")


class SchemaViolation(Exception):
    """A request or upstream reply does not match the wire schema."""


class UpstreamError(Exception):
    """The upstream model could not be queried or gave no usable reply."""


def _int_field(value, name: str) -> int:
    # bool is an int subclass; the wire treats them as distinct types
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaViolation(f"{name} must be an integer, got {type(value).__name__}")
    return value


def parse_request(body) -> dict:
    """Validate a decoded /verify request body; returns it as a plain dict."""
    if not isinstance(body, dict):
        raise SchemaViolation(f"request body must be a JSON object, got {type(body).__name__}")
    unknown = set(body) - set(REQUEST_FIELDS)
    if unknown:
        raise SchemaViolation(f"unknown request fields {sorted(unknown)}")
    missing = set(REQUEST_FIELDS) - set(body)
    if missing:
        raise SchemaViolation(f"missing request fields {sorted(missing)}")
    if not isinstance(body["prompt"], str) or not body["prompt"].strip():
        raise SchemaViolation("prompt must be a non-empty string")
    if not isinstance(body["image_b64"], str):
        raise SchemaViolation("image_b64 must be a string")
    try:
        image = base64.b64decode(body["image_b64"], validate=True)
    except (binascii.Error, ValueError) as exc:
        raise SchemaViolation(f"image_b64 is not valid base64: {exc}") from None
    if not image:
        raise SchemaViolation("image_b64 decodes to zero bytes")
    if body["image_format"] not in IMAGE_FORMATS:
        raise SchemaViolation(
            f"image_format must be one of {IMAGE_FORMATS}, got {body['image_format']!r}"
        )
    rows = _int_field(body["rows"], "rows")
    if rows < 1:
        raise SchemaViolation(f"rows must be >= 1, got {rows}")
    _int_field(body["stage"], "stage")
    if not isinstance(body["want_reformulation"], bool):
        raise SchemaViolation("want_reformulation must be a boolean")
    return {name: body[name] for name in REQUEST_FIELDS}


def _check_directive(entry, index: int) -> dict:
    if not isinstance(entry, dict):
        raise SchemaViolation(f"directive {index} is not an object")
    if set(entry) != set(DIRECTIVE_FIELDS):
        raise SchemaViolation(
            f"directive {index} must have exactly the fields {list(DIRECTIVE_FIELDS)}"
        )
    if entry["color"] not in COLORS or entry["shape"] not in SHAPES:
        raise SchemaViolation(
            f"directive {index} names unknown type {entry['color']!r} {entry['shape']!r}"
        )
    r0 = _int_field(entry["row_start"], f"directive {index} row_start")
    r1 = _int_field(entry["row_end"], f"directive {index} row_end")
    count = _int_field(entry["count"], f"directive {index} count")
    if r0 < 0 or r1 <= r0:
        raise SchemaViolation(f"directive {index} band [{r0}, {r1}) is empty or negative")
    if count < 0:
        raise SchemaViolation(f"directive {index} count must be >= 0, got {count}")
    return dict(entry)


def parse_upstream_content(content: str, rows: int) -> dict:
    """Parse the constrained JSON an upstream verifier is instructed to emit.

    Returns the full response body: judgments plus the optional reformulated
    prompt and directives, normalized so absent optionals become null.
    """
    import json

    try:
        body = json.loads(content)
    except (json.JSONDecodeError, TypeError) as exc:
        raise SchemaViolation(f"upstream reply is not JSON: {exc}") from None
    if not isinstance(body, dict):
        raise SchemaViolation("upstream reply must be a JSON object")
    unknown = set(body) - set(RESPONSE_FIELDS)
    if unknown:
        raise SchemaViolation(f"upstream reply has unknown fields {sorted(unknown)}")
    if "judgments" not in body:
        raise SchemaViolation("upstream reply is missing judgments")
    judgments = body["judgments"]
    if not isinstance(judgments, list) or len(judgments) != rows:
        raise SchemaViolation(
            f"expected {rows} judgments, got "
            f"{len(judgments) if isinstance(judgments, list) else type(judgments).__name__}"
        )
    for j in judgments:
        if j not in JUDGMENTS:
            raise SchemaViolation(f"judgment {j!r} is not one of {JUDGMENTS}")
    reform = body.get("reformulated_prompt")
    if reform is not None and not isinstance(reform, str):
        raise SchemaViolation("reformulated_prompt must be a string or null")
    directives = body.get("directives")
    if directives is not None:
        if not isinstance(directives, list):
            raise SchemaViolation("directives must be an array or null")
        directives = [_check_directive(d, i) for i, d in enumerate(directives)]
    return {
        "judgments": list(judgments),
        "reformulated_prompt": reform,
        "directives": directives,
    }


def error_body(kind: str, detail: str) -> dict:
    """Protocol-level error object returned with a non-200 status."""
    return {"error": {"type": kind, "detail": detail}}
