"""Bridge configuration: listen address, upstream selection, prompt template.

The verifier prompt template is part of the config so deployments can tune
the wording without code changes; the default lives here, versioned with
the repo.  Templates use ``string.Template`` placeholders ($prompt, $rows,
$reformulation_clause) to avoid fighting JSON braces.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from string import Template

UPSTREAM_MODES = ("hosted_api", "local_model")

# Non-paper content: the upstream model's instructions are this repo's
# best effort at a row-wise judging prompt, not a published artifact.
DEFAULT_TEMPLATE = """\
You are verifying partial drafts of a generated image against a prompt.
The attached image stacks $rows candidate cells top to bottom; each cell is
an independent draft showing only the top rows of its final image.

Target prompt: $prompt

Judge each cell: "impossible" if the visible content already contradicts the
prompt (too many of a required object, an object type the prompt never asked
for, or a fully visible placement band with the wrong count), otherwise
"possible".  Judge cells in top-to-bottom order.
$reformulation_clause
Respond with ONLY a JSON object, no prose, in exactly this shape:
{"judgments": ["possible" | "impossible", ... $rows entries],
 "reformulated_prompt": string or null,
 "directives": [{"color": str, "shape": str, "row_start": int, "row_end": int,
                 "count": int}, ...] or null}
"""

REFORMULATION_CLAUSE = """\
For the first possible cell, also rewrite the prompt to pin what that cell
already shows: per object type, state the count visible in the cell's rows
and the count remaining below, and mirror that split in the structured
directives field (row indices are 0-based over the final image).
"""


@dataclass(frozen=True)
class BridgeConfig:
    """Everything the server needs; validated on construction."""

    host: str = "127.0.0.1"
    port: int = 8080
    upstream_mode: str = "local_model"
    upstream_endpoint: str | None = None
    upstream_model: str = "gpt-4.1"
    api_key_env: str = "BRIDGE_UPSTREAM_KEY"
    upstream_timeout: float = 60.0
    template: str = DEFAULT_TEMPLATE
    parse_retries: int = 1
    tile_px: int = 16
    log_exchanges: bool = True

    def __post_init__(self) -> None:
        if self.upstream_mode not in UPSTREAM_MODES:
            raise ValueError(
                f"upstream_mode must be one of {UPSTREAM_MODES}, got {self.upstream_mode!r}"
            )
        if self.upstream_mode == "hosted_api" and not self.upstream_endpoint:
            raise ValueError("hosted_api mode needs an upstream_endpoint")
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port {self.port} outside [1, 65535]")
        if self.parse_retries < 0:
            raise ValueError("parse_retries must be >= 0")
        # square and circle glyphs rasterize identically below 6px
        if self.tile_px < 6:
            raise ValueError("tile_px must be at least 6")
        if self.upstream_timeout <= 0:
            raise ValueError("upstream_timeout must be positive")
        if "$rows" not in self.template:
            raise ValueError("template must reference $rows")

    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "BridgeConfig":
        """Load JSON config; keyword overrides win over file values."""
        body = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(body) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        body.update(overrides)
        return cls(**body)


def render_system_text(config: BridgeConfig, prompt: str, rows: int,
                       want_reformulation: bool) -> str:
    clause = REFORMULATION_CLAUSE if want_reformulation else ""
    return Template(config.template).safe_substitute(
        prompt=prompt, rows=rows, reformulation_clause=clause
    )


def render_user_text(prompt: str, rows: int) -> str:
    return f"Prompt: {prompt}\nCells in the image, top to bottom: {rows}"
