import json
import pathlib

import pytest

from verifier_bridge.protocol import UpstreamError

DATA_DIR = pathlib.Path(__file__).parent / "data"
VECTOR_DIR = pathlib.Path(__file__).parent / "vectors"

# sentinel used by the frozen vectors for "upstream unreachable"
UPSTREAM_DOWN = "__UPSTREAM_DOWN__"


class ScriptedUpstream:
    """Replays canned reply strings and records every call it receives."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = []

    def complete(self, system_text, user_text, request):
        self.calls.append({"system": system_text, "user": user_text,
                           "request": request})
        if not self.replies:
            raise AssertionError("upstream called more times than scripted")
        reply = self.replies.pop(0)
        if reply == UPSTREAM_DOWN:
            raise UpstreamError("connection refused")
        return reply


@pytest.fixture(scope="session")
def golden():
    """Base64 golden images rendered once from known token grids."""
    return json.loads((DATA_DIR / "golden_images.json").read_text())


def load_vectors():
    paths = sorted(VECTOR_DIR.glob("*.json"))
    assert paths, f"no conformance vectors under {VECTOR_DIR}"
    return [json.loads(p.read_text()) for p in paths]
