"""Shared fixtures."""
import numpy as np
import pytest

from gridar.canvas import CanvasSpec, TokenCanvas
from gridar.scene import SceneLM


@pytest.fixture
def spec16() -> CanvasSpec:
    return CanvasSpec(h=16, w=16, K=13)


@pytest.fixture
def model16(spec16) -> SceneLM:
    return SceneLM(spec16)


def make_canvas(spec: CanvasSpec, tokens) -> TokenCanvas:
    """Fully populated canvas from a token list."""
    arr = np.asarray(tokens, dtype=np.int32)
    return TokenCanvas(spec, arr, filled=spec.n_tokens)
