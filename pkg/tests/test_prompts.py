"""Prompt grammar, directive validation, and scene counting."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridar.canvas import CanvasSpec, TokenCanvas
from gridar.errors import PromptGrammarError, ShapeMismatch, UnknownToken
from gridar.prompts import (
    COLORS,
    FULL_K,
    SHAPES,
    DirectiveEntry,
    Requirement,
    ScenePrompt,
    count_by_type,
    object_types,
    parse_prompt,
    scene_counts,
    spec_for,
    text_form,
    token_type,
    type_token,
)
from conftest import make_canvas


def test_token_type_round_trip():
    assert type_token("red", "square") == 1
    assert token_type(0) is None
    for t in range(1, FULL_K):
        color, shape = token_type(t)
        assert type_token(color, shape) == t
    with pytest.raises(UnknownToken):
        type_token("purple", "square")
    with pytest.raises(UnknownToken):
        token_type(13)


def test_object_types_leading_prefix():
    assert object_types(3) == [("red", "square"), ("red", "circle")]
    assert len(object_types()) == 12
    with pytest.raises(UnknownToken):
        object_types(1)


def test_parse_simple_requirement():
    p = parse_prompt("8 red squares")
    assert p.requirements == (Requirement(8, "red", "square"),)
    assert p.directives == ()
    assert text_form(p) == "8 red squares"


def test_parse_singular_noun():
    p = parse_prompt("1 blue circle")
    assert p.requirements == (Requirement(1, "blue", "circle"),)
    assert text_form(p) == "1 blue circle"


def test_parse_conjunction():
    p = parse_prompt("2 red squares and 3 green triangles")
    assert [r.type for r in p.requirements] == [("red", "square"), ("green", "triangle")]


def test_parse_band_placement_is_one_indexed_inclusive():
    p = parse_prompt("3 red squares (3 in rows 1-4)")
    assert p.directives == (DirectiveEntry("red", "square", 0, 4, 3),)


def test_parse_top_bottom_sugar():
    p = parse_prompt("8 red squares (3 in the top 4 rows, 5 in the bottom 12 rows)")
    assert p.directives == (
        DirectiveEntry("red", "square", 0, 4, 3),
        DirectiveEntry("red", "square", 4, 16, 5),
    )
    assert text_form(p) == "8 red squares (3 in the top 4 rows, 5 in the bottom 12 rows)"


def test_parse_rejects_garbage():
    for bad in ("", "eight red squares", "3 purple squares", "3 red squares in rows 1-4"):
        with pytest.raises(PromptGrammarError):
            parse_prompt(bad)


def test_directive_quotas_must_sum_to_count():
    with pytest.raises(PromptGrammarError):
        ScenePrompt(
            (Requirement(8, "red", "square"),),
            (DirectiveEntry("red", "square", 0, 4, 3),),
        )


def test_directive_bands_must_not_overlap():
    with pytest.raises(PromptGrammarError):
        ScenePrompt(
            (Requirement(4, "red", "square"),),
            (
                DirectiveEntry("red", "square", 0, 8, 2),
                DirectiveEntry("red", "square", 4, 12, 2),
            ),
        )


def test_directive_for_unrequired_type_rejected():
    with pytest.raises(PromptGrammarError):
        ScenePrompt(
            (Requirement(2, "red", "square"),),
            (DirectiveEntry("blue", "circle", 0, 4, 2),),
        )


def test_duplicate_requirement_type_rejected():
    with pytest.raises(PromptGrammarError):
        ScenePrompt((Requirement(1, "red", "square"), Requirement(2, "red", "square")))


def test_directives_normalized_to_band_order():
    p = ScenePrompt(
        (Requirement(4, "red", "square"),),
        (
            DirectiveEntry("red", "square", 8, 16, 1),
            DirectiveEntry("red", "square", 0, 8, 3),
        ),
    )
    assert [e.row_start for e in p.directives] == [0, 8]


def test_scene_counts_band_example():
    spec = spec_for()
    toks = np.zeros(spec.n_tokens, dtype=np.int32)
    rs = type_token("red", "square")
    toks[[0, 17, 40]] = rs  # three red squares inside rows 0-3
    canvas = make_canvas(spec, toks)
    table = scene_counts(canvas, [(0, 4), (4, 8), (8, 12), (12, 16)])
    assert table[0] == {("red", "square"): 3}
    assert table[1] == table[2] == table[3] == {}


def test_scene_counts_empty_canvas():
    spec = spec_for()
    table = scene_counts(TokenCanvas(spec), [(0, 8), (8, 16)])
    assert table == [{}, {}]


def test_scene_counts_partial_prefix_only():
    spec = spec_for(h=4, w=4)
    toks = np.full(16, -1, dtype=np.int32)
    toks[:4] = type_token("blue", "circle")
    canvas = TokenCanvas(spec, toks, filled=4)
    assert count_by_type(canvas) == {("blue", "circle"): 4}


def test_scene_counts_rejects_bad_band():
    spec = spec_for(h=4, w=4)
    with pytest.raises(ShapeMismatch):
        scene_counts(TokenCanvas(spec), [(0, 5)])


def test_scene_counts_matches_brute_force():
    spec = spec_for(h=8, w=8)
    rng = np.random.default_rng(5)
    toks = rng.integers(0, spec.K, size=spec.n_tokens).astype(np.int32)
    canvas = make_canvas(spec, toks)
    bands = [(0, 2), (2, 5), (5, 8)]
    table = scene_counts(canvas, bands)
    for (r0, r1), got in zip(bands, table):
        want: dict = {}
        for row in range(r0, r1):
            for col in range(spec.w):
                t = int(toks[row * spec.w + col])
                if t != 0:
                    want[token_type(t)] = want.get(token_type(t), 0) + 1
        assert got == want


@st.composite
def prompts(draw):
    n_types = draw(st.integers(1, 3))
    types = draw(
        st.lists(
            st.sampled_from([(c, s) for c in COLORS for s in SHAPES]),
            min_size=n_types,
            max_size=n_types,
            unique=True,
        )
    )
    reqs = []
    entries = []
    for color, shape in types:
        count = draw(st.integers(1, 9))
        reqs.append(Requirement(count, color, shape))
        if draw(st.booleans()):
            # split the count over two adjacent bands somewhere in 16 rows
            split = draw(st.integers(0, count))
            mid = draw(st.integers(1, 15))
            entries.append(DirectiveEntry(color, shape, 0, mid, split))
            entries.append(DirectiveEntry(color, shape, mid, 16, count - split))
    return ScenePrompt(tuple(reqs), tuple(entries))


@settings(max_examples=200)
@given(prompts())
def test_text_form_round_trips(prompt):
    assert parse_prompt(text_form(prompt)) == prompt
