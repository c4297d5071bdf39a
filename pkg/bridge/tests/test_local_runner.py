"""Local scene reader: glyph classification and grid judging on golden images."""
import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient
from hypothesis import given, settings
from hypothesis import strategies as st

from verifier_bridge import BridgeConfig, build_app
from verifier_bridge.classify import (
    _parse_ppm,
    decode_image,
    read_grid,
    reference_tiles,
)
from verifier_bridge.scenes import judge_cell, parse_needs, reformulate

LABELS = [None] + [(c, s)
                   for c in ("red", "green", "blue", "yellow")
                   for s in ("square", "circle", "triangle")]


def compose(labels, T):
    table = {lab: np.frombuffer(raw, dtype=np.uint8).reshape(T, T, 3)
             for lab, raw in reference_tiles(T)}
    return np.concatenate(
        [np.concatenate([table[lab] for lab in row], axis=1) for row in labels],
        axis=0)


def ppm_bytes(pixels):
    h, w = pixels.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes()


class TestClassifier:
    def test_reference_tiles_are_distinct(self):
        for T in (6, 8, 16):
            tiles = reference_tiles(T)
            assert len(tiles) == 13  # background + 4 colors x 3 shapes
            blobs = [raw for _, raw in tiles]
            assert len(set(blobs)) == 13
            assert all(len(raw) == T * T * 3 for raw in blobs)

    def test_ambiguous_tile_sizes_are_rejected(self):
        # 4px and 5px render square and circle identically
        for T in (4, 5):
            with pytest.raises(ValueError, match="distinguish"):
                reference_tiles(T)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.sampled_from(LABELS), min_size=1, max_size=3),
                    min_size=1, max_size=3).filter(
                        lambda rows: len({len(r) for r in rows}) == 1),
           st.sampled_from([6, 8]))
    def test_read_grid_round_trips(self, labels, T):
        assert read_grid(compose(labels, T), T) == labels

    def test_png_golden_decodes(self, golden):
        pixels = decode_image(base64.b64decode(golden["main_png"]), "png")
        assert pixels.shape == (256, 256, 3)
        labels = read_grid(pixels, 16)
        flat = [lab for row in labels for lab in row]
        assert flat.count(("red", "square")) == 14
        assert flat.count(("blue", "circle")) == 1
        assert flat.count(None) == 241

    def test_ppm_golden_decodes(self, golden):
        pixels = decode_image(base64.b64decode(golden["tiny_ppm"]), "ppm")
        assert pixels.shape == (16, 16, 3)
        assert read_grid(pixels, 8) == [[("red", "square"), None],
                                        [None, ("blue", "circle")]]

    def test_ppm_header_comments_are_tolerated(self):
        grid = compose([[("green", "triangle")]], 6)
        data = b"P6\n# hand-made\n6 6\n255\n" + grid.tobytes()
        assert read_grid(_parse_ppm(data), 6) == [[("green", "triangle")]]

    @pytest.mark.parametrize("data,message", [
        (b"P5\n4 4\n255\n" + b"\x00" * 48, "magic"),
        (b"P6\n4 4\n65535\n" + b"\x00" * 96, "maxval"),
        (b"P6\n4 4\n255\n" + b"\x00" * 10, "shorter"),
        (b"P6\n4 4", "truncated"),
    ])
    def test_ppm_rejections(self, data, message):
        with pytest.raises(ValueError, match=message):
            _parse_ppm(data)

    def test_read_grid_rejects_partial_tiles(self):
        grid = compose([[None, None]], 8)
        with pytest.raises(ValueError, match="whole grid"):
            read_grid(grid[:, :-1], 8)

    def test_read_grid_rejects_unknown_glyphs(self):
        grid = compose([[None]], 8).copy()
        grid[2, 3] = (13, 99, 200)  # one stray pixel breaks exact matching
        with pytest.raises(ValueError, match="no known glyph"):
            read_grid(grid, 8)


class TestSceneRules:
    def test_parse_needs_basic(self):
        needs = parse_needs("3 red squares and 1 blue circle")
        assert [(n.count, n.color, n.shape) for n in needs] == [
            (3, "red", "square"), (1, "blue", "circle")]
        assert all(n.bands == () for n in needs)

    def test_parse_needs_top_bottom_sugar(self):
        (need,) = parse_needs("8 red squares (3 in the top 4 rows, "
                              "5 in the bottom 12 rows)")
        assert [(b.row_start, b.row_end, b.count) for b in need.bands] == [
            (0, 4, 3), (4, 16, 5)]

    def test_parse_needs_explicit_bands(self):
        (need,) = parse_needs("4 red squares (2 in rows 1-2, 2 in rows 3-16)")
        assert [(b.row_start, b.row_end, b.count) for b in need.bands] == [
            (0, 2, 2), (2, 16, 2)]

    @pytest.mark.parametrize("bad", [
        "two red squares",
        "3 crimson squares",
        "1 red square and 2 red squares",   # duplicate type
        "2 red squares (2 in rows 3-2)",    # inverted band
        "2 red squares (somewhere nice)",
    ])
    def test_parse_needs_rejections(self, bad):
        with pytest.raises(ValueError):
            parse_needs(bad)

    def cell(self, *rows):
        return [list(r) for r in rows]

    def test_judge_unrequested_type(self):
        needs = parse_needs("2 red squares")
        cell = self.cell([("red", "square"), ("blue", "circle")])
        assert judge_cell(cell, needs) == "impossible"

    def test_judge_overfull(self):
        needs = parse_needs("2 red squares")
        cell = self.cell([("red", "square")] * 3)
        assert judge_cell(cell, needs) == "impossible"

    def test_judge_band_visibility(self):
        needs = parse_needs("2 red squares (1 in rows 1-2, 1 in rows 3-4)")
        rs = ("red", "square")
        # two visible rows: first band complete and satisfied
        assert judge_cell(self.cell([rs, None], [None, None]), needs) == "possible"
        # first band complete but empty: impossible regardless of later rows
        assert judge_cell(self.cell([None, None], [None, None]), needs) == "impossible"
        # one visible row: no band is complete yet, count alone decides
        assert judge_cell(self.cell([rs, None]), needs) == "possible"
        # all rows visible, total in range but the second band came up empty
        assert judge_cell(
            self.cell([rs, None], [None, None], [None, None], [None, None]),
            needs) == "impossible"

    def test_reformulate_pins_visible_counts(self):
        needs = parse_needs("3 red squares")
        cell = self.cell([("red", "square"), None], [None, ("red", "square")])
        text, directives = reformulate(cell, 8, needs)
        assert text == "3 red squares (2 in the top 2 rows, 1 in the bottom 6 rows)"
        assert directives == [
            {"color": "red", "shape": "square", "row_start": 0, "row_end": 2,
             "count": 2},
            {"color": "red", "shape": "square", "row_start": 2, "row_end": 8,
             "count": 1},
        ]

    def test_reformulate_declines_banded_prompts(self):
        needs = parse_needs("2 red squares (1 in rows 1-2, 1 in rows 3-8)")
        assert reformulate(self.cell([None, None]), 8, needs) == (None, None)

    def test_reformulate_declines_full_canvas(self):
        needs = parse_needs("1 red square")
        cell = self.cell(*([[None]] * 4))
        assert reformulate(cell, 4, needs) == (None, None)


def local_client(tile_px=16):
    return TestClient(build_app(BridgeConfig(tile_px=tile_px)))


def post(client, golden_b64, prompt, rows, fmt="png", want=False):
    return client.post("/verify", json={
        "prompt": prompt, "image_b64": golden_b64, "image_format": fmt,
        "rows": rows, "stage": 1, "want_reformulation": want})


class TestLocalRunnerEndToEnd:
    def test_judgments_on_golden_grid(self, golden):
        r = post(local_client(), golden["main_png"], "8 red squares", rows=4)
        assert r.status_code == 200
        assert r.json() == {
            "judgments": ["possible", "impossible", "impossible", "possible"],
            "reformulated_prompt": None, "directives": None}

    def test_reformulation_from_first_accepted_cell(self, golden):
        r = post(local_client(), golden["main_png"], "8 red squares", rows=4,
                 want=True)
        body = r.json()
        assert body["judgments"] == ["possible", "impossible", "impossible",
                                     "possible"]
        assert body["reformulated_prompt"] == (
            "8 red squares (3 in the top 4 rows, 5 in the bottom 12 rows)")
        assert body["directives"] == [
            {"color": "red", "shape": "square", "row_start": 0, "row_end": 4,
             "count": 3},
            {"color": "red", "shape": "square", "row_start": 4, "row_end": 16,
             "count": 5},
        ]

    def test_banded_prompt_judged_but_not_reformulated(self, golden):
        r = post(local_client(), golden["directive_png"],
                 "4 red squares (2 in rows 1-2, 2 in rows 3-16)", rows=4,
                 want=True)
        body = r.json()
        assert body["judgments"] == ["possible", "impossible", "possible",
                                     "possible"]
        assert body["reformulated_prompt"] is None
        assert body["directives"] is None

    def test_ppm_request_with_small_tiles(self, golden):
        r = post(local_client(tile_px=8), golden["tiny_ppm"], "1 red square",
                 rows=2, fmt="ppm")
        assert r.json()["judgments"] == ["possible", "impossible"]

    def test_two_requirement_reformulation(self, golden):
        r = post(local_client(), golden["small_ppm"],
                 "2 red squares and 1 blue circle", rows=2, fmt="ppm",
                 want=True)
        body = r.json()
        assert body["judgments"] == ["possible", "possible"]
        assert body["reformulated_prompt"] == (
            "2 red squares (2 in the top 4 rows, 0 in the bottom 4 rows) and "
            "1 blue circle (0 in the top 4 rows, 1 in the bottom 4 rows)")
        assert len(body["directives"]) == 4

    def test_unreadable_prompt_is_upstream_error(self, golden):
        r = post(local_client(), golden["main_png"], "eight crimson boxes",
                 rows=4)
        assert r.status_code == 502
        assert r.json()["error"]["type"] == "UpstreamError"

    def test_rows_must_divide_the_grid(self, golden):
        r = post(local_client(), golden["main_png"], "8 red squares", rows=5)
        assert r.status_code == 502
        assert r.json()["error"]["type"] == "UpstreamError"

    def test_unknown_glyph_is_upstream_error(self, golden):
        grey = np.full((8, 8, 3), 200, dtype=np.uint8)
        grid = compose([[("red", "square")], [None]], 8)
        grid[8:16, 0:8] = grey  # undecoded-cell color, not a drawable glyph
        b64 = base64.b64encode(ppm_bytes(grid)).decode()
        r = post(local_client(tile_px=8), b64, "1 red square", rows=2,
                 fmt="ppm")
        assert r.status_code == 502
        assert r.json()["error"]["type"] == "UpstreamError"
