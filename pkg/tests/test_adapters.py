import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from realexp.adapters import (
    Modality,
    OverlayStyle,
    apply_mask,
    grid_segment,
    image,
    load_csv,
    load_image,
    load_segment_map,
    load_tokens,
    relabel,
    render_overlay,
    segment_intensity,
    tabular,
    text,
    wire_payload,
    write_pgm,
)
from realexp.coalition import Attribution, Method
from realexp.errors import FormatError, ModalityError, ValidationError
from realexp.perturbation import exp_weight, similarity

TOKENS = ["這部", "電影", "很", "有趣", "演員", "的", "表演", "令人", "印象", "深刻"]


def write_ppm(path, pixels):
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), "RGB").save(path, format="PPM")


class TestGrid:
    def test_even(self):
        seg = grid_segment(4, 4, 2, 2)
        assert np.bincount(seg.ravel()).tolist() == [4, 4, 4, 4]
        assert seg[0, 0] == 0 and seg[0, 3] == 1 and seg[3, 0] == 2

    def test_remainder(self):
        seg = grid_segment(5, 5, 2, 2)
        assert np.bincount(seg.ravel()).tolist() == [4, 6, 6, 9]

    def test_exact_division(self):
        seg = grid_segment(224, 224, 7, 7)
        assert seg.max() == 48
        assert set(np.bincount(seg.ravel()).tolist()) == {32 * 32}

    @pytest.mark.parametrize("args", [(0, 4, 1, 1), (4, 4, 0, 2), (4, 4, 5, 1), (3, 4, 1, 4)])
    def test_invalid(self, args):
        with pytest.raises(ValidationError):
            grid_segment(*args)


@settings(max_examples=50, deadline=None)
@given(w=st.integers(1, 40), h=st.integers(1, 40), data=st.data())
def test_grid_partitions(w, h, data):
    rows = data.draw(st.integers(1, h))
    cols = data.draw(st.integers(1, w))
    seg = grid_segment(w, h, rows, cols)
    assert seg.shape == (h, w)
    counts = np.bincount(seg.ravel())
    assert len(counts) == rows * cols and counts.min() >= 1


class TestSegmentMaps:
    def test_simple(self):
        seg = load_segment_map([[0, 0], [1, 1]])
        assert seg.max() + 1 == 2

    def test_relabel_first_appearance(self):
        seg = load_segment_map([[7, 3], [7, 3]])
        assert seg.tolist() == [[0, 1], [0, 1]]
        assert relabel(np.array([5, 2, 5, 9])).tolist() == [0, 1, 0, 2]

    def test_pgm_and_json_agree(self, tmp_path):
        labels = [[3, 3, 7], [12, 7, 7], [12, 12, 3]]
        (tmp_path / "m.json").write_text(json.dumps(labels))
        write_pgm(tmp_path / "m.pgm", np.array(labels))
        a = load_segment_map(tmp_path / "m.json")
        b = load_segment_map(tmp_path / "m.pgm")
        assert a.tolist() == b.tolist()
        img = np.zeros((3, 3, 3))
        assert image(img, a).n == image(img, b).n == 3

    def test_binary_pgm(self, tmp_path):
        p = tmp_path / "m.pgm"
        p.write_bytes(b"P5\n2 2\n# comment\n255\n" + bytes([9, 9, 200, 200]))
        assert load_segment_map(p).tolist() == [[0, 0], [1, 1]]

    def test_non_rectangular(self, tmp_path):
        with pytest.raises(FormatError):
            load_segment_map([[0, 1], [1]])
        (tmp_path / "bad.json").write_text("[[0, 1], [2]]")
        with pytest.raises(FormatError):
            load_segment_map(tmp_path / "bad.json")

    def test_garbage_file(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"\xff\xfe\x00")
        with pytest.raises(FormatError):
            load_segment_map(tmp_path / "x.bin")

    def test_float_labels(self):
        with pytest.raises(FormatError):
            load_segment_map([[0.5, 1.0]])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(0, 30), min_size=3, max_size=3), min_size=1, max_size=6))
def test_relabel_partition(rows):
    seg = load_segment_map(rows)
    n = seg.max() + 1
    assert sorted(np.unique(seg).tolist()) == list(range(n))
    assert n == len({x for r in rows for x in r})


class TestMasking:
    def test_tabular(self):
        inst = tabular([1, 2, 3])
        assert apply_mask(inst, [0, 1, 0]).tolist() == [0.0, 2.0, 0.0]
        assert apply_mask(inst, [1, 1, 1]).tolist() == [1.0, 2.0, 3.0]

    def test_tabular_baseline(self):
        inst = tabular([1, 2, 3], baseline=[9, 8, 7])
        assert wire_payload(inst, [1, 0, 1]) == [1.0, 8.0, 3.0]

    def test_text_example(self):
        inst = text(TOKENS)
        keep = np.ones(10, dtype=bool)
        keep[3] = False  # T4
        survivors = apply_mask(inst, keep)
        assert survivors == TOKENS[:3] + TOKENS[4:]
        assert similarity(keep) == pytest.approx(0.9)
        keep2 = np.ones(10, dtype=bool)
        keep2[[4, 9]] = False  # T5 and T10
        assert similarity(keep2) == pytest.approx(0.8)
        assert exp_weight(similarity(np.ones(10)), 0.25) == 1.0

    def test_text_identity(self):
        inst = text(TOKENS)
        assert apply_mask(inst, np.ones(10)) == TOKENS

    def test_repeated_tokens_get_unique_labels(self):
        assert text(["a", "b", "a"]).labels == ("a@0", "b@1", "a@2")

    def test_image_mean_fill(self):
        px = np.arange(2 * 2 * 3, dtype=float).reshape(2, 2, 3)
        inst = image(px, [[0, 1], [0, 1]])
        out = apply_mask(inst, [True, False])
        np.testing.assert_array_equal(out[:, 0], px[:, 0])
        np.testing.assert_allclose(out[0, 1], px.reshape(-1, 3).mean(axis=0))
        np.testing.assert_array_equal(apply_mask(inst, [1, 1]), px)

    def test_image_zero_fill(self):
        inst = image(np.ones((2, 2, 3)), [[0, 1], [0, 1]], fill="zero")
        assert apply_mask(inst, [0, 1])[:, 0].sum() == 0.0

    def test_image_wire_payload(self):
        inst = image(np.ones((2, 2, 3)), [[0, 1], [2, 2]], path="x.ppm")
        assert wire_payload(inst, [1, 0, 0]) == {"path": "x.ppm", "masked_segments": [1, 2]}

    def test_arity(self):
        with pytest.raises(ValidationError):
            apply_mask(tabular([1, 2]), [1, 1, 1])

    def test_bad_inputs(self):
        with pytest.raises(ValidationError):
            text([])
        with pytest.raises(ValidationError):
            text(["ok", ""])
        with pytest.raises(ValidationError):
            tabular([1.0, np.inf])
        with pytest.raises(ValidationError):
            image(np.ones((2, 2, 3)), [[0, 0], [0, 2]])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.booleans(), min_size=10, max_size=10))
def test_text_masking_keeps_order(mask):
    out = apply_mask(text(TOKENS), mask)
    idx = [TOKENS.index(t) for t in out]
    assert idx == sorted(idx)
    assert len(out) == sum(mask)


class TestLoaders:
    def test_csv(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b\n1,10\n3,30\n")
        inst = load_csv(p, row=1)
        assert inst.modality is Modality.TABULAR
        assert inst.columns.tolist() == [3.0, 30.0]
        assert inst.baseline.tolist() == [2.0, 20.0]
        assert inst.labels == ("a", "b")
        assert load_csv(p, baseline="zero").baseline.tolist() == [0.0, 0.0]

    def test_csv_errors(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b\n1,x\n")
        with pytest.raises(FormatError):
            load_csv(p)
        p.write_text("a,b\n1\n")
        with pytest.raises(FormatError):
            load_csv(p)
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValidationError):
            load_csv(p, row=3)

    def test_tokens(self, tmp_path):
        p = tmp_path / "t.json"
        p.write_text(json.dumps(TOKENS, ensure_ascii=False), encoding="utf-8")
        assert load_tokens(p).tokens == tuple(TOKENS)
        p.write_text('{"a": 1}')
        with pytest.raises(FormatError):
            load_tokens(p)

    def test_image_grid(self, tmp_path):
        px = np.random.default_rng(0).integers(0, 255, (8, 6, 3))
        write_ppm(tmp_path / "i.ppm", px)
        inst = load_image(tmp_path / "i.ppm", {"grid": [2, 3]})
        assert inst.n == 6
        np.testing.assert_array_equal(inst.pixels, px)


class TestOverlay:
    def make(self, tmp_path):
        px = np.full((4, 4, 3), 200, dtype=np.uint8)
        write_ppm(tmp_path / "i.ppm", px)
        return load_image(tmp_path / "i.ppm", {"grid": [2, 2]})

    def test_uniform_heat(self, tmp_path):
        inst = self.make(tmp_path)
        out = render_overlay(inst, Attribution([0.5] * 4, Method.EXACT_SHAPLEY), OverlayStyle("heat"),
                             tmp_path / "o.ppm")
        with Image.open(out) as im:
            arr = np.asarray(im)
        assert len(np.unique(arr)) == 1

    def test_topk_one_hot(self, tmp_path):
        inst = self.make(tmp_path)
        render_overlay(inst, [0.0, 0.0, 1.0, 0.0], OverlayStyle("topk", k=1, dim=0.5), tmp_path / "o.ppm")
        with Image.open(tmp_path / "o.ppm") as im:
            arr = np.asarray(im)
        bright = arr[:, :, 0] == 200
        assert bright.sum() == 4 and bright[2:, :2].all()

    def test_sidecar_ranking(self, tmp_path):
        inst = self.make(tmp_path)
        phi = [0.2, 0.7, 0.2, -0.1]
        render_overlay(inst, phi, OverlayStyle(), tmp_path / "o.ppm")
        side = json.loads((tmp_path / "o.json").read_text())
        assert side["ranking"] == [1, 0, 2, 3]
        assert side["phi"] == phi

    def test_non_image(self, tmp_path):
        with pytest.raises(ModalityError):
            render_overlay(tabular([1.0]), [1.0], OverlayStyle(), tmp_path / "o.ppm")

    def test_style_validation(self):
        with pytest.raises(ValidationError):
            OverlayStyle("glow")
        with pytest.raises(ValidationError):
            segment_intensity([1.0, 2.0], OverlayStyle("topk", k=3))

    def test_heat_ramp_linear(self):
        out = segment_intensity([0.0, 0.5, 1.0], OverlayStyle("heat", dim=0.2))
        np.testing.assert_allclose(out, [0.2, 0.6, 1.0])
