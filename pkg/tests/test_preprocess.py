"""Image decode/resize/normalize steps and score ranking.

The bilinear resampler is checked against an independent per-pixel
reference implementation (straight double loop over output pixels),
not against itself.
"""

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from benchrig.errors import DecodeError, UnsupportedFeature, ValidationError
from benchrig.manifest import ProcessingStep, TensorIO
from benchrig.preprocess import (
    argsort_scores,
    compile_input_steps,
    compile_output_steps,
    decode_image,
    encode_ppm,
    normalize_image,
    resize_image,
)


def make_ppm(pixels):
    """pixels: [H][W][3] nested lists of 0..255 ints."""
    return encode_ppm(np.asarray(pixels, dtype=np.uint8))


RED_1x1 = make_ppm([[[255, 0, 0]]])


class TestDecode:
    def test_ppm_rgb_nhwc(self):
        out = decode_image(RED_1x1, {"data_layout": "NHWC", "color_mode": "RGB"})
        assert out.shape == (1, 1, 3)
        assert out.dtype == np.float32
        assert out.tolist() == [[[255.0, 0.0, 0.0]]]

    def test_ppm_bgr_swaps_channels(self):
        out = decode_image(RED_1x1, {"data_layout": "NHWC", "color_mode": "BGR"})
        assert out.tolist() == [[[0.0, 0.0, 255.0]]]

    def test_ppm_nchw_transposes(self):
        out = decode_image(RED_1x1, {"data_layout": "NCHW", "color_mode": "RGB"})
        assert out.shape == (3, 1, 1)
        assert out[:, 0, 0].tolist() == [255.0, 0.0, 0.0]

    def test_ppm_header_comments_and_whitespace(self):
        body = b"P6 # binary pixmap\n# size line next\n2\t1 # w h\n255\n" + bytes(
            [10, 20, 30, 40, 50, 60])
        out = decode_image(body, {})
        assert out.shape == (1, 2, 3)
        assert out[0, 0].tolist() == [10.0, 20.0, 30.0]
        assert out[0, 1].tolist() == [40.0, 50.0, 60.0]

    def test_ppm_round_trip_random(self):
        rng = np.random.default_rng(11)
        pixels = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        out = decode_image(encode_ppm(pixels), {})
        assert np.array_equal(out, pixels.astype(np.float32))

    def test_truncated_ppm(self):
        whole = make_ppm([[[1, 2, 3], [4, 5, 6]]])
        with pytest.raises(DecodeError):
            decode_image(whole[:-1], {})

    def test_truncated_ppm_header(self):
        with pytest.raises(DecodeError):
            decode_image(b"P6\n2 ", {})

    def test_wrong_magic(self):
        with pytest.raises(DecodeError):
            decode_image(b"P5\n1 1\n255\nx", {})

    def test_sixteen_bit_ppm_rejected(self):
        with pytest.raises(DecodeError):
            decode_image(b"P6\n1 1\n65535\n" + b"\0" * 6, {})

    def test_png_decodes_to_same_pixels(self):
        rng = np.random.default_rng(3)
        pixels = rng.integers(0, 256, size=(4, 6, 3), dtype=np.uint8)
        buf = io.BytesIO()
        Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
        out = decode_image(buf.getvalue(), {})
        assert np.array_equal(out, pixels.astype(np.float32))

    def test_garbage_bytes_rejected(self):
        with pytest.raises(DecodeError):
            decode_image(b"\x00\x01\x02\x03 definitely not an image", {})

    def test_non_bytes_rejected(self):
        with pytest.raises(DecodeError):
            decode_image("string", {})


def reference_bilinear(image, out_h, out_w):
    """Per-pixel half-pixel-center bilinear: the independent oracle."""
    in_h, in_w, channels = image.shape
    out = np.zeros((out_h, out_w, channels), dtype=np.float64)
    for oy in range(out_h):
        src_y = min(max((oy + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1)
        y0, wy = int(np.floor(src_y)), src_y - np.floor(src_y)
        y1 = min(y0 + 1, in_h - 1)
        for ox in range(out_w):
            src_x = min(max((ox + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1)
            x0, wx = int(np.floor(src_x)), src_x - np.floor(src_x)
            x1 = min(x0 + 1, in_w - 1)
            out[oy, ox] = (
                image[y0, x0] * (1 - wy) * (1 - wx)
                + image[y0, x1] * (1 - wy) * wx
                + image[y1, x0] * wy * (1 - wx)
                + image[y1, x1] * wy * wx
            )
    return out


class TestResize:
    def test_average_of_four(self):
        image = np.array([[[0.0], [0.0]], [[100.0], [100.0]]], dtype=np.float32)
        out = resize_image(image, {"dimensions": [1, 1, 1]}, data_layout="NHWC")
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 50.0

    def test_identity_resize_is_bitwise(self):
        rng = np.random.default_rng(5)
        image = rng.random((6, 4, 3), dtype=np.float32) * 255
        out = resize_image(image, {"dimensions": [3, 6, 4]}, data_layout="NHWC")
        assert np.array_equal(out, image)

    def test_downscale_ramp_matches_half_pixel_centers(self):
        # A linear ramp must resample to the source coordinate values.
        ramp = np.arange(4, dtype=np.float32).reshape(4, 1, 1)
        out = resize_image(ramp, {"dimensions": [1, 2, 1]}, data_layout="NHWC")
        assert out[:, 0, 0].tolist() == [0.5, 2.5]

    def test_matches_reference_on_random_images(self):
        rng = np.random.default_rng(99)
        for _ in range(25):
            in_h, in_w = rng.integers(1, 12, size=2)
            out_h, out_w = rng.integers(1, 12, size=2)
            image = rng.random((in_h, in_w, 3)).astype(np.float32) * 255
            got = resize_image(image, {"dimensions": [3, int(out_h), int(out_w)]},
                               data_layout="NHWC")
            want = reference_bilinear(image.astype(np.float64), int(out_h), int(out_w))
            np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-3)

    def test_nchw_layout_round_trips(self):
        rng = np.random.default_rng(8)
        image = rng.random((3, 5, 7)).astype(np.float32)
        out = resize_image(image, {"dimensions": [3, 10, 14]}, data_layout="NCHW")
        assert out.shape == (3, 10, 14)
        # same numbers as resizing the HWC transpose
        alt = resize_image(np.transpose(image, (1, 2, 0)),
                           {"dimensions": [3, 10, 14]}, data_layout="NHWC")
        assert np.array_equal(out, np.transpose(alt, (2, 0, 1)))

    def test_nearest_picks_closest_pixel(self):
        image = np.array([[[1.0], [2.0], [3.0], [4.0]]], dtype=np.float32)  # 1x4
        out = resize_image(image, {"dimensions": [1, 1, 2], "method": "nearest"},
                           data_layout="NHWC")
        # centers at src coords 0.5 and 2.5 -> floor(+0.5) -> pixels 1 and 3
        assert out[0, :, 0].tolist() == [2.0, 4.0]

    def test_keep_aspect_ratio_pads_evenly(self):
        # 2x4 input into a 4x4 target: scale 1.0, pad one zero row above/below.
        image = np.full((2, 4, 1), 9.0, dtype=np.float32)
        out = resize_image(
            image, {"dimensions": [1, 4, 4], "keep_aspect_ratio": True},
            data_layout="NHWC")
        assert out.shape == (4, 4, 1)
        assert np.all(out[0] == 0) and np.all(out[3] == 0)
        assert np.all(out[1:3] == 9.0)

    def test_keep_aspect_ratio_scales_to_fit(self):
        # 4x8 into 4x4: scale = min(1.0, 0.5) = 0.5 -> 2x4 content, padded rows.
        image = np.full((4, 8, 1), 7.0, dtype=np.float32)
        out = resize_image(
            image, {"dimensions": [1, 4, 4], "keep_aspect_ratio": True},
            data_layout="NHWC")
        assert out.shape == (4, 4, 1)
        assert np.all(out[1:3] == 7.0)
        assert np.all(out[0] == 0) and np.all(out[3] == 0)

    def test_channel_mismatch_rejected(self):
        image = np.zeros((2, 2, 3), dtype=np.float32)
        with pytest.raises(ValidationError):
            resize_image(image, {"dimensions": [1, 2, 2]}, data_layout="NHWC")


class TestNormalize:
    def test_mean_subtraction(self):
        image = np.full((1, 1, 1), 123.68, dtype=np.float32)
        out = normalize_image(image, {"mean": [123.68]}, data_layout="NHWC")
        assert out[0, 0, 0] == 0.0

    def test_rescale_divides(self):
        image = np.full((1, 1, 1), 223.68, dtype=np.float32)
        out = normalize_image(image, {"mean": [123.68], "rescale": 2.0},
                              data_layout="NHWC")
        assert out[0, 0, 0] == pytest.approx(50.0)

    def test_per_channel_means(self):
        image = np.ones((1, 1, 3), dtype=np.float32) * np.float32(100.0)
        out = normalize_image(image, {"mean": [10.0, 20.0, 30.0]},
                              data_layout="NHWC")
        assert out[0, 0].tolist() == [90.0, 80.0, 70.0]

    def test_nchw_channel_axis(self):
        image = np.zeros((3, 2, 2), dtype=np.float32)
        out = normalize_image(image, {"mean": [1.0, 2.0, 3.0]}, data_layout="NCHW")
        assert out[:, 0, 0].tolist() == [-1.0, -2.0, -3.0]

    def test_mean_length_mismatch(self):
        image = np.zeros((2, 2, 3), dtype=np.float32)
        with pytest.raises(ValidationError):
            normalize_image(image, {"mean": [0.0]}, data_layout="NHWC")


class TestArgsort:
    def test_ranks_descending(self):
        out = argsort_scores(np.array([0.1, 0.7, 0.2]), ["a", "b", "c"])
        assert out == [("b", pytest.approx(0.7)), ("c", pytest.approx(0.2)),
                       ("a", pytest.approx(0.1))]

    def test_ties_keep_index_order(self):
        out = argsort_scores(np.array([0.5, 0.5, 0.5]), ["a", "b", "c"])
        assert [label for label, _ in out] == ["a", "b", "c"]

    def test_label_count_mismatch(self):
        with pytest.raises(ValidationError):
            argsort_scores(np.array([0.1, 0.2]), ["only"])

    def test_matches_sorted_oracle(self):
        rng = np.random.default_rng(21)
        scores = rng.random(50)
        labels = [f"label{i}" for i in range(50)]
        got = argsort_scores(scores, labels)
        want = sorted(zip(labels, scores.tolist()), key=lambda p: -p[1])
        assert [g[0] for g in got] == [w[0] for w in want]

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False,
                              width=32), min_size=1, max_size=30))
    def test_scores_always_nonincreasing(self, values):
        labels = [str(i) for i in range(len(values))]
        ranked = argsort_scores(np.array(values, dtype=np.float32), labels)
        scores = [s for _, s in ranked]
        assert all(a >= b for a, b in zip(scores, scores[1:]))
        assert sorted(label for label, _ in ranked) == sorted(labels)


IMAGE_STEPS = (
    ProcessingStep("decode", {"data_layout": "NHWC", "color_mode": "RGB"}),
    ProcessingStep("resize", {"dimensions": [3, 2, 2]}),
    ProcessingStep("normalize", {"mean": [0.0, 0.0, 0.0], "rescale": 255.0}),
)


class TestStepCompilation:
    def test_image_chain_runs_end_to_end(self):
        spec = TensorIO(modality="image", element_type="float32", steps=IMAGE_STEPS)
        steps = compile_input_steps(spec)
        assert [name for name, _ in steps] == ["decode", "resize", "normalize"]

        pixels = np.full((4, 4, 3), 255, dtype=np.uint8)
        value = make_ppm(pixels)
        for _, fn in steps:
            value = fn(value)
        assert value.shape == (2, 2, 3)
        np.testing.assert_allclose(value, 1.0)

    def test_layout_flows_from_decode(self):
        spec = TensorIO(modality="image", element_type="float32", steps=(
            ProcessingStep("decode", {"data_layout": "NCHW", "color_mode": "RGB"}),
            ProcessingStep("resize", {"dimensions": [3, 2, 2]}),
        ))
        steps = compile_input_steps(spec)
        value = make_ppm(np.zeros((4, 6, 3), dtype=np.uint8))
        for _, fn in steps:
            value = fn(value)
        assert value.shape == (3, 2, 2)  # stays channel-first throughout

    def test_tensor_modality_rejects_steps(self):
        spec = TensorIO(modality="tensor", element_type="float32",
                        steps=(ProcessingStep("resize", {"dimensions": [3, 2, 2]}),))
        with pytest.raises(UnsupportedFeature):
            compile_input_steps(spec)

    def test_tensor_without_steps_compiles_empty(self):
        spec = TensorIO(modality="tensor", element_type="float32")
        assert compile_input_steps(spec) == []

    def test_image_must_start_with_decode(self):
        spec = TensorIO(modality="image", element_type="float32",
                        steps=(ProcessingStep("resize", {"dimensions": [3, 2, 2]}),))
        with pytest.raises(ValidationError):
            compile_input_steps(spec)

    def test_image_without_any_steps_rejected(self):
        spec = TensorIO(modality="image", element_type="float32")
        with pytest.raises(ValidationError):
            compile_input_steps(spec)

    def test_output_argsort_binds_labels(self):
        spec = TensorIO(modality="tensor", element_type="float32", steps=(
            ProcessingStep("argsort", {"labels_url": "file:///labels.txt"}),))
        steps = compile_output_steps(spec, {"file:///labels.txt": ["x", "y"]})
        [(name, fn)] = steps
        assert name == "argsort"
        assert fn(np.array([0.2, 0.9]))[0][0] == "y"

    def test_output_argsort_unresolved_labels(self):
        spec = TensorIO(modality="tensor", element_type="float32", steps=(
            ProcessingStep("argsort", {"labels_url": "file:///labels.txt"}),))
        with pytest.raises(ValidationError):
            compile_output_steps(spec, {})
