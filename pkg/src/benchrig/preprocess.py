"""Input/output processing steps.

Implements the manifest's processing vocabulary over numpy arrays:

* ``decode`` — PPM (P6) or PNG bytes to a float32 image tensor in [0, 255],
  laid out NHWC (``[H, W, C]`` per item) or NCHW (``[C, H, W]``), channels
  RGB or BGR.
* ``resize`` — bilinear (align-corners-false, half-pixel centers) or
  nearest; ``keep_aspect_ratio`` scales the image to fit inside the target
  then center-pads with zeros.
* ``normalize`` — per-channel ``(x - mean[c]) / rescale``.
* ``argsort`` — scores to a ranked ``(label, score)`` list, descending by
  score with ties broken by ascending index.

``compile_input_steps`` / ``compile_output_steps`` turn a manifest
:class:`~benchrig.manifest.TensorIO` into named callables for the pipeline,
tracking the data layout through the chain so each step knows where the
channel axis lives.
"""

from __future__ import annotations

import io as _io
from typing import Callable, Mapping, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, UnsupportedFeature, ValidationError
from .manifest import TensorIO

__all__ = [
    "decode_image",
    "resize_image",
    "normalize_image",
    "argsort_scores",
    "compile_input_steps",
    "compile_output_steps",
    "encode_ppm",
]


# ---------------------------------------------------------------------------
# Decoding


def _decode_ppm(data: bytes) -> np.ndarray:
    """Parse a binary PPM (P6, maxval <= 255) into uint8 [H, W, 3]."""

    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(data):
            ch = data[pos:pos + 1]
            if ch == b"#":  # comment runs to end of line
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError("truncated PPM header")
        return data[start:pos]

    magic = token()
    if magic != b"P6":
        raise DecodeError(f"unsupported PPM magic {magic!r} (only P6)")
    try:
        width = int(token())
        height = int(token())
        maxval = int(token())
    except ValueError as exc:
        raise DecodeError(f"malformed PPM header: {exc}") from exc
    if width <= 0 or height <= 0:
        raise DecodeError(f"PPM dimensions must be positive, got {width}x{height}")
    if not 0 < maxval <= 255:
        raise DecodeError(f"unsupported PPM maxval {maxval} (only 8-bit)")
    pos += 1  # single whitespace byte after maxval
    expected = width * height * 3
    pixels = data[pos:pos + expected]
    if len(pixels) < expected:
        raise DecodeError(
            f"truncated PPM: {width}x{height} needs {expected} bytes, "
            f"{len(pixels)} present")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3)


def _decode_png(data: bytes) -> np.ndarray:
    try:
        with Image.open(_io.BytesIO(data)) as image:
            rgb = image.convert("RGB")
            return np.asarray(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"could not decode PNG: {exc}") from exc


def decode_image(data: bytes, params: Mapping) -> np.ndarray:
    """Decode PPM/PNG bytes to float32 in [0, 255] per data_layout/color_mode."""
    if not isinstance(data, (bytes, bytearray)):
        raise DecodeError(f"image payload must be bytes, got {type(data).__name__}")
    data = bytes(data)
    if data[:2] == b"P6":
        array = _decode_ppm(data)
    elif data[:8] == b"\x89PNG\r\n\x1a\n":
        array = _decode_png(data)
    else:
        raise DecodeError("unrecognized image format (supported: PPM P6, PNG)")
    array = array.astype(np.float32)
    if params.get("color_mode", "RGB") == "BGR":
        array = array[:, :, ::-1]
    if params.get("data_layout", "NHWC") == "NCHW":
        array = np.transpose(array, (2, 0, 1))
    return np.ascontiguousarray(array)


def encode_ppm(array: np.ndarray) -> bytes:
    """Serialize an [H, W, 3] uint8 array as binary PPM (P6) — the inverse
    of the PPM path in :func:`decode_image`, used to build datasets."""
    pixels = np.asarray(array, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValidationError("image", f"expected [H, W, 3], got {pixels.shape}")
    height, width = pixels.shape[:2]
    return b"P6\n%d %d\n255\n" % (width, height) + pixels.tobytes()


# ---------------------------------------------------------------------------
# Layout bookkeeping


def _infer_layout(shape: tuple[int, ...]) -> str:
    """Best-effort layout inference for standalone calls: HWC if the last
    axis looks like channels, CHW if the first does."""
    if len(shape) == 2:
        return "HW"
    if len(shape) == 3:
        if shape[2] in (1, 3):
            return "NHWC"
        if shape[0] in (1, 3):
            return "NCHW"
    raise ValidationError(
        "image", f"cannot infer data layout from shape {list(shape)}")


def _to_hwc(array: np.ndarray, layout: str) -> np.ndarray:
    if layout == "HW":
        return array[:, :, np.newaxis]
    if layout == "NCHW":
        return np.transpose(array, (1, 2, 0))
    return array


def _from_hwc(array: np.ndarray, layout: str) -> np.ndarray:
    if layout == "HW":
        return array[:, :, 0]
    if layout == "NCHW":
        return np.transpose(array, (2, 0, 1))
    return array


# ---------------------------------------------------------------------------
# Resize


def _half_pixel_coords(out_size: int, in_size: int) -> np.ndarray:
    scale = in_size / out_size
    return (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5


def _resize_bilinear_hwc(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample, align-corners-false with half-pixel centers."""
    in_h, in_w = image.shape[:2]
    ys = np.clip(_half_pixel_coords(out_h, in_h), 0.0, in_h - 1)
    xs = np.clip(_half_pixel_coords(out_w, in_w), 0.0, in_w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0).astype(np.float32)[:, None, None]
    wx = (xs - x0).astype(np.float32)[None, :, None]
    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bottom = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def _resize_nearest_hwc(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = image.shape[:2]
    ys = np.clip(np.floor(_half_pixel_coords(out_h, in_h) + 0.5), 0, in_h - 1)
    xs = np.clip(np.floor(_half_pixel_coords(out_w, in_w) + 0.5), 0, in_w - 1)
    return image[ys.astype(np.int64)][:, xs.astype(np.int64)]


def resize_image(array: np.ndarray, params: Mapping,
                 data_layout: str | None = None) -> np.ndarray:
    """Resize to the manifest's [channels, height, width] dimensions."""
    array = np.asarray(array, dtype=np.float32)
    layout = data_layout or _infer_layout(array.shape)
    image = _to_hwc(array, layout)
    channels, target_h, target_w = params["dimensions"]
    if image.shape[2] != channels:
        raise ValidationError(
            "resize.dimensions",
            f"tensor has {image.shape[2]} channels, dimensions declare {channels}")
    method = params.get("method", "bilinear")
    resample = _resize_bilinear_hwc if method == "bilinear" else _resize_nearest_hwc
    if params.get("keep_aspect_ratio", False):
        in_h, in_w = image.shape[:2]
        scale = min(target_h / in_h, target_w / in_w)
        new_h = min(target_h, max(1, int(round(in_h * scale))))
        new_w = min(target_w, max(1, int(round(in_w * scale))))
        if (new_h, new_w) != (in_h, in_w):
            image = resample(image, new_h, new_w)
        padded = np.zeros((target_h, target_w, image.shape[2]), dtype=np.float32)
        off_h = (target_h - new_h) // 2
        off_w = (target_w - new_w) // 2
        padded[off_h:off_h + new_h, off_w:off_w + new_w] = image
        image = padded
    elif (target_h, target_w) != image.shape[:2]:
        image = resample(image, target_h, target_w)
    return np.ascontiguousarray(_from_hwc(image.astype(np.float32), layout))


# ---------------------------------------------------------------------------
# Normalize


def normalize_image(array: np.ndarray, params: Mapping,
                    data_layout: str | None = None) -> np.ndarray:
    """Per-channel (x - mean[c]) / rescale."""
    array = np.asarray(array, dtype=np.float32)
    layout = data_layout or _infer_layout(array.shape)
    image = _to_hwc(array, layout)
    mean = np.asarray(params["mean"], dtype=np.float32)
    if mean.shape[0] != image.shape[2]:
        raise ValidationError(
            "normalize.mean",
            f"mean has {mean.shape[0]} entries, tensor has {image.shape[2]} channels")
    rescale = np.float32(params.get("rescale", 1.0))
    image = (image - mean) / rescale
    return np.ascontiguousarray(_from_hwc(image.astype(np.float32), layout))


# ---------------------------------------------------------------------------
# Postprocess


def argsort_scores(scores: np.ndarray, labels: Sequence[str]) -> list[tuple[str, float]]:
    """Rank scores descending; equal scores keep ascending index order."""
    flat = np.asarray(scores).reshape(-1)
    if len(labels) != flat.shape[0]:
        raise ValidationError(
            "argsort.labels",
            f"{len(labels)} labels for {flat.shape[0]} scores")
    order = np.argsort(-flat, kind="stable")
    return [(labels[int(i)], float(flat[int(i)])) for i in order]


# ---------------------------------------------------------------------------
# Step compilation


def compile_input_steps(spec: TensorIO) -> list[tuple[str, Callable]]:
    """Compile a manifest input into named per-item callables.

    The first step of an image input must be ``decode`` (bytes in); later
    steps see arrays. Steps on non-image inputs are not supported — tensor
    inputs arrive preprocessed.
    """
    compiled: list[tuple[str, Callable]] = []
    layout = "NHWC"
    for index, step in enumerate(spec.steps):
        if spec.modality != "image":
            raise UnsupportedFeature(
                f"processing steps on modality {spec.modality!r} are not "
                f"supported (steps require image inputs)")
        if step.op == "decode":
            if index != 0:
                raise ValidationError(
                    "steps", "decode must be the first input step")
            layout = step.params["data_layout"]
            compiled.append(("decode", _bind_decode(step.params)))
        elif step.op == "resize":
            compiled.append(("resize", _bind_resize(step.params, layout)))
        elif step.op == "normalize":
            compiled.append(("normalize", _bind_normalize(step.params, layout)))
        else:  # pragma: no cover - manifest validation prevents this
            raise UnsupportedFeature(f"input step {step.op!r}")
    if spec.modality == "image" and (not spec.steps or spec.steps[0].op != "decode"):
        raise ValidationError("steps", "image inputs must start with a decode step")
    return compiled


def _bind_decode(params: Mapping) -> Callable:
    return lambda payload: decode_image(payload, params)


def _bind_resize(params: Mapping, layout: str) -> Callable:
    return lambda array: resize_image(array, params, data_layout=layout)


def _bind_normalize(params: Mapping, layout: str) -> Callable:
    return lambda array: normalize_image(array, params, data_layout=layout)


def compile_output_steps(spec: TensorIO,
                         labels_by_url: Mapping[str, Sequence[str]]) -> list[tuple[str, Callable]]:
    """Compile manifest output steps; argsort closes over its label list."""
    compiled: list[tuple[str, Callable]] = []
    for step in spec.steps:
        if step.op == "argsort":
            labels = labels_by_url.get(step.params["labels_url"])
            if labels is None:
                raise ValidationError(
                    "argsort.labels_url",
                    f"labels not resolved for {step.params['labels_url']!r}")
            compiled.append(("argsort", _bind_argsort(list(labels))))
        else:  # pragma: no cover - manifest validation prevents this
            raise UnsupportedFeature(f"output step {step.op!r}")
    return compiled


def _bind_argsort(labels: list[str]) -> Callable:
    return lambda scores: argsort_scores(scores, labels)
