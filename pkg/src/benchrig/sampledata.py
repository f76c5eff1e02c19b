"""Deterministic demonstration data.

Three kinds of fixtures, all constructed in code so repeated calls are
byte-identical:

* Built-in demo manifests — a virtual-clock synthetic model for exact,
  reproducible timing runs, and a real linear model whose weights file
  this module writes to disk.
* A GPU profile trace of a ResNet-50 inference at batch size 256 on a
  Tesla V100: the five slowest convolution layers with their exact
  per-layer latencies and per-kernel breakdowns (the top layer launches
  seven kernels, dominated by ``volta_cgemm_32x32_tn``), padded with
  sub-millisecond layers so ranking is non-trivial.
* Classification throughput ladders for two ImageNet models whose
  maximum throughput and optimal batch size land on exact round
  numbers: Inception_v3 at 811.0 items/s (batch 64) and
  MLPerf_ResNet50_v1.5 at 930.7 items/s (batch 256).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .assets import file_url, sha256_hex
from .evaldb import EvaluationResult, Measurement
from .ids import derive_span_id, derive_trace_id
from .predictor import write_weights_file
from .protocol import (
    BenchmarkScenario,
    OpenRequest,
    PredictOptions,
    TraceLevel,
)
from .registry import AgentRecord, Device
from .semver import SemVer
from .tracer import TraceSpan

__all__ = [
    "DEMO_MODEL_YAML",
    "write_linear_demo",
    "LINEAR_DEMO_WEIGHTS",
    "resnet50_layer_trace",
    "classification_throughput_results",
]


DEMO_MODEL_YAML = """\
name: synthetic-demo
version: 1.0.0
description: Virtual-clock latency model (base 2 ms + 0.5 ms per item)
framework:
  name: synthetic
  version: ">=1.0.0"
attributes:
  base_ms: 2
  per_item_ms: 0.5
  load_ms: 40
  layers: 4
  num_classes: 4
inputs:
  - type: tensor
    element_type: float32
outputs:
  - type: tensor
    element_type: float32
"""


LINEAR_DEMO_WEIGHTS = np.array(
    [
        [0.25, -0.50, 1.00],
        [1.50, 0.75, -0.25],
        [-1.00, 2.00, 0.50],
        [0.10, 0.20, 0.30],  # bias row
    ],
    dtype=np.float32,
)


def write_linear_demo(directory) -> str:
    """Write the linear demo's weights file under ``directory`` and return
    a manifest text pointing at it (3 input features → 3 outputs)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    weights_name = "linear-demo.weights"
    path = directory / weights_name
    write_weights_file(path, LINEAR_DEMO_WEIGHTS)
    checksum = sha256_hex(path.read_bytes())
    return f"""\
name: linear-demo
version: 1.0.0
description: Affine model served from an on-disk weights file
framework:
  name: linear
  version: ">=1.0.0"
model:
  base_url: "{file_url(directory)}"
  graph_path: "{weights_name}"
  weights_path: "{weights_name}"
  checksum: "{checksum}"
inputs:
  - type: tensor
    element_type: float32
outputs:
  - type: tensor
    element_type: float32
"""


# ---------------------------------------------------------------------------
# GPU layer/kernel profile trace
#
# Durations are integers in microseconds so that ns values are exact and
# duration_ns / 1e6 reproduces the intended millisecond figures bit-for-bit.

# (layer_index, layer_name, layer_type, layer_shape, alloc_mem_mb,
#  duration_us, kernels as (name, duration_us) in launch order)
_PROFILE_LAYERS = (
    (3, "conv2d/Conv2D", "Conv2D", "<256, 64, 112, 112>", "822.1", 5080,
     (("volta_scudnn_128x64_relu_interior_nn_v1", 4410),
      ("ShuffleInTensor3Simple", 310))),
    (41, "max_pooling2d/MaxPool", "MaxPool", "<256, 64, 56, 56>", "98.0", 880,
     (("maxwell_pooling_fw_4d", 710),)),
    (78, "activation_17/Relu", "Relu", "<256, 256, 28, 28>", "51.4", 420,
     (("relu_kernel", 350),)),
    (113, "conv2d_26/Conv2D", "Conv2D", "<256, 256, 14, 14>", "51.4", 4670,
     (("volta_scudnn_128x64_relu_interior_nn_v1", 4020),
      ("ShuffleInTensor3Simple", 240))),
    (150, "activation_33/Relu", "Relu", "<256, 256, 14, 14>", "25.7", 380,
     (("relu_kernel", 300),)),
    (178, "add_15/Add", "Add", "<256, 512, 7, 7>", "25.7", 240,
     (("elementwise_add_kernel", 190),)),
    (195, "conv2d_45/Conv2D", "Conv2D", "<256, 512, 7, 7>", "25.7", 5670,
     (("volta_scudnn_128x128_relu_interior_nn_v1", 4930),
      ("ShuffleInTensor3Simple", 280))),
    (203, "activation_45/Relu", "Relu", "<256, 512, 7, 7>", "12.8", 310,
     (("relu_kernel", 260),)),
    (208, "conv2d_48/Conv2D", "Conv2D", "<256, 512, 7, 7>", "25.7", 7590,
     (("volta_cgemm_32x32_tn", 6030),
      ("flip_filter", 430),
      ("fft2d_r2c_16x16", 420),
      ("fft2d_c2r_16x16", 250),
      ("fft2d_r2c_16x16", 250),
      ("ShuffleInTensor3Simple", 60),
      ("compute_gemm_pointers", 4))),
    (214, "add_18/Add", "Add", "<256, 512, 7, 7>", "12.8", 230,
     (("elementwise_add_kernel", 180),)),
    (221, "conv2d_51/Conv2D", "Conv2D", "<256, 512, 7, 7>", "25.7", 7570,
     (("volta_cgemm_32x32_tn", 5980),
      ("flip_filter", 410),
      ("fft2d_r2c_16x16", 400),
      ("fft2d_c2r_16x16", 240),
      ("compute_gemm_pointers", 4))),
    (229, "avg_pool/AvgPool", "AvgPool", "<256, 512, 1, 1>", "0.5", 520,
     (("maxwell_pooling_fw_4d", 440),)),
    (233, "dense/MatMul", "MatMul", "<256, 1001>", "2.0", 910,
     (("volta_sgemm_128x64_tn", 830),)),
)

_PROFILE_MODEL = "ResNet_50"
_PROFILE_VERSION = "1.0.0"


def resnet50_layer_trace() -> tuple[str, list[TraceSpan]]:
    """Spans for one ResNet-50 batch-256 inference on a V100: a MODEL root,
    FRAMEWORK layer spans laid end to end, and each layer's SYSTEM kernels
    laid end to end from the layer's start."""
    trace_id = derive_trace_id(_PROFILE_MODEL, _PROFILE_VERSION,
                               "batched-256-gpu-profile", 0)
    root_id = derive_span_id(trace_id, "evaluation")
    spans: list[TraceSpan] = []
    cursor_ns = 0
    for index, name, layer_type, shape, alloc_mb, layer_us, kernels in _PROFILE_LAYERS:
        layer_id = derive_span_id(trace_id, f"layer-{index}")
        layer_start = cursor_ns
        layer_end = layer_start + layer_us * 1000
        spans.append(TraceSpan(
            trace_id=trace_id,
            span_id=layer_id,
            parent_span_id=root_id,
            name=name,
            level=TraceLevel.FRAMEWORK,
            start_ns=layer_start,
            end_ns=layer_end,
            clock_domain="wall",
            attributes={
                "layer_index": str(index),
                "layer_type": layer_type,
                "layer_shape": shape,
                "alloc_mem_mb": alloc_mb,
            },
        ))
        kernel_cursor = layer_start
        for position, (kernel_name, kernel_us) in enumerate(kernels, start=1):
            spans.append(TraceSpan(
                trace_id=trace_id,
                span_id=derive_span_id(trace_id, f"kernel-{index}-{position}"),
                parent_span_id=layer_id,
                name=kernel_name,
                level=TraceLevel.SYSTEM,
                start_ns=kernel_cursor,
                end_ns=kernel_cursor + kernel_us * 1000,
                clock_domain="wall",
                attributes={"kernel_index": str(position)},
            ))
            kernel_cursor += kernel_us * 1000
        cursor_ns = layer_end
    spans.insert(0, TraceSpan(
        trace_id=trace_id,
        span_id=root_id,
        parent_span_id=None,
        name="evaluation",
        level=TraceLevel.MODEL,
        start_ns=0,
        end_ns=cursor_ns,
        clock_domain="wall",
        attributes={"model": _PROFILE_MODEL, "scenario": "batched"},
    ))
    return trace_id, spans


# ---------------------------------------------------------------------------
# Classification throughput ladders
#
# Items and busy times are chosen so that items · 1e9 / busy_ns lands on
# the target throughput exactly in 64-bit floats (811 items over 1 s is
# 811.0; 9307 items over 10 s is 930.7).

# model → [(batch_size, item_count, busy_ns)]
_THROUGHPUT_LADDERS = {
    "Inception_v3": (
        (1, 100, 1_000_000_000),
        (16, 400, 1_000_000_000),
        (64, 811, 1_000_000_000),
        (128, 780, 1_000_000_000),
    ),
    "MLPerf_ResNet50_v1.5": (
        (1, 158, 1_000_000_000),
        (64, 800, 1_000_000_000),
        (256, 9307, 10_000_000_000),
    ),
}

_FIXTURE_STARTED_AT_NS = 1_700_000_000_000_000_000


def _fixture_agent() -> AgentRecord:
    return AgentRecord(
        agent_id="fixture-agent-v100",
        endpoint="10.0.0.1:4000",
        architecture="x86_64",
        devices=(
            Device(kind="gpu", name="tesla-v100-sxm2-16gb",
                   memory_bytes=16 * (1 << 30), count=1),
            Device(kind="cpu", name="xeon-e5-2686-v4",
                   memory_bytes=61 * (1 << 30), count=1),
        ),
        frameworks=(("tensorflow", SemVer.parse("1.13.0")),),
        builtin_models=(),
    )


def _batch_measurements(item_count: int, batch_size: int,
                        busy_ns: int) -> list[Measurement]:
    """Back-to-back batches whose latencies sum to exactly ``busy_ns``."""
    sizes = []
    remaining = item_count
    while remaining > 0:
        sizes.append(min(batch_size, remaining))
        remaining -= sizes[-1]
    base, extra = divmod(busy_ns, len(sizes))
    rows: list[Measurement] = []
    issue_ns = 0
    sequence = 0
    for position, size in enumerate(sizes):
        latency_ns = base + (1 if position < extra else 0)
        for _ in range(size):
            rows.append(Measurement(
                sequence=sequence,
                issue_time_ns=issue_ns,
                latency_ns=latency_ns,
                batch_size=size,
            ))
            sequence += 1
        issue_ns += latency_ns
    return rows


def classification_throughput_results() -> list[EvaluationResult]:
    """One batched EvaluationResult per (model, batch size) ladder rung."""
    results = []
    offset = 0
    for model in sorted(_THROUGHPUT_LADDERS):
        for batch_size, item_count, busy_ns in _THROUGHPUT_LADDERS[model]:
            request = OpenRequest(
                benchmark_scenario=BenchmarkScenario(
                    kind="batched", batch_size=batch_size,
                    request_count=item_count),
                predict_options=PredictOptions(),
                model_name=model,
                framework_name="tensorflow",
            )
            results.append(EvaluationResult(
                evaluation_id=f"fixture-{model}-b{batch_size}",
                request=request,
                agent=_fixture_agent(),
                started_at_ns=_FIXTURE_STARTED_AT_NS + offset,
                finished_at_ns=_FIXTURE_STARTED_AT_NS + offset + busy_ns,
                per_request_measurements=tuple(
                    _batch_measurements(item_count, batch_size, busy_ns)),
                model_version=SemVer.parse("1.0.0"),
                framework_version=SemVer.parse("1.13.0"),
                trace_id=derive_trace_id(model, "1.0.0",
                                         f"batched-{batch_size}", 0),
                clock_domain="wall",
            ))
            offset += 1
    return results
