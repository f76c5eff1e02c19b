"""The built-in demonstration fixtures: demo manifests load end to end,
the GPU profile trace reproduces its layer/kernel figures exactly, and
the classification throughput ladders land on their target numbers."""

import numpy as np
import pytest

from benchrig.analysis import layer_report, throughput_curve
from benchrig.assets import AssetCache
from benchrig.manifest import parse_model_manifest
from benchrig.predictor import (
    LinearPredictor,
    SimulatedPredictor,
)
from benchrig.protocol import PredictOptions, TraceLevel
from benchrig.sampledata import (
    DEMO_MODEL_YAML,
    LINEAR_DEMO_WEIGHTS,
    classification_throughput_results,
    resnet50_layer_trace,
    write_linear_demo,
)
from benchrig.tensors import TensorValue
from benchrig.tracer import TraceStore


class TestDemoManifests:
    def test_synthetic_demo_parses(self):
        manifest = parse_model_manifest(DEMO_MODEL_YAML)
        assert manifest.name == "synthetic-demo"
        assert str(manifest.version) == "1.0.0"
        assert manifest.framework.name == "synthetic"
        assert manifest.attributes["base_ms"] == 2
        assert manifest.attributes["per_item_ms"] == 0.5

    def test_synthetic_demo_latency_model(self):
        manifest = parse_model_manifest(DEMO_MODEL_YAML)
        predictor = SimulatedPredictor()
        handle = predictor.model_load(manifest, None, PredictOptions())
        assert predictor.virtual_latency_ns(handle, 1) == 2_500_000
        assert predictor.virtual_latency_ns(handle, 64) == 34_000_000
        assert predictor.virtual_load_ns(handle) == 40_000_000
        predictor.model_unload(handle)

    def test_linear_demo_loads_and_predicts(self, tmp_path):
        manifest_text = write_linear_demo(tmp_path / "assets")
        manifest = parse_model_manifest(manifest_text)
        assert manifest.name == "linear-demo"
        assert manifest.model_source.checksum

        predictor = LinearPredictor()
        cache = AssetCache(tmp_path / "cache")
        handle = predictor.model_load(manifest, cache, PredictOptions())
        batch = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
        out = predictor.predict(handle, TensorValue.from_numpy(batch),
                                PredictOptions()).to_numpy()
        expected = batch @ LINEAR_DEMO_WEIGHTS[:-1] + LINEAR_DEMO_WEIGHTS[-1]
        np.testing.assert_allclose(out, expected, rtol=1e-6)
        predictor.model_unload(handle)


class TestProfileTrace:
    def assemble(self):
        trace_id, spans = resnet50_layer_trace()
        store = TraceStore()
        result = store.publish(spans)
        assert result.rejected == ()
        return store.assemble(trace_id)

    def test_top_five_layers_exact(self):
        rows = layer_report(self.assemble(), top_k=5)
        assert [r.layer_index for r in rows] == [208, 221, 195, 3, 113]
        assert [r.layer_name for r in rows] == [
            "conv2d_48/Conv2D", "conv2d_51/Conv2D", "conv2d_45/Conv2D",
            "conv2d/Conv2D", "conv2d_26/Conv2D"]
        assert [r.layer_type for r in rows] == ["Conv2D"] * 5
        assert [r.latency_ms for r in rows] == [7.59, 7.57, 5.67, 5.08, 4.67]
        assert [r.dominant_kernel for r in rows] == [
            "volta_cgemm_32x32_tn",
            "volta_cgemm_32x32_tn",
            "volta_scudnn_128x128_relu_interior_nn_v1",
            "volta_scudnn_128x64_relu_interior_nn_v1",
            "volta_scudnn_128x64_relu_interior_nn_v1",
        ]

    def test_top_layer_kernel_breakdown_exact(self):
        [top] = layer_report(self.assemble(), top_k=1)
        assert top.kernels == (
            ("volta_cgemm_32x32_tn", 6.03),
            ("flip_filter", 0.43),
            ("fft2d_r2c_16x16", 0.42),
            ("fft2d_c2r_16x16", 0.25),
            ("fft2d_r2c_16x16", 0.25),
            ("ShuffleInTensor3Simple", 0.06),
            ("compute_gemm_pointers", 0.004),
        )
        assert len(top.kernels) == 7

    def test_kernels_fit_inside_their_layers(self):
        trace_id, spans = resnet50_layer_trace()
        layers = {s.span_id: s for s in spans
                  if s.level is TraceLevel.FRAMEWORK}
        kernels = [s for s in spans if s.level is TraceLevel.SYSTEM]
        assert kernels
        for kernel in kernels:
            layer = layers[kernel.parent_span_id]
            assert layer.start_ns <= kernel.start_ns
            assert kernel.end_ns <= layer.end_ns

    def test_all_spans_inside_root(self):
        trace_id, spans = resnet50_layer_trace()
        [root] = [s for s in spans if s.parent_span_id is None]
        assert root.name == "evaluation"
        for s in spans:
            assert root.start_ns <= s.start_ns <= s.end_ns <= root.end_ns

    def test_layer_latency_sum_bounded_by_root(self):
        timeline = self.assemble()
        rows = layer_report(timeline, top_k=1000)
        root_ms = timeline.roots[0].span.duration_ns / 1e6
        assert sum(r.latency_ms for r in rows) <= root_ms + 1e-6

    def test_deterministic(self):
        first = resnet50_layer_trace()
        second = resnet50_layer_trace()
        assert first == second

    def test_span_ids_unique(self):
        _, spans = resnet50_layer_trace()
        ids = [s.span_id for s in spans]
        assert len(ids) == len(set(ids))

    def test_ranking_is_nontrivial(self):
        # more layers than the report shows, so top-k actually selects
        _, spans = resnet50_layer_trace()
        layer_count = sum(1 for s in spans if s.level is TraceLevel.FRAMEWORK)
        assert layer_count > 5


class TestThroughputLadders:
    def by_model(self):
        results = classification_throughput_results()
        grouped = {}
        for result in results:
            grouped.setdefault(result.request.model_name, []).append(result)
        return grouped

    def test_inception_v3_maximum(self):
        curve = throughput_curve(self.by_model()["Inception_v3"])
        assert curve.max_throughput == 811.0
        assert curve.optimal_batch_size == 64
        assert dict(curve.points)[1] == 100.0

    def test_resnet50_maximum(self):
        curve = throughput_curve(self.by_model()["MLPerf_ResNet50_v1.5"])
        assert curve.max_throughput == 930.7
        assert curve.optimal_batch_size == 256

    def test_measurement_internals_consistent(self):
        for result in classification_throughput_results():
            measurements = result.per_request_measurements
            scenario = result.request.benchmark_scenario
            assert len(measurements) == scenario.request_count
            assert all(m.success and not m.warmup for m in measurements)
            busy = (max(m.issue_time_ns + m.latency_ns for m in measurements)
                    - min(m.issue_time_ns for m in measurements))
            count = len(measurements)
            assert count * 1e9 / busy == dict(
                throughput_curve([result]).points)[scenario.batch_size]
            assert [m.sequence for m in measurements] == list(range(count))

    def test_deterministic(self):
        assert classification_throughput_results() == \
            classification_throughput_results()
