"""Manifest parsing, validation, and structural round-trip."""

import pytest

from benchrig.errors import ManifestSyntaxError, UnsupportedStep, ValidationError
from benchrig.manifest import (
    FrameworkManifest,
    ModelManifest,
    parse_framework_manifest,
    parse_model_manifest,
    render_framework_manifest,
    render_model_manifest,
)
from benchrig.semver import SemVer

from conftest import RESNET_CHECKSUM


# -- the full-featured model manifest -------------------------------------------

def test_parses_full_model_manifest(resnet_manifest_yaml):
    m = parse_model_manifest(resnet_manifest_yaml)
    assert m.name == "MLPerf_ResNet50_v1.5"
    assert m.version == SemVer(1, 0, 0)
    assert m.description.startswith("ResNet-50")

    assert m.framework.name == "TensorFlow"
    assert str(m.framework.constraint) == ">=1.12.0 <2.0.0"
    assert m.framework.constraint.allows(SemVer(1, 15, 0))
    assert not m.framework.constraint.allows(SemVer(2, 0, 0))

    (inp,) = m.inputs
    assert inp.modality == "image"
    assert inp.layer_name == "input_tensor"
    assert inp.element_type == "float32"
    assert [s.op for s in inp.steps] == ["decode", "resize", "normalize"]
    decode, resize, normalize = inp.steps
    assert decode.params == {"data_layout": "NHWC", "color_mode": "RGB"}
    assert resize.params == {"dimensions": [3, 224, 224], "method": "bilinear",
                             "keep_aspect_ratio": True}
    assert normalize.params == {"mean": [123.68, 116.78, 103.94], "rescale": 1.0}

    (out,) = m.outputs
    assert out.modality == "probability"
    assert out.layer_name == "prob"
    (argsort,) = out.steps
    assert argsort.op == "argsort"
    assert argsort.params["labels_url"].endswith("synset.txt")

    assert m.model_source is not None
    assert m.model_source.base_url == "https://zenodo.org/record/2535873/files/"
    assert m.model_source.graph_path == "resnet50_v1.pb"
    assert m.model_source.checksum == RESNET_CHECKSUM

    assert m.attributes == {
        "training_dataset": [{"name": "ImageNet"}, {"version": "1.0.0"}]}
    assert "def preprocess" in m.preprocess
    assert "def postprocess" in m.postprocess


def test_model_manifest_round_trip_is_structural(resnet_manifest_yaml):
    first = parse_model_manifest(resnet_manifest_yaml)
    rendered = render_model_manifest(first)
    assert parse_model_manifest(rendered) == first


def test_version_zero_fill_and_numeric_scalars():
    m = parse_model_manifest(_minimal(version="'2.0'"))
    assert m.version == SemVer(2, 0, 0)
    # YAML parses 1.5 as a float; it still reads as a version.
    m = parse_model_manifest(_minimal(version="1.5"))
    assert m.version == SemVer(1, 5, 0)


def test_framework_constraint_defaults_to_any():
    text = _minimal().replace("\n  version: '>=1.0'", "")
    m = parse_model_manifest(text)
    assert m.framework.constraint.clauses == ()
    assert m.framework.constraint.allows(SemVer(0, 0, 1))


# -- validation failures ---------------------------------------------------------

def _minimal(version: str = "1.0.0", input_steps: str = "", output_steps: str = "",
             extra: str = "") -> str:
    return f"""\
name: tiny
version: {version}
framework:
  name: synthetic
  version: '>=1.0'
inputs:
  - type: image
    element_type: float32{input_steps}
outputs:
  - type: probability
    element_type: float32{output_steps}
{extra}"""


def test_unknown_top_level_key_rejected():
    with pytest.raises(ValidationError) as err:
        parse_model_manifest(_minimal(extra="flavor: vanilla\n"))
    assert "flavor" in str(err.value)


def test_unknown_io_key_rejected():
    text = _minimal().replace("    element_type: float32\noutputs:",
                              "    element_type: float32\n    extra_key: 1\noutputs:")
    with pytest.raises(ValidationError) as err:
        parse_model_manifest(text)
    assert "extra_key" in str(err.value)


def test_unknown_step_op_is_unsupported_step():
    steps = "\n    steps:\n      - crop:\n          size: 10"
    with pytest.raises(UnsupportedStep) as err:
        parse_model_manifest(_minimal(input_steps=steps))
    assert err.value.op == "crop"
    assert "inputs[0].steps[0]" in err.value.path


def test_output_only_step_rejected_on_inputs():
    steps = "\n    steps:\n      - argsort:\n          labels_url: http://x/l.txt"
    with pytest.raises(ValidationError) as err:
        parse_model_manifest(_minimal(input_steps=steps))
    assert "output-only" in str(err.value)


def test_input_only_step_rejected_on_outputs():
    steps = "\n    steps:\n      - normalize:\n          mean: [1.0]"
    with pytest.raises(ValidationError) as err:
        parse_model_manifest(_minimal(output_steps=steps))
    assert "input-only" in str(err.value)


def test_unknown_step_param_rejected_with_indexed_path():
    steps = ("\n    steps:\n      - resize:\n          dimensions: [3, 4, 4]\n"
             "          method: bilinear\n          angle: 90")
    with pytest.raises(ValidationError) as err:
        parse_model_manifest(_minimal(input_steps=steps))
    assert "inputs[0].steps[0]" in str(err.value)
    assert "angle" in str(err.value)


@pytest.mark.parametrize("steps,needle", [
    ("\n    steps:\n      - decode:\n          data_layout: XYZW\n          color_mode: RGB",
     "data_layout"),
    ("\n    steps:\n      - decode:\n          data_layout: NHWC\n          color_mode: CMYK",
     "color_mode"),
    ("\n    steps:\n      - resize:\n          dimensions: [3, 0, 4]\n          method: bilinear",
     "dimensions"),
    ("\n    steps:\n      - resize:\n          dimensions: [3, 4]\n          method: bilinear",
     "dimensions"),
    ("\n    steps:\n      - resize:\n          dimensions: [3, 4, 4]\n          method: wavelet",
     "method"),
    ("\n    steps:\n      - normalize:\n          mean: []", "mean"),
    ("\n    steps:\n      - normalize:\n          mean: [1.0]\n          rescale: 0", "rescale"),
])
def test_bad_step_params_rejected(steps, needle):
    with pytest.raises(ValidationError) as err:
        parse_model_manifest(_minimal(input_steps=steps))
    assert needle in str(err.value)


def test_missing_name_rejected():
    with pytest.raises(ValidationError) as err:
        parse_model_manifest("version: 1.0.0\n")
    assert "name" in str(err.value)


def test_empty_inputs_rejected():
    text = _minimal().replace(
        "inputs:\n  - type: image\n    element_type: float32\n", "inputs: []\n")
    with pytest.raises(ValidationError):
        parse_model_manifest(text)


def test_bad_element_type_rejected():
    with pytest.raises(ValidationError) as err:
        parse_model_manifest(_minimal().replace("element_type: float32",
                                                "element_type: float64", 1))
    assert "element_type" in str(err.value)


@pytest.mark.parametrize("checksum", [
    "ABCDEF",        # uppercase
    "abc",           # odd length
    "xyz1",          # non-hex
    "''",            # empty
])
def test_bad_checksum_rejected(checksum):
    extra = (f"model:\n  base_url: http://example.org/\n"
             f"  graph_path: m.pb\n  checksum: {checksum}\n")
    with pytest.raises(ValidationError) as err:
        parse_model_manifest(_minimal(extra=extra))
    assert "checksum" in str(err.value)


def test_checksum_optional():
    extra = "model:\n  base_url: http://example.org/\n  graph_path: m.pb\n"
    m = parse_model_manifest(_minimal(extra=extra))
    assert m.model_source.checksum is None


# -- document-level strictness ---------------------------------------------------

def test_yaml_aliases_rejected():
    text = _minimal(extra="attributes:\n  a: &x 1\n  b: *x\n")
    with pytest.raises(ManifestSyntaxError):
        parse_model_manifest(text)


def test_yaml_tags_rejected():
    text = _minimal(extra="attributes:\n  a: !!python/none\n")
    with pytest.raises(ManifestSyntaxError):
        parse_model_manifest(text)


def test_non_utf8_bytes_rejected():
    with pytest.raises(ManifestSyntaxError):
        parse_model_manifest(b"\xff\xfe\x00bad")


def test_unparseable_yaml_rejected():
    with pytest.raises(ManifestSyntaxError):
        parse_model_manifest("{]")


def test_non_mapping_document_rejected():
    with pytest.raises(ValidationError):
        parse_model_manifest("- 1\n- 2\n")


# -- framework manifests ----------------------------------------------------------

def test_parses_framework_manifest(framework_manifest_yaml):
    fw = parse_framework_manifest(framework_manifest_yaml)
    assert fw.name == "TensorFlow"
    assert fw.version == SemVer(1, 15, 0)
    assert set(fw.containers) == {"amd64", "ppc64le"}
    assert fw.containers["amd64"]["cpu"] == "carml/tensorflow:1-15-0_amd64-cpu"
    assert fw.containers["ppc64le"]["gpu"] == "carml/tensorflow:1-15-0_ppc64le-gpu"


def test_framework_round_trip_is_structural(framework_manifest_yaml):
    first = parse_framework_manifest(framework_manifest_yaml)
    assert parse_framework_manifest(render_framework_manifest(first)) == first


def test_framework_unknown_device_rejected():
    text = ("name: TensorFlow\nversion: 1.15.0\ncontainers:\n  amd64:\n"
            "    tpu: carml/tensorflow:tpu\n")
    with pytest.raises(ValidationError) as err:
        parse_framework_manifest(text)
    assert "cpu or gpu" in str(err.value)


def test_framework_containers_optional():
    fw = parse_framework_manifest("name: ONNX\nversion: 2.1.0\n")
    assert fw.containers == {}


def test_framework_unknown_key_rejected():
    with pytest.raises(ValidationError):
        parse_framework_manifest("name: X\nversion: 1.0.0\nplugins: []\n")
