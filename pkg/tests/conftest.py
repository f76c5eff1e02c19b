"""Shared fixtures: realistic manifest documents used across test modules."""

import pytest

# A full-featured image-classification model manifest exercising every
# manifest feature: framework constraint, decode/resize/normalize input
# steps, argsort output step, remote model source with checksum, free-form
# attributes, and custom pre/post-processing code (parsed, never executed).
RESNET_CHECKSUM = "7b94a2da05d" + "0" * 41 + "23a46bc08886"

RESNET_MANIFEST_YAML = f"""\
name: MLPerf_ResNet50_v1.5
version: 1.0.0
description: ResNet-50 v1.5 image classifier trained on ImageNet.
framework:
  name: TensorFlow
  version: '>=1.12.0 <2.0'
inputs:
  - type: image
    layer_name: input_tensor
    element_type: float32
    steps:
      - decode:
          data_layout: NHWC
          color_mode: RGB
      - resize:
          dimensions: [3, 224, 224]
          method: bilinear
          keep_aspect_ratio: true
      - normalize:
          mean: [123.68, 116.78, 103.94]
          rescale: 1.0
outputs:
  - type: probability
    layer_name: prob
    element_type: float32
    steps:
      - argsort:
          labels_url: http://example.org/labels/imagenet/synset.txt
preprocess: |
  def preprocess(ctx, data):
      return data
postprocess: |
  def postprocess(ctx, data):
      return data
model:
  base_url: https://zenodo.org/record/2535873/files/
  graph_path: resnet50_v1.pb
  checksum: {RESNET_CHECKSUM}
attributes:
  training_dataset:
    - name: ImageNet
    - version: 1.0.0
"""

TENSORFLOW_FRAMEWORK_YAML = """\
name: TensorFlow
version: 1.15.0
description: TensorFlow container images per architecture and device.
containers:
  amd64:
    cpu: carml/tensorflow:1-15-0_amd64-cpu
    gpu: carml/tensorflow:1-15-0_amd64-gpu
  ppc64le:
    cpu: carml/tensorflow:1-15-0_ppc64le-cpu
    gpu: carml/tensorflow:1-15-0_ppc64le-gpu
"""


@pytest.fixture
def resnet_manifest_yaml() -> str:
    return RESNET_MANIFEST_YAML


@pytest.fixture
def framework_manifest_yaml() -> str:
    return TENSORFLOW_FRAMEWORK_YAML
