import numpy as np
import pytest
import torch
import torch.nn as nn
from PIL import Image

from liverseg.errors import InferenceError, ValidationError
from liverseg.ingest import window_and_normalize
from liverseg.metrics import dice
from liverseg.nets import StageTwoOutput, EncoderConfig, E2Net, R2UNet
from liverseg.phantom import PhantomSpec, generate_phantom
from liverseg.pipeline import segment_volume, stage1_probability, render_overlay

# windowed phantom intensities: background -0.76, liver -0.06, tumor 0.18
LIVER_LEVEL = -0.4
TUMOR_LEVEL = 0.06


class ThresholdLogits(nn.Module):
    '''Stage-1 stand-in: logits of ``x > level``.'''
    def __init__(self, level, gain=40.0):
        super().__init__()
        self.level = level
        self.gain = gain

    def forward(self, x):
        return self.gain * (x - self.level)


class ThresholdStageTwo(nn.Module):
    def forward(self, x):
        s2 = torch.sigmoid(40 * torch.cat([x - LIVER_LEVEL, x - TUMOR_LEVEL], dim=1))
        return StageTwoOutput(None, None, s2)


@pytest.fixture(scope='module')
def case():
    ct, labels = generate_phantom(PhantomSpec(noise_sigma=0.0, seed=1))
    return window_and_normalize(ct), labels


def test_threshold_models_recover_phantom(case):
    ct, labels = case
    result = segment_volume(ct, ThresholdLogits(LIVER_LEVEL), ThresholdStageTwo())
    assert result.liver.shape == result.tumor.shape == ct.shape
    assert not (result.tumor & ~result.liver).any()
    assert dice(result.liver, labels.liver) > 0.95
    assert dice(result.tumor, labels.tumor) > 0.7
    assert set(np.unique(result.to_labels().labels)) <= {0, 1, 2}
    gated = [z for z, spec in result.per_slice_cropspecs.items() if spec is None]
    assert all(not result.liver[z].any() for z in gated)
    assert len(result.per_slice_cropspecs) == ct.shape[0]


def test_background_volume_is_empty(case):
    ct, _ = case
    result = segment_volume(ct, ThresholdLogits(10.0), ThresholdStageTwo())
    assert not result.liver.any() and not result.tumor.any()
    assert all(spec is None for spec in result.per_slice_cropspecs.values())


def test_deterministic(case):
    ct, _ = case
    a = segment_volume(ct, ThresholdLogits(LIVER_LEVEL), ThresholdStageTwo(), batch_size=5)
    b = segment_volume(ct, ThresholdLogits(LIVER_LEVEL), ThresholdStageTwo(), batch_size=16)
    assert np.array_equal(a.liver, b.liver) and np.array_equal(a.tumor, b.tumor)


def test_keep_largest(case):
    ct, _ = case
    voxels = ct.voxels.copy()
    voxels[:, :6, :6] = 0.0  # a bright corner blob away from the liver
    noisy = type(ct)(voxels, ct.spacing, ct.case_id, normalized=True)
    kept = segment_volume(noisy, ThresholdLogits(LIVER_LEVEL), ThresholdStageTwo(), keep_largest=True)
    assert not kept.liver[:, :6, :6].any()


def test_non_finite_output_names_slice(case):
    ct, _ = case
    stage1 = ThresholdLogits(LIVER_LEVEL, gain=float('nan'))
    with pytest.raises(InferenceError) as e:
        segment_volume(ct, stage1, ThresholdStageTwo())
    assert e.value.slice_index == 0


def test_input_checks(case):
    ct, _ = case
    raw, _ = generate_phantom(PhantomSpec(seed=1))
    with pytest.raises(ValidationError):
        segment_volume(raw, ThresholdLogits(LIVER_LEVEL), ThresholdStageTwo())
    with pytest.raises(ValidationError):
        segment_volume(ct, ThresholdLogits(LIVER_LEVEL), ThresholdStageTwo(), stage2_size=100)
    with pytest.raises(ValidationError):
        segment_volume(ct, ThresholdLogits(LIVER_LEVEL), R2UNet(EncoderConfig(8, 2), 2))
    with pytest.raises(ValidationError, match='2 channels'):
        segment_volume(ct, ThresholdLogits(LIVER_LEVEL), E2Net(EncoderConfig(8, 2), out_channels=1), stage2_size=32)


def test_crop_ignores_stray_components(case):
    ct, _ = case
    voxels = np.full((1, 64, 64), -1.0, dtype=np.float32)
    voxels[0, 20:44, 24:48] = -0.06
    voxels[0, 1:4, 1:4] = -0.06  # speckle far from the liver
    v = type(ct)(voxels, ct.spacing, 'speckle', normalized=True)
    result = segment_volume(v, ThresholdLogits(LIVER_LEVEL), ThresholdStageTwo(), stage2_size=32, pad=2)
    spec = result.per_slice_cropspecs[0]
    assert spec is not None
    assert spec.bbox == (18, 22, 46, 50)
    assert not result.liver[0, :10, :10].any()


def test_stage1_probability_pads_odd_sizes():
    model = R2UNet(EncoderConfig(8, 2), 1).eval()
    prob = stage1_probability(model, np.zeros((3, 50, 70), dtype=np.float32))
    assert prob.shape == (3, 50, 70)
    e2 = E2Net(EncoderConfig(8, 2), out_channels=1).eval()
    assert stage1_probability(e2, np.zeros((2, 64, 64), dtype=np.float32)).shape == (2, 64, 64)


def test_render_overlay(tmp_path, case):
    ct, labels = case
    paths = render_overlay(ct, labels, tmp_path, stride=8)
    assert paths
    img = np.asarray(Image.open(paths[0]))
    assert img.shape == (96, 96, 3)
    assert (img == (0, 255, 0)).all(axis=-1).any()
