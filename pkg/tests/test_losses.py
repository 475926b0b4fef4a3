import math

import torch
import pytest

from liverseg.errors import ValidationError
from liverseg.losses import bce_loss, iou_loss, stage1_loss, stage2_loss, EPS
from liverseg.nets import StageTwoOutput


def test_bce_examples():
    half = torch.full((4, 4), 0.5)
    assert float(bce_loss(half, half)) == pytest.approx(math.log(2), abs=1e-6)
    g = torch.tensor([1.0])
    assert float(bce_loss(g, torch.tensor([0.25]))) == pytest.approx(math.log(4), abs=1e-6)
    assert float(bce_loss(g, torch.tensor([1.0]))) < 1e-6
    # clamped, not infinite
    assert math.isfinite(float(bce_loss(g, torch.tensor([0.0]))))


def test_iou_examples():
    g = torch.tensor([[1.0, 1.0], [0.0, 0.0]])
    assert float(iou_loss(g, g)) == 0
    assert float(iou_loss(g, 1 - g)) == 1
    assert float(iou_loss(torch.zeros(3, 3), torch.zeros(3, 3))) == 0
    p = torch.tensor([[1.0, 0.0], [0.0, 0.0]])
    assert float(iou_loss(g, p)) == pytest.approx(0.5)


def test_iou_range_and_monotonicity():
    gen = torch.Generator().manual_seed(0)
    g = (torch.rand(16, 16, generator=gen) > 0.5).float()
    for _ in range(20):
        p = torch.rand(16, 16, generator=gen)
        assert 0 <= float(iou_loss(g, p)) <= 1
    worse = g.clone()
    prev = float(iou_loss(g, worse))
    for idx in torch.nonzero(g)[:10]:
        worse[tuple(idx)] = 0
        cur = float(iou_loss(g, worse))
        assert cur >= prev
        prev = cur


def test_iou_decreases_as_prediction_approaches_target():
    gen = torch.Generator().manual_seed(3)
    g = (torch.rand(16, 16, generator=gen) > 0.5).float()
    losses = [float(iou_loss(g, alpha * g)) for alpha in torch.linspace(0, 1, 11).tolist()]
    assert losses[0] == pytest.approx(1.0)
    assert losses[-1] == pytest.approx(0.0, abs=1e-6)
    assert all(b <= a + 1e-7 for a, b in zip(losses, losses[1:]))


def test_stage1_examples():
    g = torch.ones(1, 1, 2, 2)
    loss = stage1_loss(g, torch.full_like(g, 0.5))
    assert float(loss.total) == pytest.approx(0.5 + math.log(2), abs=1e-5)
    assert float(loss.total) == pytest.approx(1.1931, abs=1e-4)

    z = torch.zeros(1, 1, 2, 2)
    assert float(stage1_loss(z, z).total) == pytest.approx(0, abs=1e-6)
    with pytest.raises(ValidationError):
        stage1_loss(g, torch.ones(1, 1, 3, 3))


def test_gradients_match_finite_differences():
    gen = torch.Generator().manual_seed(1)
    for _ in range(20):
        g = (torch.rand(2, 8, 8, generator=gen, dtype=torch.float64) > 0.5).double()
        p = (torch.rand(2, 8, 8, generator=gen, dtype=torch.float64) * 0.9 + 0.05).requires_grad_()
        assert torch.autograd.gradcheck(lambda q: bce_loss(g, q), (p,), eps=1e-5, atol=1e-6, rtol=1e-4)
        assert torch.autograd.gradcheck(lambda q: iou_loss(g, q, dim=(-2, -1)), (p,), eps=1e-5, atol=1e-6, rtol=1e-4)


def _random_maps(gen, shape=(2, 2, 8, 8)):
    g = (torch.rand(shape, generator=gen, dtype=torch.float64) > 0.5).double()
    p = torch.rand(shape, generator=gen, dtype=torch.float64) * 0.9 + 0.05
    return g, p


def test_stage2_composition():
    gen = torch.Generator().manual_seed(2)
    for _ in range(10):
        g_m, s1 = _random_maps(gen)
        g_e, e = _random_maps(gen)
        _, s2 = _random_maps(gen)

        def bce(g, p):
            return (-(g * p.log() + (1 - g) * (1 - p).log())).mean()

        def iou(g, p):
            inter = (g * p).sum(dim=(-2, -1))
            union = (g + p - g * p).sum(dim=(-2, -1))
            return (1 - inter / union).mean()

        expected = iou(g_m, s1) + bce(g_m, s1) + iou(g_m, s2) + bce(g_m, s2) + 4 * bce(g_e, e)
        loss = stage2_loss(g_m, g_e, StageTwoOutput(s1, e, s2))
        assert abs(float(loss.total) - float(expected)) < 1e-9
        assert set(loss.components) == {'iou_s1', 'bce_s1', 'iou_s2', 'bce_s2', 'bce_edge'}
        assert loss.weights['bce_edge'] == 4


def test_edge_weight_isolated():
    g_m = torch.zeros(1, 2, 8, 8)
    g_m[:, :, 2:6, 2:6] = 1
    g_e = torch.zeros(1, 2, 8, 8)
    g_e[:, :, 2, 2:6] = 1
    perfect = g_m.clamp(EPS, 1 - EPS)
    loss = stage2_loss(g_m, g_e, StageTwoOutput(perfect, torch.full_like(g_e, 0.5), perfect))
    assert float(loss.total) == pytest.approx(4 * math.log(2), abs=1e-4)


def test_stage2_without_edge_branch():
    g = torch.zeros(1, 2, 4, 4)
    g[..., 1:3, 1:3] = 1
    loss = stage2_loss(g, None, StageTwoOutput(None, None, torch.full_like(g, 0.5)))
    assert set(loss.components) == {'iou_s2', 'bce_s2'}
