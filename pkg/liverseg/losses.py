'''Segmentation objectives: BCE, IoU loss and the two stage objectives.

All losses take probabilities (post-sigmoid), not logits.
'''
from __future__ import annotations
import dataclasses

import torch

from .errors import ValidationError

EPS = 1e-7
EDGE_WEIGHT = 4.0


@dataclasses.dataclass
class LossValue:
    total: torch.Tensor
    components: dict[str, torch.Tensor]
    weights: dict[str, float]

    def as_floats(self):
        return {'total': float(self.total), **{k: float(v) for k, v in self.components.items()}}


def _check(g, p):
    if g.shape != p.shape:
        raise ValidationError(f'shape mismatch: target {tuple(g.shape)} vs prediction {tuple(p.shape)}')


def bce_loss(g, p, reduction='mean'):
    '''Binary cross entropy with soft targets; ``p`` is clamped to [eps, 1-eps].'''
    _check(g, p)
    p = p.clamp(EPS, 1 - EPS)
    loss = -(g * torch.log(p) + (1 - g) * torch.log(1 - p))
    if reduction == 'mean':
        return loss.mean()
    if reduction == 'sum':
        return loss.sum()
    raise ValidationError(f'unknown reduction {reduction!r}')


def iou_loss(g, p, dim=None):
    '''``1 - sum(g*p) / sum(g + p - g*p)``; 0 when both maps are empty.

    With ``dim`` the ratio is taken per map over those dims and averaged.
    '''
    _check(g, p)
    inter = g * p
    if dim is None:
        inter, union = inter.sum(), (g + p - inter).sum()
    else:
        inter, union = inter.sum(dim=dim), (g + p - inter).sum(dim=dim)
    empty = union < EPS
    loss = torch.where(empty, torch.zeros_like(union), 1 - inter / torch.where(empty, torch.ones_like(union), union))
    return loss.mean()


def _total(components, weights):
    total = sum(weights[k] * v for k, v in components.items())
    return LossValue(total, components, weights)


def _per_channel(fn, g, p):
    '''Mean over channels of ``fn`` applied per channel of (N, C, H, W) maps.'''
    return torch.stack([fn(g[:, c], p[:, c]) for c in range(g.shape[1])]).mean()


def _iou_maps(g, p):
    # per image, per channel
    return iou_loss(g, p, dim=(-2, -1))


def stage1_loss(g, s) -> LossValue:
    '''IoU + BCE on the liver map.'''
    components = {'iou': iou_loss(g, s, dim=(-2, -1)) if g.ndim >= 2 else iou_loss(g, s), 'bce': bce_loss(g, s)}
    return _total(components, {'iou': 1.0, 'bce': 1.0})


def stage2_loss(g_m, g_e, out, edge_weight=EDGE_WEIGHT) -> LossValue:
    '''IoU + BCE on ``s1`` and ``s2`` plus weighted BCE of the edge head.

    Inputs are (N, C, H, W) with channels (liver, tumor). Each term is
    averaged over channels. Heads that are ``None`` contribute nothing.
    '''
    components, weights = {}, {}
    for name in ('s1', 's2'):
        s = getattr(out, name)
        if s is None:
            continue
        _check(g_m, s)
        components[f'iou_{name}'] = _per_channel(_iou_maps, g_m, s)
        components[f'bce_{name}'] = _per_channel(bce_loss, g_m, s)
        weights[f'iou_{name}'] = weights[f'bce_{name}'] = 1.0
    if out.e is not None:
        _check(g_e, out.e)
        components['bce_edge'] = _per_channel(bce_loss, g_e, out.e)
        weights['bce_edge'] = edge_weight
    return _total(components, weights)
