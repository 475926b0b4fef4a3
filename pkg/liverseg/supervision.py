'''Edge images and edge distance maps used to supervise the edge branch.

The edge distance map of an object is ``1 - d/max(d)`` inside the object,
where ``d`` is the Euclidean distance to the object's edge. It is 1 on the
edge, falls towards the object's core and is 0 outside.
'''
from __future__ import annotations
import enum
import dataclasses
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi
from PIL import Image

from .errors import DegenerateEdgeError, ValidationError

# 4-connectivity
CROSS = ndi.generate_binary_structure(rank=2, connectivity=1)


class EdgeObject(str, enum.Enum):
    liver = 'liver'
    tumor = 'tumor'


class EdgeKind(str, enum.Enum):
    edge = 'edge'  # binary edge image
    dist = 'dist'  # edge distance map


@dataclasses.dataclass(frozen=True)
class EdgeDistanceMap:
    values: np.ndarray
    object: EdgeObject = EdgeObject.liver


def _binary(mask):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError(f'expected a 2D mask, got shape {mask.shape}')
    return mask.astype(bool)


def mask_edge(mask) -> np.ndarray:
    '''Mask pixels with at least one 4-neighbor outside the mask.

    Pixels on the image border count as touching the outside.
    '''
    mask = _binary(mask)
    interior = ndi.binary_erosion(mask, structure=CROSS, border_value=0)
    return mask & ~interior


def distance_transform(edge) -> np.ndarray:
    '''Exact Euclidean distance of every pixel to the nearest edge pixel.'''
    edge = _binary(edge)
    if not edge.any():
        raise DegenerateEdgeError('distance transform of an empty edge image')
    return ndi.distance_transform_edt(~edge)


def edge_distance_map(mask, object=EdgeObject.liver) -> EdgeDistanceMap:
    mask = _binary(mask)
    if not mask.any():
        return EdgeDistanceMap(np.zeros(mask.shape, dtype=np.float32), EdgeObject(object))
    m = distance_transform(mask_edge(mask)) * mask
    peak = m.max()
    if peak > 0:
        values = (1 - m / peak) * mask
    else:
        # every mask pixel is an edge pixel
        values = mask.astype(np.float64)
    return EdgeDistanceMap(values.astype(np.float32), EdgeObject(object))


def edge_targets(liver_mask, tumor_mask, kind=EdgeKind.dist) -> np.ndarray:
    '''Two-channel (liver, tumor) edge supervision of the requested kind.'''
    kind = EdgeKind(kind)
    out = []
    for obj, mask in ((EdgeObject.liver, liver_mask), (EdgeObject.tumor, tumor_mask)):
        if kind is EdgeKind.dist:
            out.append(edge_distance_map(mask, obj).values)
        else:
            out.append(mask_edge(mask).astype(np.float32))
    return np.stack(out)


def export_png(edm: EdgeDistanceMap | np.ndarray, path):
    '''Write a map in [0, 1] as a 16-bit grayscale PNG.'''
    values = edm.values if isinstance(edm, EdgeDistanceMap) else np.asarray(edm)
    data = np.round(65535 * np.clip(values, 0, 1)).astype(np.uint16)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data).save(path)
    return path
