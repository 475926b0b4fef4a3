import math

import numpy as np
import pytest
from PIL import Image

from liverseg.errors import DegenerateEdgeError
from liverseg.supervision import (
    mask_edge, distance_transform, edge_distance_map, edge_targets, export_png, EdgeKind)


def square(n=7, lo=2, hi=5):
    m = np.zeros((n, n), dtype=bool)
    m[lo:hi, lo:hi] = True
    return m


def brute_edge(mask):
    p = np.pad(mask, 1, constant_values=False)
    inside = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return mask & ~inside


def brute_edm(mask):
    edge = brute_edge(mask)
    if not mask.any():
        return np.zeros(mask.shape)
    ey, ex = np.nonzero(edge)
    yy, xx = np.indices(mask.shape)
    d = np.sqrt((yy[..., None] - ey) ** 2 + (xx[..., None] - ex) ** 2).min(axis=-1) * mask
    if d.max() == 0:
        return mask.astype(float)
    return (1 - d / d.max()) * mask


def test_edge_of_square():
    e = mask_edge(square())
    assert e.sum() == 8
    assert not e[3, 3]
    assert not mask_edge(np.zeros((5, 5))).any()
    single = np.zeros((5, 5), dtype=bool)
    single[2, 2] = True
    assert np.array_equal(mask_edge(single), single)


def test_edge_touching_border():
    m = np.ones((4, 4), dtype=bool)
    e = mask_edge(m)
    assert e.sum() == 12
    assert not e[1:3, 1:3].any()


def test_distance_examples():
    edge = np.zeros((3, 3), dtype=bool)
    edge[0, 0] = True
    expected = [[0, 1, 2], [1, math.sqrt(2), math.sqrt(5)], [2, math.sqrt(5), 2 * math.sqrt(2)]]
    assert np.allclose(distance_transform(edge), expected)

    row = np.array([[1, 0, 0, 0, 1]], dtype=bool)
    assert distance_transform(row).tolist() == [[0, 1, 2, 1, 0]]
    assert not distance_transform(np.ones((3, 3))).any()


def test_distance_of_empty_edge():
    with pytest.raises(DegenerateEdgeError):
        distance_transform(np.zeros((4, 4)))


def test_edm_examples():
    assert not edge_distance_map(np.zeros((6, 6))).values.any()

    v = edge_distance_map(square()).values
    e = mask_edge(square())
    assert np.all(v[e] == 1)
    assert v[3, 3] == 0
    assert not v[~square()].any()

    single = np.zeros((5, 5), dtype=bool)
    single[1, 3] = True
    assert np.array_equal(edge_distance_map(single).values, single.astype(np.float32))


def test_edm_matches_brute_force():
    rng = np.random.default_rng(0)
    for i in range(50):
        if i % 2:
            mask = rng.uniform(size=(32, 32)) < rng.uniform(0.2, 0.9)
        else:
            yy, xx = np.indices((32, 32))
            cy, cx, r = rng.uniform(4, 28), rng.uniform(4, 28), rng.uniform(2, 14)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2
        v = edge_distance_map(mask).values
        assert np.allclose(v, brute_edm(mask), atol=1e-6)
        assert v.min() >= 0 and v.max() <= 1
        assert not v[~mask].any()


def test_edge_targets():
    liver = square(16, 2, 12)
    tumor = square(16, 5, 8)
    dist = edge_targets(liver, tumor, EdgeKind.dist)
    edge = edge_targets(liver, tumor, 'edge')
    assert dist.shape == edge.shape == (2, 16, 16)
    assert set(np.unique(edge)) == {0.0, 1.0}
    assert np.array_equal(edge[1] == 1, mask_edge(tumor))
    assert np.array_equal(dist[0] == 1, mask_edge(liver))


def test_export_png(tmp_path):
    edm = edge_distance_map(square(16, 2, 12))
    path = export_png(edm, tmp_path / 'edm.png')
    back = np.asarray(Image.open(path))
    assert back.shape == (16, 16)
    assert np.array_equal(back.astype(np.int64), np.round(65535 * edm.values).astype(np.int64))
