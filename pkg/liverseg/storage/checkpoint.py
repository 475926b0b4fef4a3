'''Checkpoint archives.

A checkpoint is an uncompressed zip file::

    header.json              {"format", "version", "dtype", "model", "tensors", "meta"}
    tensors/<module.path>    raw little-endian float32 bytes, one member per tensor

``tensors`` in the header maps each name to its shape. Integer buffers
(batch-norm counters) are stored as float32 too and cast back on load.
'''
from __future__ import annotations
import os
import zipfile
from pathlib import Path

import numpy as np
import orjson
import torch

from ..config import CHECKPOINT_FORMAT, CHECKPOINT_VERSION, CHECKPOINT_DTYPE
from ..errors import ValidationError
from ..nets import ModelConfig, build_model
from ..util import dumps

import logging
log = logging.getLogger(__name__)

HEADER = 'header.json'
TENSOR_DIR = 'tensors/'


def save_checkpoint(path, model: torch.nn.Module, config: ModelConfig, meta=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    header = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'dtype': CHECKPOINT_DTYPE,
        'model': config,
        'tensors': {k: list(v.shape) for k, v in state.items()},
        'meta': meta or {},
    }
    tmp = path.with_name(path.name + '.tmp')
    with zipfile.ZipFile(tmp, 'w', zipfile.ZIP_STORED, False) as zf:
        zf.writestr(HEADER, dumps(header, indent=True))
        for name, tensor in state.items():
            data = tensor.detach().cpu().to(torch.float32).numpy().astype(CHECKPOINT_DTYPE)
            zf.writestr(TENSOR_DIR + name, data.tobytes())
    os.replace(tmp, path)
    log.debug("Saved checkpoint: %s", path)
    return path


def read_header(path) -> dict:
    try:
        with zipfile.ZipFile(path, 'r') as zf:
            header = orjson.loads(zf.read(HEADER))
    except (zipfile.BadZipFile, KeyError) as e:
        raise ValidationError(f'{path} is not a liverseg checkpoint: {e}') from e
    if header.get('format') != CHECKPOINT_FORMAT:
        raise ValidationError(f'{path}: unexpected checkpoint format {header.get("format")!r}')
    if header.get('version') != CHECKPOINT_VERSION:
        raise ValidationError(f'{path}: unsupported checkpoint version {header.get("version")}')
    return header


def load_state(path) -> tuple[dict, dict]:
    header = read_header(path)
    dtype = np.dtype(header['dtype'])
    state = {}
    with zipfile.ZipFile(path, 'r') as zf:
        for name, shape in header['tensors'].items():
            data = np.frombuffer(zf.read(TENSOR_DIR + name), dtype=dtype)
            state[name] = torch.from_numpy(data.astype(np.float32).reshape(shape))
    return header, state


def load_checkpoint(path, device='cpu') -> tuple[torch.nn.Module, ModelConfig, dict]:
    '''Rebuild the model stored at ``path``; returns ``(model, config, meta)``.'''
    header, state = load_state(path)
    config = ModelConfig.from_dict(header['model'])
    model = build_model(config)
    expected = model.state_dict()
    if set(expected) != set(state):
        missing = sorted(set(expected) - set(state))
        extra = sorted(set(state) - set(expected))
        raise ValidationError(f'{path}: checkpoint does not match model (missing {missing[:3]}, extra {extra[:3]})')
    model.load_state_dict({k: v.to(expected[k].dtype) for k, v in state.items()})
    model.to(device).eval()
    log.info("Loaded checkpoint: %s (%s)", path, config.kind)
    return model, config, header.get('meta', {})
