from __future__ import annotations
import os
import time
import hashlib
import dataclasses
from pathlib import Path

import numpy as np
import orjson
import torch

import logging
log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------- #
#                                     JSON                                     #
# ---------------------------------------------------------------------------- #

def _default(obj):
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if isinstance(obj, torch.Tensor):
        return obj.tolist()
    raise TypeError(f'cannot serialize {type(obj).__name__}')


def dumps(data, indent=False) -> bytes:
    '''Serialize to JSON bytes (numpy arrays and dataclasses allowed).'''
    option = orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS
    if indent:
        option |= orjson.OPT_INDENT_2
    return orjson.dumps(data, default=_default, option=option)


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(data, indent=True))
    return path


def read_json(path):
    return orjson.loads(Path(path).read_bytes())


# ---------------------------------------------------------------------------- #
#                                  Randomness                                  #
# ---------------------------------------------------------------------------- #

def seed_everything(seed: int):
    '''Seed torch and make its kernels deterministic.'''
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    '''An independent RNG stream derived from a base seed and integer keys.

    Streams depend only on ``(seed, *keys)``, never on call order, so
    results do not change with the number of workers.
    '''
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


# ---------------------------------------------------------------------------- #
#                                     Files                                    #
# ---------------------------------------------------------------------------- #

def strip_nifti_ext(name: str) -> str:
    for ext in ('.nii.gz', '.nii'):
        if name.endswith(ext):
            return name[:-len(ext)]
    return name


def content_hash(paths) -> str:
    '''sha256 over the bytes of the given files (directories walked in order).'''
    h = hashlib.sha256()
    files = []
    for p in paths:
        if p is None:
            continue
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(f for f in p.rglob('*') if f.is_file()))
        elif p.exists():
            files.append(p)
    for f in files:
        h.update(f.name.encode())
        with open(f, 'rb') as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b''):
                h.update(chunk)
    return h.hexdigest()


def move_with_suffix(src, prefix=None, suffix=None, has_ext=None):
    '''Move an existing file/dir out of the way as ``<name>_<i><ext>``.'''
    if os.path.exists(src):
        has_ext = os.path.isfile(src) if has_ext is None else has_ext
        if has_ext:
            base, ext = os.path.splitext(src)
        else:
            base, ext = src, ''
        base = f"{prefix or ''}{base}{suffix or ''}"

        i = 1
        dest = f"{base}_{i}{ext}"
        while os.path.exists(dest):
            i += 1
            dest = f"{base}_{i}{ext}"
        log.info("MOVING %s to %s", src, dest)
        os.rename(src, dest)


# ---------------------------------------------------------------------------- #
#                                 Run manifests                                #
# ---------------------------------------------------------------------------- #

@dataclasses.dataclass
class RunManifest:
    '''Provenance record written once by every artifact-producing command.'''
    command: str
    config: dict
    seed: int | None
    input_hash: str
    outputs: list[str]
    duration_s: float = 0.0
    argv: list[str] = dataclasses.field(default_factory=list)

    def write(self, path):
        return write_json(path, self)


class RunTimer:
    '''Context manager that measures wall-clock time of a command.'''
    def __enter__(self):
        self.t0 = time.perf_counter()
        self.duration = 0.0
        return self

    def __exit__(self, *a):
        self.duration = time.perf_counter() - self.t0
