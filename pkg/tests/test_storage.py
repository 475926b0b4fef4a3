import zipfile

import numpy as np
import orjson
import pytest
import torch

from liverseg.errors import ValidationError
from liverseg.nets import EncoderConfig, ModelConfig, build_model
from liverseg.storage import save_checkpoint, load_checkpoint, read_header, RecordWriter, read_records
from liverseg.util import rng_for, content_hash, dumps

CONFIG = ModelConfig('e2net', EncoderConfig(base_width=8, scale_s=2), out_channels=2, dcff=False)


@pytest.fixture(scope='module')
def checkpoint(tmp_path_factory):
    torch.manual_seed(0)
    model = build_model(CONFIG).eval()
    path = save_checkpoint(tmp_path_factory.mktemp('ckpt') / 'model.ckpt', model, CONFIG, {'epoch': 3})
    return path, model


def test_checkpoint_roundtrip(checkpoint):
    path, model = checkpoint
    loaded, config, meta = load_checkpoint(path)
    assert config == CONFIG
    assert meta == {'epoch': 3}
    assert not loaded.training
    x = torch.rand(1, 1, 64, 64)
    with torch.no_grad():
        assert torch.equal(loaded(x).s2, model(x).s2)


def test_checkpoint_layout(checkpoint):
    path, model = checkpoint
    header = read_header(path)
    assert header['dtype'] == '<f4'
    name = 'seg.decoder.head.weight'
    assert header['tensors'][name] == list(model.state_dict()[name].shape)
    with zipfile.ZipFile(path) as zf:
        raw = zf.read('tensors/' + name)
    assert raw == model.state_dict()[name].numpy().astype('<f4').tobytes()


def test_checkpoint_bad_version(tmp_path, checkpoint):
    path, _ = checkpoint
    header = read_header(path)
    header['version'] = 99
    bad = tmp_path / 'bad.ckpt'
    with zipfile.ZipFile(bad, 'w') as zf:
        zf.writestr('header.json', orjson.dumps(header))
    with pytest.raises(ValidationError):
        load_checkpoint(bad)
    (tmp_path / 'junk.ckpt').write_bytes(b'not a zip')
    with pytest.raises(ValidationError):
        read_header(tmp_path / 'junk.ckpt')


def test_checkpoint_missing():
    with pytest.raises(OSError):
        load_checkpoint('does/not/exist.ckpt')


def test_records(tmp_path):
    path = tmp_path / 'log.jsonl'
    with RecordWriter(path) as w:
        w.write(epoch=0, split='train', total=1.5)
        w.write(epoch=0, split='val', total=np.float64(1.25))
    assert read_records(path, split='val') == [{'epoch': 0, 'split': 'val', 'total': 1.25}]

    with RecordWriter(path) as w:
        w.write(epoch=0, split='train', total=0.5)
    assert len(read_records(path)) == 1
    assert len(read_records(tmp_path / 'log_1.jsonl')) == 2


def test_rng_streams():
    a = rng_for(0, 1, 2).integers(1 << 30, size=4)
    b = rng_for(0, 1, 2).integers(1 << 30, size=4)
    c = rng_for(0, 2, 1).integers(1 << 30, size=4)
    assert a.tolist() == b.tolist()
    assert a.tolist() != c.tolist()


def test_content_hash(tmp_path):
    f = tmp_path / 'a.txt'
    f.write_text('one')
    h1 = content_hash([f, None])
    assert h1 == content_hash([tmp_path])
    f.write_text('two')
    assert content_hash([f]) != h1


def test_dumps_dataclass():
    assert orjson.loads(dumps(CONFIG))['encoder']['blocks_per_stage'] == [1, 1, 1, 1]
