import os
import orjson

from ..util import dumps, move_with_suffix

import logging
log = logging.getLogger(__name__)
log.setLevel(logging.INFO)


class RecordWriter:
    '''Line-delimited JSON records (one object per line, flushed per write).

    An existing file at ``path`` is moved aside rather than overwritten.
    '''
    def __init__(self, path):
        self.path = str(path)
        self.fh = None
        self.count = 0

    def __enter__(self):
        return self.open()

    def __exit__(self, *a):
        self.close()

    def open(self):
        if self.fh is None:
            os.makedirs(os.path.dirname(self.path) or '.', exist_ok=True)
            move_with_suffix(self.path)
            self.fh = open(self.path, 'wb')
            log.info("Created Records: %s", self.path)
        return self

    def write(self, **record):
        self.open()
        self.fh.write(dumps(record) + b'\n')
        self.fh.flush()
        self.count += 1

    def close(self):
        if self.fh is not None:
            self.fh.close()
            self.fh = None
            log.info("Closed Records: %s (%d records)", self.path, self.count)


def read_records(path, **match):
    '''Read records back, keeping those whose fields equal ``match``.'''
    out = []
    with open(path, 'rb') as f:
        for line in f:
            if line.strip():
                r = orjson.loads(line)
                if all(r.get(k) == v for k, v in match.items()):
                    out.append(r)
    return out
