from .checkpoint import save_checkpoint, load_checkpoint, read_header
from .records import RecordWriter, read_records
