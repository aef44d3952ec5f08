"""
JSON Lines reading and writing
"""
import json
import logging
from pathlib import Path

from dq_engine.exceptions import SchemaError

logger = logging.getLogger(__name__)


def iter_jsonl(path):
    """Yield (line_number, object) for every non-blank line"""
    path = Path(path)
    with path.open(encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield line_number, json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"invalid JSON in {path.name}: {e.msg}", line=line_number)


def read_jsonl(path, parse=None):
    """
    Load every record, optionally converting each with parse(obj).

    Conversion errors are re-raised as SchemaError carrying the line number.
    """
    records = []
    for line_number, obj in iter_jsonl(path):
        if parse is None:
            records.append(obj)
            continue
        try:
            records.append(parse(obj))
        except SchemaError as e:
            if e.line is not None:
                raise
            raise SchemaError(str(e), line=line_number)
        except (TypeError, ValueError, KeyError) as e:
            raise SchemaError(str(e), line=line_number)
    return records


def dumps_line(obj):
    return json.dumps(obj, ensure_ascii=False, separators=(', ', ': '))


def write_jsonl(path, objects):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open('w', encoding='utf-8', newline='\n') as f:
        for obj in objects:
            f.write(dumps_line(obj))
            f.write('\n')
            count += 1
    logger.debug(f"Wrote {count} records to {path}")
    return count


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8', newline='\n') as f:
        json.dump(obj, f, ensure_ascii=False, indent=2)
        f.write('\n')
