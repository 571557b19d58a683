import datetime
import json
import logging
import os
import tempfile
import time

import pytz

from errors import ConfigError, ParseError

logger = logging.getLogger(__name__)


# ----------------------------------------
# Logging
# ----------------------------------------
def setup_logging(log_dir='logs', experiment='none', quiet=False):
    ts = datetime.datetime.now().strftime('%Y%m%d_%H%M%S')
    os.makedirs(log_dir, exist_ok=True)
    log_file = f"{log_dir}/tubesynth-{ts}-{experiment}.log"

    # Reset root logger and handlers to avoid duplicate logs
    for handler in logging.root.handlers[:]:
        logging.root.removeHandler(handler)

    logging.basicConfig(
        filename=log_file,
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        filemode='w'
    )

    console = logging.StreamHandler()
    console.setLevel(logging.ERROR if quiet else logging.WARNING)
    console.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
    logging.getLogger('').addHandler(console)

    logger.info(f"Logging initialized. Log file: {log_file}")
    return ts, log_file


def get_timestamp():
    return datetime.datetime.fromtimestamp(time.time(), tz=pytz.utc).strftime('%Y-%m-%dT%H:%M:%SZ')


# ----------------------------------------
# Document loading
# ----------------------------------------
def load_document(text, source="<document>"):
    """Parse a JSON document, reporting line/column of syntax errors."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed document {source}: {e.msg}", locus=f"{source}:{e.lineno}:{e.colno}") from e
    if not isinstance(doc, dict):
        raise ParseError(f"document {source} must be an object", locus=f"{source}:1:1")
    return doc


def read_document(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except FileNotFoundError as e:
        raise ConfigError(f"file not found: {path}") from e
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    return load_document(text, source=str(path))


def require_field(doc, key, kind, source="<document>"):
    if key not in doc:
        raise ParseError(f"missing field '{key}'", locus=f"{source}:{key}")
    value = doc[key]
    if not isinstance(value, kind):
        raise ParseError(f"field '{key}' has type {type(value).__name__}", locus=f"{source}:{key}")
    return value


# ----------------------------------------
# Output emission
# ----------------------------------------
def atomic_write_text(path, text):
    """Write text to `path` through a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def write_csv(df, path):
    return atomic_write_text(path, df.to_csv(index=False))


def write_json(obj, path):
    return atomic_write_text(path, json.dumps(obj, indent=2, default=str) + "\n")
