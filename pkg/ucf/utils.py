import hashlib
import json
import math
import os
import re
import tempfile
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor, as_completed
from os.path import join as pjoin
from pathlib import Path

import xxhash
from pydantic import ValidationError

from ucf import globals
from ucf.errors import ConfigError

SEED_MASK = (1 << 63) - 1

_FLOAT_TOKEN = "__f17__"
_FLOAT_TOKEN_RE = re.compile(rf'"{_FLOAT_TOKEN}([^"]*)"')


def create_dir_if_not_exists(dir_path: str):
    """
    Create a directory if it does not exist.
    Args:
        dir_path (str): Path to the directory.
    """
    if not os.path.exists(dir_path):
        os.makedirs(dir_path)


def derive_seed(root: int, label: str) -> int:
    """
    Split the root seed into an independent subsystem seed.

    The split is a 64-bit xxHash of the label keyed by the root seed, masked to
    63 bits so it is a valid non-negative numpy seed.
    """
    return xxhash.xxh64_intdigest(label.encode("utf-8"), seed=root & ((1 << 64) - 1)) & SEED_MASK


def format_float(x: float) -> str:
    return f"{x:.{globals.float_digits}g}"


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """
    Write via a temp file in the same directory and rename over the target,
    so readers never observe a half-written artifact.
    """
    path = Path(path)
    create_dir_if_not_exists(str(path.parent))
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    # newline="" semantics: text is written byte-for-byte, always LF
    atomic_write_bytes(path, text.encode("utf-8"))


def _tokenize_floats(obj):
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return None
        return _FLOAT_TOKEN + format_float(obj)
    if isinstance(obj, dict):
        return {k: _tokenize_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_tokenize_floats(v) for v in obj]
    return obj


def dumps_json(obj) -> str:
    """
    JSON with insertion key order and every float written with the configured
    significant digits. Non-finite floats become null.
    """
    text = json.dumps(_tokenize_floats(obj), indent=4)
    return _FLOAT_TOKEN_RE.sub(lambda m: m.group(1), text) + "\n"


def write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, dumps_json(obj))


def out_path(name: str) -> str:
    """Path of an artifact inside the current output directory."""
    return pjoin(globals.output_dir, name)


def validate_config(model_cls, data):
    """
    Build a pydantic config model, turning validation failures into ConfigError.
    """
    try:
        return model_cls.model_validate(dict(data))
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join([model_cls.__name__, *(str(p) for p in first["loc"])])
        raise ConfigError(f"{where}: {first['msg']}") from e


def parallel_map(fn: Callable, items: Sequence, num_processes: int = 1) -> list:
    """
    Apply `fn` to every item, in a process pool when num_processes > 1.
    Results are returned in item order whatever the completion order; the
    first failure is re-raised.
    """
    if num_processes <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    results: list = [None] * len(items)
    with ProcessPoolExecutor(max_workers=min(num_processes, len(items))) as executor:
        future_to_pos = {executor.submit(fn, item): pos for pos, item in enumerate(items)}
        for future in as_completed(future_to_pos):
            results[future_to_pos[future]] = future.result()
    return results
