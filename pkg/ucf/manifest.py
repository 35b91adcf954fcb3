"""
Run manifest: which command produced the output directory, under which
config digest and seed, and the sha256 of every artifact in it.
"""

import json
import os
from collections.abc import Iterable
from enum import Enum
from os.path import join as pjoin
from pathlib import Path

from loguru import logger

from ucf.errors import DataIntegrityError
from ucf.utils import sha256_file, write_json

MANIFEST_NAME = "manifest.json"
# not hashed: rewritten by every command
UNTRACKED = frozenset({MANIFEST_NAME, "info.log"})


class RunStatus(str, Enum):
    OK = "ok"
    TAMPERED = "tampered"
    MISSING = "missing"
    NO_MANIFEST = "no_manifest"


def read_manifest(out_dir: str | Path) -> dict | None:
    path = pjoin(out_dir, MANIFEST_NAME)
    if not os.path.isfile(path):
        return None
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DataIntegrityError(f"{path} is not valid JSON: {e}") from e


def write_manifest(
    out_dir: str | Path,
    command: str,
    config_digest: str,
    seed: int,
    artifacts: Iterable[str],
) -> dict:
    """
    Record the hashes of `artifacts` (names relative to out_dir). Hashes of
    earlier commands run under the same config digest are kept.
    """
    previous = read_manifest(out_dir)
    hashes: dict[str, str] = {}
    if previous is not None and previous.get("config_digest") == config_digest:
        hashes.update(previous.get("artifacts", {}))
    for name in artifacts:
        if name in UNTRACKED:
            continue
        hashes[name] = sha256_file(pjoin(out_dir, name))

    manifest = {
        "command": command,
        "config_digest": config_digest,
        "seed": seed,
        "artifacts": dict(sorted(hashes.items())),
    }
    write_json(pjoin(out_dir, MANIFEST_NAME), manifest)
    logger.debug("manifest: {} artifacts after '{}'", len(hashes), command)
    return manifest


def verify_manifest(out_dir: str | Path) -> dict:
    """
    Re-hash every artifact listed in the manifest.

    Returns:
        {"status": RunStatus value, "missing": [...], "tampered": [...]}
    """
    manifest = read_manifest(out_dir)
    if manifest is None:
        return {"status": RunStatus.NO_MANIFEST.value, "missing": [], "tampered": []}
    missing, tampered = [], []
    for name, expected in manifest.get("artifacts", {}).items():
        path = pjoin(out_dir, name)
        if not os.path.isfile(path):
            missing.append(name)
        elif sha256_file(path) != expected:
            tampered.append(name)
    if missing:
        status = RunStatus.MISSING
    elif tampered:
        status = RunStatus.TAMPERED
    else:
        status = RunStatus.OK
    return {"status": status.value, "missing": missing, "tampered": tampered}
