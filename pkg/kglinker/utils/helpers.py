"""
Utility helper functions.
"""
import hashlib
import json
import os
from typing import Dict, Iterable, Optional

from pydantic import BaseModel

from .. import __version__
from ..errors import MissingFileError, OutputError
from ..schemas import RunManifest


def file_digest(path: str) -> str:
    """
    sha256 of a file's bytes.

    Raises:
        MissingFileError: if the file does not exist
    """
    if not os.path.isfile(path):
        raise MissingFileError(f"file not found: {path}")
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def input_digests(paths: Iterable[Optional[str]]) -> Dict[str, str]:
    return {p: file_digest(p) for p in paths if p}


def ensure_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise OutputError(f"cannot create directory {path}: {e.strerror}") from None
    return path


def write_json(path: str, payload) -> str:
    """Write a dict or pydantic model as indented JSON with sorted keys."""
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e.strerror}") from None
    return path


def write_manifest(
    out_dir: str,
    command: str,
    seed: Optional[int] = None,
    configs: Iterable[BaseModel] = (),
    inputs: Optional[Dict[str, str]] = None,
    artifacts: Optional[Dict[str, str]] = None,
    extra: Optional[Dict[str, object]] = None,
) -> RunManifest:
    """
    Write `manifest.json` into `out_dir`.

    Example:
        >>> write_manifest("runs/a", "train", seed=7, configs=[model_cfg, train_cfg],
        ...                inputs={"facts.tsv": "9f2c..."}, artifacts={"checkpoint": "runs/a/model.kglt"})
    """
    config: Dict[str, object] = {}
    for cfg in configs:
        config.update(cfg.model_dump(mode="json"))
    config.update(extra or {})
    manifest = RunManifest(
        command=command,
        tool_version=__version__,
        seed=seed,
        config=config,
        inputs=inputs or {},
        artifacts=artifacts or {},
    )
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest
