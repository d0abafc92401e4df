"""Atomic file output and model JSON (de)serialization."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_outputs(out_dir, files: dict) -> list[Path]:
    """Write several text files so that either all of them appear or none.

    Everything is staged as temp files first; renames happen only after
    every write succeeded.
    """
    out_dir = Path(out_dir)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.", suffix=".tmp")
            staged.append((tmp, out_dir / name))
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        for tmp, dest in staged:
            os.replace(tmp, dest)
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise
    return [dest for _, dest in staged]


def dumps_model(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


def write_model(path, doc: dict) -> None:
    atomic_write_text(path, dumps_model(doc))


def read_model(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "model" not in doc:
        raise ValueError(f"{path}: not a model document (missing 'model')")
    return doc
