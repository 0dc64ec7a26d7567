"""Integrity verification of an emitted goldens directory: manifest
present, every referenced file hashes to its recorded digest, and every
tensor file parses with a well-formed shape."""

from __future__ import annotations

import hashlib
import json
import os

from .tensorfile import read_tensor


class IntegrityError(Exception):
    pass


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def verify_manifest(dir_path) -> dict:
    """Returns {"cases": n, "files": n} on success; raises IntegrityError
    naming the offending file otherwise."""
    manifest_path = os.path.join(dir_path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise IntegrityError(f"missing manifest: {manifest_path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    for fname, want in manifest["hashes"].items():
        path = os.path.join(dir_path, fname)
        if not os.path.exists(path):
            raise IntegrityError(f"missing file: {fname}")
        got = _sha256(path)
        if got != want:
            raise IntegrityError(f"hash mismatch: {fname} ({got} != {want})")
        try:
            read_tensor(path)
        except ValueError as e:
            raise IntegrityError(f"unparsable tensor file: {fname}: {e}")
    declared = {f for case in manifest["cases"]
                for group in ("inputs", "params", "expected", "expected_grads")
                for f in case.get(group, {}).values()}
    missing = declared - set(manifest["hashes"])
    if missing:
        raise IntegrityError(f"files referenced without hashes: {sorted(missing)}")
    return {"cases": len(manifest["cases"]), "files": len(manifest["hashes"])}
