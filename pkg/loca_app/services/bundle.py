"""
Output directory of one run: lockfile, canonical JSON, CSV tables and a
manifest listing every written file with its sha256 checksum.
"""

import hashlib
import json
import math
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from core.config import settings
from core.exceptions import OutputLockedError, UsageError
from core.logging import get_logger

logger = get_logger(__name__)

LOCK_FILE = ".lock"
MANIFEST_FILE = "run_manifest.json"


def canonical(value: Any, digits: Optional[int] = None) -> Any:
    """JSON-ready copy of `value` with floats rounded to `digits` significant digits."""
    digits = digits or settings.RESULT_SIGNIFICANT_DIGITS
    if isinstance(value, dict):
        return {str(k.value if isinstance(k, Enum) else k): canonical(v, digits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [canonical(v, digits) for v in value]
    if isinstance(value, np.ndarray):
        return canonical(value.tolist(), digits)
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return value.as_posix()
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return None
        return float(f"{value:.{digits}g}")
    return value


def canonical_json(value: Any) -> str:
    return json.dumps(canonical(value), sort_keys=True, indent=2) + "\n"


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunBundle:
    """
    Context manager owning an output directory for the duration of a run.

    Files written through the bundle are recorded; on exit the manifest
    is written and the lock released.
    """

    def __init__(self, output_dir: Path, command: str, seed: int, arguments: Optional[Dict[str, Any]] = None):
        self.output_dir = Path(output_dir)
        self.command = command
        self.seed = seed
        self.arguments = arguments or {}
        self.status = "ok"
        self.failed_stage: Optional[str] = None
        self._files: List[Path] = []
        self._lock_fd: Optional[int] = None

    @property
    def lock_path(self) -> Path:
        return self.output_dir / LOCK_FILE

    def __enter__(self) -> "RunBundle":
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UsageError(f"cannot create output directory {self.output_dir}: {exc}")
        try:
            self._lock_fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OutputLockedError(f"{self.output_dir} is locked by another run ({self.lock_path} exists)")
        os.write(self._lock_fd, str(os.getpid()).encode())
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc is not None and self.status == "ok":
            self.mark_failed(getattr(exc, "stage", None))
        try:
            self.write_manifest()
        finally:
            if self._lock_fd is not None:
                os.close(self._lock_fd)
                self._lock_fd = None
            self.lock_path.unlink(missing_ok=True)

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def register(self, path: Path) -> Path:
        path = Path(path)
        if path not in self._files:
            self._files.append(path)
        logger.info(f"Wrote {path}")
        return path

    def mark_failed(self, stage: Optional[str]) -> None:
        self.status = "failed"
        self.failed_stage = stage

    def write_json(self, name: str, data: Any) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(canonical_json(data))
        return self.register(path)

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=f"%.{settings.RESULT_SIGNIFICANT_DIGITS}g")
        return self.register(path)

    def write_manifest(self) -> Path:
        files = []
        for path in sorted(self._files):
            if path.exists():
                files.append(
                    {
                        "path": path.relative_to(self.output_dir).as_posix(),
                        "sha256": sha256_file(path),
                        "bytes": path.stat().st_size,
                    }
                )
        manifest = {
            "command": self.command,
            "seed": self.seed,
            "arguments": self.arguments,
            "status": self.status,
            "failed_stage": self.failed_stage,
            "files": files,
        }
        path = self.path(MANIFEST_FILE)
        path.write_text(canonical_json(manifest))
        logger.info(f"Wrote {path} ({len(files)} files, status {self.status})")
        return path
