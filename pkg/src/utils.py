import hashlib
import json
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List

import numpy as np

from .errors import MissingInputError, RunLockedError
from .logging_setup import get_logger

LOCK_NAME = "run.lock"
MANIFEST_NAME = "manifest.json"

# Gescheiden naamruimtes voor RNG streams
STREAM_TRAIN = 0
STREAM_HELDOUT = 1
STREAM_INIT = 2
STREAM_EVAL = 3
STREAM_SHUFFLE = 4
STREAM_SFT = 5


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """RNG afgeleid van (seed, keys...), onafhankelijk van eerdere trekkingen."""
    entropy = [int(seed)] + [int(k) for k in keys]
    if any(v < 0 for v in entropy):
        raise ValueError(f"RNG sleutels moeten niet-negatief zijn: {entropy}")
    return np.random.default_rng(np.random.SeedSequence(entropy))


def utc_timestamp() -> str:
    """Huidige tijd als ISO-8601 tekst in UTC."""
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def make_run_id(config_payload: Dict[str, object]) -> str:
    """Deterministische run id: taak, doelfunctie, seed en een korte config-hash."""
    text = json.dumps(config_payload, sort_keys=True, default=str)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:10]
    task = config_payload.get("task", "run")
    objective = config_payload.get("objective", {})
    kind = objective.get("kind", "obj") if isinstance(objective, dict) else "obj"
    seed = config_payload.get("seed", 0)
    return f"{task}-{kind}-s{seed}-{digest}"


def atomic_write_text(path: Path, text: str) -> Path:
    """Schrijf tekst naar een tijdelijk bestand en hernoem het daarna."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp_name, path)
    except Exception:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
    return path


def atomic_write_bytes(path: Path, payload: bytes) -> Path:
    """Binaire tegenhanger van atomic_write_text."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp_name, path)
    except Exception:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
    return path


def write_json(path: Path, payload: Dict[str, object]) -> Path:
    """Schrijf een dict als geformatteerde JSON (atomair)."""
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


class RunLock:
    """Lock-bestand in de run map; voorkomt dat twee processen dezelfde run id gebruiken."""

    def __init__(self, run_dir: Path):
        self.path = run_dir / LOCK_NAME
        self._held = False

    def acquire(self) -> "RunLock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(str(self.path), os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLockedError(
                f"Run map {self.path.parent} is in gebruik (lock: {self.path}). "
                "Kies een andere run id of verwijder het lock-bestand na een crash."
            )
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(f"{os.getpid()}\n")
        self._held = True
        return self

    def release(self) -> None:
        if not self._held:
            return
        try:
            self.path.unlink()
        except FileNotFoundError:
            get_logger().warning("Lock-bestand was al verwijderd: %s", self.path)
        self._held = False

    def __enter__(self) -> "RunLock":
        return self.acquire()

    def __exit__(self, exc_type, exc, tb) -> None:
        self.release()


def _is_run_dir(path: Path) -> bool:
    """Een run map heeft een manifest."""
    return path.is_dir() and (path / MANIFEST_NAME).exists()


def discover_runs(root: Path) -> Dict[str, Path]:
    """Vind run mappen onder root (root zelf mag ook een run map zijn).

    Sleutel is de mapnaam (de run id), gesorteerd voor een vaste volgorde.
    """
    if not root.exists():
        raise MissingInputError(f"Map bestaat niet: {root}")
    if _is_run_dir(root):
        return {root.name: root}
    runs = {}
    for subdir in sorted(d for d in root.iterdir() if d.is_dir()):
        if _is_run_dir(subdir):
            runs[subdir.name] = subdir
        else:
            get_logger().debug("Map '%s' overgeslagen: geen %s", subdir.name, MANIFEST_NAME)
    return runs


def chunk_indices(total: int, size: int) -> List[range]:
    """Verdeel 0..total-1 in opeenvolgende blokken van hoogstens size."""
    if size < 1:
        raise ValueError("Blokgrootte moet >= 1 zijn")
    return [range(start, min(start + size, total)) for start in range(0, total, size)]
