"""Versioneerd checkpointformaat.

Eén JSON-kopregel (afgesloten met een newline) gevolgd door de arrays als little-endian float64,
in de volgorde van de kop: eerst de parameters, daarna de optimizer-toestand.
"""
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..errors import ConfigError, MissingInputError
from ..logging_setup import get_logger
from ..utils import atomic_write_bytes

FORMAT_VERSION = 1
CHECKPOINT_DIR = "checkpoints"
SFT_CHECKPOINT = "sft.ckpt"
_STEP_PATTERN = re.compile(r"^ckpt_(\d{7})\.bin$")
_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    step: int
    seed: int
    phase: str
    architecture: Dict[str, object]
    params: Dict[str, np.ndarray]
    optimizer: Dict[str, object] = field(default_factory=dict)
    extra: Dict[str, object] = field(default_factory=dict)


def checkpoint_path(run_dir: Path, step: int) -> Path:
    return run_dir / CHECKPOINT_DIR / f"ckpt_{step:07d}.bin"


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    arrays: List[Tuple[str, str, np.ndarray]] = [("params", n, a) for n, a in ckpt.params.items()]
    optimizer_t = int(ckpt.optimizer.get("t", 0))
    arrays += [("optimizer", n, a) for n, a in ckpt.optimizer.items() if n != "t"]
    header = {
        "format_version": FORMAT_VERSION,
        "step": int(ckpt.step),
        "seed": int(ckpt.seed),
        "phase": ckpt.phase,
        "architecture": ckpt.architecture,
        "optimizer_t": optimizer_t,
        "extra": ckpt.extra,
        "arrays": [{"section": s, "name": n, "shape": list(np.shape(a))} for s, n, a in arrays],
    }
    body = b"".join(np.ascontiguousarray(a, dtype=_DTYPE).tobytes() for _, _, a in arrays)
    return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + body


def decode_checkpoint(payload: bytes, source: str = "<bytes>") -> Checkpoint:
    newline = payload.find(b"\n")
    if newline < 0:
        raise ConfigError(f"Checkpoint '{source}' heeft geen kopregel")
    try:
        header = json.loads(payload[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"Kopregel van checkpoint '{source}' is onleesbaar: {exc}")
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(f"Checkpoint '{source}' heeft formaatversie {version}, verwacht {FORMAT_VERSION}")
    offset = newline + 1
    sections: Dict[str, Dict[str, object]] = {"params": {}, "optimizer": {}}
    for entry in header["arrays"]:
        shape = tuple(int(d) for d in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * _DTYPE.itemsize
        if end > len(payload):
            raise ConfigError(f"Checkpoint '{source}' is afgekapt bij array '{entry['name']}'")
        sections[entry["section"]][entry["name"]] = (
            np.frombuffer(payload[offset:end], dtype=_DTYPE).reshape(shape).astype(np.float64)
        )
        offset = end
    if offset != len(payload):
        raise ConfigError(f"Checkpoint '{source}' bevat {len(payload) - offset} onverwachte bytes")
    optimizer = dict(sections["optimizer"])
    optimizer["t"] = int(header.get("optimizer_t", 0))
    return Checkpoint(
        step=int(header["step"]),
        seed=int(header["seed"]),
        phase=str(header["phase"]),
        architecture=dict(header["architecture"]),
        params=dict(sections["params"]),
        optimizer=optimizer,
        extra=dict(header.get("extra", {})),
    )


def save_checkpoint(path: Path, ckpt: Checkpoint) -> Path:
    atomic_write_bytes(path, encode_checkpoint(ckpt))
    get_logger().debug("Checkpoint geschreven: %s (stap %d)", path, ckpt.step)
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    if not path.exists():
        raise MissingInputError(f"Checkpoint niet gevonden: {path}")
    return decode_checkpoint(path.read_bytes(), str(path))


def list_checkpoints(run_dir: Path) -> List[Tuple[int, Path]]:
    """(stap, pad) van alle RL-checkpoints, oplopend in stap."""
    folder = run_dir / CHECKPOINT_DIR
    if not folder.exists():
        return []
    found = []
    for path in folder.iterdir():
        match = _STEP_PATTERN.match(path.name)
        if match:
            found.append((int(match.group(1)), path))
    return sorted(found)


def latest_checkpoint(run_dir: Path) -> Optional[Path]:
    found = list_checkpoints(run_dir)
    return found[-1][1] if found else None


def prune_checkpoints(run_dir: Path, keep: int) -> List[Path]:
    """Verwijder alles behalve de laatste keep checkpoints; sft.ckpt blijft staan."""
    found = list_checkpoints(run_dir)
    removed = []
    for _, path in found[: max(len(found) - keep, 0)]:
        path.unlink()
        removed.append(path)
    return removed
