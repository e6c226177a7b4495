import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO

import numpy as np
import pandas as pd

from ..logging_setup import get_logger
from ..maze import VOCAB, VOCAB_VERSION, MazeGrid
from ..utils import atomic_write_text


def _create_xlsxwriter_writer(out_path: Path) -> pd.ExcelWriter:
    """Maak Excel writer met xlsxwriter engine."""
    return pd.ExcelWriter(
        out_path,
        engine="xlsxwriter",
        engine_kwargs={"options": {"strings_to_urls": False, "nan_inf_to_errors": True}},
    )


def _create_openpyxl_writer(out_path: Path) -> pd.ExcelWriter:
    """Maak Excel writer met openpyxl engine als fallback."""
    return pd.ExcelWriter(out_path, engine="openpyxl")


def create_excel_writer(out_path: Path) -> pd.ExcelWriter:
    """Maak een Excel-writer met veilige defaults."""
    out_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        return _create_xlsxwriter_writer(out_path)
    except Exception:
        return _create_openpyxl_writer(out_path)


def _create_info_dataframe(message: str) -> pd.DataFrame:
    """Maak DataFrame met informatiebericht."""
    return pd.DataFrame({"Info": [message]})


def write_dataframe_or_info(writer: pd.ExcelWriter, sheet_name: str, df: pd.DataFrame,
                            message: str = "Geen data gevonden.") -> None:
    """Schrijf DataFrame of informatieregel bij ontbrekende data."""
    if df.empty:
        _create_info_dataframe(message).to_excel(writer, sheet_name=sheet_name, index=False)
    else:
        df.to_excel(writer, sheet_name=sheet_name, index=False)


def write_logs_sheet(writer: pd.ExcelWriter, in_memory_logs: List[Dict[str, str]]) -> None:
    """Schrijf de gelogde berichten naar een tabblad."""
    try:
        if in_memory_logs:
            df = pd.DataFrame(in_memory_logs)
        else:
            df = pd.DataFrame(columns=["Tijd", "Niveau", "Bericht"])
        df.to_excel(writer, sheet_name="Logs", index=False)
    except ValueError as exc:
        get_logger().warning("Kon logs niet schrijven: %s", exc)


def write_overview_sheet(writer: pd.ExcelWriter, overview_records: List[Dict[str, object]]) -> None:
    """Schrijf het Overzicht: één rij per run met eindwaarden."""
    if overview_records:
        df = pd.DataFrame(overview_records)
        preferred_order = ["run_id", "task", "objective", "seed", "regime", "steps", "final_step"]
        cols = [c for c in preferred_order if c in df.columns]
        df = df[cols + [c for c in df.columns if c not in cols]]
    else:
        df = pd.DataFrame({"run_id": ["<geen>"], "final_step": [0]})
    df.to_excel(writer, sheet_name="Overzicht", index=False)


def write_csv(df: pd.DataFrame, path: Path, float_format: Optional[str] = None) -> Path:
    """Schrijf een DataFrame als CSV (atomair, vaste regeleinden)."""
    text = df.to_csv(index=False, float_format=float_format, lineterminator="\n")
    return atomic_write_text(path, text)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def to_json_line(record: Dict[str, object]) -> str:
    return json.dumps(record, sort_keys=True, default=_json_default, allow_nan=True)


def write_jsonl(records: Iterable[Dict[str, object]], path: Path) -> Path:
    return atomic_write_text(path, "".join(to_json_line(r) + "\n" for r in records))


class JsonlSink:
    """Geordende append-only schrijver; elke regel wordt direct geflusht."""

    def __init__(self, path: Path, truncate: bool = False):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh: Optional[TextIO] = path.open("w" if truncate else "a", encoding="utf-8", newline="\n")

    def write(self, record: Dict[str, object]) -> None:
        if self._fh is None:
            raise ValueError(f"Sink voor {self.path} is al gesloten")
        self._fh.write(to_json_line(record) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "JsonlSink":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


def truncate_jsonl_after(path: Path, step: int) -> int:
    """Houd alleen records met step <= step; geeft het aantal behouden regels."""
    if not path.exists():
        return 0
    kept = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and json.loads(line).get("step", 0) <= step:
                kept.append(line if line.endswith("\n") else line + "\n")
    atomic_write_text(path, "".join(kept))
    return len(kept)


def write_maze_dataset(grids: Sequence[MazeGrid], path: Path) -> Path:
    """Eén doolhof per regel: {"seed", "side", "cells"}."""
    records = [{"seed": g.seed, "side": g.side, "cells": g.to_string()} for g in grids]
    return write_jsonl(records, path)


def write_vocab_table(path: Path) -> Path:
    """Tokentabel met versie als commentaarregel."""
    lines = [f"# vocab_version\t{VOCAB_VERSION}", "id\ttoken"]
    lines += [f"{idx}\t{name}" for idx, name in sorted(VOCAB.items())]
    return atomic_write_text(path, "\n".join(lines) + "\n")
