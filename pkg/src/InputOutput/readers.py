import json
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from ..errors import ConfigError, InvalidMazeError, MissingInputError
from ..logging_setup import get_logger
from ..maze import MazeGrid, check_perfect_maze
from ..utils import MANIFEST_NAME

METRICS_JSONL = "metrics.jsonl"


def _read_csv_file(file_path: Path) -> pd.DataFrame:
    """Lees CSV bestand in als DataFrame."""
    if not file_path.exists():
        get_logger().warning("CSV bestand niet gevonden: '%s'", file_path)
        return pd.DataFrame()
    try:
        return pd.read_csv(file_path)
    except Exception as exc:
        get_logger().warning("Kon CSV bestand '%s' niet lezen: %s", file_path.name, exc)
        return pd.DataFrame()


def _read_excel_data(file: Path) -> Optional[pd.DataFrame]:
    """Lees de eerste sheet van een Excel bestand in."""
    try:
        xls = pd.ExcelFile(file, engine="openpyxl")
        sheet_name = next(iter(xls.sheet_names), None)
        if sheet_name:
            return pd.read_excel(xls, sheet_name=sheet_name)
        return None
    except Exception as exc:
        get_logger().warning("Kon Excel '%s' niet lezen: %s", file.name, exc)
        return None


def _read_file_data(file: Path) -> Optional[pd.DataFrame]:
    """Lees data uit een bestand (CSV of Excel)."""
    if file.suffix.lower() == ".csv":
        df = _read_csv_file(file)
        return None if df.empty else df
    return _read_excel_data(file)


def read_jsonl(path: Path) -> List[Dict[str, object]]:
    """Lees een bestand met één JSON object per regel; lege regels worden overgeslagen."""
    if not path.exists():
        raise MissingInputError(f"Bestand niet gevonden: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"Regel {line_no} van '{path.name}' is geen geldige JSON: {exc}")
    return records


def read_metrics(run_dir: Path) -> pd.DataFrame:
    """Metrieken van één run als DataFrame (één rij per record)."""
    records = read_jsonl(run_dir / METRICS_JSONL)
    return pd.DataFrame(records)


def read_manifest(run_dir: Path) -> Dict[str, object]:
    path = run_dir / MANIFEST_NAME
    if not path.exists():
        raise MissingInputError(f"Geen {MANIFEST_NAME} in {run_dir}")
    with path.open("r", encoding="utf-8") as fh:
        return json.load(fh)


def read_maze_dataset(path: Path) -> List[MazeGrid]:
    """Lees een doolhofdataset (regels {"seed", "side", "cells"}) en valideer elk grid."""
    grids = []
    for idx, record in enumerate(read_jsonl(path)):
        try:
            grid = MazeGrid.from_string(int(record["side"]), str(record["cells"]), record.get("seed"))
            check_perfect_maze(grid)
        except KeyError as exc:
            raise ConfigError(f"Doolhof {idx} in '{path.name}' mist veld {exc}")
        except InvalidMazeError as exc:
            raise InvalidMazeError(f"Doolhof {idx} in '{path.name}' is ongeldig: {exc}")
        grids.append(grid)
    get_logger().info("%d doolhoven gelezen uit '%s'", len(grids), path.name)
    return grids
