from pathlib import Path
from typing import List, Sequence

import pandas as pd

from .readers import _read_file_data
from .writers import _create_info_dataframe


def _get_target_sheet_name(file: Path, used: List[str]) -> str:
    """Werkbladnaam uit de bestandsnaam (Excel max 31 tekens, uniek gemaakt)."""
    base = file.stem[:31]
    name, counter = base, 1
    while name in used:
        suffix = f"_{counter}"
        name = base[: 31 - len(suffix)] + suffix
        counter += 1
    used.append(name)
    return name


def write_files_as_sheets(writer: pd.ExcelWriter, files: Sequence[Path], used: List[str]) -> List[str]:
    """Schrijf elk CSV/Excel-bestand als apart werkblad; geeft de gebruikte bladnamen terug.

    used bevat de bladnamen die al in het werkboek staan en wordt bijgewerkt.
    """
    written = []
    for file in files:
        target_sheet = _get_target_sheet_name(file, used)
        df = _read_file_data(file)
        if df is None or df.empty:
            df = _create_info_dataframe(f"Geen data of leesfout voor {file.name}")
        df.to_excel(writer, sheet_name=target_sheet, index=False)
        written.append(target_sheet)
    return written
