import pandas as pd

from ..logging_setup import get_logger

META_COLUMNS = ("run_id", "step")


def meta_headers(result_df: pd.DataFrame):
    """Kolommen die grijs worden gemarkeerd: sleutels en aanwezigheid per run."""
    return [c for c in META_COLUMNS if c in result_df.columns] + [
        c for c in result_df.columns if str(c).startswith("Aanwezig_")
    ]


def _apply_xlsxwriter_styling(wb, ws, result_df: pd.DataFrame) -> None:
    """Pas styling toe voor xlsxwriter engine."""
    ws.set_row(0, None, wb.add_format({"bold": True}))
    grey_fmt = wb.add_format({"bg_color": "#DDDDDD"})
    header_to_index = {h: i for i, h in enumerate(result_df.columns)}
    for h in meta_headers(result_df):
        col_idx = header_to_index[h]
        ws.set_column(col_idx, col_idx, None, grey_fmt)
    ws.freeze_panes(1, 0)


def _apply_openpyxl_styling(ws, result_df: pd.DataFrame) -> None:
    """Pas styling toe voor openpyxl engine."""
    from openpyxl.styles import Font, PatternFill

    for cell in ws[1]:
        cell.font = Font(bold=True)
    header_to_index = {cell.value: idx + 1 for idx, cell in enumerate(ws[1])}
    grey_fill = PatternFill(start_color="00DDDDDD", end_color="00DDDDDD", fill_type="solid")
    for h in meta_headers(result_df):
        col_idx = header_to_index.get(h)
        if col_idx is None:
            continue
        for row in ws.iter_rows(min_row=1, max_row=ws.max_row, min_col=col_idx, max_col=col_idx):
            for cell in row:
                cell.fill = grey_fill
    ws.freeze_panes = "A2"


def apply_sheet_styling(writer: pd.ExcelWriter, sheet_name: str, result_df: pd.DataFrame) -> None:
    """Pas basisopmaak toe op headers en meta-kolommen."""
    if result_df.empty:
        return
    try:
        if writer.engine == "xlsxwriter":
            ws = writer.sheets.get(sheet_name)
            if ws is not None:
                _apply_xlsxwriter_styling(writer.book, ws, result_df)
        else:
            _apply_openpyxl_styling(writer.book[sheet_name], result_df)
    except KeyError:
        get_logger().warning("Styling overgeslagen: sheet '%s' niet gevonden", sheet_name)
    except Exception as exc:
        get_logger().warning("Styling mislukt voor sheet '%s': %s", sheet_name, exc)
