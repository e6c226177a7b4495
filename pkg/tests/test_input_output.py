import json

import pandas as pd
import pytest

from src.errors import ConfigError, InvalidMazeError, MissingInputError
from src.InputOutput.combiner import _get_target_sheet_name, write_files_as_sheets
from src.InputOutput.readers import _read_file_data, read_jsonl, read_maze_dataset
from src.InputOutput.styling import apply_sheet_styling, meta_headers
from src.InputOutput.writers import (
    JsonlSink,
    create_excel_writer,
    truncate_jsonl_after,
    write_csv,
    write_logs_sheet,
    write_maze_dataset,
    write_overview_sheet,
    write_vocab_table,
)
from src.maze import generate_mazes


def test_jsonl_sink_appends_sorted_lines(tmp_path):
    path = tmp_path / "metrics.jsonl"
    with JsonlSink(path) as sink:
        sink.write({"step": 1, "b": 2.0, "a": None})
    with JsonlSink(path) as sink:
        sink.write({"step": 2})
    lines = path.read_text().splitlines()
    assert lines[0] == '{"a": null, "b": 2.0, "step": 1}'
    assert read_jsonl(path) == [{"a": None, "b": 2.0, "step": 1}, {"step": 2}]


def test_truncate_jsonl_after_keeps_earlier_steps(tmp_path):
    path = tmp_path / "metrics.jsonl"
    path.write_text("".join(json.dumps({"step": s}) + "\n" for s in range(5)))
    assert truncate_jsonl_after(path, 2) == 3
    assert [r["step"] for r in read_jsonl(path)] == [0, 1, 2]


def test_read_jsonl_errors(tmp_path):
    with pytest.raises(MissingInputError):
        read_jsonl(tmp_path / "missing.jsonl")
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"step": 1}\n{oops\n')
    with pytest.raises(ConfigError):
        read_jsonl(bad)


def test_maze_dataset_round_trip(tmp_path):
    grids = generate_mazes(7, 3, seed=1)
    path = write_maze_dataset(grids, tmp_path / "mazes.jsonl")
    assert read_maze_dataset(path) == grids


def test_maze_dataset_rejects_invalid_grid(tmp_path):
    path = tmp_path / "mazes.jsonl"
    path.write_text(json.dumps({"seed": 0, "side": 5, "cells": "#####" + "#S..#" + "#.#.#" + "#..G#" + "#####"}) + "\n")
    with pytest.raises(InvalidMazeError):
        read_maze_dataset(path)
    path.write_text(json.dumps({"seed": 0, "side": 5}) + "\n")
    with pytest.raises(ConfigError):
        read_maze_dataset(path)


def test_vocab_table_has_version_header(tmp_path):
    lines = write_vocab_table(tmp_path / "vocab.tsv").read_text().splitlines()
    assert lines[0] == "# vocab_version\t1"
    assert lines[1] == "id\ttoken"
    assert lines[2] == "0\t<pad>"
    assert len(lines) == 2 + 32


def test_csv_uses_unix_newlines(tmp_path):
    path = write_csv(pd.DataFrame({"a": [1, 2]}), tmp_path / "out.csv")
    assert path.read_bytes() == b"a\n1\n2\n"


def test_sheet_names_are_unique_and_short(tmp_path):
    used = ["Overzicht"]
    long = tmp_path / ("x" * 40 + ".csv")
    first = _get_target_sheet_name(long, used)
    second = _get_target_sheet_name(long, used)
    assert len(first) == 31 and len(second) <= 31
    assert first != second


def test_workbook_with_styled_and_combined_sheets(tmp_path):
    csv = write_csv(pd.DataFrame({"run_id": ["a"], "step": [1], "pass@1": [0.5]}), tmp_path / "passk.csv")
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    comparison = pd.DataFrame({"step": [0, 1], "Aanwezig_a": ["ja", "nee"], "a_pass@1": [0.1, None]})
    assert meta_headers(comparison) == ["step", "Aanwezig_a"]
    workbook = tmp_path / "report.xlsx"
    with create_excel_writer(workbook) as writer:
        write_overview_sheet(writer, [{"objective": "maxrl", "run_id": "a", "final_step": 1}])
        comparison.to_excel(writer, sheet_name="Vergelijking", index=False)
        apply_sheet_styling(writer, "Vergelijking", comparison)
        names = write_files_as_sheets(writer, [csv, empty], ["Overzicht", "Vergelijking", "Logs"])
        write_logs_sheet(writer, [{"Tijd": "t", "Niveau": "INFO", "Bericht": "ok"}])
    assert names == ["passk", "empty"]
    sheets = pd.read_excel(workbook, sheet_name=None, engine="openpyxl")
    assert list(sheets) == ["Overzicht", "Vergelijking", "passk", "empty", "Logs"]
    assert list(sheets["Overzicht"].columns[:2]) == ["run_id", "objective"]
    assert sheets["empty"].iloc[0, 0].startswith("Geen data")
    assert _read_file_data(workbook).shape[0] == 1
