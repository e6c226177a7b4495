"""Projectie van opgeslagen run-metrieken naar figuur-CSV's en een Excel-overzicht.

Er wordt niets opnieuw berekend uit policies: alle uitvoer volgt uit metrics.jsonl,
manifest.json en task_gradients.csv van de runs.
"""
import math
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from .errors import ConfigError, MissingInputError
from .InputOutput.combiner import write_files_as_sheets
from .InputOutput.readers import _read_csv_file, read_manifest, read_metrics
from .InputOutput.styling import apply_sheet_styling
from .InputOutput.writers import (
    create_excel_writer,
    write_csv,
    write_dataframe_or_info,
    write_logs_sheet,
    write_overview_sheet,
)
from .logging_setup import get_logger
from .utils import discover_runs

SCATTER_GRAD_VS_P = "grad-vs-p"
REPORT_WORKBOOK = "report.xlsx"
PASS_PREFIX = "pass@"


class RunData:
    """Manifest en metrieken van één run."""

    def __init__(self, run_id: str, run_dir: Path):
        self.run_id = run_id
        self.run_dir = run_dir
        self.manifest = read_manifest(run_dir)
        self.metrics = read_metrics(run_dir)
        config = self.manifest.get("config", {})
        self.task = config.get("task")
        self.objective = config.get("objective", {}).get("kind")
        self.seed = config.get("seed")
        self.regime = config.get("regime", {}).get("kind")
        self.steps = config.get("steps")

    @property
    def ks(self) -> List[int]:
        return sorted(int(c[len(PASS_PREFIX):]) for c in self.metrics.columns if c.startswith(PASS_PREFIX))

    @property
    def evals(self) -> pd.DataFrame:
        """Records met eval-waarden."""
        if not self.ks:
            return self.metrics.iloc[0:0]
        return self.metrics[self.metrics[f"{PASS_PREFIX}{self.ks[0]}"].notna()]

    def meta(self) -> Dict[str, object]:
        return {"run_id": self.run_id, "task": self.task, "objective": self.objective, "seed": self.seed}


def load_runs(root: Path) -> List[RunData]:
    runs = [RunData(run_id, path) for run_id, path in discover_runs(root).items()]
    runs = [r for r in runs if not r.metrics.empty]
    if not runs:
        raise MissingInputError(f"Geen runs met metrieken gevonden onder {root}")
    get_logger().info("%d runs gevonden onder %s", len(runs), root)
    return runs


def passk_vs_k(runs: List[RunData]) -> pd.DataFrame:
    """Dekkingscurve bij de laatste evaluatie van elke run."""
    rows = []
    for run in runs:
        evals = run.evals
        if evals.empty:
            continue
        last = evals.iloc[-1]
        for k in run.ks:
            rows.append({**run.meta(), "step": int(last["step"]), "k": k, "pass_at_k": last[f"{PASS_PREFIX}{k}"]})
    return pd.DataFrame(rows, columns=["run_id", "task", "objective", "seed", "step", "k", "pass_at_k"])


def neglog_passk_vs_rollouts(runs: List[RunData]) -> pd.DataFrame:
    """-log pass@k tegen het cumulatieve aantal trainingsrollouts; NaN waar pass@k = 0."""
    rows = []
    for run in runs:
        for _, rec in run.evals.iterrows():
            for k in run.ks:
                value = float(rec[f"{PASS_PREFIX}{k}"])
                rows.append({
                    **run.meta(),
                    "step": int(rec["step"]),
                    "train_rollouts": int(rec.get("train_rollouts", 0) or 0),
                    "k": k,
                    "pass_at_k": value,
                    "neg_log_pass_at_k": -math.log(value) if value > 0 else float("nan"),
                })
    return pd.DataFrame(rows, columns=[
        "run_id", "task", "objective", "seed", "step", "train_rollouts", "k", "pass_at_k", "neg_log_pass_at_k",
    ])


def fraction_solved(runs: List[RunData]) -> pd.DataFrame:
    """Aandeel trainingstaken met minstens één correcte rollout, per stap."""
    frames = []
    for run in runs:
        df = run.metrics
        if "fraction_solved" not in df.columns:
            continue
        train = df[df["fraction_solved"].notna()]
        frames.append(pd.DataFrame({
            "run_id": run.run_id,
            "objective": run.objective,
            "seed": run.seed,
            "step": train["step"].astype(int),
            "train_rollouts": train["train_rollouts"].astype(int),
            "fraction_solved": train["fraction_solved"],
            "train_mean_reward": train["train_mean_reward"],
        }))
    if not frames:
        return pd.DataFrame(columns=["run_id", "objective", "seed", "step", "train_rollouts",
                                     "fraction_solved", "train_mean_reward"])
    return pd.concat(frames, ignore_index=True)


def grad_vs_p(runs: List[RunData]) -> pd.DataFrame:
    """(pass rate, gradiëntnorm) paren per heldout taak voor classifier-runs."""
    frames = []
    for run in runs:
        path = run.run_dir / "task_gradients.csv"
        if run.task != "classification" or not path.exists():
            continue
        df = _read_csv_file(path)
        if df.empty:
            continue
        df.insert(0, "run_id", run.run_id)
        df["seed"] = run.seed
        frames.append(df)
    if not frames:
        return pd.DataFrame(columns=["run_id", "step", "task", "objective", "pass_rate", "grad_p_norm",
                                     "weight", "grad_norm", "seed"])
    return pd.concat(frames, ignore_index=True)


def peak_vs_final(runs: List[RunData]) -> pd.DataFrame:
    """Beginwaarde, piek en eindwaarde van pass@k per run (vergelijking in het data-schaarse regime)."""
    rows = []
    for run in runs:
        evals = run.evals
        if evals.empty:
            continue
        for k in run.ks:
            col = f"{PASS_PREFIX}{k}"
            values = evals[col].astype(float).to_numpy()
            peak_idx = int(np.argmax(values))
            rows.append({
                **run.meta(),
                "regime": run.regime,
                "k": k,
                "first": values[0],
                "peak": values[peak_idx],
                "peak_step": int(evals["step"].iloc[peak_idx]),
                "final": values[-1],
                "final_step": int(evals["step"].iloc[-1]),
                "drop_from_peak": values[peak_idx] - values[-1],
                "final_minus_first": values[-1] - values[0],
            })
    return pd.DataFrame(rows)


def sample_efficiency(runs: List[RunData], target: float, reference: str) -> pd.DataFrame:
    """Kleinste geëvalueerde k met pass@k >= target, en de versnelling t.o.v. de referentie-doelfunctie."""
    rows = []
    for run in runs:
        evals = run.evals
        if evals.empty:
            continue
        last = evals.iloc[-1]
        reached = [k for k in run.ks if float(last[f"{PASS_PREFIX}{k}"]) >= target]
        rows.append({**run.meta(), "target": target, "k_needed": reached[0] if reached else np.nan})
    df = pd.DataFrame(rows, columns=["run_id", "task", "objective", "seed", "target", "k_needed"])
    ref = df[df["objective"] == reference].groupby(["task", "seed"])["k_needed"].min()
    ref_k = [ref.get((t, s), np.nan) for t, s in zip(df["task"], df["seed"])]
    df["reference"] = reference
    df["reference_k"] = ref_k
    df["speedup"] = df["reference_k"] / df["k_needed"]
    return df


def comparison_by_step(runs: List[RunData]) -> pd.DataFrame:
    """Eval-records van alle runs naast elkaar op stap, met Aanwezig_<run> per run."""
    merged: Optional[pd.DataFrame] = None
    presence: Dict[str, set] = {}
    for run in runs:
        cols = ["step"] + [f"{PASS_PREFIX}{k}" for k in run.ks]
        part = run.evals[cols].copy()
        presence[run.run_id] = set(part["step"].astype(int))
        part = part.rename(columns={c: f"{run.run_id}_{c}" for c in cols if c != "step"})
        merged = part if merged is None else merged.merge(part, on="step", how="outer")
    if merged is None or merged.empty:
        return pd.DataFrame(columns=["step"])
    merged = merged.sort_values("step", kind="stable").reset_index(drop=True)
    flags = {
        f"Aanwezig_{run_id}": merged["step"].astype(int).isin(steps).map({True: "ja", False: "nee"})
        for run_id, steps in presence.items()
    }
    result = pd.concat([merged[["step"]], pd.DataFrame(flags, index=merged.index),
                        merged.drop(columns=["step"])], axis=1)
    return result


def overview_records(runs: List[RunData]) -> List[Dict[str, object]]:
    records = []
    for run in runs:
        record = {**run.meta(), "regime": run.regime, "steps": run.steps,
                  "final_step": int(run.metrics["step"].max())}
        evals = run.evals
        if not evals.empty:
            for k in run.ks:
                record[f"final_{PASS_PREFIX}{k}"] = evals.iloc[-1][f"{PASS_PREFIX}{k}"]
        records.append(record)
    return records


def build_report(
    root: Path,
    out_dir: Path,
    scatter: Optional[str] = None,
    target_pass: float = 0.5,
    reference: str = "grpo",
    log_rows: Optional[List[Dict[str, str]]] = None,
) -> Dict[str, Path]:
    """Schrijf alle figuur-CSV's en report.xlsx; geeft naam -> pad terug."""
    if scatter not in (None, SCATTER_GRAD_VS_P):
        raise ConfigError(f"Onbekend scatter-type '{scatter}' (alleen {SCATTER_GRAD_VS_P})")
    if not 0.0 < target_pass <= 1.0:
        raise ConfigError(f"--target-pass moet in (0, 1] liggen, kreeg {target_pass}")
    runs = load_runs(root)
    tables = {
        "passk_vs_k": passk_vs_k(runs),
        "neglog_passk_vs_rollouts": neglog_passk_vs_rollouts(runs),
        "fraction_solved": fraction_solved(runs),
        "peak_vs_final": peak_vs_final(runs),
        "sample_efficiency": sample_efficiency(runs, target_pass, reference),
    }
    if scatter == SCATTER_GRAD_VS_P:
        tables["grad_vs_p"] = grad_vs_p(runs)
        if tables["grad_vs_p"].empty:
            get_logger().warning("Geen task_gradients.csv gevonden in classifier-runs; grad_vs_p is leeg")

    out_dir.mkdir(parents=True, exist_ok=True)
    written = {name: write_csv(df, out_dir / f"{name}.csv") for name, df in tables.items()}

    comparison = comparison_by_step(runs)
    workbook = out_dir / REPORT_WORKBOOK
    with create_excel_writer(workbook) as writer:
        write_overview_sheet(writer, overview_records(runs))
        write_dataframe_or_info(writer, "Vergelijking", comparison, "Geen evaluaties gevonden.")
        apply_sheet_styling(writer, "Vergelijking", comparison)
        write_files_as_sheets(writer, list(written.values()), ["Overzicht", "Vergelijking", "Logs"])
        write_logs_sheet(writer, log_rows or [])
    written["report"] = workbook
    get_logger().info("Rapport geschreven naar %s", out_dir)
    return written
