import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd

from .config import data_input_dir, load_config, load_resolved_config, output_root
from .errors import EXIT_FAILURE, EXIT_OK, MaxRLError, MissingInputError, VerificationFailed, exit_code_for
from .estimators import EstimatorVariant
from .evaluation import evaluate
from .InputOutput.checkpoints import SFT_CHECKPOINT, latest_checkpoint, load_checkpoint
from .InputOutput.writers import write_csv, write_maze_dataset, write_vocab_table
from .logging_setup import setup_logging
from .maze import generate_mazes
from .objectives import ObjectiveKind, p_grid, weights_table
from .oracle import DEFAULT_P_GRID, DEFAULT_TOLERANCE, default_variants, parse_variant, run_oracle_grid
from .report import SCATTER_GRAD_VS_P, build_report
from .trainer import build_task_source, restore_policy, run_experiment
from .utils import write_json

DEFAULT_ORDERS = (1, 2, 4, 8, 16, 32, 64)


def _parse_int_list(text: str) -> List[int]:
    """'1,8,64' of '1-12' naar een lijst gehele getallen."""
    values: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            values.extend(range(int(lo), int(hi) + 1))
        else:
            values.append(int(part))
    return values


def _parse_float_list(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_oracle(args: argparse.Namespace, logger, log_rows) -> int:
    """Exacte enumeratie; exit 1 als een cel de tolerantie overschrijdt."""
    if args.variants:
        variants = [parse_variant(v) for v in args.variants.split(",")]
    else:
        variants = default_variants() + [EstimatorVariant(ObjectiveKind.REINFORCE)]
    frame = run_oracle_grid(
        p_values=_parse_float_list(args.p_grid) if args.p_grid else DEFAULT_P_GRID,
        n_range=_parse_int_list(args.n_range),
        variants=variants,
        tolerance=args.tolerance,
        inject_normalization=args.inject_normalization,
        categorical_classes=_parse_int_list(args.categorical_classes),
    )
    write_csv(frame, args.out)
    logger.info("Oracle-rapport geschreven naar %s", args.out)
    failed = frame[~frame["passed"]]
    if not failed.empty:
        for _, row in failed.head(10).iterrows():
            logger.error("Cel %s %s p=%s N=%s: fout %.3e", row["check"], row["variant"], row["p"], row["N"],
                         row["max_abs_error"])
        raise VerificationFailed(f"{len(failed)} van {len(frame)} oracle-cellen boven tolerantie {args.tolerance:.1e}")
    return EXIT_OK


def cmd_weights(args: argparse.Namespace, logger, log_rows) -> int:
    grid = p_grid(args.points, args.low, args.high)
    frame = weights_table(grid, _parse_int_list(args.orders))
    write_csv(frame, args.out)
    logger.info("Gewichtentabel (%d punten) geschreven naar %s", len(frame), args.out)
    return EXIT_OK


def cmd_gen_mazes(args: argparse.Namespace, logger, log_rows) -> int:
    grids = generate_mazes(args.side, args.count, args.seed)
    write_maze_dataset(grids, args.out)
    vocab_path = args.out.parent / "vocab.tsv"
    write_vocab_table(vocab_path)
    logger.info("%d doolhoven (zijde %d) geschreven naar %s; vocabulaire in %s",
                len(grids), args.side, args.out, vocab_path)
    return EXIT_OK


def _train_overrides(args: argparse.Namespace) -> List[str]:
    """Snelkoppelingen worden gewone --set overrides (vlag wint van bestand)."""
    overrides: List[str] = []
    shortcuts = {
        "task": "task", "objective": "objective.kind", "cv_mode": "objective.cv_mode", "seed": "seed",
        "steps": "steps", "rollouts": "rollouts_per_task", "tasks_per_batch": "tasks_per_batch",
        "lr": "optimizer.lr", "run_id": "run_id",
    }
    for attr, key in shortcuts.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    if args.full_scale:
        overrides.append("full_scale=true")
    return overrides + list(args.overrides or [])


def cmd_train(args: argparse.Namespace, logger, log_rows) -> int:
    if args.resume is not None:
        config = load_resolved_config(args.resume)
        result = run_experiment(config, run_dir=args.resume, resume=True, log_rows=log_rows)
    else:
        config = load_config(args.config, _train_overrides(args))
        result = run_experiment(config, log_rows=log_rows)
    logger.info("Metrieken: %s", result.run_dir / "metrics.jsonl")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, logger, log_rows) -> int:
    """Evalueer een checkpoint opnieuw met de configuratie van zijn run."""
    run_dir: Path = args.run_dir
    config = load_resolved_config(run_dir)
    if args.checkpoint is not None:
        ckpt_path = args.checkpoint
    elif args.sft:
        ckpt_path = run_dir / SFT_CHECKPOINT
    else:
        ckpt_path = latest_checkpoint(run_dir)
        if ckpt_path is None:
            raise MissingInputError(f"Geen checkpoints in {run_dir / 'checkpoints'}")
    ckpt = load_checkpoint(ckpt_path)
    policy = restore_policy(ckpt)
    ks = _parse_int_list(args.ks) if args.ks else config.eval.ks
    n = args.n or max(config.eval.n, max(ks))
    source = build_task_source(config)
    result = evaluate(policy, source.heldout, n, ks, config.seed, ckpt.step, config.eval.temperature,
                      sampled=args.sampled)
    payload = {"run_id": run_dir.name, "checkpoint": str(ckpt_path), "step": ckpt.step, **result.to_dict()}
    out_dir = args.out or run_dir
    write_json(out_dir / "eval.json", payload)
    write_csv(pd.DataFrame([payload]), out_dir / "eval.csv")
    logger.info("Evaluatie van %s: %s", ckpt_path.name,
                ", ".join(f"pass@{k} {v:.4f}" for k, v in sorted(result.pass_at_k.items())))
    if args.sft and config.sft.enabled and result.pass_at_k.get(1, 0.0) < config.sft.floor:
        raise VerificationFailed(f"pass@1 {result.pass_at_k.get(1)} onder de SFT-ondergrens {config.sft.floor}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace, logger, log_rows) -> int:
    root = args.runs or output_root()
    out_dir = args.out or (root / "report")
    build_report(root, out_dir, scatter=args.scatter, target_pass=args.target_pass,
                 reference=args.reference, log_rows=log_rows)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    """Parse command line argumenten."""
    parser = argparse.ArgumentParser(description="MaxRL lab: oracles, doolhoven, training en rapportage")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Logniveau (default: INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("oracle", help="Controleer de schatters door exacte enumeratie")
    p.add_argument("--out", type=Path, default=Path("oracle_report.csv"), help="Pad van het rapport (CSV)")
    p.add_argument("--p-grid", default=None, help="Komma-gescheiden pass rates (default: 0.01..0.99)")
    p.add_argument("--n-range", default="1-12", help="Rollout-aantallen, bv. '1-12' of '1,2,4'")
    p.add_argument("--variants", default=None, help="Bv. 'maxrl:none,maxrl:keep_vn_on_failure,reinforce'")
    p.add_argument("--categorical-classes", default="3", help="Klasse-aantallen voor de categorische controle")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--inject-normalization", choices=["K", "N"], default="K",
                   help="Testvlag: 'N' gebruikt 1/N in plaats van 1/K (negatieve controle)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("weights", help="Gewichtsfuncties w(p) over een p-rooster")
    p.add_argument("--out", type=Path, default=Path("weights.csv"))
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--low", type=float, default=0.001)
    p.add_argument("--high", type=float, default=0.999)
    p.add_argument("--orders", default=",".join(str(t) for t in DEFAULT_ORDERS), help="MaxRL ordes T")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("gen-mazes", help="Genereer een doolhofdataset (JSONL) en vocab.tsv")
    p.add_argument("--side", type=int, default=9)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=data_input_dir / "mazes.jsonl")
    p.set_defaults(func=cmd_gen_mazes)

    p = sub.add_parser("train", help="Voer een trainingsrun uit")
    p.add_argument("--config", type=Path, default=None, help="YAML configuratiebestand")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="Overschrijf een configuratiesleutel, bv. --set optimizer.lr=1e-3")
    p.add_argument("--resume", type=Path, default=None, metavar="RUN_DIR", help="Hervat een bestaande run")
    p.add_argument("--task", choices=["classification", "maze"], default=None)
    p.add_argument("--objective", choices=[k.value for k in ObjectiveKind], default=None)
    p.add_argument("--cv-mode", dest="cv_mode", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--rollouts", type=int, default=None)
    p.add_argument("--tasks-per-batch", dest="tasks_per_batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--run-id", dest="run_id", default=None)
    p.add_argument("--full-scale", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Evalueer een checkpoint van een run")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--sft", action="store_true", help="Evalueer sft.ckpt en toets tegen de SFT-ondergrens")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--ks", default=None)
    p.add_argument("--sampled", action="store_true", help="Classifier: sample in plaats van analytisch")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="Zet opgeslagen metrieken om in figuur-CSV's en report.xlsx")
    p.add_argument("--runs", type=Path, default=None, help="Map met runs (default: output root)")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--scatter", choices=[SCATTER_GRAD_VS_P], default=None)
    p.add_argument("--target-pass", type=float, default=0.5)
    p.add_argument("--reference", default="grpo", help="Referentie-doelfunctie voor sample_efficiency")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """CLI-entrypoint; fouten worden hier gelogd en omgezet in een exit code."""
    args = _build_parser().parse_args(argv)
    logger, log_rows = setup_logging(getattr(logging, args.log_level))
    try:
        return args.func(args, logger, log_rows)
    except MaxRLError as exc:
        logger.error("%s", exc)
        return exit_code_for(exc)
    except Exception:
        logger.exception("Onverwachte fout")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
