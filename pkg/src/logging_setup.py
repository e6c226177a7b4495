import logging
from pathlib import Path
from typing import Dict, List, Tuple
from datetime import datetime
from logging import Logger

LOGGER_NAME = "maxrl"

_CONSOLE_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"
_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


class ListLogHandler(logging.Handler):
    """Handler die logberichten in een lijst opslaat."""

    def __init__(self, sink: List[Dict[str, str]]):
        super().__init__()
        self._sink = sink

    def emit(self, record: logging.LogRecord) -> None:
        """Verwerk een log record en voeg toe aan de sink lijst."""
        try:
            ts = datetime.fromtimestamp(record.created).astimezone().strftime(_DATE_FORMAT)
        except Exception:
            ts = ""

        msg = record.getMessage()
        level = record.levelname
        self._sink.append({"Tijd": ts, "Niveau": level, "Bericht": msg})


def _build_console_handler(level: int) -> logging.Handler:
    """Maak en configureer een console handler."""
    base_fmt = logging.Formatter(fmt=_CONSOLE_FORMAT, datefmt=_DATE_FORMAT)
    console = logging.StreamHandler()
    console.setLevel(level)
    console.setFormatter(base_fmt)
    return console


def _build_memory_handler(sink: List[Dict[str, str]], level: int) -> logging.Handler:
    """Maak en configureer een geheugen handler."""
    memory = ListLogHandler(sink)
    memory.setLevel(level)
    memory.setFormatter(logging.Formatter(fmt="%(message)s"))
    return memory


def _reset_logger(logger: Logger) -> None:
    """Reset logger door alle bestaande handlers te verwijderen."""
    if logger.handlers:
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            try:
                handler.close()
            except Exception:
                pass
    # Voorkom dubbele logging via root logger
    logger.propagate = False


def get_logger() -> Logger:
    """Haal de maxrl logger op."""
    return logging.getLogger(LOGGER_NAME)


def setup_logging(level: int = logging.INFO) -> Tuple[Logger, List[Dict[str, str]]]:
    """Initialiseer logging naar console en geheugenlijst."""
    logger = get_logger()

    _reset_logger(logger)
    logger.setLevel(level)

    in_memory_rows: List[Dict[str, str]] = []
    logger.addHandler(_build_console_handler(level))
    logger.addHandler(_build_memory_handler(in_memory_rows, level))

    return logger, in_memory_rows


def attach_run_file_handler(logger: Logger, log_path: Path) -> logging.Handler:
    """Schrijf logberichten ook naar een bestand in de run map."""
    log_path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(log_path, encoding="utf-8")
    handler.setLevel(logger.level or logging.INFO)
    handler.setFormatter(logging.Formatter(fmt=_CONSOLE_FORMAT, datefmt=_DATE_FORMAT))
    logger.addHandler(handler)
    return handler


def detach_handler(logger: Logger, handler: logging.Handler) -> None:
    """Verwijder en sluit een eerder toegevoegde handler."""
    logger.removeHandler(handler)
    try:
        handler.close()
    except Exception:
        pass
