"""Foutklassen van het lab en de bijbehorende exit codes van de CLI."""

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class MaxRLError(RuntimeError):
    """Basisfout voor alle verwachte fouten in dit project."""

    exit_code = EXIT_FAILURE


class ConfigError(MaxRLError):
    """Ongeldige configuratie, vlaggen of invoerpaden."""

    exit_code = EXIT_CONFIG


class MissingInputError(ConfigError):
    """Een verwacht invoerbestand of -map ontbreekt."""


class RunLockedError(ConfigError):
    """De run id is al in gebruik door een ander proces."""


class NumericError(MaxRLError):
    """Niet-eindige waarden of numerieke domeinfouten."""

    exit_code = EXIT_NUMERIC


class DomainError(NumericError, ValueError):
    """Functie geëvalueerd buiten haar domein (bijv. log p bij p = 0)."""


class EstimatorError(MaxRLError, ValueError):
    """Schatter aangeroepen met een niet-ondersteunde combinatie."""


class EnumerationBudgetError(MaxRLError, ValueError):
    """Exacte enumeratie zou het rekenbudget overschrijden."""


class ShapeError(MaxRLError, ValueError):
    """Vormen van tensors of vectoren passen niet bij elkaar."""


class InvalidMazeError(MaxRLError, ValueError):
    """Ongeldige doolhofafmeting of een grid dat geen perfect doolhof is."""


class GraphError(MaxRLError):
    """Backward aangeroepen op een ongeldige rekengraaf."""


class SftFloorNotReached(MaxRLError):
    """Supervised pretraining haalde de pass@1 ondergrens niet binnen de stap-limiet."""

    exit_code = EXIT_NUMERIC


class VerificationFailed(MaxRLError):
    """Minstens één oracle-cel overschrijdt de tolerantie."""


def exit_code_for(exc: BaseException) -> int:
    """Bepaal de exit code die bij een exception hoort."""
    return int(getattr(exc, "exit_code", EXIT_FAILURE))
