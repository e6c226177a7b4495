import copy
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, MissingInputError
from .estimators import CvMode
from .logging_setup import get_logger
from .objectives import ObjectiveKind

# Basismappen
script_dir = Path(__file__).parent
data_dir = script_dir.parent / "Data"
data_input_dir = data_dir / "Input"
data_output_dir = data_dir / "Output"

OUTPUT_ROOT_ENV = "MAXRL_OUTPUT_ROOT"
RESOLVED_CONFIG_NAME = "config.resolved.yaml"

# Grote-schaal waarden, actief met full_scale: true
FULL_SCALE_VALUES: Dict[str, Any] = {
    "tasks_per_batch": 256,
    "rollouts_per_task": 128,
    "steps": 9000,
    "maze.side": 17,
}


def output_root() -> Path:
    """Bepaal de output map; de omgevingsvariabele heeft voorrang."""
    override = os.environ.get(OUTPUT_ROOT_ENV)
    if override:
        return Path(override)
    return data_output_dir


class TaskKind(str, Enum):
    CLASSIFICATION = "classification"
    MAZE = "maze"


class RegimeKind(str, Enum):
    INFINITE_DATA = "infinite_data"
    FIXED_DATASET = "fixed_dataset"


class _Strict(BaseModel):
    """Basis voor alle configuratieblokken: onbekende sleutels zijn een fout."""

    model_config = ConfigDict(extra="forbid", use_enum_values=False, validate_assignment=True)


class ObjectiveConfig(_Strict):
    kind: ObjectiveKind = ObjectiveKind.MAXRL
    # Alleen voor gewichtsanalyses; de schatter zelf is onvertekend voor orde N
    order: Optional[int] = Field(default=None, ge=1)
    cv_mode: CvMode = CvMode.DROP_ALL_ON_FAILURE
    eps: float = Field(default=1e-6, ge=0.0)


class RegimeConfig(_Strict):
    kind: RegimeKind = RegimeKind.INFINITE_DATA
    dataset_size: Optional[int] = Field(default=None, ge=1)
    num_epochs: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_fixed_dataset(self) -> "RegimeConfig":
        if self.kind is RegimeKind.FIXED_DATASET and self.dataset_size is None:
            raise ValueError("fixed_dataset vereist regime.dataset_size")
        return self


class OptimizerConfig(_Strict):
    name: str = "adamw"
    lr: float = Field(default=1e-4, gt=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    clip_norm: Optional[float] = Field(default=1.0, gt=0.0)
    schedule: str = "constant"
    warmup_steps: int = Field(default=0, ge=0)

    @field_validator("name")
    @classmethod
    def _known_optimizer(cls, value: str) -> str:
        value = value.lower()
        if value not in ("adamw", "sgd"):
            raise ValueError(f"onbekende optimizer '{value}' (adamw of sgd)")
        return value

    @field_validator("schedule")
    @classmethod
    def _known_schedule(cls, value: str) -> str:
        value = value.lower()
        if value not in ("constant", "cosine"):
            raise ValueError(f"onbekend lr schema '{value}' (constant of cosine)")
        return value


class EvalConfig(_Strict):
    every: int = Field(default=100, ge=1)
    n: int = Field(default=64, ge=1)
    ks: List[int] = Field(default_factory=lambda: [1, 8, 64])
    temperature: float = Field(default=1.0, gt=0.0)
    heldout_size: int = Field(default=64, ge=1)

    @field_validator("ks")
    @classmethod
    def _sorted_positive(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("eval.ks mag niet leeg zijn")
        if any(k < 1 for k in value):
            raise ValueError("eval.ks bevat een k < 1")
        return sorted(set(value))

    @model_validator(mode="after")
    def _n_covers_k(self) -> "EvalConfig":
        if self.n < max(self.ks):
            raise ValueError(f"eval.n ({self.n}) moet >= max(eval.ks) ({max(self.ks)}) zijn")
        return self


class CheckpointConfig(_Strict):
    every: int = Field(default=200, ge=1)
    keep: int = Field(default=3, ge=1)


class ClassificationConfig(_Strict):
    num_classes: int = Field(default=1000, ge=2)
    feature_dim: int = Field(default=32, ge=1)
    hidden_dim: int = Field(default=64, ge=1)
    difficulty: str = "uniform-hard"
    data_seed: int = 1234


class MazeConfig(_Strict):
    side: int = Field(default=9, ge=5)
    backbone: str = "attention"
    d_model: int = Field(default=64, ge=4)
    n_heads: int = Field(default=2, ge=1)
    n_layers: int = Field(default=2, ge=1)
    dataset: Optional[Path] = None
    data_seed: int = 4321

    @field_validator("side")
    @classmethod
    def _odd_side(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"maze.side moet oneven zijn, kreeg {value}")
        return value

    @field_validator("backbone")
    @classmethod
    def _known_backbone(cls, value: str) -> str:
        value = value.lower()
        if value not in ("attention", "gru"):
            raise ValueError(f"onbekende backbone '{value}' (attention of gru)")
        return value

    @model_validator(mode="after")
    def _heads_divide(self) -> "MazeConfig":
        if self.d_model % self.n_heads != 0:
            raise ValueError("maze.d_model moet deelbaar zijn door maze.n_heads")
        return self


class SftConfig(_Strict):
    enabled: bool = True
    lr: float = Field(default=5e-4, gt=0.0)
    batch_size: int = Field(default=32, ge=1)
    max_steps: int = Field(default=1500, ge=0)
    floor: float = Field(default=0.02, ge=0.0, le=1.0)
    eval_every: int = Field(default=100, ge=1)
    eval_n: int = Field(default=8, ge=1)


class TrainConfig(_Strict):
    task: TaskKind = TaskKind.CLASSIFICATION
    run_id: Optional[str] = None
    seed: int = 0
    steps: int = Field(default=2000, ge=0)
    tasks_per_batch: int = Field(default=32, ge=1)
    rollouts_per_task: int = Field(default=8, ge=1)
    entropy_coeff: float = Field(default=0.0, ge=0.0)
    loss_aggregation: str = "token"
    full_scale: bool = False
    objective: ObjectiveConfig = Field(default_factory=ObjectiveConfig)
    regime: RegimeConfig = Field(default_factory=RegimeConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    checkpoint: CheckpointConfig = Field(default_factory=CheckpointConfig)
    classification: ClassificationConfig = Field(default_factory=ClassificationConfig)
    maze: MazeConfig = Field(default_factory=MazeConfig)
    sft: SftConfig = Field(default_factory=SftConfig)

    @field_validator("loss_aggregation")
    @classmethod
    def _known_aggregation(cls, value: str) -> str:
        value = value.lower()
        if value not in ("token", "sequence"):
            raise ValueError(f"onbekende loss_aggregation '{value}' (token of sequence)")
        return value

    @model_validator(mode="after")
    def _check_combinations(self) -> "TrainConfig":
        kind = self.objective.kind
        if kind is ObjectiveKind.RLOO and self.rollouts_per_task < 2:
            raise ValueError("RLOO vereist rollouts_per_task >= 2")
        if kind is ObjectiveKind.EXACT_ML and self.task is not TaskKind.CLASSIFICATION:
            raise ValueError("exact_ml is alleen beschikbaar voor de classificatietaak")
        if self.objective.cv_mode is not CvMode.DROP_ALL_ON_FAILURE and kind is not ObjectiveKind.MAXRL:
            raise ValueError("objective.cv_mode geldt alleen voor maxrl")
        return self


def _set_dotted(tree: Dict[str, Any], dotted_key: str, value: Any) -> None:
    """Zet een waarde in een geneste dict via een pad als 'optimizer.lr'."""
    parts = [p for p in dotted_key.split(".") if p]
    if not parts:
        raise ConfigError(f"Lege configuratiesleutel in override '{dotted_key}'")
    node = tree
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = {}
            node[part] = child
        if not isinstance(child, dict):
            raise ConfigError(f"'{part}' in '{dotted_key}' is geen blok")
        node = child
    node[parts[-1]] = value


def parse_override(text: str) -> Dict[str, Any]:
    """Zet 'a.b=waarde' om naar een (sleutel, YAML-waarde) paar."""
    if "=" not in text:
        raise ConfigError(f"Override '{text}' heeft de vorm sleutel.pad=waarde nodig")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"Kan waarde van override '{text}' niet lezen: {exc}")
    return {"key": key.strip(), "value": value}


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Pas --set overrides toe op een ruwe configuratieboom (vlag wint van bestand)."""
    tree = copy.deepcopy(raw)
    for text in overrides:
        parsed = parse_override(text)
        _set_dotted(tree, parsed["key"], parsed["value"])
    return tree


def _apply_full_scale(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Vervang de desk-scale standaardwaarden door de grote-schaal waarden."""
    tree = copy.deepcopy(raw)
    for key, value in FULL_SCALE_VALUES.items():
        _set_dotted(tree, key, value)
    return tree


def read_yaml_file(path: Path) -> Dict[str, Any]:
    """Lees een YAML bestand in als dict."""
    if not path.exists():
        raise MissingInputError(f"Configuratiebestand bestaat niet: {path}")
    try:
        with path.open("r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"Kan '{path.name}' niet lezen als YAML: {exc}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"'{path.name}' moet een YAML mapping bevatten")
    return data


def _format_validation_error(exc: ValidationError) -> str:
    """Maak een leesbare foutregel per ongeldige sleutel."""
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err.get("loc", ()))
        parts.append(f"{loc or '<root>'}: {err.get('msg')}")
    return "; ".join(parts)


def build_config(raw: Dict[str, Any], overrides: Sequence[str] = ()) -> TrainConfig:
    """Valideer een ruwe configuratieboom inclusief overrides."""
    tree = apply_overrides(raw, overrides)
    if tree.get("full_scale"):
        tree = _apply_full_scale(tree)
        # Overrides blijven leidend boven de grote-schaal waarden
        tree = apply_overrides(tree, overrides)
    try:
        return TrainConfig.model_validate(tree)
    except ValidationError as exc:
        raise ConfigError(f"Ongeldige configuratie: {_format_validation_error(exc)}")


def load_config(path: Optional[Path], overrides: Sequence[str] = ()) -> TrainConfig:
    """Lees, combineer en valideer een configuratie (bestand optioneel)."""
    raw = read_yaml_file(path) if path is not None else {}
    config = build_config(raw, overrides)
    get_logger().debug("Configuratie geladen uit %s", path or "<standaard>")
    return config


def config_to_dict(config: TrainConfig) -> Dict[str, Any]:
    """Serialiseerbare dict van een configuratie (enums als tekst, paden als tekst)."""
    return config.model_dump(mode="json")


def dump_resolved_config(config: TrainConfig, run_dir: Path) -> Path:
    """Schrijf de opgeloste configuratie naast de run-uitvoer."""
    from .utils import atomic_write_text

    text = yaml.safe_dump(config_to_dict(config), sort_keys=True, allow_unicode=True)
    return atomic_write_text(run_dir / RESOLVED_CONFIG_NAME, text)


def load_resolved_config(run_dir: Path) -> TrainConfig:
    """Lees de opgeloste configuratie van een bestaande run."""
    path = run_dir / RESOLVED_CONFIG_NAME
    if not path.exists():
        raise MissingInputError(f"Geen {RESOLVED_CONFIG_NAME} gevonden in {run_dir}")
    # Opgeloste waarden zijn definitief; full_scale niet opnieuw toepassen
    try:
        return TrainConfig.model_validate(read_yaml_file(path))
    except ValidationError as exc:
        raise ConfigError(f"Ongeldige opgeloste configuratie in {run_dir}: {_format_validation_error(exc)}")
