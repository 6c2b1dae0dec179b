"""
Run configuration: flat `key = value` files (`#` starts a comment) validated by
a pydantic model. Unknown keys are rejected; CLI overrides are applied on top.
"""
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError

from sinkhorn_tracker.constants import (
    DEFAULT_BATCH_SIZE, DEFAULT_D_APP, DEFAULT_D_INTER, DEFAULT_ENTROPIC_L, DEFAULT_EPOCHS,
    DEFAULT_EVAL_IOU, DEFAULT_FRAME_HEIGHT, DEFAULT_FRAME_WIDTH, DEFAULT_GATE_PX, DEFAULT_GCN_LAYERS,
    DEFAULT_HOLDOUT_FRAMES, DEFAULT_LEARNING_RATE, DEFAULT_LOOKBACK, DEFAULT_LOSS_WEIGHT,
    DEFAULT_MAX_LOST_AGE, DEFAULT_MIN_CONFIDENCE, DEFAULT_S_SLACK, DEFAULT_S_THRES,
    DEFAULT_SAMPLES_PER_FRAME, DEFAULT_SEED, DEFAULT_SINKHORN_ITERS, DEFAULT_WEIGHT_DECAY,
)
from sinkhorn_tracker.params.app import ModelConfig
from sinkhorn_tracker.tracker.app import TrackerConfig
from sinkhorn_tracker.train.app import TrainConfig
from sinkhorn_tracker.utils import helper
from sinkhorn_tracker.utils.error_handler import ConfigurationError, DataError


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # model
    d_app: int = Field(DEFAULT_D_APP, gt=0)
    d_inter: int = Field(DEFAULT_D_INTER, gt=0)
    layers: int = Field(DEFAULT_GCN_LAYERS, gt=0)
    propagation: Literal["gcnn", "fcnn"] = "gcnn"
    affinity_inputs: Literal["appearance_geometry", "appearance_only"] = "appearance_geometry"
    normalization: Literal["sinkhorn", "softmax", "none"] = "sinkhorn"
    # association
    s_slack: float = DEFAULT_S_SLACK
    l: float = Field(DEFAULT_ENTROPIC_L, gt=0)
    iters: int = Field(DEFAULT_SINKHORN_ITERS, gt=0)
    s_thres: float = Field(DEFAULT_S_THRES, gt=0)
    # tracker
    gate_px: float = Field(DEFAULT_GATE_PX, gt=0)
    max_lost_age: int = Field(DEFAULT_MAX_LOST_AGE, gt=0)
    min_confidence: float = Field(DEFAULT_MIN_CONFIDENCE, gt=0)
    frame_width: float = Field(DEFAULT_FRAME_WIDTH, gt=0)
    frame_height: float = Field(DEFAULT_FRAME_HEIGHT, gt=0)
    # training
    lr: float = Field(DEFAULT_LEARNING_RATE, gt=0)
    weight_decay: float = Field(DEFAULT_WEIGHT_DECAY, ge=0)
    batch_size: int = Field(DEFAULT_BATCH_SIZE, gt=0)
    w: float = Field(DEFAULT_LOSS_WEIGHT, ge=0)
    lookback: int = Field(DEFAULT_LOOKBACK, gt=0)
    epochs: int = Field(DEFAULT_EPOCHS, ge=0)
    seed: int = DEFAULT_SEED
    samples_per_frame: int = Field(DEFAULT_SAMPLES_PER_FRAME, gt=0)
    holdout_frames: int = Field(DEFAULT_HOLDOUT_FRAMES, ge=0)
    loss_normalization: Literal["augmented", "strict_mn"] = "augmented"
    # evaluation
    eval_iou: float = Field(DEFAULT_EVAL_IOU, gt=0, le=1)

    def model(self) -> ModelConfig:
        return ModelConfig(d_app=self.d_app, d_inter=self.d_inter, layers=self.layers,
                           s_slack=self.s_slack, l=self.l, iters=self.iters,
                           frame_width=self.frame_width, frame_height=self.frame_height,
                           propagation=self.propagation, affinity_inputs=self.affinity_inputs,
                           normalization=self.normalization)

    def tracker(self) -> TrackerConfig:
        return TrackerConfig(gate_px=self.gate_px, s_thres=self.s_thres, max_lost_age=self.max_lost_age,
                             min_confidence=self.min_confidence, frame_width=self.frame_width,
                             frame_height=self.frame_height)

    def train(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, weight_decay=self.weight_decay, batch_size=self.batch_size,
                           w=self.w, lookback=self.lookback, epochs=self.epochs, seed=self.seed,
                           samples_per_frame=self.samples_per_frame, gate_px=self.gate_px,
                           holdout_frames=self.holdout_frames, loss_normalization=self.loss_normalization)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Re-validates; None values mean "not given"."""
        given = {k: v for k, v in overrides.items() if v is not None}
        return build_run_config({**self.model_dump(), **given})


def build_run_config(values: Mapping[str, Any], source: Optional[Path] = None) -> RunConfig:
    unknown = sorted(set(values) - set(RunConfig.model_fields))
    if unknown:
        raise ConfigurationError(f"unknown configuration key(s): {', '.join(unknown)}", key=unknown[0])
    try:
        return RunConfig(**values)
    except PydanticValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(p) for p in first["loc"])
        where = f"{source}: " if source else ""
        raise ConfigurationError(f"{where}invalid value for {key}: {first['msg']}", key=key)


def parse_config_text(text: str, source: Optional[Path] = None) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"expected 'key = value', got {raw.strip()!r}", path=source, line=line_no)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise DataError(f"expected 'key = value', got {raw.strip()!r}", path=source, line=line_no)
        if key in values:
            raise ConfigurationError(f"{source or 'config'}:{line_no}: duplicate key {key!r}", key=key)
        values[key] = value
    return values


def load_run_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Defaults, then the file (if any), then overrides."""
    values: Dict[str, Any] = {}
    source = None
    if path is not None:
        source = Path(path)
        if not source.is_file():
            raise DataError(f"file not found: {source}", path=source)
        values = parse_config_text(source.read_text(encoding="utf-8"), source)
    config = build_run_config(values, source)
    if overrides:
        config = config.with_overrides(overrides)
    helper.log_json("DEBUG", "CONFIG_LOADED", source=str(source) if source else None,
                    **config.model_dump())
    return config
