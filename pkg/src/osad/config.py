"""Run configuration: every tunable knob, loadable from strict JSON."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import InvalidArgumentError


@dataclass
class SyntheticConfig:
    seed: int = 0
    known: int = 5
    unknown: int = 3
    dim: int = 16
    train_per_category: int = 200
    test_per_category: int = 100
    spread: float = 8.0
    noise: float = 1.0
    # scene geometry
    scenes: int = 24
    image_size: float = 1024.0
    objects_min: int = 2
    objects_max: int = 5
    box_min: float = 40.0
    box_max: float = 160.0
    proposals_per_object: int = 3
    jitter: float = 0.08
    score_noise: float = 0.05
    distractors: int = 6
    wilderness: float = 0.6

    def validate(self) -> None:
        if self.known < 1 or self.unknown < 0:
            raise InvalidArgumentError("need at least one known category and a non-negative unknown count")
        if not self.spread > self.noise:
            raise InvalidArgumentError(f"cluster spread {self.spread} must exceed noise {self.noise}")
        if self.dim < 1 or self.train_per_category < 1 or self.test_per_category < 0:
            raise InvalidArgumentError("dimension and sample counts must be positive")
        if not 1 <= self.objects_min <= self.objects_max:
            raise InvalidArgumentError("objects_min must be in [1, objects_max]")
        if not 0 < self.box_min <= self.box_max < self.image_size:
            raise InvalidArgumentError("box size range must fit inside the image")
        if self.proposals_per_object < 1 or self.distractors < 0 or self.scenes < 0:
            raise InvalidArgumentError("proposal counts must be non-negative (at least one per object)")
        if self.jitter < 0 or self.score_noise < 0:
            raise InvalidArgumentError("jitter and score noise must be non-negative")
        if not 0.0 <= self.wilderness <= 1.0:
            raise InvalidArgumentError("wilderness fraction must lie in [0, 1]")


@dataclass
class LpgConfig:
    stage1_pro_num: int = 256
    stage1_pos_iou: float = 0.7
    stage1_pos_ratio: float = 0.5
    stage2_pro_num: int = 512
    stage2_pos_iou: float = 0.5
    stage2_pos_ratio: float = 0.25
    lambdas: list = field(default_factory=lambda: [1.0, 8.0, 1.0, 2.0])
    pseudo_top_k: int = 5
    pseudo_min_s: float = 0.5
    pseudo_overlap_cap: float = 0.3


@dataclass
class TrainConfig:
    hidden: int = 64
    embed_dim: int = 32
    lr: float = 0.005
    batch: int = 32
    iterations: int = 3000
    i_m: int = 500
    i_n: int = 1000
    eta: float = 0.99
    queue_size: int = 16
    margin: float = 13.0
    metric: str = "euclidean"
    pcl_weight: float = 1.0
    pcl_enabled: bool = True
    use_pseudo_labels: bool = False


@dataclass
class PipelineConfig:
    top_n: int = 1000
    nms_iou: float = 0.7
    conf_floor: float = 0.05
    unknown_threshold: float = 13.0

    def validate(self) -> None:
        if self.top_n < 1:
            raise InvalidArgumentError("top_n must be at least 1")
        if not 0.0 <= self.conf_floor <= 1.0:
            raise InvalidArgumentError("confidence floor must lie in [0, 1]")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise InvalidArgumentError("nms IoU must lie in [0, 1]")


@dataclass
class EvalSettings:
    iou_thresh: float = 0.5
    conf: float = 0.5


@dataclass
class SweepConfig:
    queue_size: list = field(default_factory=lambda: [6, 8, 12, 16])
    margin: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    sampling: list = field(default_factory=list)


@dataclass
class Config:
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    lpg: LpgConfig = field(default_factory=LpgConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def validate(self) -> None:
        self.synthetic.validate()
        self.pipeline.validate()
        if self.train.metric not in ("euclidean", "cosine"):
            raise InvalidArgumentError(f"unknown metric {self.train.metric!r}")
        if len(self.lpg.lambdas) != 4:
            raise InvalidArgumentError("lpg.lambdas needs four weights")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise InvalidArgumentError(f"config section {path or '<root>'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        where = f" in section {path}" if path else ""
        raise InvalidArgumentError(f"unknown config key(s){where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = fields[name].default_factory if fields[name].default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kwargs[name] = _build(sub, value, f"{path}.{name}" if path else name)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> Config:
    cfg = _build(Config, data, "")
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> Config:
    """Read a JSON config; missing keys take defaults, unknown keys are an error."""
    if path is None:
        cfg = Config()
        cfg.validate()
        return cfg
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read config file {p}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"config file {p} is not valid JSON: {exc}") from exc
    return config_from_dict(data)
