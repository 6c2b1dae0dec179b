"""
Synthetic scenarios for desk-scale training, tracking checks and the ablation
comparison, plus hand-set parameters that make identities separable.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel

from sinkhorn_tracker.constants import DEFAULT_FRAME_HEIGHT, DEFAULT_FRAME_WIDTH
from sinkhorn_tracker.embeddings.app import SyntheticEmbeddingProvider
from sinkhorn_tracker.geom.app import BoundingBox
from sinkhorn_tracker.io.app import DetectionRecord, GroundTruthRecord, TrackRecord, flatten_ground_truth
from sinkhorn_tracker.metrics.app import evaluate
from sinkhorn_tracker.params.app import DTYPE, ModelConfig, ParameterStore, expected_shapes, store_from_tensors
from sinkhorn_tracker.tracker.app import TrackerConfig, resolve_detections, run_sequence
from sinkhorn_tracker.train.app import TrainConfig, train_loop
from sinkhorn_tracker.train.dataset import LabeledSequence, identity_map, sequence_from_ground_truth
from sinkhorn_tracker.utils import helper
from sinkhorn_tracker.utils.error_handler import InputValidator, ValidationError

FRAME_SIZE = (DEFAULT_FRAME_WIDTH, DEFAULT_FRAME_HEIGHT)
BOX_W, BOX_H = 60.0, 150.0


@dataclass
class Scenario:
    name: str
    num_frames: int
    ground_truth: Dict[int, List[GroundTruthRecord]]
    frame_size: Tuple[float, float] = FRAME_SIZE

    @property
    def detections(self) -> Dict[int, List[DetectionRecord]]:
        """Every ground-truth box as a confident detection, same in-frame order."""
        return {
            frame: [DetectionRecord(frame=frame, det_index=r.row_index, box=r.box, confidence=1.0)
                    for r in rows]
            for frame, rows in self.ground_truth.items()
        }

    @property
    def gt_table(self) -> List[TrackRecord]:
        return flatten_ground_truth(self.ground_truth)

    @property
    def identities(self) -> List[int]:
        return sorted({r.id for rows in self.ground_truth.values() for r in rows})

    def provider(self, dim: int, noise_scale: float = 0.0, seed: int = 0) -> SyntheticEmbeddingProvider:
        return SyntheticEmbeddingProvider(dim, identity_map(self.name, self.ground_truth),
                                          noise_scale=noise_scale, seed=seed)

    def labeled(self, dim: int, noise_scale: float = 0.0, seed: int = 0) -> LabeledSequence:
        return sequence_from_ground_truth(self.name, self.ground_truth,
                                          self.provider(dim, noise_scale, seed), self.frame_size,
                                          self.num_frames)


def _scenario(name: str, num_frames: int, tracks: Dict[int, List[Optional[Tuple[float, float]]]],
              shuffle_seed: Optional[int] = None) -> Scenario:
    rng = np.random.default_rng(shuffle_seed) if shuffle_seed is not None else None
    frames: Dict[int, List[GroundTruthRecord]] = {}
    for frame in range(1, num_frames + 1):
        present = [(ident, centers[frame - 1]) for ident, centers in sorted(tracks.items())
                   if centers[frame - 1] is not None]
        if rng is not None:
            present = [present[i] for i in rng.permutation(len(present))]
        if present:
            frames[frame] = [GroundTruthRecord(frame=frame, id=ident, box=BoundingBox(cx, cy, BOX_W, BOX_H),
                                               row_index=row)
                             for row, (ident, (cx, cy)) in enumerate(present)]
    return Scenario(name=name, num_frames=num_frames, ground_truth=frames)


def static_scenario(num_identities: int = 3, num_frames: int = 30, spacing: float = 400.0,
                    name: str = "synthetic-static") -> Scenario:
    """Identities standing still, `spacing` pixels apart on one row."""
    InputValidator.validate_positive_int(num_identities, "num_identities")
    InputValidator.validate_positive_int(num_frames, "num_frames")
    tracks = {k + 1: [(200.0 + k * spacing, FRAME_SIZE[1] / 2.0)] * num_frames for k in range(num_identities)}
    return _scenario(name, num_frames, tracks)


def moving_scenario(num_identities: int = 3, num_frames: int = 10, speed: float = 5.0,
                    spacing: float = 400.0, name: str = "synthetic-moving") -> Scenario:
    """Identities moving right at `speed` pixels per frame."""
    InputValidator.validate_positive_int(num_identities, "num_identities")
    InputValidator.validate_positive_int(num_frames, "num_frames")
    tracks = {
        k + 1: [(200.0 + k * spacing + speed * t, 300.0 + 100.0 * k) for t in range(num_frames)]
        for k in range(num_identities)
    }
    return _scenario(name, num_frames, tracks)


def crossing_scenario(num_frames: int = 20, span: float = 520.0, offset: float = 100.0,
                      seed: int = 0, name: str = "synthetic-crossing") -> Scenario:
    """
    Two identities walking toward each other and crossing mid-sequence, the
    second `offset` pixels lower. In-frame detection order is shuffled per frame.
    """
    if num_frames < 2:
        raise ValidationError("a crossing needs at least two frames", field="num_frames")
    left, cy = 700.0, FRAME_SIZE[1] / 2.0
    xs = np.linspace(left, left + span, num_frames)
    tracks = {
        1: [(float(x), cy) for x in xs],
        2: [(float(x), cy + offset) for x in xs[::-1]],
    }
    return _scenario(f"{name}-{seed}", num_frames, tracks, shuffle_seed=seed)


def separable_model_config(d_app: int = 8, **overrides) -> ModelConfig:
    """Shapes separable_params needs: d_inter = 2 * d_app."""
    return ModelConfig(d_app=d_app, d_inter=2 * d_app, **overrides)


def separable_params(config: ModelConfig, cosine_weight: float = 4.0, iou_weight: float = 2.0,
                     bias: float = -1.5, edge_weight: float = 0.0) -> ParameterStore:
    """
    Hand-set parameters: W_1 = [I, -I] keeps the positive and negative parts
    of each embedding, later layers are identity, and
    f_affinity = cosine_weight * cos + iou_weight * iou + bias.
    f_edge and phi output the constant edge_weight; at 0 propagation never
    mixes nodes, above 0 every gated pair exchanges features at that weight.
    """
    if config.d_inter != 2 * config.d_app:
        raise ValidationError(f"separable parameters need d_inter = 2 * d_app, got {config.d_inter}",
                              field="d_inter")
    edge_weight = InputValidator.validate_non_negative(edge_weight, "edge_weight")
    shapes = expected_shapes(config)
    eye = torch.eye(config.d_app, dtype=DTYPE)
    tensors = {name: torch.zeros(shape, dtype=DTYPE) for name, shape in shapes.items()}
    tensors["f_edge.bias"] = torch.tensor([edge_weight], dtype=DTYPE)
    tensors["phi.bias"] = torch.tensor([edge_weight], dtype=DTYPE)
    tensors["gcn.0.weight"] = torch.cat([eye, -eye], dim=1)
    for k in range(1, config.layers):
        tensors[f"gcn.{k}.weight"] = torch.eye(config.d_inter, dtype=DTYPE)
    tensors["f_affinity.weight"] = torch.tensor([[cosine_weight, iou_weight]], dtype=DTYPE)
    tensors["f_affinity.bias"] = torch.tensor([bias], dtype=DTYPE)
    return store_from_tensors(config, tensors)


# every variant starts from separable_params(edge_weight=ABLATION_EDGE_WEIGHT); fcnn ignores the edges
ABLATION_EDGE_WEIGHT = 4.0
ABLATION_VARIANTS = {
    "appearance_geometry": {},
    "appearance_only": {"affinity_inputs": "appearance_only"},
    "gcnn": {"propagation": "gcnn"},
    "fcnn": {"propagation": "fcnn"},
    "sinkhorn": {"normalization": "sinkhorn"},
    "softmax": {"normalization": "softmax"},
    "layers_1": {"layers": 1},
    "layers_2": {"layers": 2},
    "layers_3": {"layers": 3},
}


class VariantScore(BaseModel):
    idsw: int = 0
    mota: float = 0.0    # mean over trials


def ablation_params(variant: str, d_app: int, train_epochs: int = 0,
                    training: Optional[Scenario] = None, noise_scale: float = 0.0,
                    seed: int = 0) -> ParameterStore:
    """Hand-set parameters for one variant, optionally fine-tuned on a crossing scenario."""
    if variant not in ABLATION_VARIANTS:
        raise ValidationError(f"unknown ablation variant {variant!r}", field="variant")
    params = separable_params(separable_model_config(d_app, **ABLATION_VARIANTS[variant]),
                              edge_weight=ABLATION_EDGE_WEIGHT)
    if train_epochs > 0:
        training = training or crossing_scenario(seed=seed, name="synthetic-crossing-train")
        sequence = training.labeled(d_app, noise_scale, seed=seed)
        config = TrainConfig(epochs=train_epochs, seed=seed, lookback=training.num_frames)
        params = train_loop([sequence], config, params=params).params
    return params


def run_ablation(trials: int = 20, seed: int = 0, noise_scale: float = 0.6, d_app: int = 8,
                 num_frames: int = 20, train_epochs: int = 0) -> Dict[str, VariantScore]:
    """
    Identity switches (summed) and MOTA (averaged) per variant over `trials`
    seeded crossing scenarios. With train_epochs > 0 each variant is first
    fine-tuned on its own crossing sequence, drawn from seeds disjoint from
    the evaluation trials.
    """
    InputValidator.validate_positive_int(trials, "trials")
    InputValidator.validate_non_negative(train_epochs, "train_epochs")
    training = crossing_scenario(num_frames=num_frames, seed=seed + trials, name="synthetic-crossing-train")
    variant_params = {
        variant: ablation_params(variant, d_app, train_epochs, training, noise_scale, seed=seed + trials)
        for variant in ABLATION_VARIANTS
    }
    idsw = {variant: 0 for variant in ABLATION_VARIANTS}
    mota = {variant: 0.0 for variant in ABLATION_VARIANTS}
    tracker_config = TrackerConfig()
    for trial in range(trials):
        scenario = crossing_scenario(num_frames=num_frames, seed=seed + trial)
        provider = scenario.provider(d_app, noise_scale, seed=seed + trial)
        frames = resolve_detections(scenario.name, scenario.detections, provider)
        for variant, params in variant_params.items():
            table = run_sequence(frames, tracker_config, params, scenario.num_frames)
            report = evaluate(scenario.gt_table, table, num_frames=scenario.num_frames)
            idsw[variant] += report.idsw
            mota[variant] += report.mota
    results = {variant: VariantScore(idsw=idsw[variant], mota=mota[variant] / trials)
               for variant in ABLATION_VARIANTS}
    helper.log_json("INFO", "ABLATION_DONE", trials=trials, seed=seed, noise_scale=noise_scale,
                    train_epochs=train_epochs, **{v: r.model_dump() for v, r in results.items()})
    return results
