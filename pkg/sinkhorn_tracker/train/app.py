"""
Training step - weighted BCE over the normalized assignment, reverse-mode
gradients through the unrolled pipeline, Adam with decoupled weight decay and
the lookback-sampling training loop.
"""
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from sinkhorn_tracker.assoc.app import score_graph
from sinkhorn_tracker.constants import (
    ADAM_BETA1, ADAM_BETA2, ADAM_EPS, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_GATE_PX,
    DEFAULT_HOLDOUT_FRAMES, DEFAULT_LEARNING_RATE, DEFAULT_LOOKBACK, DEFAULT_LOSS_WEIGHT,
    DEFAULT_SAMPLES_PER_FRAME, DEFAULT_SEED, DEFAULT_WEIGHT_DECAY, PREDICTION_CLAMP_EPS,
)
from sinkhorn_tracker.params.app import DTYPE, ModelConfig, ParameterStore, init_params
from sinkhorn_tracker.train.dataset import (
    GroundTruth, LabeledSequence, TrainingSample, draw_delta, make_sample,
)
from sinkhorn_tracker.utils import helper
from sinkhorn_tracker.utils.error_handler import DataError, DimensionMismatchError, ValidationError

LossNormalization = Literal["augmented", "strict_mn"]


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: float = Field(DEFAULT_LEARNING_RATE, gt=0)
    weight_decay: float = Field(DEFAULT_WEIGHT_DECAY, ge=0)
    batch_size: int = Field(DEFAULT_BATCH_SIZE, gt=0)
    w: float = Field(DEFAULT_LOSS_WEIGHT, ge=0)
    lookback: int = Field(DEFAULT_LOOKBACK, gt=0)
    epochs: int = Field(DEFAULT_EPOCHS, ge=0)
    seed: int = DEFAULT_SEED
    samples_per_frame: int = Field(DEFAULT_SAMPLES_PER_FRAME, gt=0)
    gate_px: float = Field(DEFAULT_GATE_PX, gt=0)
    holdout_frames: int = Field(DEFAULT_HOLDOUT_FRAMES, ge=0)
    loss_normalization: LossNormalization = "augmented"


def wbce_terms(s_star: torch.Tensor, o: torch.Tensor, w: float) -> torch.Tensor:
    """
    Per-cell -[w*o*log(s) + (1-o)*log(1-s)] with s clamped to [eps, 1-eps].
    The corner cell is set to 0.
    """
    if s_star.shape != o.shape:
        raise DimensionMismatchError(f"prediction shape {tuple(s_star.shape)} != label shape {tuple(o.shape)}",
                                     expected=tuple(o.shape), actual=tuple(s_star.shape))
    s = s_star.clamp(PREDICTION_CLAMP_EPS, 1.0 - PREDICTION_CLAMP_EPS)
    terms = -(w * o * torch.log(s) + (1.0 - o) * torch.log1p(-s))
    corner = torch.zeros_like(terms, dtype=torch.bool)
    corner[-1, -1] = True
    return torch.where(corner, torch.zeros_like(terms), terms)


def wbce_loss(s_star: torch.Tensor, o, w: float = DEFAULT_LOSS_WEIGHT,
              normalization: LossNormalization = "augmented") -> torch.Tensor:
    """
    Mean of wbce_terms over every cell but the corner ("augmented"), or the
    same sum divided by m*n ("strict_mn", falling back to the augmented count
    when m*n = 0).
    """
    if isinstance(o, GroundTruth):
        o = o.o
    o = torch.as_tensor(o, dtype=DTYPE)
    total = wbce_terms(s_star, o, w).sum()
    rows, cols = o.shape
    included = rows * cols - 1
    if normalization == "strict_mn" and (rows - 1) * (cols - 1) > 0:
        return total / ((rows - 1) * (cols - 1))
    if normalization not in ("augmented", "strict_mn"):
        raise ValidationError(f"unknown loss normalization {normalization!r}", field="loss_normalization")
    return total / included


def sample_loss(sample: TrainingSample, params: ParameterStore, config: TrainConfig) -> torch.Tensor:
    _, assignment = score_graph(sample.graph, params)
    return wbce_loss(assignment.s_star, sample.truth, config.w, config.loss_normalization)


def batch_loss(batch: Sequence[TrainingSample], params: ParameterStore, config: TrainConfig) -> torch.Tensor:
    # fixed summation order keeps runs reproducible
    losses = [sample_loss(sample, params, config) for sample in batch]
    return torch.stack(losses).mean()


def backward(batch: Sequence[TrainingSample], params: ParameterStore,
             config: TrainConfig) -> Tuple[float, Dict[str, torch.Tensor]]:
    """Batch-mean loss and its gradient for every parameter, accumulated into params.grads."""
    if not batch:
        raise ValidationError("cannot differentiate an empty batch", field="batch")
    loss = batch_loss(batch, params, config)
    named = params.named_tensors()
    raw = torch.autograd.grad(loss, [t for _, t in named], allow_unused=True)
    grads = {name: (torch.zeros_like(t) if g is None else g.detach()) for (name, t), g in zip(named, raw)}
    params.accumulate_grads(grads)
    return float(loss.detach()), grads


@dataclass
class AdamState:
    """AdamW bound to one ParameterStore's tensors, created on the first step."""
    step: int = 0
    optimizer: Optional[torch.optim.AdamW] = None

    def bind(self, params: ParameterStore, config: TrainConfig) -> torch.optim.AdamW:
        tensors = params.tensors()
        bound = self.optimizer.param_groups[0]["params"] if self.optimizer is not None else []
        if len(bound) != len(tensors) or any(a is not b for a, b in zip(bound, tensors)):
            self.optimizer = torch.optim.AdamW(tensors, lr=config.lr, betas=(ADAM_BETA1, ADAM_BETA2),
                                               eps=ADAM_EPS, weight_decay=config.weight_decay)
        return self.optimizer


def optimizer_step(params: ParameterStore, grads: Dict[str, torch.Tensor], config: TrainConfig,
                   state: Optional[AdamState] = None) -> ParameterStore:
    """
    theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)
    Missing gradients count as zero. Updates params in place and returns them.
    """
    state = state if state is not None else AdamState()
    optimizer = state.bind(params, config)
    for name, tensor in params.named_tensors():
        grad = grads.get(name)
        tensor.grad = torch.zeros_like(tensor) if grad is None else grad.detach().clone()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
    state.step += 1
    return params


@dataclass
class TrainResult:
    params: ParameterStore
    loss_history: List[float]


def epoch_positions(dataset: Sequence[LabeledSequence], config: TrainConfig,
                    rng: np.random.Generator) -> List[Tuple[int, int, int]]:
    """(sequence index, current frame position, delta) triples for one epoch, shuffled."""
    draws = []
    for seq_index, sequence in enumerate(dataset):
        for position in range(1, len(sequence)):
            for _ in range(config.samples_per_frame):
                draws.append((seq_index, position, draw_delta(rng, position, config.lookback)))
    order = rng.permutation(len(draws))
    return [draws[i] for i in order]


def train_loop(dataset: Sequence[LabeledSequence], config: TrainConfig,
               model_config: Optional[ModelConfig] = None,
               params: Optional[ParameterStore] = None) -> TrainResult:
    """
    For every current frame position p >= 1 (samples_per_frame times per
    epoch) draw a previous frame p - delta with delta uniform in
    [1, min(lookback, p)], then one Adam step per batch of batch_size samples.
    Frame pairs where either frame is empty are skipped.
    """
    if not dataset or all(len(sequence) < 2 for sequence in dataset):
        raise DataError("training dataset is empty (need a sequence with at least two frames)")
    if params is None:
        params = init_params(model_config or ModelConfig(), config.seed)
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    history: List[float] = []
    helper.log_json("INFO", "TRAINING_STARTED", sequences=len(dataset), epochs=config.epochs,
                    parameters=params.num_parameters(), lr=config.lr, batch_size=config.batch_size)

    for epoch in range(1, config.epochs + 1):
        samples: List[TrainingSample] = []
        skipped = 0
        for seq_index, position, delta in epoch_positions(dataset, config, rng):
            sample = make_sample(dataset[seq_index], position, delta, config.gate_px)
            if sample is None:
                skipped += 1
                helper.log_json("DEBUG", "FRAME_PAIR_SKIPPED", sequence=dataset[seq_index].name,
                                position=position, delta=delta, reason="no objects")
                continue
            samples.append(sample)
        if skipped:
            helper.log_json("INFO", "EMPTY_FRAMES_SKIPPED", epoch=epoch, skipped=skipped)
        if not samples:
            raise DataError("no frame pair with objects on both sides; nothing to train on")

        weighted_sum = 0.0
        for start in range(0, len(samples), config.batch_size):
            batch = samples[start:start + config.batch_size]
            params.zero_grads()
            loss, _ = backward(batch, params, config)
            optimizer_step(params, params.grads, config, state)
            weighted_sum += loss * len(batch)
        mean_loss = weighted_sum / len(samples)
        history.append(mean_loss)
        helper.log_json("INFO", "EPOCH_COMPLETE", epoch=epoch, mean_loss=mean_loss,
                        samples=len(samples), steps=state.step)

    helper.log_json("INFO", "TRAINING_COMPLETE", epochs=config.epochs,
                    final_loss=history[-1] if history else None)
    return TrainResult(params=params, loss_history=history)


def evaluate_loss(dataset: Sequence[LabeledSequence], params: ParameterStore, config: TrainConfig) -> float:
    """Mean loss over every consecutive frame pair (delta 1), no parameter update."""
    losses = []
    with torch.no_grad():
        for sequence in dataset:
            for position in range(1, len(sequence)):
                sample = make_sample(sequence, position, 1, config.gate_px)
                if sample is not None:
                    losses.append(float(sample_loss(sample, params, config)))
    if not losses:
        raise DataError("validation set has no frame pair with objects on both sides")
    return float(np.mean(losses))
