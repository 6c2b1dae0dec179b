"""
Finite-difference verification of the analytic gradients of the training loss
through the whole pipeline (f_edge, GCN layers, phi, f_affinity, Sinkhorn).
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from sinkhorn_tracker.constants import GRADCHECK_DENOM_FLOOR, GRADCHECK_STEP, GRADCHECK_TOLERANCE
from sinkhorn_tracker.embeddings.app import AppearanceEmbedding
from sinkhorn_tracker.geom.app import BoundingBox
from sinkhorn_tracker.params.app import ModelConfig, ParameterStore, init_params
from sinkhorn_tracker.train.app import TrainConfig, backward, batch_loss
from sinkhorn_tracker.train.dataset import LabeledObject, LabeledSequence, TrainingSample, make_sample
from sinkhorn_tracker.utils import helper
from sinkhorn_tracker.utils.error_handler import InputValidator


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst_parameter: str
    per_parameter: Dict[str, float] = field(default_factory=dict)
    checked: int = 0
    tolerance: float = GRADCHECK_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), GRADCHECK_DENOM_FLOOR)


def check_gradients(batch: Sequence[TrainingSample], params: ParameterStore, config: TrainConfig,
                    step: float = GRADCHECK_STEP, corrupt_scale: Optional[float] = None) -> GradcheckReport:
    """
    Compare every analytic partial derivative with the central difference
    (L(theta + h) - L(theta - h)) / 2h. corrupt_scale multiplies the analytic
    gradients by (1 + corrupt_scale) so a broken gradient can be simulated.
    """
    params.zero_grads()
    _, grads = backward(batch, params, config)
    if corrupt_scale:
        grads = {name: g * (1.0 + corrupt_scale) for name, g in grads.items()}

    per_parameter: Dict[str, float] = {}
    worst, worst_name, checked = 0.0, "", 0
    with torch.no_grad():
        for name, tensor in params.named_tensors():
            flat = tensor.view(-1)
            analytic = grads[name].reshape(-1)
            tensor_worst = 0.0
            for idx in range(flat.numel()):
                original = float(flat[idx])
                flat[idx] = original + step
                plus = float(batch_loss(batch, params, config))
                flat[idx] = original - step
                minus = float(batch_loss(batch, params, config))
                flat[idx] = original
                numeric = (plus - minus) / (2.0 * step)
                err = relative_error(float(analytic[idx]), numeric)
                tensor_worst = max(tensor_worst, err)
                checked += 1
            per_parameter[name] = tensor_worst
            if tensor_worst > worst or not worst_name:
                worst, worst_name = tensor_worst, name
    report = GradcheckReport(max_rel_error=worst, worst_parameter=worst_name,
                             per_parameter=per_parameter, checked=checked)
    helper.log_json("INFO", "GRADCHECK_DONE", max_rel_error=worst, worst_parameter=worst_name,
                    checked=checked, passed=report.passed)
    return report


def random_instance(seed: int, m: int = 2, n: int = 2, d_app: int = 8, d_inter: int = 4,
                    layers: int = 2, model_overrides: Optional[dict] = None
                    ) -> Tuple[List[TrainingSample], ParameterStore, TrainConfig]:
    """
    One frame pair with m tracklets and n detections, all inside the gate and
    partly overlapping, plus random parameters with non-zero biases.
    """
    InputValidator.validate_positive_int(m, "m")
    InputValidator.validate_positive_int(n, "n")
    rng = np.random.default_rng(seed)
    frame_size = (640.0, 480.0)

    def objects(count: int, identities: Sequence[int]) -> List[LabeledObject]:
        out = []
        for k in range(count):
            box = BoundingBox(200.0 + rng.uniform(-20, 20), 200.0 + rng.uniform(-20, 20),
                              rng.uniform(30, 60), rng.uniform(60, 120))
            out.append(LabeledObject(identity=int(identities[k]), box=box,
                                     embedding=AppearanceEmbedding(rng.standard_normal(d_app))))
        return out

    # identities overlap so matches, births and deaths all occur
    prev_ids = list(range(1, m + 1))
    curr_ids = list(range(2, n + 2))
    sequence = LabeledSequence(name=f"gradcheck-{seed}",
                               frames=[objects(m, prev_ids), objects(n, curr_ids)],
                               frame_size=frame_size)
    model_config = ModelConfig(d_app=d_app, d_inter=d_inter, layers=layers, **(model_overrides or {}))
    params = init_params(model_config, seed)
    with torch.no_grad():
        for name, tensor in params.named_tensors():
            if name.endswith(".bias"):
                tensor.copy_(torch.from_numpy(rng.normal(0.0, 0.1, size=tuple(tensor.shape))))
    sample = make_sample(sequence, 1, 1, gate_px=1000.0)
    return [sample], params, TrainConfig(gate_px=1000.0)


def run_gradcheck(seed: int = 0, m: int = 2, n: int = 2, d_app: int = 8,
                  corrupt_scale: Optional[float] = None) -> GradcheckReport:
    batch, params, config = random_instance(seed, m, n, d_app)
    return check_gradients(batch, params, config, corrupt_scale=corrupt_scale)
