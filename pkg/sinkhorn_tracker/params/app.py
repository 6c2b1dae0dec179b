"""
Parameter step - the learnable metric learners (f_edge, phi, f_affinity), the
GCN weight matrices, and the gradient slots that training fills.

Every tensor is float64 on CPU. Gradients live in ParameterStore.grads (one
zero-initialized slot per parameter); forward passes never write them.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from sinkhorn_tracker.constants import (
    DEFAULT_D_APP, DEFAULT_D_INTER, DEFAULT_ENTROPIC_L, DEFAULT_FRAME_HEIGHT,
    DEFAULT_FRAME_WIDTH, DEFAULT_GCN_LAYERS, DEFAULT_S_SLACK, DEFAULT_SINKHORN_ITERS,
)
from sinkhorn_tracker.utils.error_handler import DimensionMismatchError, ValidationError

DTYPE = torch.float64
GEOM_DIM = 4

Activation = Literal["relu", "none"]


class ModelConfig(BaseModel):
    """Network shape, association hyperparameters and ablation switches"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    d_app: int = Field(DEFAULT_D_APP, gt=0)
    d_inter: int = Field(DEFAULT_D_INTER, gt=0)
    layers: int = Field(DEFAULT_GCN_LAYERS, gt=0)
    s_slack: float = DEFAULT_S_SLACK
    l: float = Field(DEFAULT_ENTROPIC_L, gt=0)
    iters: int = Field(DEFAULT_SINKHORN_ITERS, gt=0)
    frame_width: float = Field(DEFAULT_FRAME_WIDTH, gt=0)
    frame_height: float = Field(DEFAULT_FRAME_HEIGHT, gt=0)
    propagation: Literal["gcnn", "fcnn"] = "gcnn"
    affinity_inputs: Literal["appearance_geometry", "appearance_only"] = "appearance_geometry"
    normalization: Literal["sinkhorn", "softmax", "none"] = "sinkhorn"

    @model_validator(mode="after")
    def _finite_slack(self):
        if not np.isfinite(self.s_slack):
            raise ValueError("s_slack must be finite")
        return self

    @property
    def frame_size(self) -> Tuple[float, float]:
        return self.frame_width, self.frame_height

    def gcn_shapes(self) -> List[Tuple[int, int]]:
        """W_1: d_app -> d_inter, then d_inter -> d_inter for the remaining layers."""
        shapes = [(self.d_app, self.d_inter)]
        shapes += [(self.d_inter, self.d_inter)] * (self.layers - 1)
        return shapes

    def f_edge_in(self) -> int:
        return 2 * self.d_app + 2 * GEOM_DIM

    def phi_in(self) -> int:
        return 1 + 2 * self.d_inter


@dataclass
class LinearLayer:
    weight: torch.Tensor  # (out_dim, in_dim)
    bias: torch.Tensor    # (out_dim,)
    activation: Activation = "none"

    def __post_init__(self):
        self.weight = torch.as_tensor(self.weight, dtype=DTYPE)
        self.bias = torch.as_tensor(self.bias, dtype=DTYPE)
        if self.weight.dim() != 2 or self.bias.dim() != 1 or self.bias.shape[0] != self.weight.shape[0]:
            raise DimensionMismatchError(
                f"inconsistent layer shapes: weight {tuple(self.weight.shape)}, bias {tuple(self.bias.shape)}",
                expected=(self.weight.shape[0],), actual=tuple(self.bias.shape))
        if self.activation not in ("relu", "none"):
            raise ValidationError(f"unknown activation {self.activation!r}", field="activation")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Rows of x are independent inputs; a 1-D x is a single input."""
        if x.shape[-1] != self.in_dim:
            raise DimensionMismatchError(
                f"layer expects input dimension {self.in_dim}, got {x.shape[-1]}",
                expected=self.in_dim, actual=x.shape[-1])
        out = x @ self.weight.T + self.bias
        if self.activation == "relu":
            out = torch.relu(out)
        return out


def linear_forward(layer: LinearLayer, x) -> torch.Tensor:
    return layer.forward(torch.as_tensor(x, dtype=DTYPE))


@dataclass
class ParameterStore:
    config: ModelConfig
    f_edge: LinearLayer
    gcn_weights: List[torch.Tensor]
    phi: LinearLayer
    f_affinity: LinearLayer
    grads: Dict[str, torch.Tensor] = field(default_factory=dict)

    def __post_init__(self):
        self.gcn_weights = [torch.as_tensor(w, dtype=DTYPE) for w in self.gcn_weights]
        self.check_shapes()
        for tensor in self.tensors():
            tensor.requires_grad_(True)
        if not self.grads:
            self.zero_grads()

    def named_tensors(self) -> List[Tuple[str, torch.Tensor]]:
        """Fixed order used by checkpoints, the optimizer and gradient checks."""
        named = [("f_edge.weight", self.f_edge.weight), ("f_edge.bias", self.f_edge.bias)]
        named += [(f"gcn.{k}.weight", w) for k, w in enumerate(self.gcn_weights)]
        named += [("phi.weight", self.phi.weight), ("phi.bias", self.phi.bias),
                  ("f_affinity.weight", self.f_affinity.weight), ("f_affinity.bias", self.f_affinity.bias)]
        return named

    def tensors(self) -> List[torch.Tensor]:
        return [t for _, t in self.named_tensors()]

    def expected_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return expected_shapes(self.config)

    def check_shapes(self) -> None:
        if len(self.gcn_weights) != self.config.layers:
            raise DimensionMismatchError(
                f"expected {self.config.layers} GCN weight matrices, got {len(self.gcn_weights)}",
                expected=self.config.layers, actual=len(self.gcn_weights))
        expected = self.expected_shapes()
        for name, tensor in self.named_tensors():
            if tuple(tensor.shape) != expected[name]:
                raise DimensionMismatchError(
                    f"{name} has shape {tuple(tensor.shape)}, config requires {expected[name]}",
                    expected=expected[name], actual=tuple(tensor.shape))

    def zero_grads(self) -> None:
        self.grads = {name: torch.zeros_like(t, requires_grad=False) for name, t in self.named_tensors()}

    def accumulate_grads(self, grads: Dict[str, torch.Tensor]) -> None:
        # fixed (named_tensors) order keeps the summation deterministic
        for name, _ in self.named_tensors():
            if name in grads and grads[name] is not None:
                self.grads[name] = self.grads[name] + grads[name].detach()

    def clone(self) -> "ParameterStore":
        def copy_layer(layer: LinearLayer) -> LinearLayer:
            return LinearLayer(layer.weight.detach().clone(), layer.bias.detach().clone(), layer.activation)

        twin = ParameterStore(
            config=self.config,
            f_edge=copy_layer(self.f_edge),
            gcn_weights=[w.detach().clone() for w in self.gcn_weights],
            phi=copy_layer(self.phi),
            f_affinity=copy_layer(self.f_affinity),
        )
        twin.grads = {name: g.clone() for name, g in self.grads.items()}
        return twin

    def equals(self, other: "ParameterStore") -> bool:
        """Bit-exact comparison of every parameter (grads ignored)."""
        mine, theirs = self.named_tensors(), other.named_tensors()
        if [n for n, _ in mine] != [n for n, _ in theirs]:
            return False
        return all(a.shape == b.shape and torch.equal(a.detach(), b.detach())
                   for (_, a), (_, b) in zip(mine, theirs))

    def num_parameters(self) -> int:
        return sum(t.numel() for t in self.tensors())


def expected_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    shapes = {
        "f_edge.weight": (1, config.f_edge_in()),
        "f_edge.bias": (1,),
    }
    for k, (d_in, d_out) in enumerate(config.gcn_shapes()):
        shapes[f"gcn.{k}.weight"] = (d_in, d_out)
    shapes.update({
        "phi.weight": (1, config.phi_in()),
        "phi.bias": (1,),
        "f_affinity.weight": (1, 2),
        "f_affinity.bias": (1,),
    })
    return shapes


def _glorot(rng: np.random.Generator, d_in: int, d_out: int, shape: Tuple[int, ...]) -> torch.Tensor:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return torch.from_numpy(rng.uniform(-limit, limit, size=shape))


def init_params(config: ModelConfig, rng_seed: int) -> ParameterStore:
    """
    Uniform Glorot initialization, zero biases. Deterministic for a fixed seed:
    tensors are drawn in named_tensors() order from one numpy Generator.
    """
    rng = np.random.default_rng(rng_seed)
    f_edge_in = config.f_edge_in()
    f_edge = LinearLayer(_glorot(rng, f_edge_in, 1, (1, f_edge_in)), torch.zeros(1, dtype=DTYPE), "relu")
    gcn_weights = [_glorot(rng, d_in, d_out, (d_in, d_out)) for d_in, d_out in config.gcn_shapes()]
    phi_in = config.phi_in()
    phi = LinearLayer(_glorot(rng, phi_in, 1, (1, phi_in)), torch.zeros(1, dtype=DTYPE), "relu")
    f_affinity = LinearLayer(_glorot(rng, 2, 1, (1, 2)), torch.zeros(1, dtype=DTYPE), "none")
    return ParameterStore(config=config, f_edge=f_edge, gcn_weights=gcn_weights, phi=phi, f_affinity=f_affinity)


def store_from_tensors(config: ModelConfig, tensors: Dict[str, torch.Tensor]) -> ParameterStore:
    """Rebuild a store from named tensors (checkpoint loading, hand-set parameters)."""
    return ParameterStore(
        config=config,
        f_edge=LinearLayer(tensors["f_edge.weight"], tensors["f_edge.bias"], "relu"),
        gcn_weights=[tensors[f"gcn.{k}.weight"] for k in range(config.layers)],
        phi=LinearLayer(tensors["phi.weight"], tensors["phi.bias"], "relu"),
        f_affinity=LinearLayer(tensors["f_affinity.weight"], tensors["f_affinity.bias"], "none"),
    )
