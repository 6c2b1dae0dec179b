"""
GCN step - K layers of degree-normalized propagation over the candidate graph,
each followed by a per-edge update through phi.

    Z~ = A + I,  tau = diag(rowsum(Z~))
    H_k = act(tau^-1/2 Z~ tau^-1/2 H_{k-1} W_k)      act = relu for k < K, none at K
    Z_k(m, n) = relu(phi([Z_{k-1}(m, n), H_k(m), H_k(n)]))

The adjacency and degrees are rebuilt at the start of every layer from the
latest edge weights.
"""
from dataclasses import dataclass, field
from typing import List

import torch

from sinkhorn_tracker.graph.app import CandidateGraph
from sinkhorn_tracker.params.app import DTYPE, LinearLayer, ParameterStore
from sinkhorn_tracker.utils import helper
from sinkhorn_tracker.utils.error_handler import DimensionMismatchError, InvariantViolation


@dataclass
class GcnState:
    H: List[torch.Tensor] = field(default_factory=list)
    Z: List[torch.Tensor] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.H) - 1

    @property
    def h_inter(self) -> torch.Tensor:
        return self.H[-1]


def dense_adjacency(num_nodes: int, src: torch.Tensor, dst: torch.Tensor,
                    weights: torch.Tensor) -> torch.Tensor:
    """Symmetric (num_nodes x num_nodes) matrix with A[i, j] = A[j, i] = weight of edge (i, j)."""
    adjacency = torch.zeros((num_nodes, num_nodes), dtype=DTYPE)
    if src.numel():
        adjacency = adjacency.index_put((src, dst), weights.reshape(-1))
        adjacency = adjacency + adjacency.T
    return adjacency


def gcn_layer(H_prev: torch.Tensor, adjacency: torch.Tensor, W_k: torch.Tensor,
              final: bool) -> torch.Tensor:
    if H_prev.shape[1] != W_k.shape[0]:
        raise DimensionMismatchError(
            f"layer weight expects {W_k.shape[0]} input features, got {H_prev.shape[1]}",
            expected=W_k.shape[0], actual=H_prev.shape[1])
    z_tilde = adjacency + torch.eye(adjacency.shape[0], dtype=DTYPE)
    # degrees are >= 1 because of the self loop
    inv_sqrt_deg = z_tilde.sum(dim=1).rsqrt()
    normalized = inv_sqrt_deg[:, None] * z_tilde * inv_sqrt_deg[None, :]
    out = normalized @ H_prev @ W_k
    return out if final else torch.relu(out)


def edge_update(z_prev: torch.Tensor, h_m: torch.Tensor, h_n: torch.Tensor,
                phi: LinearLayer) -> torch.Tensor:
    """relu(phi([z, h_m, h_n])); batched when z_prev is a vector and h_* are row matrices."""
    z_prev = torch.as_tensor(z_prev, dtype=DTYPE)
    inputs = torch.cat([z_prev.reshape(-1, 1), h_m.reshape(z_prev.numel(), -1),
                        h_n.reshape(z_prev.numel(), -1)], dim=1)
    out = torch.relu(phi.forward(inputs)).reshape(-1)
    return out.reshape(z_prev.shape)


def gcn_propagate(graph: CandidateGraph, params: ParameterStore) -> GcnState:
    if graph.edge_weights is None:
        raise InvariantViolation("gcn propagation needs edge weights; call compute_edge_weights first")
    src, dst = graph.edge_index()
    fcnn = params.config.propagation == "fcnn"
    z = torch.zeros_like(graph.edge_weights) if fcnn else graph.edge_weights
    state = GcnState(H=[graph.node_features], Z=[z])
    layers = len(params.gcn_weights)
    for k, W_k in enumerate(params.gcn_weights):
        adjacency = dense_adjacency(graph.num_nodes, src, dst, z)
        H = gcn_layer(state.H[-1], adjacency, W_k, final=(k == layers - 1))
        if not fcnn and src.numel():
            z = edge_update(z, H[src], H[dst], params.phi)
        state.H.append(H)
        state.Z.append(z)
    if not torch.isfinite(state.h_inter).all():
        raise InvariantViolation("GCN produced non-finite interaction features")
    helper.log_json("DEBUG", "GCN_FORWARD_DONE", nodes=graph.num_nodes, edges=len(graph.edges),
                    layers=layers, propagation=params.config.propagation)
    return state


def gcn_forward(graph: CandidateGraph, params: ParameterStore) -> torch.Tensor:
    """Interaction features h_inter, one row per node (tracklets first)."""
    return gcn_propagate(graph, params).h_inter
