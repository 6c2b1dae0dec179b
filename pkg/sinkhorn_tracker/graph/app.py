"""
Graph step - bipartite candidate graph between tracklets (last instances) and
current-frame detections.

Node order is tracklets first (0..m-1) then detections (m..m+n-1). Edges are
(tracklet_index, detection_index) pairs in row-major order, kept only when the
box centers are within the gate.
"""
from dataclasses import dataclass, replace
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np
import torch

from sinkhorn_tracker.constants import DEFAULT_FRAME_HEIGHT, DEFAULT_FRAME_WIDTH, DEFAULT_GATE_PX
from sinkhorn_tracker.embeddings.app import AppearanceEmbedding
from sinkhorn_tracker.geom.app import BoundingBox, center_distance, geom_feature_matrix
from sinkhorn_tracker.params.app import DTYPE, ParameterStore
from sinkhorn_tracker.utils import helper
from sinkhorn_tracker.utils.error_handler import DimensionMismatchError, InputValidator


class Observation(Protocol):
    box: BoundingBox
    embedding: AppearanceEmbedding


@dataclass(frozen=True)
class CandidateGraph:
    m: int
    n: int
    node_features: torch.Tensor          # H0, (m+n) x D_app
    geom: torch.Tensor                   # (m+n) x 4
    boxes: Tuple[BoundingBox, ...]
    edges: Tuple[Tuple[int, int], ...]
    edge_weights: Optional[torch.Tensor] = None   # Z0, one scalar per edge

    @property
    def num_nodes(self) -> int:
        return self.m + self.n

    @property
    def tracklet_boxes(self) -> Tuple[BoundingBox, ...]:
        return self.boxes[:self.m]

    @property
    def detection_boxes(self) -> Tuple[BoundingBox, ...]:
        return self.boxes[self.m:]

    def edge_index(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """Node indices of each edge's endpoints (detections offset by m)."""
        if not self.edges:
            empty = torch.zeros(0, dtype=torch.long)
            return empty, empty
        pairs = torch.tensor(self.edges, dtype=torch.long)
        return pairs[:, 0], pairs[:, 1] + self.m

    def gated_mask(self) -> np.ndarray:
        """True for (tracklet, detection) cells with no edge."""
        mask = np.ones((self.m, self.n), dtype=bool)
        for t, d in self.edges:
            mask[t, d] = False
        return mask


def build_graph(tracklets: Sequence[Observation], detections: Sequence[Observation],
                gate_px: float = DEFAULT_GATE_PX,
                frame_size: Tuple[float, float] = (DEFAULT_FRAME_WIDTH, DEFAULT_FRAME_HEIGHT),
                d_app: Optional[int] = None) -> CandidateGraph:
    gate_px = InputValidator.validate_non_negative(gate_px, "gate_px")
    nodes = list(tracklets) + list(detections)
    dims = {node.embedding.dim for node in nodes}
    if d_app is not None:
        dims.add(d_app)
    if len(dims) > 1:
        raise DimensionMismatchError(f"embedding dimensions disagree: {sorted(dims)}",
                                     expected=d_app, actual=sorted(dims))
    dim = dims.pop() if dims else (d_app or 1)

    if nodes:
        features = torch.from_numpy(np.stack([node.embedding.values for node in nodes])).to(DTYPE)
    else:
        features = torch.zeros((0, dim), dtype=DTYPE)
    boxes = tuple(node.box for node in nodes)
    geom = torch.from_numpy(geom_feature_matrix(list(boxes), *frame_size)).to(DTYPE)

    m = len(tracklets)
    edges: List[Tuple[int, int]] = []
    for t, tracklet in enumerate(tracklets):
        for d, detection in enumerate(detections):
            if center_distance(tracklet.box, detection.box) <= gate_px:
                edges.append((t, d))

    helper.log_json("DEBUG", "GRAPH_BUILT", tracklets=m, detections=len(detections), edges=len(edges))
    return CandidateGraph(m=m, n=len(detections), node_features=features, geom=geom,
                          boxes=boxes, edges=tuple(edges))


def edge_inputs(graph: CandidateGraph) -> torch.Tensor:
    """Per-edge concat(tracklet h_app, tracklet h_geom, detection h_app, detection h_geom)."""
    src, dst = graph.edge_index()
    return torch.cat([graph.node_features[src], graph.geom[src],
                      graph.node_features[dst], graph.geom[dst]], dim=1)


def compute_edge_weights(graph: CandidateGraph, params: ParameterStore) -> CandidateGraph:
    """Z0 = relu(f_edge(...)) per edge; returns a new graph."""
    d_app = params.config.d_app
    if graph.node_features.shape[1] != d_app:
        raise DimensionMismatchError(
            f"node features have dimension {graph.node_features.shape[1]}, parameters expect {d_app}",
            expected=d_app, actual=graph.node_features.shape[1])
    if not graph.edges:
        return replace(graph, edge_weights=torch.zeros(0, dtype=DTYPE))
    weights = params.f_edge.forward(edge_inputs(graph)).reshape(-1)
    return replace(graph, edge_weights=weights)
