"""Initial node/edge features, diffusion-time and temporal position encodings.

The sequence embedder is trainable by default.  Precomputed per-residue
embeddings from an external sequence model can be imported from a file
(JSON or NPZ with ``node``/``edge`` arrays); imported embeddings are stored
as buffers and receive no gradient.
"""

from __future__ import annotations

import json
import math

import numpy as np
import torch
from torch import Tensor, nn


def embed_diffusion_time(t: float, dim: int) -> Tensor:
    """Sinusoidal features of the diffusion time over log-spaced frequencies."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"diffusion time must lie in [0, 1], got {t}")
    half = dim // 2
    freqs = torch.exp(torch.linspace(math.log(1.0), math.log(1000.0), half))
    phase = t * freqs
    feat = torch.stack([torch.sin(phase), torch.cos(phase)], dim=-1).reshape(-1)
    if feat.shape[0] < dim:  # odd dim: pad with a constant channel
        feat = torch.cat([feat, torch.ones(dim - feat.shape[0])])
    return feat


def embed_temporal_positions(step_indices, dim: int) -> Tensor:
    """Standard interleaved sin/cos position encoding, one row per step index."""
    pos = torch.as_tensor(step_indices, dtype=torch.get_default_dtype())[:, None]
    half = dim // 2
    div = torch.exp(torch.arange(half, dtype=pos.dtype) * (-math.log(10000.0) / half))
    phase = pos * div
    feat = torch.stack([torch.sin(phase), torch.cos(phase)], dim=-1).reshape(pos.shape[0], -1)
    if feat.shape[1] < dim:
        feat = torch.cat([feat, torch.ones(pos.shape[0], dim - feat.shape[1], dtype=pos.dtype)], dim=1)
    return feat


def load_precomputed_embeddings(path, d_v: int, d_z: int) -> tuple:
    """Read a precomputed-embedding file: {node: N x D_V, edge: N x N x D_Z}."""
    text = str(path)
    if text.endswith(".npz"):
        arrays = np.load(path)
        node, edge = arrays["node"], arrays["edge"]
    else:
        with open(path) as fh:
            doc = json.load(fh)
        if int(doc["d_v"]) != d_v or int(doc["d_z"]) != d_z:
            raise ValueError(
                f"embedding dims {doc['d_v']}x{doc['d_z']} do not match model {d_v}x{d_z}"
            )
        node, edge = np.asarray(doc["node"]), np.asarray(doc["edge"])
    node_t = torch.as_tensor(node, dtype=torch.get_default_dtype())
    edge_t = torch.as_tensor(edge, dtype=torch.get_default_dtype())
    if node_t.shape[-1] != d_v or edge_t.shape[-1] != d_z or node_t.ndim != 2 or edge_t.ndim != 3:
        raise ValueError("embedding arrays have wrong shapes")
    return node_t, edge_t


class SequenceEmbedder(nn.Module):
    """Residue-type and relative-position embeddings plus time projections."""

    def __init__(self, d_v: int, d_z: int, r_max: int = 32, time_dim: int = 64):
        super().__init__()
        self.d_v = d_v
        self.d_z = d_z
        self.r_max = r_max
        self.time_dim = time_dim
        self.residue_table = nn.Embedding(20, d_v)
        self.relpos_table = nn.Embedding(2 * r_max + 2, d_z)
        self.pair_proj = nn.Linear(2 * d_v, d_z, bias=False)
        self.time_proj_v = nn.Linear(time_dim, d_v)
        self.time_proj_z = nn.Linear(time_dim, d_z)
        self.register_buffer("frozen_node", None)
        self.register_buffer("frozen_edge", None)

    def import_frozen(self, node: Tensor, edge: Tensor) -> None:
        """Install precomputed embeddings; they replace the trainable tables."""
        self.frozen_node = node.detach().clone()
        self.frozen_edge = edge.detach().clone()

    @property
    def uses_frozen(self) -> bool:
        return self.frozen_node is not None

    def forward(self, aatype: Tensor) -> tuple:
        """Initial (v0: N x d_v, z0: N x N x d_z) for one sequence."""
        n = aatype.shape[-1]
        if self.uses_frozen:
            if self.frozen_node.shape[0] != n:
                raise ValueError("frozen embeddings were computed for a different length")
            return self.frozen_node, self.frozen_edge
        v0 = self.residue_table(aatype)
        rel = torch.arange(n)[None, :] - torch.arange(n)[:, None]
        rel = rel.clamp(-self.r_max, self.r_max) + self.r_max
        pair = torch.cat(
            [v0[:, None, :].expand(n, n, self.d_v), v0[None, :, :].expand(n, n, self.d_v)], dim=-1
        )
        z0 = self.relpos_table(rel) + self.pair_proj(pair)
        return v0, z0

    def time_features(self, t: float) -> Tensor:
        return embed_diffusion_time(t, self.time_dim).to(self.time_proj_v.weight.dtype)

    def time_shift_v(self, t: float) -> Tensor:
        return self.time_proj_v(self.time_features(t))

    def time_shift_z(self, t: float) -> Tensor:
        return self.time_proj_z(self.time_features(t))
