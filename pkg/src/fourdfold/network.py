"""The denoising trunk.

Per layer: point attention on every time step's (nodes, edges, frames), a
spatial module coupling the reference step to each noisy step, temporal
self-attention across all steps per residue, an edge update, and a frame
update applied to the noisy steps only.  Clean (motion/reference) frames are
never modified; they carry the conditioning signal.

The point attention deliberately breaks full invariance: alongside the usual
invariant outputs it emits the attended value points *without* mapping them
back into the local frame, so global reference coordinates stay visible to
the features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import Tensor, nn

from . import protein
from .features import SequenceEmbedder, embed_temporal_positions
from .geom import Rigid, quat_to_rot
from .protein import TorsionAngles


class TrunkNumericsError(RuntimeError):
    """Non-finite activations encountered; message names the layer."""


@dataclass
class ModelConfig:
    """Architecture hyperparameters (desk-scale defaults)."""

    layers: int = 4
    d_v: int = 128
    d_z: int = 64
    n_head: int = 8
    c: int = 64              # total attention channels, split across heads
    n_query_points: int = 8
    n_point_values: int = 12
    temporal_heads: int = 4
    spatial_heads: int = 4
    s_mot: int = 2
    s_ref: int = 1
    r_max: int = 32
    time_dim: int = 64
    torsion_hidden: int = 128

    def __post_init__(self):
        for name in ("layers", "d_v", "d_z", "n_head", "c", "n_query_points",
                     "n_point_values", "temporal_heads", "spatial_heads", "time_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.c % self.n_head:
            raise ValueError("c must be divisible by n_head")
        if self.d_v % self.temporal_heads or self.d_v % self.spatial_heads:
            raise ValueError("d_v must be divisible by the attention head counts")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class InvariantPointAttention(nn.Module):
    """Point attention over one time step; returns the residual update.

    Output concatenation order per head: edge-attended features, scalar
    values, mapped-back points, their norms, un-mapped global points, their
    norms.  Only the last two blocks change under a global rigid motion of
    all frames.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.h = cfg.n_head
        self.c_h = cfg.c // cfg.n_head
        self.n_qp = cfg.n_query_points
        self.n_pv = cfg.n_point_values
        d_v, d_z = cfg.d_v, cfg.d_z
        self.w_c = math.sqrt(2.0 / (9.0 * self.n_qp))
        self.w_l = math.sqrt(1.0 / 3.0)

        self.to_q = nn.Linear(d_v, self.h * self.c_h, bias=False)
        self.to_k = nn.Linear(d_v, self.h * self.c_h, bias=False)
        self.to_v = nn.Linear(d_v, self.h * self.c_h, bias=False)
        self.to_q_pts = nn.Linear(d_v, self.h * self.n_qp * 3, bias=False)
        self.to_k_pts = nn.Linear(d_v, self.h * self.n_qp * 3, bias=False)
        self.to_v_pts = nn.Linear(d_v, self.h * self.n_pv * 3, bias=False)
        self.to_bias = nn.Linear(d_z, self.h, bias=False)
        # gamma^h > 0 via softplus; initialized so softplus(raw) = 1
        self.gamma_raw = nn.Parameter(torch.full((self.h,), math.log(math.e - 1.0)))
        concat_dim = self.h * (d_z + self.c_h + self.n_pv * 3 + self.n_pv + self.n_pv * 3 + self.n_pv)
        self.out = nn.Linear(concat_dim, d_v)
        # offset of the o' block inside the per-head concat (used by tests)
        self.oprime_offset = self.h * (d_z + self.c_h + self.n_pv * 3 + self.n_pv)

    def forward(self, v: Tensor, z: Tensor, frames: Rigid, return_internals: bool = False):
        n = v.shape[-2]
        lead = v.shape[:-2]
        h, c_h, n_qp, n_pv = self.h, self.c_h, self.n_qp, self.n_pv

        q = self.to_q(v).reshape(*lead, n, h, c_h)
        k = self.to_k(v).reshape(*lead, n, h, c_h)
        val = self.to_v(v).reshape(*lead, n, h, c_h)
        q_pts = self.to_q_pts(v).reshape(*lead, n, h, n_qp, 3)
        k_pts = self.to_k_pts(v).reshape(*lead, n, h, n_qp, 3)
        v_pts = self.to_v_pts(v).reshape(*lead, n, h, n_pv, 3)

        rot = frames.rot[..., None, None, :, :]
        trans = frames.trans[..., None, None, :]
        q_glob = torch.einsum("...ij,...j->...i", rot, q_pts) + trans
        k_glob = torch.einsum("...ij,...j->...i", rot, k_pts) + trans
        v_glob = torch.einsum("...ij,...j->...i", rot, v_pts) + trans

        scalar = torch.einsum("...ihc,...jhc->...ijh", q, k) / math.sqrt(c_h)
        bias = self.to_bias(z)
        diff = q_glob[..., :, None, :, :, :] - k_glob[..., None, :, :, :, :]
        dist2 = diff.pow(2).sum(dim=(-1, -2))  # (..., i, j, h)
        gamma = nn.functional.softplus(self.gamma_raw)
        logits = self.w_l * (scalar + bias - 0.5 * gamma * self.w_c * dist2)
        attn = torch.softmax(logits, dim=-2)  # over j

        o_edge = torch.einsum("...ijh,...ijd->...ihd", attn, z)
        o_scalar = torch.einsum("...ijh,...jhc->...ihc", attn, val)
        o_glob = torch.einsum("...ijh,...jhpx->...ihpx", attn, v_glob)
        inv = frames.invert()
        o_local = (
            torch.einsum("...ij,...j->...i", inv.rot[..., None, None, :, :], o_glob)
            + inv.trans[..., None, None, :]
        )
        local_norm = o_local.pow(2).sum(-1).clamp(min=1e-16).sqrt()
        glob_norm = o_glob.pow(2).sum(-1).clamp(min=1e-16).sqrt()

        flat = torch.cat(
            [
                o_edge.reshape(*lead, n, -1),
                o_scalar.reshape(*lead, n, -1),
                o_local.reshape(*lead, n, -1),
                local_norm.reshape(*lead, n, -1),
                o_glob.reshape(*lead, n, -1),
                glob_norm.reshape(*lead, n, -1),
            ],
            dim=-1,
        )
        update = self.out(flat)
        if return_internals:
            internals = {
                "attn": attn,
                "o_edge": o_edge,
                "o_scalar": o_scalar,
                "o_local": o_local,
                "local_norm": local_norm,
                "o_glob": o_glob,
                "glob_norm": glob_norm,
            }
            return update, internals
        return update


class _MultiheadSelfAttention(nn.Module):
    """Plain self-attention over the second-to-last axis, no output projection."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.d_h = dim // heads
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        lead = x.shape[:-2]
        tokens = x.shape[-2]
        q = self.to_q(x).reshape(*lead, tokens, self.heads, self.d_h)
        k = self.to_k(x).reshape(*lead, tokens, self.heads, self.d_h)
        v = self.to_v(x).reshape(*lead, tokens, self.heads, self.d_h)
        logits = torch.einsum("...ihc,...jhc->...ijh", q, k) / math.sqrt(self.d_h)
        attn = torch.softmax(logits, dim=-2)
        out = torch.einsum("...ijh,...jhc->...ihc", attn, v)
        return out.reshape(*lead, tokens, -1)


class SpatialModule(nn.Module):
    """Reference-to-noisy coupling: attention over the (ref, noisy) feature pair."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = _MultiheadSelfAttention(cfg.d_v, cfg.spatial_heads)
        self.w_r = nn.Linear(cfg.d_v, cfg.d_v, bias=False)
        nn.init.zeros_(self.w_r.weight)

    def forward(self, v_ref: Tensor, v_s: Tensor) -> Tensor:
        """v_ref: (N, d); v_s: (S, N, d).  Returns updated noisy features."""
        pair = torch.stack([v_ref.expand_as(v_s), v_s], dim=-2)  # (S, N, 2, d)
        a = self.attn(pair)
        return v_s + self.w_r(a[..., 1, :])  # the reference half is discarded


class MotionAlignment(nn.Module):
    """Per-residue self-attention across all time steps; returns noisy steps."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = _MultiheadSelfAttention(cfg.d_v, cfg.temporal_heads)
        self.w_e = nn.Linear(cfg.d_v, cfg.d_v, bias=False)
        nn.init.zeros_(self.w_e.weight)

    def forward(self, v_seq: Tensor, s_noisy: int) -> Tensor:
        """v_seq: (S_hat, N, d) with temporal position encodings already added."""
        per_residue = v_seq.movedim(0, -2)  # (N, S_hat, d): no cross-residue mixing
        a = self.attn(per_residue)
        out = per_residue + self.w_e(a)
        return out.movedim(-2, 0)[-s_noisy:]


class EdgeUpdate(nn.Module):
    """Non-residual edge refresh from down-projected node features."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d_half = cfg.d_v // 2
        self.down = nn.Linear(cfg.d_v, d_half, bias=False)
        self.mlp = nn.Sequential(
            nn.Linear(2 * d_half + cfg.d_z, 2 * cfg.d_z),
            nn.ReLU(),
            nn.Linear(2 * cfg.d_z, cfg.d_z),
        )
        self.norm = nn.LayerNorm(cfg.d_z)

    def forward(self, v: Tensor, z: Tensor) -> Tensor:
        n = v.shape[-2]
        down = self.down(v)
        lead = down.shape[:-2]
        z_in = torch.cat(
            [
                down[..., :, None, :].expand(*lead, n, n, down.shape[-1]),
                down[..., None, :, :].expand(*lead, n, n, down.shape[-1]),
                z,
            ],
            dim=-1,
        )
        return self.norm(self.mlp(z_in))


class BackboneUpdate(nn.Module):
    """Frame update from node features via a pinned-real-part quaternion."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.linear = nn.Linear(cfg.d_v, 6)
        nn.init.zeros_(self.linear.weight)
        nn.init.zeros_(self.linear.bias)

    def forward(self, v: Tensor, frames: Rigid) -> Rigid:
        bcd = self.linear(v)
        quat = torch.cat([torch.ones_like(bcd[..., :1]), bcd[..., :3]], dim=-1)
        rot_update = quat_to_rot(quat)  # quat_to_rot normalizes
        return frames.compose(Rigid(rot_update, bcd[..., 3:]))


class TorsionHead(nn.Module):
    """MLP emitting (sin, cos) pairs per torsion, normalized onto the circle."""

    EPS = 1e-8

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(cfg.d_v, cfg.torsion_hidden),
            nn.ReLU(),
            nn.Linear(cfg.torsion_hidden, cfg.torsion_hidden),
            nn.ReLU(),
            nn.Linear(cfg.torsion_hidden, 14),
        )

    def forward(self, v: Tensor, aatype: Tensor, templates=None) -> TorsionAngles:
        raw = self.mlp(v).reshape(*v.shape[:-1], 7, 2)
        norm = torch.linalg.norm(raw, dim=-1, keepdim=True)
        sincos = raw / norm.clamp(min=self.EPS)
        templates = templates or protein.load_templates()
        mask = protein.default_torsion_mask(aatype, templates)
        mask = mask.expand(*sincos.shape[:-1])
        return TorsionAngles(sincos, mask)


class DenoisingTrunk(nn.Module):
    """Full denoiser: predicts clean frames and torsions for the noisy steps."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embedder = SequenceEmbedder(cfg.d_v, cfg.d_z, cfg.r_max, cfg.time_dim)
        self.ipa = nn.ModuleList(InvariantPointAttention(cfg) for _ in range(cfg.layers))
        self.spatial = nn.ModuleList(SpatialModule(cfg) for _ in range(cfg.layers))
        self.temporal = nn.ModuleList(MotionAlignment(cfg) for _ in range(cfg.layers))
        self.edge = nn.ModuleList(EdgeUpdate(cfg) for _ in range(cfg.layers))
        self.backbone = nn.ModuleList(BackboneUpdate(cfg) for _ in range(cfg.layers))
        self.torsion_head = TorsionHead(cfg)

    def temporal_parameters(self):
        return self.temporal.parameters()

    def non_temporal_parameters(self):
        temporal_ids = {id(p) for p in self.temporal.parameters()}
        return (p for p in self.parameters() if id(p) not in temporal_ids)

    def forward(
        self,
        aatype: Tensor,
        t: float,
        noisy: Rigid,
        ref_frames: Rigid,
        motion_frames: Rigid,
        temporal_bypass: bool = False,
        templates=None,
    ):
        """One denoising pass.

        noisy: frames (S, N); ref_frames: (N,); motion_frames: (M, N).
        Returns (pred_frames: Rigid (S, N), pred_torsions: TorsionAngles).
        """
        n = aatype.shape[-1]
        s = noisy.shape[0]
        m = motion_frames.shape[0] if motion_frames.shape else 0
        if noisy.shape[1] != n or ref_frames.shape != (n,) or (m and motion_frames.shape[1] != n):
            raise ValueError(
                f"shape mismatch: N={n}, noisy {tuple(noisy.shape)}, "
                f"ref {tuple(ref_frames.shape)}, motion {tuple(motion_frames.shape)}"
            )
        s_hat = m + 1 + s
        dtype = self.embedder.residue_table.weight.dtype

        v0, z0 = self.embedder(aatype)
        shift_clean_v = self.embedder.time_shift_v(0.0)
        shift_noisy_v = self.embedder.time_shift_v(t)
        shift_clean_z = self.embedder.time_shift_z(0.0)
        shift_noisy_z = self.embedder.time_shift_z(t)
        shifts_v = torch.stack([shift_clean_v] * (m + 1) + [shift_noisy_v] * s)
        shifts_z = torch.stack([shift_clean_z] * (m + 1) + [shift_noisy_z] * s)
        v = v0[None].expand(s_hat, n, -1) + shifts_v[:, None, :]
        z = z0[None].expand(s_hat, n, n, -1) + shifts_z[:, None, None, :]

        clean_frames = Rigid(
            torch.cat([motion_frames.rot, ref_frames.rot[None]]).to(dtype),
            torch.cat([motion_frames.trans, ref_frames.trans[None]]).to(dtype),
        )
        noisy_frames = noisy.to(dtype)
        pos = embed_temporal_positions(range(s_hat), self.cfg.d_v).to(dtype)

        for layer in range(self.cfg.layers):
            frames_all = Rigid(
                torch.cat([clean_frames.rot, noisy_frames.rot]),
                torch.cat([clean_frames.trans, noisy_frames.trans]),
            )
            v = v + self.ipa[layer](v, z, frames_all)
            v_ref = v[m]
            v_noisy = self.spatial[layer](v_ref, v[m + 1 :])
            v = torch.cat([v[: m + 1], v_noisy])
            if not temporal_bypass:
                v_noisy = self.temporal[layer](v + pos[:, None, :], s)
                v = torch.cat([v[: m + 1], v_noisy])
            z = self.edge[layer](v, z)
            noisy_frames = self.backbone[layer](v[m + 1 :], noisy_frames)
            if not bool(torch.isfinite(v).all()) or not bool(torch.isfinite(noisy_frames.trans).all()):
                raise TrunkNumericsError(f"non-finite activations after layer {layer}")

        torsions = self.torsion_head(v[m + 1 :], aatype, templates)
        return noisy_frames, torsions
