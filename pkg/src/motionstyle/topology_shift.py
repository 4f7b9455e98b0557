"""Learnable topology tokens and the cross-attention space shift.

A TopologyToken carries one skeleton's structure as an N x C learnable
matrix. A single graph convolution against the skeleton's normalized
adjacency refines it; the refined token then drives cross-attention as the
query set, re-expressing a motion feature under that skeleton's joints.
Attention is per frame: for each t the destination token attends over the
source joint tokens of frame t.
"""

import torch
import torch.nn as nn

from .errors import ShapeError
from .skeleton import Skeleton, build_normalized_adjacency


def refine_token(tau, adjacency_norm, weight):
    """One bare graph-convolution step: adjacency_norm @ tau @ weight."""
    return adjacency_norm @ tau @ weight


class TopologyToken(nn.Module):
    """Per-joint learnable token for one skeleton plus its refinement weights.

    tau: (N, C) parameter; weight: (C, C) parameter; adjacency_norm: fixed
    (N, N) buffer from the owning skeleton. Refinement has no bias and no
    nonlinearity by default; an optional post-activation sits behind a flag.
    """

    def __init__(self, skeleton: Skeleton, channels, init_std=0.02,
                 add_self_loops=True, activation=None):
        super().__init__()
        self.num_joints = skeleton.num_joints
        self.channels = channels
        self.tau = nn.Parameter(torch.randn(skeleton.num_joints, channels) * init_std)
        self.weight = nn.Parameter(torch.empty(channels, channels))
        nn.init.xavier_uniform_(self.weight)
        adj = build_normalized_adjacency(skeleton, add_self_loops=add_self_loops)
        self.register_buffer(
            "adjacency_norm", torch.as_tensor(adj, dtype=torch.float32)
        )
        self.activation = activation

    def refine(self):
        """Refined token (N, C)."""
        out = refine_token(self.tau, self.adjacency_norm.to(self.tau.dtype), self.weight)
        if self.activation is not None:
            out = self.activation(out)
        return out

    def forward(self):
        return self.refine()


class CrossAttentionShift(nn.Module):
    """Single cross-attention block moving a feature between joint spaces.

    Destination token rows are queries; source joint tokens of each frame
    are keys and values. Multi-head scaled dot-product, 4 heads by default.
    """

    def __init__(self, channels, heads=4):
        super().__init__()
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)

    def forward(self, f_src, token: TopologyToken):
        """f_src: (N_src, T, C) or (T, C) -> (N_dst, T, C)."""
        if f_src.dim() == 2:
            f_src = f_src.unsqueeze(0)
        if f_src.dim() != 3:
            raise ShapeError(f"source feature must be (N, T, C), got {tuple(f_src.shape)}")
        n_src, t, c = f_src.shape
        if c != token.channels:
            raise ShapeError(f"channel mismatch: feature {c}, token {token.channels}")
        queries = token.refine().unsqueeze(0).expand(t, -1, -1)  # T, N_dst, C
        memory = f_src.permute(1, 0, 2)  # T, N_src, C
        out, _ = self.attn(queries, memory, memory, need_weights=False)
        return out.permute(1, 0, 2)  # N_dst, T, C


def shift(f_src, token: TopologyToken, attn: CrossAttentionShift):
    """Functional form of the space shift (see CrossAttentionShift)."""
    return attn(f_src, token)


class TokenQueryDecoder(nn.Module):
    """Stack of transformer-decoder layers queried by a refined token.

    Shared by the canonical decoder (stage 1) and the diffusion decoder:
    per frame, the token rows self-attend, cross-attend over that frame's
    memory tokens, and pass through a feed-forward block. GELU activations
    keep the whole stack smooth for finite-difference checks.
    """

    def __init__(self, channels, layers=4, heads=4, ff_mult=4):
        super().__init__()
        layer = nn.TransformerDecoderLayer(
            d_model=channels,
            nhead=heads,
            dim_feedforward=ff_mult * channels,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
        )
        self.stack = nn.TransformerDecoder(layer, num_layers=layers)

    def forward(self, queries, memory):
        """queries: (B, N_q, C), memory: (B, N_kv, C) -> (B, N_q, C)."""
        return self.stack(queries, memory)
