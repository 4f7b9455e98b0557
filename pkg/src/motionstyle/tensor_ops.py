"""Torch counterparts of the skeleton-space operations.

The NumPy versions in skeleton.py are the reference contract (and validate
their inputs); these mirror them on torch tensors so losses stay
differentiable. Tests pin both paths against each other.
"""

import math

import torch
import torch.nn.functional as F


def rot6d_to_matrix(r):
    """(*, 6) -> (*, 3, 3) via Gram-Schmidt. eps-guarded, no validation."""
    a1, a2 = r[..., :3], r[..., 3:]
    b1 = F.normalize(a1, dim=-1)
    b2 = F.normalize(a2 - (b1 * a2).sum(-1, keepdim=True) * b1, dim=-1)
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def matrix_to_rot6d(m):
    """(*, 3, 3) -> (*, 6), first two columns."""
    return torch.cat([m[..., :, 0], m[..., :, 1]], dim=-1)


def forward_kinematics(parents, offsets, rotations, translation):
    """FK over 6D rotations.

    parents: per-joint parent index list; offsets: (N, 3); rotations:
    (T, N, 6); translation: (T, 3). Returns positions (T, N, 3).
    """
    local = rot6d_to_matrix(rotations)  # T, N, 3, 3
    glob = [local[:, 0]]
    rel = [torch.zeros_like(translation)]
    for j in range(1, len(parents)):
        p = parents[j]
        rel.append(rel[p] + torch.einsum("tij,j->ti", glob[p], offsets[j]))
        glob.append(glob[p] @ local[:, j])
    return torch.stack(rel, dim=1) + translation[:, None, :]


def joint_velocities(positions, fps):
    """Forward differences scaled by fps; final frame repeats the previous."""
    if positions.shape[0] == 1:
        return torch.zeros_like(positions)
    v = (positions[1:] - positions[:-1]) * fps
    return torch.cat([v, v[-1:]], dim=0)


def group_by_parts(features, groups):
    """Mean-pool (T, N, C) joint features into (T, len(groups), C)."""
    return torch.stack([features[:, idx].mean(dim=1) for idx in groups], dim=1)


def resample_features(x, num_out):
    """Linear time resampling of (T, ...) features; endpoints exact."""
    t_in = x.shape[0]
    if num_out == t_in:
        return x
    coords = torch.linspace(0.0, t_in - 1, num_out, dtype=x.dtype, device=x.device)
    lo = coords.floor().long()
    hi = torch.clamp(lo + 1, max=t_in - 1)
    frac = (coords - lo).reshape((-1,) + (1,) * (x.dim() - 1))
    return (1.0 - frac) * x[lo] + frac * x[hi]


def sinusoidal_embedding(position, dim, dtype=torch.float32, device=None):
    """Standard sin/cos embedding of integer positions. (len(position), dim)."""
    position = torch.as_tensor(position, dtype=dtype, device=device).reshape(-1)
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0)
        * torch.arange(half, dtype=dtype, device=device)
        / max(half, 1)
    )
    args = position[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb
